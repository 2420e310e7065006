//! Dense reference matrices assembled straight from the stencil
//! definitions, independent of the library's matrix-free operators.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pneumann::grid::{CellField, Grid};
use pneumann::matrix_weight::MatrixWeightField;

/// Corner nodes of cell `(i, j)` with their gradient coefficients for the
/// averaged forward difference.
fn corners(grid: &Grid, i: usize, j: usize) -> [(usize, [f64; 2]); 4] {
    let (sx, sy) = (0.5 / grid.hx(), 0.5 / grid.hy());
    [
        (grid.node_index(i, j), [-sx, -sy]),
        (grid.node_index(i + 1, j), [sx, -sy]),
        (grid.node_index(i, j + 1), [-sx, sy]),
        (grid.node_index(i + 1, j + 1), [sx, sy]),
    ]
}

/// `K_ab = Σ_c area ∇φ_a · Q_c ∇φ_b`.
pub fn stiffness(q: &MatrixWeightField) -> DMatrix<f64> {
    let grid = q.grid;
    let n = grid.node_count();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let m = q.cells[grid.cell_index(i, j)];
            let cs = corners(&grid, i, j);
            for (a, ga) in &cs {
                for (b, gb) in &cs {
                    let qg = m.apply(*gb);
                    k[(*a, *b)] += grid.cell_area() * (ga[0] * qg[0] + ga[1] * qg[1]);
                }
            }
        }
    }
    k
}

/// Cell-average map, cells × nodes.
pub fn averaging(grid: &Grid) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(grid.cell_count(), grid.node_count());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            for (node, _) in corners(grid, i, j) {
                a[(grid.cell_index(i, j), node)] = 0.25;
            }
        }
    }
    a
}

/// `‖f - f_E‖²_{L²(v)}` as the quadratic form `Aᵗ (D - d dᵗ / Σd) A`.
pub fn mean_free_mass(v: &CellField) -> DMatrix<f64> {
    let grid = v.grid;
    let a = averaging(&grid);
    let d = DVector::from_iterator(grid.cell_count(), v.values.iter().map(|w| w * grid.cell_area()));
    let total = d.sum();
    let inner = DMatrix::from_diagonal(&d) - &d * d.transpose() / total;
    a.transpose() * inner * a
}

/// `(-1)^{i+j}` at the nodes.
pub fn checkerboard(grid: &Grid) -> DVector<f64> {
    DVector::from_iterator(
        grid.node_count(),
        (0..grid.node_count()).map(|k| {
            let (i, j) = (k % (grid.nx + 1), k / (grid.nx + 1));
            if (i + j) % 2 == 0 { 1.0 } else { -1.0 }
        }),
    )
}
