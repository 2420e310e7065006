//! The first-order Riesz potential `I₁g(x) = ∫_E g(y) / |x - y| dy` and the
//! two-weight Poincaré bound obtained by chaining
//! `|f - f_E| ≤ C I₁(|∇f|)` with the `L^p(w) → L^p(v)` norm of `I₁`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient, lp_norm, lp_norm_cells, project_mean_zero, weighted_mean, CellField, GridFunction};

/// Cells within this many cell widths of the node use the exact kernel.
const NEAR_CELLS: usize = 3;

/// `∫_0^X ∫_0^Y dy dx / √(x² + y²)`, extended oddly in each argument.
fn corner_integral(x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    let (ax, ay) = (x.abs(), y.abs());
    let f = ax * (ay / ax).asinh() + ay * (ax / ay).asinh();
    f * x.signum() * y.signum()
}

/// `∫_{[x1,x2]×[y1,y2]} dy / |y|` for the rectangle relative to the point.
fn rectangle_integral(x1: f64, x2: f64, y1: f64, y2: f64) -> f64 {
    corner_integral(x2, y2) - corner_integral(x1, y2) - corner_integral(x2, y1) + corner_integral(x1, y1)
}

/// `I₁ g` at every node for the cellwise constant density `g`.
///
/// On a uniform grid the weight of cell `(ci, cj)` seen from node `(i, j)`
/// only depends on the offset, so it is tabulated once: exactly for cells
/// near the node and by the midpoint rule `area / distance` further out.
pub fn riesz_potential(g: &CellField) -> GridFunction {
    let grid = g.grid;
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let area = grid.cell_area();
    // table[(dj + ny) * (2 nx) + di + nx] for the cell at offset (di, dj)
    let width = 2 * nx;
    let mut table = vec![0.0; width * 2 * ny];
    for dj in -(ny as isize)..ny as isize {
        for di in -(nx as isize)..nx as isize {
            let (x0, y0) = (di as f64 * hx, dj as f64 * hy);
            let near = di.abs() <= NEAR_CELLS as isize && dj.abs() <= NEAR_CELLS as isize;
            table[(dj + ny as isize) as usize * width + (di + nx as isize) as usize] = if near {
                rectangle_integral(x0, x0 + hx, y0, y0 + hy)
            } else {
                area / (x0 + 0.5 * hx).hypot(y0 + 0.5 * hy)
            };
        }
    }
    let values = (0..grid.node_count())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % (nx + 1), k / (nx + 1));
            let mut s = 0.0;
            for cj in 0..ny {
                let row = &table[(cj + ny - j) * width + nx - i..][..nx];
                let cells = &g.values[cj * nx..(cj + 1) * nx];
                s += cells.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
            s
        })
        .collect();
    GridFunction { grid, values }
}

/// Nodal `|∇f|` per cell.
fn gradient_magnitude(f: &GridFunction) -> CellField {
    let g = gradient(f);
    CellField { grid: f.grid, values: g.x.iter().zip(&g.y).map(|(a, b)| a.hypot(*b)).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszPointwise {
    /// `max_x |f(x) - f_E| / I₁(|∇f|)(x)` over nodes.
    pub constant: f64,
    pub witness: [f64; 2],
    /// `diam² / (2|E|)`, the constant for convex planar domains.
    pub convex_bound: f64,
}

/// Smallest `C` with `|f - f_E| ≤ C I₁(|∇f|)` at every node, `f_E` the
/// unweighted mean.
pub fn riesz_pointwise_check(f: &GridFunction) -> Result<RieszPointwise> {
    let grid = f.grid;
    let one = CellField::constant(grid, 1.0);
    let mean = weighted_mean(f, &one)?;
    let pot = riesz_potential(&gradient_magnitude(f));
    let scale = f.values.iter().fold(0.0f64, |m, x| m.max((x - mean).abs()));
    let mut best = (0.0, [grid.domain.origin[0], grid.domain.origin[1]]);
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            let k = grid.node_index(i, j);
            let dev = (f.values[k] - mean).abs();
            if dev <= 1e-13 * scale {
                continue;
            }
            let r = if pot.values[k] > 0.0 { dev / pot.values[k] } else { f64::INFINITY };
            if r > best.0 {
                best = (r, grid.node(i, j));
            }
        }
    }
    let d = &grid.domain;
    Ok(RieszPointwise { constant: best.0, witness: best.1, convex_bound: (d.a * d.a + d.b * d.b) / (2.0 * d.area()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWeightChainReport {
    pub p: f64,
    /// Largest pointwise Riesz constant over the corpus.
    pub pointwise: f64,
    /// Largest `‖I₁|∇f|‖_{L^p(v)} / ‖∇f‖_{L^p(w)}` over the corpus.
    pub operator_norm: f64,
    /// Cost of moving from the unweighted to the `v`-weighted mean:
    /// 1 at `p = 2`, 2 otherwise.
    pub mean_change: f64,
    pub bound: f64,
    /// `‖f - f_{E,v}‖_{L^p(v)} / ‖∇f‖_{L^p(w)}` per function.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub holds: bool,
}

/// Measured two-weight Poincaré ratios against the chained bound
/// `C · ‖I₁‖ · κ`.
pub fn two_weight_chain(corpus: &[GridFunction], w: &CellField, v: &CellField, p: f64) -> Result<TwoWeightChainReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 1 <= p < inf, got {p}")));
    }
    let grid = w.grid;
    grid.check_same(&v.grid)?;
    let area = grid.cell_area();
    let rows: Vec<Result<(f64, f64, f64)>> = corpus
        .par_iter()
        .map(|f| {
            f.grid.check_same(&grid)?;
            let c = riesz_pointwise_check(f)?.constant;
            let gm = gradient_magnitude(f);
            let grad = lp_norm_cells(&gm.values, &w.values, p, area);
            let pot = lp_norm(&riesz_potential(&gm), v, p)?;
            let dev = lp_norm(&project_mean_zero(f, v)?, v, p)?;
            let ratio = |a: f64| if grad > 0.0 { a / grad } else if a > 0.0 { f64::INFINITY } else { 0.0 };
            Ok((c, ratio(pot), ratio(dev)))
        })
        .collect();
    let mut pointwise = 0.0f64;
    let mut operator_norm = 0.0f64;
    let mut ratios = Vec::with_capacity(corpus.len());
    for r in rows {
        let (c, n, q) = r?;
        pointwise = pointwise.max(c);
        operator_norm = operator_norm.max(n);
        ratios.push(q);
    }
    let mean_change = if p == 2.0 { 1.0 } else { 2.0 };
    let bound = pointwise * operator_norm * mean_change;
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(TwoWeightChainReport {
        p,
        pointwise,
        operator_norm,
        mean_change,
        bound,
        ratios,
        max_ratio,
        holds: max_ratio <= bound * (1.0 + 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn exact_kernel_matches_the_square_closed_form() {
        // ∫ over [-1,1]² of 1/r = 8 asinh(1)
        let v = rectangle_integral(-1.0, 1.0, -1.0, 1.0);
        assert!((v - 8.0 * 1f64.asinh()).abs() < 1e-14);
        // far away it is area / distance
        let far = rectangle_integral(99.5, 100.5, -0.5, 0.5);
        assert!((far - 0.01).abs() < 1e-7);
    }

    #[test]
    fn far_field_of_a_single_cell() {
        let grid = Grid::unit_square(32).unwrap();
        let mut g = CellField::constant(grid, 0.0);
        g.values[grid.cell_index(16, 16)] = 1.0;
        let pot = riesz_potential(&g);
        let [cx, cy] = grid.centers()[grid.cell_index(16, 16)];
        for (i, j) in [(0, 0), (32, 0), (0, 32), (2, 30)] {
            let [x, y] = grid.node(i, j);
            let want = grid.cell_area() / (x - cx).hypot(y - cy);
            assert!((pot.values[grid.node_index(i, j)] / want - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn constants_have_zero_constant() {
        let grid = Grid::unit_square(8).unwrap();
        let rep = riesz_pointwise_check(&GridFunction::constant(grid, 3.0)).unwrap();
        assert_eq!(rep.constant, 0.0);
        assert!((rep.convex_bound - 1.0).abs() < 1e-15);
    }
}
