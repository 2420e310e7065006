//! Structured rectangle grids with node-valued scalars and cell-valued
//! gradients.
//!
//! A function `u` lives on the `(nx+1)×(ny+1)` nodes. Its gradient lives on
//! cell centers and is the average of the forward differences along the two
//! cell edges in each direction. Integrals use the midpoint rule with nodal
//! values averaged to the cell, so `∫ f v` and `∫ |√Q ∇u|^p` share one set
//! of quadrature points.
//!
//! Both the gradient and the cell average annihilate the checkerboard
//! `(-1)^{i+j}`, so the discrete operators act on the quotient by
//! `span{1, checkerboard}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::{BoxDomain, ScalarWeightField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectDomain {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub origin: [f64; 2],
}

impl RectDomain {
    pub fn new(a: f64, b: f64, origin: [f64; 2]) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("rectangle sides must be positive, got {a} x {b}")));
        }
        if !origin.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("rectangle origin must be finite".into()));
        }
        Ok(RectDomain { a, b, origin })
    }

    pub fn unit_square() -> Self {
        RectDomain { a: 1.0, b: 1.0, origin: [0.0, 0.0] }
    }

    pub fn as_box(&self) -> BoxDomain {
        BoxDomain {
            lo: self.origin.to_vec(),
            hi: vec![self.origin[0] + self.a, self.origin[1] + self.b],
        }
    }

    pub fn area(&self) -> f64 {
        self.a * self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: RectDomain,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(domain: RectDomain, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidParameter(format!("grid needs at least 2x2 cells, got {nx}x{ny}")));
        }
        Ok(Grid { domain, nx, ny })
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Grid::new(RectDomain::unit_square(), n, n)
    }

    pub fn hx(&self) -> f64 {
        self.domain.a / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.domain.b / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.domain.origin[0] + i as f64 * self.hx(), self.domain.origin[1] + j as f64 * self.hy()]
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.domain.origin[0] + (i as f64 + 0.5) * self.hx(),
            self.domain.origin[1] + (j as f64 + 0.5) * self.hy(),
        ]
    }

    /// Cell centers in cell-index order.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.cell_count());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(self.center(i, j));
            }
        }
        out
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} on {:?} vs {}x{} on {:?}",
                self.nx, self.ny, self.domain, other.nx, other.ny, other.domain
            )))
        }
    }

    /// Cell-centered forward-difference gradient of nodal values.
    pub fn gradient_raw(&self, u: &[f64], gx: &mut [f64], gy: &mut [f64]) {
        let (sx, sy) = (0.5 / self.hx(), 0.5 / self.hy());
        let w = self.nx + 1;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = j * w + i;
                let (u00, u10, u01, u11) = (u[k], u[k + 1], u[k + w], u[k + w + 1]);
                let c = j * self.nx + i;
                gx[c] = sx * ((u10 - u00) + (u11 - u01));
                gy[c] = sy * ((u01 - u00) + (u11 - u10));
            }
        }
    }

    /// Adds the transpose of [`Grid::gradient_raw`] applied to `(fx, fy)` into `out`.
    pub fn gradient_adjoint_add(&self, fx: &[f64], fy: &[f64], out: &mut [f64]) {
        let (sx, sy) = (0.5 / self.hx(), 0.5 / self.hy());
        let w = self.nx + 1;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let c = j * self.nx + i;
                let (ax, ay) = (sx * fx[c], sy * fy[c]);
                let k = j * w + i;
                out[k] += -ax - ay;
                out[k + 1] += ax - ay;
                out[k + w] += -ax + ay;
                out[k + w + 1] += ax + ay;
            }
        }
    }

    /// Average of the four corner nodes of every cell.
    pub fn cell_average_raw(&self, u: &[f64], out: &mut [f64]) {
        let w = self.nx + 1;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = j * w + i;
                out[j * self.nx + i] = 0.25 * (u[k] + u[k + 1] + u[k + w] + u[k + w + 1]);
            }
        }
    }

    /// Adds the transpose of [`Grid::cell_average_raw`] applied to `c` into `out`.
    pub fn cell_average_adjoint_add(&self, c: &[f64], out: &mut [f64]) {
        let w = self.nx + 1;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let q = 0.25 * c[j * self.nx + i];
                let k = j * w + i;
                out[k] += q;
                out[k + 1] += q;
                out[k + w] += q;
                out[k + w + 1] += q;
            }
        }
    }

    /// The `(-1)^{i+j}` mode invisible to gradients and cell averages.
    pub fn checkerboard(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                out[self.node_index(i, j)] = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        out
    }

    pub fn sample_nodes(&self, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        let mut values = Vec::with_capacity(self.node_count());
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                let [x, y] = self.node(i, j);
                values.push(f(x, y));
            }
        }
        GridFunction { grid: *self, values }
    }

    pub fn sample_cells(&self, f: impl Fn(f64, f64) -> f64) -> CellField {
        let values = self.centers().into_iter().map(|[x, y]| f(x, y)).collect();
        CellField { grid: *self, values }
    }

    /// Samples a two-dimensional weight at cell centers.
    pub fn sample_weight(&self, w: &ScalarWeightField) -> Result<CellField> {
        if w.dim() != 2 {
            return Err(Error::InvalidParameter(format!("grid weights must be 2D, got {}D", w.dim())));
        }
        let values = self.centers().iter().map(|c| w.eval(c)).collect::<Result<Vec<_>>>()?;
        Ok(CellField { grid: *self, values })
    }
}

/// Node-valued scalar function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Cell-valued vector field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Cell-valued scalar, used for sampled weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "expected {} nodal values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("grid function has non-finite values".into()));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        GridFunction { grid, values: vec![0.0; grid.node_count()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        GridFunction { grid, values: vec![c; grid.node_count()] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.node_index(i, j)]
    }

    pub fn scaled(&self, t: f64) -> Self {
        GridFunction { grid: self.grid, values: self.values.iter().map(|v| t * v).collect() }
    }

    pub fn cell_average(&self) -> CellField {
        let mut values = vec![0.0; self.grid.cell_count()];
        self.grid.cell_average_raw(&self.values, &mut values);
        CellField { grid: self.grid, values }
    }
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.cell_count();
        VectorField { grid, x: vec![0.0; n], y: vec![0.0; n] }
    }

    pub fn constant(grid: Grid, v: [f64; 2]) -> Self {
        let n = grid.cell_count();
        VectorField { grid, x: vec![v[0]; n], y: vec![v[1]; n] }
    }

    pub fn scaled(&self, t: f64) -> Self {
        VectorField {
            grid: self.grid,
            x: self.x.iter().map(|v| t * v).collect(),
            y: self.y.iter().map(|v| t * v).collect(),
        }
    }

    pub fn add_scaled(&self, t: f64, other: &VectorField) -> Self {
        VectorField {
            grid: self.grid,
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + t * b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a + t * b).collect(),
        }
    }
}

impl CellField {
    pub fn constant(grid: Grid, c: f64) -> Self {
        CellField { grid, values: vec![c; grid.cell_count()] }
    }
}

pub fn gradient(u: &GridFunction) -> VectorField {
    let mut g = VectorField::zeros(u.grid);
    u.grid.gradient_raw(&u.values, &mut g.x, &mut g.y);
    g
}

/// `v(E)^{-1} ∫_E f v` by midpoint quadrature.
pub fn weighted_mean(f: &GridFunction, v: &CellField) -> Result<f64> {
    f.grid.check_same(&v.grid)?;
    let avg = f.cell_average();
    let total: f64 = v.values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeight);
    }
    let s: f64 = avg.values.iter().zip(&v.values).map(|(a, w)| a * w).sum();
    Ok(s / total)
}

pub fn project_mean_zero(f: &GridFunction, v: &CellField) -> Result<GridFunction> {
    let m = weighted_mean(f, v)?;
    Ok(GridFunction { grid: f.grid, values: f.values.iter().map(|x| x - m).collect() })
}

/// `‖f‖_{L^p(v)}` with nodal values averaged to cells.
pub fn lp_norm(f: &GridFunction, v: &CellField, p: f64) -> Result<f64> {
    f.grid.check_same(&v.grid)?;
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("L^p norm needs p >= 1, got {p}")));
    }
    let avg = f.cell_average();
    Ok(lp_norm_cells(&avg.values, &v.values, p, f.grid.cell_area()))
}

/// `(Σ |a_c|^p v_c area)^{1/p}` with a max-rescaling against overflow.
pub(crate) fn lp_norm_cells(a: &[f64], v: &[f64], p: f64, area: f64) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = a.iter().zip(v).map(|(x, w)| (x.abs() / scale).powf(p) * w).sum();
    scale * (s * area).powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Grid {
        Grid::unit_square(n).unwrap()
    }

    #[test]
    fn affine_gradient_is_exact() {
        let g = unit(7);
        let u = g.sample_nodes(|x, y| 2.0 * x + 3.0 * y - 1.0);
        let d = gradient(&u);
        for c in 0..g.cell_count() {
            assert!((d.x[c] - 2.0).abs() < 1e-12 && (d.y[c] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_gradient_at_centers() {
        let g = unit(10);
        let d = gradient(&g.sample_nodes(|x, _| x * x));
        for j in 0..10 {
            for i in 0..10 {
                let xc = g.center(i, j)[0];
                assert!((d.x[g.cell_index(i, j)] - 2.0 * xc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constants_and_checkerboard_have_zero_gradient() {
        let g = unit(6);
        let d = gradient(&GridFunction::constant(g, 5.0));
        assert!(d.x.iter().chain(&d.y).all(|v| *v == 0.0));
        let cb = GridFunction::new(g, g.checkerboard()).unwrap();
        let d = gradient(&cb);
        assert!(d.x.iter().chain(&d.y).all(|v| *v == 0.0));
        assert!(cb.cell_average().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adjoints_match_inner_products() {
        let g = Grid::new(RectDomain::new(2.0, 1.5, [0.3, -1.0]).unwrap(), 5, 4).unwrap();
        let u: Vec<f64> = (0..g.node_count()).map(|k| ((k * 37 % 11) as f64).sin()).collect();
        let fx: Vec<f64> = (0..g.cell_count()).map(|k| (k as f64 * 0.7).cos()).collect();
        let fy: Vec<f64> = (0..g.cell_count()).map(|k| (k as f64 * 1.3).sin()).collect();
        let (mut gx, mut gy) = (vec![0.0; g.cell_count()], vec![0.0; g.cell_count()]);
        g.gradient_raw(&u, &mut gx, &mut gy);
        let lhs: f64 = gx.iter().zip(&fx).chain(gy.iter().zip(&fy)).map(|(a, b)| a * b).sum();
        let mut adj = vec![0.0; g.node_count()];
        g.gradient_adjoint_add(&fx, &fy, &mut adj);
        let rhs: f64 = adj.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));

        let mut avg = vec![0.0; g.cell_count()];
        g.cell_average_raw(&u, &mut avg);
        let lhs: f64 = avg.iter().zip(&fx).map(|(a, b)| a * b).sum();
        let mut adj = vec![0.0; g.node_count()];
        g.cell_average_adjoint_add(&fx, &mut adj);
        let rhs: f64 = adj.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn weighted_means() {
        let g = unit(64);
        let one = CellField::constant(g, 1.0);
        let fx = g.sample_nodes(|x, _| x);
        assert!((weighted_mean(&fx, &one).unwrap() - 0.5).abs() < 1e-14);
        let v = g.sample_cells(|x, _| x);
        let m = weighted_mean(&fx, &v).unwrap();
        assert!((m - 2.0 / 3.0).abs() < 1e-4, "{m}");
        let c = GridFunction::constant(g, -3.5);
        assert!((weighted_mean(&c, &v).unwrap() + 3.5).abs() < 1e-14);
        let z = project_mean_zero(&fx, &v).unwrap();
        assert!(weighted_mean(&z, &v).unwrap().abs() < 1e-15);
        assert!(matches!(weighted_mean(&fx, &CellField::constant(g, 0.0)), Err(Error::ZeroWeight)));
    }

    #[test]
    fn lp_norms() {
        let g = unit(64);
        let one = CellField::constant(g, 1.0);
        for p in [1.0, 1.5, 2.0, 4.0] {
            let n = lp_norm(&GridFunction::constant(g, 1.0), &one, p).unwrap();
            assert!((n - 1.0).abs() < 1e-13);
        }
        let f = g.sample_nodes(|x, _| (std::f64::consts::PI * x).cos());
        let n = lp_norm(&f, &one, 2.0).unwrap();
        assert!((n - 0.5f64.sqrt()).abs() < 1e-3);
        let n3 = lp_norm(&f.scaled(-3.0), &one, 2.0).unwrap();
        assert!((n3 - 3.0 * n).abs() < 1e-13);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let f = GridFunction::zeros(unit(4));
        let v = CellField::constant(unit(5), 1.0);
        assert!(matches!(weighted_mean(&f, &v), Err(Error::GridMismatch(_))));
        assert!(GridFunction::new(unit(4), vec![0.0; 3]).is_err());
        assert!(Grid::unit_square(1).is_err());
    }
}
