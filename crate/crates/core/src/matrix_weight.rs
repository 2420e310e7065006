//! Per-cell symmetric positive semidefinite 2×2 matrix weights `Q(x)`.
//!
//! Every cell caches its eigendata. The convention is `Q = Uᵗ D U`, where the
//! rows of `U` are unit eigenvectors, `D = diag(λ₁, λ₂)` with `λ₁ ≥ λ₂ ≥ 0`,
//! and the first nonzero component of the first eigenvector is nonnegative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{lp_norm_cells, CellField, Grid, VectorField};
use crate::weights::ScalarWeightField;

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Sym2 { xx: a, xy: 0.0, yy: b }
    }

    /// Checks symmetry of a full matrix to a relative tolerance.
    pub fn from_matrix(m: [[f64; 2]; 2]) -> Result<Self> {
        let scale = m.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
        let skew = (m[0][1] - m[1][0]).abs();
        if skew > 1e-12 * scale {
            return Err(Error::Asymmetric(skew));
        }
        Ok(Sym2 { xx: m[0][0], xy: 0.5 * (m[0][1] + m[1][0]), yy: m[1][1] })
    }

    pub fn to_matrix(self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }

    pub fn scaled(self, t: f64) -> Self {
        Sym2 { xx: t * self.xx, xy: t * self.xy, yy: t * self.yy }
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    #[inline]
    pub fn apply(self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    /// `vᵗ Q v`.
    #[inline]
    pub fn quad(self, v: [f64; 2]) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    fn max_abs(self) -> f64 {
        self.xx.abs().max(self.xy.abs()).max(self.yy.abs())
    }
}

/// Eigendata of one cell matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigen2 {
    /// `λ₁ ≥ λ₂ ≥ 0`.
    pub values: [f64; 2],
    /// Angle of the first eigenvector, in `(-π/2, π/2]`.
    pub angle: f64,
}

impl Eigen2 {
    /// Rows are the eigenvectors.
    pub fn rotation(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.angle.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn power(&self, r: f64) -> Sym2 {
        let [l1, l2] = self.values;
        let (a, b) = (pow_nonneg(l1, r), pow_nonneg(l2, r));
        let (s, c) = self.angle.sin_cos();
        Sym2 { xx: a * c * c + b * s * s, xy: (a - b) * c * s, yy: a * s * s + b * c * c }
    }

    pub fn reconstruct(&self) -> Sym2 {
        self.power(1.0)
    }
}

fn pow_nonneg(x: f64, r: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(r)
    }
}

/// Closed-form symmetric eigendecomposition with the module's sign convention.
pub fn eigendecompose(q: Sym2) -> Result<Eigen2> {
    let mean = 0.5 * (q.xx + q.yy);
    let half = 0.5 * (q.xx - q.yy);
    let rad = half.hypot(q.xy);
    let (mut l1, mut l2) = (mean + rad, mean - rad);
    let tol = 1e-12 * q.trace().abs().max(q.max_abs());
    if l2 < -tol {
        return Err(Error::NotPositiveSemidefinite(l2));
    }
    l2 = l2.max(0.0);
    l1 = l1.max(0.0);
    // atan2 lands in (-π, π], so the angle is in (-π/2, π/2] and the first
    // eigenvector (cos, sin) already has a nonnegative leading component
    let angle = if rad == 0.0 { 0.0 } else { 0.5 * (2.0 * q.xy).atan2(q.xx - q.yy) };
    Ok(Eigen2 { values: [l1, l2], angle })
}

/// `Q^r = Uᵗ D^r U` for `r > 0`.
pub fn matrix_power(q: Sym2, r: f64) -> Result<Sym2> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("matrix powers need r > 0, got {r}")));
    }
    if r == 1.0 {
        eigendecompose(q)?;
        return Ok(q);
    }
    Ok(eigendecompose(q)?.power(r))
}

pub fn operator_norm(q: Sym2) -> Result<f64> {
    Ok(eigendecompose(q)?.values[0])
}

/// Matrix field descriptor: `identity`, `diag:w1,w2` or
/// `scalar_elliptic:m,A11,A12,A22` where `w1`, `w2`, `m` name scalar weights
/// and the `A` entries are numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixDescriptor {
    Identity,
    Diag { first: String, second: String },
    ScalarElliptic { scale: String, a: [f64; 3] },
}

impl MatrixDescriptor {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "identity" {
            return Ok(MatrixDescriptor::Identity);
        }
        let bad = || Error::Parse(format!("unrecognized matrix descriptor {text:?}"));
        let (kind, rest) = text.split_once(':').ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        match (kind.trim(), parts.as_slice()) {
            ("diag", [a, b]) => Ok(MatrixDescriptor::Diag { first: a.to_string(), second: b.to_string() }),
            ("scalar_elliptic", [m, a11, a12, a22]) => {
                let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad matrix entry {s:?}")));
                Ok(MatrixDescriptor::ScalarElliptic { scale: m.to_string(), a: [num(a11)?, num(a12)?, num(a22)?] })
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for MatrixDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatrixDescriptor::Identity => write!(f, "identity"),
            MatrixDescriptor::Diag { first, second } => write!(f, "diag:{first},{second}"),
            MatrixDescriptor::ScalarElliptic { scale, a } => {
                write!(f, "scalar_elliptic:{scale},{},{},{}", a[0], a[1], a[2])
            }
        }
    }
}

/// `Q(x)` sampled at cell centers, with cached eigendata and `√Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixCells")]
pub struct MatrixWeightField {
    pub grid: Grid,
    pub cells: Vec<Sym2>,
    #[serde(skip)]
    eigen: Vec<Eigen2>,
    #[serde(skip)]
    sqrt: Vec<Sym2>,
}

#[derive(Deserialize)]
struct MatrixCells {
    grid: Grid,
    cells: Vec<Sym2>,
}

impl TryFrom<MatrixCells> for MatrixWeightField {
    type Error = Error;

    fn try_from(m: MatrixCells) -> Result<Self> {
        MatrixWeightField::from_cells(m.grid, m.cells)
    }
}

impl MatrixWeightField {
    pub fn from_cells(grid: Grid, cells: Vec<Sym2>) -> Result<Self> {
        if cells.len() != grid.cell_count() {
            return Err(Error::GridMismatch(format!("expected {} cell matrices, got {}", grid.cell_count(), cells.len())));
        }
        let eigen = cells.iter().map(|q| eigendecompose(*q)).collect::<Result<Vec<_>>>()?;
        let sqrt = eigen.iter().map(|e| e.power(0.5)).collect();
        Ok(MatrixWeightField { grid, cells, eigen, sqrt })
    }

    pub fn uniform(grid: Grid, q: Sym2) -> Result<Self> {
        Self::from_cells(grid, vec![q; grid.cell_count()])
    }

    pub fn identity(grid: Grid) -> Self {
        Self::uniform(grid, Sym2::IDENTITY).expect("identity is positive definite")
    }

    /// Builds the field from a descriptor, looking weight names up in `resolve`.
    pub fn from_descriptor(
        grid: Grid,
        desc: &MatrixDescriptor,
        resolve: impl Fn(&str) -> Result<ScalarWeightField>,
    ) -> Result<Self> {
        match desc {
            MatrixDescriptor::Identity => Ok(Self::identity(grid)),
            MatrixDescriptor::Diag { first, second } => {
                let a = grid.sample_weight(&resolve(first)?)?;
                let b = grid.sample_weight(&resolve(second)?)?;
                Self::from_weights(grid, &a, &b)
            }
            MatrixDescriptor::ScalarElliptic { scale, a } => {
                let base = Sym2::new(a[0], a[1], a[2]);
                let e = eigendecompose(base)?;
                if !(e.values[1] > 0.0) {
                    return Err(Error::InvalidParameter(format!("{base:?} is not uniformly elliptic")));
                }
                let m = grid.sample_weight(&resolve(scale)?)?;
                Self::from_cells(grid, m.values.iter().map(|s| base.scaled(*s)).collect())
            }
        }
    }

    /// `diag(w₁, w₂)` from sampled weights.
    pub fn from_weights(grid: Grid, a: &CellField, b: &CellField) -> Result<Self> {
        grid.check_same(&a.grid)?;
        grid.check_same(&b.grid)?;
        Self::from_cells(grid, a.values.iter().zip(&b.values).map(|(x, y)| Sym2::diag(*x, *y)).collect())
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::from_cells(self.grid, self.cells.iter().map(|q| q.scaled(t)).collect())
    }

    pub fn eigen(&self) -> &[Eigen2] {
        &self.eigen
    }

    pub fn sqrt_cells(&self) -> &[Sym2] {
        &self.sqrt
    }

    /// `|Q(x)|_op` per cell.
    pub fn operator_norms(&self) -> Vec<f64> {
        self.eigen.iter().map(|e| e.values[0]).collect()
    }

    /// Cells whose smallest eigenvalue vanishes.
    pub fn degenerate_cells(&self) -> Vec<usize> {
        self.eigen.iter().enumerate().filter(|(_, e)| e.values[1] == 0.0).map(|(c, _)| c).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.eigen.iter().all(|e| e.values[0] == 0.0)
    }

}

/// `(∫ |√Q g|^p)^{1/p}` by per-cell midpoint quadrature.
pub fn lq_norm(g: &VectorField, q: &MatrixWeightField, p: f64) -> Result<f64> {
    g.grid.check_same(&q.grid)?;
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("L^p_Q norm needs p >= 1, got {p}")));
    }
    let mags: Vec<f64> = q
        .cells
        .iter()
        .zip(g.x.iter().zip(&g.y))
        .map(|(m, (x, y))| m.quad([*x, *y]).max(0.0).sqrt())
        .collect();
    let ones = vec![1.0; mags.len()];
    Ok(lp_norm_cells(&mags, &ones, p, g.grid.cell_area()))
}

/// Largest cellwise relative gap between `gᵗQg` and `Σ λ_j |(Ug)_j|²`.
pub fn eigensum_identity_check(g: &VectorField, q: &MatrixWeightField) -> Result<f64> {
    g.grid.check_same(&q.grid)?;
    let mut worst = 0.0f64;
    for (c, (m, e)) in q.cells.iter().zip(&q.eigen).enumerate() {
        let v = [g.x[c], g.y[c]];
        let direct = m.quad(v);
        let u = e.rotation();
        let t = [u[0][0] * v[0] + u[0][1] * v[1], u[1][0] * v[0] + u[1][1] * v[1]];
        let spectral = e.values[0] * t[0] * t[0] + e.values[1] * t[1] * t[1];
        let scale = (m.max_abs() * (v[0] * v[0] + v[1] * v[1])).max(f64::MIN_POSITIVE);
        worst = worst.max((direct - spectral).abs() / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    /// `min λ₂ / w^{2/p}` over cells with `w > 0`.
    pub lambda_low: f64,
    /// `max λ₁ / w^{2/p}` over cells with `w > 0`.
    pub lambda_high: f64,
    pub p: f64,
    /// `λ₂^{p/2} ≥ w` on every cell.
    pub lower_holds: bool,
    pub low_witness: Option<[f64; 2]>,
    pub high_witness: Option<[f64; 2]>,
    pub lower_witness: Option<[f64; 2]>,
    /// Centers of cells where `w = 0`.
    pub zero_weight_cells: Vec<[f64; 2]>,
}

/// Best sampled constants in `λ w^{2/p}|ξ|² ≤ ξᵗQξ ≤ Λ w^{2/p}|ξ|²` and the
/// lower condition `w|ξ|^p ≤ |√Q ξ|^p`.
pub fn ellipticity_audit(q: &MatrixWeightField, w: &CellField, p: f64) -> Result<EllipticityReport> {
    q.grid.check_same(&w.grid)?;
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("ellipticity audit needs p > 1, got {p}")));
    }
    let centers = q.grid.centers();
    let mut rep = EllipticityReport {
        lambda_low: f64::INFINITY,
        lambda_high: 0.0,
        p,
        lower_holds: true,
        low_witness: None,
        high_witness: None,
        lower_witness: None,
        zero_weight_cells: Vec::new(),
    };
    for (c, (e, wv)) in q.eigen.iter().zip(&w.values).enumerate() {
        let [l1, l2] = e.values;
        if l2.powf(p / 2.0) < *wv * (1.0 - 1e-12) && rep.lower_holds {
            rep.lower_holds = false;
            rep.lower_witness = Some(centers[c]);
        }
        if *wv <= 0.0 {
            rep.zero_weight_cells.push(centers[c]);
            continue;
        }
        let s = wv.powf(2.0 / p);
        if l2 / s < rep.lambda_low {
            rep.lambda_low = l2 / s;
            rep.low_witness = Some(centers[c]);
        }
        if l1 / s > rep.lambda_high {
            rep.lambda_high = l1 / s;
            rep.high_witness = Some(centers[c]);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn close(a: Sym2, b: Sym2, tol: f64) -> bool {
        (a.xx - b.xx).abs() <= tol && (a.xy - b.xy).abs() <= tol && (a.yy - b.yy).abs() <= tol
    }

    #[test]
    fn eigen_examples() {
        let e = eigendecompose(Sym2::IDENTITY).unwrap();
        assert_eq!((e.values, e.angle), ([1.0, 1.0], 0.0));
        let e = eigendecompose(Sym2::diag(4.0, 1.0)).unwrap();
        assert_eq!((e.values, e.angle), ([4.0, 1.0], 0.0));
        let e = eigendecompose(Sym2::new(2.0, 1.0, 2.0)).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-15 && (e.values[1] - 1.0).abs() < 1e-15);
        assert!((e.angle - FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn sign_convention_and_sorting() {
        // larger eigenvalue along y: first eigenvector (0, 1)
        let e = eigendecompose(Sym2::diag(1.0, 4.0)).unwrap();
        assert_eq!(e.values, [4.0, 1.0]);
        let u = e.rotation();
        assert!(u[0][0].abs() < 1e-15 && (u[0][1] - 1.0).abs() < 1e-15);
        let e = eigendecompose(Sym2::new(2.0, -1.0, 2.0)).unwrap();
        assert!(e.rotation()[0][0] > 0.0);
    }

    #[test]
    fn asymmetric_and_indefinite_inputs_are_rejected() {
        assert!(matches!(Sym2::from_matrix([[1.0, 0.5], [0.4, 1.0]]), Err(Error::Asymmetric(_))));
        assert!(matches!(eigendecompose(Sym2::diag(1.0, -0.5)), Err(Error::NotPositiveSemidefinite(_))));
        // roundoff-sized negatives are clamped
        let e = eigendecompose(Sym2::new(1.0, 1.0 + 1e-15, 1.0)).unwrap();
        assert_eq!(e.values[1], 0.0);
    }

    #[test]
    fn powers() {
        assert!(close(matrix_power(Sym2::diag(4.0, 9.0), 0.5).unwrap(), Sym2::diag(2.0, 3.0), 1e-15));
        assert!(close(matrix_power(Sym2::IDENTITY, 2.7).unwrap(), Sym2::IDENTITY, 1e-15));
        assert!(close(matrix_power(Sym2::new(2.0, 1.0, 2.0), 2.0).unwrap(), Sym2::new(5.0, 4.0, 5.0), 1e-13));
        let q = Sym2::new(0.3, -0.7, 2.1);
        assert_eq!(matrix_power(q, 1.0).unwrap(), q);
        assert!(matrix_power(q, 0.0).is_err());
    }

    #[test]
    fn operator_norms() {
        assert_eq!(operator_norm(Sym2::IDENTITY).unwrap(), 1.0);
        assert_eq!(operator_norm(Sym2::diag(4.0, 1.0)).unwrap(), 4.0);
        assert!((operator_norm(Sym2::new(2.0, 1.0, 2.0)).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn lq_norm_examples() {
        let grid = Grid::unit_square(8).unwrap();
        let id = MatrixWeightField::identity(grid);
        let g = VectorField::constant(grid, [1.0, 0.0]);
        assert!((lq_norm(&g, &id, 2.0).unwrap() - 1.0).abs() < 1e-14);
        let q = MatrixWeightField::uniform(grid, Sym2::diag(4.0, 1.0)).unwrap();
        let g = VectorField::constant(grid, [1.0, 1.0]);
        assert!((lq_norm(&g, &q, 2.0).unwrap() - 5f64.sqrt()).abs() < 1e-14);
        assert!((lq_norm(&g.scaled(-2.5), &q, 3.0).unwrap() - 2.5 * lq_norm(&g, &q, 3.0).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn descriptors() {
        assert_eq!(MatrixDescriptor::parse("identity").unwrap(), MatrixDescriptor::Identity);
        let d = MatrixDescriptor::parse("diag:w, v").unwrap();
        assert_eq!(d, MatrixDescriptor::Diag { first: "w".into(), second: "v".into() });
        let d = MatrixDescriptor::parse("scalar_elliptic:m,2,1,2").unwrap();
        assert_eq!(MatrixDescriptor::parse(&d.to_string()).unwrap(), d);
        assert!(MatrixDescriptor::parse("diag:w").is_err());
        assert!(MatrixDescriptor::parse("scalar_elliptic:m,2,x,2").is_err());
    }

    #[test]
    fn ellipticity_examples() {
        let grid = Grid::new(crate::grid::RectDomain::new(1.0, 1.0, [0.5, 0.5]).unwrap(), 6, 6).unwrap();
        let p = 3.0;
        let w = grid.sample_cells(|x, y| (x * x + y * y).powf(0.25));
        let q = MatrixWeightField::from_cells(
            grid,
            w.values.iter().map(|s| Sym2::IDENTITY.scaled(s.powf(2.0 / p))).collect(),
        )
        .unwrap();
        let rep = ellipticity_audit(&q, &w, p).unwrap();
        assert!((rep.lambda_low - 1.0).abs() < 1e-12 && (rep.lambda_high - 1.0).abs() < 1e-12);

        let two = CellField::constant(grid, 2.0);
        let rep = ellipticity_audit(&MatrixWeightField::identity(grid), &two, 2.0).unwrap();
        assert!(!rep.lower_holds && rep.lower_witness.is_some());

        let zero = CellField::constant(grid, 0.0);
        let rep = ellipticity_audit(&MatrixWeightField::identity(grid), &zero, 2.0).unwrap();
        assert_eq!(rep.zero_weight_cells.len(), 36);
    }

    #[test]
    fn serde_round_trip_rebuilds_eigendata() {
        let grid = Grid::unit_square(3).unwrap();
        let q = MatrixWeightField::uniform(grid, Sym2::new(2.0, 1.0, 2.0)).unwrap();
        let back: MatrixWeightField = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back, q);
        assert!((back.eigen()[0].values[0] - 3.0).abs() < 1e-15);
    }
}
