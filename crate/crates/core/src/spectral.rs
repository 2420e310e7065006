//! Cosine-series solution of `Δu = f` with homogeneous Neumann data on
//! `R = (0, a) × (0, b)`.
//!
//! Coefficient `F_mn` multiplies `cos(nπx/a) cos(mπy/b)`, so `m` indexes the
//! `y` direction and `n` the `x` direction, and `λ_mn = π²(n²/a² + m²/b²)`.
//! Coefficients are normalized so that a unit mode has coefficient 1, that
//! is `F_mn = C_mn ∫_R f cos cos` with `C_mn = 4/(ab)`, halved for each zero
//! index.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, RectDomain};

/// `π²(n²/a² + m²/b²)`.
pub fn lambda_mn(m: usize, n: usize, a: f64, b: f64) -> Result<f64> {
    if m == 0 && n == 0 {
        return Err(Error::InvalidParameter("λ_00 = 0 is excluded".into()));
    }
    let (n, m) = (n as f64, m as f64);
    Ok(PI * PI * (n * n / (a * a) + m * m / (b * b)))
}

/// Normalization `C_mn`.
pub fn normalization(m: usize, n: usize, a: f64, b: f64) -> f64 {
    let zeros = usize::from(m == 0) + usize::from(n == 0);
    4.0 / (a * b) / f64::from(1 << zeros)
}

/// One term `amp · cos(kx π x/a) cos(ky π y/b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineMode {
    pub kx: usize,
    pub ky: usize,
    pub amp: f64,
}

/// Finite cosine sum written `cos:kx=1,ky=0[,amp=2] + cos:...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalFunction {
    pub modes: Vec<CosineMode>,
}

impl ModalFunction {
    pub fn parse(text: &str) -> Result<Self> {
        let modes = text
            .split('+')
            .map(|term| {
                let term = term.trim();
                let body = term
                    .strip_prefix("cos:")
                    .ok_or_else(|| Error::Parse(format!("expected 'cos:...', got {term:?}")))?;
                let mut mode = CosineMode { kx: 0, ky: 0, amp: 1.0 };
                for kv in body.split(',') {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::Parse(format!("expected key=value, got {kv:?}")))?;
                    let bad = || Error::Parse(format!("bad value for {}: {v:?}", k.trim()));
                    match k.trim() {
                        "kx" => mode.kx = v.trim().parse().map_err(|_| bad())?,
                        "ky" => mode.ky = v.trim().parse().map_err(|_| bad())?,
                        "amp" => mode.amp = v.trim().parse().map_err(|_| bad())?,
                        other => return Err(Error::Parse(format!("unknown mode key {other:?}"))),
                    }
                }
                Ok(mode)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModalFunction { modes })
    }

    pub fn eval(&self, domain: &RectDomain, x: f64, y: f64) -> f64 {
        let (xs, ys) = ((x - domain.origin[0]) / domain.a, (y - domain.origin[1]) / domain.b);
        self.modes.iter().map(|m| m.amp * (PI * m.kx as f64 * xs).cos() * (PI * m.ky as f64 * ys).cos()).sum()
    }

    pub fn sample(&self, grid: &Grid) -> GridFunction {
        grid.sample_nodes(|x, y| self.eval(&grid.domain, x, y))
    }

    /// Exact coefficient table up to `(max_m, max_n)`.
    pub fn expansion(&self, domain: RectDomain, max_m: usize, max_n: usize) -> CosineExpansion {
        let mut coeffs = vec![vec![0.0; max_n + 1]; max_m + 1];
        let mut tail = Vec::new();
        for mode in &self.modes {
            if mode.ky <= max_m && mode.kx <= max_n {
                coeffs[mode.ky][mode.kx] += mode.amp;
            } else {
                tail.push(*mode);
            }
        }
        let tail_bound = tail
            .iter()
            .filter(|m| m.kx + m.ky > 0)
            .map(|m| m.amp.abs() / lambda_mn(m.ky, m.kx, domain.a, domain.b).unwrap())
            .sum();
        CosineExpansion { domain, coeffs, tail_bound }
    }
}

/// Coefficients `coeffs[m][n]` for `0 ≤ m ≤ M`, `0 ≤ n ≤ N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineExpansion {
    pub domain: RectDomain,
    pub coeffs: Vec<Vec<f64>>,
    /// `Σ |F_mn| / λ_mn` over modes dropped by the truncation.
    pub tail_bound: f64,
}

impl CosineExpansion {
    pub fn max_m(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn max_n(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    pub fn coeff(&self, m: usize, n: usize) -> f64 {
        self.coeffs.get(m).and_then(|row| row.get(n)).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = &self.domain;
        let (xs, ys) = ((x - d.origin[0]) / d.a, (y - d.origin[1]) / d.b);
        let cx: Vec<f64> = (0..=self.max_n()).map(|n| (PI * n as f64 * xs).cos()).collect();
        let mut s = 0.0;
        for (m, row) in self.coeffs.iter().enumerate() {
            let cy = (PI * m as f64 * ys).cos();
            s += cy * row.iter().zip(&cx).map(|(c, x)| c * x).sum::<f64>();
        }
        s
    }

    pub fn sample(&self, grid: &Grid) -> GridFunction {
        grid.sample_nodes(|x, y| self.eval(x, y))
    }

    /// `‖·‖_{L²(R)}` from coefficients: `Σ F_mn² / C_mn`.
    pub fn l2_norm(&self) -> f64 {
        let (a, b) = (self.domain.a, self.domain.b);
        let mut s = 0.0;
        for (m, row) in self.coeffs.iter().enumerate() {
            for (n, c) in row.iter().enumerate() {
                s += c * c / normalization(m, n, a, b);
            }
        }
        s.sqrt()
    }
}

/// Discrete cosine coefficients of nodal data by trapezoid-weighted sums.
///
/// The trapezoid rule makes the sampled cosines exactly orthogonal, so
/// band-limited data (indices below the cell counts) is reproduced exactly.
/// Modes above `(max_m, max_n)` feed the tail bound.
pub fn cosine_coeffs(f: &GridFunction, max_m: usize, max_n: usize) -> Result<CosineExpansion> {
    let grid = f.grid;
    let (nx, ny) = (grid.nx, grid.ny);
    let (a, b) = (grid.domain.a, grid.domain.b);
    let trap = |i: usize, n: usize| if i == 0 || i == n { 0.5 } else { 1.0 };
    // along x for each row
    let mut tx = vec![vec![0.0; ny + 1]; nx + 1];
    for (n, col) in tx.iter_mut().enumerate() {
        let c: Vec<f64> = (0..=nx).map(|i| trap(i, nx) * (PI * (n * i) as f64 / nx as f64).cos()).collect();
        for (j, out) in col.iter_mut().enumerate() {
            *out = (0..=nx).map(|i| c[i] * f.values[grid.node_index(i, j)]).sum();
        }
    }
    let area = grid.cell_area();
    let mut full = vec![vec![0.0; nx + 1]; ny + 1];
    for (m, row) in full.iter_mut().enumerate() {
        let c: Vec<f64> = (0..=ny).map(|j| trap(j, ny) * (PI * (m * j) as f64 / ny as f64).cos()).collect();
        for (n, out) in row.iter_mut().enumerate() {
            // the Nyquist index aliases with itself and carries double weight
            let alias = f64::from(1 << (usize::from(m == ny && m > 0) + usize::from(n == nx && n > 0)));
            *out = normalization(m, n, a, b) * area * (0..=ny).map(|j| c[j] * tx[n][j]).sum::<f64>() / alias;
        }
    }
    let scale = f.values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if full[0][0].abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonZeroMean(full[0][0]));
    }
    full[0][0] = 0.0;
    let mut tail_bound = 0.0;
    for (m, row) in full.iter().enumerate() {
        for (n, c) in row.iter().enumerate() {
            if (m > max_m || n > max_n) && m + n > 0 {
                tail_bound += c.abs() / lambda_mn(m, n, a, b)?;
            }
        }
    }
    let coeffs = (0..=max_m).map(|m| (0..=max_n).map(|n| if m <= ny && n <= nx { full[m][n] } else { 0.0 }).collect()).collect();
    Ok(CosineExpansion { domain: grid.domain, coeffs, tail_bound })
}

/// `A_mn = -F_mn / λ_mn`, `A_00 = 0`.
pub fn solve_poisson_neumann_rect(f: &CosineExpansion) -> Result<CosineExpansion> {
    if f.coeffs[0][0].abs() > 1e-12 * f.l2_norm().max(f64::MIN_POSITIVE) {
        return Err(Error::NonZeroMean(f.coeffs[0][0]));
    }
    let (a, b) = (f.domain.a, f.domain.b);
    let mut coeffs = f.coeffs.clone();
    for (m, row) in coeffs.iter_mut().enumerate() {
        for (n, c) in row.iter_mut().enumerate() {
            *c = if m + n == 0 { 0.0 } else { -*c / lambda_mn(m, n, a, b)? };
        }
    }
    Ok(CosineExpansion { domain: f.domain, coeffs, tail_bound: f.tail_bound })
}

/// `Λ = (Σ_{m+n>0} λ_mn^{-2})^{1/2}`, summed over the ellipse
/// `n²/a² + m²/b² ≤ R²` and closed with the integral tail
/// `ab / (4π³ R²)`.
pub fn big_lambda(a: f64, b: f64) -> f64 {
    let r: f64 = 400.0 / a.min(b).max(1e-300).recip().max(1.0);
    let r = r.max(400.0);
    let (max_n, max_m) = ((r * a).ceil() as usize, (r * b).ceil() as usize);
    let mut s = 0.0;
    for m in 0..=max_m {
        for n in 0..=max_n {
            if m + n == 0 {
                continue;
            }
            let q = (n as f64 / a).powi(2) + (m as f64 / b).powi(2);
            if q <= r * r {
                let l = PI * PI * q;
                s += 1.0 / (l * l);
            }
        }
    }
    (s + a * b / (4.0 * PI.powi(3) * r * r)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2BoundReport {
    /// `‖u‖ / ‖f‖`, 0 for `f ≡ 0`.
    pub ratio: f64,
    /// `1 / λ_min`.
    pub modewise_bound: f64,
    /// `C(R) Λ` with `C(R) = 4/(ab)`.
    pub series_bound: f64,
    pub big_lambda: f64,
    pub within_modewise: bool,
    pub within_series: bool,
}

/// Compares `‖u‖/‖f‖` with `1/λ_min` and with `C(R) Λ`.
pub fn l2_bound_check(u: &CosineExpansion, f: &CosineExpansion) -> Result<L2BoundReport> {
    if u.domain != f.domain {
        return Err(Error::InvalidParameter("expansions live on different rectangles".into()));
    }
    let (a, b) = (f.domain.a, f.domain.b);
    let fl = f.l2_norm();
    let ratio = if fl > 0.0 { u.l2_norm() / fl } else { 0.0 };
    let lambda_min = lambda_mn(0, 1, a, b)?.min(lambda_mn(1, 0, a, b)?);
    let big = big_lambda(a, b);
    let series_bound = 4.0 / (a * b) * big;
    let slack = 1.0 + 1e-12;
    Ok(L2BoundReport {
        ratio,
        modewise_bound: 1.0 / lambda_min,
        series_bound,
        big_lambda: big,
        within_modewise: ratio <= slack / lambda_min,
        within_series: ratio <= slack * series_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Grid {
        Grid::unit_square(n).unwrap()
    }

    #[test]
    fn eigenvalues() {
        assert!((lambda_mn(0, 1, 1.0, 1.0).unwrap() - PI * PI).abs() < 1e-14);
        assert!((lambda_mn(1, 1, PI, PI).unwrap() - 2.0).abs() < 1e-14);
        assert!(lambda_mn(0, 0, 1.0, 1.0).is_err());
        assert_eq!(lambda_mn(2, 3, 1.0, 1.0).unwrap(), lambda_mn(3, 2, 1.0, 1.0).unwrap());
    }

    #[test]
    fn single_modes_are_recovered() {
        let g = unit(16);
        let f = ModalFunction::parse("cos:kx=1,ky=0").unwrap().sample(&g);
        let e = cosine_coeffs(&f, 8, 8).unwrap();
        for m in 0..=8 {
            for n in 0..=8 {
                let want = if (m, n) == (0, 1) { 1.0 } else { 0.0 };
                assert!((e.coeff(m, n) - want).abs() < 1e-13, "({m},{n}) {}", e.coeff(m, n));
            }
        }
        let f = ModalFunction::parse("cos:kx=2,ky=1").unwrap().sample(&g);
        let e = cosine_coeffs(&f, 8, 8).unwrap();
        assert!((e.coeff(1, 2) - 1.0).abs() < 1e-13);
        assert!((e.l2_norm() - 0.5).abs() < 1e-13);
    }

    #[test]
    fn nonzero_mean_is_rejected() {
        let g = unit(8);
        assert!(matches!(cosine_coeffs(&GridFunction::constant(g, 1.0), 4, 4), Err(Error::NonZeroMean(_))));
    }

    #[test]
    fn poisson_solutions() {
        let d = RectDomain::unit_square();
        let f = ModalFunction::parse("cos:kx=2,ky=1").unwrap().expansion(d, 4, 4);
        let u = solve_poisson_neumann_rect(&f).unwrap();
        assert!((u.coeff(1, 2) + 1.0 / (5.0 * PI * PI)).abs() < 1e-15);
        let z = solve_poisson_neumann_rect(&ModalFunction { modes: vec![] }.expansion(d, 3, 3)).unwrap();
        assert!(z.coeffs.iter().flatten().all(|c| *c == 0.0));
    }

    #[test]
    fn rectangle_round_trip_with_offset() {
        let d = RectDomain::new(2.0, 0.5, [1.0, -3.0]).unwrap();
        let g = Grid::new(d, 24, 12).unwrap();
        let mf = ModalFunction::parse("cos:kx=3,ky=0,amp=2 + cos:kx=1,ky=5,amp=-0.5 + cos:kx=0,ky=1").unwrap();
        let e = cosine_coeffs(&mf.sample(&g), 6, 6).unwrap();
        assert!((e.coeff(0, 3) - 2.0).abs() < 1e-12);
        assert!((e.coeff(5, 1) + 0.5).abs() < 1e-12);
        assert!((e.coeff(1, 0) - 1.0).abs() < 1e-12);
        assert!(e.tail_bound < 1e-12);
        let back = e.sample(&g);
        let f = mf.sample(&g);
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn bounds() {
        let d = RectDomain::unit_square();
        let f = ModalFunction::parse("cos:kx=1,ky=0").unwrap().expansion(d, 4, 4);
        let rep = l2_bound_check(&solve_poisson_neumann_rect(&f).unwrap(), &f).unwrap();
        assert!((rep.ratio - 1.0 / (PI * PI)).abs() < 1e-15);
        assert!(rep.within_modewise && rep.within_series);
        let z = ModalFunction { modes: vec![] }.expansion(d, 2, 2);
        assert_eq!(l2_bound_check(&z, &z).unwrap().ratio, 0.0);
        // Λ ≥ √2/π² from the two lowest modes alone
        assert!(big_lambda(1.0, 1.0) > 2f64.sqrt() / (PI * PI));
    }
}
