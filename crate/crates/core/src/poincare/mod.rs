//! Numerical estimates of the degenerate Poincaré constant
//!
//! ```text
//! K = sup ∫ |f - f_E|^p v / ∫ |√Q ∇f|^p
//! ```
//!
//! where `f_E` is the `v`-weighted mean. At `p = 2` the supremum is the top
//! eigenvalue of the pencil `(M̃, K)` with `M̃` the mean-free mass form and
//! `K` the stiffness. For other `p` it is maximized directly. A third
//! estimate comes out of Neumann solves on a data corpus.

mod riesz;

pub use riesz::{
    riesz_pointwise_check, riesz_potential, two_weight_chain, RieszPointwise, TwoWeightChainReport,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::smooth_function;
use crate::error::{Error, Result};
use crate::grid::{lp_norm, project_mean_zero, CellField, Grid, GridFunction};
use crate::linalg::{dot, norm, pcg, NullSpace};
use crate::matrix_weight::{lq_norm, MatrixWeightField};
use crate::neumann::{
    apply_t, flux_density, signed_pow, solve, CellOperator, NeumannProblem, SobolevPair, SolverConfig,
};
use crate::optim::{lbfgs, LineSearch, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoincareMethod {
    Eigen,
    Rayleigh,
    Neumann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareEstimate {
    pub p: f64,
    /// `K`, in the power form `∫|f - f_E|^p v ≤ K ∫|√Q∇f|^p`.
    /// Infinite when the gradient form has a nonconstant kernel.
    pub constant: f64,
    pub method: PoincareMethod,
    /// Maximizing function, mean zero and unit `L^p(v)` norm.
    pub extremizer: Option<GridFunction>,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl PoincareEstimate {
    /// `K^{1/p}`, the constant in the norm form.
    pub fn norm_constant(&self) -> f64 {
        self.constant.powf(1.0 / self.p)
    }

    fn infinite(p: f64, method: PoincareMethod, why: &str) -> Self {
        PoincareEstimate {
            p,
            constant: f64::INFINITY,
            method,
            extremizer: None,
            iterations: 0,
            converged: true,
            flags: vec![why.to_string()],
        }
    }
}

/// `∫ |f - f_E|^p v / ∫ |√Q ∇f|^p`, with `ε = 0`.
pub fn rayleigh_quotient(f: &GridFunction, q: &MatrixWeightField, v: &CellField, p: f64) -> Result<f64> {
    let centered = project_mean_zero(f, v)?;
    let num = lp_norm(&centered, v, p)?.powf(p);
    let den = lq_norm(&crate::grid::gradient(f), q, p)?.powf(p);
    Ok(if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    })
}

fn null_space(grid: Grid) -> NullSpace {
    NullSpace::new(&[vec![1.0; grid.node_count()], grid.checkerboard()])
}

fn check_inputs(q: &MatrixWeightField, v: &CellField, p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 1 < p < inf, got {p}")));
    }
    q.grid.check_same(&v.grid)?;
    if !v.values.iter().any(|x| *x > 0.0) {
        return Err(Error::Degenerate("v vanishes on every cell".into()));
    }
    Ok(())
}

/// Mean-free mass form `x ↦ Aᵗ(w Ax - w (wᵗAx)/W)`.
struct MeanFreeMass {
    grid: Grid,
    w: Vec<f64>,
    total: f64,
}

impl MeanFreeMass {
    fn new(v: &CellField) -> Self {
        let area = v.grid.cell_area();
        let w: Vec<f64> = v.values.iter().map(|x| x * area).collect();
        let total = w.iter().sum();
        MeanFreeMass { grid: v.grid, w, total }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut avg = vec![0.0; self.grid.cell_count()];
        self.grid.cell_average_raw(x, &mut avg);
        let mean = dot(&avg, &self.w) / self.total;
        for (a, w) in avg.iter_mut().zip(&self.w) {
            *a = w * (*a - mean);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        self.grid.cell_average_adjoint_add(&avg, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EigenConfig {
    /// Relative change of the eigenvalue between sweeps.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig { tolerance: 1e-10, max_iterations: 500, seed: 0 }
    }
}

/// Normalizes `x` to zero mean and unit `L^p(v)` norm, with the sign fixed
/// by the largest entry.
fn normalize_extremizer(grid: Grid, x: &[f64], v: &CellField, p: f64) -> Result<GridFunction> {
    let f = project_mean_zero(&GridFunction { grid, values: x.to_vec() }, v)?;
    let n = lp_norm(&f, v, p)?;
    let big = f.values.iter().copied().fold(0.0f64, |m, y| if y.abs() > m.abs() { y } else { m });
    let s = if n > 0.0 { big.signum() / n } else { 1.0 };
    Ok(f.scaled(s))
}

/// `p = 2` constant by inverse-style power iteration on `K⁺ M̃`.
pub fn poincare_p2_eigen(q: &MatrixWeightField, v: &CellField, config: &EigenConfig) -> Result<PoincareEstimate> {
    check_inputs(q, v, 2.0)?;
    if q.is_zero() {
        return Ok(PoincareEstimate::infinite(2.0, PoincareMethod::Eigen, "Q vanishes identically"));
    }
    let grid = q.grid;
    let k = CellOperator::stiffness(q);
    let m = MeanFreeMass::new(v);
    let null = null_space(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = smooth_function(grid, &mut rng, (grid.nx.min(grid.ny) / 4).max(2), 1.0).values;
    let n = grid.node_count();
    let (mut mx, mut z) = (vec![0.0; n], vec![0.0; n]);
    let mut mu = 0.0;
    let mut flags = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..config.max_iterations {
        iterations = it + 1;
        m.apply(&x, &mut mx);
        null.project_out(&mut mx);
        let cg = pcg(&k, &mx, &mut z, &null, 1e-11, 20 * n + 100);
        if !cg.converged {
            flags.push(format!("inner solve stalled at relative residual {:.1e}", cg.relative_residual));
            if cg.negative_curvature || !cg.relative_residual.is_finite() {
                break;
            }
        }
        m.apply(&z, &mut mx);
        let num = dot(&z, &mx);
        let den = k.energy(&z);
        if num <= 0.0 {
            return Err(Error::Degenerate("iterate lost its mean-free part".into()));
        }
        if den <= 0.0 {
            return Ok(PoincareEstimate::infinite(2.0, PoincareMethod::Eigen, "gradient form has a nonconstant kernel"));
        }
        let next = num / den;
        let scale = num.sqrt();
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi = zi / scale);
        z.iter_mut().for_each(|zi| *zi /= scale);
        let done = (next - mu).abs() <= config.tolerance * next;
        mu = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        flags.push("eigenvalue not converged".into());
    }
    Ok(PoincareEstimate {
        p: 2.0,
        constant: mu,
        method: PoincareMethod::Eigen,
        extremizer: Some(normalize_extremizer(grid, &x, v, 2.0)?),
        iterations,
        converged,
        flags,
    })
}

/// `ln ∫|√Q∇x|^p - ln ∫|x - x_E|^p v`, regularized by `ε²` in the gradient
/// density.
struct NegLogRayleigh<'a> {
    grid: Grid,
    q: &'a MatrixWeightField,
    w: Vec<f64>,
    total: f64,
    p: f64,
    eps2: f64,
    area: f64,
}

impl NegLogRayleigh<'_> {
    fn parts(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let nc = self.grid.cell_count();
        let (mut gx, mut gy, mut avg) = (vec![0.0; nc], vec![0.0; nc], vec![0.0; nc]);
        self.grid.gradient_raw(x, &mut gx, &mut gy);
        self.grid.cell_average_raw(x, &mut avg);
        let mean = dot(&avg, &self.w) / self.total;
        avg.iter_mut().for_each(|a| *a -= mean);
        let num: f64 = avg.iter().zip(&self.w).map(|(r, w)| r.abs().powf(self.p) * w).sum();
        let den: f64 = (0..nc)
            .map(|c| (self.q.cells[c].quad([gx[c], gy[c]]).max(0.0) + self.eps2).powf(0.5 * self.p))
            .sum::<f64>()
            * self.area;
        (num, den, avg, gx, gy)
    }
}

impl Objective for NegLogRayleigh<'_> {
    fn dim(&self) -> usize {
        self.grid.node_count()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (num, den, ..) = self.parts(x);
        if num > 0.0 {
            den.ln() - num.ln()
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let (num, den, r, mut gx, mut gy) = self.parts(x);
        let p = self.p;
        g.iter_mut().for_each(|v| *v = 0.0);
        if !(num > 0.0 && den > 0.0) {
            return self.value(x);
        }
        for c in 0..gx.len() {
            let qg = self.q.cells[c].apply([gx[c], gy[c]]);
            let t = gx[c] * qg[0] + gy[c] * qg[1];
            let s = p * flux_density(t.max(0.0), self.eps2, p) * self.area / den;
            gx[c] = s * qg[0];
            gy[c] = s * qg[1];
        }
        self.grid.gradient_adjoint_add(&gx, &gy, g);
        // d num = Aᵗ(p w |r|^{p-2} r) minus its mean part
        let mut c: Vec<f64> = r.iter().zip(&self.w).map(|(r, w)| -p * w * signed_pow(*r, p - 1.0) / num).collect();
        let total_c: f64 = c.iter().sum();
        for (ci, w) in c.iter_mut().zip(&self.w) {
            *ci -= total_c * w / self.total;
        }
        self.grid.cell_average_adjoint_add(&c, g);
        den.ln() - num.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RayleighConfig {
    /// Random starts, in addition to the `p = 2` extremizer when `p ≠ 2`.
    pub starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop when `‖∇ ln R‖ ‖x‖` falls below this.
    pub tolerance: f64,
}

impl Default for RayleighConfig {
    fn default() -> Self {
        RayleighConfig { starts: 8, seed: 0, max_iterations: 400, tolerance: 1e-7 }
    }
}

/// Maximizes the Rayleigh quotient by L-BFGS from several starts, using
/// the `p = 2` stiffness as the initial inverse Hessian. The reported
/// constant is the quotient of the best iterate evaluated with `ε = 0`.
pub fn poincare_rayleigh_max(
    q: &MatrixWeightField,
    v: &CellField,
    p: f64,
    config: &RayleighConfig,
) -> Result<PoincareEstimate> {
    check_inputs(q, v, p)?;
    if q.is_zero() {
        return Ok(PoincareEstimate::infinite(p, PoincareMethod::Rayleigh, "Q vanishes identically"));
    }
    let grid = q.grid;
    let null = null_space(grid);
    let k = CellOperator::stiffness(q);
    let mut starts: Vec<Vec<f64>> = (0..config.starts)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            smooth_function(grid, &mut rng, (grid.nx.min(grid.ny) / 4).max(2), 2.0).values
        })
        .collect();
    if p != 2.0 {
        let warm = poincare_p2_eigen(q, v, &EigenConfig { tolerance: 1e-8, seed: config.seed, ..Default::default() })?;
        if let Some(f) = warm.extremizer {
            starts.push(f.values);
        }
    }
    if starts.is_empty() {
        return Err(Error::InvalidParameter("need at least one start".into()));
    }
    let area = grid.cell_area();
    let w: Vec<f64> = v.values.iter().map(|x| x * area).collect();
    let total = w.iter().sum();
    let precond = |r: &[f64], out: &mut [f64]| {
        let mut b = r.to_vec();
        null.project_out(&mut b);
        out.iter_mut().for_each(|o| *o = 0.0);
        pcg(&k, &b, out, &null, 1e-6, 2000);
    };

    let runs: Vec<(f64, Vec<f64>, usize, bool)> = starts
        .into_par_iter()
        .map(|x0| {
            let mut obj = NegLogRayleigh { grid, q, w: w.clone(), total, p, eps2: 0.0, area };
            // unit gradient energy keeps K⁺-scaled steps of order one
            let (_, den, ..) = obj.parts(&x0);
            let s = if den > 0.0 { den.powf(-1.0 / p) } else { 1.0 };
            let x0: Vec<f64> = x0.iter().map(|x| x * s).collect();
            if p < 2.0 {
                obj.eps2 = 1e-12 * (grid.domain.area()).recip();
            }
            let tol = config.tolerance;
            let mut stop = |x: &[f64], g: &[f64]| norm(g) * norm(x) <= tol;
            let rep = lbfgs(&obj, x0, &null, 12, config.max_iterations, &LineSearch::default(), Some(&precond), &mut stop);
            let f = GridFunction { grid, values: rep.x.clone() };
            let value = rayleigh_quotient(&f, q, v, p).unwrap_or(0.0);
            (value, rep.x, rep.iterations, rep.converged)
        })
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.0 > runs[best].0 {
            best = i;
        }
    }
    let (constant, x, _, stopped) = &runs[best];
    // a nonsmooth quotient (p < 2) may never meet the gradient test, so
    // independent starts agreeing on the value also count
    let agreeing = runs.iter().filter(|r| (r.0 - constant).abs() <= 1e-8 * constant).count();
    let converged = *stopped || agreeing >= 2;
    let mut flags: Vec<String> = runs.iter().map(|r| format!("start value {:.12e}", r.0)).collect();
    if constant.is_infinite() {
        flags.push("gradient form has a nonconstant kernel".into());
    }
    Ok(PoincareEstimate {
        p,
        constant: *constant,
        method: PoincareMethod::Rayleigh,
        extremizer: Some(normalize_extremizer(grid, x, v, p)?),
        iterations: runs.iter().map(|r| r.2).sum(),
        converged,
        flags,
    })
}

/// One corpus solve seen from the Poincaré side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeumannProbe {
    /// Position in the corpus.
    pub index: usize,
    /// `‖u‖ / ‖f‖`.
    pub hypoest_ratio: f64,
    /// `‖(u,g)‖_H / ‖f‖`.
    pub a1_ratio: f64,
    /// `|‖f‖^p + ⟨T(u,g), (f,∇f)⟩| / ‖f‖^p`, zero for an exact solve.
    pub identity_defect: f64,
    /// `‖f‖^p / (‖g‖^{p-1} ‖∇f‖)`, at most 1 by Hölder.
    pub holder_ratio: f64,
    /// `(‖g‖^p - ‖f‖^{p-1}‖u‖)₊ / (‖f‖^{p-1}‖u‖)`.
    pub chain_defect: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeumannPoincareReport {
    pub estimate: PoincareEstimate,
    /// Largest `‖u‖/‖f‖` over the corpus.
    pub hypoest_constant: f64,
    pub probes: Vec<NeumannProbe>,
}

/// Solves the Neumann problem for each corpus function and turns the
/// largest `‖u‖/‖f‖ = D` into the Poincaré bound `K ≤ D^{p-1}`.
///
/// Testing the weak form with `f` gives `‖f‖^p ≤ ‖g‖^{p-1} ‖∇f‖`, and
/// `‖g‖^p ≤ ‖f‖^{p-1} ‖u‖ ≤ D ‖f‖^p` closes it. Functions with zero norm
/// are skipped.
pub fn poincare_from_neumann(
    q: &MatrixWeightField,
    v: &CellField,
    p: f64,
    corpus: &[GridFunction],
    config: &SolverConfig,
) -> Result<NeumannPoincareReport> {
    check_inputs(q, v, p)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let results: Vec<Result<Option<NeumannProbe>>> = corpus
        .par_iter()
        .map(|f| {
            let problem = NeumannProblem::new(p, q.clone(), v.clone(), f.clone())?;
            let fp = problem.data_norm();
            if fp == 0.0 {
                return Ok(None);
            }
            let rep = solve(&problem, config)?;
            let u = rep.norms.u_lp;
            let g = rep.norms.g_lq;
            let fbar = SobolevPair::from_function(f.clone());
            let grad_f = lq_norm(&fbar.g, q, p)?;
            let tested = apply_t(&rep.solution, &fbar, q, p, 0.0)?;
            let fpp = fp.powf(p);
            let scale = fp.powf(p - 1.0) * u;
            Ok(Some(NeumannProbe {
                index: 0,
                hypoest_ratio: rep.ratio_hypoest,
                a1_ratio: rep.ratio_a1,
                identity_defect: (fpp + tested).abs() / fpp,
                holder_ratio: fpp / (g.powf(p - 1.0) * grad_f),
                chain_defect: if scale > 0.0 { (g.powf(p) - scale).max(0.0) / scale } else { 0.0 },
                residual: rep.residual,
                converged: rep.converged,
            }))
        })
        .collect();
    let mut probes: Vec<NeumannProbe> = Vec::with_capacity(corpus.len());
    for (i, r) in results.into_iter().enumerate() {
        if let Some(probe) = r? {
            probes.push(NeumannProbe { index: i, ..probe });
        }
    }
    let mut flags = Vec::new();
    if probes.len() < corpus.len() {
        flags.push(format!("{} functions with zero norm excluded", corpus.len() - probes.len()));
    }
    // the bound only uses converged solves
    let best = probes
        .iter()
        .filter(|p| p.converged)
        .fold(None::<&NeumannProbe>, |b, p| match b {
            Some(b) if b.hypoest_ratio >= p.hypoest_ratio => Some(b),
            _ => Some(p),
        })
        .ok_or(Error::EmptyCorpus)?;
    let d = best.hypoest_ratio;
    let unconverged = probes.iter().filter(|p| !p.converged).count();
    if unconverged > 0 {
        flags.push(format!("{unconverged} corpus solves did not converge"));
    }
    let extremizer = normalize_extremizer(q.grid, &corpus[best.index].values, v, p)?;
    Ok(NeumannPoincareReport {
        estimate: PoincareEstimate {
            p,
            constant: d.powf(p - 1.0),
            method: PoincareMethod::Neumann,
            extremizer: Some(extremizer),
            iterations: probes.len(),
            converged: unconverged == 0,
            flags,
        },
        hypoest_constant: d,
        probes,
    })
}
