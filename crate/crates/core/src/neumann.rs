//! Discrete weak solutions of the degenerate p-Laplacian Neumann problem
//!
//! ```text
//! -div(|√Q ∇u|^{p-2} Q ∇u) = |f|^{p-2} f v   in E,   nᵗ Q ∇u = 0 on ∂E
//! ```
//!
//! obtained by minimizing the convex energy
//!
//! ```text
//! J(u) = (1/p) ∫ (|√Q ∇u|² + ε²)^{p/2} + ∫ |f|^{p-2} f u v
//! ```
//!
//! over grid functions with zero `v`-weighted mean. Its stationarity
//! condition tested against mean-zero nodal basis functions is the discrete
//! weak formulation, and [`residual`] measures exactly that.
//!
//! Internally the linear term uses the source shifted by its `v`-weighted
//! mass, `s̃ = s - S w / W`. This makes `J` invariant under adding
//! constants, so its gradient already lives in the quotient and the
//! minimizer only needs projecting back to mean zero at the end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient, lp_norm_cells, CellField, Grid, GridFunction, VectorField};
use crate::linalg::{dot, max_abs, pcg, LinOp, NullSpace};
use crate::matrix_weight::{lq_norm, MatrixWeightField, Sym2};
use crate::optim::{gradient_descent, lbfgs, newton_cg, LineSearch, Method, Objective, OptimReport, SecondOrder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeumannProblem {
    pub p: f64,
    pub q: MatrixWeightField,
    /// `v` sampled at cell centers.
    pub v: CellField,
    pub f: GridFunction,
}

impl NeumannProblem {
    pub fn new(p: f64, q: MatrixWeightField, v: CellField, f: GridFunction) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 1 < p < inf, got {p}")));
        }
        q.grid.check_same(&v.grid)?;
        q.grid.check_same(&f.grid)?;
        if v.values.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("v must be finite and nonnegative".into()));
        }
        if !v.values.iter().any(|x| *x > 0.0) {
            return Err(Error::Degenerate("v vanishes on every cell".into()));
        }
        if f.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("f must be finite".into()));
        }
        Ok(NeumannProblem { p, q, v, f })
    }

    pub fn grid(&self) -> Grid {
        self.q.grid
    }

    pub fn with_data(&self, f: GridFunction) -> Result<Self> {
        NeumannProblem::new(self.p, self.q.clone(), self.v.clone(), f)
    }

    /// `‖f‖_{L^p(v)}`.
    pub fn data_norm(&self) -> f64 {
        let avg = self.f.cell_average();
        lp_norm_cells(&avg.values, &self.v.values, self.p, self.grid().cell_area())
    }

    /// Per-cell source `|f̄|^{p-2} f̄ v area`.
    fn source(&self) -> Vec<f64> {
        let area = self.grid().cell_area();
        let avg = self.f.cell_average();
        avg.values.iter().zip(&self.v.values).map(|(f, v)| signed_pow(*f, self.p - 1.0) * v * area).collect()
    }

    /// Cell masses `w_c = v_c · area`.
    fn masses(&self) -> Vec<f64> {
        let area = self.grid().cell_area();
        self.v.values.iter().map(|v| v * area).collect()
    }

    /// `span{1, checkerboard}`: the kernel of gradients and cell averages.
    pub fn null_space(&self) -> NullSpace {
        let g = self.grid();
        NullSpace::new(&[vec![1.0; g.node_count()], g.checkerboard()])
    }
}

/// `|x|^e sign(x)`.
#[inline]
pub(crate) fn signed_pow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.abs().powf(e).copysign(x)
    }
}

/// Pair `(u, g)` with `g` in the role of the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevPair {
    pub u: GridFunction,
    pub g: VectorField,
}

impl SobolevPair {
    pub fn from_function(u: GridFunction) -> Self {
        let g = gradient(&u);
        SobolevPair { u, g }
    }

    pub fn new(u: GridFunction, g: VectorField) -> Result<Self> {
        u.grid.check_same(&g.grid)?;
        Ok(SobolevPair { u, g })
    }

    pub fn add_scaled(&self, t: f64, other: &SobolevPair) -> SobolevPair {
        SobolevPair {
            u: GridFunction {
                grid: self.u.grid,
                values: self.u.values.iter().zip(&other.u.values).map(|(a, b)| a + t * b).collect(),
            },
            g: self.g.add_scaled(t, &other.g),
        }
    }

    pub fn scaled(&self, t: f64) -> SobolevPair {
        SobolevPair { u: self.u.scaled(t), g: self.g.scaled(t) }
    }
}

/// `‖u‖_{L^p(v)} + ‖g‖_{L^p_Q}`.
pub fn sobolev_norm(pair: &SobolevPair, q: &MatrixWeightField, v: &CellField, p: f64) -> Result<f64> {
    Ok(crate::grid::lp_norm(&pair.u, v, p)? + lq_norm(&pair.g, q, p)?)
}

/// Flux density `(t + ε²)^{(p-2)/2}` with the `0 · ∞` case resolved to 0.
#[inline]
pub(crate) fn flux_density(t: f64, eps2: f64, p: f64) -> f64 {
    let s = t + eps2;
    if s > 0.0 {
        if p == 2.0 {
            1.0
        } else {
            s.powf(0.5 * (p - 2.0))
        }
    } else if p == 2.0 {
        1.0
    } else {
        0.0
    }
}

/// `⟨T(ū), w̄⟩ = ∫ (|√Q g|² + ε²)^{(p-2)/2} hᵗ Q g`.
pub fn apply_t(ubar: &SobolevPair, wbar: &SobolevPair, q: &MatrixWeightField, p: f64, eps: f64) -> Result<f64> {
    ubar.g.grid.check_same(&wbar.g.grid)?;
    ubar.g.grid.check_same(&q.grid)?;
    let eps2 = eps * eps;
    let mut s = 0.0;
    for (c, m) in q.cells.iter().enumerate() {
        let g = [ubar.g.x[c], ubar.g.y[c]];
        let qg = m.apply(g);
        let t = g[0] * qg[0] + g[1] * qg[1];
        s += flux_density(t, eps2, p) * (wbar.g.x[c] * qg[0] + wbar.g.y[c] * qg[1]);
    }
    Ok(s * q.grid.cell_area())
}

/// `⟨Γ, w̄⟩ = -∫ |f|^{p-2} f w v`.
pub fn apply_gamma(f: &GridFunction, v: &CellField, p: f64, wbar: &SobolevPair) -> Result<f64> {
    f.grid.check_same(&v.grid)?;
    f.grid.check_same(&wbar.u.grid)?;
    let fa = f.cell_average();
    let wa = wbar.u.cell_average();
    let s: f64 =
        fa.values.iter().zip(&wa.values).zip(&v.values).map(|((f, w), v)| signed_pow(*f, p - 1.0) * w * v).sum();
    Ok(-s * f.grid.cell_area())
}

/// Symmetric operator `x ↦ Gᵗ D G x` with one 2×2 block `D_c` per cell.
#[derive(Debug, Clone)]
pub struct CellOperator {
    pub grid: Grid,
    pub blocks: Vec<Sym2>,
}

impl CellOperator {
    /// `K = Gᵗ (Q · area) G`, the `p = 2` stiffness matrix.
    pub fn stiffness(q: &MatrixWeightField) -> Self {
        let area = q.grid.cell_area();
        CellOperator { grid: q.grid, blocks: q.cells.iter().map(|m| m.scaled(area)).collect() }
    }

    /// `xᵗ A x`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let n = self.grid.cell_count();
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        self.grid.gradient_raw(x, &mut gx, &mut gy);
        self.blocks.iter().enumerate().map(|(c, d)| d.quad([gx[c], gy[c]])).sum()
    }
}

impl LinOp for CellOperator {
    fn dim(&self) -> usize {
        self.grid.node_count()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.grid.cell_count();
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        self.grid.gradient_raw(x, &mut gx, &mut gy);
        for (c, d) in self.blocks.iter().enumerate() {
            let [a, b] = d.apply([gx[c], gy[c]]);
            gx[c] = a;
            gy[c] = b;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        self.grid.gradient_adjoint_add(&gx, &gy, out);
    }

    fn diagonal(&self) -> Vec<f64> {
        let g = &self.grid;
        let (sx, sy) = (0.5 / g.hx(), 0.5 / g.hy());
        let mut out = vec![0.0; g.node_count()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let d = self.blocks[g.cell_index(i, j)];
                // gradient of each corner's hat in this cell
                out[g.node_index(i, j)] += d.quad([-sx, -sy]);
                out[g.node_index(i + 1, j)] += d.quad([sx, -sy]);
                out[g.node_index(i, j + 1)] += d.quad([-sx, sy]);
                out[g.node_index(i + 1, j + 1)] += d.quad([sx, sy]);
            }
        }
        out
    }
}

/// The regularized energy with the mass-shifted source.
struct Energy<'a> {
    grid: Grid,
    q: &'a [Sym2],
    p: f64,
    eps2: f64,
    area: f64,
    /// Shifted per-cell source `s̃`.
    source: Vec<f64>,
}

impl<'a> Energy<'a> {
    fn new(problem: &'a NeumannProblem, eps: f64) -> Self {
        let s = problem.source();
        let w = problem.masses();
        let total_s: f64 = s.iter().sum();
        let total_w: f64 = w.iter().sum();
        let source = s.iter().zip(&w).map(|(s, w)| s - total_s * w / total_w).collect();
        Energy {
            grid: problem.grid(),
            q: &problem.q.cells,
            p: problem.p,
            eps2: eps * eps,
            area: problem.grid().cell_area(),
            source,
        }
    }

    fn grads(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.cell_count();
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        self.grid.gradient_raw(x, &mut gx, &mut gy);
        (gx, gy)
    }

    fn linear(&self, x: &[f64]) -> f64 {
        let mut avg = vec![0.0; self.grid.cell_count()];
        self.grid.cell_average_raw(x, &mut avg);
        dot(&avg, &self.source)
    }

    /// Residual numerators and the per-node flux part, from `(gx, gy)`.
    fn gradient_from(&self, gx: &[f64], gy: &[f64], out: &mut [f64]) {
        let n = self.grid.cell_count();
        let (mut fx, mut fy) = (vec![0.0; n], vec![0.0; n]);
        for c in 0..n {
            let qg = self.q[c].apply([gx[c], gy[c]]);
            let t = gx[c] * qg[0] + gy[c] * qg[1];
            let r = flux_density(t, self.eps2, self.p) * self.area;
            fx[c] = r * qg[0];
            fy[c] = r * qg[1];
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        self.grid.gradient_adjoint_add(&fx, &fy, out);
        self.grid.cell_average_adjoint_add(&self.source, out);
    }
}

impl Objective for Energy<'_> {
    fn dim(&self) -> usize {
        self.grid.node_count()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (gx, gy) = self.grads(x);
        let mut s = 0.0;
        for c in 0..gx.len() {
            let t = self.q[c].quad([gx[c], gy[c]]).max(0.0);
            s += (t + self.eps2).powf(0.5 * self.p);
        }
        s * self.area / self.p + self.linear(x)
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let (gx, gy) = self.grads(x);
        self.gradient_from(&gx, &gy, g);
        self.value(x)
    }

    /// Per-cell differences through `expm1`/`ln_1p`, so small steps near
    /// convergence do not drown in cancellation.
    fn value_change(&self, x: &[f64], d: &[f64], t: f64) -> f64 {
        let (gx, gy) = self.grads(x);
        let (dx, dy) = self.grads(d);
        let half_p = 0.5 * self.p;
        let mut s = 0.0;
        for c in 0..gx.len() {
            let m = self.q[c];
            let g = [gx[c], gy[c]];
            let h = [dx[c], dy[c]];
            let base = m.quad(g).max(0.0) + self.eps2;
            let qg = m.apply(g);
            let inc = 2.0 * t * (h[0] * qg[0] + h[1] * qg[1]) + t * t * m.quad(h);
            s += if base > 0.0 {
                let rel = (inc / base).max(-1.0);
                base.powf(half_p) * (half_p * rel.ln_1p()).exp_m1()
            } else {
                (inc.max(0.0)).powf(half_p)
            };
        }
        s * self.area / self.p + t * self.linear(d)
    }
}

impl SecondOrder for Energy<'_> {
    type Hessian = CellOperator;

    fn hessian(&self, x: &[f64]) -> CellOperator {
        let (gx, gy) = self.grads(x);
        let blocks = (0..gx.len())
            .map(|c| {
                let m = self.q[c];
                let qg = m.apply([gx[c], gy[c]]);
                let base = gx[c] * qg[0] + gy[c] * qg[1] + self.eps2;
                let rho = flux_density(base - self.eps2, self.eps2, self.p);
                let kappa = if base > 0.0 && self.p != 2.0 { (self.p - 2.0) * base.powf(0.5 * self.p - 2.0) } else { 0.0 };
                Sym2 {
                    xx: (rho * m.xx + kappa * qg[0] * qg[0]) * self.area,
                    xy: (rho * m.xy + kappa * qg[0] * qg[1]) * self.area,
                    yy: (rho * m.yy + kappa * qg[1] * qg[1]) * self.area,
                }
            })
            .collect();
        CellOperator { grid: self.grid, blocks }
    }
}

/// Plain energy `J(u)` with the unshifted source.
pub fn energy(u: &GridFunction, problem: &NeumannProblem, eps: f64) -> Result<f64> {
    u.grid.check_same(&problem.grid())?;
    let e = Energy::new(problem, eps);
    let grid = problem.grid();
    let mut avg = vec![0.0; grid.cell_count()];
    grid.cell_average_raw(&u.values, &mut avg);
    let shifted = e.linear(&u.values);
    Ok(e.value(&u.values) - shifted + dot(&avg, &problem.source()))
}

/// Nodal gradient of the plain energy: `⟨T(u,∇u), e_k⟩ - ⟨Γ, e_k⟩`.
pub fn energy_gradient(u: &GridFunction, problem: &NeumannProblem, eps: f64) -> Result<Vec<f64>> {
    u.grid.check_same(&problem.grid())?;
    let mut e = Energy::new(problem, eps);
    e.source = problem.source();
    let mut g = vec![0.0; u.values.len()];
    e.gradient(&u.values, &mut g);
    Ok(g)
}

/// `‖φ̄_k‖_{H^{1,p}_Q}` for every mean-zero-projected nodal hat `φ̄_k`.
fn basis_norms(problem: &NeumannProblem) -> Vec<f64> {
    let grid = problem.grid();
    let p = problem.p;
    let w = problem.masses();
    let total: f64 = w.iter().sum();
    let mut mean_num = vec![0.0; grid.node_count()];
    grid.cell_average_adjoint_add(&w, &mut mean_num);
    let (sx, sy) = (0.5 / grid.hx(), 0.5 / grid.hy());
    let area = grid.cell_area();
    let mut lp = vec![0.0; grid.node_count()];
    let mut lq = vec![0.0; grid.node_count()];
    for k in 0..grid.node_count() {
        let m = mean_num[k] / total;
        lp[k] = m.powf(p) * total;
    }
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.cell_index(i, j);
            let qc = problem.q.cells[c];
            for (k, sg) in [
                (grid.node_index(i, j), [-sx, -sy]),
                (grid.node_index(i + 1, j), [sx, -sy]),
                (grid.node_index(i, j + 1), [-sx, sy]),
                (grid.node_index(i + 1, j + 1), [sx, sy]),
            ] {
                let m = mean_num[k] / total;
                lp[k] += ((0.25 - m).abs().powf(p) - m.powf(p)) * w[c];
                lq[k] += qc.quad(sg).max(0.0).powf(0.5 * p) * area;
            }
        }
    }
    lp.iter().zip(&lq).map(|(a, b)| a.max(0.0).powf(1.0 / p) + b.powf(1.0 / p)).collect()
}

fn residual_from(numerators: &[f64], norms: &[f64]) -> f64 {
    numerators.iter().zip(norms).map(|(r, n)| if *n > 0.0 { r.abs() / n } else { 0.0 }).fold(0.0, f64::max)
}

/// `max_k |⟨T(ū), φ̄_k⟩ - ⟨Γ, φ̄_k⟩| / ‖φ̄_k‖_{H^{1,p}_Q}` over nodal hats
/// projected to mean zero.
pub fn residual(pair: &SobolevPair, problem: &NeumannProblem, eps: f64) -> Result<f64> {
    pair.u.grid.check_same(&problem.grid())?;
    pair.g.grid.check_same(&problem.grid())?;
    let e = Energy::new(problem, eps);
    let mut num = vec![0.0; problem.grid().node_count()];
    e.gradient_from(&pair.g.x, &pair.g.y, &mut num);
    Ok(residual_from(&num, &basis_norms(problem)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Regularization; `None` picks `0` for `p ≥ 2` and a data-scaled
    /// `10⁻⁶` for `p < 2`.
    pub epsilon: Option<f64>,
    /// Target for [`residual`].
    pub tolerance: f64,
    pub max_iterations: usize,
    pub line_search: LineSearch,
    pub method: Method,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: None,
            tolerance: 1e-11,
            max_iterations: 200,
            line_search: LineSearch::default(),
            method: Method::NewtonCg,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// Resolves the regularization for `problem`.
    pub fn epsilon_for(&self, problem: &NeumannProblem) -> Result<f64> {
        match self.epsilon {
            Some(e) if e < 0.0 || !e.is_finite() => Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {e}"))),
            Some(e) if e == 0.0 && problem.p < 2.0 => {
                Err(Error::InvalidParameter("p < 2 needs a positive regularization epsilon".into()))
            }
            Some(e) => Ok(e),
            None if problem.p >= 2.0 => Ok(0.0),
            None => {
                // gradient scale of the solution: (|f| diam)^{1/(p-1)} √γ
                let grid = problem.grid();
                let diam = grid.domain.a.hypot(grid.domain.b);
                let fmax = max_abs(&problem.f.values);
                let gamma = problem.q.operator_norms().into_iter().fold(0.0, f64::max);
                let scale = (fmax * diam).powf(1.0 / (problem.p - 1.0)) * gamma.sqrt();
                Ok(1e-6 * if scale > 0.0 { scale } else { 1.0 })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveNorms {
    pub u_lp: f64,
    pub g_lq: f64,
    pub f_lp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SolveRecord", try_from = "SolveRecord")]
pub struct SolveReport {
    pub solution: SobolevPair,
    /// Energy values, nonincreasing.
    pub energy_history: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
    pub epsilon: f64,
    pub norms: SolveNorms,
    /// `‖u‖_{L^p(v)} / ‖f‖_{L^p(v)}`.
    pub ratio_hypoest: f64,
    /// `‖(u,g)‖_{H^{1,p}_Q} / ‖f‖_{L^p(v)}`.
    pub ratio_a1: f64,
    pub flags: Vec<String>,
}

/// Flat serialized layout of a [`SolveReport`].
#[derive(Serialize, Deserialize)]
struct SolveRecord {
    grid: Grid,
    u: Vec<f64>,
    g: [Vec<f64>; 2],
    residual: f64,
    iterations: usize,
    converged: bool,
    method: Method,
    epsilon: f64,
    energy_trace: Vec<f64>,
    norms: SolveNorms,
    ratio_hypoest: f64,
    ratio_a1: f64,
    flags: Vec<String>,
}

impl From<SolveReport> for SolveRecord {
    fn from(r: SolveReport) -> Self {
        SolveRecord {
            grid: r.solution.u.grid,
            u: r.solution.u.values,
            g: [r.solution.g.x, r.solution.g.y],
            residual: r.residual,
            iterations: r.iterations,
            converged: r.converged,
            method: r.method,
            epsilon: r.epsilon,
            energy_trace: r.energy_history,
            norms: r.norms,
            ratio_hypoest: r.ratio_hypoest,
            ratio_a1: r.ratio_a1,
            flags: r.flags,
        }
    }
}

impl TryFrom<SolveRecord> for SolveReport {
    type Error = Error;

    fn try_from(r: SolveRecord) -> Result<Self> {
        let [gx, gy] = r.g;
        if gx.len() != r.grid.cell_count() || gy.len() != r.grid.cell_count() {
            return Err(Error::GridMismatch("gradient arrays do not match the grid".into()));
        }
        let u = GridFunction::new(r.grid, r.u)?;
        Ok(SolveReport {
            solution: SobolevPair { u, g: VectorField { grid: r.grid, x: gx, y: gy } },
            energy_history: r.energy_trace,
            residual: r.residual,
            iterations: r.iterations,
            converged: r.converged,
            method: r.method,
            epsilon: r.epsilon,
            norms: r.norms,
            ratio_hypoest: r.ratio_hypoest,
            ratio_a1: r.ratio_a1,
            flags: r.flags,
        })
    }
}

/// Minimizer of the `p = 2` energy with stiffness `K`: `K x = -Aᵗ s̃`.
fn linear_solve(k: &CellOperator, source: &[f64], null: &NullSpace, rtol: f64) -> Vec<f64> {
    let grid = k.grid;
    let mut rhs = vec![0.0; grid.node_count()];
    grid.cell_average_adjoint_add(source, &mut rhs);
    rhs.iter_mut().for_each(|v| *v = -*v);
    null.project_out(&mut rhs);
    let mut x = vec![0.0; grid.node_count()];
    pcg(k, &rhs, &mut x, null, rtol, 20 * grid.node_count() + 100);
    x
}

/// Solves the Neumann problem by energy minimization.
pub fn solve(problem: &NeumannProblem, config: &SolverConfig) -> Result<SolveReport> {
    let eps = config.epsilon_for(problem)?;
    let grid = problem.grid();
    let p = problem.p;
    let null = problem.null_space();
    let obj = Energy::new(problem, eps);
    let norms_h = basis_norms(problem);
    let mut flags = Vec::new();
    let degenerate = problem.q.degenerate_cells();
    if !degenerate.is_empty() {
        flags.push(format!("degenerate: λ₂ = 0 on {} cells, u may not be unique", degenerate.len()));
    }
    if problem.q.is_zero() {
        return Err(Error::Degenerate("Q vanishes identically".into()));
    }

    // warm start: p = 2 minimizer rescaled along its ray
    let stiffness = CellOperator::stiffness(&problem.q);
    let mut x0 = if problem.f.values.iter().all(|v| *v == 0.0) {
        vec![0.0; grid.node_count()]
    } else {
        linear_solve(&stiffness, &obj.source, &null, 1e-12)
    };
    if p != 2.0 {
        let (gx, gy) = obj.grads(&x0);
        let a: f64 = (0..gx.len()).map(|c| problem.q.cells[c].quad([gx[c], gy[c]]).max(0.0).powf(0.5 * p)).sum::<f64>()
            * obj.area;
        let b = obj.linear(&x0);
        if a > 0.0 && b < 0.0 {
            let lambda = (-b / a).powf(1.0 / (p - 1.0));
            x0.iter_mut().for_each(|v| *v *= lambda);
        }
    }

    let tol = config.tolerance;
    let mut stop = |_: &[f64], g: &[f64]| residual_from(g, &norms_h) <= tol;
    let run = |method: Method, x0: Vec<f64>, stop: &mut dyn FnMut(&[f64], &[f64]) -> bool| -> OptimReport {
        match method {
            Method::NewtonCg => newton_cg(&obj, x0, &null, config.max_iterations, &config.line_search, stop),
            Method::Lbfgs => {
                let diag = stiffness.diagonal();
                let precond = move |r: &[f64], out: &mut [f64]| {
                    for ((o, ri), d) in out.iter_mut().zip(r).zip(&diag) {
                        *o = if *d > 0.0 { ri / d } else { *ri };
                    }
                };
                lbfgs(&obj, x0, &null, 10, 20 * config.max_iterations, &config.line_search, Some(&precond), stop)
            }
            Method::GradientDescent => {
                let diag = stiffness.diagonal();
                let precond = move |r: &[f64], out: &mut [f64]| {
                    for ((o, ri), d) in out.iter_mut().zip(r).zip(&diag) {
                        *o = if *d > 0.0 { ri / d } else { *ri };
                    }
                };
                gradient_descent(&obj, x0, &null, 100 * config.max_iterations, &config.line_search, Some(&precond), stop)
            }
        }
    };
    let order: &[Method] = match config.method {
        Method::NewtonCg => &[Method::NewtonCg, Method::Lbfgs, Method::GradientDescent],
        Method::Lbfgs => &[Method::Lbfgs, Method::GradientDescent],
        Method::GradientDescent => &[Method::GradientDescent],
    };
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut x = x0;
    let mut last = None;
    for (attempt, method) in order.iter().enumerate() {
        let rep = run(*method, x, &mut stop);
        if attempt > 0 {
            flags.push(format!("fallback to {method:?}"));
        }
        iterations += rep.iterations;
        // continue the history from the last accepted value
        let offset = history.last().map(|v| v - rep.values[0]).unwrap_or(0.0);
        let skip = usize::from(!history.is_empty());
        history.extend(rep.values.iter().skip(skip).map(|v| v + offset));
        x = rep.x;
        let done = rep.converged;
        last = Some(rep.method);
        if done {
            break;
        }
    }

    // back to the v-weighted mean-zero representative
    let mut u = GridFunction { grid, values: x };
    let w = problem.masses();
    let mut avg = vec![0.0; grid.cell_count()];
    grid.cell_average_raw(&u.values, &mut avg);
    let mean = dot(&avg, &w) / w.iter().sum::<f64>();
    u.values.iter_mut().for_each(|v| *v -= mean);
    let pair = SobolevPair::from_function(u);
    let res = residual(&pair, problem, eps)?;
    let converged = res <= tol;
    if !converged {
        flags.push(format!("not converged: residual {res:.3e} > {tol:.1e}"));
    }
    let u_lp = crate::grid::lp_norm(&pair.u, &problem.v, p)?;
    let g_lq = lq_norm(&pair.g, &problem.q, p)?;
    let f_lp = problem.data_norm();
    let (ratio_hypoest, ratio_a1) = if f_lp > 0.0 { (u_lp / f_lp, (u_lp + g_lq) / f_lp) } else { (0.0, 0.0) };
    Ok(SolveReport {
        solution: pair,
        energy_history: history,
        residual: res,
        iterations,
        converged,
        method: last.unwrap_or(config.method),
        epsilon: eps,
        norms: SolveNorms { u_lp, g_lq, f_lp },
        ratio_hypoest,
        ratio_a1,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    /// `min ⟨T(ū) - T(w̄), ū - w̄⟩`.
    pub min_inner: f64,
    /// The same minimum divided by `(‖g‖ + ‖h‖)^p`.
    pub min_scaled: f64,
    pub samples: usize,
}

/// Monotonicity of the flux form over the supplied pairs.
pub fn check_monotone(q: &MatrixWeightField, p: f64, eps: f64, pairs: &[(SobolevPair, SobolevPair)]) -> Result<MonotoneReport> {
    let mut rep = MonotoneReport { min_inner: f64::INFINITY, min_scaled: f64::INFINITY, samples: 0 };
    for (a, b) in pairs {
        let diff = a.add_scaled(-1.0, b);
        let inner = apply_t(a, &diff, q, p, eps)? - apply_t(b, &diff, q, p, eps)?;
        let scale = (lq_norm(&a.g, q, p)? + lq_norm(&b.g, q, p)?).powf(p);
        rep.min_inner = rep.min_inner.min(inner);
        if scale > 0.0 {
            rep.min_scaled = rep.min_scaled.min(inner / scale);
        }
        rep.samples += 1;
    }
    Ok(rep)
}

/// Random pair with unit-scale nodal values and an independent random `g`.
pub fn random_pair(grid: Grid, rng: &mut impl Rng, scale: f64) -> SobolevPair {
    let u = GridFunction { grid, values: (0..grid.node_count()).map(|_| scale * rng.random_range(-1.0..1.0)).collect() };
    let n = grid.cell_count();
    let g = VectorField {
        grid,
        x: (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
        y: (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
    };
    SobolevPair { u, g }
}

/// Seeded monotonicity sweep over `count` random pairs with scales spread
/// over four decades.
pub fn monotone_sweep(q: &MatrixWeightField, p: f64, eps: f64, count: usize, seed: u64) -> Result<MonotoneReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<_> = (0..count)
        .map(|_| {
            let sa = 10f64.powf(rng.random_range(-2.0..2.0));
            let sb = 10f64.powf(rng.random_range(-2.0..2.0));
            (random_pair(q.grid, &mut rng, sa), random_pair(q.grid, &mut rng, sb))
        })
        .collect();
    check_monotone(q, p, eps, &pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemicontinuitySample {
    pub dz: f64,
    pub modulus: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemicontinuityReport {
    pub p: f64,
    pub samples: Vec<HemicontinuitySample>,
    /// Largest `modulus / bound`; at most 1 when the bound (with its factor
    /// 2 of slack) holds.
    pub max_bound_ratio: f64,
    /// Least-squares slope of `log modulus` against `log |z - y|`.
    pub fitted_exponent: f64,
    /// `max |modulus / |z-y| - ∫hᵗQh| / ∫hᵗQh`, meaningful at `p = 2`.
    pub linearity_defect: f64,
}

/// Samples `|⟨T(ū + z w̄) - T(ū + y w̄), w̄⟩|` at `z = y + dz`.
pub fn check_hemicontinuous(
    ubar: &SobolevPair,
    wbar: &SobolevPair,
    q: &MatrixWeightField,
    p: f64,
    y: f64,
    dzs: &[f64],
) -> Result<HemicontinuityReport> {
    const SAFETY: f64 = 2.0;
    let area = q.grid.cell_area();
    let base = ubar.add_scaled(y, wbar);
    let t_base = apply_t(&base, wbar, q, p, 0.0)?;
    let h_norm_p = lq_norm(&wbar.g, q, p)?.powf(p);
    let hqh: f64 = (0..q.grid.cell_count()).map(|c| q.cells[c].quad([wbar.g.x[c], wbar.g.y[c]])).sum::<f64>() * area;
    let mut samples = Vec::with_capacity(dzs.len());
    for &dz in dzs {
        let moved = ubar.add_scaled(y + dz, wbar);
        let modulus = (apply_t(&moved, wbar, q, p, 0.0)? - t_base).abs();
        let bound = if p >= 2.0 {
            // (p-1)|z-y| ∫ |√Q h|² (|r|^{p-2} + |s|^{p-2})
            let mut s = 0.0;
            for c in 0..q.grid.cell_count() {
                let m = q.cells[c];
                let r = m.quad([base.g.x[c], base.g.y[c]]).max(0.0).sqrt();
                let z = m.quad([moved.g.x[c], moved.g.y[c]]).max(0.0).sqrt();
                let h2 = m.quad([wbar.g.x[c], wbar.g.y[c]]);
                s += h2 * (r.powf(p - 2.0) + z.powf(p - 2.0));
            }
            (p - 1.0) * dz.abs() * s * area
        } else {
            2f64.powf(2.0 - p) * dz.abs().powf(p - 1.0) * h_norm_p
        };
        samples.push(HemicontinuitySample { dz, modulus, bound: SAFETY * bound });
    }
    let max_bound_ratio = samples
        .iter()
        .map(|s| if s.bound > 0.0 { s.modulus / s.bound } else if s.modulus > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.modulus > 0.0 && s.dz != 0.0).map(|s| (s.dz.abs().ln(), s.modulus.ln())).collect();
    let fitted_exponent = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    let linearity_defect = if hqh > 0.0 {
        samples
            .iter()
            .filter(|s| s.dz != 0.0)
            .map(|s| (s.modulus / s.dz.abs() - hqh).abs() / hqh)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(HemicontinuityReport { p, samples, max_bound_ratio, fitted_exponent, linearity_defect })
}

/// `λ = max{1, (K + 1)^{1/(p-1)} ‖f‖_{L^p(v)}}` where `K` is the constant in
/// `∫|f - f_E|^p v ≤ K ∫|√Q∇f|^p`.
pub fn coercivity_threshold(f_norm: f64, p: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) || !(p > 1.0) || !(f_norm >= 0.0) {
        return Err(Error::InvalidParameter(format!("need K > 0, p > 1, ‖f‖ >= 0; got K={k}, p={p}, ‖f‖={f_norm}")));
    }
    Ok(1f64.max((k + 1.0).powf(1.0 / (p - 1.0)) * f_norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub lambda: f64,
    pub samples: usize,
    /// `min (⟨T(ū),ū⟩ - ⟨Γ,ū⟩)` over the samples.
    pub min_margin: f64,
    pub all_hold: bool,
}

/// Checks `⟨T(ū),ū⟩ ≥ ⟨Γ,ū⟩` on seeded mean-zero pairs `(u, ∇u)` scaled
/// beyond the threshold. Every tenth sample is the adversarial `u ∝ -f`.
pub fn check_coercivity(problem: &NeumannProblem, k: f64, count: usize, seed: u64) -> Result<CoercivityReport> {
    let p = problem.p;
    let lambda = coercivity_threshold(problem.data_norm(), p, k)?;
    let grid = problem.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_margin = f64::INFINITY;
    for i in 0..count {
        let raw = if i % 10 == 0 && problem.f.values.iter().any(|v| *v != 0.0) {
            problem.f.scaled(-1.0)
        } else {
            crate::corpus::smooth_function(grid, &mut rng, grid.nx.min(grid.ny) / 4, 3.0)
        };
        let u = crate::grid::project_mean_zero(&raw, &problem.v)?;
        let pair = SobolevPair::from_function(u);
        let norm = sobolev_norm(&pair, &problem.q, &problem.v, p)?;
        if norm == 0.0 {
            continue;
        }
        let target = lambda * (1.0 + 1e-9 + 3.0 * rng.random::<f64>());
        let pair = pair.scaled(target / norm);
        let margin = apply_t(&pair, &pair, &problem.q, p, 0.0)? - apply_gamma(&problem.f, &problem.v, p, &pair)?;
        min_margin = min_margin.min(margin);
    }
    Ok(CoercivityReport { lambda, samples: count, min_margin, all_hold: min_margin >= 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityCheck {
    /// `‖u‖ / ‖f‖`.
    pub hypoest_ratio: f64,
    /// `‖(u,g)‖_H / ‖f‖`.
    pub a1_ratio: f64,
    /// `max(0, ‖g‖^p - ‖f‖^{p-1} ‖u‖)`.
    pub chain_defect: f64,
    /// `‖f‖^{p-1} ‖u‖`, the scale of the defect.
    pub scale: f64,
}

/// The chain `‖g‖^p ≤ ‖f‖^{p-1}‖u‖` and the two regularity ratios.
pub fn verify_regularity(report: &SolveReport, problem: &NeumannProblem) -> Result<RegularityCheck> {
    let p = problem.p;
    let u = crate::grid::lp_norm(&report.solution.u, &problem.v, p)?;
    let g = lq_norm(&report.solution.g, &problem.q, p)?;
    let f = problem.data_norm();
    let scale = f.powf(p - 1.0) * u;
    let (h, a1) = if f > 0.0 { (u / f, (u + g) / f) } else { (0.0, 0.0) };
    Ok(RegularityCheck { hypoest_ratio: h, a1_ratio: a1, chain_defect: (g.powf(p) - scale).max(0.0), scale })
}
