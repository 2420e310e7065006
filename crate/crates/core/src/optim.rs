//! Smooth unconstrained minimization: truncated Newton-CG, L-BFGS and
//! preconditioned gradient descent, all with Armijo backtracking.
//!
//! The recorded value history is accumulated from the accepted decreases,
//! `J_{k+1} = J_k + ΔJ_k`, where `ΔJ_k` comes from
//! [`Objective::value_change`]. Objectives that compute differences without
//! cancellation get a history that is nonincreasing exactly.

use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, norm, pcg, LinOp, NullSpace};

pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes the gradient and returns the value.
    fn gradient(&self, x: &[f64], g: &mut [f64]) -> f64;

    /// `J(x + t d) - J(x)`.
    fn value_change(&self, x: &[f64], d: &[f64], t: f64) -> f64 {
        let mut y = x.to_vec();
        axpy(t, d, &mut y);
        self.value(&y) - self.value(x)
    }
}

pub trait SecondOrder: Objective {
    type Hessian: LinOp;
    fn hessian(&self, x: &[f64]) -> Self::Hessian;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NewtonCg,
    Lbfgs,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    /// Sufficient-decrease constant.
    pub c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch { c1: 1e-4, shrink: 0.5, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimReport {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
    pub message: String,
}

/// Armijo backtracking from step 1. Returns `(step, ΔJ)`.
fn backtrack(obj: &impl Objective, x: &[f64], d: &[f64], slope: f64, ls: &LineSearch) -> Option<(f64, f64)> {
    let mut t = 1.0;
    for _ in 0..ls.max_backtracks {
        let dj = obj.value_change(x, d, t);
        if dj.is_finite() && dj <= ls.c1 * t * slope && dj <= 0.0 {
            return Some((t, dj));
        }
        t *= ls.shrink;
    }
    None
}

/// Stop test handed the current iterate and gradient.
pub type StopFn<'a> = dyn FnMut(&[f64], &[f64]) -> bool + 'a;

/// A linear map applied in place, `out = A x`.
pub type LinearMap<'a> = &'a dyn Fn(&[f64], &mut [f64]);

/// Truncated Newton with Jacobi-PCG inner solves and Eisenstat-Walker
/// style forcing `η = min(0.1, sqrt(‖g‖/‖g₀‖))`.
pub fn newton_cg(
    obj: &impl SecondOrder,
    x0: Vec<f64>,
    null: &NullSpace,
    max_iter: usize,
    ls: &LineSearch,
    stop: &mut StopFn<'_>,
) -> OptimReport {
    let n = obj.dim();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = obj.gradient(&x, &mut g);
    null.project_out(&mut g);
    let g0 = norm(&g).max(f64::MIN_POSITIVE);
    let mut values = vec![f];
    let mut d = vec![0.0; n];
    for it in 0..max_iter {
        if stop(&x, &g) {
            return OptimReport { x, values, iterations: it, converged: true, method: Method::NewtonCg, message: "converged".into() };
        }
        let h = obj.hessian(&x);
        let eta = (norm(&g) / g0).sqrt().min(0.1);
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        d.iter_mut().for_each(|v| *v = 0.0);
        let cg = pcg(&h, &rhs, &mut d, null, eta, 4 * n + 100);
        let mut slope = dot(&g, &d);
        if cg.negative_curvature && cg.iterations == 0 || !(slope < 0.0) {
            // fall back to steepest descent scaled by the Hessian diagonal
            let diag = h.diagonal();
            for ((di, gi), hi) in d.iter_mut().zip(&g).zip(&diag) {
                *di = if *hi > 0.0 { -gi / hi } else { -gi };
            }
            null.project_out(&mut d);
            slope = dot(&g, &d);
        }
        let Some((t, dj)) = backtrack(obj, &x, &d, slope, ls) else {
            return OptimReport {
                x,
                values,
                iterations: it,
                converged: false,
                method: Method::NewtonCg,
                message: "line search failed".into(),
            };
        };
        axpy(t, &d, &mut x);
        null.project_out(&mut x);
        f += dj;
        values.push(f);
        obj.gradient(&x, &mut g);
        null.project_out(&mut g);
    }
    let converged = stop(&x, &g);
    OptimReport { x, values, iterations: max_iter, converged, method: Method::NewtonCg, message: "iteration limit".into() }
}

/// L-BFGS with an optional initial inverse-Hessian operator `h0`.
#[allow(clippy::too_many_arguments)]
pub fn lbfgs(
    obj: &impl Objective,
    x0: Vec<f64>,
    null: &NullSpace,
    memory: usize,
    max_iter: usize,
    ls: &LineSearch,
    h0: Option<LinearMap<'_>>,
    stop: &mut StopFn<'_>,
) -> OptimReport {
    let n = obj.dim();
    let mut x = x0;
    null.project_out(&mut x);
    let mut g = vec![0.0; n];
    let mut f = obj.gradient(&x, &mut g);
    null.project_out(&mut g);
    let mut values = vec![f];
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut d = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for it in 0..max_iter {
        if stop(&x, &g) {
            return OptimReport { x, values, iterations: it, converged: true, method: Method::Lbfgs, message: "converged".into() };
        }
        // two-loop recursion
        let mut q: Vec<f64> = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push(a);
        }
        let mut r = vec![0.0; n];
        match h0 {
            Some(apply) => apply(&q, &mut r),
            None => r.copy_from_slice(&q),
        }
        if let Some((s, y, _)) = hist.back() {
            let yhy = match h0 {
                // rescale the supplied operator to the latest curvature pair
                Some(apply) => {
                    let mut hy = vec![0.0; n];
                    apply(y, &mut hy);
                    dot(y, &hy)
                }
                None => dot(y, y),
            };
            if yhy > 0.0 {
                let gamma = dot(s, y) / yhy;
                r.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            axpy(a - b, s, &mut r);
        }
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = -ri;
        }
        null.project_out(&mut d);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            null.project_out(&mut d);
            slope = dot(&g, &d);
        }
        let Some((t, dj)) = backtrack(obj, &x, &d, slope, ls) else {
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            return OptimReport { x, values, iterations: it, converged: false, method: Method::Lbfgs, message: "line search failed".into() };
        };
        let s: Vec<f64> = d.iter().map(|v| t * v).collect();
        axpy(1.0, &s, &mut x);
        null.project_out(&mut x);
        f += dj;
        values.push(f);
        obj.gradient(&x, &mut g_new);
        null.project_out(&mut g_new);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut g, &mut g_new);
    }
    let converged = stop(&x, &g);
    OptimReport { x, values, iterations: max_iter, converged, method: Method::Lbfgs, message: "iteration limit".into() }
}

/// Gradient descent preconditioned by `precond` (identity when `None`).
pub fn gradient_descent(
    obj: &impl Objective,
    x0: Vec<f64>,
    null: &NullSpace,
    max_iter: usize,
    ls: &LineSearch,
    precond: Option<LinearMap<'_>>,
    stop: &mut StopFn<'_>,
) -> OptimReport {
    let n = obj.dim();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = obj.gradient(&x, &mut g);
    null.project_out(&mut g);
    let mut values = vec![f];
    let mut d = vec![0.0; n];
    let mut scale = 1.0;
    for it in 0..max_iter {
        if stop(&x, &g) {
            return OptimReport { x, values, iterations: it, converged: true, method: Method::GradientDescent, message: "converged".into() };
        }
        match precond {
            Some(apply) => apply(&g, &mut d),
            None => d.copy_from_slice(&g),
        }
        d.iter_mut().for_each(|v| *v *= -scale);
        null.project_out(&mut d);
        let slope = dot(&g, &d);
        let Some((t, dj)) = backtrack(obj, &x, &d, slope, ls) else {
            return OptimReport { x, values, iterations: it, converged: false, method: Method::GradientDescent, message: "line search failed".into() };
        };
        // carry the accepted step length over, allowing it to grow again
        scale *= if t == 1.0 { 2.0 } else { t };
        axpy(t, &d, &mut x);
        null.project_out(&mut x);
        f += dj;
        values.push(f);
        obj.gradient(&x, &mut g);
        null.project_out(&mut g);
    }
    let converged = stop(&x, &g);
    OptimReport { x, values, iterations: max_iter, converged, method: Method::GradientDescent, message: "iteration limit".into() }
}
