//! Small dense-vector helpers and a projected preconditioned CG.

/// Symmetric linear operator on `R^n`.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn axpy(t: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += t * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Orthonormal basis of a subspace that iterates must stay clear of.
#[derive(Debug, Clone, Default)]
pub struct NullSpace {
    basis: Vec<Vec<f64>>,
}

impl NullSpace {
    /// Gram-Schmidt over `vectors`, dropping numerically dependent ones.
    pub fn new(vectors: &[Vec<f64>]) -> Self {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for v in vectors {
            let mut w = v.clone();
            let scale = norm(v);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&w, b);
                    axpy(-c, b, &mut w);
                }
            }
            let n = norm(&w);
            if n > 1e-10 * scale {
                w.iter_mut().for_each(|x| *x /= n);
                basis.push(w);
            }
        }
        NullSpace { basis }
    }

    pub fn project_out(&self, v: &mut [f64]) {
        for b in &self.basis {
            let c = dot(v, b);
            axpy(-c, b, v);
        }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖b - Ax‖ / ‖b‖` at exit.
    pub relative_residual: f64,
    pub converged: bool,
    /// Set when a direction with `pᵗAp ≤ 0` was met.
    pub negative_curvature: bool,
}

/// Jacobi-preconditioned CG for `A x = b` on the complement of `null`.
///
/// `x` is the warm start and receives the solution. `b` should already be
/// orthogonal to `null`.
pub fn pcg(a: &impl LinOp, b: &[f64], x: &mut [f64], null: &NullSpace, rtol: f64, max_iter: usize) -> CgReport {
    let n = a.dim();
    let inv_diag: Vec<f64> = {
        let d = a.diagonal();
        let floor = 1e-14 * max_abs(&d).max(f64::MIN_POSITIVE);
        d.iter().map(|v| if *v > floor { 1.0 / v } else { 1.0 / floor.max(f64::MIN_POSITIVE) }).collect()
    };
    null.project_out(x);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgReport { iterations: 0, relative_residual: 0.0, converged: true, negative_curvature: false };
    }
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    null.project_out(&mut r);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    null.project_out(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm(&r) / bnorm;
    let mut it = 0;
    while rel > rtol && it < max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgReport { iterations: it, relative_residual: rel, converged: false, negative_curvature: true };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        it += 1;
        // periodic true-residual refresh against drift
        if it % 200 == 0 {
            a.apply(x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            null.project_out(&mut r);
        }
        rel = norm(&r) / bnorm;
        for (zi, (ri, di)) in z.iter_mut().zip(r.iter().zip(&inv_diag)) {
            *zi = ri * di;
        }
        null.project_out(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    null.project_out(x);
    CgReport { iterations: it, relative_residual: rel, converged: rel <= rtol, negative_curvature: false }
}
