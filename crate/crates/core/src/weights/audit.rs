//! Sampled estimates of `[w]_{A_p}`, doubling constants and the two-weight
//! balance condition.
//!
//! Every estimate is a maximum over a finite family; nothing here decides
//! whether a constant is "small enough". Reports carry the maximising
//! witness and a trace of estimates as the family and the cubature refine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::{ball_integrals, Ball, BallFamily, BallQuadrature};
use super::{BoxDomain, ScalarWeightField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Ball { ball: Ball },
    Pair { inner: Ball, outer: Ball },
    Point { x: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub samples: usize,
    pub estimate: f64,
}

/// One entry of a concentric-ball sweep `B(c, R 2^-k) ⊂ B(c, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: u32,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AuditConfig {
    pub condition: String,
    pub dim: usize,
    pub weights: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<BallQuadrature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightAuditReport {
    pub estimate: f64,
    pub sample_count: usize,
    pub witness: Option<Witness>,
    /// Cumulative maxima; nondecreasing by construction.
    pub trace: Vec<TracePoint>,
    /// Set when the dual weight sits exactly on the integrability boundary.
    pub divergent: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
    pub config: AuditConfig,
}

impl WeightAuditReport {
    /// Relative change over the last two trace entries.
    pub fn trace_variation(&self) -> f64 {
        match self.trace.as_slice() {
            [.., a, b] if b.estimate > 0.0 => (b.estimate - a.estimate).abs() / b.estimate,
            _ => 0.0,
        }
    }
}

/// Cumulative-max accumulator that keeps the first maximiser it sees.
struct Running {
    best: f64,
    witness: Option<Witness>,
    samples: usize,
    trace: Vec<TracePoint>,
}

impl Running {
    fn new() -> Self {
        Running { best: f64::NEG_INFINITY, witness: None, samples: 0, trace: Vec::new() }
    }

    fn absorb(&mut self, values: Vec<(f64, Witness)>) {
        self.samples += values.len();
        for (v, w) in values {
            if v > self.best {
                self.best = v;
                self.witness = Some(w);
            }
        }
    }

    fn mark(&mut self) {
        self.trace.push(TracePoint { samples: self.samples, estimate: self.best.max(0.0) });
    }
}

fn family_dim(family: &BallFamily) -> Option<usize> {
    family.levels.iter().flatten().next().map(Ball::dim)
}

/// `[w]_{A_p} ≈ max_B ⨍_B w (⨍_B w^{1-p'})^{p-1}` over the family.
///
/// Trace entry `l` covers the family levels `0..=l` evaluated with the
/// cubature refined `l` times near the singular centers.
pub fn ap_constant(
    w: &ScalarWeightField,
    p: f64,
    family: &BallFamily,
    quad: &BallQuadrature,
) -> Result<WeightAuditReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("A_p needs 1 < p < inf, got {p}")));
    }
    if family.is_empty() {
        return Err(Error::InvalidParameter("empty ball family".into()));
    }
    let n = w.dim() as f64;
    if !w.is_locally_integrable() {
        return Err(Error::NonIntegrable(w.descriptor.to_string()));
    }
    let dual = w.pow(-1.0 / (p - 1.0));
    let mut divergent = false;
    for (_, e) in dual.power_centers() {
        if e < -n * (1.0 + 1e-12) {
            return Err(Error::NonIntegrable(dual.descriptor.to_string()));
        }
        if e <= -n * (1.0 - 1e-12) {
            divergent = true;
        }
    }
    let domain = &w.domain;
    let mut run = Running::new();
    for level in 0..family.levels.len() {
        let q = quad.refined(level);
        let balls: Vec<&Ball> = family.levels[..=level].iter().flatten().collect();
        let values = balls
            .par_iter()
            .map(|ball| -> Result<Option<(f64, Witness)>> {
                let (meas, ints) = ball_integrals(&[w, &dual], ball, domain, &q)?;
                if meas <= 0.0 {
                    return Ok(None);
                }
                let ratio = (ints[0] / meas) * (ints[1] / meas).powf(p - 1.0);
                Ok(Some((ratio, Witness::Ball { ball: (*ball).clone() })))
            })
            .collect::<Result<Vec<_>>>()?;
        run.absorb(values.into_iter().flatten().collect());
        run.mark();
    }
    Ok(WeightAuditReport {
        estimate: run.best.max(0.0),
        sample_count: run.samples,
        witness: run.witness,
        trace: run.trace,
        divergent,
        sweep: Vec::new(),
        config: AuditConfig {
            condition: "A_p".into(),
            dim: family_dim(family).unwrap_or(w.dim()),
            weights: vec![w.descriptor.to_string()],
            p: Some(p),
            levels: Some(family.levels.len()),
            quadrature: Some(*quad),
            ..AuditConfig::default()
        },
    })
}

/// `max v(B(x,2r) ∩ D) / v(B(x,r) ∩ D)` over the family.
pub fn doubling_constant(
    v: &ScalarWeightField,
    family: &BallFamily,
    quad: &BallQuadrature,
) -> Result<WeightAuditReport> {
    if family.is_empty() {
        return Err(Error::InvalidParameter("empty ball family".into()));
    }
    if !v.is_locally_integrable() {
        return Err(Error::NonIntegrable(v.descriptor.to_string()));
    }
    let domain = &v.domain;
    let mut run = Running::new();
    for level in &family.levels {
        let values = level
            .par_iter()
            .map(|ball| -> Result<(f64, Witness)> {
                let (_, small) = ball_integrals(&[v], ball, domain, quad)?;
                let (_, large) = ball_integrals(&[v], &ball.scaled(2.0), domain, quad)?;
                if small[0] <= 0.0 {
                    return Err(Error::ZeroMeasure(format!(
                        "v(B({:?}, {})) = 0",
                        ball.center, ball.radius
                    )));
                }
                Ok((large[0] / small[0], Witness::Ball { ball: ball.clone() }))
            })
            .collect::<Result<Vec<_>>>()?;
        run.absorb(values);
        run.mark();
    }
    Ok(WeightAuditReport {
        estimate: run.best.max(0.0),
        sample_count: run.samples,
        witness: run.witness,
        trace: run.trace,
        divergent: false,
        sweep: Vec::new(),
        config: AuditConfig {
            condition: "doubling".into(),
            dim: v.dim(),
            weights: vec![v.descriptor.to_string()],
            levels: Some(family.levels.len()),
            quadrature: Some(*quad),
            ..AuditConfig::default()
        },
    })
}

/// Seeded nested pairs `B(x, r) ⊂ B(y, s) ⊂ container` with log-uniform
/// radii over three decades: `s` relative to the room left in the
/// container, `r/s` on its own.
pub fn sample_nested_pairs(container: &Ball, count: usize, seed: u64) -> Vec<(Ball, Ball)> {
    let n = container.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point_in = |rng: &mut ChaCha8Rng, ball: &Ball| -> Vec<f64> {
        loop {
            let offset: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r2: f64 = offset.iter().map(|x| x * x).sum();
            if r2 < 1.0 {
                return ball.center.iter().zip(&offset).map(|(c, o)| c + ball.radius * o).collect();
            }
        }
    };
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let y = point_in(&mut rng, container);
        let s_max = container.radius - dist(&y, &container.center);
        let s = s_max * 10f64.powf(-3.0 * rng.random::<f64>());
        let outer = Ball { center: y, radius: s };
        let r = s * 10f64.powf(-3.0 * rng.random::<f64>());
        let room = Ball { center: outer.center.clone(), radius: s - r };
        let x = if room.radius > 0.0 { point_in(&mut rng, &room) } else { outer.center.clone() };
        if r > 0.0 && s > 0.0 {
            pairs.push((Ball { center: x, radius: r }, outer));
        }
    }
    pairs
}

fn balance_ratio(
    w: &ScalarWeightField,
    v: &ScalarWeightField,
    p: f64,
    q: f64,
    inner: &Ball,
    outer: &Ball,
    quad: &BallQuadrature,
) -> Result<f64> {
    let (_, i1) = ball_integrals(&[w, v], inner, &w.domain, quad)?;
    let (_, i2) = ball_integrals(&[w, v], outer, &w.domain, quad)?;
    let (w1, v1, w2, v2) = (i1[0], i1[1], i2[0], i2[1]);
    if w1 <= 0.0 || w2 <= 0.0 || v2 <= 0.0 {
        return Err(Error::ZeroMeasure(format!(
            "balance ratio for B({:?}, {}) ⊂ B({:?}, {}) has a zero weighted measure",
            inner.center, inner.radius, outer.center, outer.radius
        )));
    }
    Ok((inner.radius / outer.radius) * (v1 / v2).powf(1.0 / q) / (w1 / w2).powf(1.0 / p))
}

/// Best sampled constant `C` in
/// `(r/s) (v(B1)/v(B2))^{1/q} <= C (w(B1)/w(B2))^{1/p}`.
///
/// The trace takes the cumulative maximum over the first `N/2^k` pairs.
/// With a `container`, concentric sweeps `B(c, R 2^-k) ⊂ B(c, R)` around the
/// singular centers inside it are reported as well.
#[allow(clippy::too_many_arguments)]
pub fn balance_check(
    w: &ScalarWeightField,
    v: &ScalarWeightField,
    p: f64,
    q: f64,
    pairs: &[(Ball, Ball)],
    container: Option<&Ball>,
    quad: &BallQuadrature,
    trace_levels: usize,
) -> Result<WeightAuditReport> {
    if !(p > 1.0) || q < p {
        return Err(Error::InvalidParameter(format!("balance check needs 1 < p <= q, got p={p}, q={q}")));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no ball pairs supplied".into()));
    }
    if w.dim() != v.dim() {
        return Err(Error::InvalidParameter("w and v must share a dimension".into()));
    }
    for (inner, outer) in pairs {
        if !outer.contains_ball(inner) {
            return Err(Error::NestingViolation(format!(
                "B({:?}, {}) ⊄ B({:?}, {})",
                inner.center, inner.radius, outer.center, outer.radius
            )));
        }
    }
    let ratios = pairs
        .par_iter()
        .map(|(inner, outer)| balance_ratio(w, v, p, q, inner, outer, quad))
        .collect::<Result<Vec<_>>>()?;

    let levels = trace_levels.max(1);
    let mut run = Running::new();
    let mut consumed = 0;
    for k in 0..levels {
        let upto = pairs.len().div_ceil(1 << (levels - 1 - k));
        let fresh = (consumed..upto)
            .map(|i| (ratios[i], Witness::Pair { inner: pairs[i].0.clone(), outer: pairs[i].1.clone() }))
            .collect();
        run.absorb(fresh);
        consumed = upto;
        run.mark();
    }

    let mut sweep = Vec::new();
    if let Some(container) = container {
        let mut centers = w.singular_centers();
        for c in v.singular_centers() {
            if !centers.contains(&c) {
                centers.push(c);
            }
        }
        for c in centers {
            let d: f64 = c.iter().zip(&container.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let reach = container.radius - d;
            if reach <= 0.0 {
                continue;
            }
            let outer = Ball { center: c.clone(), radius: reach };
            for k in 1..=10u32 {
                let inner = outer.scaled(0.5f64.powi(k as i32));
                sweep.push(SweepPoint { k, ratio: balance_ratio(w, v, p, q, &inner, &outer, quad)? });
            }
        }
    }

    Ok(WeightAuditReport {
        estimate: run.best.max(0.0),
        sample_count: run.samples,
        witness: run.witness,
        trace: run.trace,
        divergent: false,
        sweep,
        config: AuditConfig {
            condition: "balance".into(),
            dim: w.dim(),
            weights: vec![w.descriptor.to_string(), v.descriptor.to_string()],
            p: Some(p),
            q: Some(q),
            pairs: Some(pairs.len()),
            levels: Some(levels),
            quadrature: Some(*quad),
            ..AuditConfig::default()
        },
    })
}

/// Sampled check of `v >= w` on a lattice of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    /// `min v(x) / w(x)` over sample points with `w(x) > 0`.
    pub min_ratio: f64,
    pub samples: usize,
    pub holds: bool,
    pub witness: Option<Witness>,
}

#[allow(clippy::needless_range_loop)]
fn pointwise_dominance(w: &ScalarWeightField, v: &ScalarWeightField, per_dim: usize) -> PointwiseReport {
    let n = w.dim();
    let dom = &w.domain;
    let total = per_dim.pow(n as u32);
    let mut min_ratio = f64::INFINITY;
    let mut holds = true;
    let mut witness = None;
    let mut samples = 0;
    let mut x = vec![0.0; n];
    for idx in 0..total {
        let mut rem = idx;
        for k in 0..n {
            let i = rem % per_dim;
            rem /= per_dim;
            // irrational-ish offset keeps samples off singular centers
            let t = (i as f64 + 0.5 + 0.0137) / per_dim as f64;
            x[k] = dom.lo[k] + t * (dom.hi[k] - dom.lo[k]);
        }
        let (wv, vv) = (w.value(&x), v.value(&x));
        if !(wv.is_finite() && vv.is_finite()) {
            continue;
        }
        samples += 1;
        if vv < wv * (1.0 - 1e-12) && holds {
            holds = false;
            witness = Some(Witness::Point { x: x.clone() });
        }
        if wv > 0.0 {
            let ratio = vv / wv;
            if ratio < min_ratio {
                min_ratio = ratio;
                if holds {
                    witness = Some(Witness::Point { x: x.clone() });
                }
            }
        }
    }
    PointwiseReport { min_ratio, samples, holds, witness }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleReport {
    pub pointwise: PointwiseReport,
    pub ap: WeightAuditReport,
    pub doubling: WeightAuditReport,
    pub balance: WeightAuditReport,
    /// Conjunction over the sampled families.
    pub admissible: bool,
    pub failures: Vec<String>,
}

/// Samples the four p-admissibility conditions: `v >= w`, `w ∈ A_p`,
/// `v` doubling and the balance condition with exponent `q > p`.
///
/// Conditions 2 and 3 count as satisfied when every estimate is finite, the
/// `A_p` dual weight is integrable and the balance trace varies by at most
/// `stability` over its last two entries.
#[allow(clippy::too_many_arguments)]
pub fn admissible_pair_check(
    w: &ScalarWeightField,
    v: &ScalarWeightField,
    p: f64,
    q: f64,
    levels: usize,
    pairs: usize,
    seed: u64,
    stability: f64,
) -> Result<AdmissibleReport> {
    if !(q > p) {
        return Err(Error::InvalidParameter(format!("admissible pairs need q > p, got p={p}, q={q}")));
    }
    if w.domain != v.domain {
        return Err(Error::InvalidParameter("w and v must live on the same domain".into()));
    }
    let dom: &BoxDomain = &w.domain;
    let n = dom.dim();
    let quad = BallQuadrature::for_dim(n);
    let mut centers = w.singular_centers();
    centers.extend(v.singular_centers());
    centers.dedup();

    let pointwise = pointwise_dominance(w, v, if n == 1 { 4001 } else if n == 2 { 201 } else { 41 });
    let family = BallFamily::dyadic(dom, levels, &centers);
    let ap = ap_constant(w, p, &family, &quad)?;
    let doubling = doubling_constant(v, &family, &quad)?;
    let center: Vec<f64> = (0..n).map(|k| 0.5 * (dom.lo[k] + dom.hi[k])).collect();
    let radius = (0..n).map(|k| 0.5 * (dom.hi[k] - dom.lo[k])).fold(f64::INFINITY, f64::min);
    let container = Ball::new(center, radius)?;
    let sampled = sample_nested_pairs(&container, pairs, seed);
    let balance = balance_check(w, v, p, q, &sampled, Some(&container), &quad, 5)?;

    let mut failures = Vec::new();
    if !pointwise.holds {
        failures.push("v >= w fails at a sample point".to_string());
    }
    if ap.divergent || !ap.estimate.is_finite() {
        failures.push("A_p estimate diverges".to_string());
    }
    if !doubling.estimate.is_finite() {
        failures.push("doubling estimate is infinite".to_string());
    }
    if !balance.estimate.is_finite() || balance.trace_variation() > stability {
        failures.push(format!("balance trace not stable (variation {:.3e})", balance.trace_variation()));
    }
    Ok(AdmissibleReport { pointwise, ap, doubling, balance, admissible: failures.is_empty(), failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_of_one_is_exactly_one() {
        let dom = BoxDomain::symmetric(2, 1.0).unwrap();
        let w = ScalarWeightField::constant(1.0, dom.clone()).unwrap();
        let fam = BallFamily::dyadic(&dom, 3, &[]);
        let rep = ap_constant(&w, 2.0, &fam, &BallQuadrature::for_dim(2)).unwrap();
        assert_eq!(rep.estimate, 1.0);
        assert_eq!(rep.sample_count, 1 + (1 + 4) + (1 + 4 + 16));
    }

    #[test]
    fn ap_rejects_non_integrable_dual() {
        let dom = BoxDomain::symmetric(1, 1.0).unwrap();
        let w = ScalarWeightField::parse("power:a=1.5", dom.clone()).unwrap();
        let fam = BallFamily::dyadic(&dom, 2, &w.singular_centers());
        let err = ap_constant(&w, 2.0, &fam, &BallQuadrature::for_dim(1)).unwrap_err();
        assert!(matches!(err, Error::NonIntegrable(_)));
    }

    #[test]
    fn doubling_of_lebesgue_measure_on_the_line() {
        let dom = BoxDomain::symmetric(1, 1.0).unwrap();
        let v = ScalarWeightField::constant(1.0, dom.clone()).unwrap();
        let rep = doubling_constant(&v, &BallFamily::dyadic(&dom, 4, &[]), &BallQuadrature::for_dim(1)).unwrap();
        assert!((rep.estimate - 2.0).abs() < 1e-12, "{}", rep.estimate);
    }

    #[test]
    fn doubling_rejects_zero_weight() {
        let dom = BoxDomain::symmetric(1, 1.0).unwrap();
        let v = ScalarWeightField::constant(0.0, dom.clone()).unwrap();
        let err = doubling_constant(&v, &BallFamily::dyadic(&dom, 1, &[]), &BallQuadrature::for_dim(1)).unwrap_err();
        assert!(matches!(err, Error::ZeroMeasure(_)));
    }

    #[test]
    fn balance_rejects_non_nested_pairs() {
        let dom = BoxDomain::symmetric(2, 1.0).unwrap();
        let one = ScalarWeightField::constant(1.0, dom).unwrap();
        let pair = (Ball::new(vec![0.5, 0.0], 0.3).unwrap(), Ball::new(vec![0.0, 0.0], 0.6).unwrap());
        let err = balance_check(&one, &one, 2.0, 2.0, &[pair], None, &BallQuadrature::for_dim(2), 1).unwrap_err();
        assert!(matches!(err, Error::NestingViolation(_)));
    }

    #[test]
    fn sampled_pairs_are_nested_and_deterministic() {
        let container = Ball::new(vec![0.0, 0.0, 0.0], 1.0).unwrap();
        let a = sample_nested_pairs(&container, 50, 7);
        let b = sample_nested_pairs(&container, 50, 7);
        assert_eq!(a, b);
        for (inner, outer) in &a {
            assert!(outer.contains_ball(inner));
            assert!(container.contains_ball(outer));
        }
    }

    #[test]
    fn constant_pair_is_admissible() {
        let dom = BoxDomain::symmetric(2, 1.0).unwrap();
        let one = ScalarWeightField::constant(1.0, dom).unwrap();
        let rep = admissible_pair_check(&one, &one, 2.0, 3.0, 3, 500, 1, 0.1).unwrap();
        assert!(rep.admissible, "{:?}", rep.failures);
    }

    #[test]
    fn dominated_constants_fail_condition_one() {
        let dom = BoxDomain::symmetric(1, 1.0).unwrap();
        let w = ScalarWeightField::constant(2.0, dom.clone()).unwrap();
        let v = ScalarWeightField::constant(1.0, dom).unwrap();
        let rep = admissible_pair_check(&w, &v, 2.0, 3.0, 2, 16, 1, 0.1).unwrap();
        assert!(!rep.pointwise.holds);
        assert!(!rep.admissible);
        assert!((rep.pointwise.min_ratio - 0.5).abs() < 1e-15);
    }
}
