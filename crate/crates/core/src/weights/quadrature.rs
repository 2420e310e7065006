//! Ball families and graded midpoint cubature over `B ∩ domain`.

// coordinates are walked by axis index across several arrays at once
#![allow(clippy::needless_range_loop)]

use serde::{Deserialize, Serialize};

use super::{BoxDomain, ScalarWeightField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn scaled(&self, factor: f64) -> Ball {
        Ball { center: self.center.clone(), radius: self.radius * factor }
    }

    /// `true` when `inner ⊂ self` up to a relative slack.
    pub fn contains_ball(&self, inner: &Ball) -> bool {
        let d: f64 = self
            .center
            .iter()
            .zip(&inner.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        d + inner.radius <= self.radius * (1.0 + 1e-12)
    }
}

/// Midpoint cubature on a subgrid of the ball's bounding box, refined
/// geometrically near weight singularities and along the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallQuadrature {
    pub cells_per_dim: usize,
    pub boundary_depth: usize,
    pub singular_depth: usize,
    /// Extra singular depth added per refinement level of an audit trace.
    pub depth_step: usize,
    /// Cells closer than this many diameters to a singular center are split.
    pub singular_reach: f64,
}

impl BallQuadrature {
    pub fn for_dim(dim: usize) -> Self {
        match dim {
            1 => BallQuadrature { cells_per_dim: 64, boundary_depth: 0, singular_depth: 14, depth_step: 2, singular_reach: 4.0 },
            2 => BallQuadrature { cells_per_dim: 24, boundary_depth: 5, singular_depth: 10, depth_step: 2, singular_reach: 2.0 },
            _ => BallQuadrature { cells_per_dim: 10, boundary_depth: 1, singular_depth: 6, depth_step: 1, singular_reach: 1.0 },
        }
    }

    pub fn refined(&self, level: usize) -> Self {
        BallQuadrature { singular_depth: self.singular_depth + self.depth_step * level, ..*self }
    }
}

/// Balls grouped by refinement level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallFamily {
    pub levels: Vec<Vec<Ball>>,
}

impl BallFamily {
    /// Balls inscribed in the dyadic cubes of `domain` at levels `0..levels`,
    /// plus balls `B(c, R 2^-l)` concentric at every singular center `c`.
    pub fn dyadic(domain: &BoxDomain, levels: usize, singular_centers: &[Vec<f64>]) -> Self {
        let n = domain.dim();
        let mut out = Vec::with_capacity(levels);
        for level in 0..levels {
            let cells = 1usize << level;
            let sides: Vec<f64> = (0..n).map(|k| (domain.hi[k] - domain.lo[k]) / cells as f64).collect();
            let radius = 0.5 * sides.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut balls = Vec::new();
            let total = cells.pow(n as u32);
            for idx in 0..total {
                let mut rem = idx;
                let mut center = Vec::with_capacity(n);
                for k in 0..n {
                    let i = rem % cells;
                    rem /= cells;
                    center.push(domain.lo[k] + (i as f64 + 0.5) * sides[k]);
                }
                balls.push(Ball { center, radius });
            }
            for c in singular_centers.iter().filter(|c| domain.contains(c)) {
                let reach = (0..n)
                    .map(|k| (c[k] - domain.lo[k]).min(domain.hi[k] - c[k]))
                    .fold(f64::INFINITY, f64::min);
                if reach > 0.0 {
                    balls.push(Ball { center: c.clone(), radius: reach / (1u64 << level) as f64 });
                }
            }
            out.push(balls);
        }
        BallFamily { levels: out }
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy)]
struct Cell {
    lo: [f64; 3],
    hi: [f64; 3],
    depth: usize,
}

/// Integrates every weight over `ball ∩ domain`.
///
/// Returns the Lebesgue measure of the sampled region together with one
/// integral per weight. All weights share the same sample points, so ratios
/// of integrals are exact for constant weights.
pub fn ball_integrals(
    weights: &[&ScalarWeightField],
    ball: &Ball,
    domain: &BoxDomain,
    quad: &BallQuadrature,
) -> Result<(f64, Vec<f64>)> {
    let n = ball.dim();
    if n != domain.dim() || weights.iter().any(|w| w.dim() != n) {
        return Err(Error::InvalidParameter("ball, domain and weights must share a dimension".into()));
    }
    let mut singular: Vec<Vec<f64>> = Vec::new();
    for w in weights {
        for c in w.singular_centers() {
            if !singular.contains(&c) {
                singular.push(c);
            }
        }
    }
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for k in 0..n {
        lo[k] = (ball.center[k] - ball.radius).max(domain.lo[k]);
        hi[k] = (ball.center[k] + ball.radius).min(domain.hi[k]);
        if hi[k] <= lo[k] {
            return Ok((0.0, vec![0.0; weights.len()]));
        }
    }
    let m = quad.cells_per_dim.max(1);
    let mut stack = Vec::new();
    let total = m.pow(n as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut cell = Cell { lo: [0.0; 3], hi: [0.0; 3], depth: 0 };
        for k in 0..n {
            let i = rem % m;
            rem /= m;
            let h = (hi[k] - lo[k]) / m as f64;
            cell.lo[k] = lo[k] + i as f64 * h;
            cell.hi[k] = if i + 1 == m { hi[k] } else { lo[k] + (i + 1) as f64 * h };
        }
        stack.push(cell);
    }

    let r2 = ball.radius * ball.radius;
    let reach2 = quad.singular_reach * quad.singular_reach;
    let mut measure = 0.0;
    let mut sums = vec![0.0; weights.len()];
    let mut point = [0.0; 3];
    while let Some(cell) = stack.pop() {
        let (mut dmin2, mut dmax2, mut diam2) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let c = ball.center[k];
            let below = (cell.lo[k] - c).max(c - cell.hi[k]).max(0.0);
            dmin2 += below * below;
            let far = (cell.lo[k] - c).abs().max((cell.hi[k] - c).abs());
            dmax2 += far * far;
            let side = cell.hi[k] - cell.lo[k];
            diam2 += side * side;
        }
        if dmin2 >= r2 {
            continue;
        }
        let straddles = dmax2 > r2;
        let near_singular = singular.iter().any(|s| {
            let mut d2 = 0.0;
            for k in 0..n {
                let e = (cell.lo[k] - s[k]).max(s[k] - cell.hi[k]).max(0.0);
                d2 += e * e;
            }
            d2 <= reach2 * diam2
        });
        let refine = (straddles && cell.depth < quad.boundary_depth)
            || (near_singular && cell.depth < quad.singular_depth);
        if refine {
            for child in 0..(1usize << n) {
                let mut sub = Cell { lo: cell.lo, hi: cell.hi, depth: cell.depth + 1 };
                for k in 0..n {
                    let mid = 0.5 * (cell.lo[k] + cell.hi[k]);
                    if child >> k & 1 == 0 {
                        sub.hi[k] = mid;
                    } else {
                        sub.lo[k] = mid;
                    }
                }
                stack.push(sub);
            }
            continue;
        }
        let mut vol = 1.0;
        for k in 0..n {
            point[k] = 0.5 * (cell.lo[k] + cell.hi[k]);
            vol *= cell.hi[k] - cell.lo[k];
        }
        if straddles {
            let d2: f64 = (0..n).map(|k| (point[k] - ball.center[k]).powi(2)).sum();
            if d2 >= r2 {
                continue;
            }
        }
        if near_singular {
            // offset the node off any singular center it lands on
            let tiny = 1e-12 * diam2.sqrt();
            for s in &singular {
                let d2: f64 = (0..n).map(|k| (point[k] - s[k]).powi(2)).sum();
                if d2.sqrt() <= tiny {
                    for k in 0..n {
                        point[k] += 0.25 * (cell.hi[k] - cell.lo[k]);
                    }
                }
            }
        }
        measure += vol;
        for (sum, w) in sums.iter_mut().zip(weights) {
            let value = w.value(&point[..n]);
            if !value.is_finite() {
                return Err(Error::SingularPoint(point[..n].to_vec()));
            }
            *sum += value * vol;
        }
    }
    Ok((measure, sums))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn disc_area_is_accurate() {
        let dom = BoxDomain::symmetric(2, 2.0).unwrap();
        let one = ScalarWeightField::constant(1.0, dom.clone()).unwrap();
        let ball = Ball::new(vec![0.1, -0.2], 1.0).unwrap();
        let (meas, ints) = ball_integrals(&[&one], &ball, &dom, &BallQuadrature::for_dim(2)).unwrap();
        assert!((meas - PI).abs() / PI < 1e-3, "{meas}");
        assert_eq!(meas, ints[0]);
    }

    #[test]
    fn interval_integral_of_singular_power() {
        let dom = BoxDomain::symmetric(1, 1.0).unwrap();
        let w = ScalarWeightField::parse("power:a=-0.5", dom.clone()).unwrap();
        let ball = Ball::new(vec![0.0], 1.0).unwrap();
        let (meas, ints) = ball_integrals(&[&w], &ball, &dom, &BallQuadrature::for_dim(1)).unwrap();
        assert!((meas - 2.0).abs() < 1e-14);
        // ∫_{-1}^{1} |x|^{-1/2} dx = 4
        assert!((ints[0] - 4.0).abs() / 4.0 < 2e-3, "{}", ints[0]);
    }

    #[test]
    fn clipping_to_domain() {
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let one = ScalarWeightField::constant(1.0, dom.clone()).unwrap();
        let ball = Ball::new(vec![0.0, 0.0], 0.5).unwrap();
        let (meas, _) = ball_integrals(&[&one], &ball, &dom, &BallQuadrature::for_dim(2)).unwrap();
        let quarter = PI * 0.25 / 4.0;
        assert!((meas - quarter).abs() / quarter < 2e-3, "{meas}");
    }

    #[test]
    fn dyadic_family_in_one_dimension() {
        let dom = BoxDomain::symmetric(1, 1.0).unwrap();
        let fam = BallFamily::dyadic(&dom, 3, &[vec![0.0]]);
        assert_eq!(fam.levels[0].len(), 2);
        assert_eq!(fam.levels[2].len(), 5);
        assert_eq!(fam.levels[2][4], Ball { center: vec![0.0], radius: 0.25 });
        assert_eq!(fam.levels[1][0], Ball { center: vec![-0.5], radius: 0.5 });
    }
}
