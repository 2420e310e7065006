//! Scalar weights and auditors for the Muckenhoupt, doubling and balance
//! conditions.
//!
//! A weight is described by a small closed-form grammar:
//!
//! ```text
//! weight  := factor ('*' factor)*
//! factor  := number | 'const:c=' number | 'power:a=' number (',' ('x0'|'y0'|'z0') '=' number)*
//! ```
//!
//! so `power:a=0.5` is `|x|^0.5` and `2*power:a=-0.5,x0=0.1` is
//! `2 |x - (0.1, 0, 0)|^-0.5`.

mod audit;
mod quadrature;

pub use audit::{
    admissible_pair_check, ap_constant, balance_check, doubling_constant, sample_nested_pairs,
    AdmissibleReport, AuditConfig, PointwiseReport, SweepPoint, TracePoint, WeightAuditReport,
    Witness,
};
pub use quadrature::{ball_integrals, Ball, BallFamily, BallQuadrature};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form description of a nonnegative weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightDescriptor {
    Constant { c: f64 },
    Power { exponent: f64, center: [f64; 3] },
    Product { factors: Vec<WeightDescriptor> },
}

impl WeightDescriptor {
    pub fn constant(c: f64) -> Self {
        WeightDescriptor::Constant { c }
    }

    pub fn power(exponent: f64) -> Self {
        WeightDescriptor::Power { exponent, center: [0.0; 3] }
    }

    pub fn power_at(exponent: f64, center: &[f64]) -> Self {
        let mut c = [0.0; 3];
        for (dst, src) in c.iter_mut().zip(center) {
            *dst = *src;
        }
        WeightDescriptor::Power { exponent, center: c }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let factors = text
            .split('*')
            .map(|t| parse_factor(t.trim()))
            .collect::<Result<Vec<_>>>()?;
        Ok(match factors.len() {
            0 => return Err(Error::Parse("empty weight descriptor".into())),
            1 => factors.into_iter().next().unwrap(),
            _ => WeightDescriptor::Product { factors },
        })
    }

    /// Value at `x`; `+inf` at the center of a negative power.
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            WeightDescriptor::Constant { c } => *c,
            WeightDescriptor::Power { exponent, center } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                if r2 == 0.0 {
                    if *exponent > 0.0 {
                        0.0
                    } else if *exponent == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    r2.powf(0.5 * exponent)
                }
            }
            WeightDescriptor::Product { factors } => factors.iter().map(|f| f.value(x)).product(),
        }
    }

    /// The weight raised to the real power `t`.
    pub fn pow(&self, t: f64) -> Self {
        match self {
            WeightDescriptor::Constant { c } => WeightDescriptor::Constant { c: c.powf(t) },
            WeightDescriptor::Power { exponent, center } => {
                WeightDescriptor::Power { exponent: exponent * t, center: *center }
            }
            WeightDescriptor::Product { factors } => WeightDescriptor::Product {
                factors: factors.iter().map(|f| f.pow(t)).collect(),
            },
        }
    }

    fn collect_powers(&self, out: &mut Vec<([f64; 3], f64)>) {
        match self {
            WeightDescriptor::Constant { .. } => {}
            WeightDescriptor::Power { exponent, center } => {
                match out.iter_mut().find(|(c, _)| c == center) {
                    Some((_, e)) => *e += exponent,
                    None => out.push((*center, *exponent)),
                }
            }
            WeightDescriptor::Product { factors } => {
                for f in factors {
                    f.collect_powers(out);
                }
            }
        }
    }

    fn min_constant(&self) -> f64 {
        match self {
            WeightDescriptor::Constant { c } => *c,
            WeightDescriptor::Power { .. } => 1.0,
            WeightDescriptor::Product { factors } => factors.iter().map(|f| f.min_constant()).product(),
        }
    }
}

fn parse_number(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("expected a number, found `{s}`")))
}

fn parse_factor(text: &str) -> Result<WeightDescriptor> {
    if let Ok(c) = text.parse::<f64>() {
        return check_constant(c);
    }
    let (kind, args) = text
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("unrecognised weight factor `{text}`")))?;
    let mut params = Vec::new();
    for kv in args.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, found `{kv}`")))?;
        params.push((k.trim(), parse_number(v)?));
    }
    let get = |key: &str| params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
    match kind.trim() {
        "const" | "constant" => {
            let c = get("c").ok_or_else(|| Error::Parse("constant weight needs c=".into()))?;
            check_constant(c)
        }
        "power" => {
            let a = get("a").ok_or_else(|| Error::Parse("power weight needs a=".into()))?;
            let center = [get("x0").unwrap_or(0.0), get("y0").unwrap_or(0.0), get("z0").unwrap_or(0.0)];
            for (k, _) in &params {
                if !matches!(*k, "a" | "x0" | "y0" | "z0") {
                    return Err(Error::Parse(format!("unknown power parameter `{k}`")));
                }
            }
            Ok(WeightDescriptor::Power { exponent: a, center })
        }
        other => Err(Error::Parse(format!("unknown weight kind `{other}`"))),
    }
}

fn check_constant(c: f64) -> Result<WeightDescriptor> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::InvalidParameter(format!("constant weight must be finite and >= 0, got {c}")));
    }
    Ok(WeightDescriptor::Constant { c })
}

impl fmt::Display for WeightDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightDescriptor::Constant { c } => write!(f, "const:c={c}"),
            WeightDescriptor::Power { exponent, center } => {
                write!(f, "power:a={exponent}")?;
                for (name, v) in ["x0", "y0", "z0"].iter().zip(center) {
                    if *v != 0.0 {
                        write!(f, ",{name}={v}")?;
                    }
                }
                Ok(())
            }
            WeightDescriptor::Product { factors } => {
                for (i, factor) in factors.iter().enumerate() {
                    if i > 0 {
                        f.write_str("*")?;
                    }
                    write!(f, "{factor}")?;
                }
                Ok(())
            }
        }
    }
}

/// Axis-aligned box in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 3 {
            return Err(Error::InvalidParameter("box dimension must be 1, 2 or 3".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::InvalidParameter("box must have positive side lengths".into()));
        }
        Ok(BoxDomain { lo, hi })
    }

    /// `[-half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; dim], vec![half; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// A nonnegative weight on a box in `R^n`, `n` in {1, 2, 3}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarWeightField {
    pub descriptor: WeightDescriptor,
    pub domain: BoxDomain,
}

impl ScalarWeightField {
    pub fn new(descriptor: WeightDescriptor, domain: BoxDomain) -> Result<Self> {
        if descriptor.min_constant() < 0.0 {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        Ok(ScalarWeightField { descriptor, domain })
    }

    pub fn parse(text: &str, domain: BoxDomain) -> Result<Self> {
        Self::new(WeightDescriptor::parse(text)?, domain)
    }

    pub fn constant(c: f64, domain: BoxDomain) -> Result<Self> {
        Self::new(WeightDescriptor::Constant { c }, domain)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Evaluates the weight at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidParameter(format!(
                "point has dimension {}, weight has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let v = self.descriptor.value(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::SingularPoint(x.to_vec()))
        }
    }

    /// Unchecked evaluation used inside quadrature loops.
    pub(crate) fn value(&self, x: &[f64]) -> f64 {
        self.descriptor.value(x)
    }

    pub fn pow(&self, t: f64) -> Self {
        ScalarWeightField { descriptor: self.descriptor.pow(t), domain: self.domain.clone() }
    }

    /// Power centers with their accumulated exponents.
    pub fn power_centers(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::new();
        self.descriptor.collect_powers(&mut out);
        out.into_iter()
            .filter(|(_, e)| *e != 0.0)
            .map(|(c, e)| (c[..self.dim()].to_vec(), e))
            .collect()
    }

    /// Centers where the weight fails to be smooth.
    pub fn singular_centers(&self) -> Vec<Vec<f64>> {
        self.power_centers().into_iter().map(|(c, _)| c).collect()
    }

    /// A power `|x - x0|^a` is locally integrable iff `a > -n`.
    pub fn is_locally_integrable(&self) -> bool {
        let n = self.dim() as f64;
        self.power_centers().iter().all(|(_, e)| *e > -n)
    }
}
