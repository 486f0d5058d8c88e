//! Built-in integrand catalog with closed-form integrals over sub-boxes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde_json::Value;

use crate::domain::{BoxDomain, DomainError};

/// Free-form parameter map as it appears in experiment configs.
pub type Params = serde_json::Map<String, Value>;

/// One-dimensional catalog members.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape1d {
    Linear,
    Polynomial(Vec<f64>),
    ExpDecay { k: f64 },
    GaussianBump { center: f64, width: f64 },
    Step { threshold: f64, low: f64, high: f64 },
    SinePlus { offset: f64, freq: f64 },
}

impl Shape1d {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Shape1d::Linear => x,
            Shape1d::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * x + ck),
            Shape1d::ExpDecay { k } => (-k * x).exp(),
            Shape1d::GaussianBump { center, width } => {
                let z = (x - center) / width;
                (-0.5 * z * z).exp()
            }
            Shape1d::Step { threshold, low, high } => {
                if x < *threshold {
                    *low
                } else {
                    *high
                }
            }
            Shape1d::SinePlus { offset, freq } => offset + (2.0 * PI * freq * x).sin(),
        }
    }

    /// Exact `\int_a^b f`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Shape1d::Linear => 0.5 * (b - a) * (b + a),
            Shape1d::Polynomial(c) => {
                let anti = |x: f64| {
                    c.iter()
                        .enumerate()
                        .rev()
                        .fold(0.0, |acc, (k, ck)| acc * x + ck / (k + 1) as f64)
                        * x
                };
                anti(b) - anti(a)
            }
            Shape1d::ExpDecay { k } => {
                if *k == 0.0 {
                    b - a
                } else {
                    (-k * a).exp() * -(-k * (b - a)).exp_m1() / k
                }
            }
            Shape1d::GaussianBump { center, width } => {
                let s = width * std::f64::consts::SQRT_2;
                let (za, zb) = ((a - center) / s, (b - center) / s);
                let diff = if za >= 0.0 {
                    libm::erfc(za) - libm::erfc(zb)
                } else if zb <= 0.0 {
                    libm::erfc(-zb) - libm::erfc(-za)
                } else {
                    libm::erf(zb) - libm::erf(za)
                };
                width * (PI / 2.0).sqrt() * diff
            }
            Shape1d::Step { threshold, low, high } => {
                let below = (b.min(*threshold) - a).max(0.0);
                let above = (b - a.max(*threshold)).max(0.0);
                low * below + high * above
            }
            Shape1d::SinePlus { offset, freq } => {
                let w = 2.0 * PI * freq;
                let osc = if *freq == 0.0 {
                    0.0
                } else {
                    // cos(wa) - cos(wb) = 2 sin(w(a+b)/2) sin(w(b-a)/2)
                    2.0 * (0.5 * w * (a + b)).sin() * (0.5 * w * (b - a)).sin() / w
                };
                offset * (b - a) + osc
            }
        }
    }

    /// Points where the function is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Shape1d::Step { threshold, .. } => vec![*threshold],
            _ => Vec::new(),
        }
    }

    /// One-dimensional shape by catalog id; unknown params are rejected.
    pub fn from_params(id: &str, params: &Params) -> Result<Self, DomainError> {
        let shape = match id {
            "linear" => {
                reject_unknown(id, params, &[])?;
                Shape1d::Linear
            }
            "polynomial" => {
                reject_unknown(id, params, &["c"])?;
                let c = match params.get("c") {
                    Some(Value::Array(items)) => items
                        .iter()
                        .map(|v| v.as_f64())
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| invalid("polynomial: c must be an array of numbers"))?,
                    _ => return Err(invalid("polynomial: missing coefficient array c")),
                };
                if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("polynomial: c must be non-empty and finite"));
                }
                Shape1d::Polynomial(c)
            }
            "exp_decay" => {
                reject_unknown(id, params, &["k"])?;
                Shape1d::ExpDecay { k: number(params, "k", 1.0)? }
            }
            "gaussian_bump" => {
                reject_unknown(id, params, &["center", "width"])?;
                let width = number(params, "width", 0.1)?;
                if width <= 0.0 {
                    return Err(invalid("gaussian_bump: width must be > 0"));
                }
                Shape1d::GaussianBump { center: number(params, "center", 0.5)?, width }
            }
            "step" => {
                reject_unknown(id, params, &["t", "low", "high"])?;
                Shape1d::Step {
                    threshold: number(params, "t", 0.5)?,
                    low: number(params, "low", 0.0)?,
                    high: number(params, "high", 1.0)?,
                }
            }
            "sine_plus" => {
                reject_unknown(id, params, &["c", "freq"])?;
                let offset = number(params, "c", 1.5)?;
                if offset < 1.0 {
                    return Err(invalid("sine_plus: offset c must be >= 1 so that f >= 0"));
                }
                Shape1d::SinePlus { offset, freq: number(params, "freq", 1.0)? }
            }
            other => return Err(DomainError::NotFound(format!("unknown integrand id '{other}'"))),
        };
        Ok(shape)
    }
}

fn invalid(msg: &str) -> DomainError {
    DomainError::InvalidArgument(msg.to_string())
}

pub(crate) fn reject_unknown(id: &str, params: &Params, allowed: &[&str]) -> Result<(), DomainError> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(DomainError::InvalidArgument(format!("{id}: unknown parameter '{k}'"))),
        None => Ok(()),
    }
}

pub(crate) fn number(params: &Params, key: &str, default: f64) -> Result<f64, DomainError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| DomainError::InvalidArgument(format!("parameter '{key}' must be a finite number"))),
    }
}

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    OneD(Shape1d),
    Product(Shape1d, Shape1d),
    Custom { dim: usize, eval: Evaluator },
}

/// A deterministic scalar field, optionally with an exact integral oracle.
#[derive(Clone)]
pub struct Integrand {
    id: String,
    kind: Kind,
}

impl fmt::Debug for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Integrand");
        s.field("id", &self.id).field("dim", &self.dim());
        match &self.kind {
            Kind::OneD(shape) => s.field("shape", shape),
            Kind::Product(x, y) => s.field("x", x).field("y", y),
            Kind::Custom { .. } => s.field("shape", &"custom"),
        };
        s.finish()
    }
}

impl Integrand {
    pub fn one_d(id: impl Into<String>, shape: Shape1d) -> Self {
        Self { id: id.into(), kind: Kind::OneD(shape) }
    }

    pub fn product(id: impl Into<String>, x: Shape1d, y: Shape1d) -> Self {
        Self { id: id.into(), kind: Kind::Product(x, y) }
    }

    /// Arbitrary field without an analytic oracle.
    pub fn custom<F>(id: impl Into<String>, dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { id: id.into(), kind: Kind::Custom { dim, eval: Arc::new(eval) } }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::OneD(_) => 1,
            Kind::Product(..) => 2,
            Kind::Custom { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::OneD(s) => s.eval(x[0]),
            Kind::Product(a, b) => a.eval(x[0]) * b.eval(x[1]),
            Kind::Custom { eval, .. } => eval(x),
        }
    }

    pub fn has_oracle(&self) -> bool {
        !matches!(self.kind, Kind::Custom { .. })
    }

    /// Exact integral over `bx`, when the integrand carries a closed form.
    pub fn exact_integral(&self, bx: &BoxDomain) -> Option<f64> {
        let (lo, hi) = (bx.lower(), bx.upper());
        match &self.kind {
            Kind::OneD(s) if bx.dim() == 1 => Some(s.integral(lo[0], hi[0])),
            Kind::Product(a, b) if bx.dim() == 2 => {
                Some(a.integral(lo[0], hi[0]) * b.integral(lo[1], hi[1]))
            }
            _ => None,
        }
    }

    /// Known discontinuity locations along `axis`.
    pub fn breakpoints(&self, axis: usize) -> Vec<f64> {
        match (&self.kind, axis) {
            (Kind::OneD(s), 0) | (Kind::Product(s, _), 0) | (Kind::Product(_, s), 1) => s.breakpoints(),
            _ => Vec::new(),
        }
    }
}

/// Builds a catalog integrand by name.
///
/// `product_2d` takes `{"x": {"id": .., "params": ..}, "y": {..}}` with
/// one-dimensional members on each axis.
pub fn catalog_integrand(id: &str, params: &Params) -> Result<Integrand, DomainError> {
    if id == "product_2d" {
        reject_unknown(id, params, &["x", "y"])?;
        let axis = |key: &str| -> Result<Shape1d, DomainError> {
            let spec = params
                .get(key)
                .and_then(Value::as_object)
                .ok_or_else(|| DomainError::InvalidArgument(format!("product_2d: missing factor '{key}'")))?;
            reject_unknown("product_2d factor", spec, &["id", "params"])?;
            let sub_id = spec
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| DomainError::InvalidArgument(format!("product_2d: factor '{key}' needs an id")))?;
            let empty = Params::new();
            let sub_params = match spec.get("params") {
                None => &empty,
                Some(Value::Object(m)) => m,
                Some(_) => return Err(invalid("product_2d: factor params must be an object")),
            };
            Shape1d::from_params(sub_id, sub_params)
        };
        return Ok(Integrand::product(id, axis("x")?, axis("y")?));
    }
    Ok(Integrand::one_d(id, Shape1d::from_params(id, params)?))
}
