use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Named closed-form functions that can appear in experiment configs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Builtin {
    Identity,
    Zero,
    Const { c: f64 },
    /// a·u² + b·u + c
    Poly2 { a: f64, b: f64, c: f64 },
    /// (a·u + b)² + c
    AffineSq { a: f64, b: f64, c: f64 },
    /// scale on the closed interval [lo, hi], zero elsewhere
    Indicator { lo: f64, hi: f64, scale: f64 },
    /// scale on the open interval (lo, hi), zero elsewhere
    IndicatorOpen { lo: f64, hi: f64, scale: f64 },
    /// sin(freq·u)
    Sin { freq: f64 },
    /// (u/5 + 0.1)²
    WarpSquare,
    /// (u − 3π/4)²
    WarpShiftedSquare,
    /// (u/5 + 0.1)² below 2.5, (u/3 + 0.1)² from 2.5 on
    WarpPiecewise,
    /// (u − 3)² + sin u + 4
    ConvLengthscale,
}

impl Builtin {
    fn eval(&self, u: f64) -> f64 {
        match *self {
            Builtin::Identity => u,
            Builtin::Zero => 0.0,
            Builtin::Const { c } => c,
            Builtin::Poly2 { a, b, c } => (a * u + b) * u + c,
            Builtin::AffineSq { a, b, c } => {
                let t = a * u + b;
                t * t + c
            }
            Builtin::Indicator { lo, hi, scale } => {
                if (lo..=hi).contains(&u) {
                    scale
                } else {
                    0.0
                }
            }
            Builtin::IndicatorOpen { lo, hi, scale } => {
                if u > lo && u < hi {
                    scale
                } else {
                    0.0
                }
            }
            Builtin::Sin { freq } => (freq * u).sin(),
            Builtin::WarpSquare => {
                let t = u / 5.0 + 0.1;
                t * t
            }
            Builtin::WarpShiftedSquare => {
                let t = u - 3.0 * std::f64::consts::FRAC_PI_4;
                t * t
            }
            Builtin::WarpPiecewise => {
                let t = if u < 2.5 { u / 5.0 + 0.1 } else { u / 3.0 + 0.1 };
                t * t
            }
            Builtin::ConvLengthscale => {
                let t = u - 3.0;
                t * t + u.sin() + 4.0
            }
        }
    }

    fn smoothness(&self) -> Option<f64> {
        match self {
            Builtin::Indicator { .. } | Builtin::IndicatorOpen { .. } | Builtin::WarpPiecewise => None,
            _ => Some(f64::INFINITY),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Builtin::Identity => "identity",
            Builtin::Zero => "zero",
            Builtin::Const { .. } => "const",
            Builtin::Poly2 { .. } => "poly2",
            Builtin::AffineSq { .. } => "affine_sq",
            Builtin::Indicator { .. } => "indicator",
            Builtin::IndicatorOpen { .. } => "indicator_open",
            Builtin::Sin { .. } => "sin",
            Builtin::WarpSquare => "warp_square",
            Builtin::WarpShiftedSquare => "warp_shifted_square",
            Builtin::WarpPiecewise => "warp_piecewise",
            Builtin::ConvLengthscale => "conv_lengthscale",
        }
    }

    fn args(&self) -> Vec<f64> {
        match *self {
            Builtin::Const { c } => vec![c],
            Builtin::Poly2 { a, b, c } | Builtin::AffineSq { a, b, c } => vec![a, b, c],
            Builtin::Indicator { lo, hi, scale } | Builtin::IndicatorOpen { lo, hi, scale } => {
                vec![lo, hi, scale]
            }
            Builtin::Sin { freq } => vec![freq],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args = self.args();
        if args.is_empty() {
            return f.write_str(self.name());
        }
        let parts: Vec<String> = args.iter().map(|a| format!("{a:?}")).collect();
        write!(f, "{}{{{}}}", self.name(), parts.join(","))
    }
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('{') {
            Some(i) => {
                let inner = s[i + 1..]
                    .strip_suffix('}')
                    .ok_or_else(|| Error::Config(format!("unterminated argument list in `{s}`")))?;
                let args = inner
                    .split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad number `{}` in `{s}`", a.trim())))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                (&s[..i], args)
            }
            None => (s, Vec::new()),
        };
        let want = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "`{name}` takes {n} argument(s), got {}",
                    args.len()
                )))
            }
        };
        let b = match name {
            "identity" => {
                want(0)?;
                Builtin::Identity
            }
            "zero" => {
                want(0)?;
                Builtin::Zero
            }
            "const" => {
                want(1)?;
                Builtin::Const { c: args[0] }
            }
            "poly2" => {
                want(3)?;
                Builtin::Poly2 { a: args[0], b: args[1], c: args[2] }
            }
            "affine_sq" => {
                want(3)?;
                Builtin::AffineSq { a: args[0], b: args[1], c: args[2] }
            }
            "indicator" => {
                want(3)?;
                Builtin::Indicator { lo: args[0], hi: args[1], scale: args[2] }
            }
            "indicator_open" => {
                want(3)?;
                Builtin::IndicatorOpen { lo: args[0], hi: args[1], scale: args[2] }
            }
            "sin" => {
                want(1)?;
                Builtin::Sin { freq: args[0] }
            }
            "warp_square" => {
                want(0)?;
                Builtin::WarpSquare
            }
            "warp_shifted_square" => {
                want(0)?;
                Builtin::WarpShiftedSquare
            }
            "warp_piecewise" => {
                want(0)?;
                Builtin::WarpPiecewise
            }
            "conv_lengthscale" => {
                want(0)?;
                Builtin::ConvLengthscale
            }
            other => return Err(Error::Config(format!("unknown function `{other}`"))),
        };
        Ok(b)
    }
}

/// Piecewise-linear interpolant through sorted nodes, constant beyond the ends.
#[derive(Clone, Debug, PartialEq)]
pub struct Interp {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Interp {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Dimension { expected: xs.len(), got: ys.len() });
        }
        if xs.is_empty() {
            return Err(Error::param("interpolant needs at least one node"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("interpolation nodes must be strictly increasing"));
        }
        Ok(Interp { xs, ys })
    }

    pub fn eval(&self, u: f64) -> f64 {
        let n = self.xs.len();
        if u <= self.xs[0] {
            return self.ys[0];
        }
        if u >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&x| x <= u) - 1;
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        if u == x0 {
            return self.ys[i];
        }
        let t = (u - x0) / (x1 - x0);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }
}

type CustomFn = dyn Fn(f64) -> f64 + Send + Sync;

#[derive(Clone)]
enum Repr {
    Builtin(Builtin),
    Interp(Arc<Interp>),
    Custom(Arc<CustomFn>),
}

/// A real function of one variable used as a kernel hyper-parameter or a truth.
///
/// On vector inputs the function is applied coordinatewise (warps) or as a
/// product over coordinates (coefficients and length scales); see
/// [`FunctionHandle::eval_product`].
#[derive(Clone)]
pub struct FunctionHandle {
    repr: Repr,
    declared_smoothness: Option<f64>,
    label: String,
}

impl FunctionHandle {
    pub fn builtin(b: Builtin) -> Self {
        FunctionHandle {
            repr: Repr::Builtin(b),
            declared_smoothness: b.smoothness(),
            label: b.to_string(),
        }
    }

    pub fn interp(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Ok(FunctionHandle {
            repr: Repr::Interp(Arc::new(Interp::new(xs, ys)?)),
            declared_smoothness: Some(0.0),
            label: "interp".into(),
        })
    }

    pub fn custom<F>(label: impl Into<String>, smoothness: Option<f64>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        FunctionHandle {
            repr: Repr::Custom(Arc::new(f)),
            declared_smoothness: smoothness,
            label: label.into(),
        }
    }

    pub fn identity() -> Self {
        Self::builtin(Builtin::Identity)
    }

    pub fn constant(c: f64) -> Self {
        Self::builtin(Builtin::Const { c })
    }

    pub fn with_smoothness(mut self, s: Option<f64>) -> Self {
        self.declared_smoothness = s;
        self
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match &self.repr {
            Repr::Builtin(b) => b.eval(u),
            Repr::Interp(i) => i.eval(u),
            Repr::Custom(f) => f(u),
        }
    }

    /// Evaluate and reject non-finite output.
    pub fn eval_checked(&self, u: f64) -> Result<f64> {
        let y = self.eval(u);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Evaluation { label: self.label.clone(), at: u })
        }
    }

    /// Product of the function over the coordinates of `u`.
    pub fn eval_product(&self, u: &[f64]) -> Result<f64> {
        let mut acc = 1.0;
        for &x in u {
            acc *= self.eval_checked(x)?;
        }
        Ok(acc)
    }

    pub fn declared_smoothness(&self) -> Option<f64> {
        self.declared_smoothness
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn as_builtin(&self) -> Option<Builtin> {
        match self.repr {
            Repr::Builtin(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_interp(&self) -> Option<&Interp> {
        match &self.repr {
            Repr::Interp(i) => Some(i),
            _ => None,
        }
    }
}

impl fmt::Debug for FunctionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FunctionHandle({})", self.label)
    }
}

impl PartialEq for FunctionHandle {
    fn eq(&self, other: &Self) -> bool {
        let same = match (&self.repr, &other.repr) {
            (Repr::Builtin(a), Repr::Builtin(b)) => a == b,
            (Repr::Interp(a), Repr::Interp(b)) => a == b,
            (Repr::Custom(a), Repr::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        };
        same && self.declared_smoothness == other.declared_smoothness && self.label == other.label
    }
}

impl FromStr for FunctionHandle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(FunctionHandle::builtin(s.parse()?))
    }
}

impl Serialize for FunctionHandle {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.repr {
            Repr::Builtin(b) => s.serialize_str(&b.to_string()),
            _ => Err(serde::ser::Error::custom(format!(
                "function `{}` is not a named builtin and cannot be serialized",
                self.label
            ))),
        }
    }
}

impl<'de> Deserialize<'de> for FunctionHandle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
