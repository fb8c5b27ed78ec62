//! Scalar functions of time on [0, 1] with analytic derivatives and
//! rigorous range bounds.
//!
//! These are the coefficient building blocks accepted by the CLI spec
//! format: constants, polynomials in t, scaled trigonometric terms, and
//! sums thereof. Range bounds are conservative (valid on all of [0, 1]),
//! which lets declared Lipschitz and slope constants be honest.

use serde::{Deserialize, Serialize};

/// A time-dependent scalar coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFn {
    Const(f64),
    /// Coefficients in increasing degree: c0 + c1 t + c2 t^2 + ...
    Poly(Vec<f64>),
    /// amp * sin(freq * t + phase)
    Sin { amp: f64, freq: f64, phase: f64 },
    /// amp * cos(freq * t + phase)
    Cos { amp: f64, freq: f64, phase: f64 },
    Sum(Vec<TimeFn>),
}

impl TimeFn {
    pub fn zero() -> Self {
        TimeFn::Const(0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Const(c) => *c,
            TimeFn::Poly(cs) => cs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            TimeFn::Sin { amp, freq, phase } => amp * (freq * t + phase).sin(),
            TimeFn::Cos { amp, freq, phase } => amp * (freq * t + phase).cos(),
            TimeFn::Sum(fs) => fs.iter().map(|f| f.eval(t)).sum(),
        }
    }

    /// Analytic derivative.
    pub fn derivative(&self) -> TimeFn {
        match self {
            TimeFn::Const(_) => TimeFn::Const(0.0),
            TimeFn::Poly(cs) => {
                if cs.len() <= 1 {
                    TimeFn::Const(0.0)
                } else {
                    TimeFn::Poly(
                        cs.iter()
                            .enumerate()
                            .skip(1)
                            .map(|(i, c)| i as f64 * c)
                            .collect(),
                    )
                }
            }
            TimeFn::Sin { amp, freq, phase } => TimeFn::Cos {
                amp: amp * freq,
                freq: *freq,
                phase: *phase,
            },
            TimeFn::Cos { amp, freq, phase } => TimeFn::Sin {
                amp: -amp * freq,
                freq: *freq,
                phase: *phase,
            },
            TimeFn::Sum(fs) => TimeFn::Sum(fs.iter().map(|f| f.derivative()).collect()),
        }
    }

    /// Upper bound for the values on [0, 1] (not necessarily tight).
    pub fn upper_bound(&self) -> f64 {
        match self {
            TimeFn::Const(c) => *c,
            TimeFn::Poly(cs) => {
                cs.first().copied().unwrap_or(0.0)
                    + cs.iter().skip(1).map(|c| c.max(0.0)).sum::<f64>()
            }
            TimeFn::Sin { amp, .. } | TimeFn::Cos { amp, .. } => amp.abs(),
            TimeFn::Sum(fs) => fs.iter().map(|f| f.upper_bound()).sum(),
        }
    }

    /// Lower bound for the values on [0, 1].
    pub fn lower_bound(&self) -> f64 {
        match self {
            TimeFn::Const(c) => *c,
            TimeFn::Poly(cs) => {
                cs.first().copied().unwrap_or(0.0)
                    + cs.iter().skip(1).map(|c| c.min(0.0)).sum::<f64>()
            }
            TimeFn::Sin { amp, .. } | TimeFn::Cos { amp, .. } => -amp.abs(),
            TimeFn::Sum(fs) => fs.iter().map(|f| f.lower_bound()).sum(),
        }
    }

    /// Bound for |values| on [0, 1].
    pub fn abs_bound(&self) -> f64 {
        self.upper_bound().abs().max(self.lower_bound().abs())
    }

    pub fn negated(&self) -> TimeFn {
        match self {
            TimeFn::Const(c) => TimeFn::Const(-c),
            TimeFn::Poly(cs) => TimeFn::Poly(cs.iter().map(|c| -c).collect()),
            TimeFn::Sin { amp, freq, phase } => TimeFn::Sin {
                amp: -amp,
                freq: *freq,
                phase: *phase,
            },
            TimeFn::Cos { amp, freq, phase } => TimeFn::Cos {
                amp: -amp,
                freq: *freq,
                phase: *phase,
            },
            TimeFn::Sum(fs) => TimeFn::Sum(fs.iter().map(|f| f.negated()).collect()),
        }
    }

    /// Pointwise difference self - other.
    pub fn minus(&self, other: &TimeFn) -> TimeFn {
        TimeFn::Sum(vec![self.clone(), other.negated()])
    }
}
