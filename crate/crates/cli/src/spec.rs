//! Problem specification files: a small JSON descriptor language for
//! coefficients (constants, polynomials in t, trig terms, sums, and named
//! presets), boundary maps, solver controls and Monte Carlo settings.
//!
//! Keeping the coefficient language closed means every parsed problem
//! carries trustworthy metadata: analytic partials, Lipschitz constants and
//! slope envelopes all derive from the descriptors rather than being
//! guessed from opaque callables.

use anyhow::{bail, Context};
use jumpbvp::{BoundaryMap, BvpOptions, CoefficientField, LinearCoefficients, TimeFn};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Forward,
    Backward,
    Skorohod,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoefficientSpec {
    Linear {
        f1: TimeFn,
        f2: TimeFn,
        #[serde(rename = "F1")]
        big_f1: TimeFn,
        #[serde(rename = "F2")]
        big_f2: TimeFn,
    },
    Preset {
        name: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiSpec {
    Affine { slope: f64, intercept: f64 },
    Constant(f64),
    ClampedAffine { slope: f64, intercept: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSpec {
    pub tol: f64,
    pub ode_step: f64,
    pub quad_step: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            tol: 1e-10,
            ode_step: 1e-3,
            quad_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct McSpec {
    pub n_paths: u64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for McSpec {
    fn default() -> Self {
        McSpec {
            n_paths: 100_000,
            seed: 1,
            workers: 1,
        }
    }
}

/// On-disk problem specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: Kind,
    pub coefficients: CoefficientSpec,
    pub psi: PsiSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub mc: McSpec,
}

/// A parsed, validated problem ready for the solvers.
pub struct Problem {
    pub kind: Kind,
    pub f: CoefficientField,
    pub jump: CoefficientField,
    pub psi: BoundaryMap,
    /// Present when the coefficient family is linear; enables the
    /// closed-form backends.
    pub linear: Option<LinearCoefficients>,
    pub solver: SolverSpec,
    pub mc: McSpec,
}

impl Problem {
    pub fn bvp_options(&self) -> BvpOptions {
        BvpOptions::default()
            .with_tol(self.solver.tol)
            .with_ode_step(self.solver.ode_step)
    }
}

impl ProblemSpec {
    pub fn from_file(path: &std::path::Path) -> anyhow::Result<ProblemSpec> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading spec file {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn build(&self) -> anyhow::Result<Problem> {
        let (f, jump, linear) = match &self.coefficients {
            CoefficientSpec::Linear {
                f1,
                f2,
                big_f1,
                big_f2,
            } => {
                let lc = LinearCoefficients::new(
                    f1.clone(),
                    f2.clone(),
                    big_f1.clone(),
                    big_f2.clone(),
                );
                match self.kind {
                    Kind::Forward | Kind::Skorohod => {
                        if big_f2.lower_bound() < -1.0 {
                            bail!(
                                "linear family requires F2 >= -1 for forward problems \
                                 (declared lower bound {})",
                                big_f2.lower_bound()
                            );
                        }
                    }
                    Kind::Backward => {
                        if big_f2.upper_bound() >= 1.0 {
                            bail!(
                                "linear family requires F2 < 1 for backward problems \
                                 (declared upper bound {})",
                                big_f2.upper_bound()
                            );
                        }
                    }
                }
                (lc.drift_field(), lc.jump_field(), Some(lc))
            }
            CoefficientSpec::Preset { name } => {
                let (f, jump) = preset_fields(name)?;
                (f, jump, None)
            }
        };
        let psi = match &self.psi {
            PsiSpec::Affine { slope, intercept } => BoundaryMap::affine(*slope, *intercept),
            PsiSpec::Constant(c) => BoundaryMap::constant(*c),
            PsiSpec::ClampedAffine {
                slope,
                intercept,
                lo,
                hi,
            } => {
                if lo > hi {
                    bail!("clamped_affine needs lo <= hi");
                }
                BoundaryMap::clamped_affine(*slope, *intercept, *lo, *hi)
            }
        };
        if self.kind == Kind::Skorohod && psi.bound.is_none() {
            bail!("anticipating problems need a bounded psi (constant or clamped_affine)");
        }
        Ok(Problem {
            kind: self.kind,
            f,
            jump,
            psi,
            linear,
            solver: self.solver,
            mc: self.mc,
        })
    }
}

/// Named coefficient presets. These may deliberately sit outside the
/// validated linear envelopes (the sign-flipping pair demonstrates the
/// pathological boundary couplings).
fn preset_fields(name: &str) -> anyhow::Result<(CoefficientField, CoefficientField)> {
    match name {
        // f(t,x) = x, F(t,x) = -2x: each jump flips the sign of the state.
        "flip_flop" => Ok((
            CoefficientField::linear(TimeFn::zero(), TimeFn::Const(1.0)),
            CoefficientField::linear(TimeFn::zero(), TimeFn::Const(-2.0)),
        )),
        // Smooth nonlinear pair with declared partials and constants.
        "sine_drift" => {
            let f = CoefficientField::from_fn(|_, x| 0.5 + 0.8 * x.sin())
                .with_d1(|_, _| 0.0)
                .with_d2(|_, x| 0.8 * x.cos())
                .with_lipschitz(0.8)
                .with_sup_at_zero(0.5)
                .with_lower_slope(-0.8);
            let jump = CoefficientField::from_fn(|t, x| 0.4 * t + 0.3 * x.tanh())
                .with_d1(|_, _| 0.4)
                .with_d2(|_, x| 0.3 / x.cosh().powi(2))
                .with_lipschitz(0.3)
                .with_sup_at_zero(0.4)
                .with_lower_slope(0.0)
                .with_envelopes(TimeFn::Const(0.0), TimeFn::Const(0.3));
            Ok((f, jump))
        }
        // Drift with a kink: no analytic partials on purpose.
        "kink_drift" => Ok((
            CoefficientField::from_fn(|_, x| 0.5 * x.abs())
                .with_lipschitz(0.5)
                .with_sup_at_zero(0.0),
            CoefficientField::constant(0.3),
        )),
        other => bail!("unknown preset {other:?}"),
    }
}
