//! Closed-form solutions for linear equations.
//!
//! With coefficients f(t,x) = f1(t) + f2(t) x and F(t,x) = F1(t) + F2(t) x
//! the pathwise solution telescopes through the jumps: writing
//! A(t) = exp(int_0^t f2), the ratio X_t / A(t) grows by int f1/A between
//! jumps and the jump map is affine. The solution at any time is therefore
//! affine in the initial value, which reduces the boundary problem to a
//! scalar root on a closed form. These solvers double as the exactness
//! oracle for the generic RK4-based ones.

use crate::bvp::{find_root, BoundaryMap, BvpOptions, PathwiseSolver};
use crate::det_flow;
use crate::error::{Error, Result};
use crate::flow::CoefficientField;
use crate::path::JumpPath;
use crate::quad::CumIntegral;
use crate::timefn::TimeFn;
use crate::traj::{JumpValues, SegmentGrid, Trajectory, TrajectoryKind};

/// Linear coefficient quadruple.
#[derive(Debug, Clone)]
pub struct LinearCoefficients {
    pub f1: TimeFn,
    pub f2: TimeFn,
    pub big_f1: TimeFn,
    pub big_f2: TimeFn,
}

impl LinearCoefficients {
    pub fn new(f1: TimeFn, f2: TimeFn, big_f1: TimeFn, big_f2: TimeFn) -> Self {
        LinearCoefficients {
            f1,
            f2,
            big_f1,
            big_f2,
        }
    }

    pub fn constants(f1: f64, f2: f64, big_f1: f64, big_f2: f64) -> Self {
        LinearCoefficients::new(
            TimeFn::Const(f1),
            TimeFn::Const(f2),
            TimeFn::Const(big_f1),
            TimeFn::Const(big_f2),
        )
    }

    /// Drift field f1(t) + f2(t) x with declared constants.
    pub fn drift_field(&self) -> CoefficientField {
        CoefficientField::linear(self.f1.clone(), self.f2.clone())
    }

    /// Jump field F1(t) + F2(t) x with declared constants and envelope.
    pub fn jump_field(&self) -> CoefficientField {
        CoefficientField::linear(self.big_f1.clone(), self.big_f2.clone())
    }

    /// Tabulate the integral factors on [0, 1].
    pub fn factors(&self, quad_step: f64) -> LinearFactors {
        let n = ((1.0 / quad_step).ceil() as usize).clamp(512, 1 << 16);
        let cum_f2 = CumIntegral::build(|t| self.f2.eval(t), 0.0, 1.0, n);
        let cum_f1_over_a = {
            let c = &cum_f2;
            CumIntegral::build(|t| self.f1.eval(t) * (-c.eval(t)).exp(), 0.0, 1.0, n)
        };
        LinearFactors {
            lc: self.clone(),
            cum_f2,
            cum_f1_over_a,
        }
    }
}

/// Tabulated factors: A(t) = exp(int_0^t f2) and the running integral of
/// f1 / A, from which the fundamental solution eta and all path values
/// follow in O(jumps) per path.
#[derive(Debug, Clone)]
pub struct LinearFactors {
    lc: LinearCoefficients,
    cum_f2: CumIntegral,
    cum_f1_over_a: CumIntegral,
}

/// Affine representation (slope, intercept) of x0 -> X_t.
#[derive(Debug, Clone, Copy)]
struct AffineState {
    slope: f64,
    intercept: f64,
}

impl LinearFactors {
    pub fn coefficients(&self) -> &LinearCoefficients {
        &self.lc
    }

    /// A(t) = exp(int_0^t f2).
    pub fn a_factor(&self, t: f64) -> f64 {
        self.cum_f2.eval(t).exp()
    }

    /// eta_t = A(t) prod_{jumps u <= t} (1 + F2(u)).
    pub fn eta(&self, path: &JumpPath, t: f64) -> f64 {
        let mut prod = 1.0;
        for &u in path.jumps_in(0.0, t) {
            prod *= 1.0 + self.lc.big_f2.eval(u);
        }
        self.a_factor(t) * prod
    }

    /// int_s^t f1(r) / A(r) dr.
    pub fn drift_increment(&self, s: f64, t: f64) -> f64 {
        self.cum_f1_over_a.between(s, t)
    }

    /// Walk the path once, reporting x0 -> X_t as (slope, intercept) at each
    /// requested time (nondecreasing). `backward` switches the jump map to
    /// the post-jump form X_u = (X_{u-} + F1(u)) / (1 - F2(u)).
    fn affine_at(&self, path: &JumpPath, times: &[f64], backward: bool) -> Result<Vec<(f64, f64)>> {
        debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        let mut out = Vec::with_capacity(times.len());
        let mut state = AffineState {
            slope: 1.0,
            intercept: 0.0,
        };
        let mut seg_start = 0.0;
        let mut jumps = path.times().iter().copied().peekable();
        for &tq in times {
            while let Some(&u) = jumps.peek() {
                if u > tq {
                    break;
                }
                state = self.advance(state, seg_start, u);
                state = self.apply_jump(state, u, backward)?;
                seg_start = u;
                jumps.next();
            }
            out.push(self.advance(state, seg_start, tq).into());
        }
        Ok(out)
    }

    /// Evolve through the smooth span [s, t]: X/A picks up int f1/A.
    fn advance(&self, state: AffineState, s: f64, t: f64) -> AffineState {
        let ratio = (self.cum_f2.between(s, t)).exp();
        AffineState {
            slope: state.slope * ratio,
            intercept: ratio * state.intercept + self.a_factor(t) * self.drift_increment(s, t),
        }
    }

    fn apply_jump(&self, state: AffineState, u: f64, backward: bool) -> Result<AffineState> {
        let f1 = self.lc.big_f1.eval(u);
        let f2 = self.lc.big_f2.eval(u);
        if backward {
            if f2 >= 1.0 {
                return Err(Error::PreconditionViolated(format!(
                    "backward linear solution needs F2 < 1, got F2({u}) = {f2}"
                )));
            }
            Ok(AffineState {
                slope: state.slope / (1.0 - f2),
                intercept: (state.intercept + f1) / (1.0 - f2),
            })
        } else {
            Ok(AffineState {
                slope: state.slope * (1.0 + f2),
                intercept: f1 + (1.0 + f2) * state.intercept,
            })
        }
    }
}

impl From<AffineState> for (f64, f64) {
    fn from(s: AffineState) -> Self {
        (s.slope, s.intercept)
    }
}

/// Forward initial-value solution by the telescoped closed form.
pub fn solve_linear_forward(
    lc: &LinearCoefficients,
    path: &JumpPath,
    x0: f64,
    quad_step: f64,
) -> Result<Trajectory> {
    let factors = lc.factors(quad_step);
    linear_trajectory(&factors, path, x0, false, quad_step, TrajectoryKind::Forward)
}

/// Forward solution value at one time, O(jumps) after factor tabulation.
pub fn linear_flow_value(factors: &LinearFactors, path: &JumpPath, x0: f64, t: f64) -> f64 {
    let (m, c) = factors.affine_at(path, &[t], false).expect("forward jump map is total")[0];
    m * x0 + c
}

/// The eta-form representation of the forward solution; valid when
/// 1 + F2 does not vanish at any jump of the path.
pub fn eta_form_value(
    factors: &LinearFactors,
    path: &JumpPath,
    x0: f64,
    t: f64,
) -> Result<f64> {
    let mut drift = 0.0;
    let mut jump_sum = 0.0;
    let mut prod = 1.0;
    let mut seg_start = 0.0;
    for &u in path.jumps_in(0.0, t) {
        drift += factors.drift_increment(seg_start, u) / prod;
        let f2 = factors.lc.big_f2.eval(u);
        if f2 == -1.0 {
            return Err(Error::PreconditionViolated(format!(
                "eta form invalid: 1 + F2({u}) = 0"
            )));
        }
        prod *= 1.0 + f2;
        jump_sum += factors.lc.big_f1.eval(u) / (factors.a_factor(u) * prod);
        seg_start = u;
    }
    drift += factors.drift_increment(seg_start, t) / prod;
    let eta_t = factors.a_factor(t) * prod;
    Ok(eta_t * (x0 + drift + jump_sum))
}

fn linear_trajectory(
    factors: &LinearFactors,
    path: &JumpPath,
    x0: f64,
    backward: bool,
    quad_step: f64,
    kind: TrajectoryKind,
) -> Result<Trajectory> {
    let mut segments = Vec::with_capacity(path.len() + 1);
    let mut jumps = Vec::with_capacity(path.len());
    let mut state = AffineState {
        slope: 1.0,
        intercept: 0.0,
    };
    let mut seg_start = 0.0;
    let value = |s: &AffineState| s.slope * x0 + s.intercept;
    let boundaries: Vec<f64> = path.times().iter().copied().chain([1.0]).collect();
    for (k, &end) in boundaries.iter().enumerate() {
        let n = (((end - seg_start) / quad_step).ceil() as usize).max(2).next_multiple_of(2);
        let mut ys = Vec::with_capacity(n + 1);
        let mut slopes = Vec::with_capacity(n + 1);
        if end > seg_start {
            let h = (end - seg_start) / n as f64;
            for i in 0..=n {
                let t = seg_start + i as f64 * h;
                let y = value(&factors.advance(state, seg_start, t));
                ys.push(y);
                slopes.push(factors.lc.f1.eval(t) + factors.lc.f2.eval(t) * y);
            }
        } else {
            let y = value(&state);
            ys.push(y);
            slopes.push(factors.lc.f1.eval(end) + factors.lc.f2.eval(end) * y);
        }
        segments.push(SegmentGrid {
            t0: seg_start,
            t1: end,
            ys,
            slopes,
        });
        if k < path.len() {
            state = factors.advance(state, seg_start, end);
            let left = value(&state);
            state = factors.apply_jump(state, end, backward)?;
            jumps.push(JumpValues {
                time: end,
                left,
                right: value(&state),
            });
            seg_start = end;
        }
    }
    Trajectory::new(x0, path.clone(), kind, segments, jumps)
}

/// Solve the linear forward boundary problem: x0 -> X_1 is affine with
/// nonnegative slope when F2 >= -1, so the fixed point is a monotone
/// scalar root on the closed form.
pub fn solve_linear_bvp(
    lc: &LinearCoefficients,
    psi: &BoundaryMap,
    path: &JumpPath,
    tol: f64,
    quad_step: f64,
) -> Result<Trajectory> {
    let factors = lc.factors(quad_step);
    let x0 = linear_bvp_root(&factors, psi, path, tol, false)?;
    linear_trajectory(&factors, path, x0, false, quad_step, TrajectoryKind::Forward)
}

/// Solve the linear backward boundary problem via its closed form
/// (requires F2 < 1 at the jumps).
pub fn solve_linear_backward(
    lc: &LinearCoefficients,
    psi: &BoundaryMap,
    path: &JumpPath,
    tol: f64,
    quad_step: f64,
) -> Result<Trajectory> {
    let factors = lc.factors(quad_step);
    let x0 = linear_bvp_root(&factors, psi, path, tol, true)?;
    linear_trajectory(&factors, path, x0, true, quad_step, TrajectoryKind::Backward)
}

fn linear_bvp_root(
    factors: &LinearFactors,
    psi: &BoundaryMap,
    path: &JumpPath,
    tol: f64,
    backward: bool,
) -> Result<f64> {
    let (m, c) = factors.affine_at(path, &[1.0], backward)?[0];
    let opts = BvpOptions {
        tol,
        ..BvpOptions::default()
    };
    find_root(
        |x| Ok(x - psi.eval(m * x + c)),
        (-1.0, 1.0),
        tol,
        &opts,
    )
}

/// Fixed point of the no-jump problem: the root of x - psi(Phi(0,1;x)),
/// with Phi the deterministic flow of the drift.
pub fn deterministic_fixed_point(
    f: &CoefficientField,
    psi: &BoundaryMap,
    tol: f64,
    ode_step: f64,
) -> Result<f64> {
    find_root(
        |x| Ok(x - psi.eval(det_flow(f, 0.0, 1.0, x, ode_step)?)),
        (-1.0, 1.0),
        tol,
        &BvpOptions {
            tol,
            ode_step,
            ..BvpOptions::default()
        },
    )
}

/// Closed-form linear solver backend for the Monte Carlo estimators.
pub struct LinearBvpSolver {
    factors: LinearFactors,
    psi: BoundaryMap,
    tol: f64,
    backward: bool,
}

impl LinearBvpSolver {
    pub fn forward(lc: &LinearCoefficients, psi: BoundaryMap, tol: f64, quad_step: f64) -> Self {
        LinearBvpSolver {
            factors: lc.factors(quad_step),
            psi,
            tol,
            backward: false,
        }
    }

    pub fn backward(lc: &LinearCoefficients, psi: BoundaryMap, tol: f64, quad_step: f64) -> Self {
        LinearBvpSolver {
            factors: lc.factors(quad_step),
            psi,
            tol,
            backward: true,
        }
    }

    pub fn factors(&self) -> &LinearFactors {
        &self.factors
    }
}

impl PathwiseSolver for LinearBvpSolver {
    fn values_at(&self, path: &JumpPath, times: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x0 = linear_bvp_root(&self.factors, &self.psi, path, self.tol, self.backward)?;
        let states = self.factors.affine_at(path, times, self.backward)?;
        Ok((x0, states.iter().map(|(m, c)| m * x0 + c).collect()))
    }
}
