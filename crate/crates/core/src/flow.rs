//! Deterministic and jump-driven stochastic flows.
//!
//! Between jumps the state follows dy/dt = f(t, y), integrated by classical
//! RK4 on a fixed grid; at each jump instant r the state maps through
//! y -> y + F(r, y). All derivative formulas (in x, in t, in the jump
//! instants) are evaluated analytically along the stored grid, with
//! Simpson weights for the exponent integrals.

use crate::error::{Error, Result};
use crate::path::JumpPath;
use crate::quad::simpson_grid;
use crate::timefn::TimeFn;
use crate::traj::{JumpValues, SegmentGrid};
use std::fmt;
use std::sync::Arc;

type Field2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A coefficient (t, x) -> R with optional analytic partials and declared
/// regularity constants.
#[derive(Clone)]
pub struct CoefficientField {
    eval: Field2,
    d1: Option<Field2>,
    d2: Option<Field2>,
    /// K: |g(t,x) - g(t,y)| <= K |x - y|.
    pub lipschitz: Option<f64>,
    /// M: sup_t |g(t, 0)|.
    pub sup_at_zero: Option<f64>,
    /// k2: g(t,x) - g(t,y) >= k2 (x - y) for x > y.
    pub lower_slope: Option<f64>,
    /// alpha(t): per-time upper slope envelope.
    pub upper_env: Option<TimeFn>,
    /// beta(t): per-time lower slope envelope.
    pub lower_env: Option<TimeFn>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("has_d1", &self.d1.is_some())
            .field("has_d2", &self.d2.is_some())
            .field("lipschitz", &self.lipschitz)
            .field("sup_at_zero", &self.sup_at_zero)
            .field("lower_slope", &self.lower_slope)
            .finish()
    }
}

impl CoefficientField {
    pub fn from_fn<F>(eval: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        CoefficientField {
            eval: Arc::new(eval),
            d1: None,
            d2: None,
            lipschitz: None,
            sup_at_zero: None,
            lower_slope: None,
            upper_env: None,
            lower_env: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        CoefficientField::from_fn(move |_, _| c)
            .with_d1(|_, _| 0.0)
            .with_d2(|_, _| 0.0)
            .with_lipschitz(0.0)
            .with_sup_at_zero(c.abs())
            .with_lower_slope(0.0)
            .with_envelopes(TimeFn::zero(), TimeFn::zero())
    }

    pub fn zero() -> Self {
        CoefficientField::constant(0.0)
    }

    /// g(t, x) = g1(t) + g2(t) x, with partials and constants derived from
    /// the rigorous range bounds of the time coefficients.
    pub fn linear(g1: TimeFn, g2: TimeFn) -> Self {
        let (e1, e2) = (g1.clone(), g2.clone());
        let (d1a, d1b) = (g1.derivative(), g2.derivative());
        let d2g = g2.clone();
        CoefficientField {
            eval: Arc::new(move |t, x| e1.eval(t) + e2.eval(t) * x),
            d1: Some(Arc::new(move |t, x| d1a.eval(t) + d1b.eval(t) * x)),
            d2: Some(Arc::new(move |t, _| d2g.eval(t))),
            lipschitz: Some(g2.abs_bound()),
            sup_at_zero: Some(g1.abs_bound()),
            lower_slope: Some(g2.lower_bound()),
            upper_env: Some(g2.clone()),
            lower_env: Some(g2),
        }
    }

    pub fn with_d1<F>(mut self, d1: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.d1 = Some(Arc::new(d1));
        self
    }

    pub fn with_d2<F>(mut self, d2: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.d2 = Some(Arc::new(d2));
        self
    }

    pub fn with_lipschitz(mut self, k: f64) -> Self {
        self.lipschitz = Some(k);
        self
    }

    pub fn with_sup_at_zero(mut self, m: f64) -> Self {
        self.sup_at_zero = Some(m);
        self
    }

    pub fn with_lower_slope(mut self, k2: f64) -> Self {
        self.lower_slope = Some(k2);
        self
    }

    pub fn with_envelopes(mut self, lower: TimeFn, upper: TimeFn) -> Self {
        self.lower_env = Some(lower);
        self.upper_env = Some(upper);
        self
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        (self.eval)(t, x)
    }

    /// Analytic time partial; errors when undeclared.
    pub fn d1(&self, t: f64, x: f64) -> Result<f64> {
        match &self.d1 {
            Some(d) => Ok(d(t, x)),
            None => Err(Error::MissingCapability(
                "time partial d1 not declared".into(),
            )),
        }
    }

    /// Analytic state partial; errors when undeclared.
    pub fn d2(&self, t: f64, x: f64) -> Result<f64> {
        match &self.d2 {
            Some(d) => Ok(d(t, x)),
            None => Err(Error::MissingCapability(
                "state partial d2 not declared".into(),
            )),
        }
    }

    pub fn has_d1(&self) -> bool {
        self.d1.is_some()
    }

    pub fn has_d2(&self) -> bool {
        self.d2.is_some()
    }

    /// Spot-check the declared Lipschitz constant and lower slope on a
    /// (t, x) grid; returns the first violating pair found.
    pub fn validate_slopes_on_grid(
        &self,
        x_range: (f64, f64),
        nt: usize,
        nx: usize,
    ) -> Option<(f64, f64, f64)> {
        let (xlo, xhi) = x_range;
        for i in 0..=nt {
            let t = i as f64 / nt as f64;
            for a in 0..nx {
                let x = xlo + (xhi - xlo) * a as f64 / nx as f64;
                let y = xlo + (xhi - xlo) * (a + 1) as f64 / nx as f64;
                let dg = self.eval(t, y) - self.eval(t, x);
                let dx = y - x;
                if let Some(k) = self.lipschitz {
                    if dg.abs() > k * dx + 1e-9 {
                        return Some((t, x, y));
                    }
                }
                if let Some(k2) = self.lower_slope {
                    if dg < k2 * dx - 1e-9 {
                        return Some((t, x, y));
                    }
                }
            }
        }
        None
    }
}

/// A scalar field G(t, x) with both partials, for the change-of-variables
/// functional.
#[derive(Clone)]
pub struct SmoothField {
    pub g: Field2,
    pub d1: Field2,
    pub d2: Field2,
}

impl SmoothField {
    pub fn new<G, D1, D2>(g: G, d1: D1, d2: D2) -> Self
    where
        G: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        SmoothField {
            g: Arc::new(g),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
        }
    }
}

/// Value of a stochastic flow evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FlowResult {
    pub value: f64,
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub jump_count: usize,
}

#[inline]
fn rk4_step(f: &CoefficientField, t: f64, y: f64, h: f64) -> f64 {
    let k1 = f.eval(t, y);
    let k2 = f.eval(t + 0.5 * h, y + 0.5 * h * k1);
    let k3 = f.eval(t + 0.5 * h, y + 0.5 * h * k2);
    let k4 = f.eval(t + h, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn step_count(len: f64, h_max: f64) -> usize {
    // Even count so segment grids carry Simpson weights directly.
    let n = (len / h_max).ceil() as usize;
    n.max(2).next_multiple_of(2)
}

/// RK4 over a smooth span, value only.
pub(crate) fn rk4_value(
    f: &CoefficientField,
    t0: f64,
    t1: f64,
    y0: f64,
    h_max: f64,
) -> Result<f64> {
    if t1 <= t0 {
        return Ok(y0);
    }
    let n = step_count(t1 - t0, h_max);
    let h = (t1 - t0) / n as f64;
    let mut y = y0;
    for i in 0..n {
        y = rk4_step(f, t0 + i as f64 * h, y, h);
        if !y.is_finite() {
            return Err(Error::NumericalOverflow {
                t: t0 + (i + 1) as f64 * h,
            });
        }
    }
    Ok(y)
}

/// RK4 over a smooth span with dense output.
pub(crate) fn rk4_dense(
    f: &CoefficientField,
    t0: f64,
    t1: f64,
    y0: f64,
    h_max: f64,
) -> Result<SegmentGrid> {
    if t1 <= t0 {
        return Ok(SegmentGrid {
            t0,
            t1: t0,
            ys: vec![y0],
            slopes: vec![f.eval(t0, y0)],
        });
    }
    let n = step_count(t1 - t0, h_max);
    let h = (t1 - t0) / n as f64;
    let mut ys = Vec::with_capacity(n + 1);
    let mut slopes = Vec::with_capacity(n + 1);
    let mut y = y0;
    ys.push(y);
    slopes.push(f.eval(t0, y));
    for i in 0..n {
        let t = t0 + i as f64 * h;
        y = rk4_step(f, t, y, h);
        if !y.is_finite() {
            return Err(Error::NumericalOverflow { t: t + h });
        }
        ys.push(y);
        slopes.push(f.eval(t + h, y));
    }
    Ok(SegmentGrid { t0, t1, ys, slopes })
}

/// Solution of the deterministic equation dy/dr = f(r, y), y(s) = x,
/// evaluated at time t.
pub fn det_flow(f: &CoefficientField, s: f64, t: f64, x: f64, ode_step: f64) -> Result<f64> {
    check_span(s, t, ode_step)?;
    rk4_value(f, s, t, x, ode_step)
}

/// Partial derivatives (d/ds, d/dt, d/dx) of the deterministic flow.
///
/// d/dt is f at the endpoint, d/dx is exp of the integrated state partial
/// along the trajectory, and d/ds is -f(s, x) times that exponential.
pub fn det_flow_partials(
    f: &CoefficientField,
    s: f64,
    t: f64,
    x: f64,
    ode_step: f64,
) -> Result<(f64, f64, f64)> {
    check_span(s, t, ode_step)?;
    if !f.has_d2() {
        return Err(Error::MissingCapability(
            "det_flow_partials needs the state partial of f".into(),
        ));
    }
    let grid = rk4_dense(f, s, t, x, ode_step)?;
    let d_x = integral_of(&grid, |r, y| f.d2(r, y).unwrap()).exp();
    let end = grid.end_value();
    Ok((-f.eval(s, x) * d_x, f.eval(t, end), d_x))
}

fn check_span(s: f64, t: f64, ode_step: f64) -> Result<()> {
    if !(0.0 <= s && s <= t && t <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= s <= t <= 1, got s = {s}, t = {t}"
        )));
    }
    if !ode_step.is_finite() || ode_step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ode_step must be positive, got {ode_step}"
        )));
    }
    Ok(())
}

/// Simpson-weighted integral of `g(t, y)` along a segment grid.
pub(crate) fn integral_of<G: FnMut(f64, f64) -> f64>(seg: &SegmentGrid, mut g: G) -> f64 {
    if seg.ys.len() < 3 {
        return 0.0;
    }
    let vals: Vec<f64> = seg.nodes().map(|(t, y)| g(t, y)).collect();
    simpson_grid(&vals, seg.step())
}

/// Pathwise flow over `path`: the deterministic flow between consecutive
/// jumps in (s, t], with the jump map applied at each one (jumps exactly at
/// t included).
pub fn forward_flow(
    f: &CoefficientField,
    big_f: &CoefficientField,
    path: &JumpPath,
    s: f64,
    t: f64,
    x: f64,
    ode_step: f64,
) -> Result<FlowResult> {
    check_span(s, t, ode_step)?;
    let jumps = path.jumps_in(s, t);
    let mut y = x;
    let mut prev = s;
    for &u in jumps {
        y = rk4_value(f, prev, u, y, ode_step)?;
        y += big_f.eval(u, y);
        if !y.is_finite() {
            return Err(Error::NumericalOverflow { t: u });
        }
        prev = u;
    }
    y = rk4_value(f, prev, t, y, ode_step)?;
    Ok(FlowResult {
        value: y,
        s,
        t,
        x,
        jump_count: jumps.len(),
    })
}

/// As `forward_flow`, but records dense segments and one-sided jump values.
pub fn forward_flow_dense(
    f: &CoefficientField,
    big_f: &CoefficientField,
    path: &JumpPath,
    s: f64,
    t: f64,
    x: f64,
    ode_step: f64,
) -> Result<(Vec<SegmentGrid>, Vec<JumpValues>)> {
    check_span(s, t, ode_step)?;
    let jumps = path.jumps_in(s, t);
    let mut segments = Vec::with_capacity(jumps.len() + 1);
    let mut jump_values = Vec::with_capacity(jumps.len());
    let mut y = x;
    let mut prev = s;
    for &u in jumps {
        let seg = rk4_dense(f, prev, u, y, ode_step)?;
        let left = seg.end_value();
        let right = left + big_f.eval(u, left);
        if !right.is_finite() {
            return Err(Error::NumericalOverflow { t: u });
        }
        segments.push(seg);
        jump_values.push(JumpValues {
            time: u,
            left,
            right,
        });
        y = right;
        prev = u;
    }
    segments.push(rk4_dense(f, prev, t, y, ode_step)?);
    Ok((segments, jump_values))
}

/// d(flow)/dx along the path: exp of the integrated drift slope times the
/// product of (1 + jump slope at the left limit) over the jumps in (s, t].
pub fn flow_x_derivative(
    f: &CoefficientField,
    big_f: &CoefficientField,
    path: &JumpPath,
    s: f64,
    t: f64,
    x: f64,
    ode_step: f64,
) -> Result<f64> {
    require_state_partials(f, big_f)?;
    let (segments, jumps) = forward_flow_dense(f, big_f, path, s, t, x, ode_step)?;
    let mut integ = 0.0;
    for seg in &segments {
        integ += integral_of(seg, |r, y| f.d2(r, y).unwrap());
    }
    let mut prod = 1.0;
    for jv in &jumps {
        prod *= 1.0 + big_f.d2(jv.time, jv.left)?;
    }
    Ok(integ.exp() * prod)
}

fn require_state_partials(f: &CoefficientField, big_f: &CoefficientField) -> Result<()> {
    if !f.has_d2() || !big_f.has_d2() {
        return Err(Error::MissingCapability(
            "flow derivatives need state partials of f and F".into(),
        ));
    }
    Ok(())
}

/// d(flow)/d(s_j): sensitivity of the flow value to the j-th jump instant
/// of `path` (0-based over the whole path). Zero when the jump lies beyond
/// t; an error when it lies at or before s.
#[allow(clippy::too_many_arguments)]
pub fn flow_jump_derivative(
    f: &CoefficientField,
    big_f: &CoefficientField,
    path: &JumpPath,
    s: f64,
    t: f64,
    x: f64,
    j: usize,
    ode_step: f64,
) -> Result<f64> {
    require_state_partials(f, big_f)?;
    if !big_f.has_d1() {
        return Err(Error::MissingCapability(
            "flow_jump_derivative needs the time partial of F".into(),
        ));
    }
    let sj = *path.times().get(j).ok_or_else(|| {
        Error::InvalidArgument(format!("jump index {j} out of range"))
    })?;
    if sj > t {
        return Ok(0.0);
    }
    if sj <= s {
        return Err(Error::InvalidArgument(format!(
            "jump {j} at {sj} lies outside (s, t] = ({s}, {t}]"
        )));
    }
    let (segments, jumps) = forward_flow_dense(f, big_f, path, s, t, x, ode_step)?;
    // Local position of s_j among the jumps in (s, t].
    let q = jumps
        .iter()
        .position(|jv| jv.time == sj)
        .expect("jump inside (s, t] must have been recorded");
    let mut integ = 0.0;
    for seg in &segments[q + 1..] {
        integ += integral_of(seg, |r, y| f.d2(r, y).unwrap());
    }
    let mut prod = 1.0;
    for jv in &jumps[q + 1..] {
        prod *= 1.0 + big_f.d2(jv.time, jv.left)?;
    }
    let jv = &jumps[q];
    let bracket = -f.eval(sj, jv.right)
        + big_f.d1(sj, jv.left)?
        + f.eval(sj, jv.left) * (1.0 + big_f.d2(sj, jv.left)?);
    Ok(integ.exp() * prod * bracket)
}

/// Residual of the pathwise change-of-variables identity for a smooth G:
/// |G(t, flow) - G(s, x) - int [dG/dr + dG/dx f] dr - sum of jump increments|.
///
/// A self-test functional, not a solver.
#[allow(clippy::too_many_arguments)]
pub fn verify_change_of_variables(
    g: &SmoothField,
    f: &CoefficientField,
    big_f: &CoefficientField,
    path: &JumpPath,
    s: f64,
    t: f64,
    x: f64,
    ode_step: f64,
) -> Result<f64> {
    let (segments, jumps) = forward_flow_dense(f, big_f, path, s, t, x, ode_step)?;
    let mut integ = 0.0;
    for seg in &segments {
        integ += integral_of(seg, |r, y| (g.d1)(r, y) + (g.d2)(r, y) * f.eval(r, y));
    }
    let mut jump_sum = 0.0;
    for jv in &jumps {
        jump_sum += (g.g)(jv.time, jv.right) - (g.g)(jv.time, jv.left);
    }
    let end = segments.last().unwrap().end_value();
    Ok(((g.g)(t, end) - (g.g)(s, x) - integ - jump_sum).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{sample_conditional, PathRng};

    const H: f64 = 1e-3;

    #[test]
    fn det_flow_trivial_and_exponential() {
        let zero = CoefficientField::zero();
        assert_eq!(det_flow(&zero, 0.2, 0.9, 1.5, H).unwrap(), 1.5);

        let lin = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(1.0));
        let e = det_flow(&lin, 0.0, 1.0, 1.0, H).unwrap();
        assert!((e - std::f64::consts::E).abs() < 1e-8, "got {e}");

        // Pure quadrature: f depends on t only.
        let two = CoefficientField::linear(TimeFn::Const(2.0), TimeFn::zero());
        assert!((det_flow(&two, 0.0, 0.5, 0.0, H).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn det_flow_partials_match_exponential_case() {
        let zero = CoefficientField::zero();
        let (ds, dt, dx) = det_flow_partials(&zero, 0.1, 0.8, 2.0, H).unwrap();
        assert_eq!((ds, dt, dx), (0.0, 0.0, 1.0));

        let lin = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(1.0));
        let (_, _, dx) = det_flow_partials(&lin, 0.0, 1.0, 1.0, H).unwrap();
        assert!((dx - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn det_flow_partials_match_finite_differences() {
        // 50 random bounded instances with quadratic-in-x drift.
        for i in 0..50u64 {
            let mut rng = PathRng::new(71, i);
            let a = rng.uniform_in(-1.0, 1.0);
            let b = rng.uniform_in(-1.0, 1.0);
            let c = rng.uniform_in(-0.4, 0.4);
            let f = CoefficientField::from_fn(move |t, x| a + b * x + c * x * x * (1.0 - t))
                .with_d2(move |t, x| b + 2.0 * c * x * (1.0 - t));
            let s = rng.uniform_in(0.0, 0.4);
            let t = rng.uniform_in(s + 0.2, 1.0);
            let x = rng.uniform_in(-1.0, 1.0);
            let (ds, dt, dx) = det_flow_partials(&f, s, t, x, H).unwrap();
            let h = 1e-6;
            let fd_s = (det_flow(&f, s + h, t, x, H).unwrap()
                - det_flow(&f, s - h, t, x, H).unwrap())
                / (2.0 * h);
            let fd_t = (det_flow(&f, s, t + h, x, H).unwrap()
                - det_flow(&f, s, t - h, x, H).unwrap())
                / (2.0 * h);
            let fd_x = (det_flow(&f, s, t, x + h, H).unwrap()
                - det_flow(&f, s, t, x - h, H).unwrap())
                / (2.0 * h);
            for (an, fd) in [(ds, fd_s), (dt, fd_t), (dx, fd_x)] {
                let denom = fd.abs().max(1e-3);
                assert!(
                    ((an - fd) / denom).abs() < 1e-4,
                    "instance {i}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn forward_flow_reduces_to_det_flow_without_jumps() {
        let f = CoefficientField::linear(TimeFn::Const(0.3), TimeFn::Const(-0.7));
        let path = JumpPath::new(vec![0.4, 0.9]).unwrap();
        let zero = CoefficientField::zero();
        let with = forward_flow(&f, &zero, &path, 0.0, 1.0, 1.0, H).unwrap();
        let without = det_flow(&f, 0.0, 1.0, 1.0, H).unwrap();
        assert!((with.value - without).abs() < 1e-12);
        assert_eq!(with.jump_count, 2);
    }

    #[test]
    fn sign_flipping_jump_flow_closed_form() {
        // f(t,x) = x, F(t,x) = -2x gives value x e^t (-1)^{N_t}.
        let f = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(1.0));
        let big_f = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(-2.0));
        for (times, x, t) in [
            (vec![0.25], 1.3, 1.0),
            (vec![0.2, 0.6], -0.4, 1.0),
            (vec![0.1, 0.5, 0.8], 2.0, 0.9),
        ] {
            let path = JumpPath::new(times).unwrap();
            let n = path.count_jumps(0.0, t).unwrap() as i32;
            let got = forward_flow(&f, &big_f, &path, 0.0, t, x, H).unwrap().value;
            let expect = x * t.exp() * (-1f64).powi(n);
            assert!((got - expect).abs() < 1e-9, "got {got}, expect {expect}");
        }
    }

    #[test]
    fn time_dependent_jump_sizes_accumulate() {
        let zero = CoefficientField::zero();
        let big_f = CoefficientField::linear(TimeFn::Poly(vec![0.0, 1.0]), TimeFn::zero());
        let path = JumpPath::new(vec![0.3, 0.7]).unwrap();
        let v = forward_flow(&zero, &big_f, &path, 0.0, 1.0, 0.0, H).unwrap().value;
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jumps_at_the_right_endpoint_are_included() {
        let zero = CoefficientField::zero();
        let big_f = CoefficientField::constant(1.0);
        let path = JumpPath::new(vec![0.5, 1.0]).unwrap();
        let v = forward_flow(&zero, &big_f, &path, 0.0, 1.0, 0.0, H).unwrap().value;
        assert_eq!(v, 2.0);
        let half = forward_flow(&zero, &big_f, &path, 0.0, 0.5, 0.0, H).unwrap().value;
        assert_eq!(half, 1.0);
    }

    #[test]
    fn cadlag_jump_increment_equals_jump_coefficient_at_left_limit() {
        let f = CoefficientField::from_fn(|t, x| 0.5 * (x + t).cos());
        let big_f = CoefficientField::from_fn(|t, x| 0.3 * t - 0.4 * x.tanh());
        let path = JumpPath::new(vec![0.2, 0.5, 0.9]).unwrap();
        let (_, jumps) = forward_flow_dense(&f, &big_f, &path, 0.0, 1.0, 0.7, H).unwrap();
        for jv in &jumps {
            assert_eq!(jv.right - jv.left, big_f.eval(jv.time, jv.left));
        }
    }

    #[test]
    fn x_derivative_closed_form_and_fd() {
        let f = CoefficientField::zero();
        let big_f = CoefficientField::zero();
        let path = JumpPath::empty();
        assert_eq!(
            flow_x_derivative(&f, &big_f, &path, 0.0, 1.0, 0.0, H).unwrap(),
            1.0
        );

        let f = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(1.0));
        let big_f = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(-2.0));
        let path = JumpPath::new(vec![0.6]).unwrap();
        let d = flow_x_derivative(&f, &big_f, &path, 0.0, 1.0, 0.7, H).unwrap();
        assert!((d + std::f64::consts::E).abs() < 1e-8, "got {d}");
    }

    #[test]
    fn x_derivative_matches_finite_differences() {
        for i in 0..50u64 {
            let mut rng = PathRng::new(72, i);
            let b = rng.uniform_in(0.2, 1.0);
            let c = rng.uniform_in(-0.5, 0.8);
            let f = CoefficientField::from_fn(move |_, x| b * x.sin())
                .with_d2(move |_, x| b * x.cos());
            let big_f = CoefficientField::from_fn(move |t, x| c * x.tanh() + 0.3 * t)
                .with_d1(|_, _| 0.3)
                .with_d2(move |_, x| c / x.cosh().powi(2));
            let n_jumps = 1 + (i % 3) as usize;
            let path = sample_conditional(&mut rng, n_jumps, 1.0).unwrap();
            let x = rng.uniform_in(-1.5, 1.5);
            let an = flow_x_derivative(&f, &big_f, &path, 0.0, 1.0, x, H).unwrap();
            let h = 1e-6;
            let up = forward_flow(&f, &big_f, &path, 0.0, 1.0, x + h, H).unwrap().value;
            let dn = forward_flow(&f, &big_f, &path, 0.0, 1.0, x - h, H).unwrap().value;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                ((an - fd) / fd.abs().max(1e-3)).abs() < 1e-4,
                "instance {i}: {an} vs {fd}"
            );
        }
    }

    #[test]
    fn jump_derivative_special_cases() {
        // f = 0, F = t: bracket is 0 + 1 + 0.
        let zero = CoefficientField::zero();
        let big_f = CoefficientField::linear(TimeFn::Poly(vec![0.0, 1.0]), TimeFn::zero());
        let path = JumpPath::new(vec![0.3, 0.7]).unwrap();
        for j in 0..2 {
            let d = flow_jump_derivative(&zero, &big_f, &path, 0.0, 1.0, 0.0, j, H).unwrap();
            assert!((d - 1.0).abs() < 1e-12, "j={j}: {d}");
        }
        // Constant jump sizes: flow independent of jump instants.
        let cf = CoefficientField::constant(0.8);
        let d = flow_jump_derivative(&zero, &cf, &path, 0.0, 1.0, 0.0, 0, H).unwrap();
        assert_eq!(d, 0.0);
        // Beyond t the derivative vanishes.
        let d = flow_jump_derivative(&zero, &big_f, &path, 0.0, 0.5, 0.0, 1, H).unwrap();
        assert_eq!(d, 0.0);
        assert!(flow_jump_derivative(&zero, &big_f, &path, 0.35, 1.0, 0.0, 0, H).is_err());
    }

    #[test]
    fn jump_derivative_matches_finite_differences() {
        for i in 0..50u64 {
            let mut rng = PathRng::new(73, i);
            let a = rng.uniform_in(-0.5, 0.5);
            let b = rng.uniform_in(0.2, 0.9);
            let c = rng.uniform_in(-0.4, 0.7);
            let e = rng.uniform_in(-0.6, 0.6);
            let f = CoefficientField::from_fn(move |t, x| a + b * (x + t).sin())
                .with_d2(move |t, x| b * (x + t).cos());
            let big_f = CoefficientField::from_fn(move |t, x| e * t + c * x.tanh())
                .with_d1(move |_, _| e)
                .with_d2(move |_, x| c / x.cosh().powi(2));
            let n_jumps = 1 + (i % 3) as usize;
            let path = sample_conditional(&mut rng, n_jumps, 1.0).unwrap();
            let x = rng.uniform_in(-1.0, 1.0);
            for j in 0..n_jumps {
                let an =
                    flow_jump_derivative(&f, &big_f, &path, 0.0, 1.0, x, j, H).unwrap();
                let h = 1e-6;
                let sj = path.times()[j];
                let up = forward_flow(
                    &f, &big_f, &path.with_jump_moved(j, sj + h).unwrap(),
                    0.0, 1.0, x, H,
                )
                .unwrap()
                .value;
                let dn = forward_flow(
                    &f, &big_f, &path.with_jump_moved(j, sj - h).unwrap(),
                    0.0, 1.0, x, H,
                )
                .unwrap()
                .value;
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    ((an - fd) / fd.abs().max(1e-3)).abs() < 1e-4,
                    "instance {i} jump {j}: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn change_of_variables_identity() {
        let ident = SmoothField::new(|_, x| x, |_, _| 0.0, |_, _| 1.0);
        let f = CoefficientField::linear(TimeFn::Const(0.4), TimeFn::Const(-0.8));
        let big_f = CoefficientField::linear(TimeFn::Const(0.5), TimeFn::Const(0.3));
        let path = JumpPath::new(vec![0.2, 0.55, 0.9]).unwrap();
        let r = verify_change_of_variables(&ident, &f, &big_f, &path, 0.0, 1.0, 0.7, H).unwrap();
        assert!(r < 1e-8, "identity residual {r}");

        // G(t, x) = x^2 across random linear instances.
        let square = SmoothField::new(|_, x| x * x, |_, _| 0.0, |_, x| 2.0 * x);
        for i in 0..20u64 {
            let mut rng = PathRng::new(74, i);
            let f = CoefficientField::linear(
                TimeFn::Const(rng.uniform_in(-1.0, 1.0)),
                TimeFn::Const(rng.uniform_in(-1.0, 1.0)),
            );
            let big_f = CoefficientField::linear(
                TimeFn::Const(rng.uniform_in(-1.0, 1.0)),
                TimeFn::Const(rng.uniform_in(-0.8, 0.8)),
            );
            let path = {
                let mut r2 = PathRng::new(75, i);
                crate::path::sample_path(&mut r2, 1.0).unwrap()
            };
            let r =
                verify_change_of_variables(&square, &f, &big_f, &path, 0.0, 1.0, 0.5, H).unwrap();
            assert!(r < 1e-7, "instance {i} residual {r}");
        }
    }

    #[test]
    fn composition_property() {
        for i in 0..100u64 {
            let mut rng = PathRng::new(76, i);
            let f = CoefficientField::linear(
                TimeFn::Const(rng.uniform_in(-1.0, 1.0)),
                TimeFn::Const(rng.uniform_in(-1.0, 1.0)),
            );
            let big_f = CoefficientField::from_fn({
                let c = rng.uniform_in(-0.5, 0.5);
                move |_, x| c * x.cos()
            });
            let path = sample_conditional(&mut rng, 2, 1.0).unwrap();
            let s = rng.uniform_in(0.0, 0.3);
            let r = rng.uniform_in(s, 0.7);
            let t = rng.uniform_in(r, 1.0);
            let x = rng.uniform_in(-1.0, 1.0);
            let inner = forward_flow(&f, &big_f, &path, s, r, x, H).unwrap().value;
            let composed = forward_flow(&f, &big_f, &path, r, t, inner, H).unwrap().value;
            let direct = forward_flow(&f, &big_f, &path, s, t, x, H).unwrap().value;
            assert!(
                (composed - direct).abs() < 1e-8,
                "instance {i}: {composed} vs {direct}"
            );
        }
    }

    #[test]
    fn overflow_is_reported() {
        let f = CoefficientField::from_fn(|_, x: f64| x * x * 1e6 + 1e6);
        let err = det_flow(&f, 0.0, 1.0, 1.0, 1e-2).unwrap_err();
        assert!(matches!(err, Error::NumericalOverflow { .. }));
    }
}
