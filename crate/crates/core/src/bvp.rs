//! Two-point boundary problems X_0 = psi(X_1) solved pathwise.
//!
//! Each path reduces the problem to a scalar root of g(x) = x - psi(flow_1(x)).
//! Under the standing hypotheses g is nondecreasing with a unique root, found
//! by bracket expansion and safeguarded (Brent) refinement. Degenerate
//! problems where g vanishes on an interval are detected by a width
//! heuristic; problems with no sign change up to the bracket cap are
//! reported as having no fixed point.
//!
//! Backward equations (jump integrands read the post-jump state) convert to
//! forward ones by replacing the jump coefficient F(t, x) with
//! F(t, A_t^{-1}(x)), where A_t(y) = y - F(t, y).

use crate::error::{Error, Result};
use crate::flow::{forward_flow, forward_flow_dense, CoefficientField};
use crate::path::JumpPath;
use crate::quad::brent_root;
use crate::traj::{Trajectory, TrajectoryKind};
use std::fmt;
use std::sync::Arc;

type Field1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The boundary map psi with its regularity metadata.
#[derive(Clone)]
pub struct BoundaryMap {
    eval: Field1,
    dpsi: Option<Field1>,
    pub monotone_nonincreasing: bool,
    /// sup |psi|, when psi is bounded.
    pub bound: Option<f64>,
    /// eta with psi(x) - psi(y) <= eta (x - y) for x > y.
    pub upper_slope: Option<f64>,
    /// eta with psi(x) - psi(y) >= eta (x - y) for x > y.
    pub lower_slope: Option<f64>,
}

impl fmt::Debug for BoundaryMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryMap")
            .field("monotone_nonincreasing", &self.monotone_nonincreasing)
            .field("bound", &self.bound)
            .field("upper_slope", &self.upper_slope)
            .finish()
    }
}

impl BoundaryMap {
    pub fn from_fn<F>(eval: F, monotone_nonincreasing: bool) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        BoundaryMap {
            eval: Arc::new(eval),
            dpsi: None,
            monotone_nonincreasing,
            bound: None,
            upper_slope: None,
            lower_slope: None,
        }
    }

    /// psi(x) = slope * x + intercept.
    pub fn affine(slope: f64, intercept: f64) -> Self {
        let mut m = BoundaryMap::from_fn(move |x| slope * x + intercept, slope <= 0.0);
        m.dpsi = Some(Arc::new(move |_| slope));
        m.upper_slope = Some(slope);
        m.lower_slope = Some(slope);
        m
    }

    pub fn constant(c: f64) -> Self {
        let mut m = BoundaryMap::affine(0.0, c);
        m.bound = Some(c.abs());
        m
    }

    /// Affine map clamped to [lo, hi]; bounded, with one-sided slopes.
    pub fn clamped_affine(slope: f64, intercept: f64, lo: f64, hi: f64) -> Self {
        assert!(lo <= hi);
        let mut m = BoundaryMap::from_fn(
            move |x| (slope * x + intercept).clamp(lo, hi),
            slope <= 0.0,
        );
        m.dpsi = Some(Arc::new(move |x| {
            let raw = slope * x + intercept;
            if raw > lo && raw < hi {
                slope
            } else {
                0.0
            }
        }));
        m.bound = Some(lo.abs().max(hi.abs()));
        m.upper_slope = Some(slope.max(0.0));
        m.lower_slope = Some(slope.min(0.0));
        m
    }

    pub fn with_derivative<F>(mut self, dpsi: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.dpsi = Some(Arc::new(dpsi));
        self
    }

    pub fn with_bound(mut self, b: f64) -> Self {
        self.bound = Some(b);
        self
    }

    pub fn with_slopes(mut self, lower: f64, upper: f64) -> Self {
        self.lower_slope = Some(lower);
        self.upper_slope = Some(upper);
        self
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        match &self.dpsi {
            Some(d) => Ok(d(x)),
            None => Err(Error::MissingCapability(
                "boundary map derivative not declared".into(),
            )),
        }
    }

    pub fn has_derivative(&self) -> bool {
        self.dpsi.is_some()
    }
}

/// Solver controls for pathwise boundary problems.
#[derive(Debug, Clone, Copy)]
pub struct BvpOptions {
    /// Fixed-point tolerance: both the bracket width and |g| at the root.
    pub tol: f64,
    /// RK4 step bound.
    pub ode_step: f64,
    /// Bracket expansion gives up past this magnitude.
    pub bracket_cap: f64,
    /// Degenerate detection: |g| < tol across a bracket wider than
    /// `degenerate_width_factor * tol` means "infinitely many solutions".
    pub degenerate_width_factor: f64,
}

impl Default for BvpOptions {
    fn default() -> Self {
        BvpOptions {
            tol: 1e-10,
            ode_step: 1e-3,
            bracket_cap: 1e12,
            degenerate_width_factor: 1e3,
        }
    }
}

impl BvpOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_ode_step(mut self, h: f64) -> Self {
        self.ode_step = h;
        self
    }
}

/// Root of a nondecreasing g with g(-inf) < 0 < g(+inf), from an initial
/// bracket. Expansion doubles the violating endpoint; refinement is
/// safeguarded interpolation (never leaves the bracket), stopping at width
/// and residual `tol`.
pub fn find_fixed_point<G>(g: G, tol: f64) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    find_root(g, (-1.0, 1.0), tol, &BvpOptions::default())
}

pub(crate) fn find_root<G>(
    mut g: G,
    initial: (f64, f64),
    tol: f64,
    opts: &BvpOptions,
) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = initial;
    let mut fa = g(a)?;
    let mut fb = g(b)?;
    // Degenerate screen on the initial bracket.
    if fa.abs() < tol && fb.abs() < tol && b - a > opts.degenerate_width_factor * tol {
        let mid = 0.5 * (a + b);
        if g(mid)?.abs() < tol {
            return Err(Error::MultipleSolutions {
                width: b - a,
                tol,
            });
        }
    }
    while fa > 0.0 {
        if a <= -opts.bracket_cap {
            return Err(Error::NoFixedPoint { left: a, right: b });
        }
        b = a;
        fb = fa;
        a = if a == 0.0 { -1.0 } else { 2.0 * a };
        fa = g(a)?;
    }
    while fb < 0.0 {
        if b >= opts.bracket_cap {
            return Err(Error::NoFixedPoint { left: a, right: b });
        }
        a = b;
        fa = fb;
        b = if b == 0.0 { 1.0 } else { 2.0 * b };
        fb = g(b)?;
    }
    brent_root(g, a, b, fa, fb, tol, Some(tol))
}

/// Solve the forward boundary problem on one path: X_0 is the root of
/// x - psi(flow_1(x)) and the trajectory is the flow restarted from it.
pub fn solve_forward_bvp(
    f: &CoefficientField,
    jump: &CoefficientField,
    psi: &BoundaryMap,
    path: &JumpPath,
    opts: &BvpOptions,
) -> Result<Trajectory> {
    let x0 = find_root(
        |x| Ok(x - psi.eval(forward_flow(f, jump, path, 0.0, 1.0, x, opts.ode_step)?.value)),
        (-1.0, 1.0),
        opts.tol,
        opts,
    )?;
    let (segments, jumps) = forward_flow_dense(f, jump, path, 0.0, 1.0, x0, opts.ode_step)?;
    Trajectory::new(x0, path.clone(), TrajectoryKind::Forward, segments, jumps)
}

/// Invert y -> A_r(y) = y - F(r, y) at level `y`, using the declared slope
/// envelope of F to size the bracket.
pub fn invert_jump_map(
    big_f: &CoefficientField,
    r: f64,
    y: f64,
    tol: f64,
) -> Result<f64> {
    let margin = jump_map_margin(big_f, r)?;
    let radius = big_f.eval(r, y).abs() / margin + 10.0 * tol + 1e-12;
    let (a, b) = (y - radius, y + radius);
    let h = |z: f64| -> Result<f64> { Ok(z - big_f.eval(r, z) - y) };
    let (fa, fb) = (h(a)?, h(b)?);
    brent_root(h, a, b, fa, fb, tol, None)
}

/// Slope margin of A_r away from zero (positive for either orientation).
fn jump_map_margin(big_f: &CoefficientField, r: f64) -> Result<f64> {
    if let Some(alpha) = &big_f.upper_env {
        let up = alpha.eval(r);
        if up < 1.0 {
            // A_r slope >= 1 - alpha(r) > 0: increasing.
            return Ok(1.0 - up);
        }
    }
    if let Some(beta) = &big_f.lower_env {
        let lo = beta.eval(r);
        if lo > 1.0 {
            // A_r slope <= 1 - beta(r) < 0: decreasing.
            return Ok(lo - 1.0);
        }
    }
    Err(Error::MissingCapability(
        "invert_jump_map needs a slope envelope with alpha < 1 or beta > 1".into(),
    ))
}

/// Outcome of the invertibility scan for the jump map y -> y - F(r, y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardVerdict {
    InvertibleIncreasing,
    InvertibleDecreasing,
    Violation { r: f64, x: f64, y: f64 },
}

/// Grid scan of the monotonicity of A_r(y) = y - F(r, y).
pub fn check_backward_existence(
    big_f: &CoefficientField,
    x_range: (f64, f64),
    nt: usize,
    nx: usize,
) -> BackwardVerdict {
    let (xlo, xhi) = x_range;
    let mut pos = false;
    let mut neg = false;
    for i in 0..=nt {
        let r = i as f64 / nt as f64;
        for a in 0..nx {
            let x = xlo + (xhi - xlo) * a as f64 / nx as f64;
            let y = xlo + (xhi - xlo) * (a + 1) as f64 / nx as f64;
            let d = (y - big_f.eval(r, y)) - (x - big_f.eval(r, x));
            let scale = (y - x).max(1e-12);
            if d.abs() <= 1e-10 * scale.max(1.0) {
                return BackwardVerdict::Violation { r, x, y };
            }
            if d > 0.0 {
                pos = true;
            } else {
                neg = true;
            }
            if pos && neg {
                return BackwardVerdict::Violation { r, x, y };
            }
        }
    }
    if pos {
        BackwardVerdict::InvertibleIncreasing
    } else {
        BackwardVerdict::InvertibleDecreasing
    }
}

/// Jump coefficient of the forward conversion: F~(t, x) = F(t, A_t^{-1}(x)).
///
/// The returned field keeps analytic partials when F declares them, via the
/// implicit function rule for the inverse.
pub fn converted_jump_field(big_f: &CoefficientField, inversion_tol: f64) -> CoefficientField {
    let inner = big_f.clone();
    let mut field = CoefficientField::from_fn(move |t, x| {
        let z = invert_jump_map(&inner, t, x, inversion_tol)
            .unwrap_or_else(|_| x + inner.eval(t, x));
        inner.eval(t, z)
    });
    // Slope envelope of F~ from the proof of the backward reduction:
    // beta/(1-beta) or beta/(1-alpha) below, alpha/(1-alpha) above.
    if let (Some(alpha), Some(beta)) = (big_f.upper_env.clone(), big_f.lower_env.clone()) {
        let am = alpha.upper_bound();
        let bm = beta.lower_bound();
        if am < 1.0 {
            let lower = if bm >= 0.0 {
                bm / (1.0 - bm)
            } else {
                bm / (1.0 - am)
            };
            let upper = am / (1.0 - am);
            field = field
                .with_lower_slope(lower)
                .with_lipschitz(upper.abs().max(lower.abs()));
        }
    }
    if let Some(m) = big_f.sup_at_zero {
        // |F~(t, 0)| = |F(t, A_t^{-1}(0))| is bounded in terms of M and the
        // envelope margin; a crude bound is enough for diagnostics.
        field = field.with_sup_at_zero(m);
    }
    field
}

/// Solve the backward boundary problem by converting to a forward one.
///
/// Requires the declared envelope alpha - 1 <= beta <= alpha < 1; the
/// returned trajectory satisfies the backward jump identity
/// X_s = X_{s-} + F(s, X_s) at every jump.
pub fn solve_backward_bvp(
    f: &CoefficientField,
    big_f: &CoefficientField,
    psi: &BoundaryMap,
    path: &JumpPath,
    opts: &BvpOptions,
) -> Result<Trajectory> {
    let (alpha, beta) = match (&big_f.upper_env, &big_f.lower_env) {
        (Some(a), Some(b)) => (a.clone(), b.clone()),
        _ => {
            return Err(Error::MissingCapability(
                "backward solve needs the slope envelope of F".into(),
            ))
        }
    };
    for i in 0..=64 {
        let t = i as f64 / 64.0;
        let (at, bt) = (alpha.eval(t), beta.eval(t));
        if !(at - 1.0 <= bt + 1e-12 && bt <= at + 1e-12 && at < 1.0) {
            return Err(Error::PreconditionViolated(format!(
                "backward envelope must satisfy alpha - 1 <= beta <= alpha < 1; \
                 at t = {t}: alpha = {at}, beta = {bt}"
            )));
        }
    }
    let inversion_tol = (opts.tol * 1e-2).max(1e-14);
    let converted = converted_jump_field(big_f, inversion_tol);
    let forward = solve_forward_bvp(f, &converted, psi, path, opts)?;
    Trajectory::new(
        forward.x0,
        forward.path.clone(),
        TrajectoryKind::Backward,
        forward.segments().to_vec(),
        forward.jumps().to_vec(),
    )
}

/// Per-path solver abstraction used by the Monte Carlo estimators.
pub trait PathwiseSolver: Sync {
    /// Solve on `path`; return X_0 and the solution at each requested time
    /// (times must be nondecreasing).
    fn values_at(&self, path: &JumpPath, times: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Generic forward-equation solver backend.
pub struct GenericBvpSolver {
    pub f: CoefficientField,
    pub jump: CoefficientField,
    pub psi: BoundaryMap,
    pub opts: BvpOptions,
}

impl PathwiseSolver for GenericBvpSolver {
    fn values_at(&self, path: &JumpPath, times: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x0 = find_root(
            |x| {
                Ok(x - self
                    .psi
                    .eval(forward_flow(&self.f, &self.jump, path, 0.0, 1.0, x, self.opts.ode_step)?.value))
            },
            (-1.0, 1.0),
            self.opts.tol,
            &self.opts,
        )?;
        let values = flow_values_at(&self.f, &self.jump, path, x0, times, self.opts.ode_step)?;
        Ok((x0, values))
    }
}

/// One forward pass recording the cadlag value at each requested time.
pub fn flow_values_at(
    f: &CoefficientField,
    jump: &CoefficientField,
    path: &JumpPath,
    x0: f64,
    times: &[f64],
    ode_step: f64,
) -> Result<Vec<f64>> {
    debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
    let mut values = Vec::with_capacity(times.len());
    let mut y = x0;
    let mut prev = 0.0;
    let mut jumps = path.times().iter().copied().peekable();
    for &tq in times {
        // Apply jumps at or before the query (cadlag convention).
        while let Some(&u) = jumps.peek() {
            if u > tq {
                break;
            }
            y = crate::flow::rk4_value(f, prev, u, y, ode_step)?;
            y += jump.eval(u, y);
            if !y.is_finite() {
                return Err(Error::NumericalOverflow { t: u });
            }
            prev = u;
            jumps.next();
        }
        y = crate::flow::rk4_value(f, prev, tq, y, ode_step)?;
        prev = tq;
        values.push(y);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timefn::TimeFn;

    fn opts() -> BvpOptions {
        BvpOptions::default()
    }

    #[test]
    fn trivial_reflection_has_constant_solution() {
        // f = F = 0, psi(x) = -x + 2: the fixed point of x = -x + 2.
        let zero = CoefficientField::zero();
        let psi = BoundaryMap::affine(-1.0, 2.0);
        let traj =
            solve_forward_bvp(&zero, &zero, &psi, &JumpPath::empty(), &opts()).unwrap();
        assert!((traj.x0 - 1.0).abs() < 1e-10);
        assert!((traj.value_at(0.37) - 1.0).abs() < 1e-10);
        assert!((traj.terminal_value() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn find_fixed_point_basics() {
        let r = find_fixed_point(|x| Ok(x - 1.0), 1e-10).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
        // Identically zero map: degenerate.
        let err = find_fixed_point(|_| Ok(0.0), 1e-10).unwrap_err();
        assert!(matches!(err, Error::MultipleSolutions { .. }));
        // Strictly positive map: no root anywhere.
        let err = find_fixed_point(|_| Ok(1.0), 1e-10).unwrap_err();
        assert!(matches!(err, Error::NoFixedPoint { .. }));
    }

    #[test]
    fn find_fixed_point_with_bounded_perturbation() {
        // g(x) = x + 3 + 0.8 sin(x): slope >= 1 - eta with eta = 0.8 < 1.
        let g = |x: f64| Ok(x + 3.0 + 0.8 * x.sin());
        let root = find_fixed_point(g, 1e-10).unwrap();
        // Independent dense-scan oracle.
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..4_000_000 {
            let x = -5.0 + 10.0 * i as f64 / 4_000_000.0;
            let v = (x + 3.0 + 0.8 * x.sin()).abs();
            if v < best.0 {
                best = (v, x);
            }
        }
        assert!((root - best.1).abs() < 1e-5, "root {root} vs scan {}", best.1);
        assert!((root + 3.0 + 0.8 * root.sin()).abs() < 1e-10);
    }

    #[test]
    fn sign_flip_counterexamples() {
        // f = x, F = -2x: value flips sign with each jump. With
        // psi(x) = 1 - x/e an odd jump count kills every candidate root;
        // with psi(x) = -x/e it makes every x a root.
        let f = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(1.0));
        let big_f = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(-2.0));
        let odd = JumpPath::new(vec![0.5]).unwrap();
        let even = JumpPath::new(vec![0.4, 0.8]).unwrap();

        let psi_none = BoundaryMap::affine(-1.0 / std::f64::consts::E, 1.0);
        let err = solve_forward_bvp(&f, &big_f, &psi_none, &odd, &opts()).unwrap_err();
        assert!(matches!(err, Error::NoFixedPoint { .. }));
        let ok = solve_forward_bvp(&f, &big_f, &psi_none, &even, &opts()).unwrap();
        assert!((ok.x0 - 0.5).abs() < 1e-9);

        let psi_many = BoundaryMap::affine(-1.0 / std::f64::consts::E, 0.0);
        let err = solve_forward_bvp(&f, &big_f, &psi_many, &odd, &opts()).unwrap_err();
        assert!(matches!(err, Error::MultipleSolutions { .. }));
        let ok = solve_forward_bvp(&f, &big_f, &psi_many, &even, &opts()).unwrap();
        assert!(ok.x0.abs() < 1e-9);
    }

    #[test]
    fn boundary_residual_and_reeval_consistency() {
        let f = CoefficientField::linear(TimeFn::Const(0.5), TimeFn::Const(0.8));
        let big_f = CoefficientField::linear(TimeFn::Const(-0.3), TimeFn::Const(0.4));
        let psi = BoundaryMap::affine(-0.7, 1.1);
        let path = JumpPath::new(vec![0.21, 0.64, 0.93]).unwrap();
        let o = opts();
        let traj = solve_forward_bvp(&f, &big_f, &psi, &path, &o).unwrap();
        let residual = (traj.x0 - psi.eval(traj.terminal_value())).abs();
        assert!(residual < o.tol, "residual {residual}");
        // Re-evaluating the flow from (0, x0) reproduces the trajectory.
        for i in 0..100 {
            let t = (i as f64 + 0.5) / 100.5;
            let direct = forward_flow(&f, &big_f, &path, 0.0, t, traj.x0, o.ode_step)
                .unwrap()
                .value;
            assert!((direct - traj.value_at(t)).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn uniqueness_probe_from_random_brackets() {
        let f = CoefficientField::linear(TimeFn::Const(0.2), TimeFn::Const(-0.5));
        let big_f = CoefficientField::linear(TimeFn::Const(0.4), TimeFn::Const(0.6));
        let psi = BoundaryMap::affine(-1.2, 0.3);
        let path = JumpPath::new(vec![0.5]).unwrap();
        let o = opts();
        let reference = solve_forward_bvp(&f, &big_f, &psi, &path, &o).unwrap().x0;
        let g = |x: f64| {
            Ok(x - psi.eval(forward_flow(&f, &big_f, &path, 0.0, 1.0, x, o.ode_step)?.value))
        };
        let mut rng = crate::path::PathRng::new(77, 0);
        for _ in 0..10 {
            let lo = reference - rng.uniform_in(0.5, 3.0);
            let hi = reference + rng.uniform_in(0.5, 3.0);
            let x0 = find_root(g, (lo, hi), o.tol, &o).unwrap();
            assert!((x0 - reference).abs() < 10.0 * o.tol);
        }
    }

    #[test]
    fn jump_map_inversion() {
        // Linear F with F2 < 1 has the closed-form inverse (y + F1)/(1 - F2).
        let big_f = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(0.5));
        let z = invert_jump_map(&big_f, 0.3, 1.0, 1e-12).unwrap();
        assert!((z - 2.0).abs() < 1e-10);

        let zero = CoefficientField::zero();
        assert!((invert_jump_map(&zero, 0.5, 0.73, 1e-12).unwrap() - 0.73).abs() < 1e-12);

        let mut rng = crate::path::PathRng::new(78, 0);
        for i in 0..100 {
            let f1 = rng.uniform_in(-2.0, 2.0);
            let f2 = rng.uniform_in(-2.0, 0.9);
            let y = rng.uniform_in(-3.0, 3.0);
            let big_f = CoefficientField::linear(TimeFn::Const(f1), TimeFn::Const(f2));
            let z = invert_jump_map(&big_f, 0.1, y, 1e-12).unwrap();
            let closed = (y + f1) / (1.0 - f2);
            assert!((z - closed).abs() < 1e-10, "instance {i}: {z} vs {closed}");
        }
    }

    #[test]
    fn backward_existence_scan() {
        let identity = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(1.0));
        assert!(matches!(
            check_backward_existence(&identity, (-2.0, 2.0), 8, 32),
            BackwardVerdict::Violation { .. }
        ));
        let half = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(0.5));
        assert_eq!(
            check_backward_existence(&half, (-2.0, 2.0), 8, 32),
            BackwardVerdict::InvertibleIncreasing
        );
        let double = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(2.0));
        assert_eq!(
            check_backward_existence(&double, (-2.0, 2.0), 8, 32),
            BackwardVerdict::InvertibleDecreasing
        );
    }

    #[test]
    fn backward_reduces_to_forward_when_jump_free() {
        let f = CoefficientField::linear(TimeFn::Const(0.3), TimeFn::Const(-0.4));
        let zero = CoefficientField::zero();
        let psi = BoundaryMap::affine(-0.9, 0.7);
        let path = JumpPath::new(vec![0.33, 0.66]).unwrap();
        let fwd = solve_forward_bvp(&f, &zero, &psi, &path, &opts()).unwrap();
        let bwd = solve_backward_bvp(&f, &zero, &psi, &path, &opts()).unwrap();
        assert!((fwd.x0 - bwd.x0).abs() < 1e-10);
        assert_eq!(bwd.kind, TrajectoryKind::Backward);
    }

    #[test]
    fn backward_jump_identity_holds() {
        let mut rng = crate::path::PathRng::new(79, 0);
        for i in 0..50u64 {
            let f = CoefficientField::linear(
                TimeFn::Const(rng.uniform_in(-1.0, 1.0)),
                TimeFn::Const(rng.uniform_in(-1.0, 1.0)),
            );
            let big_f = CoefficientField::linear(
                TimeFn::Const(rng.uniform_in(-1.0, 1.0)),
                TimeFn::Const(rng.uniform_in(-1.5, 0.7)),
            );
            let psi = BoundaryMap::affine(rng.uniform_in(-1.5, 0.0), rng.uniform_in(-1.0, 1.0));
            let mut prng = crate::path::PathRng::new(80, i);
            let path = crate::path::sample_conditional(&mut prng, 1 + (i % 3) as usize, 1.0)
                .unwrap();
            let traj = solve_backward_bvp(&f, &big_f, &psi, &path, &opts()).unwrap();
            for jv in traj.jumps() {
                let resid = (jv.right - jv.left - big_f.eval(jv.time, jv.right)).abs();
                assert!(resid < 1e-9, "instance {i}: backward identity {resid}");
            }
        }
    }

    #[test]
    fn backward_envelope_violation_is_reported() {
        let f = CoefficientField::zero();
        let big_f = CoefficientField::linear(TimeFn::zero(), TimeFn::Const(1.5));
        let psi = BoundaryMap::affine(-1.0, 0.0);
        let err =
            solve_backward_bvp(&f, &big_f, &psi, &JumpPath::empty(), &opts()).unwrap_err();
        assert!(matches!(err, Error::PreconditionViolated(_)));
    }

    #[test]
    fn flow_values_at_matches_direct_flow() {
        let f = CoefficientField::linear(TimeFn::Const(0.4), TimeFn::Const(0.9));
        let big_f = CoefficientField::linear(TimeFn::Const(0.2), TimeFn::Const(-0.3));
        let path = JumpPath::new(vec![0.25, 0.5, 0.75]).unwrap();
        let times = [0.1, 0.25, 0.5, 0.9, 1.0];
        let vals = flow_values_at(&f, &big_f, &path, 0.8, &times, 1e-3).unwrap();
        for (tq, v) in times.iter().zip(&vals) {
            let direct = forward_flow(&f, &big_f, &path, 0.0, *tq, 0.8, 1e-3).unwrap().value;
            assert!((v - direct).abs() < 1e-10, "t = {tq}");
        }
    }
}
