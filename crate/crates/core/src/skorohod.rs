//! Anticipating (Skorohod) boundary problems on the canonical jump space,
//! and truncated chaos expansions for the closed-form examples.
//!
//! A point of the canonical space is a finite jump tuple (the empty tuple
//! is the no-jump point). The solution is built level by level in the jump
//! count: the level-n path at omega solves an ODE with drift f - F plus
//! exogenous jumps whose sizes read the level-(n-1) solutions at the
//! one-jump-removed points. Each level closes its own boundary condition
//! through a scalar fixed point, which exists because the level map is
//! bi-Lipschitz with constants e^{+-(K1+K2)} and psi is bounded with a
//! one-sided slope outside that band.

use crate::bvp::{find_root, BoundaryMap, BvpOptions};
use crate::error::{Error, Result};
use crate::flow::CoefficientField;
use crate::linear::{linear_flow_value, LinearCoefficients, LinearFactors};
use crate::path::JumpPath;
use crate::quad::{brent_root, simpson};
use crate::timefn::TimeFn;
use crate::traj::{JumpValues, Trajectory, TrajectoryKind};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// A random variable on the canonical space: omega -> R.
#[derive(Clone)]
pub struct CanonicalFunctional {
    eval: Arc<dyn Fn(&JumpPath) -> f64 + Send + Sync>,
    pub max_level: usize,
}

impl CanonicalFunctional {
    pub fn new<F>(eval: F, max_level: usize) -> Self
    where
        F: Fn(&JumpPath) -> f64 + Send + Sync + 'static,
    {
        CanonicalFunctional {
            eval: Arc::new(eval),
            max_level,
        }
    }

    pub fn eval(&self, omega: &JumpPath) -> f64 {
        (self.eval)(omega)
    }
}

type ProcessFn = Arc<dyn Fn(f64, &JumpPath) -> f64 + Send + Sync>;

/// A time-indexed family u_t(omega).
#[derive(Clone)]
pub struct CanonicalProcess {
    eval: ProcessFn,
}

impl CanonicalProcess {
    pub fn new<F>(eval: F) -> Self
    where
        F: Fn(f64, &JumpPath) -> f64 + Send + Sync + 'static,
    {
        CanonicalProcess {
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, t: f64, omega: &JumpPath) -> f64 {
        (self.eval)(t, omega)
    }
}

/// The pathwise compensated-integral operator:
/// sum_j u_{s_j}(omega with jump j removed) - int_0^1 u_t(omega) dt.
///
/// The time integral runs segment-wise between the jumps of omega, so
/// integrands discontinuous at those instants are handled exactly.
pub fn phi_operator(u: &CanonicalProcess, omega: &JumpPath, quad_step: f64) -> f64 {
    let mut sum = 0.0;
    for j in 0..omega.len() {
        let reduced = omega.without_jump(j).expect("index in range");
        sum += u.eval(omega.times()[j], &reduced);
    }
    let mut integral = 0.0;
    let mut prev = 0.0;
    for &s in omega.times().iter().chain(std::iter::once(&1.0)) {
        if s > prev {
            let n = (((s - prev) / quad_step).ceil() as usize).max(2);
            integral += simpson(|t| u.eval(t, omega), prev, s, n);
        }
        prev = s;
    }
    sum - integral
}

/// The add-one-jump difference operator: H(omega with t inserted) - H(omega).
/// Inserting onto an existing jump is an argument error.
pub fn psi_operator(h: &CanonicalFunctional, t: f64, omega: &JumpPath) -> Result<f64> {
    let extended = omega.with_jump(t)?;
    Ok(h.eval(&extended) - h.eval(omega))
}

/// Controls for the level solver.
#[derive(Debug, Clone, Copy)]
pub struct SkorohodOptions {
    pub tol: f64,
    pub ode_step: f64,
    /// Largest jump count the recursion will accept.
    pub max_level: usize,
}

impl Default for SkorohodOptions {
    fn default() -> Self {
        SkorohodOptions {
            tol: 1e-10,
            ode_step: 1e-3,
            max_level: 8,
        }
    }
}

/// One solved level: the boundary-closed trajectory at a sub-point, with
/// the exogenous jump sizes that were injected into it.
#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub x0: f64,
    pub injections: Vec<f64>,
    pub traj: Trajectory,
}

/// Memo of solved sub-points, keyed by the exact jump-time tuple. The
/// recursion fans out over all sub-tuples (2^n for n jumps); sharing the
/// memo across calls with overlapping tuples reuses every level.
#[derive(Default)]
pub struct SkorohodMemo {
    map: HashMap<Vec<u64>, Arc<LevelSolution>>,
}

impl SkorohodMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn key(times: &[f64]) -> Vec<u64> {
        times.iter().map(|t| t.to_bits()).collect()
    }
}

/// Solve the anticipating boundary problem at the point `omega`.
///
/// Validates the boundedness and one-sided slope condition on psi against
/// the declared Lipschitz constants of f and F, then runs the level
/// recursion with memoization. Results are identical whether a memo is
/// fresh or shared.
pub fn solve_skorohod_bvp(
    f: &CoefficientField,
    big_f: &CoefficientField,
    psi: &BoundaryMap,
    omega: &JumpPath,
    opts: &SkorohodOptions,
    memo: &mut SkorohodMemo,
) -> Result<Trajectory> {
    if omega.len() > opts.max_level {
        return Err(Error::InvalidArgument(format!(
            "omega has {} jumps, above the configured level cap {}",
            omega.len(),
            opts.max_level
        )));
    }
    check_psi_hypothesis(f, big_f, psi)?;
    let drift = difference_field(f, big_f);
    let sol = solve_level(&drift, big_f, psi, omega.times(), opts, memo)?;
    Ok(sol.traj.clone())
}

fn check_psi_hypothesis(
    f: &CoefficientField,
    big_f: &CoefficientField,
    psi: &BoundaryMap,
) -> Result<()> {
    let bound = psi.bound.ok_or_else(|| {
        Error::PreconditionViolated("anticipating solve needs a bounded psi".into())
    })?;
    if !bound.is_finite() {
        return Err(Error::PreconditionViolated(
            "psi bound must be finite".into(),
        ));
    }
    let (k1, k2) = match (f.lipschitz, big_f.lipschitz) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::PreconditionViolated(
                "anticipating solve needs declared Lipschitz constants for f and F".into(),
            ))
        }
    };
    let k_tilde = k1 + k2;
    let shallow = psi.upper_slope.is_some_and(|eta| eta < (-k_tilde).exp());
    let steep = psi.lower_slope.is_some_and(|eta| eta > k_tilde.exp());
    if !(shallow || steep) {
        return Err(Error::PreconditionViolated(format!(
            "psi needs a one-sided slope below e^(-{k_tilde:.3}) or above e^({k_tilde:.3})"
        )));
    }
    Ok(())
}

fn difference_field(f: &CoefficientField, big_f: &CoefficientField) -> CoefficientField {
    let (a, b) = (f.clone(), big_f.clone());
    CoefficientField::from_fn(move |t, x| a.eval(t, x) - b.eval(t, x))
}

fn solve_level(
    drift: &CoefficientField,
    big_f: &CoefficientField,
    psi: &BoundaryMap,
    times: &[f64],
    opts: &SkorohodOptions,
    memo: &mut SkorohodMemo,
) -> Result<Arc<LevelSolution>> {
    let key = SkorohodMemo::key(times);
    if let Some(hit) = memo.map.get(&key) {
        return Ok(hit.clone());
    }
    // Injected jump sizes read the one-level-down solutions at the jump
    // instant (a continuity point of those solutions).
    let mut injections = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let mut reduced = times.to_vec();
        reduced.remove(j);
        let below = solve_level(drift, big_f, psi, &reduced, opts, memo)?;
        injections.push(big_f.eval(times[j], below.traj.value_at(times[j])));
    }
    let terminal = |x: f64| -> Result<f64> {
        let mut y = x;
        let mut prev = 0.0;
        for (&u, &c) in times.iter().zip(&injections) {
            y = crate::flow::rk4_value(drift, prev, u, y, opts.ode_step)?;
            y += c;
            prev = u;
        }
        crate::flow::rk4_value(drift, prev, 1.0, y, opts.ode_step)
    };
    // psi bounded by B puts the fixed point inside [-B, B]; the bracket
    // ends straddle zero for either slope orientation of x - psi(X_1(x)).
    let b = psi.bound.expect("hypothesis checked") + 1.0;
    let g = |x: f64| -> Result<f64> { Ok(x - psi.eval(terminal(x)?)) };
    let (ga, gb) = (g(-b)?, g(b)?);
    let x0 = brent_root(g, -b, b, ga, gb, opts.tol, Some(opts.tol))?;
    let mut segments = Vec::with_capacity(times.len() + 1);
    let mut jump_values = Vec::with_capacity(times.len());
    let mut y = x0;
    let mut prev = 0.0;
    for (&u, &c) in times.iter().zip(&injections) {
        let seg = crate::flow::rk4_dense(drift, prev, u, y, opts.ode_step)?;
        let left = seg.end_value();
        segments.push(seg);
        jump_values.push(JumpValues {
            time: u,
            left,
            right: left + c,
        });
        y = left + c;
        prev = u;
    }
    segments.push(crate::flow::rk4_dense(drift, prev, 1.0, y, opts.ode_step)?);
    let traj = Trajectory::new(
        x0,
        JumpPath::new(times.to_vec())?,
        TrajectoryKind::Skorohod,
        segments,
        jump_values,
    )?;
    let sol = Arc::new(LevelSolution {
        x0,
        injections,
        traj,
    });
    memo.map.insert(key, sol.clone());
    Ok(sol)
}

/// Kernel families supported by the chaos evaluator: the constant kernel
/// on [0,1]^n and indicator tensor powers of [0, t].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChaosKernel {
    Const,
    Indicator(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosTerm {
    pub n: u32,
    pub c_n: f64,
    pub kernel: ChaosKernel,
}

/// A truncated chaos expansion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChaosSeries {
    pub terms: Vec<ChaosTerm>,
    pub truncation_order: u32,
    /// Bound on the dropped tail for jump counts up to 8, set by builders
    /// that truncate an infinite series; zero for complete expansions.
    pub tail_bound: f64,
}

impl ChaosSeries {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.terms).expect("terms serialize")
    }
}

/// n-fold multiple integral of the indicator kernel of [0, s], evaluated
/// pathwise through the jump count N_s.
///
/// The generating identity sum_n (w^n / n!) I_n = e^{-ws} (1 + w)^{N_s}
/// pins the value: I_n = n! sum_j C(N_s, j) (-s)^{n-j} / (n-j)!.
pub fn multiple_integral_indicator(n: u32, count: u32, s: f64) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0; // C(count, j), updated incrementally
    for j in 0..=n.min(count) {
        if j > 0 {
            binom *= (count - j + 1) as f64 / j as f64;
        }
        let m = n - j;
        let mut pow_over_fact = 1.0; // (-s)^m / m!
        for i in 1..=m {
            pow_over_fact *= -s / i as f64;
        }
        total += binom * pow_over_fact;
    }
    let mut n_fact = 1.0;
    for i in 1..=n {
        n_fact *= i as f64;
    }
    total * n_fact
}

/// Evaluate the series at a canonical point.
pub fn eval_chaos(series: &ChaosSeries, omega: &JumpPath) -> f64 {
    let n1 = omega.len() as u32;
    series
        .terms
        .iter()
        .map(|term| {
            let value = match term.kernel {
                ChaosKernel::Const => multiple_integral_indicator(term.n, n1, 1.0),
                ChaosKernel::Indicator(t) => {
                    let count = omega.count_jumps(0.0, t).expect("t in [0,1]") as u32;
                    multiple_integral_indicator(term.n, count, t)
                }
            };
            term.c_n * value
        })
        .sum()
}

/// First-order integral of a smooth kernel g: sum_j g(s_j) - int_0^1 g.
/// Kernels with an indicator factor decompose into a smooth part plus a
/// window restriction, handled by `eval_first_order_window`.
pub fn eval_first_order<G: Fn(f64) -> f64>(g: G, omega: &JumpPath, quad_step: f64) -> f64 {
    let sum: f64 = omega.times().iter().map(|&s| g(s)).sum();
    let n = ((1.0 / quad_step).ceil() as usize).max(2);
    sum - simpson(&g, 0.0, 1.0, n)
}

/// First-order integral of g restricted to [0, t]:
/// sum over jumps at or before t of g(s_j), minus int_0^t g.
pub fn eval_first_order_window<G: Fn(f64) -> f64>(
    g: G,
    t: f64,
    omega: &JumpPath,
    quad_step: f64,
) -> f64 {
    let sum: f64 = omega.jumps_in(0.0, t).iter().map(|&s| g(s)).sum();
    let n = ((t / quad_step).ceil() as usize).max(2);
    sum - simpson(&g, 0.0, t, n)
}

/// Numeric tail bound for series whose order-n coefficients scale like
/// scale / n!: sums |I_n| / n! <= sum_j C(N, j) / (n-j)! over the dropped
/// orders, for the worst jump count N <= max_count.
fn factorial_tail_bound(scale: f64, order: u32, max_count: u32) -> f64 {
    let mut tail = 0.0;
    for n in (order + 1)..(order + 300) {
        let mut bound_n = 0.0;
        let mut binom = 1.0;
        for j in 0..=n.min(max_count) {
            if j > 0 {
                binom *= (max_count - j + 1) as f64 / j as f64;
            }
            let m = n - j;
            let mut inv_fact = 1.0;
            for i in 1..=m {
                inv_fact /= i as f64;
            }
            bound_n += binom * inv_fact;
        }
        tail += bound_n;
        if bound_n < 1e-18 {
            break;
        }
    }
    scale * tail
}

/// Chaos expansion of the absorbing-feedback solution (jump coefficient
/// -x, no additive terms, drift slope f2): at time t the solution is
/// A(t) [ (x* - psi0) 1{no jumps at all} + psi0 1{no jumps by t} ], and
/// both indicators expand over the supported kernel families through the
/// generating identity at w = -1.
pub fn build_case5_chaos(
    f2: &TimeFn,
    psi0: f64,
    x_star: f64,
    t: f64,
    order: u32,
) -> ChaosSeries {
    let a_t = simpson(|r| f2.eval(r), 0.0, t, 2000).exp();
    let c_const = a_t * (x_star - psi0) * (-1.0f64).exp();
    let c_ind = a_t * psi0 * (-t).exp();
    let mut terms = Vec::with_capacity(2 * order as usize + 2);
    let mut n_fact = 1.0;
    for n in 0..=order {
        if n > 0 {
            n_fact *= n as f64;
        }
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        terms.push(ChaosTerm {
            n,
            c_n: c_const * sign / n_fact,
            kernel: ChaosKernel::Const,
        });
        terms.push(ChaosTerm {
            n,
            c_n: c_ind * sign / n_fact,
            kernel: ChaosKernel::Indicator(t),
        });
    }
    let tail_bound = factorial_tail_bound(c_const.abs() + c_ind.abs(), order, 8);
    ChaosSeries {
        terms,
        truncation_order: order,
        tail_bound,
    }
}

/// Closed form of the linear anticipating boundary problem.
///
/// The solution splits as X = Y + Z: Y is the zero-start forward solution
/// of the converted equation (drift coefficients reduced by the jump
/// ones), and Z is the pure-feedback part. Writing Atil for the converted
/// exponential factor, the level value of Z divides by Atil(t) into the
/// fixed point of the full tuple plus, for every nonempty set J of jumps
/// that have occurred by t, the product of F2 over J times the fixed point
/// of the tuple with J removed. Fixed points are solved by subset size, so
/// removed-tuple values always exist before they are needed.
pub struct LinearSkorohodClosedForm {
    omega: JumpPath,
    conv: LinearFactors,
    big_f2: TimeFn,
    /// Fixed points Z_0(S), indexed by the bitmask of retained jumps.
    z0: Vec<f64>,
}

pub fn linear_skorohod_closed_form(
    lc: &LinearCoefficients,
    psi: &BoundaryMap,
    omega: &JumpPath,
    tol: f64,
    quad_step: f64,
) -> Result<LinearSkorohodClosedForm> {
    let converted = LinearCoefficients::new(
        lc.f1.minus(&lc.big_f1),
        lc.f2.minus(&lc.big_f2),
        lc.big_f1.clone(),
        lc.big_f2.clone(),
    );
    let conv = converted.factors(quad_step);
    let n = omega.len();
    let times = omega.times().to_vec();
    let full = 1usize << n;
    let mut z0 = vec![f64::NAN; full];
    let opts = BvpOptions {
        tol,
        ..BvpOptions::default()
    };
    let a1 = conv.a_factor(1.0);
    let mut masks: Vec<usize> = (0..full).collect();
    masks.sort_by_key(|m| m.count_ones());
    for mask in masks {
        let subset: Vec<f64> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| times[i])
            .collect();
        let subset_path = JumpPath::new(subset)?;
        let y1 = linear_flow_value(&conv, &subset_path, 0.0, 1.0);
        let w = removal_sum(&z0, mask, mask, &times, &lc.big_f2);
        z0[mask] = find_root(
            |x| Ok(x - psi.eval(a1 * (x + w) + y1)),
            (-1.0, 1.0),
            tol,
            &opts,
        )?;
    }
    Ok(LinearSkorohodClosedForm {
        omega: omega.clone(),
        conv,
        big_f2: lc.big_f2.clone(),
        z0,
    })
}

/// Sum over nonempty removal sets J within `allowed` of
/// prod_{j in J} F2(s_j) * Z0(full minus J).
fn removal_sum(z0: &[f64], full: usize, allowed: usize, times: &[f64], big_f2: &TimeFn) -> f64 {
    let mut total = 0.0;
    let mut j = allowed;
    while j > 0 {
        let mut prod = 1.0;
        for (i, &u) in times.iter().enumerate() {
            if j & (1 << i) != 0 {
                prod *= big_f2.eval(u);
            }
        }
        total += prod * z0[full & !j];
        j = (j - 1) & allowed;
    }
    total
}

impl LinearSkorohodClosedForm {
    /// X_t at the solved point.
    pub fn value_at(&self, t: f64) -> f64 {
        let times = self.omega.times();
        let full = (1usize << times.len()) - 1;
        let mut pre = 0usize;
        for (i, &u) in times.iter().enumerate() {
            if u <= t {
                pre |= 1 << i;
            }
        }
        let y_t = linear_flow_value(&self.conv, &self.omega, 0.0, t);
        let z = self.z0[full] + removal_sum(&self.z0, full, pre, times, &self.big_f2);
        y_t + self.conv.a_factor(t) * z
    }

    pub fn x0(&self) -> f64 {
        self.value_at(0.0)
    }
}
