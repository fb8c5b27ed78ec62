//! Monte Carlo estimation of the law of the solution at a fixed time.
//!
//! The law splits into a point mass sitting on the deterministic trajectory
//! (the event "no jumps feeds the boundary condition", weight 1/e for the
//! boundary problem on [0, 1]; weight e^{-t} for the initial-value flow)
//! plus a continuous remainder described by conditional densities per jump
//! count. The estimators record every sample with its jump-count stratum,
//! flag values landing on the atom, and fit per-stratum kernel densities;
//! an independent conditional-sampling run provides the reference for a
//! stratified two-sample Kolmogorov-Smirnov comparison.

use crate::bvp::{BoundaryMap, PathwiseSolver};
use crate::error::{Error, Result};
use crate::flow::{det_flow, forward_flow, CoefficientField};
use crate::linear::deterministic_fixed_point;
use crate::path::{sample_conditional, sample_conditional_split, sample_path, PathRng};
use crate::stats::{ks_two_sample_p, variance, KernelDensity};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

/// Stratum key: (jumps at or before t, jumps after t). Flow-law estimates
/// use only the first component and keep the second at zero.
pub type StratumKey = (u32, u32);

#[derive(Debug, Clone, Copy)]
pub struct LawOptions {
    /// Values within this distance of the deterministic point count as atom.
    pub atom_tol: f64,
    /// Worker threads for path solving; results are worker-count invariant.
    pub workers: usize,
    /// Strata with more jumps than this are pooled into the edge stratum.
    pub max_stratum: u32,
    /// RK4 step for the deterministic trajectory and generic flows.
    pub ode_step: f64,
    /// Tolerance for the deterministic fixed point behind the atom location.
    pub fp_tol: f64,
    /// Override for the per-stratum density bandwidth (Silverman's rule
    /// otherwise).
    pub kde_bandwidth: Option<f64>,
}

impl Default for LawOptions {
    fn default() -> Self {
        LawOptions {
            atom_tol: 1e-7,
            workers: 1,
            max_stratum: 8,
            ode_step: 1e-3,
            fp_tol: 1e-10,
            kde_bandwidth: None,
        }
    }
}

/// One Monte Carlo draw.
#[derive(Debug, Clone, Copy)]
pub struct LawSample {
    pub path_id: u64,
    pub n_t: u32,
    pub n1: u32,
    pub value: f64,
    pub is_atom: bool,
}

/// Per-stratum tallies with an optional kernel density estimate.
#[derive(Debug, Clone)]
pub struct StratumStats {
    pub count: usize,
    pub samples: Vec<f64>,
    /// Numerically constant within the stratum; excluded from densities.
    pub degenerate: bool,
    pub kde: Option<KernelDensity>,
}

impl StratumStats {
    fn from_samples(samples: Vec<f64>, bandwidth: Option<f64>) -> Self {
        let degenerate = samples.len() >= 2 && variance(&samples) < 1e-18;
        let mut kde = if degenerate {
            None
        } else {
            KernelDensity::silverman(&samples)
        };
        if let (Some(k), Some(h)) = (kde.as_mut(), bandwidth) {
            k.bandwidth = h;
        }
        StratumStats {
            count: samples.len(),
            samples,
            degenerate,
            kde,
        }
    }
}

/// Estimated law of X_t.
#[derive(Debug, Clone)]
pub struct LawEstimate {
    pub t: f64,
    pub n_paths: u64,
    pub atom_location: f64,
    pub atom_mass_hat: f64,
    pub samples: Vec<LawSample>,
    pub strata: BTreeMap<StratumKey, StratumStats>,
}

impl LawEstimate {
    fn assemble(
        t: f64,
        atom_location: f64,
        opts: &LawOptions,
        raw: Vec<(u64, u32, u32, f64)>,
    ) -> Self {
        let atom_tol = opts.atom_tol;
        let max_stratum = opts.max_stratum;
        let n_paths = raw.len() as u64;
        let mut samples = Vec::with_capacity(raw.len());
        let mut strata: BTreeMap<StratumKey, Vec<f64>> = BTreeMap::new();
        let mut atoms = 0u64;
        for (path_id, n_t, n1, value) in raw {
            let is_atom = (value - atom_location).abs() <= atom_tol;
            if is_atom {
                atoms += 1;
            }
            samples.push(LawSample {
                path_id,
                n_t,
                n1,
                value,
                is_atom,
            });
            let key = (n_t.min(max_stratum), (n1 - n_t).min(max_stratum));
            strata.entry(key).or_default().push(value);
        }
        let strata = strata
            .into_iter()
            .map(|(k, v)| (k, StratumStats::from_samples(v, opts.kde_bandwidth)))
            .collect();
        LawEstimate {
            t,
            n_paths,
            atom_location,
            atom_mass_hat: atoms as f64 / n_paths as f64,
            samples,
            strata,
        }
    }

    /// Sorted sample values (the empirical distribution).
    pub fn ecdf(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.samples.iter().map(|s| s.value).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    /// Fraction of samples off the atom; complements the atom mass exactly.
    pub fn continuous_fraction(&self) -> f64 {
        1.0 - self.atom_mass_hat
    }

    /// One row per sample: path_id, N_t, N1, X_t, is_atom.
    pub fn samples_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 32);
        out.push_str("path_id,n_t,n1,x_t,is_atom\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.path_id, s.n_t, s.n1, s.value, s.is_atom
            );
        }
        out
    }

    /// Summary with the stratum table, keys sorted.
    pub fn summary_json(&self) -> serde_json::Value {
        let strata: Vec<serde_json::Value> = self
            .strata
            .iter()
            .map(|(&(n_t, n_after), st)| {
                serde_json::json!({
                    "n_before": n_t,
                    "n_after": n_after,
                    "count": st.count,
                    "degenerate": st.degenerate,
                    "bandwidth": st.kde.as_ref().map(|k| k.bandwidth),
                })
            })
            .collect();
        serde_json::json!({
            "t": self.t,
            "n_paths": self.n_paths,
            "atom_location": self.atom_location,
            "atom_mass_hat": self.atom_mass_hat,
            "continuous_fraction": self.continuous_fraction(),
            "strata": strata,
        })
    }
}

fn run_paths<F>(n_paths: u64, workers: usize, per_path: F) -> Result<Vec<(u64, u32, u32, f64)>>
where
    F: Fn(u64) -> Result<(u64, u32, u32, f64)> + Sync,
{
    if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        pool.install(|| (0..n_paths).into_par_iter().map(&per_path).collect())
    } else {
        (0..n_paths).map(per_path).collect()
    }
}

/// Estimate the law of the boundary-problem solution at time `t`.
///
/// The atom sits at the deterministic trajectory through the no-jump fixed
/// point; its mass converges to 1/e regardless of t.
pub fn estimate_law<S: PathwiseSolver>(
    solver: &S,
    drift: &CoefficientField,
    psi: &BoundaryMap,
    t: f64,
    n_paths: u64,
    seed: u64,
    opts: &LawOptions,
) -> Result<LawEstimate> {
    let x_star = deterministic_fixed_point(drift, psi, opts.fp_tol, opts.ode_step)?;
    let atom_location = det_flow(drift, 0.0, t, x_star, opts.ode_step)?;
    let raw = run_paths(n_paths, opts.workers, |i| {
        let mut rng = PathRng::new(seed, i);
        let path = sample_path(&mut rng, 1.0)?;
        let (_, values) = solver.values_at(&path, &[t])?;
        let n_t = path.count_jumps(0.0, t)? as u32;
        Ok((i, n_t, path.len() as u32, values[0]))
    })?;
    Ok(LawEstimate::assemble(t, atom_location, opts, raw))
}

/// Estimate the law of the initial-value flow at time `t`; the atom mass
/// converges to e^{-t}.
pub fn estimate_flow_law(
    f: &CoefficientField,
    jump: &CoefficientField,
    x0: f64,
    t: f64,
    n_paths: u64,
    seed: u64,
    opts: &LawOptions,
) -> Result<LawEstimate> {
    let atom_location = det_flow(f, 0.0, t, x0, opts.ode_step)?;
    let raw = run_paths(n_paths, opts.workers, |i| {
        let mut rng = PathRng::new(seed, i);
        let path = sample_path(&mut rng, 1.0)?;
        let value = forward_flow(f, jump, &path, 0.0, t, x0, opts.ode_step)?.value;
        let n_t = path.count_jumps(0.0, t)? as u32;
        Ok((i, n_t, n_t, value))
    })?;
    Ok(LawEstimate::assemble(t, atom_location, opts, raw))
}

/// Reference samples drawn conditionally per stratum.
#[derive(Debug, Clone)]
pub struct StratifiedSamples {
    pub strata: BTreeMap<StratumKey, Vec<f64>>,
}

/// Conditional reference for the flow law: for each requested stratum n,
/// draw the jump times as uniform order statistics on [0, t] and evaluate
/// the flow.
#[allow(clippy::too_many_arguments)]
pub fn conditional_flow_reference(
    f: &CoefficientField,
    jump: &CoefficientField,
    x0: f64,
    t: f64,
    keys: &[StratumKey],
    samples_per_stratum: usize,
    seed: u64,
    opts: &LawOptions,
) -> Result<StratifiedSamples> {
    let mut strata = BTreeMap::new();
    for (ki, &(n, _)) in keys.iter().enumerate() {
        let mut vals = Vec::with_capacity(samples_per_stratum);
        for j in 0..samples_per_stratum {
            let mut rng = PathRng::new(seed, (ki * samples_per_stratum + j) as u64);
            let path = sample_conditional(&mut rng, n as usize, t)?;
            vals.push(forward_flow(f, jump, &path, 0.0, t, x0, opts.ode_step)?.value);
        }
        strata.insert((n, 0), vals);
    }
    Ok(StratifiedSamples { strata })
}

/// Conditional reference for the boundary problem: jump counts before and
/// after t are fixed per stratum, with uniform order statistics on each
/// window.
pub fn conditional_bvp_reference<S: PathwiseSolver>(
    solver: &S,
    t: f64,
    keys: &[StratumKey],
    samples_per_stratum: usize,
    seed: u64,
) -> Result<StratifiedSamples> {
    let mut strata = BTreeMap::new();
    for (ki, &(n, k)) in keys.iter().enumerate() {
        let mut vals = Vec::with_capacity(samples_per_stratum);
        for j in 0..samples_per_stratum {
            let mut rng = PathRng::new(seed, (ki * samples_per_stratum + j) as u64);
            let path = sample_conditional_split(&mut rng, n as usize, k as usize, t)?;
            let (_, values) = solver.values_at(&path, &[t])?;
            vals.push(values[0]);
        }
        strata.insert((n, k), vals);
    }
    Ok(StratifiedSamples { strata })
}

/// Outcome of one stratum's two-sample comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum KsOutcome {
    Tested { stat: f64, p: f64, n: (usize, usize) },
    SkippedSmall,
    SkippedDegenerate,
}

/// Stratified two-sample Kolmogorov-Smirnov report.
#[derive(Debug, Clone)]
pub struct KsReport {
    pub alpha: f64,
    pub min_samples: usize,
    pub outcomes: BTreeMap<StratumKey, KsOutcome>,
}

impl KsReport {
    pub fn rejected(&self) -> Vec<StratumKey> {
        self.outcomes
            .iter()
            .filter_map(|(k, o)| match o {
                KsOutcome::Tested { p, .. } if *p < self.alpha => Some(*k),
                _ => None,
            })
            .collect()
    }

    pub fn tested(&self) -> usize {
        self.outcomes
            .values()
            .filter(|o| matches!(o, KsOutcome::Tested { .. }))
            .count()
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.outcomes
            .values()
            .filter_map(|o| match o {
                KsOutcome::Tested { p, .. } => Some(*p),
                _ => None,
            })
            .collect()
    }
}

/// Compare the estimated strata against an independent conditional run.
/// Strata below `min_samples` on either side are skipped with a notice, as
/// are numerically degenerate ones (atoms).
pub fn ks_stratified_test(
    estimate: &LawEstimate,
    reference: &StratifiedSamples,
    alpha: f64,
    min_samples: usize,
) -> KsReport {
    let mut outcomes = BTreeMap::new();
    for (key, ref_samples) in &reference.strata {
        let outcome = match estimate.strata.get(key) {
            Some(st) if st.count < min_samples || ref_samples.len() < min_samples => {
                KsOutcome::SkippedSmall
            }
            Some(st) if st.degenerate || variance(ref_samples) < 1e-18 => {
                KsOutcome::SkippedDegenerate
            }
            Some(st) => {
                let stat = crate::stats::ks_statistic(&st.samples, ref_samples);
                let p = ks_two_sample_p(&st.samples, ref_samples);
                KsOutcome::Tested {
                    stat,
                    p,
                    n: (st.count, ref_samples.len()),
                }
            }
            None => KsOutcome::SkippedSmall,
        };
        outcomes.insert(*key, outcome);
    }
    KsReport {
        alpha,
        min_samples,
        outcomes,
    }
}

/// A time-independent coefficient x -> g(x) with optional derivatives.
#[derive(Clone)]
pub struct AutonomousField {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    d1: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    d2: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl AutonomousField {
    pub fn from_fn<F>(eval: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        AutonomousField {
            eval: Arc::new(eval),
            d1: None,
            d2: None,
        }
    }

    pub fn with_d1<F>(mut self, d1: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.d1 = Some(Arc::new(d1));
        self
    }

    pub fn with_d2<F>(mut self, d2: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.d2 = Some(Arc::new(d2));
        self
    }

    /// Freeze a time-dependent field, verifying time independence on a
    /// probe grid first. Derivatives in x carry over from the field's state
    /// partial; the second derivative must be supplied separately.
    pub fn from_time_field(cf: &CoefficientField, x_range: (f64, f64), nx: usize) -> Result<Self> {
        let (lo, hi) = x_range;
        for a in 0..=nx {
            let x = lo + (hi - lo) * a as f64 / nx as f64;
            let v0 = cf.eval(0.0, x);
            for &t in &[0.31, 0.68, 1.0] {
                if (cf.eval(t, x) - v0).abs() > 1e-12 * (1.0 + v0.abs()) {
                    return Err(Error::PreconditionViolated(format!(
                        "field is time-dependent at x = {x}"
                    )));
                }
            }
        }
        let base = cf.clone();
        let mut out = AutonomousField::from_fn(move |x| base.eval(0.0, x));
        if cf.has_d2() {
            let base = cf.clone();
            out = out.with_d1(move |x| base.d2(0.0, x).unwrap());
        }
        Ok(out)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    fn d1(&self, x: f64) -> Result<f64> {
        match &self.d1 {
            Some(d) => Ok(d(x)),
            None => Err(Error::MissingCapability("first derivative missing".into())),
        }
    }

    fn d2(&self, x: f64) -> Result<f64> {
        match &self.d2 {
            Some(d) => Ok(d(x)),
            None => Err(Error::MissingCapability(
                "second derivative missing".into(),
            )),
        }
    }
}

/// Scan grid for the non-degeneracy checks.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub nt: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_lo: -3.0,
            x_hi: 3.0,
            nx: 256,
            nt: 64,
        }
    }
}

/// Result of a pointwise non-degeneracy scan.
#[derive(Debug, Clone, Copy)]
pub struct ConditionReport {
    pub min_abs: f64,
    pub argmin: (f64, f64),
}

impl ConditionReport {
    pub fn passes(&self, margin: f64) -> bool {
        self.min_abs > margin
    }
}

/// Scan |f(t, x + F(t,x)) - f(t,x)(1 + dF/dx) - dF/dt| over the grid.
/// Strict positivity of this expression makes the jump-time-to-value map
/// nondegenerate, so the off-atom part of the law has a density.
pub fn check_condition_p(
    f: &CoefficientField,
    jump: &CoefficientField,
    grid: &GridSpec,
) -> Result<ConditionReport> {
    if !jump.has_d1() || !jump.has_d2() {
        return Err(Error::MissingCapability(
            "condition scan needs both partials of F".into(),
        ));
    }
    let mut min_abs = f64::INFINITY;
    let mut argmin = (0.0, 0.0);
    for i in 0..=grid.nt {
        let t = i as f64 / grid.nt as f64;
        for a in 0..=grid.nx {
            let x = grid.x_lo + (grid.x_hi - grid.x_lo) * a as f64 / grid.nx as f64;
            let fx = jump.eval(t, x);
            let v = (f.eval(t, x + fx)
                - f.eval(t, x) * (1.0 + jump.d2(t, x)?)
                - jump.d1(t, x)?)
            .abs();
            if v < min_abs {
                min_abs = v;
                argmin = (t, x);
            }
        }
    }
    Ok(ConditionReport { min_abs, argmin })
}

/// Report of the autonomous-case sufficient condition
/// |f' F - f F'| > (1/2) sup|f''| (sup|F|)^2 on the grid. When it holds, the
/// pointwise condition above holds as well.
#[derive(Debug, Clone, Copy)]
pub struct CarlenPardouxReport {
    pub min_lhs: f64,
    pub argmin: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn check_carlen_pardoux(
    f: &AutonomousField,
    jump: &AutonomousField,
    grid: &GridSpec,
) -> Result<CarlenPardouxReport> {
    let mut sup_fdd: f64 = 0.0;
    let mut sup_jump: f64 = 0.0;
    let mut min_lhs = f64::INFINITY;
    let mut argmin = 0.0;
    for a in 0..=grid.nx {
        let x = grid.x_lo + (grid.x_hi - grid.x_lo) * a as f64 / grid.nx as f64;
        sup_fdd = sup_fdd.max(f.d2(x)?.abs());
        sup_jump = sup_jump.max(jump.eval(x).abs());
        let lhs = (f.d1(x)? * jump.eval(x) - f.eval(x) * jump.d1(x)?).abs();
        if lhs < min_lhs {
            min_lhs = lhs;
            argmin = x;
        }
    }
    let rhs = 0.5 * sup_fdd * sup_jump * sup_jump;
    Ok(CarlenPardouxReport {
        min_lhs,
        argmin,
        rhs,
        holds: min_lhs > rhs,
    })
}
