//! Statistical verification of the reciprocal property for the linear
//! boundary problems, plus exact structural checks for the cases with a
//! closed-form representation.
//!
//! Reciprocality is probed through its definition: given the values at the
//! window ends (a, b), the inside value X_u and the outside value X_v must
//! be independent. Conditioning is approximated by cells over (X_a, X_b):
//! exact value pairs when the sampled support is effectively discrete
//! (which holds for the shipped case presets), marginal quantile cells
//! otherwise. Within each big-enough cell a permutation test on distance
//! correlation runs, and cells pool through Benjamini-Hochberg. A clean
//! pooled verdict is consistency evidence, not a proof.

use crate::bvp::{BoundaryMap, PathwiseSolver};
use crate::error::{Error, Result};
use crate::linear::{LinearBvpSolver, LinearCoefficients};
use crate::path::{sample_path, PathRng};
use crate::stats::{benjamini_hochberg, dcor_permutation_p, quantile_cell};
use std::collections::BTreeMap;

/// Controls for the conditional-independence test.
#[derive(Debug, Clone, Copy)]
pub struct CiOptions {
    /// Marginal quantile bins per axis (quantile mode).
    pub bins: usize,
    /// Permutation count per cell.
    pub n_perms: usize,
    /// Pooled level for Benjamini-Hochberg.
    pub alpha: f64,
    /// Cells below this size are excluded.
    pub min_cell: usize,
    /// Cells above this size are deterministically thinned, keeping the
    /// quadratic-cost permutation statistic tractable.
    pub max_cell: usize,
    /// Exact-pair conditioning kicks in when the number of distinct
    /// (X_a, X_b) pairs stays at or below this.
    pub discrete_threshold: usize,
}

impl Default for CiOptions {
    fn default() -> Self {
        CiOptions {
            bins: 4,
            n_perms: 1000,
            alpha: 0.01,
            min_cell: 50,
            max_cell: 500,
            discrete_threshold: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Tested { p: f64 },
    Degenerate,
    Undersized,
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub label: String,
    pub n: usize,
    pub outcome: CellOutcome,
}

/// Report of one conditional-independence run.
#[derive(Debug, Clone)]
pub struct CiReport {
    pub times: (f64, f64, f64, f64),
    pub alpha: f64,
    pub exact_cells: bool,
    pub cells: Vec<CellReport>,
    /// Indices into `cells` rejected after pooling.
    pub rejected: Vec<usize>,
}

impl CiReport {
    pub fn any_rejected(&self) -> bool {
        !self.rejected.is_empty()
    }

    pub fn tested(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c.outcome, CellOutcome::Tested { .. }))
            .count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cells: Vec<serde_json::Value> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                serde_json::json!({
                    "cell": c.label,
                    "n": c.n,
                    "p": match c.outcome {
                        CellOutcome::Tested { p } => Some(p),
                        _ => None,
                    },
                    "skipped": match c.outcome {
                        CellOutcome::Tested { .. } => None,
                        CellOutcome::Degenerate => Some("degenerate"),
                        CellOutcome::Undersized => Some("undersized"),
                    },
                    "rejected": self.rejected.contains(&i),
                })
            })
            .collect();
        serde_json::json!({
            "times": {
                "a": self.times.0,
                "u": self.times.1,
                "b": self.times.2,
                "v": self.times.3,
            },
            "alpha": self.alpha,
            "exact_cells": self.exact_cells,
            "pooled_rejection": self.any_rejected(),
            "tested_cells": self.tested(),
            "cells": cells,
        })
    }
}

/// Permutation test of conditional independence between X_u and X_v given
/// (X_a, X_b), over quadruples sampled at times (a, u, b, v) with
/// a < u < b and v outside [a, b].
pub fn ci_permutation_test(
    samples: &[[f64; 4]],
    times: (f64, f64, f64, f64),
    opts: &CiOptions,
    seed: u64,
) -> Result<CiReport> {
    let (a, u, b, v) = times;
    if !(a < u && u < b) || (v >= a && v <= b) {
        return Err(Error::InvalidArgument(format!(
            "need a < u < b and v outside [a, b]; got ({a}, {u}, {b}, {v})"
        )));
    }
    if samples.len() < opts.min_cell {
        return Err(Error::InvalidArgument(format!(
            "{} samples is too few for any cell",
            samples.len()
        )));
    }

    // Group indices by conditioning cell.
    let mut pairs: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        pairs
            .entry((s[0].to_bits(), s[2].to_bits()))
            .or_default()
            .push(i);
    }
    let exact = pairs.len() <= opts.discrete_threshold;
    let cells: Vec<(String, Vec<usize>)> = if exact {
        pairs
            .into_iter()
            .map(|((xa, xb), idx)| {
                (
                    format!(
                        "xa={:.6},xb={:.6}",
                        f64::from_bits(xa),
                        f64::from_bits(xb)
                    ),
                    idx,
                )
            })
            .collect()
    } else {
        let mut xa: Vec<f64> = samples.iter().map(|s| s[0]).collect();
        let mut xb: Vec<f64> = samples.iter().map(|s| s[2]).collect();
        xa.sort_by(|p, q| p.partial_cmp(q).unwrap());
        xb.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let mut grid: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            let ca = quantile_cell(&xa, opts.bins, s[0]);
            let cb = quantile_cell(&xb, opts.bins, s[2]);
            grid.entry((ca, cb)).or_default().push(i);
        }
        grid.into_iter()
            .map(|((ca, cb), idx)| (format!("q{ca}x{cb}"), idx))
            .collect()
    };

    let mut reports = Vec::with_capacity(cells.len());
    let mut tested_p = Vec::new();
    let mut tested_idx = Vec::new();
    for (cell_id, (label, mut idx)) in cells.into_iter().enumerate() {
        let n = idx.len();
        let outcome = if n < opts.min_cell {
            CellOutcome::Undersized
        } else {
            if n > opts.max_cell {
                // Deterministic thinning by stride.
                let stride = n.div_ceil(opts.max_cell);
                idx = idx.into_iter().step_by(stride).collect();
            }
            let xu: Vec<f64> = idx.iter().map(|&i| samples[i][1]).collect();
            let xv: Vec<f64> = idx.iter().map(|&i| samples[i][3]).collect();
            let mut rng = PathRng::new(seed, cell_id as u64);
            match dcor_permutation_p(&xu, &xv, opts.n_perms, &mut rng) {
                Some(p) => CellOutcome::Tested { p },
                None => CellOutcome::Degenerate,
            }
        };
        if let CellOutcome::Tested { p } = outcome {
            tested_p.push(p);
            tested_idx.push(reports.len());
        }
        reports.push(CellReport { label, n, outcome });
    }
    let rejected = benjamini_hochberg(&tested_p, opts.alpha)
        .into_iter()
        .map(|k| tested_idx[k])
        .collect();
    Ok(CiReport {
        times,
        alpha: opts.alpha,
        exact_cells: exact,
        cells: reports,
        rejected,
    })
}

/// Draw (X_a, X_u, X_b, X_v) quadruples from the solved linear boundary
/// problem, one independent path per sample.
pub fn sample_quadruples(
    lc: &LinearCoefficients,
    psi: &BoundaryMap,
    times: (f64, f64, f64, f64),
    n_paths: u64,
    seed: u64,
    tol: f64,
    quad_step: f64,
) -> Result<Vec<[f64; 4]>> {
    let solver = LinearBvpSolver::forward(lc, psi.clone(), tol, quad_step);
    let (a, u, b, v) = times;
    let mut order = [(a, 0usize), (u, 1), (b, 2), (v, 3)];
    order.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let sorted_times: Vec<f64> = order.iter().map(|p| p.0).collect();
    let mut out = Vec::with_capacity(n_paths as usize);
    for i in 0..n_paths {
        let mut rng = PathRng::new(seed, i);
        let path = sample_path(&mut rng, 1.0)?;
        let (_, vals) = solver.values_at(&path, &sorted_times)?;
        let mut quad = [0.0; 4];
        for (slot, val) in order.iter().zip(vals) {
            quad[slot.1] = val;
        }
        out.push(quad);
    }
    Ok(out)
}

/// Outcome of a pathwise structural check.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub n_paths: u64,
    pub max_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

fn grid_times(path_times: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    ts.extend_from_slice(path_times);
    ts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ts.dedup();
    ts
}

/// Jump-free feedback (F2 = 0): X_t/A(t) minus the accumulated input
/// integral must be constant along every path.
pub fn representation_check_case3(
    lc: &LinearCoefficients,
    psi: &BoundaryMap,
    n_paths: u64,
    seed: u64,
    tol: f64,
) -> Result<CaseReport> {
    let factors = lc.factors(1e-3);
    let solver = LinearBvpSolver::forward(lc, psi.clone(), tol.min(1e-12), 1e-3);
    let mut max_dev: f64 = 0.0;
    for i in 0..n_paths {
        let mut rng = PathRng::new(seed, i);
        let path = sample_path(&mut rng, 1.0)?;
        let ts = grid_times(path.times());
        let (x0, vals) = solver.values_at(&path, &ts)?;
        for (&t, &x_t) in ts.iter().zip(&vals) {
            let y = x_t / factors.a_factor(t);
            let mut xi = factors.drift_increment(0.0, t);
            for &s in path.jumps_in(0.0, t) {
                xi += lc.big_f1.eval(s) / factors.a_factor(s);
            }
            max_dev = max_dev.max((y - xi - x0).abs());
        }
    }
    Ok(CaseReport {
        n_paths,
        max_deviation: max_dev,
        tol,
        passed: max_dev < tol,
    })
}

/// Pure multiplicative case (F2 > -1, no additive input): log|X_t| minus
/// the accumulated log factor must be constant, and the sign never flips.
pub fn representation_check_case4(
    lc: &LinearCoefficients,
    psi: &BoundaryMap,
    n_paths: u64,
    seed: u64,
    tol: f64,
) -> Result<CaseReport> {
    if psi.eval(0.0) == 0.0 {
        return Err(Error::PreconditionViolated(
            "psi(0) = 0 degenerates to the constant cases".into(),
        ));
    }
    let factors = lc.factors(1e-3);
    let solver = LinearBvpSolver::forward(lc, psi.clone(), tol.min(1e-12), 1e-3);
    let mut max_dev: f64 = 0.0;
    for i in 0..n_paths {
        let mut rng = PathRng::new(seed, i);
        let path = sample_path(&mut rng, 1.0)?;
        let ts = grid_times(path.times());
        let (x0, vals) = solver.values_at(&path, &ts)?;
        let sign = x0.signum();
        for (&t, &x_t) in ts.iter().zip(&vals) {
            if x_t.signum() != sign {
                max_dev = f64::INFINITY;
                continue;
            }
            let y = x_t.abs().ln();
            let mut xi = factors.a_factor(t).ln();
            for &s in path.jumps_in(0.0, t) {
                xi += (1.0 + lc.big_f2.eval(s)).ln();
            }
            max_dev = max_dev.max((y - xi - x0.abs().ln()).abs());
        }
    }
    Ok(CaseReport {
        n_paths,
        max_deviation: max_dev,
        tol,
        passed: max_dev < tol,
    })
}

/// Absorbing case (F2 = -1, no additive input): X_t/A(t) is a chain on
/// at most three values {x*, psi(0), 0} - constant x* without jumps,
/// otherwise psi(0) until the first jump and 0 afterwards.
pub fn markov_chain_check_case5(
    lc: &LinearCoefficients,
    psi: &BoundaryMap,
    n_paths: u64,
    seed: u64,
    tol: f64,
) -> Result<CaseReport> {
    let factors = lc.factors(1e-3);
    let a1 = factors.a_factor(1.0);
    let x_star = crate::bvp::find_fixed_point(|x| Ok(x - psi.eval(x * a1)), tol.min(1e-12))?;
    let psi0 = psi.eval(0.0);
    let solver = LinearBvpSolver::forward(lc, psi.clone(), tol.min(1e-12), 1e-3);
    let mut max_dev: f64 = 0.0;
    for i in 0..n_paths {
        let mut rng = PathRng::new(seed, i);
        let path = sample_path(&mut rng, 1.0)?;
        let ts = grid_times(path.times());
        let (_, vals) = solver.values_at(&path, &ts)?;
        let s1 = path.times().first().copied();
        for (&t, &x_t) in ts.iter().zip(&vals) {
            let y = x_t / factors.a_factor(t);
            let expect = match s1 {
                None => x_star,
                Some(s1) if t < s1 => psi0,
                Some(_) => 0.0,
            };
            max_dev = max_dev.max((y - expect).abs());
        }
    }
    Ok(CaseReport {
        n_paths,
        max_deviation: max_dev,
        tol,
        passed: max_dev < tol,
    })
}

/// The five linear presets with a known reciprocal solution. Constant
/// coefficients keep the sampled (X_a, X_b) support discrete, so the
/// conditional-independence test conditions exactly.
pub fn case_preset(case: u8) -> Result<(LinearCoefficients, BoundaryMap)> {
    match case {
        // Constant boundary data.
        1 => Ok((
            LinearCoefficients::constants(0.0, 0.3, 0.0, 0.5),
            BoundaryMap::constant(0.7),
        )),
        // Zero solution: psi(0) = 0 with no additive input.
        2 => Ok((
            LinearCoefficients::constants(0.0, 0.4, 0.0, 0.5),
            BoundaryMap::affine(-0.8, 0.0),
        )),
        // Additive jumps only (F2 = 0).
        3 => Ok((
            LinearCoefficients::constants(1.0, 0.0, 1.0, 0.0),
            BoundaryMap::affine(-1.0, 1.0),
        )),
        // Pure multiplicative jumps (F2 > -1, no additive input).
        4 => Ok((
            LinearCoefficients::constants(0.0, 0.3, 0.0, 1.0),
            BoundaryMap::clamped_affine(-0.5, 2.0, 0.5, 3.5),
        )),
        // Absorbing jumps (F2 = -1, no additive input).
        5 => Ok((
            LinearCoefficients::constants(0.0, 0.3, 0.0, -1.0),
            BoundaryMap::clamped_affine(-0.4, 1.0, 0.2, 1.8),
        )),
        _ => Err(Error::InvalidArgument(format!(
            "case {case} outside 1..=5"
        ))),
    }
}

/// Synthetic conditionally independent quadruples: discrete (X_a, X_b)
/// cells with independent within-cell noise on X_u and X_v.
pub fn synthetic_ci_null(n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = PathRng::new(seed, 0);
    (0..n)
        .map(|_| {
            let xa = (rng.uniform() * 4.0).floor();
            let xb = (rng.uniform() * 4.0).floor();
            let xu = 0.5 * xa - 0.3 * xb + rng.normal();
            let xv = 0.2 * xa + 0.4 * xb + rng.normal();
            [xa, xu, xb, xv]
        })
        .collect()
}

/// As above but with X_v coupled to X_u inside each cell.
pub fn synthetic_ci_dependent(n: usize, seed: u64, coupling: f64) -> Vec<[f64; 4]> {
    let mut rng = PathRng::new(seed, 0);
    (0..n)
        .map(|_| {
            let xa = (rng.uniform() * 4.0).floor();
            let xb = (rng.uniform() * 4.0).floor();
            let xu = 0.5 * xa - 0.3 * xb + rng.normal();
            let xv = coupling * xu + 0.2 * xa + (1.0 - coupling) * rng.normal();
            [xa, xu, xb, xv]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIMES: (f64, f64, f64, f64) = (0.2, 0.5, 0.8, 0.95);

    fn quick_opts() -> CiOptions {
        CiOptions {
            n_perms: 300,
            ..CiOptions::default()
        }
    }

    #[test]
    fn rejects_bad_time_layout() {
        let samples = synthetic_ci_null(200, 1);
        assert!(ci_permutation_test(&samples, (0.5, 0.2, 0.8, 0.95), &quick_opts(), 0).is_err());
        assert!(ci_permutation_test(&samples, (0.2, 0.5, 0.8, 0.6), &quick_opts(), 0).is_err());
    }

    #[test]
    fn null_is_rarely_rejected_and_dependence_is_caught() {
        let opts = quick_opts();
        let mut null_rejects = 0;
        for rep in 0..20u64 {
            let samples = synthetic_ci_null(1200, 100 + rep);
            let report = ci_permutation_test(&samples, TIMES, &opts, rep).unwrap();
            assert!(report.exact_cells);
            if report.any_rejected() {
                null_rejects += 1;
            }
        }
        assert!(null_rejects <= 2, "null rejects {null_rejects}/20");

        let mut caught = 0;
        for rep in 0..10u64 {
            let samples = synthetic_ci_dependent(10_000, 200 + rep, 0.8);
            let report = ci_permutation_test(&samples, TIMES, &opts, rep).unwrap();
            if report.any_rejected() {
                caught += 1;
            }
        }
        assert!(caught >= 9, "power {caught}/10");
    }

    #[test]
    fn quantile_mode_engages_on_continuous_data() {
        let mut rng = PathRng::new(501, 0);
        let samples: Vec<[f64; 4]> = (0..2_000)
            .map(|_| {
                let xa = rng.normal();
                let xb = rng.normal();
                [xa, rng.normal(), xb, rng.normal()]
            })
            .collect();
        let report = ci_permutation_test(&samples, TIMES, &quick_opts(), 3).unwrap();
        assert!(!report.exact_cells);
        assert!(report.tested() >= 10);
        assert!(!report.any_rejected(), "{:?}", report.rejected);
    }

    #[test]
    fn case3_preset_passes_ci_and_representation() {
        let (lc, psi) = case_preset(3).unwrap();
        let samples = sample_quadruples(&lc, &psi, TIMES, 10_000, 42, 1e-12, 1e-3).unwrap();
        let report = ci_permutation_test(&samples, TIMES, &quick_opts(), 7).unwrap();
        assert!(report.exact_cells, "case 3 support should be discrete");
        assert!(!report.any_rejected(), "{}", report.to_json());

        let rep = representation_check_case3(&lc, &psi, 2_000, 9, 1e-8).unwrap();
        assert!(rep.passed, "max deviation {}", rep.max_deviation);
    }

    #[test]
    fn case3_constant_inputs_give_constant_ratio() {
        // f1 = F1 = 0 collapses the input integral: Y is constant.
        let lc = LinearCoefficients::constants(0.0, 0.4, 0.0, 0.0);
        let psi = BoundaryMap::affine(-0.7, 0.9);
        let rep = representation_check_case3(&lc, &psi, 500, 11, 1e-9).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn case3_negative_control_fails() {
        // F2 != 0 breaks the jump-free representation.
        let lc = LinearCoefficients::constants(1.0, 0.0, 1.0, 0.4);
        let psi = BoundaryMap::affine(-1.0, 1.0);
        let rep = representation_check_case3(&lc, &psi, 500, 13, 1e-8).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn case4_representation_and_sign_preservation() {
        let (lc, psi) = case_preset(4).unwrap();
        let rep = representation_check_case4(&lc, &psi, 2_000, 17, 1e-8).unwrap();
        assert!(rep.passed, "max deviation {}", rep.max_deviation);

        // psi(0) = 0 is the degenerate configuration of other cases.
        let zero_psi = BoundaryMap::affine(-0.8, 0.0);
        assert!(matches!(
            representation_check_case4(&lc, &zero_psi, 10, 1, 1e-8),
            Err(Error::PreconditionViolated(_))
        ));

        // Additive input breaks the multiplicative representation.
        let corrupted = LinearCoefficients::constants(0.0, 0.3, 0.5, 1.0);
        let rep = representation_check_case4(&corrupted, &psi, 500, 19, 1e-8).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn case5_three_value_chain() {
        let (lc, psi) = case_preset(5).unwrap();
        let rep = markov_chain_check_case5(&lc, &psi, 5_000, 23, 1e-8).unwrap();
        assert!(rep.passed, "max deviation {}", rep.max_deviation);
    }

    #[test]
    fn case1_reduces_to_the_initial_value_problem() {
        // Constant boundary data: the solution is the plain flow started
        // at the constant, path by path.
        let (lc, psi) = case_preset(1).unwrap();
        let c = psi.eval(0.0);
        for i in 0..200u64 {
            let mut rng = PathRng::new(401, i);
            let path = sample_path(&mut rng, 1.0).unwrap();
            let bvp = crate::linear::solve_linear_bvp(&lc, &psi, &path, 1e-12, 1e-3).unwrap();
            let ivp = crate::linear::solve_linear_forward(&lc, &path, c, 1e-3).unwrap();
            for t in [0.0, 0.4, 0.8, 1.0] {
                assert!(
                    (bvp.value_at(t) - ivp.value_at(t)).abs() < 1e-10,
                    "path {i} t {t}"
                );
            }
        }
    }

    #[test]
    fn degenerate_case2_is_trivially_clean() {
        let (lc, psi) = case_preset(2).unwrap();
        let samples = sample_quadruples(&lc, &psi, TIMES, 2_000, 29, 1e-12, 1e-3).unwrap();
        assert!(samples.iter().all(|q| q.iter().all(|x| x.abs() < 1e-9)));
        let report = ci_permutation_test(&samples, TIMES, &quick_opts(), 31).unwrap();
        assert_eq!(report.tested(), 0);
        assert!(!report.any_rejected());
    }
}
