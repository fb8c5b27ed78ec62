//! Analytic derivatives of the boundary-problem solution with respect to
//! the jump instants, with a re-solve finite-difference oracle.
//!
//! Two weights drive everything: B(t) is the state derivative of the flow
//! along the solved trajectory, and A(s_j, t) is the direct effect of
//! moving jump j. The initial value responds through the implicit function
//! rule for x = psi(flow_1(x)); the solution at time t combines the
//! propagated initial response with the direct term when the jump precedes t.

use crate::bvp::{solve_forward_bvp, BoundaryMap, BvpOptions};
use crate::error::{Error, Result};
use crate::flow::CoefficientField;
use crate::path::JumpPath;
use crate::quad::simpson;
use crate::traj::Trajectory;

/// Simpson integral of g(r, X_r) over [a, b] along the stored trajectory.
fn integrate_along<G>(traj: &Trajectory, a: f64, b: f64, g: G) -> Result<f64>
where
    G: Fn(f64, f64) -> Result<f64>,
{
    let mut total = 0.0;
    let mut err = None;
    for seg in traj.segments() {
        let lo = seg.t0.max(a);
        let hi = seg.t1.min(b);
        if hi <= lo {
            continue;
        }
        let n = (((hi - lo) / 1e-3).ceil() as usize).max(2);
        total += simpson(
            |r| match g(r, seg.eval(r)) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            },
            lo,
            hi,
            n,
        );
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(total)
}

/// B(t): exp of the integrated drift slope times the jump-slope product
/// over the jumps at or before t. Equals the state derivative of the flow
/// at x = X_0.
pub fn weight_b(
    traj: &Trajectory,
    t: f64,
    f: &CoefficientField,
    jump: &CoefficientField,
) -> Result<f64> {
    let integ = integrate_along(traj, 0.0, t, |r, x| f.d2(r, x))?;
    let mut prod = 1.0;
    for jv in traj.jumps() {
        if jv.time <= t {
            prod *= 1.0 + jump.d2(jv.time, jv.left)?;
        }
    }
    Ok(integ.exp() * prod)
}

/// A(s_j, t): the direct sensitivity of X_t to jump j (0-based), for
/// s_j <= t. The bracket mixes the drift mismatch across the jump with the
/// time slope of the jump coefficient.
pub fn weight_a(
    traj: &Trajectory,
    j: usize,
    t: f64,
    f: &CoefficientField,
    jump: &CoefficientField,
) -> Result<f64> {
    let jv = *traj
        .jumps()
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("jump index {j} out of range")))?;
    if jv.time > t {
        return Err(Error::InvalidArgument(format!(
            "jump {j} at {} lies after t = {t}",
            jv.time
        )));
    }
    let integ = integrate_along(traj, jv.time, t, |r, x| f.d2(r, x))?;
    let mut prod = 1.0;
    for other in traj.jumps() {
        if other.time > jv.time && other.time <= t {
            prod *= 1.0 + jump.d2(other.time, other.left)?;
        }
    }
    let bracket = -f.eval(jv.time, jv.right)
        + f.eval(jv.time, jv.left) * (1.0 + jump.d2(jv.time, jv.left)?)
        + jump.d1(jv.time, jv.left)?;
    Ok(integ.exp() * prod * bracket)
}

/// dX_0/ds_j by the implicit function rule: the denominator
/// 1 - psi'(X_1) B(1) is at least 1 under the standing hypotheses.
pub fn dx0_dsj(
    traj: &Trajectory,
    j: usize,
    f: &CoefficientField,
    jump: &CoefficientField,
    psi: &BoundaryMap,
) -> Result<f64> {
    let x1 = traj.terminal_value();
    let dpsi = psi.derivative(x1)?;
    if dpsi == 0.0 {
        // Constant boundary data: the initial value never moves.
        return Ok(0.0);
    }
    let a = weight_a(traj, j, 1.0, f, jump)?;
    let b = weight_b(traj, 1.0, f, jump)?;
    Ok(dpsi * a / (1.0 - dpsi * b))
}

/// dX_t/ds_j: the initial response propagated by B(t), plus the direct
/// term A(s_j, t) when the jump lies at or before t.
pub fn dxt_dsj(
    traj: &Trajectory,
    j: usize,
    t: f64,
    f: &CoefficientField,
    jump: &CoefficientField,
    psi: &BoundaryMap,
) -> Result<f64> {
    let jv = *traj
        .jumps()
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("jump index {j} out of range")))?;
    let through_x0 = weight_b(traj, t, f, jump)? * dx0_dsj(traj, j, f, jump, psi)?;
    if jv.time <= t {
        Ok(through_x0 + weight_a(traj, j, t, f, jump)?)
    } else {
        Ok(through_x0)
    }
}

/// Central finite difference of the fully re-solved X_t as a function of
/// s_j. `h` defaults to 1e-6 clipped to a quarter of the gap to the
/// neighboring jumps; an explicit `h` that would cross a neighbor is an
/// argument error.
#[allow(clippy::too_many_arguments)]
pub fn fd_oracle(
    f: &CoefficientField,
    jump: &CoefficientField,
    psi: &BoundaryMap,
    path: &JumpPath,
    j: usize,
    t: f64,
    h: Option<f64>,
    opts: &BvpOptions,
) -> Result<f64> {
    let times = path.times();
    let sj = *times
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("jump index {j} out of range")))?;
    let gap_left = if j == 0 { sj } else { sj - times[j - 1] };
    let gap_right = if j + 1 == times.len() {
        1.0 - sj
    } else {
        times[j + 1] - sj
    };
    let max_h = 0.25 * gap_left.min(gap_right.max(f64::MIN_POSITIVE));
    let h = match h {
        Some(h) => {
            if h >= gap_left || h > gap_right {
                return Err(Error::InvalidArgument(format!(
                    "step {h} crosses a neighboring jump (gaps {gap_left}, {gap_right})"
                )));
            }
            h
        }
        None => 1e-6f64.min(max_h),
    };
    let solve_at = |s: f64| -> Result<f64> {
        let moved = path.with_jump_moved(j, s)?;
        let traj = solve_forward_bvp(f, jump, psi, &moved, opts)?;
        Ok(traj.value_at(t))
    };
    Ok((solve_at(sj + h)? - solve_at(sj - h)?) / (2.0 * h))
}

/// One comparison row: analytic dX_t/ds_j against the re-solve oracle.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityRow {
    pub path_id: u64,
    pub j: usize,
    pub t: f64,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

/// Evaluate analytic-versus-oracle rows for each jump of each path at the
/// given times. The relative error floors its denominator at 1e-3 so
/// near-zero derivatives do not blow it up.
pub fn sensitivity_report(
    f: &CoefficientField,
    jump: &CoefficientField,
    psi: &BoundaryMap,
    paths: &[(u64, JumpPath)],
    ts: &[f64],
    opts: &BvpOptions,
) -> Result<Vec<SensitivityRow>> {
    let oracle_opts = BvpOptions {
        tol: opts.tol.min(1e-13),
        ..*opts
    };
    let mut rows = Vec::new();
    for (path_id, path) in paths {
        let traj = solve_forward_bvp(f, jump, psi, path, &oracle_opts)?;
        for j in 0..path.len() {
            for &t in ts {
                let analytic = dxt_dsj(&traj, j, t, f, jump, psi)?;
                let fd = fd_oracle(f, jump, psi, path, j, t, None, &oracle_opts)?;
                let rel_err = (analytic - fd).abs() / fd.abs().max(1e-3);
                rows.push(SensitivityRow {
                    path_id: *path_id,
                    j,
                    t,
                    analytic,
                    fd,
                    rel_err,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV rendering of a sensitivity report (1-based jump index).
pub fn report_csv(rows: &[SensitivityRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("path_id,j,t,analytic,fd,rel_err\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.path_id,
            r.j + 1,
            r.t,
            r.analytic,
            r.fd,
            r.rel_err
        );
    }
    out
}
