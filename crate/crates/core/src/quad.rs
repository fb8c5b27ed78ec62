//! Quadrature and root-finding primitives.
//!
//! Composite Simpson rules (free-standing and over precomputed grids), a
//! cumulative-integral table with cubic Hermite interpolation between nodes,
//! and a bracketed Brent root finder that tolerates fallible integrands.

use crate::error::{Error, Result};

/// Composite Simpson rule with `n` subintervals (rounded up to an even count).
pub fn simpson<F: FnMut(f64) -> f64>(mut g: F, a: f64, b: f64, n: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = n.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    let mut acc = g(a) + g(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Simpson rule over equally spaced samples `ys` with spacing `h`.
///
/// Requires an odd number of samples (an even number of intervals); the
/// integrator grids are built that way.
pub fn simpson_grid(ys: &[f64], h: f64) -> f64 {
    debug_assert!(ys.len() >= 3 && ys.len() % 2 == 1);
    let mut acc = ys[0] + ys[ys.len() - 1];
    for (i, y) in ys.iter().enumerate().take(ys.len() - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * y } else { 2.0 * y };
    }
    acc * h / 3.0
}

/// Cumulative integral t -> int_a^t g(r) dr on a fixed uniform grid.
///
/// Node values come from composite Simpson over interval pairs (with the
/// standard 4th-order half-pair rule for odd nodes); between nodes the
/// primitive is evaluated by cubic Hermite interpolation, whose slopes are
/// the integrand itself. Total error is O(h^4) for smooth integrands.
#[derive(Debug, Clone)]
pub struct CumIntegral {
    a: f64,
    h: f64,
    cum: Vec<f64>,
    vals: Vec<f64>,
}

impl CumIntegral {
    /// Tabulate int_a^t g over [a, b] with `n` subintervals (made even).
    pub fn build<F: Fn(f64) -> f64>(g: F, a: f64, b: f64, n: usize) -> Self {
        let n = n.max(2).next_multiple_of(2);
        let h = (b - a) / n as f64;
        let vals: Vec<f64> = (0..=n).map(|i| g(a + i as f64 * h)).collect();
        let mut cum = vec![0.0; n + 1];
        for k in (0..n).step_by(2) {
            let (g0, g1, g2) = (vals[k], vals[k + 1], vals[k + 2]);
            cum[k + 1] = cum[k] + h / 12.0 * (5.0 * g0 + 8.0 * g1 - g2);
            cum[k + 2] = cum[k] + h / 3.0 * (g0 + 4.0 * g1 + g2);
        }
        CumIntegral { a, h, cum, vals }
    }

    pub fn lower(&self) -> f64 {
        self.a
    }

    pub fn upper(&self) -> f64 {
        self.a + self.h * (self.cum.len() - 1) as f64
    }

    /// int_a^t g(r) dr.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.cum.len() - 1;
        let s = ((t - self.a) / self.h).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let th = s - i as f64;
        // Hermite basis on [t_i, t_{i+1}] with slopes g_i, g_{i+1}.
        let (c0, c1) = (self.cum[i], self.cum[i + 1]);
        let (m0, m1) = (self.vals[i] * self.h, self.vals[i + 1] * self.h);
        let t2 = th * th;
        let t3 = t2 * th;
        (2.0 * t3 - 3.0 * t2 + 1.0) * c0
            + (t3 - 2.0 * t2 + th) * m0
            + (-2.0 * t3 + 3.0 * t2) * c1
            + (t3 - t2) * m1
    }

    /// int_s^t g(r) dr.
    pub fn between(&self, s: f64, t: f64) -> f64 {
        self.eval(t) - self.eval(s)
    }
}

/// Cubic Hermite evaluation on one interval given endpoint values and slopes.
pub fn hermite(t0: f64, t1: f64, y0: f64, y1: f64, m0: f64, m1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    if h == 0.0 {
        return y1;
    }
    let th = (t - t0) / h;
    let t2 = th * th;
    let t3 = t2 * th;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + th) * (m0 * h)
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * (m1 * h)
}

const BRENT_MAX_ITER: usize = 200;

/// Brent's method on a bracket [a, b] with g(a) and g(b) of opposite sign.
///
/// Stops once the bracket width drops below `xtol` (plus a relative term at
/// machine precision) and additionally polishes until |g| <= `gtol` when a
/// residual target is given. The integrand may fail (e.g. ODE overflow);
/// failures propagate.
pub fn brent_root<F>(
    mut g: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    xtol: f64,
    gtol: Option<f64>,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::InvalidArgument(format!(
            "brent_root: no sign change on [{a}, {b}]"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    let mut xtol_eff = xtol;
    for _ in 0..BRENT_MAX_ITER {
        if fb.abs() > fc.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol_eff;
        let xm = 0.5 * (c - b);
        let converged = xm.abs() <= tol1 || fb == 0.0;
        if converged && gtol.is_none_or(|gt| fb.abs() <= gt) {
            return Ok(b);
        }
        if converged {
            // Width converged but the residual target is unmet: the local
            // slope exceeds gtol/xtol. Drop the width floor and keep
            // refining toward machine precision.
            xtol_eff = 0.0;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic / secant step.
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else {
            tol1.copysign(xm)
        };
        fb = g(b)?;
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    if gtol.is_some_and(|gt| fb.abs() <= gt) || fb.abs() <= xtol {
        return Ok(b);
    }
    Err(Error::NoConvergence {
        tol: gtol.unwrap_or(xtol),
        residual: fb.abs(),
    })
}
