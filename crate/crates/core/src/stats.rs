//! Statistical utilities for the Monte Carlo verification harnesses:
//! two-sample Kolmogorov-Smirnov, Gaussian kernel density estimates,
//! distance correlation with a permutation null, and Benjamini-Hochberg
//! pooling.

use crate::path::PathRng;
use rand::seq::SliceRandom;
use serde::Serialize;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    let pos = q * (xs.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < xs.len() {
        xs[i] * (1.0 - frac) + xs[i + 1] * frac
    } else {
        xs[i]
    }
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_n - G_m|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (sorted(a), sorted(b));
    let (n, m) = (sa.len(), sb.len());
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let x = sa[i].min(sb[j]);
        while i < n && sa[i] <= x {
            i += 1;
        }
        while j < m && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.05 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS p-value with the finite-sample blow-up of the effective
/// sample size (Stephens' correction).
pub fn ks_two_sample_p(a: &[f64], b: &[f64]) -> f64 {
    let d = ks_statistic(a, b);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

/// Gaussian kernel density estimate with Silverman's bandwidth rule.
#[derive(Debug, Clone, Serialize)]
pub struct KernelDensity {
    pub bandwidth: f64,
    #[serde(skip)]
    points: Vec<f64>,
    pub n: usize,
}

impl KernelDensity {
    /// `None` when the sample is too small or numerically degenerate.
    pub fn silverman(xs: &[f64]) -> Option<Self> {
        if xs.len() < 5 {
            return None;
        }
        let sd = variance(xs).sqrt();
        let s = sorted(xs);
        let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
        let spread = if iqr > 0.0 {
            sd.min(iqr / 1.34)
        } else {
            sd
        };
        if !spread.is_finite() || spread <= 1e-12 {
            return None;
        }
        let bandwidth = 0.9 * spread * (xs.len() as f64).powf(-0.2);
        Some(KernelDensity {
            bandwidth,
            points: xs.to_vec(),
            n: xs.len(),
        })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / ((self.n as f64) * h * (2.0 * std::f64::consts::PI).sqrt());
        self.points
            .iter()
            .map(|&p| (-(x - p) * (x - p) / (2.0 * h * h)).exp())
            .sum::<f64>()
            * norm
    }
}

/// Double-centered distance matrix, flattened row-major.
fn centered_distances(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut d = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = (xs[i] - xs[j]).abs();
            d[i * n + j] = v;
            row[i] += v;
            total += v;
        }
    }
    let nf = n as f64;
    for r in row.iter_mut() {
        *r /= nf;
    }
    total /= nf * nf;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += total - row[i] - row[j];
        }
    }
    d
}

/// Squared distance covariance from centered matrices under a permutation
/// of the second sample's labels.
fn dcov_sq_permuted(a: &[f64], b: &[f64], perm: &[usize]) -> f64 {
    let n = perm.len();
    let mut acc = 0.0;
    for i in 0..n {
        let pi = perm[i] * n;
        let ai = i * n;
        for j in 0..n {
            acc += a[ai + j] * b[pi + perm[j]];
        }
    }
    acc / (n * n) as f64
}

/// Permutation p-value for dependence between paired samples, using squared
/// distance covariance as the statistic (its permutation law matches
/// distance correlation's because the marginal distance variances are
/// permutation-invariant). Returns `None` when either marginal is
/// numerically degenerate.
pub fn dcor_permutation_p(
    xs: &[f64],
    ys: &[f64],
    n_perms: usize,
    rng: &mut PathRng,
) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 8 || variance(xs) < 1e-18 || variance(ys) < 1e-18 {
        return None;
    }
    let a = centered_distances(xs);
    let b = centered_distances(ys);
    let identity: Vec<usize> = (0..n).collect();
    let observed = dcov_sq_permuted(&a, &b, &identity);
    let mut perm = identity;
    let mut at_least = 0usize;
    for _ in 0..n_perms {
        perm.shuffle(rng);
        if dcov_sq_permuted(&a, &b, &perm) >= observed {
            at_least += 1;
        }
    }
    Some((1 + at_least) as f64 / (1 + n_perms) as f64)
}

/// Benjamini-Hochberg: indices of rejected hypotheses at level `alpha`.
pub fn benjamini_hochberg(pvals: &[f64], alpha: f64) -> Vec<usize> {
    let m = pvals.len();
    if m == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| pvals[i].partial_cmp(&pvals[j]).unwrap());
    let mut cutoff = None;
    for (rank, &idx) in order.iter().enumerate() {
        if pvals[idx] <= alpha * (rank + 1) as f64 / m as f64 {
            cutoff = Some(rank);
        }
    }
    match cutoff {
        Some(r) => order[..=r].to_vec(),
        None => Vec::new(),
    }
}

/// Marginal quantile cell index (0..bins) of `x` within sorted reference.
pub fn quantile_cell(sorted_ref: &[f64], bins: usize, x: f64) -> usize {
    let rank = sorted_ref.partition_point(|&v| v <= x);
    ((rank * bins) / (sorted_ref.len() + 1)).min(bins - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_detects_shift_and_accepts_identity() {
        let mut rng = PathRng::new(11, 0);
        let a: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
        let shifted: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        assert!(ks_two_sample_p(&a, &b) > 1e-3);
        assert!(ks_two_sample_p(&a, &shifted) < 1e-3);
    }

    #[test]
    fn ks_p_is_roughly_uniform_under_null() {
        let mut rejects = 0;
        for rep in 0..200u64 {
            let mut rng = PathRng::new(12, rep);
            let a: Vec<f64> = (0..300).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..300).map(|_| rng.normal()).collect();
            if ks_two_sample_p(&a, &b) < 0.05 {
                rejects += 1;
            }
        }
        let rate = rejects as f64 / 200.0;
        assert!(rate < 0.10, "null KS reject rate {rate}");
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = PathRng::new(13, 0);
        let xs: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let kde = KernelDensity::silverman(&xs).unwrap();
        let total = crate::quad::simpson(|x| kde.pdf(x), -8.0, 8.0, 2000);
        assert!((total - 1.0).abs() < 1e-3, "mass {total}");
        // Degenerate sample has no density estimate.
        assert!(KernelDensity::silverman(&vec![1.0; 100]).is_none());
    }

    #[test]
    fn dcor_permutation_calibration_and_power() {
        // Independent pairs: p should rarely be tiny.
        let mut rng = PathRng::new(14, 0);
        let xs: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let ys: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let p = dcor_permutation_p(&xs, &ys, 500, &mut rng).unwrap();
        assert!(p > 0.01, "independent p = {p}");
        // Nonlinear dependence: y = x^2 + noise.
        let ys2: Vec<f64> = xs.iter().map(|x| x * x + 0.1 * rng.normal()).collect();
        let p2 = dcor_permutation_p(&xs, &ys2, 500, &mut rng).unwrap();
        assert!(p2 < 0.01, "dependent p = {p2}");
        // Degenerate marginal.
        assert!(dcor_permutation_p(&vec![1.0; 200], &ys, 100, &mut rng).is_none());
    }

    #[test]
    fn bh_rejects_small_pvalues_only() {
        let pvals = vec![0.001, 0.8, 0.02, 0.5, 0.004];
        let mut rej = benjamini_hochberg(&pvals, 0.05);
        rej.sort();
        assert_eq!(rej, vec![0, 2, 4]);
        assert!(benjamini_hochberg(&[0.2, 0.9, 0.7], 0.05).is_empty());
    }

    #[test]
    fn quantile_cells_balance() {
        let sorted_ref: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let mut counts = [0usize; 4];
        for i in 0..1000 {
            counts[quantile_cell(&sorted_ref, 4, i as f64)] += 1;
        }
        for c in counts {
            assert!((c as i64 - 250).abs() <= 10, "cell counts {counts:?}");
        }
    }
}
