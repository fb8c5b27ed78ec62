//! Jump paths of a unit-rate Poisson process on [0, 1].
//!
//! A path is the strictly increasing tuple of its jump instants; the empty
//! tuple is the no-jump point of the canonical space. Samplers draw either
//! unconditionally (exponential gaps) or conditionally on the jump count
//! (uniform order statistics).

use crate::error::{Error, Result};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Strictly increasing jump instants in (0, 1]. Empty means "no jumps".
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct JumpPath {
    times: Vec<f64>,
}

impl JumpPath {
    /// Build from jump instants, validating strict increase and (0, 1].
    pub fn new(times: Vec<f64>) -> Result<Self> {
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t <= 0.0 || t > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "jump time {t} outside (0, 1]"
                )));
            }
            if i > 0 && times[i - 1] >= t {
                return Err(Error::InvalidArgument(format!(
                    "jump times not strictly increasing at index {i}: {} >= {t}",
                    times[i - 1]
                )));
            }
        }
        Ok(JumpPath { times })
    }

    /// The no-jump path.
    pub fn empty() -> Self {
        JumpPath { times: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of jumps in the half-open window (s, t].
    pub fn count_jumps(&self, s: f64, t: f64) -> Result<usize> {
        if s > t {
            return Err(Error::InvalidArgument(format!(
                "count_jumps: s = {s} > t = {t}"
            )));
        }
        Ok(self.times.iter().filter(|&&u| u > s && u <= t).count())
    }

    /// Jumps in (s, t], in order.
    pub fn jumps_in(&self, s: f64, t: f64) -> &[f64] {
        let lo = self.times.partition_point(|&u| u <= s);
        let hi = self.times.partition_point(|&u| u <= t);
        &self.times[lo..hi]
    }

    /// Path with jump `j` (0-based) removed; removing the only jump yields
    /// the empty path.
    pub fn without_jump(&self, j: usize) -> Result<JumpPath> {
        if j >= self.times.len() {
            return Err(Error::InvalidArgument(format!(
                "jump index {j} out of range (path has {} jumps)",
                self.times.len()
            )));
        }
        let mut times = self.times.clone();
        times.remove(j);
        Ok(JumpPath { times })
    }

    /// Path with an extra jump at `t`; errors if `t` collides with an
    /// existing jump or lies outside (0, 1].
    pub fn with_jump(&self, t: f64) -> Result<JumpPath> {
        if self.times.contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "jump time {t} already present"
            )));
        }
        let mut times = self.times.clone();
        let pos = times.partition_point(|&u| u < t);
        times.insert(pos, t);
        JumpPath::new(times)
    }

    /// Path with jump `j` moved to `t`, keeping strict order.
    pub fn with_jump_moved(&self, j: usize, t: f64) -> Result<JumpPath> {
        if j >= self.times.len() {
            return Err(Error::InvalidArgument(format!(
                "jump index {j} out of range"
            )));
        }
        let mut times = self.times.clone();
        times[j] = t;
        JumpPath::new(times)
    }
}

impl<'de> Deserialize<'de> for JumpPath {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let times = Vec::<f64>::deserialize(deserializer)?;
        JumpPath::new(times).map_err(serde::de::Error::custom)
    }
}

/// Reproducible per-stream generator.
///
/// The same (seed, stream) pair always yields the same draws, independent of
/// worker layout, so Monte Carlo drivers seed one stream per path index.
#[derive(Debug, Clone)]
pub struct PathRng(ChaCha8Rng);

impl PathRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        PathRng(rng)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard exponential draw.
    pub fn exponential(&mut self) -> f64 {
        // 1 - U lies in (0, 1], so the log is finite.
        -(1.0 - self.uniform()).ln()
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u = 1.0 - self.uniform();
        let v = self.uniform();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }
}

impl RngCore for PathRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Sample a unit-rate Poisson path on [0, horizon] with horizon in (0, 1].
///
/// Gaps are Exp(1); only jumps at or before the horizon are kept.
pub fn sample_path(rng: &mut PathRng, horizon: f64) -> Result<JumpPath> {
    if !(horizon > 0.0 && horizon <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} outside (0, 1]"
        )));
    }
    let mut times = Vec::new();
    let mut t = rng.exponential();
    while t <= horizon {
        // Zero gaps have probability zero; skip them if they ever occur so
        // the strict-increase invariant holds.
        if times.last().is_none_or(|&p| t > p) {
            times.push(t);
        }
        t += rng.exponential();
    }
    Ok(JumpPath { times })
}

/// Sample jump times conditioned on exactly `n` jumps in [0, t]: the order
/// statistics of n i.i.d. Uniform(0, t) draws. `n = 0` yields the empty path.
pub fn sample_conditional(rng: &mut PathRng, n: usize, t: f64) -> Result<JumpPath> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("t = {t} outside (0, 1]")));
    }
    if n == 0 {
        return Ok(JumpPath::empty());
    }
    let mut times: Vec<f64> = (0..n).map(|_| rng.uniform() * t).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    while times.len() < n {
        // Ties have probability zero; top up if they ever occur.
        let extra = rng.uniform() * t;
        if !times.contains(&extra) {
            times.push(extra);
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
    }
    JumpPath::new(times)
}

/// Jump times conditioned on `n` jumps in [0, t] and `k` jumps in (t, 1]:
/// independent uniform order statistics on the two windows.
pub fn sample_conditional_split(
    rng: &mut PathRng,
    n: usize,
    k: usize,
    t: f64,
) -> Result<JumpPath> {
    let before = sample_conditional(rng, n, t)?;
    let mut times = before.times;
    if k > 0 && t < 1.0 {
        let mut after: Vec<f64> = (0..k).map(|_| t + rng.uniform() * (1.0 - t)).collect();
        after.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.extend(after);
    }
    JumpPath::new(times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn construction_rejects_disorder_and_range() {
        assert!(JumpPath::new(vec![0.3, 0.3]).is_err());
        assert!(JumpPath::new(vec![0.7, 0.3]).is_err());
        assert!(JumpPath::new(vec![0.0, 0.5]).is_err());
        assert!(JumpPath::new(vec![0.5, 1.2]).is_err());
        assert!(JumpPath::new(vec![0.3, 0.7]).is_ok());
    }

    #[test]
    fn count_uses_half_open_window() {
        let p = JumpPath::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(p.count_jumps(0.0, 1.0).unwrap(), 2);
        assert_eq!(p.count_jumps(0.3, 0.7).unwrap(), 1);
        assert_eq!(JumpPath::empty().count_jumps(0.0, 1.0).unwrap(), 0);
        assert!(p.count_jumps(0.8, 0.2).is_err());
    }

    #[test]
    fn removal() {
        let p = JumpPath::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(p.without_jump(0).unwrap().times(), &[0.7]);
        let single = JumpPath::new(vec![0.5]).unwrap();
        assert!(single.without_jump(0).unwrap().is_empty());
        let three = JumpPath::new(vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(three.without_jump(1).unwrap().times(), &[0.2, 0.9]);
        assert!(p.without_jump(2).is_err());
    }

    #[test]
    fn no_arrival_before_horizon_gives_empty_path() {
        // Find a stream whose first exponential draw exceeds 1.
        for s in 0..64 {
            let mut probe = PathRng::new(7, s);
            if probe.exponential() > 1.0 {
                let mut rng = PathRng::new(7, s);
                assert!(sample_path(&mut rng, 1.0).unwrap().is_empty());
                return;
            }
        }
        panic!("no stream with a long first gap among 64 candidates");
    }

    #[test]
    fn unconditional_sampler_moments() {
        let n = 100_000u64;
        let mut empty = 0usize;
        let mut total = 0usize;
        for i in 0..n {
            let mut rng = PathRng::new(2024, i);
            let p = sample_path(&mut rng, 1.0).unwrap();
            if p.is_empty() {
                empty += 1;
            }
            total += p.len();
        }
        let frac_empty = empty as f64 / n as f64;
        let mean_count = total as f64 / n as f64;
        assert!(
            (frac_empty - (-1.0f64).exp()).abs() < 0.005,
            "empty fraction {frac_empty}"
        );
        assert!((mean_count - 1.0).abs() < 0.01, "mean count {mean_count}");
    }

    #[test]
    fn conditional_sampler_order_statistic_means() {
        let n = 100_000u64;
        let mut m1 = 0.0;
        for i in 0..n {
            let mut rng = PathRng::new(5150, i);
            m1 += sample_conditional(&mut rng, 1, 1.0).unwrap().times()[0];
        }
        m1 /= n as f64;
        assert!((m1 - 0.5).abs() < 0.005, "n=1 mean {m1}");

        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..n {
            let mut rng = PathRng::new(5151, i);
            let p = sample_conditional(&mut rng, 2, 1.0).unwrap();
            a += p.times()[0];
            b += p.times()[1];
        }
        a /= n as f64;
        b /= n as f64;
        assert!((a - 1.0 / 3.0).abs() < 0.005, "s1 mean {a}");
        assert!((b - 2.0 / 3.0).abs() < 0.005, "s2 mean {b}");

        let mut rng = PathRng::new(5152, 0);
        assert!(sample_conditional(&mut rng, 0, 0.7).unwrap().is_empty());
    }

    #[test]
    fn conditional_sampler_uniform_on_simplex() {
        // With (S1, S2) the order statistics of two U(0,1) draws,
        // (S1/S2, S2^2) is uniform on the unit square. Chi-square over a
        // 10x10 grid, 99 dof; 148.2 is the 0.1% critical value.
        let n = 100_000u64;
        let mut counts = [[0u32; 10]; 10];
        for i in 0..n {
            let mut rng = PathRng::new(99, i);
            let p = sample_conditional(&mut rng, 2, 1.0).unwrap();
            let (s1, s2) = (p.times()[0], p.times()[1]);
            let u = ((s1 / s2) * 10.0).min(9.0) as usize;
            let v = ((s2 * s2) * 10.0).min(9.0) as usize;
            counts[u][v] += 1;
        }
        let expected = n as f64 / 100.0;
        let stat: f64 = counts
            .iter()
            .flatten()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(stat < 148.2, "chi-square statistic {stat}");
    }

    #[test]
    fn same_seed_same_stream_is_bit_identical() {
        let mut a = PathRng::new(31337, 17);
        let mut b = PathRng::new(31337, 17);
        let pa = sample_path(&mut a, 1.0).unwrap();
        let pb = sample_path(&mut b, 1.0).unwrap();
        assert_eq!(pa.times(), pb.times());
        let mut c = PathRng::new(31337, 18);
        let pc = sample_path(&mut c, 1.0).unwrap();
        assert!(pa.times() != pc.times() || pa.is_empty());
    }

    proptest! {
        #[test]
        fn sampled_paths_satisfy_invariants(seed in 0u64..10_000) {
            let mut rng = PathRng::new(424242, seed);
            let p = sample_path(&mut rng, 1.0).unwrap();
            for (i, &t) in p.times().iter().enumerate() {
                prop_assert!(t > 0.0 && t <= 1.0);
                if i > 0 {
                    prop_assert!(p.times()[i - 1] < t);
                }
            }
        }

        #[test]
        fn serde_round_trip(seed in 0u64..200) {
            let mut rng = PathRng::new(8, seed);
            let p = sample_path(&mut rng, 1.0).unwrap();
            let json = serde_json::to_string(&p).unwrap();
            let back: JumpPath = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(p, back);
        }
    }
}
