//! Piecewise-smooth cadlag solution paths.
//!
//! A trajectory covers [0, 1]: one dense ODE segment between consecutive
//! jumps, a recorded left/right value pair at every jump, and 4th-order
//! Hermite interpolation inside segments.

use crate::error::{Error, Result};
use crate::path::JumpPath;
use crate::quad::hermite;
use serde::{Deserialize, Serialize};

/// Dense output of one smooth segment on a uniform grid.
///
/// `ys` and `slopes` are node values of the solution and its time
/// derivative; a single-node grid encodes a zero-length segment.
#[derive(Debug, Clone)]
pub struct SegmentGrid {
    pub t0: f64,
    pub t1: f64,
    pub ys: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl SegmentGrid {
    pub fn point(t: f64, y: f64) -> Self {
        SegmentGrid {
            t0: t,
            t1: t,
            ys: vec![y],
            slopes: vec![0.0],
        }
    }

    pub fn start_value(&self) -> f64 {
        self.ys[0]
    }

    pub fn end_value(&self) -> f64 {
        *self.ys.last().unwrap()
    }

    pub fn step(&self) -> f64 {
        if self.ys.len() < 2 {
            0.0
        } else {
            (self.t1 - self.t0) / (self.ys.len() - 1) as f64
        }
    }

    /// Interpolated value at `t` (clamped to the segment).
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.ys.len();
        if n == 1 {
            return self.ys[0];
        }
        let h = self.step();
        let s = ((t - self.t0) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let (a, b) = (self.t0 + i as f64 * h, self.t0 + (i + 1) as f64 * h);
        hermite(a, b, self.ys[i], self.ys[i + 1], self.slopes[i], self.slopes[i + 1], t)
    }

    /// Grid nodes paired with values, for Simpson-weighted functionals.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = self.step();
        self.ys
            .iter()
            .enumerate()
            .map(move |(i, &y)| (self.t0 + i as f64 * h, y))
    }
}

/// One-sided values at a jump instant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JumpValues {
    pub time: f64,
    pub left: f64,
    pub right: f64,
}

/// Which pathwise equation a trajectory solves. Forward equations evaluate
/// jump integrands at the left limit; backward equations at the post-jump
/// value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Forward,
    Backward,
    Skorohod,
}

/// A solved cadlag path on [0, 1].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub x0: f64,
    pub path: JumpPath,
    pub kind: TrajectoryKind,
    segments: Vec<SegmentGrid>,
    jumps: Vec<JumpValues>,
}

impl Trajectory {
    /// Assemble from per-interval dense output. Segment `i` must span from
    /// jump `i-1` (or 0) to jump `i` (or 1).
    pub fn new(
        x0: f64,
        path: JumpPath,
        kind: TrajectoryKind,
        segments: Vec<SegmentGrid>,
        jumps: Vec<JumpValues>,
    ) -> Result<Self> {
        if segments.len() != path.len() + 1 || jumps.len() != path.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory shape mismatch: {} segments, {} jump records, {} jumps",
                segments.len(),
                jumps.len(),
                path.len()
            )));
        }
        Ok(Trajectory {
            x0,
            path,
            kind,
            segments,
            jumps,
        })
    }

    pub fn jumps(&self) -> &[JumpValues] {
        &self.jumps
    }

    pub fn segments(&self) -> &[SegmentGrid] {
        &self.segments
    }

    /// Cadlag evaluation: at a jump instant the post-jump value is returned.
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.path.times().partition_point(|&u| u <= t);
        self.segments[idx].eval(t)
    }

    /// Left limit at jump `j` (0-based).
    pub fn left_at_jump(&self, j: usize) -> Result<f64> {
        self.jumps
            .get(j)
            .map(|jv| jv.left)
            .ok_or_else(|| Error::InvalidArgument(format!("jump index {j} out of range")))
    }

    pub fn terminal_value(&self) -> f64 {
        self.segments.last().unwrap().end_value()
    }

    /// Serialize as {x0, jump_times, jumps, samples} with `grid` uniform
    /// sample points; one-sided values at jumps ride along in `jumps`.
    pub fn to_json(&self, grid: usize) -> serde_json::Value {
        let n = grid.max(2);
        let samples: Vec<serde_json::Value> = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                serde_json::json!([t, self.value_at(t)])
            })
            .collect();
        serde_json::json!({
            "kind": self.kind,
            "x0": self.x0,
            "jump_times": self.path.times(),
            "jumps": self.jumps,
            "samples": samples,
        })
    }
}
