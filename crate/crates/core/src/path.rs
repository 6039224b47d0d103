//! Piecewise-linear paths and their action.
//!
//! On each open segment a path lies on the face of stations that are zero
//! at both endpoints, so its cost is `(t_{i+1} − t_i) L_J(Δx/Δt)` with that
//! face. A path that should run along a boundary needs explicit breakpoints
//! on it.

use serde::Serialize;
use thiserror::Error;

use crate::cramer::Gating;
use crate::extended::ExtReal;
use crate::harness::emit::fmt_g;
use crate::local_rate::{solve_lj, GatingMode, LocalRateError, LocalRateProblem};
use crate::model::{Network, StationSet};

#[derive(Debug, Error)]
pub enum PathError {
    #[error("invalid path: {0}")]
    Invalid(String),
    #[error("cannot parse path: {0}")]
    Parse(String),
    #[error(transparent)]
    LocalRate(#[from] LocalRateError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiecewiseLinearPath {
    times: Vec<f64>,
    positions: Vec<Vec<f64>>,
}

impl PiecewiseLinearPath {
    /// Checks that times start at 0 and strictly increase and that positions
    /// are nonnegative with a common dimension.
    pub fn new(times: Vec<f64>, positions: Vec<Vec<f64>>) -> Result<Self, PathError> {
        if times.is_empty() || times.len() != positions.len() {
            return Err(PathError::Invalid(format!(
                "{} times for {} positions",
                times.len(),
                positions.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(PathError::Invalid(format!("path must start at time 0, got {}", times[0])));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(PathError::Invalid(format!("times must strictly increase: {} then {}", w[0], w[1])));
        }
        let k = positions[0].len();
        if k == 0 {
            return Err(PathError::Invalid("positions are empty".into()));
        }
        for p in &positions {
            if p.len() != k {
                return Err(PathError::Invalid("positions differ in dimension".into()));
            }
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(PathError::Invalid(format!("position {p:?} leaves the orthant")));
            }
        }
        Ok(PiecewiseLinearPath { times, positions })
    }

    /// The path that stays at `x` for `duration` (a single point if zero).
    pub fn constant(x: Vec<f64>, duration: f64) -> Result<Self, PathError> {
        if duration > 0.0 {
            Self::new(vec![0.0, duration], vec![x.clone(), x])
        } else {
            Self::new(vec![0.0], vec![x])
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn num_segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn start(&self) -> &[f64] {
        &self.positions[0]
    }

    pub fn end(&self) -> &[f64] {
        self.positions.last().expect("nonempty")
    }

    /// Position at time `t`, held constant after the last breakpoint.
    pub fn at(&self, t: f64) -> Vec<f64> {
        if t >= self.duration() {
            return self.end().to_vec();
        }
        let i = self.times.partition_point(|&s| s <= t).max(1) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.positions[i].iter().zip(&self.positions[i + 1]).map(|(a, b)| a + w * (b - a)).collect()
    }

    /// CSV rows `t,x_1,…,x_K` with a header, floats at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 1..=self.dim() {
            out.push_str(&format!(",x_{k}"));
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.positions) {
            out.push_str(&fmt_g(*t, 17));
            for v in x {
                out.push(',');
                out.push_str(&fmt_g(*v, 17));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the [`to_csv`](Self::to_csv) format. Blank lines, `#` comments
    /// and a header line starting with `t` are skipped.
    pub fn from_csv(text: &str) -> Result<Self, PathError> {
        let mut times = Vec::new();
        let mut positions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('t') {
                continue;
            }
            let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let fields = fields.map_err(|e| PathError::Parse(format!("line {}: {e}", lineno + 1)))?;
            if fields.len() < 2 {
                return Err(PathError::Parse(format!("line {}: need t and at least one coordinate", lineno + 1)));
            }
            times.push(fields[0]);
            positions.push(fields[1..].to_vec());
        }
        Self::new(times, positions)
    }
}

/// Stations that are zero on the open segment from `p` to `q`.
pub fn segment_face(p: &[f64], q: &[f64]) -> StationSet {
    StationSet::from_indices((0..p.len()).filter(|&k| p[k] <= 0.0 && q[k] <= 0.0))
}

fn check_dims(net: &Network, path: &PiecewiseLinearPath, q0: &[f64]) -> Result<(), PathError> {
    if path.dim() != net.k() || q0.len() != net.k() {
        return Err(PathError::Invalid(format!(
            "path has dimension {} and start {}, network has {} stations",
            path.dim(),
            q0.len(),
            net.k()
        )));
    }
    Ok(())
}

fn starts_at(path: &PiecewiseLinearPath, q0: &[f64]) -> bool {
    path.start().iter().zip(q0).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()))
}

fn piece_cost(
    net: &Network,
    p: &[f64],
    q: &[f64],
    dt: f64,
    gating: Option<(Gating, GatingMode)>,
) -> Result<ExtReal, PathError> {
    let y: Vec<f64> = p.iter().zip(q).map(|(a, b)| (b - a) / dt).collect();
    let mut problem = LocalRateProblem::new(net, segment_face(p, q), y);
    if let Some((g, mode)) = gating {
        problem = problem.delayed(g, mode);
    }
    match solve_lj(&problem) {
        Ok(s) => Ok(ExtReal::Finite(dt * s.value)),
        Err(LocalRateError::Infeasible { .. }) => Ok(ExtReal::Infinite),
        Err(e) => Err(e.into()),
    }
}

/// `I_{q0}` of the path over its time window; infinite unless it starts at
/// `q0`.
pub fn action(net: &Network, path: &PiecewiseLinearPath, q0: &[f64]) -> Result<ExtReal, PathError> {
    check_dims(net, path, q0)?;
    if !starts_at(path, q0) {
        return Ok(ExtReal::Infinite);
    }
    let mut total = ExtReal::ZERO;
    for i in 0..path.num_segments() {
        let dt = path.times[i + 1] - path.times[i];
        total += piece_cost(net, &path.positions[i], &path.positions[i + 1], dt, None)?;
    }
    Ok(total)
}

/// Delayed action with initial delays `(u, v)`. Segments are cut at every
/// `u_k` and `v_k` so the gating is constant on each piece.
pub fn action_delayed(
    net: &Network,
    path: &PiecewiseLinearPath,
    q0: &[f64],
    u: &[f64],
    v: &[f64],
    mode: GatingMode,
) -> Result<ExtReal, PathError> {
    check_dims(net, path, q0)?;
    if u.len() != net.k() || v.len() != net.k() {
        return Err(PathError::Invalid("delay vectors have the wrong length".into()));
    }
    if !starts_at(path, q0) {
        return Ok(ExtReal::Infinite);
    }
    let mut cuts: Vec<f64> = path.times.clone();
    cuts.extend(u.iter().chain(v).copied().filter(|&t| t > 0.0 && t < path.duration()));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = ExtReal::ZERO;
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let mid = 0.5 * (t0 + t1);
        let gating = Gating::new(u.to_vec(), v.to_vec(), mid);
        let (p, q) = (path.at(t0), path.at(t1));
        total += piece_cost(net, &p, &q, t1 - t0, Some((gating, mode)))?;
    }
    Ok(total)
}
