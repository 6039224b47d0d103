//! Local rate functions.
//!
//! `L_J(y)` is the least cost `ψ_J(a, d, r)` of running the primitive
//! processes so that the queue-length velocity is `y = a + (rᵀ − I) d`.
//! [`solve_lj`] works with flows `f_kl = r_kl d_k`, in which the program is
//! jointly convex, and solves its Lagrange dual; see [`dual`] for the
//! method. [`brute_force_lj`] is an independent primal search used as a
//! test oracle for one and two stations.
//!
//! The delayed variant gates each station's arrival term on `t > u_k` and its
//! service and routing terms on `t > v_k`. [`GatingMode::Literal`] keeps the
//! gated-off variables free at zero cost; [`GatingMode::Strict`] pins them
//! to zero instead.

mod brute;
mod dual;

use serde::Serialize;
use thiserror::Error;

use crate::cramer::Gating;
use crate::model::{Network, StationSet};

pub use brute::brute_force_lj;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalRateError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// No `(a, d, r)` produces the velocity. The certificate `z` is a dual
    /// ray: `z·y > 0` while every admissible velocity has `z·y' ≤ 0`.
    #[error("velocity is not attainable (dual ray {certificate:?})")]
    Infeasible { certificate: Vec<f64> },
    #[error("solver did not converge: duality gap {gap:e}, balance residual {kkt_residual:e}")]
    NonConvergence { gap: f64, kkt_residual: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// How gated-off terms of the delayed objective are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    /// Gated-off terms cost nothing and their variables stay free.
    #[default]
    Literal,
    /// Gated-off arrival rates and departure rates are forced to zero.
    Strict,
}

#[derive(Clone, Debug)]
pub struct LocalRateProblem<'a> {
    pub net: &'a Network,
    pub face: StationSet,
    pub y: Vec<f64>,
    pub gating: Option<Gating>,
    pub mode: GatingMode,
}

impl<'a> LocalRateProblem<'a> {
    pub fn new(net: &'a Network, face: StationSet, y: Vec<f64>) -> Self {
        LocalRateProblem { net, face, y, gating: None, mode: GatingMode::Literal }
    }

    pub fn delayed(mut self, gating: Gating, mode: GatingMode) -> Self {
        self.gating = Some(gating);
        self.mode = mode;
        self
    }

    fn check(&self) -> Result<(), LocalRateError> {
        let k = self.net.k();
        if self.y.len() != k {
            return Err(LocalRateError::InvalidInput(format!(
                "velocity has {} entries, network has {k} stations",
                self.y.len()
            )));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(LocalRateError::InvalidInput("velocity must be finite".into()));
        }
        if self.face.bits() >> k != 0 {
            return Err(LocalRateError::InvalidInput(format!("face {} names a missing station", self.face)));
        }
        if let Some(g) = &self.gating {
            if g.u.len() != k || g.v.len() != k {
                return Err(LocalRateError::InvalidInput("delay vectors have the wrong length".into()));
            }
            if !(g.t >= 0.0) {
                return Err(LocalRateError::InvalidInput(format!("time must be >= 0, got {}", g.t)));
            }
        }
        Ok(())
    }

    pub(crate) fn arrival_on(&self, k: usize) -> bool {
        self.gating.as_ref().is_none_or(|g| g.arrival_on(k))
    }

    pub(crate) fn service_on(&self, k: usize) -> bool {
        self.gating.as_ref().is_none_or(|g| g.service_on(k))
    }
}

/// Minimizer of a local rate program.
#[derive(Clone, Debug, Serialize)]
pub struct LocalRateSolution {
    /// Optimal cost in nats per unit time.
    pub value: f64,
    pub a: Vec<f64>,
    pub d: Vec<f64>,
    /// `flows[k][l] = r_kl d_k`.
    pub flows: Vec<Vec<f64>>,
    /// Largest violation of the balance equations.
    pub kkt_residual: f64,
    /// Primal value minus the dual bound.
    pub duality_gap: f64,
    /// Dual multipliers of the balance equations.
    pub theta: Vec<f64>,
}

impl LocalRateSolution {
    /// Routing rows `r_k = f_k / d_k`; rows with `d_k = 0` are zero.
    pub fn routing(&self) -> Vec<Vec<f64>> {
        self.flows
            .iter()
            .zip(&self.d)
            .map(|(row, &d)| row.iter().map(|f| if d > 0.0 { f / d } else { 0.0 }).collect())
            .collect()
    }

    /// `max_k |y_k − a_k − Σ_l f_lk + d_k|`.
    pub fn balance_residual(&self, y: &[f64]) -> f64 {
        balance_residual(y, &self.a, &self.d, &self.flows)
    }
}

pub(crate) fn balance_residual(y: &[f64], a: &[f64], d: &[f64], flows: &[Vec<f64>]) -> f64 {
    (0..y.len())
        .map(|k| {
            let inflow: f64 = flows.iter().map(|row| row[k]).sum();
            (y[k] - a[k] - inflow + d[k]).abs()
        })
        .fold(0.0, f64::max)
}

/// Solves the local rate program.
pub fn solve_lj(problem: &LocalRateProblem) -> Result<LocalRateSolution, LocalRateError> {
    problem.check()?;
    dual::solve(problem)
}

/// Stations at zero: the face `J` with `x ∈ F_J`.
pub fn face_of(x: &[f64]) -> StationSet {
    StationSet::from_indices(x.iter().enumerate().filter(|(_, &v)| v <= 0.0).map(|(k, _)| k))
}

fn check_position(net: &Network, x: &[f64]) -> Result<(), LocalRateError> {
    if x.len() != net.k() {
        return Err(LocalRateError::InvalidInput(format!(
            "position has {} entries, network has {} stations",
            x.len(),
            net.k()
        )));
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(LocalRateError::InvalidInput("position must be finite and nonnegative".into()));
    }
    Ok(())
}

/// `L(x, y) = L_J(y)` for the face `J` containing `x`.
pub fn eval_l(net: &Network, x: &[f64], y: &[f64]) -> Result<f64, LocalRateError> {
    check_position(net, x)?;
    solve_lj(&LocalRateProblem::new(net, face_of(x), y.to_vec())).map(|s| s.value)
}

/// `L_{(u,v),t}(x, y)`.
pub fn eval_l_delayed(
    net: &Network,
    x: &[f64],
    y: &[f64],
    gating: &Gating,
    mode: GatingMode,
) -> Result<f64, LocalRateError> {
    check_position(net, x)?;
    let problem = LocalRateProblem::new(net, face_of(x), y.to_vec()).delayed(gating.clone(), mode);
    solve_lj(&problem).map(|s| s.value)
}
