//! Compare the quasipotential with Monte Carlo tail slopes.

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::emit::{g10, Table};
use crate::model::{validate, Network, NetworkSpec};
use crate::quasipotential::{solve_v, SearchOptions};
use crate::sim::{estimate_tail, TailEstimate, TailOptions};

#[derive(Debug, Error)]
pub enum VerifyError {
    /// The spec failed validation; nothing was computed.
    #[error("validate: {0}")]
    Invalid(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyConfig {
    pub targets: Vec<Vec<f64>>,
    pub n_grid: Vec<u32>,
    /// Stationary samples per `n`.
    pub reps: usize,
    /// Largest accepted `|slope − V| / V`.
    pub tolerance: f64,
    pub seed: u64,
    pub search: SearchOptions,
    #[serde(skip)]
    pub tail: TailOptions,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            targets: vec![],
            n_grid: vec![5, 10, 15, 20],
            reps: 100_000,
            tolerance: 0.15,
            seed: 0,
            search: SearchOptions::default(),
            tail: TailOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TargetResult {
    pub x: Vec<f64>,
    pub v: f64,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    /// `slope ± z·se` with the tail estimate's normal quantile.
    pub slope_ci: Option<(f64, f64)>,
    pub rel_error: Option<f64>,
    /// `None` for excluded targets.
    pub pass: Option<bool>,
    pub note: String,
    pub tail: Option<TailEstimate>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    /// SHA-256 of the spec's JSON.
    pub spec_digest: String,
    pub tolerance: f64,
    pub results: Vec<TargetResult>,
}

impl VerificationReport {
    /// Every checked target passed.
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.pass != Some(false))
    }

    /// One row per target.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["x", "v", "slope", "slope_se", "slope_ci_lo", "slope_ci_hi", "rel_error", "pass", "note"]);
        let opt = |v: Option<f64>| v.map(g10).unwrap_or_default();
        for r in &self.results {
            t.push(vec![
                r.x.iter().map(|v| g10(*v)).collect::<Vec<_>>().join(";"),
                g10(r.v),
                opt(r.slope),
                opt(r.slope_se),
                opt(r.slope_ci.map(|c| c.0)),
                opt(r.slope_ci.map(|c| c.1)),
                opt(r.rel_error),
                r.pass.map(|p| p.to_string()).unwrap_or_else(|| "excluded".into()),
                r.note.replace(',', ";"),
            ]);
        }
        t
    }
}

pub fn spec_digest(spec: &NetworkSpec) -> String {
    let text = serde_json::to_string(spec).expect("spec serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Validates the spec, then for every target solves for `V(x)`, estimates
/// the tail slope, and checks their relative difference.
pub fn run_verify(spec: &NetworkSpec, cfg: &VerifyConfig) -> Result<VerificationReport, VerifyError> {
    let report = validate(spec);
    if let Some(v) = report.violation {
        return Err(VerifyError::Invalid(v.to_string()));
    }
    let net = Network::new(spec.clone()).map_err(|e| VerifyError::Invalid(e.to_string()))?;
    let z = cfg.tail.z.unwrap_or(1.96);
    let mut results = Vec::new();
    for (i, x) in cfg.targets.iter().enumerate() {
        if x.len() != net.k() {
            return Err(VerifyError::Invalid(format!("target {} has {} entries, need {}", i + 1, x.len(), net.k())));
        }
        if x.iter().all(|v| *v == 0.0) {
            results.push(TargetResult {
                x: x.clone(),
                v: 0.0,
                slope: None,
                slope_se: None,
                slope_ci: None,
                rel_error: None,
                pass: None,
                note: "excluded: V(0) = 0 leaves no rate to verify".into(),
                tail: None,
            });
            continue;
        }
        let qp = solve_v(&net, x, &cfg.search)
            .map_err(|e| VerifyError::Stage { stage: "quasipotential", message: e.to_string() })?;
        let tail = estimate_tail(&net, x, &cfg.n_grid, cfg.reps, cfg.seed.wrapping_add(i as u64), &cfg.tail)
            .map_err(|e| VerifyError::Stage { stage: "tail", message: e.to_string() })?;
        let mut notes: Vec<String> = qp.warnings.clone();
        notes.extend(tail.warnings.iter().cloned());
        let rel_error = tail.slope.map(|s| (s - qp.value).abs() / qp.value);
        let pass = Some(rel_error.is_some_and(|e| e <= cfg.tolerance));
        results.push(TargetResult {
            x: x.clone(),
            v: qp.value,
            slope: tail.slope,
            slope_se: tail.slope_se,
            slope_ci: tail.slope.zip(tail.slope_se).map(|(s, se)| (s - z * se, s + z * se)),
            rel_error,
            pass,
            note: notes.join("; "),
            tail: Some(tail),
        });
    }
    Ok(VerificationReport { spec_digest: spec_digest(spec), tolerance: cfg.tolerance, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn supercritical_spec_stops_before_compute() {
        let cfg = VerifyConfig { targets: vec![vec![1.0]], ..VerifyConfig::default() };
        let err = run_verify(&NetworkSpec::mm1(2.0, 1.0), &cfg).unwrap_err();
        assert!(matches!(err, VerifyError::Invalid(_)), "{err}");
    }

    #[test]
    fn origin_is_excluded() {
        let cfg = VerifyConfig { targets: vec![vec![0.0]], ..VerifyConfig::default() };
        let report = run_verify(&NetworkSpec::mm1(1.0, 2.0), &cfg).unwrap();
        assert_eq!(report.results[0].pass, None);
        assert!(report.passed());
    }

    #[test]
    fn mm1_slope_matches_and_report_is_deterministic() {
        let cfg = VerifyConfig {
            targets: vec![vec![1.0]],
            n_grid: vec![3, 6, 9],
            reps: 20_000,
            search: SearchOptions { starts: 2, ..SearchOptions::default() },
            seed: 5,
            ..VerifyConfig::default()
        };
        let spec = NetworkSpec::mm1(1.0, 2.0);
        let a = run_verify(&spec, &cfg).unwrap();
        let b = run_verify(&spec, &cfg).unwrap();
        assert!(a.passed(), "{:?}", a.results[0]);
        assert_eq!(a.to_table().to_csv(&[]), b.to_table().to_csv(&[]));
        assert_eq!(a.spec_digest.len(), 64);
    }
}
