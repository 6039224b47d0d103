//! Network specifications and the structural assumptions they must satisfy.
//!
//! A [`NetworkSpec`] is the raw, deserialized model: one entry per station
//! with its interarrival and service laws, initial queue length and initial
//! delays, plus the routing matrix. [`Network`] is the validated form that
//! the solvers and the simulator consume; building one runs every check in
//! [`validate`] and caches the derived rates.
//!
//! The JSON schema is
//!
//! ```text
//! {
//!   "stations": [
//!     { "arrival": {"family": "exponential", "rate": 1.0},
//!       "service": {"family": "gamma", "shape": 2.0, "rate": 4.0},
//!       "q0": 0.0, "u": 0.0, "v": 0.0 }
//!   ],
//!   "routing": [[0.0]]
//! }
//! ```
//!
//! with families `exponential {rate}`, `gamma {shape >= 1, rate}` and
//! `hyper_exponential {weights, rates}`. `q0`, `u` and `v` default to zero.
//! Unknown fields are rejected.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ROW_SUM_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model invalid: {0}")]
    ModelInvalid(String),
    #[error("assumption violated: {0}")]
    Violation(Violation),
    #[error("cannot read spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse spec: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Interarrival or service time law.
///
/// Only absolutely continuous families with unbounded support and a finite
/// exponential moment near zero are offered, so the unbounded, spread-out
/// and Cramér conditions hold by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionFamily {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
}

impl DistributionFamily {
    pub fn exponential(rate: f64) -> Self {
        DistributionFamily::Exponential { rate }
    }

    pub fn gamma(shape: f64, rate: f64) -> Self {
        DistributionFamily::Gamma { shape, rate }
    }

    pub fn hyper_exponential(weights: Vec<f64>, rates: Vec<f64>) -> Self {
        DistributionFamily::HyperExponential { weights, rates }
    }

    /// Checks the parameter constraints of the family.
    pub fn check(&self) -> Result<(), String> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be finite and > 0, got {x}"))
            }
        };
        match self {
            DistributionFamily::Exponential { rate } => positive("rate", *rate),
            DistributionFamily::Gamma { shape, rate } => {
                positive("rate", *rate)?;
                if !(shape.is_finite() && *shape >= 1.0) {
                    return Err(format!("gamma shape must be >= 1, got {shape}"));
                }
                Ok(())
            }
            DistributionFamily::HyperExponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err("hyper-exponential needs matching, nonempty weights and rates".into());
                }
                for &r in rates {
                    positive("rate", r)?;
                }
                if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
                    return Err("hyper-exponential weights must be nonnegative".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(format!("hyper-exponential weights sum to {total}, not 1"));
                }
                Ok(())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DistributionFamily::Exponential { rate } => 1.0 / rate,
            DistributionFamily::Gamma { shape, rate } => shape / rate,
            DistributionFamily::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w / r).sum()
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            DistributionFamily::Exponential { rate } => 2.0 / (rate * rate),
            DistributionFamily::Gamma { shape, rate } => shape * (shape + 1.0) / (rate * rate),
            DistributionFamily::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| 2.0 * w / (r * r)).sum()
            }
        }
    }

    /// Long-run event rate `1 / E[X]`.
    pub fn rate(&self) -> f64 {
        1.0 / self.mean()
    }

    /// `sup {θ ≥ 0 : E exp(θX) < ∞}`; the MGF blows up at this point for
    /// every shipped family.
    pub fn domain_sup(&self) -> f64 {
        match self {
            DistributionFamily::Exponential { rate } => *rate,
            DistributionFamily::Gamma { rate, .. } => *rate,
            DistributionFamily::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .filter(|(w, _)| **w > 0.0)
                .map(|(_, r)| *r)
                .fold(f64::INFINITY, f64::min),
        }
    }
}

impl fmt::Display for DistributionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionFamily::Exponential { rate } => write!(f, "Exp(rate={rate})"),
            DistributionFamily::Gamma { shape, rate } => write!(f, "Gamma(shape={shape}, rate={rate})"),
            DistributionFamily::HyperExponential { weights, rates } => {
                write!(f, "HyperExp(weights={weights:?}, rates={rates:?})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub arrival: DistributionFamily,
    pub service: DistributionFamily,
    #[serde(default)]
    pub q0: f64,
    /// Initial excess time of the exogenous arrival process.
    #[serde(default)]
    pub u: f64,
    /// Initial residual service time; positive exactly when `q0 > 0`.
    #[serde(default)]
    pub v: f64,
}

impl StationSpec {
    pub fn new(arrival: DistributionFamily, service: DistributionFamily) -> Self {
        StationSpec { arrival, service, q0: 0.0, u: 0.0, v: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub stations: Vec<StationSpec>,
    /// Row-major routing probabilities `p[k][l]`.
    pub routing: Vec<Vec<f64>>,
}

impl NetworkSpec {
    pub fn new(stations: Vec<StationSpec>, routing: Vec<Vec<f64>>) -> Self {
        NetworkSpec { stations, routing }
    }

    /// Single-station queue with exponential interarrival and service times.
    pub fn mm1(lambda: f64, mu: f64) -> Self {
        NetworkSpec::new(
            vec![StationSpec::new(
                DistributionFamily::exponential(lambda),
                DistributionFamily::exponential(mu),
            )],
            vec![vec![0.0]],
        )
    }

    /// Jackson network with Poisson arrivals and exponential services.
    pub fn markovian(lambda: &[f64], mu: &[f64], routing: Vec<Vec<f64>>) -> Self {
        let stations = lambda
            .iter()
            .zip(mu)
            .map(|(&l, &m)| {
                StationSpec::new(DistributionFamily::exponential(l), DistributionFamily::exponential(m))
            })
            .collect();
        NetworkSpec::new(stations, routing)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn num_stations(&self) -> usize {
        self.stations.len()
    }
}

/// Station subset, used for faces of the orthant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StationSet(u64);

impl StationSet {
    pub const MAX_STATIONS: usize = 64;

    pub fn empty() -> Self {
        StationSet(0)
    }

    pub fn full(k: usize) -> Self {
        assert!(k <= Self::MAX_STATIONS);
        if k == 64 {
            StationSet(u64::MAX)
        } else {
            StationSet((1u64 << k) - 1)
        }
    }

    pub fn from_bits(bits: u64) -> Self {
        StationSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        indices.into_iter().fold(StationSet(0), |s, k| s.with(k))
    }

    pub fn with(self, k: usize) -> Self {
        StationSet(self.0 | (1 << k))
    }

    pub fn contains(self, k: usize) -> bool {
        self.0 >> k & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&k| self.contains(k))
    }

    /// Every subset of `{0, …, k-1}`.
    pub fn all_subsets(k: usize) -> impl Iterator<Item = StationSet> {
        assert!(k < 64);
        (0..(1u64 << k)).map(StationSet)
    }
}

impl fmt::Display for StationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.iter().map(|k| (k + 1).to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

/// Spectral radius of a nonnegative square matrix.
///
/// Power iteration runs on `P + I`, whose Perron root `ρ(P) + 1` strictly
/// dominates every other eigenvalue in modulus even when `P` is periodic.
/// Convergence is declared from the Collatz–Wielandt bracket
/// `min_i (Ax)_i/x_i ≤ ρ(A) ≤ max_i (Ax)_i/x_i`. Defective cases (nilpotent
/// blocks) converge too slowly for the bracket and fall back to Gelfand's
/// formula `ρ = lim ‖P^n‖^{1/n}` by repeated squaring.
pub fn spectral_radius(p: &[Vec<f64>]) -> Result<f64, ModelError> {
    let k = p.len();
    if p.iter().any(|row| row.len() != k) {
        return Err(ModelError::InvalidInput("matrix is not square".into()));
    }
    if p.iter().flatten().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(ModelError::InvalidInput("matrix has negative or non-finite entries".into()));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let apply = |x: &[f64]| -> Vec<f64> {
        (0..k).map(|i| x[i] + (0..k).map(|j| p[i][j] * x[j]).sum::<f64>()).collect()
    };

    for restart in 0..3 {
        let mut x: Vec<f64> = if restart == 0 {
            vec![1.0; k]
        } else {
            (0..k).map(|i| 1.0 + 0.37 * ((i * 7 + restart * 3) % 11) as f64).collect()
        };
        for _ in 0..20_000 {
            let ax = apply(&x);
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..k {
                let ratio = ax[i] / x[i];
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            if hi - lo <= 1e-12 {
                return Ok((0.5 * (lo + hi) - 1.0).max(0.0));
            }
            let norm = ax.iter().cloned().fold(0.0, f64::max);
            x = ax.iter().map(|v| v / norm).collect();
            if x.iter().any(|&v| v < 1e-280) {
                break;
            }
        }
    }
    Ok(gelfand_radius(p))
}

fn gelfand_radius(p: &[Vec<f64>]) -> f64 {
    let k = p.len();
    let norm = |m: &[Vec<f64>]| m.iter().map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max);
    let mut m: Vec<Vec<f64>> = p.to_vec();
    // ‖P^(2^j)‖ = exp(log_norm), tracked in log space
    let mut log_norm = 0.0;
    let mut power = 1.0f64;
    for _ in 0..60 {
        let n = norm(&m);
        if n == 0.0 {
            return 0.0;
        }
        log_norm += n.ln();
        for row in m.iter_mut() {
            row.iter_mut().for_each(|x| *x /= n);
        }
        let squared: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| (0..k).map(|l| m[i][l] * m[l][j]).sum()).collect())
            .collect();
        m = squared;
        log_norm *= 2.0;
        power *= 2.0;
    }
    let n = norm(&m);
    if n == 0.0 {
        0.0
    } else {
        ((log_norm + n.ln()) / power).exp()
    }
}

/// Effective arrival rates `(I − Pᵀ)⁻¹ λ`.
pub fn effective_rates(lambda: &[f64], p: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
    let k = lambda.len();
    if p.len() != k || p.iter().any(|row| row.len() != k) {
        return Err(ModelError::InvalidInput("routing matrix does not match the rate vector".into()));
    }
    let rho = spectral_radius(p)?;
    if rho >= 1.0 {
        return Err(ModelError::ModelInvalid(format!("spectral radius {rho} is not below 1")));
    }
    let system = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 } - p[j][i]);
    let rhs = DVector::from_column_slice(lambda);
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ModelError::ModelInvalid("I - P^T is singular".into()))?;
    Ok(solution.iter().cloned().collect())
}

/// One named assumption from the model description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    Dimensions,
    ArrivalLaw,
    ServiceLaw,
    RoutingNonnegative,
    Substochastic,
    SpectralRadius,
    InitialState,
    DelayConvention,
    Subcriticality,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Assumption::Dimensions => "dimensions",
            Assumption::ArrivalLaw => "arrival law",
            Assumption::ServiceLaw => "service law",
            Assumption::RoutingNonnegative => "routing nonnegativity",
            Assumption::Substochastic => "substochasticity",
            Assumption::SpectralRadius => "spectral radius",
            Assumption::InitialState => "initial state",
            Assumption::DelayConvention => "delay convention",
            Assumption::Subcriticality => "subcriticality",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub assumption: Assumption,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.assumption, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    /// First violated assumption, in the order the checks run.
    pub violation: Option<Violation>,
    pub spectral_radius: Option<f64>,
    pub effective_rates: Option<Vec<f64>>,
    pub service_rates: Option<Vec<f64>>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Runs every structural check on a spec and names the first failure.
pub fn validate(spec: &NetworkSpec) -> ValidationReport {
    let mut report = ValidationReport {
        violation: None,
        spectral_radius: None,
        effective_rates: None,
        service_rates: None,
    };
    if let Err(v) = run_checks(spec, &mut report) {
        report.violation = Some(v);
    }
    report
}

fn run_checks(spec: &NetworkSpec, report: &mut ValidationReport) -> Result<(), Violation> {
    let fail = |assumption, detail: String| Violation { assumption, detail };
    let k = spec.stations.len();
    if k == 0 || k > 16 {
        return Err(fail(Assumption::Dimensions, format!("need 1..=16 stations, got {k}")));
    }
    if spec.routing.len() != k || spec.routing.iter().any(|row| row.len() != k) {
        return Err(fail(Assumption::Dimensions, format!("routing must be {k}x{k}")));
    }
    for (i, st) in spec.stations.iter().enumerate() {
        st.arrival
            .check()
            .map_err(|e| fail(Assumption::ArrivalLaw, format!("station {}: {e}", i + 1)))?;
        st.service
            .check()
            .map_err(|e| fail(Assumption::ServiceLaw, format!("station {}: {e}", i + 1)))?;
    }
    for (i, row) in spec.routing.iter().enumerate() {
        if row.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(fail(Assumption::RoutingNonnegative, format!("row {} has a negative entry", i + 1)));
        }
        let total: f64 = row.iter().sum();
        if total > 1.0 + ROW_SUM_SLACK {
            return Err(fail(Assumption::Substochastic, format!("row {} sums to {total}", i + 1)));
        }
    }
    let rho = spectral_radius(&spec.routing).expect("checked square and nonnegative");
    report.spectral_radius = Some(rho);
    if rho >= 1.0 {
        return Err(fail(Assumption::SpectralRadius, format!("spectral radius {rho} is not below 1")));
    }
    for (i, st) in spec.stations.iter().enumerate() {
        for (name, x) in [("q0", st.q0), ("u", st.u), ("v", st.v)] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(fail(Assumption::InitialState, format!("station {}: {name} = {x}", i + 1)));
            }
        }
        if (st.v > 0.0) != (st.q0 > 0.0) {
            return Err(fail(
                Assumption::DelayConvention,
                format!("station {}: v > 0 must hold exactly when q0 > 0 (q0 = {}, v = {})", i + 1, st.q0, st.v),
            ));
        }
    }
    let lambda: Vec<f64> = spec.stations.iter().map(|s| s.arrival.rate()).collect();
    let mu: Vec<f64> = spec.stations.iter().map(|s| s.service.rate()).collect();
    let eff = effective_rates(&lambda, &spec.routing)
        .map_err(|e| fail(Assumption::SpectralRadius, e.to_string()))?;
    report.effective_rates = Some(eff.clone());
    report.service_rates = Some(mu.clone());
    for i in 0..k {
        if !(mu[i] > eff[i]) {
            return Err(fail(
                Assumption::Subcriticality,
                format!("station {}: service rate {} does not exceed effective arrival rate {}", i + 1, mu[i], eff[i]),
            ));
        }
    }
    Ok(())
}

/// A spec that passed [`validate`], with derived quantities cached.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    effective: Vec<f64>,
    exit: Vec<f64>,
    spectral_radius: f64,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, ModelError> {
        let report = validate(&spec);
        if let Some(v) = report.violation {
            return Err(ModelError::Violation(v));
        }
        let lambda = spec.stations.iter().map(|s| s.arrival.rate()).collect();
        let mu = spec.stations.iter().map(|s| s.service.rate()).collect();
        let exit = spec
            .routing
            .iter()
            .map(|row| (1.0 - row.iter().sum::<f64>()).max(0.0))
            .collect();
        Ok(Network {
            lambda,
            mu,
            effective: report.effective_rates.expect("set on success"),
            exit,
            spectral_radius: report.spectral_radius.expect("set on success"),
            spec,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn k(&self) -> usize {
        self.spec.stations.len()
    }

    pub fn arrival(&self, k: usize) -> &DistributionFamily {
        &self.spec.stations[k].arrival
    }

    pub fn service(&self, k: usize) -> &DistributionFamily {
        &self.spec.stations[k].service
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// `(I − Pᵀ)⁻¹ λ`.
    pub fn effective_rates(&self) -> &[f64] {
        &self.effective
    }

    pub fn routing(&self) -> &[Vec<f64>] {
        &self.spec.routing
    }

    pub fn p(&self, k: usize, l: usize) -> f64 {
        self.spec.routing[k][l]
    }

    /// Probability of leaving the network after service at `k`.
    pub fn exit_prob(&self, k: usize) -> f64 {
        self.exit[k]
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn q0(&self) -> Vec<f64> {
        self.spec.stations.iter().map(|s| s.q0).collect()
    }

    pub fn delays(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.spec.stations.iter().map(|s| s.u).collect(),
            self.spec.stations.iter().map(|s| s.v).collect(),
        )
    }

    /// Smallest spare capacity `min_k (μ_k − λ̄_k)`.
    pub fn min_slack(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.effective)
            .map(|(m, e)| m - e)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest exogenous or service rate, used to scale solver tolerances.
    pub fn rate_scale(&self) -> f64 {
        self.lambda.iter().chain(&self.mu).cloned().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spectral_radius_examples() {
        assert_abs_diff_eq!(spectral_radius(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap(), 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(spectral_radius(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(), 0.0, epsilon = 1e-10);
        // 2x2 closed form: (tr + sqrt(tr^2 - 4 det)) / 2
        let (tr, det) = (0.4f64, 0.3 * 0.1 - 0.4 * 0.2);
        let exact = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        assert_abs_diff_eq!(spectral_radius(&[vec![0.3, 0.4], vec![0.2, 0.1]]).unwrap(), exact, epsilon = 1e-10);
    }

    #[test]
    fn spectral_radius_rejects_bad_input() {
        assert!(matches!(spectral_radius(&[vec![0.0, 1.0]]), Err(ModelError::InvalidInput(_))));
        assert!(matches!(spectral_radius(&[vec![-0.1]]), Err(ModelError::InvalidInput(_))));
    }

    #[test]
    fn spectral_radius_of_reducible_and_nilpotent() {
        let nilpotent = [vec![0.0, 0.9, 0.0], vec![0.0, 0.0, 0.9], vec![0.0, 0.0, 0.0]];
        assert_abs_diff_eq!(spectral_radius(&nilpotent).unwrap(), 0.0, epsilon = 1e-10);
        let blocks = [vec![0.3, 0.0], vec![0.5, 0.6]];
        assert_abs_diff_eq!(spectral_radius(&blocks).unwrap(), 0.6, epsilon = 1e-10);
    }

    #[test]
    fn effective_rate_examples() {
        let r = effective_rates(&[1.0, 0.0], &[vec![0.0, 0.5], vec![0.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r[1], 0.5, epsilon = 1e-14);
        let r = effective_rates(&[0.3, 0.7], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(r, vec![0.3, 0.7]);
        let r = effective_rates(&[1.0, 1.0], &[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        assert_abs_diff_eq!(r[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 2.0, epsilon = 1e-12);
        assert!(matches!(
            effective_rates(&[1.0], &[vec![1.0]]),
            Err(ModelError::ModelInvalid(_))
        ));
    }

    #[test]
    fn validate_examples() {
        assert!(validate(&NetworkSpec::mm1(1.0, 2.0)).passed());

        let report = validate(&NetworkSpec::mm1(2.0, 1.0));
        assert_eq!(report.violation.unwrap().assumption, Assumption::Subcriticality);

        let spec = NetworkSpec::markovian(&[1.0, 1.0], &[5.0, 5.0], vec![vec![0.6, 0.5], vec![0.0, 0.0]]);
        assert_eq!(validate(&spec).violation.unwrap().assumption, Assumption::Substochastic);
    }

    #[test]
    fn validate_delay_convention() {
        let mut spec = NetworkSpec::mm1(1.0, 2.0);
        spec.stations[0].q0 = 1.0;
        assert_eq!(validate(&spec).violation.unwrap().assumption, Assumption::DelayConvention);
        spec.stations[0].v = 0.5;
        assert!(validate(&spec).passed());
    }

    #[test]
    fn validate_rejects_bad_laws() {
        let mut spec = NetworkSpec::mm1(1.0, 2.0);
        spec.stations[0].service = DistributionFamily::gamma(0.5, 1.0);
        assert_eq!(validate(&spec).violation.unwrap().assumption, Assumption::ServiceLaw);
        spec.stations[0].service = DistributionFamily::hyper_exponential(vec![0.5, 0.4], vec![1.0, 2.0]);
        assert_eq!(validate(&spec).violation.unwrap().assumption, Assumption::ServiceLaw);
    }

    #[test]
    fn json_schema_round_trip_and_strictness() {
        let text = r#"{
            "stations": [
                {"arrival": {"family": "exponential", "rate": 1.0},
                 "service": {"family": "gamma", "shape": 2.0, "rate": 4.0}},
                {"arrival": {"family": "hyper_exponential", "weights": [0.5, 0.5], "rates": [1.0, 3.0]},
                 "service": {"family": "exponential", "rate": 5.0}, "q0": 2.0, "v": 0.1}
            ],
            "routing": [[0.0, 0.5], [0.2, 0.0]]
        }"#;
        let spec = NetworkSpec::from_json_str(text).unwrap();
        assert_eq!(spec.stations[1].q0, 2.0);
        assert_eq!(NetworkSpec::from_json_str(&spec.to_json_string()).unwrap(), spec);

        let unknown = text.replace("\"q0\": 2.0", "\"q0\": 2.0, \"priority\": 1");
        assert!(NetworkSpec::from_json_str(&unknown).is_err());
        let unknown_param = text.replace("\"rate\": 5.0", "\"rate\": 5.0, \"scale\": 1.0");
        assert!(NetworkSpec::from_json_str(&unknown_param).is_err());
    }

    #[test]
    fn station_sets() {
        let s = StationSet::from_indices([0, 2]);
        assert!(s.contains(0) && !s.contains(1) && s.contains(2));
        assert_eq!(s.len(), 2);
        assert_eq!(s.to_string(), "{1,3}");
        assert_eq!(StationSet::all_subsets(3).count(), 8);
        assert_eq!(StationSet::full(3).len(), 3);
    }
}
