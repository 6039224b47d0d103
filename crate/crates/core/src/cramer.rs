//! Log-moment generating functions and the convex cost functions built
//! from them.
//!
//! For a renewal process with generic inter-event time `X`, running the
//! process at rate `a` costs
//!
//! ```text
//! ψ(a) = sup_{ϑ < β} (ϑ − a · ln E exp(ϑX))
//! ```
//!
//! per unit time. Routing choices cost the relative-entropy-like
//! `ψ^R(r) = Σ_l p_l π(r_l / p_l)` (exit slot included) with
//! `π(u) = u ln u − u + 1`, `π(0) = 1`.
//!
//! The local-rate solver works with the convex conjugate of `ψ`, the
//! scaled cumulant generating function of the counting process
//! `κ(θ) = −Λ⁻¹(−θ)` (see [`counting_cgf`]). For the exponential and gamma
//! families both `ψ` and `κ` have closed forms; the hyper-exponential family
//! goes through one-dimensional root finding.

use serde::Serialize;
use thiserror::Error;

use crate::extended::ExtReal;
use crate::model::{DistributionFamily, Network, StationSet};

#[derive(Debug, Error, PartialEq)]
pub enum CramerError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// `ln E exp(θX)`, `+∞` on and beyond the abscissa of convergence.
pub fn log_mgf(dist: &DistributionFamily, theta: f64) -> ExtReal {
    match LogMgf::at(dist, theta) {
        Some(l) => ExtReal::Finite(l.value),
        None => ExtReal::Infinite,
    }
}

/// Value and first two derivatives of the log-MGF at a point of its domain.
#[derive(Clone, Copy, Debug)]
pub struct LogMgf {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl LogMgf {
    pub fn at(dist: &DistributionFamily, theta: f64) -> Option<LogMgf> {
        if theta >= dist.domain_sup() {
            return None;
        }
        Some(match dist {
            DistributionFamily::Exponential { rate } => {
                let gap = rate - theta;
                LogMgf { value: (rate / gap).ln(), d1: 1.0 / gap, d2: 1.0 / (gap * gap) }
            }
            DistributionFamily::Gamma { shape, rate } => {
                let gap = rate - theta;
                LogMgf {
                    value: -shape * (-theta / rate).ln_1p(),
                    d1: shape / gap,
                    d2: shape / (gap * gap),
                }
            }
            DistributionFamily::HyperExponential { weights, rates } => {
                let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
                for (&w, &r) in weights.iter().zip(rates) {
                    if w == 0.0 {
                        continue;
                    }
                    let inv = 1.0 / (r - theta);
                    let term = w * r * inv;
                    m0 += term;
                    m1 += term * inv;
                    m2 += 2.0 * term * inv * inv;
                }
                let d1 = m1 / m0;
                LogMgf { value: m0.ln(), d1, d2: m2 / m0 - d1 * d1 }
            }
        })
    }
}

/// `π(u) = u ln u − u + 1`, with `π(0) = 1` and `π(∞) = ∞`.
pub fn pi_fn(u: f64) -> Result<ExtReal, CramerError> {
    if u.is_nan() || u < 0.0 {
        return Err(CramerError::InvalidInput(format!("π needs u >= 0, got {u}")));
    }
    Ok(if u == f64::INFINITY { ExtReal::Infinite } else { ExtReal::Finite(pi(u)) })
}

pub(crate) fn pi(u: f64) -> f64 {
    if u == 0.0 {
        1.0
    } else {
        u * u.ln() - u + 1.0
    }
}

/// Result of a Cramér transform evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CramerValue {
    pub value: ExtReal,
    /// Maximizing tilt `ϑ*`; equals the domain supremum when `at_boundary`.
    pub theta: f64,
    /// The supremum is only approached as `ϑ ↑ β`.
    pub at_boundary: bool,
}

/// `ψ^A_k(a)` for interarrival law `dist`.
pub fn psi_arrival(dist: &DistributionFamily, a: f64) -> CramerValue {
    cramer_transform(dist, a)
}

/// `ψ^S_k(d)` for service law `dist`.
pub fn psi_service(dist: &DistributionFamily, d: f64) -> CramerValue {
    cramer_transform(dist, d)
}

/// `sup_{ϑ<β} (ϑ − rate · Λ(ϑ))`, closed form where the family allows it.
pub fn cramer_transform(dist: &DistributionFamily, rate: f64) -> CramerValue {
    assert!(rate >= 0.0 && !rate.is_nan(), "rate must be nonnegative, got {rate}");
    if rate == 0.0 {
        return boundary_value(dist);
    }
    match *dist {
        DistributionFamily::Exponential { rate: lam } => {
            // ϑ* = λ − a, value λ π(a/λ)
            CramerValue { value: ExtReal::Finite(lam * pi(rate / lam)), theta: lam - rate, at_boundary: false }
        }
        DistributionFamily::Gamma { shape, rate: beta } => {
            // ϑ* = β − k a, value β − k a + k a ln(k a / β)
            let ka = shape * rate;
            CramerValue {
                value: ExtReal::Finite(beta - ka + ka * (ka / beta).ln()),
                theta: beta - ka,
                at_boundary: false,
            }
        }
        DistributionFamily::HyperExponential { .. } => legendre_transform(dist, rate),
    }
}

fn boundary_value(dist: &DistributionFamily) -> CramerValue {
    let beta = dist.domain_sup();
    CramerValue { value: ExtReal::from(beta), theta: beta, at_boundary: true }
}

/// Numerical Legendre transform by a root search on the derivative
/// `1 − rate · Λ'(ϑ)`, which decreases from 1 to `−∞` on `(−∞, β)`.
///
/// Works for every family; [`cramer_transform`] only uses it where no
/// closed form exists.
pub fn legendre_transform(dist: &DistributionFamily, rate: f64) -> CramerValue {
    assert!(rate >= 0.0 && !rate.is_nan());
    if rate == 0.0 {
        return boundary_value(dist);
    }
    let beta = dist.domain_sup();
    let target = 1.0 / rate;
    let slope = |theta: f64| LogMgf::at(dist, theta).map_or(f64::INFINITY, |l| l.d1);

    // upper end: Λ' exceeds 1/rate close enough to β
    let mut gap = beta.max(1.0);
    let mut hi = beta - gap;
    while slope(hi) <= target {
        gap *= 0.5;
        hi = beta - gap;
        if gap < 1e-300 {
            break;
        }
    }
    let mut lo = hi.min(0.0) - 1.0;
    let mut width = 1.0;
    while slope(lo) >= target {
        width *= 2.0;
        lo = hi.min(0.0) - width;
    }
    // Newton on Λ'(ϑ) = 1/rate, falling back to bisection outside the bracket.
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..200 {
        let l = LogMgf::at(dist, theta).expect("bracket inside domain");
        let f = l.d1 - target;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let newton = theta - f / l.d2;
        let next = if newton >= lo && newton <= hi { newton } else { 0.5 * (lo + hi) };
        let done = (next - theta).abs() <= 1e-15 * (1.0 + theta.abs());
        theta = next;
        if done {
            break;
        }
    }
    let value = theta - rate * LogMgf::at(dist, theta).expect("inside domain").value;
    CramerValue { value: ExtReal::Finite(value.max(0.0)), theta, at_boundary: false }
}

/// Scaled cumulant generating function of the counting process and its
/// first two derivatives: `κ(θ) = −s` where `Λ(s) = −θ`.
///
/// `κ` is the convex conjugate of the Cramér transform:
/// `ψ(a) = sup_θ (θ a − κ(θ))`, maximized at `a = κ'(θ)`.
#[derive(Clone, Copy, Debug)]
pub struct CountingCgf {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn counting_cgf(dist: &DistributionFamily, theta: f64) -> CountingCgf {
    match *dist {
        DistributionFamily::Exponential { rate } => {
            let e = theta.exp();
            CountingCgf { value: rate * theta.exp_m1(), d1: rate * e, d2: rate * e }
        }
        DistributionFamily::Gamma { shape, rate } => {
            let x = theta / shape;
            let e = x.exp();
            CountingCgf { value: rate * x.exp_m1(), d1: rate * e / shape, d2: rate * e / (shape * shape) }
        }
        DistributionFamily::HyperExponential { .. } => {
            let s = invert_log_mgf(dist, -theta);
            let l = LogMgf::at(dist, s).expect("root lies in the domain");
            let d1 = 1.0 / l.d1;
            CountingCgf { value: -s, d1, d2: l.d2 * d1 * d1 * d1 }
        }
    }
}

/// Solves `Λ(s) = level` for `s < β` with safeguarded Newton steps.
fn invert_log_mgf(dist: &DistributionFamily, level: f64) -> f64 {
    if level == 0.0 {
        return 0.0;
    }
    let beta = dist.domain_sup();
    let eval = |s: f64| LogMgf::at(dist, s).map(|l| (l.value - level, l.d1));
    let (mut lo, mut hi);
    if level < 0.0 {
        hi = 0.0;
        let mut step = 1.0;
        lo = -step;
        while eval(lo).expect("negative tilts are in the domain").0 > 0.0 {
            step *= 2.0;
            lo = -step;
        }
    } else {
        lo = 0.0;
        let mut gap = 0.5 * beta;
        hi = beta - gap;
        while eval(hi).expect("inside domain").0 < 0.0 {
            lo = hi;
            gap *= 0.5;
            hi = beta - gap;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, df) = eval(s).expect("bracket inside domain");
        if f > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let newton = s - f / df;
        let next = if newton >= lo && newton <= hi { newton } else { 0.5 * (lo + hi) };
        if (next - s).abs() <= 1e-15 * (1.0 + s.abs()) {
            return next;
        }
        s = next;
    }
    s
}

/// `ψ^R_k(r_k)` for routing row `p_row` and candidate row `r_row`.
///
/// The exit slot carries `1 − Σ p` and `1 − Σ r`. A slot with `p = 0` and
/// `r > 0` makes the value infinite; `p = r = 0` contributes nothing.
pub fn psi_routing(p_row: &[f64], r_row: &[f64]) -> ExtReal {
    assert_eq!(p_row.len(), r_row.len(), "routing rows differ in length");
    debug_assert!(p_row.iter().all(|&p| p >= 0.0));
    if r_row.iter().any(|&r| r.is_nan() || r < 0.0) {
        return ExtReal::Infinite;
    }
    let p_exit = (1.0 - p_row.iter().sum::<f64>()).max(0.0);
    let r_exit = 1.0 - r_row.iter().sum::<f64>();
    if r_exit < -1e-12 {
        return ExtReal::Infinite;
    }
    let r_exit = r_exit.max(0.0);
    p_row
        .iter()
        .zip(r_row)
        .chain(std::iter::once((&p_exit, &r_exit)))
        .map(|(&p, &r)| routing_slot(p, r))
        .sum()
}

fn routing_slot(p: f64, r: f64) -> ExtReal {
    if p == 0.0 {
        if r == 0.0 {
            ExtReal::ZERO
        } else {
            ExtReal::Infinite
        }
    } else {
        ExtReal::Finite(p * pi(r / p))
    }
}

/// Which of the three primitive processes a cost term belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Arrival,
    Service,
    Routing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateTerm {
    pub kind: TermKind,
    pub station: usize,
    pub value: ExtReal,
}

/// Delay gating: the arrival terms of station `k` are active for `t > u_k`,
/// its service and routing terms for `t > v_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gating {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl Gating {
    pub fn new(u: Vec<f64>, v: Vec<f64>, t: f64) -> Self {
        assert_eq!(u.len(), v.len());
        Gating { u, v, t }
    }

    pub fn arrival_on(&self, k: usize) -> bool {
        self.t > self.u[k]
    }

    pub fn service_on(&self, k: usize) -> bool {
        self.t > self.v[k]
    }

    pub fn all_on(&self) -> bool {
        (0..self.u.len()).all(|k| self.arrival_on(k) && self.service_on(k))
    }

    /// Latest switch-on time `max_k max(u_k, v_k)`.
    pub fn horizon(&self) -> f64 {
        self.u.iter().chain(&self.v).cloned().fold(0.0, f64::max)
    }
}

/// Per-term breakdown of `Ψ^{(J)}_{(u,v),t}(a, d, r)`; with `gating = None`
/// every indicator is on and the terms are those of `ψ_J`.
pub fn psi_j_terms(
    net: &Network,
    face: StationSet,
    gating: Option<&Gating>,
    a: &[f64],
    d: &[f64],
    r: &[Vec<f64>],
) -> Vec<RateTerm> {
    let k = net.k();
    assert!(a.len() == k && d.len() == k && r.len() == k, "argument dimensions");
    let mut terms = Vec::with_capacity(3 * k);
    for st in 0..k {
        let arrival_on = gating.is_none_or(|g| g.arrival_on(st));
        let service_on = gating.is_none_or(|g| g.service_on(st));
        let arrival = if arrival_on { psi_arrival(net.arrival(st), a[st]).value } else { ExtReal::ZERO };
        let service = if !service_on || (face.contains(st) && d[st] <= net.mu()[st]) {
            ExtReal::ZERO
        } else {
            psi_service(net.service(st), d[st]).value
        };
        let routing = if service_on {
            psi_routing(&net.routing()[st], &r[st]).scale(d[st])
        } else {
            ExtReal::ZERO
        };
        terms.push(RateTerm { kind: TermKind::Arrival, station: st, value: arrival });
        terms.push(RateTerm { kind: TermKind::Service, station: st, value: service });
        terms.push(RateTerm { kind: TermKind::Routing, station: st, value: routing });
    }
    terms
}

/// `ψ_J(a, d, r)`.
pub fn psi_j(net: &Network, face: StationSet, a: &[f64], d: &[f64], r: &[Vec<f64>]) -> ExtReal {
    psi_j_terms(net, face, None, a, d, r).iter().map(|t| t.value).sum()
}

/// `Ψ^{(J)}_{(u,v),t}(a, d, r)`.
pub fn psi_j_delayed(
    net: &Network,
    face: StationSet,
    gating: &Gating,
    a: &[f64],
    d: &[f64],
    r: &[Vec<f64>],
) -> ExtReal {
    psi_j_terms(net, face, Some(gating), a, d, r).iter().map(|t| t.value).sum()
}
