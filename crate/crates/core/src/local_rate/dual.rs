//! Dual Newton solver for the local rate program.
//!
//! With a multiplier `θ_k` on each balance equation the dual function is
//!
//! ```text
//! g(θ) = θ·y − Σ_k κ^A_k(θ_k) − Σ_{k∉J} κ^S_k(c_k) − Σ_{k∈J} max(κ^S_k(c_k), 0),
//! c_k(θ) = ln(Σ_l p_kl e^{θ_l} + p_k0) − θ_k,
//! ```
//!
//! where `κ` is the scaled CGF of the counting process, the convex conjugate
//! of the Cramér transform. `g` is smooth and strictly concave apart from the
//! kinks at `κ^S_k = 0` on the face, and its gradient is the balance
//! residual at the primal point `a = κ^A'(θ)`, `d = κ^S'(c)`,
//! `r_kl ∝ p_kl e^{θ_l}`.
//!
//! Each kink `−max(κ, 0) = max_{s ≥ max(κ,0)} (−s)` is smoothed by a log
//! barrier of weight `τ`, and `τ` is driven to zero by continuation. Gated-off
//! terms in literal mode turn into the linear constraints `θ_k ≤ 0` (free
//! arrivals) and `θ_k ≥ max(0, max_l θ_l)` (free departures), handled by the
//! same barrier after the free-departure stations are merged into one
//! variable.

use crate::cramer::{counting_cgf, cramer_transform, CountingCgf};

use super::{balance_residual, GatingMode, LocalRateError, LocalRateProblem, LocalRateSolution};

const MAX_NEWTON: usize = 200;
const THETA_LIMIT: f64 = 200.0;
const TAU_START: f64 = 0.1;
const TAU_END: f64 = 1e-10;

/// Where station `k`'s multiplier comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Var(usize),
    Zero,
}

#[derive(Clone, Copy, Debug)]
enum Constraint {
    /// `θ_l ≤ 0`; multiplier is the free arrival rate at `l`.
    Arrival(usize),
    /// `θ_l ≤ m`; multiplier is the free flow from the pool into `l`.
    PoolFlow(usize),
    /// `m ≥ 0`; multiplier is the free exit flow of the pool.
    PoolExit,
}

struct Dual<'a> {
    problem: &'a LocalRateProblem<'a>,
    k: usize,
    arrival_term: Vec<bool>,
    service_term: Vec<bool>,
    kink: Vec<bool>,
    slots: Vec<Slot>,
    n: usize,
    pool: Vec<usize>,
    pool_var: Option<usize>,
    anchor: Option<usize>,
    constraints: Vec<Constraint>,
}

/// Dual value with derivatives in `θ`-space.
struct ThetaEval {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

/// Tilted primal quantities at a dual point.
struct Tilt {
    a: Vec<f64>,
    /// `κ^S'(c_s)`, the departure rate before kink weighting.
    rate: Vec<f64>,
    rows: Vec<Vec<f64>>,
    c: Vec<f64>,
    kappa: Vec<f64>,
    log_z: Vec<f64>,
    arrival_cost: f64,
}

struct Primal {
    a: Vec<f64>,
    d: Vec<f64>,
    flows: Vec<Vec<f64>>,
    cost: f64,
}

/// Barrier smoothing of `−max(κ, 0)`: returns `h`, `w = −h'` and `w'`.
fn smooth_kink(kappa: f64, tau: f64) -> (f64, f64, f64) {
    let s = kappa.hypot(2.0 * tau);
    let q = if kappa <= 0.0 { 2.0 * tau - kappa + s } else { 2.0 * tau + 4.0 * tau * tau / (kappa + s) };
    let t = if kappa < 0.0 { tau + 2.0 * tau * tau / (s - kappa) } else { 0.5 * (kappa + 2.0 * tau + s) };
    let one_minus = if kappa > 0.0 { 4.0 * tau * tau / ((s + kappa) * s) } else { 1.0 - kappa / s };
    let w = 2.0 * tau / q;
    let h = -t + tau * (0.5 * q).ln() + tau * t.ln();
    (h, w, 2.0 * tau * one_minus / (q * q))
}

impl<'a> Dual<'a> {
    fn new(problem: &'a LocalRateProblem<'a>) -> Self {
        let net = problem.net;
        let k = net.k();
        let literal = problem.mode == GatingMode::Literal;
        let arrival_term: Vec<bool> = (0..k).map(|s| problem.arrival_on(s)).collect();
        let service_term: Vec<bool> = (0..k).map(|s| problem.service_on(s)).collect();
        let kink: Vec<bool> = (0..k).map(|s| service_term[s] && problem.face.contains(s)).collect();

        let mut slots = vec![Slot::Zero; k];
        let mut n = 0;
        let mut pool = Vec::new();
        let mut pool_var = None;
        let mut anchor = None;
        let mut constraints = Vec::new();
        if literal {
            pool = (0..k).filter(|&s| !service_term[s]).collect();
            anchor = pool.iter().copied().find(|&s| !arrival_term[s]);
            for s in 0..k {
                if service_term[s] {
                    slots[s] = Slot::Var(n);
                    n += 1;
                }
            }
            if !pool.is_empty() && anchor.is_none() {
                pool_var = Some(n);
                for &s in &pool {
                    slots[s] = Slot::Var(n);
                }
                n += 1;
            }
            for s in 0..k {
                if !service_term[s] {
                    continue;
                }
                if !arrival_term[s] {
                    constraints.push(Constraint::Arrival(s));
                }
                if !pool.is_empty() && !(anchor.is_some() && !arrival_term[s]) {
                    constraints.push(Constraint::PoolFlow(s));
                }
            }
            if pool_var.is_some() {
                constraints.push(Constraint::PoolExit);
            }
        } else {
            for (s, slot) in slots.iter_mut().enumerate() {
                *slot = Slot::Var(s);
            }
            n = k;
        }
        Dual { problem, k, arrival_term, service_term, kink, slots, n, pool, pool_var, anchor, constraints }
    }

    fn theta(&self, phi: &[f64]) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Var(i) => phi[*i],
                Slot::Zero => 0.0,
            })
            .collect()
    }

    /// `(coefficient, variable)` pairs of the constraint `Σ coef·φ ≤ 0`.
    fn constraint_terms(&self, c: Constraint) -> Vec<(f64, usize)> {
        let var = |s: usize| match self.slots[s] {
            Slot::Var(i) => i,
            Slot::Zero => unreachable!("constrained stations always own a variable"),
        };
        match c {
            Constraint::Arrival(l) => vec![(1.0, var(l))],
            Constraint::PoolFlow(l) => match self.pool_var {
                Some(m) => vec![(1.0, var(l)), (-1.0, m)],
                None => vec![(1.0, var(l))],
            },
            Constraint::PoolExit => vec![(-1.0, self.pool_var.expect("pool exit needs a pool variable"))],
        }
    }

    fn slack(&self, c: Constraint, phi: &[f64]) -> f64 {
        -self.constraint_terms(c).iter().map(|&(coef, i)| coef * phi[i]).sum::<f64>()
    }

    /// Routing tilt of station `s`: `(r_s, ln Z_s)`.
    fn tilt_row(&self, s: usize, theta: &[f64]) -> (Vec<f64>, f64) {
        let net = self.problem.net;
        let top = theta.iter().cloned().fold(0.0, f64::max);
        let mut z: Vec<f64> = (0..self.k).map(|l| net.p(s, l) * (theta[l] - top).exp()).collect();
        let total = z.iter().sum::<f64>() + net.exit_prob(s) * (-top).exp();
        z.iter_mut().for_each(|v| *v /= total);
        (z, total.ln() + top)
    }

    /// `g(θ)` with kinks smoothed at weight `tau`, or exact when `tau` is `None`.
    fn eval_theta(&self, theta: &[f64], tau: Option<f64>, with_hess: bool) -> ThetaEval {
        let net = self.problem.net;
        let k = self.k;
        let y = &self.problem.y;
        let mut value: f64 = theta.iter().zip(y).map(|(t, v)| t * v).sum();
        let mut grad = y.clone();
        let mut hess = if with_hess { vec![0.0; k * k] } else { Vec::new() };
        for s in 0..k {
            if self.arrival_term[s] {
                let c = counting_cgf(net.arrival(s), theta[s]);
                value -= c.value;
                grad[s] -= c.d1;
                if with_hess {
                    hess[s * k + s] -= c.d2;
                }
            }
            if !self.service_term[s] {
                continue;
            }
            let (r, log_z) = self.tilt_row(s, theta);
            let kappa = counting_cgf(net.service(s), log_z - theta[s]);
            let (alpha, beta) = self.service_weights(s, &kappa, tau, &mut value);
            // ∇c = r − e_s, ∇²c = diag(r) − r rᵀ
            let mut dc = r.clone();
            dc[s] -= 1.0;
            for l in 0..k {
                grad[l] -= alpha * dc[l];
            }
            if with_hess {
                for i in 0..k {
                    for j in 0..k {
                        let curvature = if i == j { r[i] } else { 0.0 } - r[i] * r[j];
                        hess[i * k + j] -= beta * dc[i] * dc[j] + alpha * curvature;
                    }
                }
            }
        }
        ThetaEval { value, grad, hess }
    }

    /// Adds station `s`'s service term to `value` and returns the departure
    /// rate `α` and the second-order weight `β` of the term.
    fn service_weights(&self, s: usize, kappa: &CountingCgf, tau: Option<f64>, value: &mut f64) -> (f64, f64) {
        if !self.kink[s] {
            *value -= kappa.value;
            return (kappa.d1, kappa.d2);
        }
        match tau {
            Some(tau) => {
                let (h, w, dw) = smooth_kink(kappa.value, tau);
                *value += h;
                (w * kappa.d1, w * kappa.d2 + dw * kappa.d1 * kappa.d1)
            }
            None if kappa.value > 0.0 => {
                *value -= kappa.value;
                (kappa.d1, kappa.d2)
            }
            None => (0.0, 0.0),
        }
    }

    /// Barrier objective and its derivatives in the reduced variables.
    fn objective(&self, phi: &[f64], tau: Option<f64>, with_hess: bool) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let theta = self.theta(phi);
        let e = self.eval_theta(&theta, tau, with_hess);
        let (k, n) = (self.k, self.n);
        let mut value = e.value;
        let mut grad = vec![0.0; n];
        let mut hess = if with_hess { vec![0.0; n * n] } else { Vec::new() };
        for s in 0..k {
            let Slot::Var(i) = self.slots[s] else { continue };
            grad[i] += e.grad[s];
            if with_hess {
                for t in 0..k {
                    if let Slot::Var(j) = self.slots[t] {
                        hess[i * n + j] += e.hess[s * k + t];
                    }
                }
            }
        }
        if let Some(tau) = tau {
            for &c in &self.constraints {
                let slack = self.slack(c, phi);
                if !(slack > 0.0) {
                    return None;
                }
                value += tau * slack.ln();
                let terms = self.constraint_terms(c);
                // d/dφ τ ln(slack) = −τ coef / slack
                for &(ci, i) in &terms {
                    grad[i] -= tau * ci / slack;
                    if with_hess {
                        for &(cj, j) in &terms {
                            hess[i * n + j] -= tau * ci * cj / (slack * slack);
                        }
                    }
                }
            }
        }
        value.is_finite().then_some((value, grad, hess))
    }

    fn start(&self) -> Vec<f64> {
        let mut phi = vec![0.0; self.n];
        for &c in &self.constraints {
            if let Constraint::Arrival(l) | Constraint::PoolFlow(l) = c {
                if let Slot::Var(i) = self.slots[l] {
                    phi[i] = -1.0;
                }
            }
        }
        if let Some(m) = self.pool_var {
            phi[m] = 1.0;
        }
        phi
    }

    /// Damped Newton ascent on the barrier objective at fixed `tau`.
    fn maximize(&self, phi: &mut Vec<f64>, tau: Option<f64>, tol: f64) -> Result<(), LocalRateError> {
        let n = self.n;
        if n == 0 {
            return Ok(());
        }
        for _ in 0..MAX_NEWTON {
            let (value, grad, hess) = self.objective(phi, tau, true).ok_or_else(|| self.diverged(phi))?;
            let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gnorm <= tol {
                return Ok(());
            }
            let step = newton_step(&hess, &grad, n);
            let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
            let mut alpha: f64 = 1.0;
            if tau.is_some() {
                for &c in &self.constraints {
                    let change: f64 = -self.constraint_terms(c).iter().map(|&(coef, i)| coef * step[i]).sum::<f64>();
                    if change < 0.0 {
                        alpha = alpha.min(0.99 * self.slack(c, phi) / -change);
                    }
                }
            }
            let trial = |alpha: f64| -> Vec<f64> { phi.iter().zip(&step).map(|(p, s)| p + alpha * s).collect() };
            let grad_norm_at = |candidate: &[f64]| {
                self.objective(candidate, tau, false).map(|(_, g, _)| g.iter().fold(0.0f64, |m, g| m.max(g.abs())))
            };
            let mut next = None;
            let mut a = alpha;
            if slope > 1e-13 * (1.0 + value.abs()) {
                for _ in 0..60 {
                    let candidate = trial(a);
                    if let Some((v, _, _)) = self.objective(&candidate, tau, false) {
                        if v >= value + 1e-4 * a * slope {
                            next = Some(candidate);
                            break;
                        }
                    }
                    a *= 0.5;
                }
            } else {
                // The predicted gain is below roundoff in the value, so the
                // gradient norm serves as merit function instead.
                for _ in 0..30 {
                    let candidate = trial(a);
                    if grad_norm_at(&candidate).is_some_and(|g| g < gnorm) {
                        next = Some(candidate);
                        break;
                    }
                    a *= 0.5;
                }
            }
            let Some(next) = next else { return Ok(()) };
            *phi = next;
            if self.theta(phi).iter().any(|t| t.abs() > THETA_LIMIT) {
                return Err(self.diverged(phi));
            }
        }
        Ok(())
    }

    fn diverged(&self, phi: &[f64]) -> LocalRateError {
        let theta = self.theta(phi);
        let norm = theta.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(f64::MIN_POSITIVE);
        LocalRateError::Infeasible { certificate: theta.iter().map(|t| t / norm).collect() }
    }
    /// Tilted primal quantities at `θ`, before departure weights are set.
    fn tilt(&self, theta: &[f64]) -> Tilt {
        let net = self.problem.net;
        let k = self.k;
        let mut tilt = Tilt {
            a: vec![0.0; k],
            rate: vec![0.0; k],
            rows: vec![vec![0.0; k]; k],
            c: vec![0.0; k],
            kappa: vec![0.0; k],
            log_z: vec![0.0; k],
            arrival_cost: 0.0,
        };
        for s in 0..k {
            if self.arrival_term[s] {
                let c = counting_cgf(net.arrival(s), theta[s]);
                tilt.a[s] = c.d1;
                tilt.arrival_cost += theta[s] * c.d1 - c.value;
            }
            if !self.service_term[s] {
                continue;
            }
            let (r, log_z) = self.tilt_row(s, theta);
            tilt.c[s] = log_z - theta[s];
            let kappa = counting_cgf(net.service(s), tilt.c[s]);
            tilt.rate[s] = kappa.d1;
            tilt.kappa[s] = kappa.value;
            tilt.rows[s] = r;
            tilt.log_z[s] = log_z;
        }
        tilt
    }

    /// Fraction `w_s` of the tilted departure rate used at each station.
    fn weights(&self, tilt: &Tilt, tau: Option<f64>) -> Vec<f64> {
        (0..self.k)
            .map(|s| match (self.service_term[s], self.kink[s], tau) {
                (false, _, _) => 0.0,
                (true, false, _) => 1.0,
                (true, true, Some(tau)) => smooth_kink(tilt.kappa[s], tau).1,
                (true, true, None) => f64::from(u8::from(tilt.kappa[s] > 0.0)),
            })
            .collect()
    }

    /// Balance residuals `y − a − inflow + d` of the stations outside the
    /// pool, followed by the aggregate residual of an unanchored pool.
    fn residual_rows(&self, tilt: &Tilt, w: &[f64], mults: &[f64]) -> Vec<f64> {
        let k = self.k;
        let y = &self.problem.y;
        let mut per_station: Vec<f64> = (0..k)
            .map(|s| {
                let inflow: f64 = (0..k).map(|l| w[l] * tilt.rate[l] * tilt.rows[l][s]).sum();
                y[s] - tilt.a[s] - inflow + w[s] * tilt.rate[s]
            })
            .collect();
        let mut pool_out = 0.0;
        for (&c, &m) in self.constraints.iter().zip(mults) {
            match c {
                Constraint::Arrival(l) => per_station[l] -= m,
                Constraint::PoolFlow(l) => {
                    per_station[l] -= m;
                    pool_out += m;
                }
                Constraint::PoolExit => pool_out += m,
            }
        }
        let mut rows: Vec<f64> = (0..k).filter(|&s| self.service_term[s]).map(|s| per_station[s]).collect();
        if !self.pool.is_empty() && self.anchor.is_none() {
            rows.push(self.pool.iter().map(|&s| per_station[s]).sum::<f64>() + pool_out);
        }
        rows
    }

    /// Re-solves the kink weights and the constraint multipliers from the
    /// balance equations with `θ` held fixed. Near a kink the barrier
    /// recovers them only to about `ε/τ` relative accuracy; the equations
    /// are affine in these unknowns, so a damped least-squares correction
    /// restores feasibility to roundoff.
    fn polish(&self, tilt: &Tilt, w: &mut [f64], mults: &mut [f64]) {
        let kinks: Vec<usize> = (0..self.k).filter(|&s| self.kink[s]).collect();
        let n = kinks.len() + mults.len();
        if n == 0 {
            return;
        }
        let get = |w: &[f64], mults: &[f64], j: usize| if j < kinks.len() { w[kinks[j]] } else { mults[j - kinks.len()] };
        for _ in 0..4 {
            let base = self.residual_rows(tilt, w, mults);
            let m = base.len();
            let mut jac = vec![0.0; m * n];
            for j in 0..n {
                let (mut w2, mut m2) = (w.to_vec(), mults.to_vec());
                if j < kinks.len() {
                    w2[kinks[j]] += 1.0;
                } else {
                    m2[j - kinks.len()] += 1.0;
                }
                let shifted = self.residual_rows(tilt, &w2, &m2);
                for i in 0..m {
                    jac[i * n + j] = shifted[i] - base[i];
                }
            }
            // (JᵀJ + ε diag(JᵀJ)) Δ = −Jᵀ R
            let mut normal = vec![0.0; n * n];
            let mut rhs = vec![0.0; n];
            for a in 0..n {
                for i in 0..m {
                    rhs[a] -= jac[i * n + a] * base[i];
                }
                for b in 0..n {
                    normal[a * n + b] = (0..m).map(|i| jac[i * n + a] * jac[i * n + b]).sum();
                }
            }
            for a in 0..n {
                normal[a * n + a] = normal[a * n + a] * (1.0 + 1e-12) + 1e-300;
            }
            let Some(delta) = cholesky_solve(&mut normal, &rhs, n) else { return };
            for (j, step) in delta.iter().enumerate() {
                let next = get(w, mults, j) + step;
                if j < kinks.len() {
                    w[kinks[j]] = next.clamp(0.0, 1.0);
                } else {
                    mults[j - kinks.len()] = next.max(0.0);
                }
            }
        }
    }

    /// Primal point and its cost from the tilt, the departure weights and
    /// the multipliers of the literal-mode constraints.
    fn assemble(&self, tilt: &Tilt, theta: &[f64], w: &[f64], mults: &[f64]) -> Primal {
        let net = self.problem.net;
        let k = self.k;
        let mut a = tilt.a.clone();
        let mut d = vec![0.0; k];
        let mut flows = vec![vec![0.0; k]; k];
        let mut cost = tilt.arrival_cost;
        for s in 0..k {
            if !self.service_term[s] {
                continue;
            }
            let rate = w[s] * tilt.rate[s];
            d[s] = rate;
            if !self.kink[s] {
                cost += tilt.c[s] * rate - tilt.kappa[s];
            } else if rate > net.mu()[s] {
                cost += cramer_transform(net.service(s), rate).value.to_f64();
            }
            let entropy: f64 = tilt.rows[s].iter().zip(theta).map(|(r, t)| r * t).sum::<f64>() - tilt.log_z[s];
            cost += rate * entropy.max(0.0);
            for l in 0..k {
                flows[s][l] = rate * tilt.rows[s][l];
            }
        }

        // Free arrivals and free departures, then balance the pool through
        // free internal flows routed via a leader.
        let leader = self.anchor.or_else(|| self.pool.first().copied());
        let mut pool_exit = 0.0;
        for (&c, &m) in self.constraints.iter().zip(mults) {
            match c {
                Constraint::Arrival(l) => a[l] += m,
                Constraint::PoolFlow(l) => flows[leader.expect("pool flow needs a pool")][l] += m,
                Constraint::PoolExit => pool_exit += m,
            }
        }
        if let Some(leader) = leader {
            let y = &self.problem.y;
            let inflow = |flows: &[Vec<f64>], s: usize| flows.iter().map(|row| row[s]).sum::<f64>();
            for &s in &self.pool {
                if s == leader {
                    continue;
                }
                let need = a[s] + inflow(&flows, s) - y[s];
                if need >= 0.0 {
                    d[s] = need;
                    flows[s][leader] += need;
                } else {
                    flows[leader][s] -= need;
                }
            }
            d[leader] = flows[leader].iter().sum::<f64>() + pool_exit;
            if Some(leader) == self.anchor {
                let residual = y[leader] - a[leader] - inflow(&flows, leader) + d[leader];
                if residual > 0.0 {
                    a[leader] += residual;
                } else {
                    d[leader] -= residual;
                }
            }
        }
        Primal { a, d, flows, cost }
    }
}

/// Solves `(−H + δI) s = g` by Cholesky, raising `δ` until the factorization
/// succeeds.
fn newton_step(hess: &[f64], grad: &[f64], n: usize) -> Vec<f64> {
    let trace: f64 = (0..n).map(|i| -hess[i * n + i]).sum::<f64>().abs() / n as f64;
    let mut shift = 0.0;
    loop {
        let mut m: Vec<f64> = hess.iter().map(|h| -h).collect();
        for i in 0..n {
            m[i * n + i] += shift;
        }
        if let Some(step) = cholesky_solve(&mut m, grad, n) {
            return step;
        }
        shift = if shift == 0.0 { 1e-12 * trace.max(1e-8) } else { shift * 10.0 };
    }
}

fn cholesky_solve(m: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut diag = m[j * n + j];
        for p in 0..j {
            diag -= m[j * n + p] * m[j * n + p];
        }
        if !(diag > 0.0) {
            return None;
        }
        let diag = diag.sqrt();
        m[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = m[i * n + j];
            for p in 0..j {
                v -= m[i * n + p] * m[j * n + p];
            }
            m[i * n + j] = v / diag;
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        for p in 0..i {
            x[i] -= m[i * n + p] * x[p];
        }
        x[i] /= m[i * n + i];
    }
    for i in (0..n).rev() {
        for p in i + 1..n {
            x[i] -= m[p * n + i] * x[p];
        }
        x[i] /= m[i * n + i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub(super) fn solve(problem: &LocalRateProblem) -> Result<LocalRateSolution, LocalRateError> {
    let dual = Dual::new(problem);
    let scale = problem.net.rate_scale() + problem.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let mut phi = dual.start();

    let smoothed = dual.kink.iter().any(|&k| k) || !dual.constraints.is_empty();
    let final_tau = if smoothed {
        let mut tau = TAU_START * scale;
        loop {
            dual.maximize(&mut phi, Some(tau), tol)?;
            if tau <= TAU_END * scale {
                break Some(tau);
            }
            tau *= 0.1;
        }
    } else {
        dual.maximize(&mut phi, None, tol)?;
        None
    };

    let theta = dual.theta(&phi);
    let tilt = dual.tilt(&theta);
    let mut w = dual.weights(&tilt, final_tau);
    let mut mults: Vec<f64> = match final_tau {
        Some(tau) => dual.constraints.iter().map(|&c| tau / dual.slack(c, &phi)).collect(),
        None => Vec::new(),
    };
    if final_tau.is_some() {
        dual.polish(&tilt, &mut w, &mut mults);
    }
    let primal = dual.assemble(&tilt, &theta, &w, &mults);
    let bound = dual.eval_theta(&theta, None, false).value;
    let kkt_residual = balance_residual(&problem.y, &primal.a, &primal.d, &primal.flows);
    let value = primal.cost.max(0.0);
    let gap = primal.cost - bound;
    if !(gap.abs() <= 1e-7 * (1.0 + value)) || !(kkt_residual <= 1e-8 * scale.max(1.0)) {
        return Err(LocalRateError::NonConvergence { gap, kkt_residual });
    }
    Ok(LocalRateSolution {
        value,
        a: primal.a,
        d: primal.d,
        flows: primal.flows,
        kkt_residual,
        duality_gap: gap,
        theta,
    })
}
