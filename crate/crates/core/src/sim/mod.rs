//! Discrete-event simulation of the network.
//!
//! Each station has at most one pending exogenous arrival and at most one
//! pending service completion, kept in a binary heap keyed by absolute time.
//! Ties are broken by station index and then by kind, arrivals first.
//!
//! Service times are drawn when a customer enters service. A FIFO station
//! only empties at a completion, so this is the same as indexing the service
//! renewal process by cumulative busy time.
//!
//! Randomness: a run with master seed `s` uses, for station `k`, the ChaCha8
//! streams `3k` (interarrival times), `3k + 1` (service times) and `3k + 2`
//! (routing) of the key derived from `(s, replicate)` by [`derive_key`].

mod estimate;

pub use estimate::{
    default_burn_in, default_spacing, estimate_tail, fluid_trajectory, stationary_sample, TailCell, TailEstimate,
    TailOptions,
};

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{DistributionFamily, Network};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("event limit of {0} reached")]
    EventLimit(u64),
}

/// Key for replicate `replicate` of a run seeded with `seed`.
pub fn derive_key(seed: u64, replicate: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key
}

fn stream(key: [u8; 32], id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(id);
    rng
}

enum Sampler {
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    Mixture(WeightedIndex<f64>, Vec<Exp<f64>>),
}

impl Sampler {
    fn new(dist: &DistributionFamily) -> Self {
        match dist {
            DistributionFamily::Exponential { rate } => Sampler::Exp(Exp::new(*rate).expect("validated rate")),
            DistributionFamily::Gamma { shape, rate } => {
                Sampler::Gamma(Gamma::new(*shape, 1.0 / rate).expect("validated parameters"))
            }
            DistributionFamily::HyperExponential { weights, rates } => Sampler::Mixture(
                WeightedIndex::new(weights).expect("validated weights"),
                rates.iter().map(|r| Exp::new(*r).expect("validated rate")).collect(),
            ),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Exp(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::Mixture(pick, phases) => phases[pick.sample(rng)].sample(rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Arrival,
    /// Service completion; `to` is the next station, `None` for an exit.
    Completion { to: Option<usize> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub station: usize,
    pub kind: EventKind,
}

impl Event {
    fn write_bytes(&self, out: &mut impl Digest) {
        out.update(self.time.to_bits().to_le_bytes());
        out.update((self.station as u32).to_le_bytes());
        let code: i32 = match self.kind {
            EventKind::Arrival => -2,
            EventKind::Completion { to: None } => -1,
            EventKind::Completion { to: Some(l) } => l as i32,
        };
        out.update(code.to_le_bytes());
    }
}

/// Markov state plus the counters of the bookkeeping identity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimState {
    pub clock: f64,
    pub q: Vec<u64>,
    /// Time to the next exogenous arrival.
    pub u: Vec<f64>,
    /// Residual service time; 0 at idle stations.
    pub w: Vec<f64>,
    /// Cumulative busy time.
    pub busy: Vec<f64>,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    /// `routed[l][k]`: customers sent from `l` to `k`.
    pub routed: Vec<Vec<u64>>,
    pub q_init: Vec<u64>,
}

impl SimState {
    /// `Q_k = Q_k(0) + A_k + Σ_l R_lk − D_k` at every station, in integers.
    pub fn conservation_holds(&self) -> bool {
        (0..self.q.len()).all(|k| {
            let inflow: u64 = self.routed.iter().map(|row| row[k]).sum();
            self.q_init[k] + self.arrivals[k] + inflow == self.q[k] + self.departures[k]
        })
    }
}

/// Initial queue lengths and delays.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialCondition {
    pub q: Vec<u64>,
    /// First exogenous arrival times.
    pub u: Vec<f64>,
    /// First completion times at initially busy stations; a zero here means
    /// a fresh service starts at time 0.
    pub v: Vec<f64>,
}

impl InitialCondition {
    /// The spec's initial state, with queue lengths rounded down.
    pub fn from_network(net: &Network) -> Self {
        let (u, v) = net.delays();
        InitialCondition { q: net.q0().iter().map(|x| x.floor() as u64).collect(), u, v }
    }

    /// Initial state of the `n`-th scaled system: `⌊n q0⌋` customers and
    /// delays multiplied by `n`.
    pub fn scaled(net: &Network, n: f64, q0: &[f64]) -> Self {
        let (u, v) = net.delays();
        InitialCondition {
            q: q0.iter().map(|x| (n * x).floor() as u64).collect(),
            u: u.iter().map(|x| n * x).collect(),
            v: v.iter().map(|x| n * x).collect(),
        }
    }

    pub fn empty(k: usize) -> Self {
        InitialCondition { q: vec![0; k], u: vec![0.0; k], v: vec![0.0; k] }
    }
}

/// Called after every event with the updated state.
pub trait Observer {
    fn on_event(&mut self, event: &Event, state: &SimState);
}

impl Observer for () {
    fn on_event(&mut self, _: &Event, _: &SimState) {}
}

/// SHA-256 of the event log, optionally keeping the events.
#[derive(Default)]
pub struct EventLog {
    hasher: Sha256,
    pub events: Option<Vec<Event>>,
    pub count: u64,
}

impl EventLog {
    pub fn keeping_events() -> Self {
        EventLog { events: Some(Vec::new()), ..Default::default() }
    }

    pub fn digest_hex(&self) -> String {
        self.hasher.clone().finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Observer for EventLog {
    fn on_event(&mut self, event: &Event, _: &SimState) {
        event.write_bytes(&mut self.hasher);
        self.count += 1;
        if let Some(events) = &mut self.events {
            events.push(*event);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Pending {
    time: f64,
    station: usize,
    /// 0 arrival, 1 completion.
    kind: u8,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.station.cmp(&other.station))
            .then(self.kind.cmp(&other.kind))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Simulator {
    state: SimState,
    heap: BinaryHeap<Reverse<Pending>>,
    next_arrival: Vec<f64>,
    next_completion: Vec<f64>,
    interarrival: Vec<Sampler>,
    service: Vec<Sampler>,
    arrival_rng: Vec<ChaCha8Rng>,
    service_rng: Vec<ChaCha8Rng>,
    routing_rng: Vec<ChaCha8Rng>,
    /// Cumulative routing rows; a draw past the last entry exits.
    routing_cdf: Vec<Vec<f64>>,
    events: u64,
    max_events: u64,
}

impl Simulator {
    pub fn new(net: &Network, init: &InitialCondition, key: [u8; 32]) -> Result<Self, SimError> {
        let k = net.k();
        if init.q.len() != k || init.u.len() != k || init.v.len() != k {
            return Err(SimError::InvalidInput(format!("initial condition must have {k} stations")));
        }
        if init.u.iter().chain(&init.v).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(SimError::InvalidInput("initial delays must be finite and nonnegative".into()));
        }
        let routing_cdf = net
            .routing()
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        let mut sim = Simulator {
            state: SimState {
                clock: 0.0,
                q: init.q.clone(),
                u: init.u.clone(),
                w: vec![0.0; k],
                busy: vec![0.0; k],
                arrivals: vec![0; k],
                departures: vec![0; k],
                routed: vec![vec![0; k]; k],
                q_init: init.q.clone(),
            },
            heap: BinaryHeap::with_capacity(2 * k),
            next_arrival: init.u.clone(),
            next_completion: vec![f64::INFINITY; k],
            interarrival: (0..k).map(|s| Sampler::new(net.arrival(s))).collect(),
            service: (0..k).map(|s| Sampler::new(net.service(s))).collect(),
            arrival_rng: (0..k).map(|s| stream(key, 3 * s as u64)).collect(),
            service_rng: (0..k).map(|s| stream(key, 3 * s as u64 + 1)).collect(),
            routing_rng: (0..k).map(|s| stream(key, 3 * s as u64 + 2)).collect(),
            routing_cdf,
            events: 0,
            max_events: u64::MAX,
        };
        for s in 0..k {
            sim.heap.push(Reverse(Pending { time: init.u[s], station: s, kind: 0 }));
            if init.q[s] > 0 {
                let first = if init.v[s] > 0.0 { init.v[s] } else { sim.service[s].draw(&mut sim.service_rng[s]) };
                sim.schedule_completion(s, first);
            }
        }
        sim.refresh_residuals();
        Ok(sim)
    }

    /// Fails with [`SimError::EventLimit`] once `limit` events have run.
    pub fn with_event_limit(mut self, limit: u64) -> Self {
        self.max_events = limit;
        self
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn event_count(&self) -> u64 {
        self.events
    }

    fn schedule_completion(&mut self, s: usize, at: f64) {
        self.next_completion[s] = at;
        self.heap.push(Reverse(Pending { time: at, station: s, kind: 1 }));
    }

    fn refresh_residuals(&mut self) {
        let t = self.state.clock;
        for s in 0..self.state.q.len() {
            self.state.u[s] = self.next_arrival[s] - t;
            self.state.w[s] = if self.state.q[s] > 0 { self.next_completion[s] - t } else { 0.0 };
        }
    }

    fn advance_clock(&mut self, t: f64) {
        let dt = t - self.state.clock;
        for s in 0..self.state.q.len() {
            if self.state.q[s] > 0 {
                self.state.busy[s] += dt;
            }
        }
        self.state.clock = t;
    }

    fn next_time(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |p| p.0.time)
    }

    fn route(&mut self, from: usize) -> Option<usize> {
        let draw: f64 = self.routing_rng[from].random();
        self.routing_cdf[from].iter().position(|&c| draw < c)
    }

    fn join(&mut self, s: usize) {
        self.state.q[s] += 1;
        if self.state.q[s] == 1 {
            let t = self.state.clock + self.service[s].draw(&mut self.service_rng[s]);
            self.schedule_completion(s, t);
        }
    }

    /// Runs the next event and reports it to `obs`.
    pub fn step(&mut self, obs: &mut impl Observer) -> Result<Event, SimError> {
        if self.events >= self.max_events {
            return Err(SimError::EventLimit(self.max_events));
        }
        let Reverse(next) = self.heap.pop().expect("every station has a pending arrival");
        self.advance_clock(next.time);
        let s = next.station;
        let kind = if next.kind == 0 {
            self.state.arrivals[s] += 1;
            self.next_arrival[s] = next.time + self.interarrival[s].draw(&mut self.arrival_rng[s]);
            self.heap.push(Reverse(Pending { time: self.next_arrival[s], station: s, kind: 0 }));
            self.join(s);
            EventKind::Arrival
        } else {
            self.state.q[s] -= 1;
            self.state.departures[s] += 1;
            self.next_completion[s] = f64::INFINITY;
            if self.state.q[s] > 0 {
                let t = next.time + self.service[s].draw(&mut self.service_rng[s]);
                self.schedule_completion(s, t);
            }
            let to = self.route(s);
            if let Some(l) = to {
                self.state.routed[s][l] += 1;
                self.join(l);
            }
            EventKind::Completion { to }
        };
        self.events += 1;
        self.refresh_residuals();
        let event = Event { time: next.time, station: s, kind };
        obs.on_event(&event, &self.state);
        Ok(event)
    }

    /// Runs every event up to and including time `t`, then moves the clock
    /// to `t`.
    pub fn run_until(&mut self, t: f64, obs: &mut impl Observer) -> Result<(), SimError> {
        while self.next_time() <= t {
            self.step(obs)?;
        }
        if t > self.state.clock {
            self.advance_clock(t);
            self.refresh_residuals();
        }
        Ok(())
    }
}

/// Output of [`simulate`].
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    /// Every event, when requested.
    pub events: Option<Vec<Event>>,
    /// States at `0, dt, 2dt, …` up to the horizon, when a sampling interval
    /// was given.
    pub samples: Vec<SimState>,
    pub final_state: SimState,
    pub event_count: u64,
    /// SHA-256 of the event log.
    pub digest: String,
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub keep_events: bool,
    pub sample_interval: Option<f64>,
    pub max_events: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { keep_events: false, sample_interval: None, max_events: 1_000_000_000 }
    }
}

/// Simulates from the spec's initial state up to `horizon`.
pub fn simulate(net: &Network, horizon: f64, seed: u64, opts: &SimOptions) -> Result<Trajectory, SimError> {
    simulate_from(net, &InitialCondition::from_network(net), horizon, derive_key(seed, 0), opts)
}

pub fn simulate_from(
    net: &Network,
    init: &InitialCondition,
    horizon: f64,
    key: [u8; 32],
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    if let Some(dt) = opts.sample_interval {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidInput(format!("sample interval must be positive, got {dt}")));
        }
    }
    let mut sim = Simulator::new(net, init, key)?.with_event_limit(opts.max_events);
    let mut log = if opts.keep_events { EventLog::keeping_events() } else { EventLog::default() };
    let mut samples = Vec::new();
    if let Some(dt) = opts.sample_interval {
        samples.push(sim.state().clone());
        let mut i = 1u64;
        loop {
            let t = (i as f64 * dt).min(horizon);
            sim.run_until(t, &mut log)?;
            samples.push(sim.state().clone());
            if t >= horizon {
                break;
            }
            i += 1;
        }
    } else {
        sim.run_until(horizon, &mut log)?;
    }
    Ok(Trajectory {
        digest: log.digest_hex(),
        event_count: log.count,
        events: log.events,
        samples,
        final_state: sim.state().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NetworkSpec, StationSpec};

    fn mm1() -> Network {
        Network::new(NetworkSpec::mm1(1.0, 2.0)).unwrap()
    }

    struct Checker {
        ok: bool,
        idle_ok: bool,
        last_busy: Vec<f64>,
    }

    impl Observer for Checker {
        fn on_event(&mut self, _: &Event, state: &SimState) {
            self.ok &= state.conservation_holds();
            self.idle_ok &= state.q.iter().zip(&state.w).all(|(q, w)| (*q == 0) == (*w == 0.0) && *w >= 0.0);
            self.ok &= state.busy.iter().zip(&self.last_busy).all(|(b, l)| b >= l);
            self.last_busy.clone_from(&state.busy);
        }
    }

    #[test]
    fn conservation_and_idle_convention_hold() {
        let net = Network::new(NetworkSpec::markovian(
            &[0.5, 0.3, 0.2],
            &[2.0, 1.5, 2.5],
            vec![vec![0.0, 0.4, 0.3], vec![0.2, 0.0, 0.5], vec![0.1, 0.1, 0.0]],
        ))
        .unwrap();
        let mut sim = Simulator::new(&net, &InitialCondition::empty(3), derive_key(7, 0)).unwrap();
        let mut check = Checker { ok: true, idle_ok: true, last_busy: vec![0.0; 3] };
        for _ in 0..100_000 {
            sim.step(&mut check).unwrap();
        }
        assert!(check.ok && check.idle_ok);
    }

    #[test]
    fn same_seed_same_log() {
        let net = mm1();
        let opts = SimOptions { keep_events: true, ..SimOptions::default() };
        let a = simulate(&net, 500.0, 11, &opts).unwrap();
        let b = simulate(&net, 500.0, 11, &opts).unwrap();
        let c = simulate(&net, 500.0, 12, &opts).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.events, b.events);
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn first_arrival_waits_for_the_delay() {
        let mut spec = NetworkSpec::mm1(1.0, 2.0);
        spec.stations[0].u = 3.0;
        let net = Network::new(spec).unwrap();
        let run = simulate(&net, 10.0, 1, &SimOptions { keep_events: true, ..SimOptions::default() }).unwrap();
        let first = run.events.unwrap()[0];
        assert_eq!((first.time, first.kind), (3.0, EventKind::Arrival));
    }

    #[test]
    fn initial_residual_service_is_honoured() {
        let mut spec = NetworkSpec::mm1(1.0, 2.0);
        spec.stations[0] = StationSpec { q0: 1.0, u: 5.0, v: 0.25, ..spec.stations[0].clone() };
        let net = Network::new(spec).unwrap();
        let run = simulate(&net, 1.0, 1, &SimOptions { keep_events: true, ..SimOptions::default() }).unwrap();
        let events = run.events.unwrap();
        assert_eq!(events[0].time, 0.25);
        assert_eq!(run.final_state.busy[0], 0.25);
    }

    #[test]
    fn utilization_matches_load() {
        let run = simulate(&mm1(), 200_000.0, 3, &SimOptions::default()).unwrap();
        let frac = run.final_state.busy[0] / 200_000.0;
        // Busy-period correlation inflates the iid standard error; the
        // batch-means error at this length is about 2e-3.
        assert!((frac - 0.5).abs() < 3.0 * 2.5e-3, "{frac}");
    }

    #[test]
    fn event_limit_guards_runaway_runs() {
        let opts = SimOptions { max_events: 10, ..SimOptions::default() };
        assert!(matches!(simulate(&mm1(), 1e6, 1, &opts), Err(SimError::EventLimit(10))));
    }

    #[test]
    fn gamma_and_mixture_laws_simulate() {
        let spec = NetworkSpec::new(
            vec![
                StationSpec::new(DistributionFamily::gamma(2.0, 2.0), DistributionFamily::exponential(3.0)),
                StationSpec::new(
                    DistributionFamily::hyper_exponential(vec![0.5, 0.5], vec![0.5, 2.0]),
                    DistributionFamily::gamma(3.0, 9.0),
                ),
            ],
            vec![vec![0.0, 0.5], vec![0.0, 0.0]],
        );
        let net = Network::new(spec).unwrap();
        let run = simulate(&net, 20_000.0, 5, &SimOptions::default()).unwrap();
        let rate = run.final_state.arrivals[1] as f64 / 20_000.0;
        assert!((rate - net.lambda()[1]).abs() < 0.05 * net.lambda()[1], "{rate}");
        assert!(run.final_state.conservation_holds());
    }
}
