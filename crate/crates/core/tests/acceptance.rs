//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are
//! always shown.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use jackson_ldp::cramer::Gating;
use jackson_ldp::local_rate::{
    brute_force_lj, eval_l, eval_l_delayed, solve_lj, GatingMode, LocalRateError, LocalRateProblem,
};
use jackson_ldp::model::{Network, StationSet};
use jackson_ldp::path::{action, action_delayed, PiecewiseLinearPath};
use jackson_ldp::quasipotential::{fluid_path, solve_v, solve_v_finite_sweep, SearchOptions};
use jackson_ldp::sim::{
    derive_key, estimate_tail, fluid_trajectory, simulate, Event, InitialCondition, Observer, SimOptions, SimState,
    Simulator, TailOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{jackson2, mm1, point_on, random_face, random_network, velocity};

type Outcome = Result<String, String>;

fn lj(net: &Network, face: StationSet, y: &[f64]) -> Result<f64, String> {
    match solve_lj(&LocalRateProblem::new(net, face, y.to_vec())) {
        Ok(s) => Ok(s.value),
        Err(LocalRateError::Infeasible { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(format!("face {face}, y = {y:?}: {e}")),
    }
}

fn product_form(net: &Network, x: &[f64]) -> f64 {
    (0..net.k()).map(|k| x[k] * (net.mu()[k] / net.effective_rates()[k]).ln()).sum()
}

fn mm1_quasipotential() -> Outcome {
    let net = mm1();
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    for x in [0.5, 1.0, 2.0] {
        let start = Instant::now();
        let r = solve_v(&net, &[x], &SearchOptions::default()).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let exact = x * std::f64::consts::LN_2;
        let rel = (r.value - exact).abs() / exact;
        worst = worst.max(rel);
        slowest = slowest.max(secs);
        if rel > 0.01 || secs > 10.0 {
            return Err(format!("x = {x}: V = {} vs {exact} ({rel:.2e} relative), {secs:.2} s", r.value));
        }
    }
    Ok(format!("max relative error {worst:.2e}, slowest point {slowest:.2} s"))
}

fn product_form_quasipotential() -> Outcome {
    let net = jackson2();
    let mut notes = Vec::new();
    for x in [[1.0, 0.5], [0.5, 1.0], [1.0, 0.0]] {
        let start = Instant::now();
        let r = solve_v(&net, &x, &SearchOptions::default()).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let exact = product_form(&net, &x);
        let rel = (r.value - exact).abs() / exact;
        notes.push(format!("x = {x:?}: {rel:.1e} in {secs:.0} s"));
        if rel > 0.02 || secs > 120.0 {
            return Err(format!("x = {x:?}: V = {} vs {exact}, {secs:.1} s", r.value));
        }
    }
    Ok(notes.join("; "))
}

fn monte_carlo_slope() -> Outcome {
    let start = Instant::now();
    let net = mm1();
    let est = estimate_tail(&net, &[1.0], &[5, 10, 15, 20], 200_000, 2024, &TailOptions::default())
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    for c in &est.cells {
        println!(
            "    n = {:2}: p = {:.3e}  95% CI [{:.3e}, {:.3e}]  hits {}{}",
            c.n,
            c.p_hat,
            c.ci_lo,
            c.ci_hi,
            c.hits,
            if c.censored { " (censored)" } else { "" }
        );
    }
    let slope = est.slope.ok_or("no slope fitted")?;
    let se = est.slope_se.unwrap_or(f64::NAN);
    let rel = (slope - std::f64::consts::LN_2).abs() / std::f64::consts::LN_2;
    let msg = format!("slope {slope:.4} ± {:.4} (95%), {:.1}% from ln 2, {secs:.1} s", 1.96 * se, 100.0 * rel);
    if rel <= 0.15 && secs < 600.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn local_rate_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let k = rng.random_range(1..=2);
        let net = random_network(&mut rng, k, false);
        let face = random_face(&mut rng, k);
        let y = velocity(&mut rng, k);
        let dual = lj(&net, face, &y)?;
        let brute = brute_force_lj(&LocalRateProblem::new(&net, face, y.clone()), 1e-4).map_err(|e| e.to_string())?;
        let diff = if dual.is_infinite() && brute.is_infinite() { 0.0 } else { (dual - brute).abs() };
        if !(diff <= 5e-3) {
            return Err(format!("instance {i}: face {face}, y = {y:?}: solver {dual} vs grid {brute}"));
        }
        worst = worst.max(diff);
    }
    let mut min_proper = f64::INFINITY;
    let mut max_full: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(1..=3);
        let net = random_network(&mut rng, k, false);
        for face in StationSet::all_subsets(k) {
            let v = lj(&net, face, &vec![0.0; k])?;
            if face == StationSet::full(k) {
                max_full = max_full.max(v);
            } else {
                min_proper = min_proper.min(v);
            }
        }
    }
    let msg = format!("max |solver − grid| {worst:.1e}; max L_full(0) {max_full:.1e}; min proper L_J(0) {min_proper:.3}");
    if max_full <= 1e-8 && min_proper >= 1e-3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..200 {
        let k = rng.random_range(1..=3);
        let net = random_network(&mut rng, k, false);
        let face = random_face(&mut rng, k);
        let (y1, y2) = (velocity(&mut rng, k), velocity(&mut rng, k));
        let mid: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 0.5 * (a + b)).collect();
        let (l1, l2, lm) = (lj(&net, face, &y1)?, lj(&net, face, &y2)?, lj(&net, face, &mid)?);
        let excess = lm - 0.5 * (l1 + l2);
        if excess > 1e-6 {
            return Err(format!("triple {i}: L(mid) exceeds the chord by {excess:.2e}"));
        }
        if excess.is_finite() {
            worst = worst.max(excess);
        }
    }
    Ok(format!("largest L(mid) − chord {worst:.1e}"))
}

fn delayed_equals_plain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(1..=3);
        let net = random_network(&mut rng, k, false);
        let face = random_face(&mut rng, k);
        let x = point_on(&mut rng, face, k);
        let y = velocity(&mut rng, k);
        let u: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
        let t = u.iter().chain(&v).cloned().fold(0.0, f64::max) + rng.random_range(0.01..1.0);
        let gating = Gating::new(u, v, t);
        for mode in [GatingMode::Literal, GatingMode::Strict] {
            let plain = eval_l(&net, &x, &y);
            let delayed = eval_l_delayed(&net, &x, &y, &gating, mode);
            let diff = match (plain, delayed) {
                (Ok(a), Ok(b)) => (a - b).abs(),
                (Err(LocalRateError::Infeasible { .. }), Err(LocalRateError::Infeasible { .. })) => 0.0,
                (a, b) => return Err(format!("x = {x:?}, y = {y:?}: {a:?} vs {b:?}")),
            };
            if diff > 1e-9 {
                return Err(format!("x = {x:?}, y = {y:?}: differ by {diff:.2e}"));
            }
            worst = worst.max(diff);
        }
    }
    let net = jackson2();
    let path = PiecewiseLinearPath::new(
        vec![0.0, 0.7, 1.5, 2.0],
        vec![vec![0.0, 0.0], vec![0.4, 0.0], vec![0.9, 0.6], vec![0.2, 0.6]],
    )
    .map_err(|e| e.to_string())?;
    let plain = action(&net, &path, &[0.0, 0.0]).map_err(|e| e.to_string())?.to_f64();
    let zero = [0.0, 0.0];
    for mode in [GatingMode::Literal, GatingMode::Strict] {
        let delayed = action_delayed(&net, &path, &zero, &zero, &zero, mode).map_err(|e| e.to_string())?.to_f64();
        if (plain - delayed).abs() > 1e-9 * (1.0 + plain) {
            return Err(format!("zero-delay action {delayed} vs plain {plain}"));
        }
    }
    Ok(format!("max |delayed − plain| {worst:.1e}; zero-delay action matches ({plain:.6})"))
}

fn fluid_zero_cost() -> Outcome {
    let net = mm1();
    // Sampling every 0.25 time units averages the velocity over windows of
    // 100 events' worth of time at n = 400.
    let path = fluid_trajectory(&net, 400.0, &[1.0], 1.5, 6, 7).map_err(|e| e.to_string())?;
    let mut costs = Vec::new();
    for i in 0..path.num_segments() {
        let (t0, t1) = (path.times()[i], path.times()[i + 1]);
        let (p, q) = (&path.positions()[i], &path.positions()[i + 1]);
        let y: Vec<f64> = p.iter().zip(q).map(|(a, b)| (b - a) / (t1 - t0)).collect();
        costs.push(eval_l(&net, p, &y).map_err(|e| e.to_string())?);
    }
    let mut sorted = costs.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };

    let mut worst_fluid: f64 = 0.0;
    for (net, q0) in [(mm1(), vec![1.0]), (jackson2(), vec![1.0, 0.5]), (jackson2(), vec![0.0, 2.0])] {
        let fp = fluid_path(&net, &q0, 4.0).map_err(|e| e.to_string())?;
        worst_fluid = worst_fluid.max(action(&net, &fp, &q0).map_err(|e| e.to_string())?.to_f64());
    }
    let msg = format!("median L along simulated path {median:.4} (segments {costs:.4?}); max fluid_path action {worst_fluid:.1e}");
    if median < 0.02 && worst_fluid < 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn finite_horizon_monotone() -> Outcome {
    let opts = SearchOptions::default();
    let mut notes = Vec::new();
    for (net, x, horizons) in [
        (mm1(), vec![1.0], [0.3, 0.6, 1.0, 2.0, 10.0]),
        (jackson2(), vec![1.0, 0.5], [0.4, 0.8, 1.2, 2.0, 10.0]),
    ] {
        let sweep = solve_v_finite_sweep(&net, &x, &horizons, &opts).map_err(|e| e.to_string())?;
        let values: Vec<f64> = sweep.iter().map(|r| r.value).collect();
        if values.windows(2).any(|w| w[1] > w[0] + 1e-6) {
            return Err(format!("x = {x:?}: values {values:?} increase"));
        }
        let v = solve_v(&net, &x, &opts).map_err(|e| e.to_string())?.value;
        if (values[4] - v).abs() > 1e-6 || values[0] <= v {
            return Err(format!("x = {x:?}: long horizon {} / short horizon {} vs V = {v}", values[4], values[0]));
        }
        notes.push(format!("x = {x:?}: {values:.4?}"));
    }
    Ok(notes.join("; "))
}

struct Conservation {
    ok: bool,
    events: u64,
}

impl Observer for Conservation {
    fn on_event(&mut self, _: &Event, state: &SimState) {
        self.ok &= state.conservation_holds();
        self.events += 1;
    }
}

fn simulator_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = random_network(&mut rng, 3, false);
    let mut sim = Simulator::new(&net, &InitialCondition::from_network(&net), derive_key(1, 0)).map_err(|e| e.to_string())?;
    let mut check = Conservation { ok: true, events: 0 };
    for _ in 0..10_000_000u64 {
        sim.step(&mut check).map_err(|e| e.to_string())?;
        if !check.ok {
            return Err(format!("conservation broken at event {}", check.events));
        }
    }
    let opts = SimOptions { keep_events: true, ..SimOptions::default() };
    let a = simulate(&net, 20_000.0, 77, &opts).map_err(|e| e.to_string())?;
    let b = simulate(&net, 20_000.0, 77, &opts).map_err(|e| e.to_string())?;
    if a.digest != b.digest || a.events != b.events {
        return Err("identical seeds gave different event logs".into());
    }
    Ok(format!("{} events conserved; {} logged events replay with digest {}", check.events, a.event_count, &a.digest[..16]))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 M/M/1 quasipotential", mm1_quasipotential),
        ("2 product-form quasipotential", product_form_quasipotential),
        ("3 Monte Carlo tail slope", monte_carlo_slope),
        ("4 local rate oracle", local_rate_oracle),
        ("5 convexity in velocity", convexity),
        ("6 delayed equals plain", delayed_equals_plain),
        ("7 fluid zero cost", fluid_zero_cost),
        ("8 finite-horizon monotonicity", finite_horizon_monotone),
        ("9 simulator exactness", simulator_exactness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  {name} ({secs:.1} s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1} s): {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
