//! Random subcritical networks for the integration suites.
#![allow(dead_code)]

use jackson_ldp::model::{DistributionFamily, Network, NetworkSpec, StationSet, StationSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn mm1() -> Network {
    Network::new(NetworkSpec::mm1(1.0, 2.0)).unwrap()
}

/// The two-station Jackson network with feedback used across the suites.
pub fn jackson2() -> Network {
    Network::new(NetworkSpec::markovian(&[0.5, 0.3], &[2.0, 1.5], vec![vec![0.1, 0.4], vec![0.3, 0.0]])).unwrap()
}

fn family(rng: &mut ChaCha8Rng, rate: f64, markovian: bool) -> DistributionFamily {
    if markovian {
        return DistributionFamily::exponential(rate);
    }
    match rng.random_range(0..3) {
        0 => DistributionFamily::exponential(rate),
        1 => {
            let shape = rng.random_range(1.0..3.0);
            DistributionFamily::gamma(shape, shape * rate)
        }
        _ => {
            // Two phases with the requested mean.
            let w = rng.random_range(0.2..0.8);
            let m_fast = 1.0 / (rate * rng.random_range(1.2..3.0));
            let m_slow = (1.0 / rate - w * m_fast) / (1.0 - w);
            DistributionFamily::hyper_exponential(vec![w, 1.0 - w], vec![1.0 / m_fast, 1.0 / m_slow])
        }
    }
}

/// A random subcritical network with `k` stations; service rates exceed
/// the effective arrival rates by a factor in `[1.3, 3]`.
pub fn random_network(rng: &mut ChaCha8Rng, k: usize, markovian: bool) -> Network {
    let lambda: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.5)).collect();
    let routing: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let total = rng.random_range(0.0..0.8);
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|r| total * r / s).collect()
        })
        .collect();
    let eff = jackson_ldp::model::effective_rates(&lambda, &routing).unwrap();
    let stations = (0..k)
        .map(|i| {
            let mu = eff[i] * rng.random_range(1.3..3.0);
            StationSpec::new(family(rng, lambda[i], markovian), family(rng, mu, markovian))
        })
        .collect();
    Network::new(NetworkSpec::new(stations, routing)).unwrap()
}

pub fn random_face(rng: &mut ChaCha8Rng, k: usize) -> StationSet {
    StationSet::from_bits(rng.random_range(0..(1u64 << k)))
}

/// A point in the relative interior of face `J`.
pub fn point_on(rng: &mut ChaCha8Rng, face: StationSet, k: usize) -> Vec<f64> {
    (0..k).map(|i| if face.contains(i) { 0.0 } else { rng.random_range(0.1..2.0) }).collect()
}

/// A velocity in `[-1.5, 1.5]^K`.
pub fn velocity(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(-1.5..1.5)).collect()
}
