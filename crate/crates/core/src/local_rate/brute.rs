//! Exhaustive primal search for one or two stations.
//!
//! The arrival rates are eliminated through `a = y + d − rᵀd`. Departure
//! rates are searched by nested one-dimensional minimization (a coarse grid,
//! then golden section inside the bracketing cells); for fixed departures the
//! routing rows are found by cyclic coordinate descent, each coordinate again
//! by grid and golden section. Partial minimization keeps every nested
//! function convex, so the grid stage always brackets the minimizer.

use std::cell::RefCell;

use crate::cramer::{psi_arrival, psi_routing, psi_service};

use super::{GatingMode, LocalRateError, LocalRateProblem};

const COARSE_CELLS: usize = 24;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Minimizes a convex extended-real function on `[lo, hi]` to within `tol`
/// in the argument. Returns `(argmin, value)`.
fn minimize_1d(f: &mut dyn FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    if hi - lo <= tol {
        let x = 0.5 * (lo + hi);
        return (x, f(x));
    }
    let h = (hi - lo) / COARSE_CELLS as f64;
    let mut best = (lo, f(lo));
    for i in 1..=COARSE_CELLS {
        let x = if i == COARSE_CELLS { hi } else { lo + h * i as f64 };
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    if !best.1.is_finite() {
        return best;
    }
    let center = best.0;
    let (mut a, mut b) = ((center - h).max(lo), (center + h).min(hi));
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        // With both probes infinite the finite minimum lies toward the grid
        // point that was finite.
        let keep_left = if f1.is_infinite() && f2.is_infinite() { center < x1 } else { f1 <= f2 };
        if keep_left {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Free coordinates of one routing row.
#[derive(Clone, Debug)]
enum RowShape {
    /// Entries in `support` vary subject to `Σ r ≤ 1`.
    WithExit { support: Vec<usize> },
    /// No exit: the row sums to one. Holds one or two entries.
    Closed { support: Vec<usize> },
}

struct Search<'a> {
    problem: &'a LocalRateProblem<'a>,
    k: usize,
    rows: Vec<RowShape>,
    tol: f64,
    // Last minimizing rows. Neighbouring departure vectors have nearby
    // minimizers, so descent restarted from here takes few sweeps.
    warm: RefCell<Option<Vec<Vec<f64>>>>,
}

impl Search<'_> {
    fn objective(&self, d: &[f64], r: &[Vec<f64>]) -> f64 {
        let net = self.problem.net;
        let y = &self.problem.y;
        let mut total = 0.0;
        for s in 0..self.k {
            let inflow: f64 = (0..self.k).map(|l| r[l][s] * d[l]).sum();
            let a = y[s] + d[s] - inflow;
            if a < -1e-12 * (1.0 + d[s].abs() + y[s].abs()) {
                return f64::INFINITY;
            }
            let a = a.max(0.0);
            if self.problem.arrival_on(s) {
                total += psi_arrival(net.arrival(s), a).value.to_f64();
            }
            if self.problem.service_on(s) {
                if !(self.problem.face.contains(s) && d[s] <= net.mu()[s]) {
                    total += psi_service(net.service(s), d[s]).value.to_f64();
                }
                if d[s] > 0.0 {
                    total += d[s] * psi_routing(&net.routing()[s], &r[s]).to_f64();
                }
            }
        }
        total
    }

    fn initial_rows(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|shape| {
                let mut row = vec![0.0; self.k];
                if let RowShape::Closed { support } = shape {
                    for &l in support {
                        row[l] = 1.0 / support.len() as f64;
                    }
                }
                row
            })
            .collect()
    }

    /// `min_r` of the objective at departures `d`, by coordinate descent.
    fn best_routing(&self, d: &[f64]) -> f64 {
        let mut r = self.initial_rows();
        let mut value = self.objective(d, &r);
        if let Some(w) = self.warm.borrow().as_ref() {
            let v = self.objective(d, w);
            if v <= value {
                r = w.clone();
                value = v;
            }
        }
        for _ in 0..200 {
            let before = value;
            let mut moved: f64 = 0.0;
            for s in 0..self.k {
                if d[s] == 0.0 {
                    continue;
                }
                match &self.rows[s] {
                    RowShape::WithExit { support } => {
                        for &l in support {
                            let others: f64 = support.iter().filter(|&&m| m != l).map(|&m| r[s][m]).sum();
                            let hi = (1.0 - others).max(0.0);
                            let old = r[s][l];
                            let mut f = |x: f64| {
                                r[s][l] = x;
                                let v = self.objective(d, &r);
                                r[s][l] = old;
                                v
                            };
                            let (x, v) = minimize_1d(&mut f, 0.0, hi, self.tol);
                            if v <= value {
                                moved = moved.max((x - old).abs());
                                r[s][l] = x;
                                value = v;
                            }
                        }
                    }
                    RowShape::Closed { support } if support.len() == 2 => {
                        let (i, j) = (support[0], support[1]);
                        let old = r[s][i];
                        let mut f = |x: f64| {
                            r[s][i] = x;
                            r[s][j] = 1.0 - x;
                            let v = self.objective(d, &r);
                            r[s][i] = old;
                            r[s][j] = 1.0 - old;
                            v
                        };
                        let (x, v) = minimize_1d(&mut f, 0.0, 1.0, self.tol);
                        if v <= value {
                            moved = moved.max((x - old).abs());
                            r[s][i] = x;
                            r[s][j] = 1.0 - x;
                            value = v;
                        }
                    }
                    RowShape::Closed { .. } => {}
                }
            }
            if moved <= self.tol && before - value <= 1e-13 * (1.0 + value.abs()) {
                break;
            }
        }
        if value.is_finite() {
            *self.warm.borrow_mut() = Some(r);
        }
        value
    }
}

/// Oracle value of the local rate program for at most two stations, to
/// within the accuracy implied by `grid_step` on every search coordinate.
pub fn brute_force_lj(problem: &LocalRateProblem, grid_step: f64) -> Result<f64, LocalRateError> {
    problem.check()?;
    let net = problem.net;
    let k = net.k();
    if k > 2 {
        return Err(LocalRateError::Unsupported(format!("grid search handles at most 2 stations, got {k}")));
    }
    if problem.gating.is_some() && problem.mode == GatingMode::Strict {
        return Err(LocalRateError::Unsupported("grid search implements the literal gating only".into()));
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(LocalRateError::InvalidInput(format!("grid step must be positive, got {grid_step}")));
    }
    let rows = (0..k)
        .map(|s| {
            // Gated-off routing is free, so every destination is available.
            let free = !problem.service_on(s);
            let support: Vec<usize> = (0..k).filter(|&l| free || net.p(s, l) > 0.0).collect();
            if free || net.exit_prob(s) > 0.0 {
                RowShape::WithExit { support }
            } else {
                RowShape::Closed { support }
            }
        })
        .collect();
    let search = Search { problem, k, rows, tol: grid_step, warm: RefCell::new(None) };

    let max_mu = net.mu().iter().cloned().fold(0.0, f64::max);
    let max_eff = net.effective_rates().iter().cloned().fold(0.0, f64::max);
    let push: f64 = problem.y.iter().map(|v| v.abs()).sum();
    let d_max = 4.0 * (max_mu + max_eff + push) / (1.0 - net.spectral_radius());

    let value = match k {
        1 => minimize_1d(&mut |d0| search.best_routing(&[d0]), 0.0, d_max, grid_step).1,
        _ => {
            let mut outer = |d0: f64| minimize_1d(&mut |d1| search.best_routing(&[d0, d1]), 0.0, d_max, grid_step).1;
            minimize_1d(&mut outer, 0.0, d_max, grid_step).1
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Network, NetworkSpec, StationSet};

    #[test]
    fn golden_search_finds_parabola_minimum() {
        let (x, v) = minimize_1d(&mut |x| (x - 0.3).powi(2) + 1.0, 0.0, 2.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn golden_search_respects_infinite_walls() {
        let mut f = |x: f64| if x < 0.7 { f64::INFINITY } else { x };
        let (x, v) = minimize_1d(&mut f, 0.0, 1.0, 1e-9);
        assert!((x - 0.7).abs() < 1e-8 && (v - 0.7).abs() < 1e-8);
    }

    #[test]
    fn mm1_interior_matches_closed_form() {
        let net = Network::new(NetworkSpec::mm1(1.0, 2.0)).unwrap();
        let v = brute_force_lj(&LocalRateProblem::new(&net, StationSet::empty(), vec![0.0]), 1e-6).unwrap();
        assert!((v - (2f64.sqrt() - 1.0).powi(2)).abs() < 1e-6, "{v}");
    }

    #[test]
    fn rejects_three_stations() {
        let net = Network::new(NetworkSpec::markovian(&[0.1; 3], &[1.0; 3], vec![vec![0.0; 3]; 3])).unwrap();
        let problem = LocalRateProblem::new(&net, StationSet::empty(), vec![0.0; 3]);
        assert!(matches!(brute_force_lj(&problem, 1e-3), Err(LocalRateError::Unsupported(_))));
    }
}
