//! Stop-position control problem: admissible positions and the
//! simulation-backed objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::simulate;
use crate::io::sig9;
use crate::scenario::Scenario;

const TOL: f64 = 1e-9;

/// Open interval of positions that keep the stop away from both boundaries
/// for a full objective step.
pub fn stability_bounds(scenario: &Scenario) -> (f64, f64) {
    (scenario.fd.w_c() * scenario.step, scenario.length - scenario.fd.v_f() * scenario.step)
}

/// Detour box of approaching vehicle `i`, or `None` when unbounded.
pub fn detour_box(scenario: &Scenario, i: usize) -> Option<(f64, f64)> {
    let w = &scenario.weights;
    if w.x_us.is_empty() && w.x_ds.is_empty() {
        return None;
    }
    let x_d = w.x_d[i];
    let lo = w.x_us.get(i).map_or(f64::NEG_INFINITY, |u| x_d - u);
    let hi = w.x_ds.get(i).map_or(f64::INFINITY, |d| x_d + d);
    Some((lo, hi))
}

/// Lattice positions shared by all vehicles, before any detour box.
pub fn base_grid(scenario: &Scenario) -> Vec<f64> {
    let dx = scenario.fd.v_f() * scenario.lattice_dt;
    let (lo, hi) = stability_bounds(scenario);
    let first = (lo / dx).floor() as i64;
    let last = (hi / dx).ceil() as i64;
    (first.max(1)..=last)
        .map(|m| m as f64 * dx)
        .filter(|&x| x > lo + TOL && x < hi - TOL)
        .collect()
}

/// Ascending admissible positions for each approaching vehicle.
pub fn candidate_grid(scenario: &Scenario) -> Result<Vec<Vec<f64>>> {
    scenario.validate()?;
    let base = base_grid(scenario);
    if base.is_empty() {
        return Err(Error::Config("no lattice position lies strictly inside the stability interval".into()));
    }
    (0..scenario.n_approaching())
        .map(|i| {
            let g: Vec<f64> = match detour_box(scenario, i) {
                None => base.clone(),
                Some((lo, hi)) => base.iter().copied().filter(|&x| x >= lo - TOL && x <= hi + TOL).collect(),
            };
            if g.is_empty() {
                Err(Error::Config(format!("vehicle {i} has no admissible stop position")))
            } else {
                Ok(g)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSolution {
    pub positions: Vec<f64>,
    pub objective: f64,
    pub outflow_sum: f64,
    /// Unweighted blocked demand in vehicles.
    pub spillback_sum: f64,
    /// `w_sb * spillback_sum`.
    pub spillback_penalty: f64,
    pub detour_penalty: f64,
}

impl ControlSolution {
    pub fn csv_header(n: usize) -> String {
        let mut cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        cols.extend(["f", "outflow_sum", "spillback_penalty", "detour_penalty"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.positions.iter().map(|&x| sig9(x)).collect();
        for v in [self.objective, self.outflow_sum, self.spillback_penalty, self.detour_penalty] {
            cols.push(sig9(v));
        }
        cols.join(",")
    }
}

/// Checks the stability interval and the detour box.
pub fn check_feasible(positions: &[f64], scenario: &Scenario) -> Result<()> {
    let n = scenario.n_approaching();
    if positions.len() != n {
        return Err(Error::Schema(format!("{} positions given for {n} approaching vehicles", positions.len())));
    }
    let (lo, hi) = stability_bounds(scenario);
    for (i, &x) in positions.iter().enumerate() {
        if !(x > lo && x < hi) {
            return Err(Error::Infeasible(format!(
                "stability interval: vehicle {i} at {x} outside ({lo}, {hi})"
            )));
        }
        if let Some((a, b)) = detour_box(scenario, i) {
            if x < a - TOL || x > b + TOL {
                return Err(Error::Infeasible(format!("detour box: vehicle {i} at {x} outside [{a}, {b}]")));
            }
        }
    }
    Ok(())
}

pub fn detour_penalty(positions: &[f64], scenario: &Scenario) -> f64 {
    let w = &scenario.weights;
    w.w_d.iter().zip(&w.x_d).zip(positions).fold(0.0, |acc, ((wd, xd), x)| acc + wd * (xd - x).abs())
}

/// Simulates the horizon with the given stop positions and scores it.
pub fn evaluate(positions: &[f64], scenario: &Scenario) -> Result<ControlSolution> {
    check_feasible(positions, scenario)?;
    let out = simulate(scenario, positions)?;
    let outflow_sum: f64 = out.q_out.iter().sum();
    let spillback_sum: f64 = out
        .q_in
        .iter()
        .enumerate()
        .map(|(k, q)| scenario.demand_at(k) * scenario.step - q)
        .sum();
    let spillback_penalty = scenario.weights.w_sb * spillback_sum;
    let detour = detour_penalty(positions, scenario);
    Ok(ControlSolution {
        positions: positions.to_vec(),
        objective: -outflow_sum + spillback_penalty + detour,
        outflow_sum,
        spillback_sum,
        spillback_penalty,
        detour_penalty: detour,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Signal, StopVehicle, Weights};
    use crate::FundamentalDiagram;

    fn base() -> Scenario {
        Scenario {
            fd: FundamentalDiagram::urban(),
            length: 450.0,
            horizon: 300.0,
            n_lanes: 2,
            step: 10.0,
            lattice_dt: 1.0,
            initial_density: vec![0.02],
            demand: vec![0.3],
            supply: vec![0.56],
            signal: Some(Signal { cycle: 120.0, red: 48.0, red_start: -28.0 }),
            vehicles: vec![StopVehicle::approaching(1, 30.0, 60.0), StopVehicle::approaching(2, 50.0, 90.0)],
            weights: Weights::default(),
        }
    }

    #[test]
    fn grid_without_box() {
        let g = candidate_grid(&base()).unwrap();
        let expect: Vec<f64> = (3..=22).map(|m| m as f64 * 14.0).collect();
        assert_eq!(g[0], expect);
        assert_eq!(g[0].len(), 20);
        assert_eq!(g[1], g[0]);
    }

    #[test]
    fn grid_with_box() {
        let mut s = base();
        s.weights.x_d = vec![140.0, 140.0];
        s.weights.x_us = vec![28.0, 0.0];
        s.weights.x_ds = vec![28.0, 0.0];
        let g = candidate_grid(&s).unwrap();
        assert_eq!(g[0], vec![112.0, 126.0, 140.0, 154.0, 168.0]);
        assert_eq!(g[1], vec![140.0]);
        s.weights.x_d = vec![140.0, 141.0];
        assert!(matches!(candidate_grid(&s), Err(Error::Config(_))));
    }

    #[test]
    fn zero_demand_empty_segment_scores_zero() {
        let mut s = base();
        s.initial_density = vec![0.0];
        s.demand = vec![0.0];
        let sol = evaluate(&[140.0, 200.0], &s).unwrap();
        assert!(sol.objective.abs() < 1e-9, "{sol:?}");
    }

    #[test]
    fn decomposition_and_detour() {
        let mut s = base();
        s.weights.x_d = vec![140.0, 200.0];
        s.weights.w_d = vec![1.0, 2.0];
        let at_desired = evaluate(&[140.0, 200.0], &s).unwrap();
        assert_eq!(at_desired.detour_penalty, 0.0);
        let sol = evaluate(&[112.0, 224.0], &s).unwrap();
        assert!((sol.detour_penalty - (28.0 + 48.0)).abs() < 1e-12);
        let rebuilt = -sol.outflow_sum + s.weights.w_sb * sol.spillback_sum + sol.detour_penalty;
        assert!((rebuilt - sol.objective).abs() < 1e-9);
        assert_eq!(sol, evaluate(&[112.0, 224.0], &s).unwrap());
    }

    #[test]
    fn infeasible_positions_named() {
        let s = base();
        match evaluate(&[20.0, 140.0], &s) {
            Err(Error::Infeasible(m)) => assert!(m.contains("stability")),
            other => panic!("{other:?}"),
        }
        let mut s = base();
        s.weights.x_d = vec![140.0, 140.0];
        s.weights.x_us = vec![14.0, 14.0];
        s.weights.x_ds = vec![14.0, 14.0];
        match evaluate(&[140.0, 168.0], &s) {
            Err(Error::Infeasible(m)) => assert!(m.contains("detour")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blocked_demand_is_nonnegative_per_step() {
        let mut s = base();
        s.demand = vec![0.56];
        s.initial_density = vec![0.2];
        let out = simulate(&s, &[42.0, 56.0]).unwrap();
        for (k, q) in out.q_in.iter().enumerate() {
            assert!(s.demand_at(k) * s.step - q >= -1e-9);
        }
    }
}
