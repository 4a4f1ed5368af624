//! Rolling-horizon controller: detect approaching vehicles within range,
//! re-solve at a fixed interval, freeze each assignment when its vehicle
//! enters the segment.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::simulate;
use crate::io::sig9;
use crate::optimizer::{direct_minimize, surrogate_minimize, GaConfig};
use crate::presets::random_positions;
use crate::problem::{evaluate, ControlSolution};
use crate::sampling::sample_local;
use crate::scenario::{Scenario, StopVehicle, Weights};
use crate::surrogates::{fit, Family, SurrogateConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SolverChoice {
    Direct,
    Surrogate { family: Family, samples: usize },
    /// Always recommends the desired (baseline) positions.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Vehicles are considered once their entry is at most this far ahead (s).
    pub range: f64,
    pub horizon: f64,
    pub interval: f64,
    pub solver: SolverChoice,
    pub ga: GaConfig,
    pub surrogate: SurrogateConfig,
    pub seed: u64,
    /// Seed of the random no-control positions when no desired positions are given.
    pub baseline_seed: u64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            range: 150.0,
            horizon: 600.0,
            interval: 10.0,
            solver: SolverChoice::Direct,
            ga: GaConfig { max_seconds: 600.0, ..GaConfig::default() },
            surrogate: SurrogateConfig::default(),
            seed: 0,
            baseline_seed: crate::presets::RIDE_HAIL_BASELINE_SEED,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let multiple = |a: f64, b: f64| ((a / b) - (a / b).round()).abs() < 1e-9;
        if !(self.interval > 0.0 && multiple(self.interval, scenario.step)) {
            return Err(Error::Config(format!("control interval must be a multiple of the {} s step", scenario.step)));
        }
        if !(self.horizon > 0.0 && multiple(self.horizon, scenario.step)) {
            return Err(Error::Config("prediction horizon must be a positive multiple of the step".into()));
        }
        if self.range < 0.0 {
            return Err(Error::Config("MPC range must be non-negative".into()));
        }
        if let SolverChoice::Surrogate { samples, .. } = self.solver {
            if samples < 2 {
                return Err(Error::Config("surrogate controllers need at least two samples".into()));
            }
        }
        self.ga.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveLog {
    pub t: f64,
    pub vehicles: Vec<u32>,
    pub positions: Vec<f64>,
    /// Objective of the chosen positions over the prediction horizon.
    pub predicted: f64,
    pub wall_seconds: f64,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub t: f64,
    pub pending: BTreeMap<u32, f64>,
    pub committed: BTreeMap<u32, f64>,
    pub logs: Vec<SolveLog>,
}

impl ControllerState {
    pub fn new() -> Self {
        ControllerState { t: 0.0, pending: BTreeMap::new(), committed: BTreeMap::new(), logs: Vec::new() }
    }
}

impl Default for ControllerState {
    fn default() -> Self {
        Self::new()
    }
}

/// No-control positions: the desired positions when given, otherwise a
/// seeded uniform draw from the grid.
pub fn baseline_positions(scenario: &Scenario, seed: u64) -> Vec<f64> {
    if scenario.weights.x_d.len() == scenario.n_approaching() && !scenario.weights.x_d.is_empty() {
        scenario.weights.x_d.clone()
    } else {
        random_positions(scenario, seed)
    }
}

fn approaching_index(scenario: &Scenario) -> BTreeMap<u32, usize> {
    scenario.approaching().enumerate().map(|(i, v)| (v.id, i)).collect()
}

/// Prediction scenario seen at clock `t`: traffic state from the realized
/// simulation of committed vehicles, inputs shifted to the new clock, and
/// `detected` as the approaching vehicles.
pub fn prediction_scenario(
    scenario: &Scenario,
    committed: &BTreeMap<u32, f64>,
    detected: &[&StopVehicle],
    t: f64,
    horizon: f64,
) -> Result<Scenario> {
    let idx = approaching_index(scenario);
    let k0 = (t / scenario.step).round() as usize;
    let n_p = (horizon / scenario.step).round() as usize;
    let mut vehicles: Vec<StopVehicle> = Vec::new();
    let initial_density = if t <= 0.0 {
        scenario.initial_density.clone()
    } else {
        let entered: Vec<&StopVehicle> =
            scenario.approaching().filter(|v| committed.contains_key(&v.id) && v.entry_time().unwrap_or(0.0) < t).collect();
        let mut past = Scenario {
            horizon: k0 as f64 * scenario.step,
            vehicles: scenario.vehicles.iter().filter(|v| !v.is_approaching()).copied().collect(),
            ..scenario.clone()
        };
        past.vehicles.extend(entered.iter().map(|v| **v));
        let positions: Vec<f64> = entered.iter().map(|v| committed[&v.id]).collect();
        let out = simulate(&past, &positions)?;
        for tr in &out.traces {
            let Some(x) = tr.position_at(t) else { continue };
            let v = scenario.vehicles.iter().find(|v| v.id == tr.id).expect("trace of a known vehicle");
            let remaining = match tr.arrival {
                Some(a) if a <= t => a + v.stop_duration - t,
                _ => v.stop_duration,
            };
            if remaining > 0.0 && tr.stop_position > 0.0 && tr.stop_position < scenario.length {
                vehicles.push(StopVehicle::on_segment(tr.id, x.min(tr.stop_position), tr.stop_position, remaining));
            }
        }
        let n_cells = (scenario.length / (scenario.fd.v_f() * scenario.lattice_dt)).round().max(1.0) as usize;
        let w = scenario.length / n_cells as f64;
        (0..n_cells)
            .map(|c| {
                let (a, b) = (c as f64 * w, (c + 1) as f64 * w);
                let m = out.conditions.value_at(t, a) - out.conditions.value_at(t, b);
                (m / w).clamp(0.0, scenario.fd.rho_m())
            })
            .collect()
    };
    let mut weights = Weights { w_sb: scenario.weights.w_sb, ..Weights::default() };
    let w = &scenario.weights;
    for v in detected {
        let i = idx[&v.id];
        let entry = v.entry_time().unwrap_or(t);
        vehicles.push(StopVehicle::approaching(v.id, (entry - t).max(0.0), v.stop_duration));
        for (dst, src) in [(&mut weights.w_d, &w.w_d), (&mut weights.x_d, &w.x_d), (&mut weights.x_us, &w.x_us), (&mut weights.x_ds, &w.x_ds)] {
            if !src.is_empty() {
                dst.push(src[i]);
            }
        }
    }
    Ok(Scenario {
        horizon: n_p as f64 * scenario.step,
        initial_density,
        demand: (0..n_p).map(|k| scenario.demand_at(k0 + k)).collect(),
        supply: (0..n_p).map(|k| scenario.supply_at(k0 + k)).collect(),
        signal: scenario.signal.map(|s| s.shifted(t)),
        vehicles,
        weights,
        ..scenario.clone()
    })
}

fn mix(a: u64, b: u64) -> u64 {
    a.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(b).rotate_left(17) ^ 0xD6E8_FEB8_6659_FD93
}

fn commit_entered(state: &mut ControllerState, scenario: &Scenario, baseline: &[f64], strict: bool) {
    let idx = approaching_index(scenario);
    for v in scenario.approaching() {
        let entry = v.entry_time().unwrap_or(0.0);
        let due = if strict { entry < state.t } else { entry <= state.t };
        if due && !state.committed.contains_key(&v.id) {
            let x = state.pending.remove(&v.id).unwrap_or(baseline[idx[&v.id]]);
            state.committed.insert(v.id, x);
        }
    }
}

/// One control step at `state.t`: freeze vehicles that have entered, solve
/// for detected vehicles, freeze vehicles entering now, advance the clock.
pub fn step(state: &mut ControllerState, scenario: &Scenario, cfg: &MpcConfig, baseline: &[f64]) -> Result<()> {
    let t = state.t;
    commit_entered(state, scenario, baseline, true);
    let detected: Vec<&StopVehicle> = scenario
        .approaching()
        .filter(|v| !state.committed.contains_key(&v.id) && v.entry_time().unwrap_or(0.0) - t <= cfg.range)
        .collect();
    if !detected.is_empty() {
        let start = web_time::Instant::now();
        let pred = prediction_scenario(scenario, &state.committed, &detected, t, cfg.horizon)?;
        let idx = approaching_index(scenario);
        let ids: Vec<u32> = detected.iter().map(|v| v.id).collect();
        let previous: Vec<f64> =
            ids.iter().map(|id| *state.pending.get(id).unwrap_or(&baseline[idx[id]])).collect();
        let ga = GaConfig { seed: mix(cfg.seed, t.to_bits()), ..cfg.ga.clone() };
        let (positions, predicted, timed_out) = match &cfg.solver {
            SolverChoice::Identity => {
                let x: Vec<f64> = ids.iter().map(|id| baseline[idx[id]]).collect();
                let f = evaluate(&x, &pred)?.objective;
                (x, f, false)
            }
            SolverChoice::Direct => {
                let r = direct_minimize(&pred, &ga, Some(&previous))?;
                (r.solution.positions, r.solution.objective, r.ga.timed_out)
            }
            SolverChoice::Surrogate { family, samples } => {
                let grid = crate::problem::candidate_grid(&pred)?;
                let combos = grid.iter().try_fold(1usize, |a, g| a.checked_mul(g.len())).unwrap_or(usize::MAX);
                let n = (*samples).min(combos);
                let data = sample_local(&pred, n, ga.seed)?;
                let model = fit(*family, &data, &cfg.surrogate, ga.seed)?;
                let r = surrogate_minimize(&model, &pred, &[], &ga)?;
                (r.solution.positions, r.solution.objective, r.timed_out)
            }
        };
        let wall = start.elapsed().as_secs_f64();
        for (k, id) in ids.iter().enumerate() {
            let keep = timed_out && state.pending.contains_key(id);
            if !keep {
                state.pending.insert(*id, positions[k]);
            }
        }
        if timed_out {
            log::warn!("solve at t={t} hit the time cap; earlier assignments kept");
        }
        state.logs.push(SolveLog { t, vehicles: ids, positions, predicted, wall_seconds: wall, timed_out });
    }
    commit_entered(state, scenario, baseline, false);
    state.t += cfg.interval;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub baseline: ControlSolution,
    pub controlled: ControlSolution,
    /// Percentage reduction of the objective relative to the baseline.
    pub improvement_pct: f64,
    pub solves: Vec<SolveLog>,
    pub total_solve_seconds: f64,
}

impl RolloutReport {
    pub fn solves_csv(&self) -> String {
        let mut s = String::from("t,vehicles,positions,predicted,wall_seconds,timed_out\n");
        for l in &self.solves {
            let ids: Vec<String> = l.vehicles.iter().map(|v| v.to_string()).collect();
            let xs: Vec<String> = l.positions.iter().map(|&v| sig9(v)).collect();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sig9(l.t),
                ids.join(" "),
                xs.join(" "),
                sig9(l.predicted),
                sig9(l.wall_seconds),
                l.timed_out
            ));
        }
        s
    }
}

pub fn percent_improvement(baseline: f64, controlled: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (baseline - controlled) / baseline.abs()
    }
}

/// Steps the controller over `[0, T]` and scores the committed positions
/// against the no-control baseline with one full simulation each.
pub fn run(scenario: &Scenario, cfg: &MpcConfig) -> Result<RolloutReport> {
    scenario.validate()?;
    cfg.validate(scenario)?;
    let baseline = baseline_positions(scenario, cfg.baseline_seed);
    let mut state = ControllerState::new();
    while state.t <= scenario.horizon + 1e-9 && state.committed.len() < scenario.n_approaching() {
        step(&mut state, scenario, cfg, &baseline)?;
    }
    let idx = approaching_index(scenario);
    let controlled_x: Vec<f64> = scenario
        .approaching()
        .map(|v| *state.committed.get(&v.id).unwrap_or(&baseline[idx[&v.id]]))
        .collect();
    let base = evaluate(&baseline, scenario)?;
    let controlled = evaluate(&controlled_x, scenario)?;
    Ok(RolloutReport {
        improvement_pct: percent_improvement(base.objective, controlled.objective),
        total_solve_seconds: state.logs.iter().map(|l| l.wall_seconds).sum(),
        baseline: base,
        controlled,
        solves: state.logs,
    })
}

/// Detour-weight intervals of the weight sweep; the first has all weights zero.
pub const DETOUR_REGIMES: [(f64, f64); 5] = [(0.0, 0.0), (1e-4, 1e-3), (1e-3, 1e-2), (1e-2, 1e-1), (1e-1, 1.0)];

/// Scenario copies for each detour regime, with the no-control positions as
/// desired positions and weights drawn uniformly from the regime interval.
pub fn weight_regimes(scenario: &Scenario, baseline: &[f64], seed: u64) -> Vec<((f64, f64), Scenario)> {
    let mut rng = crate::rng(seed);
    DETOUR_REGIMES
        .iter()
        .map(|&(lo, hi)| {
            let w_d: Vec<f64> =
                baseline.iter().map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect();
            let mut s = scenario.clone();
            s.weights = Weights { w_sb: scenario.weights.w_sb, w_d, x_d: baseline.to_vec(), x_us: vec![], x_ds: vec![] };
            ((lo, hi), s)
        })
        .collect()
}
