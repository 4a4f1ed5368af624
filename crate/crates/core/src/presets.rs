//! Bundled scenarios: the urban test segment, the five vehicle-count classes
//! and the ride-hailing application.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::FundamentalDiagram;
use crate::problem::base_grid;
use crate::scenario::{Scenario, Signal, StopVehicle, VehicleOrigin, Weights};

pub const CYCLE: f64 = 120.0;
pub const RED: f64 = 48.0;

/// Urban segment with no vehicles: 450 m, two lanes, a 120/48 s signal,
/// 600 s horizon split into 10 s steps.
pub fn urban_base() -> Scenario {
    Scenario {
        fd: FundamentalDiagram::urban(),
        length: 450.0,
        horizon: 600.0,
        n_lanes: 2,
        step: 10.0,
        lattice_dt: 1.0,
        initial_density: vec![0.02],
        demand: vec![0.28],
        supply: vec![0.56],
        signal: Some(Signal { cycle: CYCLE, red: RED, red_start: 0.0 }),
        vehicles: Vec::new(),
        weights: Weights::default(),
    }
}

pub const RIDE_HAIL_ENTRIES: [f64; 10] = [30.0, 60.0, 90.0, 120.0, 250.0, 270.0, 300.0, 330.0, 520.0, 550.0];
pub const RIDE_HAIL_DURATIONS: [f64; 10] = [60.0, 120.0, 90.0, 60.0, 60.0, 120.0, 90.0, 60.0, 90.0, 120.0];
/// Seed of the uncontrolled stop positions of the ride-hailing case.
pub const RIDE_HAIL_BASELINE_SEED: u64 = 2023;

/// Ten ride-hailing stops over 900 s with saturated demand and supply; the
/// signal is red for the first 20 s. Desired positions are left empty.
pub fn ride_hailing() -> Scenario {
    Scenario {
        horizon: 900.0,
        initial_density: vec![0.02],
        demand: vec![0.56],
        supply: vec![0.56],
        signal: Some(Signal { cycle: CYCLE, red: RED, red_start: 20.0 - RED }),
        vehicles: RIDE_HAIL_ENTRIES
            .iter()
            .zip(RIDE_HAIL_DURATIONS)
            .enumerate()
            .map(|(i, (&e, d))| StopVehicle::approaching(i as u32 + 1, e, d))
            .collect(),
        ..urban_base()
    }
}

/// Seeded uniform draw of one grid position per approaching vehicle.
pub fn random_positions(scenario: &Scenario, seed: u64) -> Vec<f64> {
    let grid = base_grid(scenario);
    let mut rng = crate::rng(seed);
    (0..scenario.n_approaching()).map(|_| grid[crate::index(&mut rng, grid.len())]).collect()
}

/// Vehicle-count class of the surrogate experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioClass {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl ScenarioClass {
    pub const ALL: [ScenarioClass; 5] = [Self::C1, Self::C2, Self::C3, Self::C4, Self::C5];

    /// (approaching, on-segment)
    pub fn counts(self) -> (usize, usize) {
        match self {
            Self::C1 => (4, 0),
            Self::C2 => (4, 2),
            Self::C3 => (4, 4),
            Self::C4 => (6, 0),
            Self::C5 => (6, 2),
        }
    }

    pub fn n_sub_scenarios(self) -> usize {
        match self {
            Self::C1 | Self::C4 => 12,
            _ => 13,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["C1", "C2", "C3", "C4", "C5"][self.index()]
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown scenario class {s}")))
    }

    /// Template over the full parameter bounds, used for global training.
    pub fn template(self) -> ScenarioTemplate {
        let (a, o) = self.counts();
        ScenarioTemplate::new(urban_base(), a, o)
    }

    /// Template the fixed sub-scenarios are drawn from: uncongested to
    /// lightly congested starts with enough supply for stops to matter.
    pub fn sub_scenario_template(self) -> ScenarioTemplate {
        let t = self.template();
        ScenarioTemplate { ranges: ParamRanges::moderate(&t.base.fd), ..t }
    }

    /// Fixed seeds of the sub-scenarios of this class.
    pub fn sub_scenario_seeds(self) -> Vec<u64> {
        (0..self.n_sub_scenarios() as u64).map(|j| 10_000 + 100 * self.index() as u64 + j).collect()
    }

    pub fn sub_scenarios(self) -> Vec<Scenario> {
        let t = self.sub_scenario_template();
        self.sub_scenario_seeds().into_iter().map(|s| t.draw(&mut crate::rng(s))).collect()
    }
}

/// Number of equal cells in the initial density profile of template draws.
pub const DENSITY_CELLS: usize = 3;
/// Demand and supply are piecewise constant over this many equal blocks.
pub const FLOW_BLOCKS: usize = 2;
pub const MAX_ENTRY: f64 = 150.0;
pub const DURATION_STEP: f64 = 30.0;
pub const MAX_DURATION: f64 = 180.0;

/// Sampling intervals of the traffic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub density: (f64, f64),
    pub demand: (f64, f64),
    pub supply: (f64, f64),
}

impl ParamRanges {
    pub fn full(fd: &FundamentalDiagram) -> Self {
        ParamRanges { density: (0.0, fd.rho_m()), demand: (0.0, fd.q_m()), supply: (0.0, fd.q_m()) }
    }

    pub fn moderate(fd: &FundamentalDiagram) -> Self {
        ParamRanges {
            density: (0.0, 1.5 * fd.rho_c()),
            demand: (0.5 * fd.q_m(), fd.q_m()),
            supply: (0.75 * fd.q_m(), fd.q_m()),
        }
    }
}

/// Randomized scenario family with a fixed vehicle structure. The varied
/// parameters are encoded as a flat feature vector for global surrogates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub base: Scenario,
    pub n_approaching: usize,
    pub n_on_segment: usize,
    pub ranges: ParamRanges,
}

impl ScenarioTemplate {
    pub fn new(base: Scenario, n_approaching: usize, n_on_segment: usize) -> Self {
        let ranges = ParamRanges::full(&base.fd);
        ScenarioTemplate { base, n_approaching, n_on_segment, ranges }
    }

    fn red_bounds(&self) -> (f64, f64) {
        match &self.base.signal {
            Some(s) => (-s.red, s.green()),
            None => (0.0, 0.0),
        }
    }

    /// Names of the encoded parameters in encoding order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut c: Vec<String> = (1..=DENSITY_CELLS).map(|i| format!("rho0_{i}")).collect();
        c.extend((1..=FLOW_BLOCKS).map(|i| format!("demand_{i}")));
        c.extend((1..=FLOW_BLOCKS).map(|i| format!("supply_{i}")));
        c.push("red_start".into());
        for i in 1..=self.n_approaching {
            c.push(format!("entry_{i}"));
            c.push(format!("duration_{i}"));
        }
        for i in 1..=self.n_on_segment {
            c.push(format!("seg_start_{i}"));
            c.push(format!("seg_stop_{i}"));
            c.push(format!("seg_duration_{i}"));
        }
        c
    }

    /// Inclusive bounds of each encoded parameter.
    pub fn feature_bounds(&self) -> Vec<(f64, f64)> {
        let r = &self.ranges;
        let grid = base_grid(&self.base);
        let (glo, ghi) = (grid[0], grid[grid.len() - 1]);
        let mut b = vec![r.density; DENSITY_CELLS];
        b.extend(vec![r.demand; FLOW_BLOCKS]);
        b.extend(vec![r.supply; FLOW_BLOCKS]);
        b.push(self.red_bounds());
        for _ in 0..self.n_approaching {
            b.push((0.0, MAX_ENTRY));
            b.push((DURATION_STEP, MAX_DURATION));
        }
        for _ in 0..self.n_on_segment {
            b.push((0.0, ghi));
            b.push((glo, ghi));
            b.push((DURATION_STEP, MAX_DURATION));
        }
        b
    }

    fn block_len(&self) -> usize {
        self.base.n_steps().div_ceil(FLOW_BLOCKS).max(1)
    }

    /// Draws one scenario.
    pub fn draw(&self, rng: &mut crate::Rng) -> Scenario {
        let fd = self.base.fd;
        let grid = base_grid(&self.base);
        let dx = fd.v_f() * self.base.lattice_dt;
        let n_dur = (MAX_DURATION / DURATION_STEP) as usize;
        let duration = |rng: &mut crate::Rng| DURATION_STEP * rng.gen_range(1..=n_dur) as f64;

        let r = &self.ranges;
        let initial_density: Vec<f64> = (0..DENSITY_CELLS).map(|_| rng.gen_range(r.density.0..=r.density.1)).collect();
        let blocks = |rng: &mut crate::Rng, (lo, hi): (f64, f64)| -> Vec<f64> {
            let vals: Vec<f64> = (0..FLOW_BLOCKS).map(|_| rng.gen_range(lo..=hi)).collect();
            vals.iter().flat_map(|&v| std::iter::repeat_n(v, self.block_len())).collect()
        };
        let demand = blocks(rng, r.demand);
        let supply = blocks(rng, r.supply);
        let signal = self.base.signal.as_ref().map(|s| {
            let (lo, hi) = self.red_bounds();
            Signal { red_start: rng.gen_range(lo..=hi), ..s.clone() }
        });
        let mut vehicles = Vec::new();
        for i in 0..self.n_approaching {
            let entry = rng.gen_range(0.0..=MAX_ENTRY).round();
            vehicles.push(StopVehicle::approaching(i as u32 + 1, entry, duration(rng)));
        }
        let mut free = grid.clone();
        for j in 0..self.n_on_segment {
            let stop = free.swap_remove(crate::index(rng, free.len()));
            let n_start = (stop / dx).floor() as usize;
            let start = dx * rng.gen_range(0..=n_start) as f64;
            let id = (self.n_approaching + j) as u32 + 1;
            vehicles.push(StopVehicle::on_segment(id, start, stop, duration(rng)));
        }
        Scenario { initial_density, demand, supply, signal, vehicles, ..self.base.clone() }
    }

    /// Feature vector of a scenario produced by [`draw`](Self::draw).
    pub fn encode(&self, s: &Scenario) -> Result<Vec<f64>> {
        let approaching: Vec<&StopVehicle> = s.approaching().collect();
        let on_seg: Vec<&StopVehicle> = s.vehicles.iter().filter(|v| !v.is_approaching()).collect();
        if approaching.len() != self.n_approaching || on_seg.len() != self.n_on_segment {
            return Err(Error::Schema("scenario does not match the template's vehicle counts".into()));
        }
        let w = s.length / DENSITY_CELLS as f64;
        let cw = s.initial_cell_width();
        let mut f: Vec<f64> = (0..DENSITY_CELLS)
            .map(|i| {
                let mid = (i as f64 + 0.5) * w;
                s.initial_density[((mid / cw) as usize).min(s.initial_density.len() - 1)]
            })
            .collect();
        let bl = self.block_len();
        f.extend((0..FLOW_BLOCKS).map(|b| s.demand_at(b * bl)));
        f.extend((0..FLOW_BLOCKS).map(|b| s.supply_at(b * bl)));
        f.push(s.signal.as_ref().map_or(0.0, |sig| sig.red_start));
        for v in approaching {
            f.push(v.entry_time().unwrap_or(0.0));
            f.push(v.stop_duration);
        }
        for v in on_seg {
            let start = match v.origin {
                VehicleOrigin::OnSegment { start_position } => start_position,
                VehicleOrigin::Approaching { .. } => unreachable!(),
            };
            f.push(start);
            f.push(v.stop_position.unwrap_or(0.0));
            f.push(v.stop_duration);
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        urban_base().validate().unwrap();
        let r = ride_hailing();
        r.validate().unwrap();
        assert_eq!(r.n_approaching(), 10);
        let sig = r.signal.unwrap();
        assert!(sig.is_red(0.0) && sig.is_red(19.9) && !sig.is_red(20.1));
    }

    #[test]
    fn class_counts() {
        let total: usize = ScenarioClass::ALL.iter().map(|c| c.n_sub_scenarios()).sum();
        assert_eq!(total, 63);
        for c in ScenarioClass::ALL {
            let (a, o) = c.counts();
            for s in c.sub_scenarios() {
                s.validate().unwrap();
                assert_eq!(s.n_approaching(), a);
                assert_eq!(s.vehicles.len(), a + o);
            }
        }
    }

    #[test]
    fn encode_within_bounds() {
        let t = ScenarioClass::C5.template();
        let bounds = t.feature_bounds();
        assert_eq!(bounds.len(), t.feature_names().len());
        assert!(bounds.contains(&(-48.0, 72.0)));
        for seed in 0..50 {
            let s = t.draw(&mut crate::rng(seed));
            let f = t.encode(&s).unwrap();
            assert_eq!(f.len(), bounds.len());
            for (v, (lo, hi)) in f.iter().zip(&bounds) {
                assert!(*v >= *lo && *v <= *hi, "{v} not in [{lo}, {hi}]");
            }
            for v in s.vehicles.iter() {
                assert_eq!(v.stop_duration % 30.0, 0.0);
            }
        }
    }

    #[test]
    fn random_positions_on_grid() {
        let s = ride_hailing();
        let p = random_positions(&s, RIDE_HAIL_BASELINE_SEED);
        let g = base_grid(&s);
        assert!(p.iter().all(|x| g.contains(x)));
        assert_eq!(p, random_positions(&s, RIDE_HAIL_BASELINE_SEED));
    }
}
