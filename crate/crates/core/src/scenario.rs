//! Scenario description: segment geometry, traffic inputs, signal timing,
//! stopping vehicles and objective weights. All units are SI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::FundamentalDiagram;

const TOL: f64 = 1e-9;

/// Fixed-time signal at the downstream end. Red phases start at
/// `red_start + m * cycle` and last `red` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signal {
    pub cycle: f64,
    pub red: f64,
    pub red_start: f64,
}

impl Signal {
    pub fn green(&self) -> f64 {
        self.cycle - self.red
    }

    pub fn is_red(&self, t: f64) -> bool {
        let phase = (t - self.red_start).rem_euclid(self.cycle);
        phase < self.red
    }

    /// Phase switch times strictly inside `(a, b)`.
    pub fn switches_between(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let first = ((a - self.red_start) / self.cycle).floor() - 1.0;
        let mut m = first;
        loop {
            let base = self.red_start + m * self.cycle;
            if base > b {
                break;
            }
            for s in [base, base + self.red] {
                if s > a + TOL && s < b - TOL {
                    out.push(s);
                }
            }
            m += 1.0;
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// Same timing seen from a clock that starts at `t0`, with the offset
    /// folded into `[-red, green]`.
    pub fn shifted(&self, t0: f64) -> Signal {
        let mut start = (self.red_start - t0).rem_euclid(self.cycle);
        if start > self.green() {
            start -= self.cycle;
        }
        Signal { red_start: start, ..*self }
    }
}

/// Where a stopping vehicle is at the start of the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VehicleOrigin {
    /// Enters the segment at `x = 0` at `entry_time`.
    Approaching { entry_time: f64 },
    /// Already on the segment at `start_position` when the horizon starts.
    OnSegment { start_position: f64 },
}

/// A vehicle that stops once, blocking one lane for `stop_duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VehicleRecord", into = "VehicleRecord")]
pub struct StopVehicle {
    pub id: u32,
    pub origin: VehicleOrigin,
    /// Fixed stop position for on-segment vehicles; approaching vehicles
    /// receive theirs from the decision vector.
    pub stop_position: Option<f64>,
    pub stop_duration: f64,
}

impl StopVehicle {
    pub fn approaching(id: u32, entry_time: f64, stop_duration: f64) -> Self {
        StopVehicle {
            id,
            origin: VehicleOrigin::Approaching { entry_time },
            stop_position: None,
            stop_duration,
        }
    }

    pub fn on_segment(id: u32, start_position: f64, stop_position: f64, stop_duration: f64) -> Self {
        StopVehicle {
            id,
            origin: VehicleOrigin::OnSegment { start_position },
            stop_position: Some(stop_position),
            stop_duration,
        }
    }

    pub fn entry_time(&self) -> Option<f64> {
        match self.origin {
            VehicleOrigin::Approaching { entry_time } => Some(entry_time),
            VehicleOrigin::OnSegment { .. } => None,
        }
    }

    pub fn is_approaching(&self) -> bool {
        matches!(self.origin, VehicleOrigin::Approaching { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleRecord {
    id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entry_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_position: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stop_position: Option<f64>,
    stop_duration: f64,
}

impl TryFrom<VehicleRecord> for StopVehicle {
    type Error = Error;

    fn try_from(r: VehicleRecord) -> Result<Self> {
        let origin = match (r.entry_time, r.start_position) {
            (Some(entry_time), None) => VehicleOrigin::Approaching { entry_time },
            (None, Some(start_position)) => {
                if r.stop_position.is_none() {
                    return Err(Error::Config(format!(
                        "on-segment vehicle {} needs a stop_position",
                        r.id
                    )));
                }
                VehicleOrigin::OnSegment { start_position }
            }
            _ => {
                return Err(Error::Config(format!(
                    "vehicle {} needs exactly one of entry_time or start_position",
                    r.id
                )))
            }
        };
        Ok(StopVehicle {
            id: r.id,
            origin,
            stop_position: r.stop_position,
            stop_duration: r.stop_duration,
        })
    }
}

impl From<StopVehicle> for VehicleRecord {
    fn from(v: StopVehicle) -> Self {
        let (entry_time, start_position) = match v.origin {
            VehicleOrigin::Approaching { entry_time } => (Some(entry_time), None),
            VehicleOrigin::OnSegment { start_position } => (None, Some(start_position)),
        };
        VehicleRecord {
            id: v.id,
            entry_time,
            start_position,
            stop_position: v.stop_position,
            stop_duration: v.stop_duration,
        }
    }
}

/// Objective weights and detour box, one entry per approaching vehicle in
/// scenario order. Empty vectors mean zero weight and no box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    #[serde(default = "default_w_sb")]
    pub w_sb: f64,
    #[serde(default)]
    pub w_d: Vec<f64>,
    #[serde(default)]
    pub x_d: Vec<f64>,
    #[serde(default)]
    pub x_us: Vec<f64>,
    #[serde(default)]
    pub x_ds: Vec<f64>,
}

fn default_w_sb() -> f64 {
    0.1
}

impl Default for Weights {
    fn default() -> Self {
        Weights { w_sb: default_w_sb(), w_d: Vec::new(), x_d: Vec::new(), x_us: Vec::new(), x_ds: Vec::new() }
    }
}

fn default_lanes() -> u32 {
    2
}

fn default_step() -> f64 {
    10.0
}

fn default_lattice_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub fd: FundamentalDiagram,
    /// Segment length `L` in metres.
    pub length: f64,
    /// Simulated duration `T` in seconds; a multiple of `step`.
    pub horizon: f64,
    #[serde(default = "default_lanes")]
    pub n_lanes: u32,
    /// Duration of boundary intervals and objective time steps.
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_lattice_dt")]
    pub lattice_dt: f64,
    /// Densities of equal-width cells tiling `[0, L]`.
    pub initial_density: Vec<f64>,
    /// Upstream demand per step interval (veh/s); the last value is held.
    pub demand: Vec<f64>,
    /// Downstream supply per step interval (veh/s) while the signal is green.
    pub supply: Vec<f64>,
    #[serde(default)]
    pub signal: Option<Signal>,
    #[serde(default)]
    pub vehicles: Vec<StopVehicle>,
    #[serde(default)]
    pub weights: Weights,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let s: Scenario = serde_json::from_str(&text)?;
        s.validate()?;
        s.check_distinct_stops()?;
        Ok(s)
    }

    /// Rejects on-segment vehicles sharing a stop position. Applied to
    /// scenario files; scenarios assembled at run time may overlap.
    pub fn check_distinct_stops(&self) -> Result<()> {
        let fixed: Vec<f64> = self
            .vehicles
            .iter()
            .filter(|v| !v.is_approaching())
            .filter_map(|v| v.stop_position)
            .collect();
        for (i, a) in fixed.iter().enumerate() {
            if fixed[i + 1..].iter().any(|b| (a - b).abs() < TOL) {
                return Err(Error::Config(format!("two on-segment vehicles share the stop position {a}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Number of objective steps `N_p` in the horizon.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    pub fn demand_at(&self, k: usize) -> f64 {
        hold_last(&self.demand, k)
    }

    pub fn supply_at(&self, k: usize) -> f64 {
        hold_last(&self.supply, k)
    }

    /// Passing rate next to a stopped vehicle.
    pub fn passing_rate(&self) -> f64 {
        self.fd.q_m() * (self.n_lanes.saturating_sub(1)) as f64 / self.n_lanes as f64
    }

    pub fn approaching(&self) -> impl Iterator<Item = &StopVehicle> {
        self.vehicles.iter().filter(|v| v.is_approaching())
    }

    pub fn n_approaching(&self) -> usize {
        self.approaching().count()
    }

    pub fn initial_cell_width(&self) -> f64 {
        self.length / self.initial_density.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let (q_m, rho_m) = (self.fd.q_m(), self.fd.rho_m());
        if !(self.length > 0.0 && self.horizon >= 0.0 && self.step > 0.0 && self.lattice_dt > 0.0) {
            return cfg("length, horizon, step and lattice_dt must be positive".into());
        }
        if self.n_lanes == 0 {
            return cfg("n_lanes must be at least 1".into());
        }
        let n = self.horizon / self.step;
        if (n - n.round()).abs() > 1e-9 {
            return cfg(format!("horizon {} is not a multiple of step {}", self.horizon, self.step));
        }
        let r = self.step / self.lattice_dt;
        if (r - r.round()).abs() > 1e-9 {
            return cfg(format!("step {} is not a multiple of lattice_dt {}", self.step, self.lattice_dt));
        }
        if self.step > self.length / self.fd.v_f() + TOL {
            return cfg(format!(
                "step {} violates the CFL bound L / v_f = {}",
                self.step,
                self.length / self.fd.v_f()
            ));
        }
        if self.initial_density.is_empty() {
            return cfg("initial_density must have at least one cell".into());
        }
        if let Some(bad) = self.initial_density.iter().find(|r| !(0.0..=rho_m).contains(*r)) {
            return cfg(format!("initial density {bad} outside [0, {rho_m}]"));
        }
        for (name, v) in [("demand", &self.demand), ("supply", &self.supply)] {
            if let Some(bad) = v.iter().find(|q| !(0.0..=q_m + TOL).contains(*q)) {
                return cfg(format!("{name} {bad} outside [0, {q_m}]"));
            }
        }
        if let Some(sig) = &self.signal {
            if !(sig.cycle > 0.0 && (0.0..=sig.cycle).contains(&sig.red)) {
                return cfg(format!("invalid signal timing {sig:?}"));
            }
            if !(-sig.red - TOL..=sig.green() + TOL).contains(&sig.red_start) {
                return cfg(format!(
                    "red_start {} outside [-{}, {}]",
                    sig.red_start,
                    sig.red,
                    sig.green()
                ));
            }
        }
        let mut ids: Vec<u32> = self.vehicles.iter().map(|v| v.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return cfg("vehicle ids must be unique".into());
        }
        for v in &self.vehicles {
            if !(v.stop_duration > 0.0 && v.stop_duration.is_finite()) {
                return cfg(format!("vehicle {} has non-positive stop duration", v.id));
            }
            match v.origin {
                VehicleOrigin::Approaching { entry_time } => {
                    if !(entry_time >= 0.0 && entry_time.is_finite()) {
                        return cfg(format!("vehicle {} has negative entry time", v.id));
                    }
                }
                VehicleOrigin::OnSegment { start_position } => {
                    let stop = v.stop_position.unwrap_or(f64::NAN);
                    if !(0.0..=stop).contains(&start_position) {
                        return cfg(format!(
                            "on-segment vehicle {} must start at or upstream of its stop",
                            v.id
                        ));
                    }
                }
            }
            if let Some(x) = v.stop_position {
                if !(x > 0.0 && x < self.length) {
                    return cfg(format!("vehicle {} stops outside (0, L)", v.id));
                }
            }
        }
        let na = self.n_approaching();
        let w = &self.weights;
        for (name, v) in [("w_d", &w.w_d), ("x_d", &w.x_d), ("x_us", &w.x_us), ("x_ds", &w.x_ds)] {
            if !v.is_empty() && v.len() != na {
                return cfg(format!("weights.{name} has {} entries for {na} approaching vehicles", v.len()));
            }
        }
        if !w.w_d.is_empty() && w.x_d.is_empty() {
            return cfg("weights.w_d requires weights.x_d".into());
        }
        if (!w.x_us.is_empty() || !w.x_ds.is_empty()) && w.x_d.is_empty() {
            return cfg("detour box requires weights.x_d".into());
        }
        if w.w_sb < 0.0 || w.w_d.iter().any(|&x| x < 0.0) {
            return cfg("weights must be non-negative".into());
        }
        Ok(())
    }
}

fn hold_last(v: &[f64], k: usize) -> f64 {
    match v.len() {
        0 => 0.0,
        n => v[k.min(n - 1)],
    }
}
