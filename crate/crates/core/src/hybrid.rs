//! Hybrid simulation: the main flow is the Lax-Hopf surface, stopping
//! vehicles are tracked individually and turned into stationary bottlenecks.
//!
//! The loop is a single chronological sweep. Boundary intervals, vehicle
//! integration steps, stop arrivals and lattice rows are processed as events
//! in time order, so every condition is built from the surface implied by the
//! conditions that started before it. This gives the same surface as
//! re-solving after each placed vehicle, because no condition affects
//! points earlier than its own start.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd::FundamentalDiagram;
use crate::laxhopf::{ConditionSet, CountSurface, Grid, ValueCondition};
use crate::scenario::{Scenario, StopVehicle, VehicleOrigin};

/// Outcome of tracking one vehicle to its stop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleTrace {
    pub id: u32,
    pub stop_position: f64,
    /// Time the vehicle reached its stop; `None` if it never did within the horizon.
    pub arrival: Option<f64>,
    pub departure: Option<f64>,
    /// `(t, x)` samples of the approach, starting at entry.
    pub path: Vec<(f64, f64)>,
}

impl VehicleTrace {
    /// Position at time `t`, or `None` before entry or after departure.
    pub fn position_at(&self, t: f64) -> Option<f64> {
        let &(t0, _) = self.path.first()?;
        if t < t0 {
            return None;
        }
        if let Some(a) = self.arrival {
            if t >= a {
                return match self.departure {
                    Some(d) if t >= d => None,
                    _ => Some(self.stop_position),
                };
            }
        }
        let k = self.path.partition_point(|&(s, _)| s <= t);
        let (ta, xa) = self.path[k - 1];
        match self.path.get(k) {
            Some(&(tb, xb)) => Some(xa + (xb - xa) * (t - ta) / (tb - ta)),
            None => Some(xa),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub surface: CountSurface,
    /// Vehicles entering per objective step.
    pub q_in: Vec<f64>,
    /// Vehicles leaving per objective step.
    pub q_out: Vec<f64>,
    pub conditions: ConditionSet,
    pub traces: Vec<VehicleTrace>,
    pub warnings: Vec<String>,
}

impl SimOutput {
    pub fn unreached(&self) -> impl Iterator<Item = u32> + '_ {
        self.traces.iter().filter(|t| t.arrival.is_none()).map(|t| t.id)
    }
}

/// Forward-Euler arrival time of a vehicle driving through a fixed surface.
///
/// Returns `None` when the target is not reached by `horizon`.
pub fn trajectory(
    set: &ConditionSet,
    xs: &[f64],
    dt: f64,
    entry_time: f64,
    start: f64,
    target: f64,
    horizon: f64,
) -> Option<f64> {
    let fd = *set.fd();
    let (mut t, mut x) = (entry_time, start);
    if x >= target {
        return Some(t);
    }
    while t < horizon {
        let v = fd.speed_clamped(set.density_at(t, x, xs));
        let next = x + v * dt;
        if next >= target {
            return Some(t + dt * (target - x) / (next - x));
        }
        x = next;
        t += dt;
    }
    None
}

/// Internal condition for a vehicle stopping at `position` from `arrival`.
pub fn stop_condition(
    index: usize,
    position: f64,
    arrival: f64,
    duration: f64,
    set: &ConditionSet,
    fd: &FundamentalDiagram,
    n_lanes: u32,
) -> ValueCondition {
    let rate = fd.q_m() * n_lanes.saturating_sub(1) as f64 / n_lanes as f64;
    ValueCondition::Internal {
        index,
        position,
        t_start: arrival,
        t_end: arrival + duration,
        anchor: set.value_at(arrival, position),
        rate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Boundary,
    Arrival,
    Renew,
    Step,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: Kind,
    key: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.key.cmp(&self.key))
    }
}

enum Boundary {
    Up { index: usize, t_start: f64, t_end: f64, demand: f64 },
    Down { index: usize, t_start: f64, t_end: f64, flow: f64 },
}

struct Tracked {
    vehicle: StopVehicle,
    internal: usize,
    target: f64,
    x: f64,
    trace: VehicleTrace,
}

/// Lattice sub-intervals of `[a, b]`.
fn lattice_cuts(a: f64, b: f64, dt: f64) -> Vec<f64> {
    let mut cuts = vec![a];
    let mut k = (a / dt).floor() as i64 + 1;
    while (k as f64) * dt < b - 1e-9 {
        cuts.push(k as f64 * dt);
        k += 1;
    }
    cuts.push(b);
    cuts
}

/// Downstream intervals: lattice steps split at signal switches.
fn downstream_plan(s: &Scenario) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for k in 0..s.n_steps() {
        let (a, b) = (k as f64 * s.step, (k + 1) as f64 * s.step);
        let supply = s.supply_at(k);
        let mut cuts = lattice_cuts(a, b, s.lattice_dt);
        if let Some(sig) = &s.signal {
            cuts.extend(sig.switches_between(a, b));
            cuts.sort_by(f64::total_cmp);
            cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
        }
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let red = s.signal.as_ref().is_some_and(|sig| sig.is_red(mid));
            out.push((w[0], w[1], if red { 0.0 } else { supply }));
        }
    }
    out
}

/// Runs the hybrid simulation with `positions` assigned to the approaching
/// vehicles in scenario order.
pub fn simulate(scenario: &Scenario, positions: &[f64]) -> Result<SimOutput> {
    let na = scenario.n_approaching();
    if positions.len() != na {
        return Err(Error::Schema(format!(
            "{} positions for {na} approaching vehicles",
            positions.len()
        )));
    }
    let fd = scenario.fd;
    let grid = Grid::new(
        scenario.lattice_dt,
        fd.v_f() * scenario.lattice_dt,
        scenario.length,
        scenario.horizon,
    )?;
    let xs = grid.xs().to_vec();
    let dt = scenario.lattice_dt;
    let mut set = ConditionSet::new(fd, scenario.length);

    let w = scenario.initial_cell_width();
    let mut anchor = 0.0;
    for (l, &rho) in scenario.initial_density.iter().enumerate() {
        let x_end = if l + 1 == scenario.initial_density.len() {
            scenario.length
        } else {
            (l + 1) as f64 * w
        };
        set.push(ValueCondition::Initial {
            index: l,
            x_start: l as f64 * w,
            x_end,
            density: rho,
            anchor,
        })?;
        anchor -= rho * (x_end - l as f64 * w);
    }

    let mut boundaries = Vec::new();
    for k in 0..scenario.n_steps() {
        let (a, b) = (k as f64 * scenario.step, (k + 1) as f64 * scenario.step);
        for w in lattice_cuts(a, b, dt).windows(2) {
            boundaries.push(Boundary::Up {
                index: boundaries.len(),
                t_start: w[0],
                t_end: w[1],
                demand: scenario.demand_at(k),
            });
        }
    }
    for (j, (a, b, flow)) in downstream_plan(scenario).into_iter().enumerate() {
        boundaries.push(Boundary::Down { index: j, t_start: a, t_end: b, flow });
    }

    let mut heap = BinaryHeap::new();
    for (key, b) in boundaries.iter().enumerate() {
        let time = match *b {
            Boundary::Up { t_start, .. } | Boundary::Down { t_start, .. } => t_start,
        };
        heap.push(Event { time, kind: Kind::Boundary, key });
    }

    let mut tracked = Vec::with_capacity(scenario.vehicles.len());
    let mut next_pos = positions.iter();
    for v in &scenario.vehicles {
        let target = match v.origin {
            VehicleOrigin::Approaching { .. } => *next_pos.next().expect("length checked"),
            VehicleOrigin::OnSegment { .. } => v.stop_position.expect("validated"),
        };
        let (t0, x0) = match v.origin {
            VehicleOrigin::Approaching { entry_time } => (entry_time, 0.0),
            VehicleOrigin::OnSegment { start_position } => (0.0, start_position),
        };
        tracked.push(Tracked {
            vehicle: *v,
            internal: 0,
            target,
            x: x0,
            trace: VehicleTrace {
                id: v.id,
                stop_position: target,
                arrival: None,
                departure: None,
                path: vec![(t0, x0)],
            },
        });
    }
    // equal event times resolve by ascending id
    tracked.sort_by_key(|t| t.vehicle.id);
    for (key, tr) in tracked.iter().enumerate() {
        let (t0, x0) = tr.trace.path[0];
        let kind = if x0 >= tr.target { Kind::Arrival } else { Kind::Step };
        heap.push(Event { time: t0, kind, key });
    }

    let mut surface = CountSurface::new(&grid, fd.rho_m());
    let mut warnings = Vec::new();
    let mut n_internal = 0;
    for &t_row in grid.times() {
        while let Some(ev) = heap.peek().copied() {
            if ev.time > t_row {
                break;
            }
            heap.pop();
            match ev.kind {
                Kind::Boundary => match boundaries[ev.key] {
                    Boundary::Up { index, t_start, t_end, demand } => {
                        let rho0 = set.density_at(t_start, 0.0, &xs);
                        let flow = demand.min(fd.receiving(rho0));
                        let anchor = set.value_at(t_start, 0.0);
                        set.push(ValueCondition::Upstream { index, t_start, t_end, flow, anchor })?;
                    }
                    Boundary::Down { index, t_start, t_end, flow } => {
                        let anchor = set.value_at(t_start, scenario.length);
                        set.push(ValueCondition::Downstream { index, t_start, t_end, flow, anchor })?;
                    }
                },
                Kind::Step => {
                    let tr = &mut tracked[ev.key];
                    let t = ev.time;
                    let v = fd.speed_clamped(set.density_at(t, tr.x, &xs));
                    let next = tr.x + v * dt;
                    if next >= tr.target {
                        let arrival = t + dt * (tr.target - tr.x) / (next - tr.x);
                        tr.trace.path.push((arrival, tr.target));
                        heap.push(Event { time: arrival, kind: Kind::Arrival, key: ev.key });
                    } else {
                        tr.x = next;
                        tr.trace.path.push((t + dt, next));
                        heap.push(Event { time: t + dt, kind: Kind::Step, key: ev.key });
                    }
                }
                Kind::Arrival => {
                    let tr = &mut tracked[ev.key];
                    let departure = ev.time + tr.vehicle.stop_duration;
                    let end = lattice_cuts(ev.time, departure, dt)[1];
                    let mut cond = stop_condition(
                        n_internal,
                        tr.target,
                        ev.time,
                        tr.vehicle.stop_duration,
                        &set,
                        &fd,
                        scenario.n_lanes,
                    );
                    if let ValueCondition::Internal { t_end, .. } = &mut cond {
                        *t_end = end;
                    }
                    set.push(cond)?;
                    tr.internal = n_internal;
                    n_internal += 1;
                    tr.x = tr.target;
                    tr.trace.arrival = Some(ev.time);
                    tr.trace.departure = Some(departure);
                    if end < departure {
                        heap.push(Event { time: end, kind: Kind::Renew, key: ev.key });
                    }
                }
                Kind::Renew => {
                    // re-anchor so that capacity unused while blocked is not banked
                    let tr = &tracked[ev.key];
                    let departure = tr.trace.departure.expect("renewed after arrival");
                    let end = (ev.time + dt).min(departure);
                    let mut cond = stop_condition(
                        tr.internal,
                        tr.target,
                        ev.time,
                        end - ev.time,
                        &set,
                        &fd,
                        scenario.n_lanes,
                    );
                    if let ValueCondition::Internal { t_end, .. } = &mut cond {
                        *t_end = end;
                    }
                    set.push(cond)?;
                    if end < departure - 1e-9 {
                        heap.push(Event { time: end, kind: Kind::Renew, key: ev.key });
                    }
                }
            }
        }
        surface.push_row(t_row, &set);
    }

    for tr in &tracked {
        if tr.trace.arrival.is_none() {
            warnings.push(format!(
                "vehicle {} did not reach its stop at {} m within the horizon",
                tr.vehicle.id, tr.target
            ));
        }
    }
    let (q_in, q_out) = surface.boundary_counts(scenario.step)?;
    Ok(SimOutput {
        surface,
        q_in,
        q_out,
        conditions: set,
        traces: tracked.into_iter().map(|t| t.trace).collect(),
        warnings,
    })
}
