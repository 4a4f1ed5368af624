//! Godunov cell transmission scheme, kept deliberately separate from the
//! Lax-Hopf code so it can serve as an independent check.

use crate::error::{Error, Result};
use crate::fd::FundamentalDiagram;
use serde::Serialize;

use crate::hybrid::SimOutput;
use crate::scenario::{Scenario, VehicleOrigin};

/// Default oracle resolution: 1 m cells at the free-flow CFL step.
pub const ORACLE_CELL: f64 = 1.0;
pub const ORACLE_DT: f64 = 1.0 / 14.0;
/// Neighbour jump (veh/m) marking a lattice cell as a shock cell.
pub const SHOCK_JUMP: f64 = 0.01;
/// Shock mask dilation in lattice cells.
pub const SHOCK_DILATION: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CtmGrid {
    pub cell: f64,
    pub dt: f64,
    pub density: Vec<f64>,
    /// Per-cell cap on the flux entering and leaving the cell.
    pub cap: Vec<f64>,
}

impl CtmGrid {
    pub fn new(cell: f64, dt: f64, density: Vec<f64>, fd: &FundamentalDiagram) -> Result<Self> {
        if dt > cell / fd.v_f() + 1e-12 {
            return Err(Error::Config(format!(
                "CTM step {dt} s exceeds cell / v_f = {} s",
                cell / fd.v_f()
            )));
        }
        if density.iter().any(|r| !(0.0..=fd.rho_m()).contains(r)) {
            return Err(Error::Domain("CTM density outside [0, rho_m]".into()));
        }
        let n = density.len();
        Ok(CtmGrid { cell, dt, density, cap: vec![fd.q_m(); n] })
    }

    pub fn stored(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell
    }
}

/// Interface fluxes of one step, `n + 1` values from upstream to downstream (veh/s).
pub fn ctm_step(grid: &mut CtmGrid, fd: &FundamentalDiagram, demand_in: f64, supply_out: f64) -> Result<Vec<f64>> {
    if grid.dt > grid.cell / fd.v_f() + 1e-12 {
        return Err(Error::Config("CTM step violates the CFL bound".into()));
    }
    let n = grid.density.len();
    let mut flux = vec![0.0; n + 1];
    flux[0] = demand_in.max(0.0).min(fd.receiving(grid.density[0])).min(grid.cap[0]);
    for i in 1..n {
        flux[i] = fd
            .sending(grid.density[i - 1])
            .min(fd.receiving(grid.density[i]))
            .min(grid.cap[i - 1])
            .min(grid.cap[i]);
    }
    flux[n] = fd.sending(grid.density[n - 1]).min(supply_out.max(0.0)).min(grid.cap[n - 1]);
    let ratio = grid.dt / grid.cell;
    for i in 0..n {
        grid.density[i] = (grid.density[i] + ratio * (flux[i] - flux[i + 1])).clamp(0.0, fd.rho_m());
    }
    Ok(flux)
}

#[derive(Debug, Clone)]
pub struct CtmOutput {
    pub cell_edges: Vec<f64>,
    /// Sampled at every whole `sample_dt`, row-major, one value per cell.
    pub times: Vec<f64>,
    pub density: Vec<f64>,
    pub q_in: Vec<f64>,
    pub q_out: Vec<f64>,
    pub arrivals: Vec<Option<f64>>,
    pub stored: Vec<f64>,
}

impl CtmOutput {
    pub fn n_cells(&self) -> usize {
        self.cell_edges.len() - 1
    }

    /// Mean density over `[a, b]` at sample row `i`.
    pub fn average(&self, i: usize, a: f64, b: f64) -> f64 {
        let n = self.n_cells();
        let row = &self.density[i * n..(i + 1) * n];
        let mut mass = 0.0;
        for k in 0..n {
            let lo = self.cell_edges[k].max(a);
            let hi = self.cell_edges[k + 1].min(b);
            if hi > lo {
                mass += row[k] * (hi - lo);
            }
        }
        mass / (b - a)
    }
}

struct Runner {
    stop: f64,
    duration: f64,
    x: f64,
    next_step: f64,
    arrival: Option<f64>,
    fixed: Option<Option<f64>>,
}

/// Oracle discretisation and stop timing.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    /// Target cell length in metres; snapped so cells tile the segment.
    pub cell: f64,
    pub dt: f64,
    /// Spacing of the sampled density rows.
    pub sample_dt: f64,
    /// Stop arrival times per vehicle in scenario order. `None` integrates
    /// the vehicles through the oracle's own density field.
    pub arrivals: Option<Vec<Option<f64>>>,
}

impl Default for OracleRun {
    fn default() -> Self {
        OracleRun { cell: ORACLE_CELL, dt: ORACLE_DT, sample_dt: 1.0, arrivals: None }
    }
}

impl OracleRun {
    /// Grid of the given cell length with the step at the free-flow CFL limit.
    pub fn with_cell(cell: f64, fd: &FundamentalDiagram) -> Self {
        OracleRun { cell, dt: cell / fd.v_f(), ..OracleRun::default() }
    }
}

/// Simulates the scenario with the oracle scheme.
pub fn ctm_simulate(scenario: &Scenario, positions: &[f64], run: &OracleRun) -> Result<CtmOutput> {
    let (cell, dt, sample_dt) = (run.cell, run.dt, run.sample_dt);
    scenario.validate()?;
    if let Some(a) = &run.arrivals {
        if a.len() != scenario.vehicles.len() {
            return Err(Error::Schema(format!(
                "{} arrival times for {} vehicles",
                a.len(),
                scenario.vehicles.len()
            )));
        }
    }
    let fd = scenario.fd;
    let n = (scenario.length / cell).round().max(1.0) as usize;
    let cell = scenario.length / n as f64;
    let edges: Vec<f64> = (0..=n).map(|k| k as f64 * cell).collect();
    let w0 = scenario.initial_cell_width();
    let init: Vec<f64> = (0..n)
        .map(|k| {
            let mid = (k as f64 + 0.5) * cell;
            let l = ((mid / w0) as usize).min(scenario.initial_density.len() - 1);
            scenario.initial_density[l]
        })
        .collect();
    let mut grid = CtmGrid::new(cell, dt, init, &fd)?;
    let rate = scenario.passing_rate();
    let lattice_dt = scenario.lattice_dt;

    let mut pos = positions.iter();
    let mut runners: Vec<Runner> = scenario
        .vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (t0, x0, stop) = match v.origin {
                VehicleOrigin::Approaching { entry_time } => (entry_time, 0.0, *pos.next().unwrap_or(&f64::NAN)),
                VehicleOrigin::OnSegment { start_position } => (0.0, start_position, v.stop_position.unwrap_or(f64::NAN)),
            };
            Runner {
                stop,
                duration: v.stop_duration,
                x: x0,
                next_step: t0,
                arrival: if x0 >= stop { Some(t0) } else { None },
                fixed: run.arrivals.as_ref().map(|a| a[i]),
            }
        })
        .collect();
    if runners.iter().any(|r| r.stop.is_nan()) {
        return Err(Error::Schema("missing stop position for a vehicle".into()));
    }

    let n_steps = (scenario.horizon / dt).round() as usize;
    let per_sample = (sample_dt / dt).round() as usize;
    let per_count = (scenario.step / dt).round() as usize;
    let mut times = vec![0.0];
    let mut density = grid.density.clone();
    let mut stored = vec![grid.stored()];
    let (mut q_in, mut q_out) = (Vec::new(), Vec::new());
    let (mut acc_in, mut acc_out) = (0.0, 0.0);

    for step in 0..n_steps {
        let t = step as f64 * dt;
        // vehicles read the density at the latest available time
        for r in runners.iter_mut().filter(|r| r.arrival.is_none()) {
            if let Some(fixed) = r.fixed {
                r.arrival = fixed.filter(|&a| a < t + dt);
                continue;
            }
            while r.next_step < t + dt && r.arrival.is_none() {
                let k = ((r.x / cell) as usize).min(n - 1);
                let v = fd.speed_clamped(grid.density[k]);
                let next = r.x + v * lattice_dt;
                if next >= r.stop {
                    r.arrival = Some(r.next_step + lattice_dt * (r.stop - r.x) / (next - r.x));
                } else {
                    r.x = next;
                    r.next_step += lattice_dt;
                }
            }
        }
        grid.cap.iter_mut().for_each(|c| *c = fd.q_m());
        for r in &runners {
            if let Some(a) = r.arrival {
                let overlap = ((a + r.duration).min(t + dt) - a.max(t)).max(0.0);
                if overlap > 0.0 {
                    let k = ((r.stop / cell) as usize).min(n - 1);
                    let eff = fd.q_m() - (fd.q_m() - rate) * overlap / dt;
                    grid.cap[k] = grid.cap[k].min(eff);
                }
            }
        }
        let k = ((t / scenario.step) as usize).min(usize::MAX);
        let demand = scenario.demand_at(k);
        let mut supply = scenario.supply_at(k);
        if let Some(sig) = &scenario.signal {
            let mut green = 0.0;
            let mut cuts = vec![t];
            cuts.extend(sig.switches_between(t, t + dt));
            cuts.push(t + dt);
            for w in cuts.windows(2) {
                if !sig.is_red(0.5 * (w[0] + w[1])) {
                    green += w[1] - w[0];
                }
            }
            supply *= green / dt;
        }
        let flux = ctm_step(&mut grid, &fd, demand, supply)?;
        acc_in += flux[0] * dt;
        acc_out += flux[n] * dt;
        if (step + 1) % per_count == 0 {
            q_in.push(acc_in);
            q_out.push(acc_out);
            acc_in = 0.0;
            acc_out = 0.0;
        }
        if (step + 1) % per_sample == 0 {
            times.push((step + 1) as f64 * dt);
            density.extend_from_slice(&grid.density);
            stored.push(grid.stored());
        }
    }
    Ok(CtmOutput {
        cell_edges: edges,
        times,
        density,
        q_in,
        q_out,
        arrivals: runners.iter().map(|r| r.arrival).collect(),
        stored,
    })
}

/// Result of comparing a Lax-Hopf density field with the oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldComparison {
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
    pub compared: usize,
    pub excluded: usize,
    /// Largest relative conservation residual of the oracle run.
    pub oracle_conservation: f64,
    /// `(t, x)` of the lattice cell holding the largest difference.
    pub worst_at: Option<(f64, f64)>,
}

/// Marks lattice cells next to a density jump larger than `jump`, dilated by
/// `dilation` cells in space and time.
pub fn shock_mask(field: &[f64], nt: usize, nc: usize, jump: f64, dilation: usize) -> Vec<bool> {
    let at = |i: usize, j: usize| field[i * nc + j];
    let mut raw = vec![false; nt * nc];
    for i in 0..nt {
        for j in 0..nc {
            let mut hit = false;
            if j + 1 < nc && (at(i, j) - at(i, j + 1)).abs() > jump {
                hit = true;
                raw[i * nc + j + 1] = true;
            }
            if i + 1 < nt && (at(i, j) - at(i + 1, j)).abs() > jump {
                hit = true;
                raw[(i + 1) * nc + j] = true;
            }
            if hit {
                raw[i * nc + j] = true;
            }
        }
    }
    let mut mask = vec![false; nt * nc];
    let d = dilation as isize;
    for i in 0..nt {
        for j in 0..nc {
            if !raw[i * nc + j] {
                continue;
            }
            for di in -d..=d {
                for dj in -d..=d {
                    let (a, b) = (i as isize + di, j as isize + dj);
                    if a >= 0 && b >= 0 && (a as usize) < nt && (b as usize) < nc {
                        mask[a as usize * nc + b as usize] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Compares cell-average densities on the Lax-Hopf lattice away from shocks.
///
/// A lattice cell counts as a shock cell when either field jumps by more
/// than `jump` to a neighbour; the mask is then dilated by `dilation` cells.
pub fn compare_fields(sim: &SimOutput, oracle: &CtmOutput, jump: f64, dilation: usize) -> FieldComparison {
    let s = &sim.surface;
    let (nt, nc) = (s.nt(), s.nx() - 1);
    let field = s.density_field();
    let rows: Vec<Option<usize>> = s
        .times()
        .iter()
        .map(|&t| oracle.times.iter().position(|&u| (u - t).abs() < 1e-9))
        .collect();
    let mut other = vec![f64::NAN; nt * nc];
    for (i, r) in rows.iter().enumerate() {
        if let Some(r) = *r {
            for j in 0..nc {
                other[i * nc + j] = oracle.average(r, s.xs()[j], s.xs()[j + 1]);
            }
        }
    }
    let lh_mask = shock_mask(&field, nt, nc, jump, dilation);
    let ctm_mask = shock_mask(&other, nt, nc, jump, dilation);
    let (mut max, mut sum, mut compared, mut excluded) = (0.0f64, 0.0, 0, 0);
    let mut worst_at = None;
    for (i, r) in rows.iter().enumerate() {
        if r.is_none() {
            continue;
        }
        for j in 0..nc {
            let k = i * nc + j;
            if lh_mask[k] || ctm_mask[k] {
                excluded += 1;
                continue;
            }
            let d = (field[k] - other[k]).abs();
            if d > max || worst_at.is_none() {
                worst_at = Some((s.times()[i], s.xs()[j]));
            }
            max = max.max(d);
            sum += d;
            compared += 1;
        }
    }
    FieldComparison {
        max_abs_diff: max,
        mean_abs_diff: if compared > 0 { sum / compared as f64 } else { 0.0 },
        compared,
        excluded,
        oracle_conservation: oracle.conservation_residual(),
        worst_at,
    }
}

impl CtmOutput {
    /// Largest `|stored(t) - stored(0) - in + out|` over sample rows,
    /// relative to the vehicles handled.
    pub fn conservation_residual(&self) -> f64 {
        let per = if self.q_in.is_empty() { 0 } else { (self.times.len() - 1) / self.q_in.len().max(1) };
        let total_in: f64 = self.q_in.iter().sum();
        let total_out: f64 = self.q_out.iter().sum();
        let scale = (self.stored[0] + total_in).max(1.0);
        let _ = per;
        let end = self.stored[self.stored.len() - 1];
        (end - self.stored[0] - total_in + total_out).abs() / scale
    }
}
