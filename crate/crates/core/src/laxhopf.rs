//! Lax-Hopf solution of the cumulative-count Hamilton-Jacobi problem.
//!
//! The count surface `M(t, x)` is the pointwise minimum of the component
//! solutions induced by each value condition. With a triangular diagram the
//! characteristic cost is linear in the characteristic speed, so every
//! component reduces to a linear function over a polygon and its infimum is
//! attained at an extent endpoint or at the edge of the cone of influence.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::FundamentalDiagram;

const EXTENT_EPS: f64 = 1e-9;
const MERGE_EPS: f64 = 1e-12;

/// One block of prescribed cumulative counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueCondition {
    /// Density on `[x_start, x_end]` at `t = 0`; `anchor` is `M(0, x_start)`.
    Initial {
        index: usize,
        x_start: f64,
        x_end: f64,
        density: f64,
        anchor: f64,
    },
    /// Inflow at `x = 0` over `[t_start, t_end]`; `anchor` is `M(t_start, 0)`.
    Upstream {
        index: usize,
        t_start: f64,
        t_end: f64,
        flow: f64,
        anchor: f64,
    },
    /// Outflow at `x = L` over `[t_start, t_end]`; `anchor` is `M(t_start, L)`.
    Downstream {
        index: usize,
        t_start: f64,
        t_end: f64,
        flow: f64,
        anchor: f64,
    },
    /// Stationary bottleneck at `position` passing at most `rate` veh/s.
    Internal {
        index: usize,
        position: f64,
        t_start: f64,
        t_end: f64,
        anchor: f64,
        rate: f64,
    },
}

impl ValueCondition {
    pub fn start_time(&self) -> f64 {
        match *self {
            ValueCondition::Initial { .. } => 0.0,
            ValueCondition::Upstream { t_start, .. }
            | ValueCondition::Downstream { t_start, .. }
            | ValueCondition::Internal { t_start, .. } => t_start,
        }
    }

    /// Prescribed count at a point of the condition's own extent.
    pub fn prescribed(&self, t: f64, x: f64) -> f64 {
        match *self {
            ValueCondition::Initial {
                x_start,
                density,
                anchor,
                ..
            } => anchor - density * (x - x_start),
            ValueCondition::Upstream {
                t_start,
                flow,
                anchor,
                ..
            }
            | ValueCondition::Downstream {
                t_start,
                flow,
                anchor,
                ..
            } => anchor + flow * (t - t_start),
            ValueCondition::Internal {
                t_start,
                rate,
                anchor,
                ..
            } => anchor + rate * (t - t_start),
        }
    }

    /// Component solution of this single condition at `(t, x)`.
    ///
    /// Returns `f64::INFINITY` when no point of the extent can reach `(t, x)`
    /// with a characteristic speed inside `[-w_c, v_f]`.
    pub fn component(&self, t: f64, x: f64, fd: &FundamentalDiagram, length: f64) -> f64 {
        let (v_f, w_c, q_m, rho_c) = (fd.v_f(), fd.w_c(), fd.q_m(), fd.rho_c());
        match *self {
            ValueCondition::Initial {
                x_start, x_end, ..
            } => {
                if t <= 0.0 {
                    return if (x_start..=x_end).contains(&x) {
                        self.prescribed(0.0, x)
                    } else {
                        f64::INFINITY
                    };
                }
                let lo = x_start.max(x - v_f * t);
                let hi = x_end.min(x + w_c * t);
                if lo > hi {
                    return f64::INFINITY;
                }
                let cost = |y: f64| self.prescribed(0.0, y) + t * q_m - (x - y) * rho_c;
                cost(lo).min(cost(hi))
            }
            ValueCondition::Upstream { t_start, t_end, .. } => {
                let s_max = t - x / v_f;
                edge_cost(self, t, s_max, t_start, t_end, q_m, -x * rho_c)
            }
            ValueCondition::Downstream { t_start, t_end, .. } => {
                let s_max = t - (length - x) / w_c;
                edge_cost(self, t, s_max, t_start, t_end, q_m, -(x - length) * rho_c)
            }
            ValueCondition::Internal {
                position,
                t_start,
                t_end,
                ..
            } => {
                let s_max = if x >= position {
                    t - (x - position) / v_f
                } else {
                    t - (position - x) / w_c
                };
                edge_cost(self, t, s_max, t_start, t_end, q_m, -(x - position) * rho_c)
            }
        }
    }
}

fn edge_cost(
    cond: &ValueCondition,
    t: f64,
    s_max: f64,
    t_start: f64,
    t_end: f64,
    q_m: f64,
    offset: f64,
) -> f64 {
    if s_max < t_start {
        return f64::INFINITY;
    }
    // slope of the prescribed value never exceeds q_m, so the latest reachable time wins
    let s = t_end.min(s_max);
    cond.prescribed(s, 0.0) + (t - s) * q_m + offset
}

/// Piecewise-linear initial profile with O(1) range minima.
#[derive(Debug, Clone, Default)]
struct InitialProfile {
    starts: Vec<f64>,
    ends: Vec<f64>,
    densities: Vec<f64>,
    anchors: Vec<f64>,
    // sparse table over per-cell min of (c(y) + y * rho_c) at the cell endpoints
    table: Vec<Vec<f64>>,
}

impl InitialProfile {
    fn push(&mut self, x_start: f64, x_end: f64, density: f64, anchor: f64, rho_c: f64) {
        self.starts.push(x_start);
        self.ends.push(x_end);
        self.densities.push(density);
        self.anchors.push(anchor);
        let level0: Vec<f64> = (0..self.starts.len())
            .map(|k| self.h(k, self.starts[k], rho_c).min(self.h(k, self.ends[k], rho_c)))
            .collect();
        let mut table = vec![level0];
        let mut width = 1;
        while 2 * width <= self.starts.len() {
            let prev = table.last().unwrap();
            let next: Vec<f64> = (0..prev.len() - width)
                .map(|i| prev[i].min(prev[i + width]))
                .collect();
            table.push(next);
            width *= 2;
        }
        self.table = table;
    }

    fn value(&self, k: usize, y: f64) -> f64 {
        self.anchors[k] - self.densities[k] * (y - self.starts[k])
    }

    fn h(&self, k: usize, y: f64, rho_c: f64) -> f64 {
        self.value(k, y) + y * rho_c
    }

    fn range_min(&self, first: usize, last: usize) -> f64 {
        let len = last - first + 1;
        let level = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let row = &self.table[level];
        row[first].min(row[last + 1 - (1 << level)])
    }

    fn cell_of(&self, y: f64) -> Option<usize> {
        let k = self.starts.partition_point(|&s| s <= y);
        if k == 0 {
            return None;
        }
        let k = k - 1;
        (y <= self.ends[k]).then_some(k)
    }

    fn eval(&self, t: f64, x: f64, fd: &FundamentalDiagram) -> f64 {
        if self.starts.is_empty() {
            return f64::INFINITY;
        }
        let rho_c = fd.rho_c();
        if t <= 0.0 {
            return match self.cell_of(x) {
                Some(k) => self.value(k, x),
                None => f64::INFINITY,
            };
        }
        let first = self.starts[0];
        let last = *self.ends.last().unwrap();
        let lo = first.max(x - fd.v_f() * t);
        let hi = last.min(x + fd.w_c() * t);
        if lo > hi {
            return f64::INFINITY;
        }
        let (Some(k_lo), Some(k_hi)) = (self.cell_of(lo), self.cell_of(hi)) else {
            return f64::INFINITY;
        };
        let mut best = self
            .h(k_lo, lo, rho_c)
            .min(self.h(k_lo, self.ends[k_lo].min(hi), rho_c))
            .min(self.h(k_hi, hi, rho_c))
            .min(self.h(k_hi, self.starts[k_hi].max(lo), rho_c));
        if k_hi > k_lo + 1 {
            best = best.min(self.range_min(k_lo + 1, k_hi - 1));
        }
        best + t * fd.q_m() - x * rho_c
    }
}

/// Non-overlapping boundary intervals in time order.
#[derive(Debug, Clone, Default)]
struct BoundarySeries {
    starts: Vec<f64>,
    ends: Vec<f64>,
    flows: Vec<f64>,
    anchors: Vec<f64>,
    // prefix minimum of c(t_end) - t_end * q_m
    prefix: Vec<f64>,
}

impl BoundarySeries {
    fn push(&mut self, t_start: f64, t_end: f64, flow: f64, anchor: f64, q_m: f64) -> Result<()> {
        if let Some(&prev_end) = self.ends.last() {
            if t_start < prev_end - EXTENT_EPS {
                return Err(Error::Config(format!(
                    "boundary interval [{t_start}, {t_end}] overlaps the previous one ending at {prev_end}"
                )));
            }
        }
        let g = anchor + flow * (t_end - t_start) - t_end * q_m;
        if let Some(k) = self.ends.len().checked_sub(1) {
            // a piece continuing the previous line exactly just extends it
            let carried = self.anchors[k] + self.flows[k] * (t_start - self.starts[k]);
            if (t_start - self.ends[k]).abs() <= EXTENT_EPS
                && flow == self.flows[k]
                && (anchor - carried).abs() <= MERGE_EPS * (1.0 + anchor.abs())
            {
                self.ends[k] = t_end;
                let g = self.anchors[k] + flow * (t_end - self.starts[k]) - t_end * q_m;
                self.prefix[k] = if k > 0 { self.prefix[k - 1].min(g) } else { g };
                return Ok(());
            }
        }
        let m = self.prefix.last().map_or(g, |&p| p.min(g));
        self.starts.push(t_start);
        self.ends.push(t_end);
        self.flows.push(flow);
        self.anchors.push(anchor);
        self.prefix.push(m);
        Ok(())
    }

    /// Minimum over the series of `c(s) + (t - s) q_m + offset` for `s <= s_max`.
    fn eval(&self, t: f64, s_max: f64, q_m: f64, offset: f64) -> f64 {
        let n = self.ends.len();
        if n == 0 || s_max < self.starts[0] {
            return f64::INFINITY;
        }
        let full = if self.ends[n - 1] <= s_max {
            n
        } else {
            self.ends.partition_point(|&e| e <= s_max)
        };
        let mut best = if full > 0 {
            self.prefix[full - 1] + t * q_m + offset
        } else {
            f64::INFINITY
        };
        if full < self.starts.len() && self.starts[full] <= s_max {
            let s = s_max;
            let v = self.anchors[full] + self.flows[full] * (s - self.starts[full]) + (t - s) * q_m + offset;
            best = best.min(v);
        }
        best
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    index: usize,
    position: f64,
    pieces: BoundarySeries,
}

/// Indexed collection of value conditions supporting fast pointwise minima.
///
/// Conditions may be appended while a solution is being marched forward in
/// time; a condition never influences points earlier than its start time.
#[derive(Debug, Clone)]
pub struct ConditionSet {
    fd: FundamentalDiagram,
    length: f64,
    conditions: Vec<ValueCondition>,
    initial: InitialProfile,
    upstream: BoundarySeries,
    downstream: BoundarySeries,
    internal: Vec<Bottleneck>,
}

impl ConditionSet {
    pub fn new(fd: FundamentalDiagram, length: f64) -> Self {
        ConditionSet {
            fd,
            length,
            conditions: Vec::new(),
            initial: InitialProfile::default(),
            upstream: BoundarySeries::default(),
            downstream: BoundarySeries::default(),
            internal: Vec::new(),
        }
    }

    pub fn from_conditions(
        fd: FundamentalDiagram,
        length: f64,
        conds: &[ValueCondition],
    ) -> Result<Self> {
        let mut set = ConditionSet::new(fd, length);
        let mut sorted: Vec<ValueCondition> = conds.to_vec();
        // each kind lands in its own series; within a kind, order by extent start
        sorted.sort_by(|a, b| {
            let key = |c: &ValueCondition| match *c {
                ValueCondition::Initial { x_start, .. } => (0, x_start),
                ValueCondition::Upstream { t_start, .. } => (1, t_start),
                ValueCondition::Downstream { t_start, .. } => (2, t_start),
                ValueCondition::Internal { t_start, .. } => (3, t_start),
            };
            let (ka, va) = key(a);
            let (kb, vb) = key(b);
            ka.cmp(&kb).then(va.total_cmp(&vb))
        });
        for c in sorted {
            set.push(c)?;
        }
        Ok(set)
    }

    pub fn fd(&self) -> &FundamentalDiagram {
        &self.fd
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn conditions(&self) -> &[ValueCondition] {
        &self.conditions
    }

    pub fn push(&mut self, cond: ValueCondition) -> Result<()> {
        let (q_m, rho_m) = (self.fd.q_m(), self.fd.rho_m());
        let in_unit = |v: f64, hi: f64| v.is_finite() && (-EXTENT_EPS..=hi + EXTENT_EPS).contains(&v);
        match cond {
            ValueCondition::Initial {
                x_start,
                x_end,
                density,
                anchor,
                ..
            } => {
                if !(in_unit(density, rho_m) && x_start < x_end && x_start >= -EXTENT_EPS && x_end <= self.length + EXTENT_EPS) {
                    return Err(Error::Config(format!("invalid initial condition {cond:?}")));
                }
                if let Some(&prev) = self.initial.ends.last() {
                    if (x_start - prev).abs() > EXTENT_EPS {
                        return Err(Error::Config(format!(
                            "initial cells must be contiguous: cell starts at {x_start}, previous ended at {prev}"
                        )));
                    }
                }
                self.initial.push(x_start, x_end, density, anchor, self.fd.rho_c());
            }
            ValueCondition::Upstream {
                t_start,
                t_end,
                flow,
                anchor,
                ..
            } => {
                check_interval(&cond, t_start, t_end, flow, q_m)?;
                self.upstream.push(t_start, t_end, flow, anchor, q_m)?;
            }
            ValueCondition::Downstream {
                t_start,
                t_end,
                flow,
                anchor,
                ..
            } => {
                check_interval(&cond, t_start, t_end, flow, q_m)?;
                self.downstream.push(t_start, t_end, flow, anchor, q_m)?;
            }
            ValueCondition::Internal {
                position,
                t_start,
                t_end,
                anchor,
                rate,
                ..
            } => {
                check_interval(&cond, t_start, t_end, rate, q_m)?;
                if !(0.0..=self.length).contains(&position) {
                    return Err(Error::Config(format!("bottleneck outside the segment: {cond:?}")));
                }
                let index = match cond {
                    ValueCondition::Internal { index, .. } => index,
                    _ => unreachable!(),
                };
                // pieces sharing an index and position extend the same bottleneck
                let slot = self
                    .internal
                    .iter()
                    .rposition(|b| b.index == index && (b.position - position).abs() <= EXTENT_EPS);
                let slot = match slot {
                    Some(k) => k,
                    None => {
                        self.internal.push(Bottleneck { index, position, pieces: BoundarySeries::default() });
                        self.internal.len() - 1
                    }
                };
                self.internal[slot].pieces.push(t_start, t_end, rate, anchor, q_m)?;
            }
        }
        self.conditions.push(cond);
        Ok(())
    }

    /// `M(t, x)`: minimum of all component solutions.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        let fd = &self.fd;
        let (v_f, w_c, q_m, rho_c) = (fd.v_f(), fd.w_c(), fd.q_m(), fd.rho_c());
        let mut best = self.initial.eval(t, x, fd);
        if !self.upstream.starts.is_empty() {
            best = best.min(self.upstream.eval(t, t - x / v_f, q_m, -x * rho_c));
        }
        if !self.downstream.starts.is_empty() {
            let s_max = t - (self.length - x) / w_c;
            best = best.min(self.downstream.eval(t, s_max, q_m, -(x - self.length) * rho_c));
        }
        for b in &self.internal {
            let s_max = if x >= b.position {
                t - (x - b.position) / v_f
            } else {
                t - (b.position - x) / w_c
            };
            best = best.min(b.pieces.eval(t, s_max, q_m, -(x - b.position) * rho_c));
        }
        best
    }

    /// Density at `(t, x)` from the lattice cell of `xs` that contains `x`.
    pub fn density_at(&self, t: f64, x: f64, xs: &[f64]) -> f64 {
        let j = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1) - 1;
        let (a, b) = (xs[j], xs[j + 1]);
        let rho = -(self.value_at(t, b) - self.value_at(t, a)) / (b - a);
        rho.clamp(0.0, self.fd.rho_m())
    }

    /// Slow reference: minimum over every stored condition's own component.
    pub fn reference_value_at(&self, t: f64, x: f64) -> f64 {
        self.conditions
            .iter()
            .map(|c| c.component(t, x, &self.fd, self.length))
            .fold(f64::INFINITY, f64::min)
    }

    fn boundary_intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.conditions.iter().filter_map(|c| match *c {
            ValueCondition::Upstream { t_start, t_end, .. } | ValueCondition::Downstream { t_start, t_end, .. } => {
                Some((t_start, t_end))
            }
            _ => None,
        })
    }
}

fn check_interval(cond: &ValueCondition, t_start: f64, t_end: f64, rate: f64, q_m: f64) -> Result<()> {
    let ok = t_start.is_finite()
        && t_end.is_finite()
        && t_start >= -EXTENT_EPS
        && t_end >= t_start
        && rate.is_finite()
        && (-EXTENT_EPS..=q_m + EXTENT_EPS).contains(&rate);
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("invalid condition {cond:?}")))
    }
}

/// Space-time lattice on which the surface is sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dt: f64,
    pub dx: f64,
    pub length: f64,
    pub horizon: f64,
    times: Vec<f64>,
    xs: Vec<f64>,
}

impl Grid {
    pub fn new(dt: f64, dx: f64, length: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0 && dx > 0.0 && length > 0.0 && horizon >= 0.0) {
            return Err(Error::Config(format!(
                "invalid grid dt={dt} dx={dx} L={length} T={horizon}"
            )));
        }
        let nt = (horizon / dt).round() as usize;
        if ((nt as f64) * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::Config(format!(
                "horizon {horizon} is not a multiple of the lattice step {dt}"
            )));
        }
        let times = (0..=nt).map(|k| k as f64 * dt).collect();
        let mut xs = Vec::new();
        let mut k = 0usize;
        while (k as f64) * dx < length - 1e-9 {
            xs.push(k as f64 * dx);
            k += 1;
        }
        xs.push(length);
        Ok(Grid {
            dt,
            dx,
            length,
            horizon,
            times,
            xs,
        })
    }

    /// Default lattice: 1 s steps and `v_f` metre cells, so free-flow
    /// characteristics pass through lattice points.
    pub fn for_fd(fd: &FundamentalDiagram, length: f64, horizon: f64) -> Result<Self> {
        Grid::new(1.0, fd.v_f(), length, horizon)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }
}

/// Cumulative counts sampled on a lattice, row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSurface {
    times: Vec<f64>,
    xs: Vec<f64>,
    values: Vec<f64>,
    rho_m: f64,
}

impl CountSurface {
    pub fn new(grid: &Grid, rho_m: f64) -> Self {
        CountSurface {
            times: Vec::with_capacity(grid.times.len()),
            xs: grid.xs.clone(),
            values: Vec::with_capacity(grid.times.len() * grid.xs.len()),
            rho_m,
        }
    }

    pub(crate) fn push_row(&mut self, t: f64, set: &ConditionSet) {
        self.times.push(t);
        self.values.extend(self.xs.iter().map(|&x| set.value_at(t, x)));
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn nt(&self) -> usize {
        self.times.len()
    }

    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.xs.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nx = self.xs.len();
        &self.values[i * nx..(i + 1) * nx]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cell densities, `nt` rows of `nx - 1` cells, clamped to `[0, rho_m]`.
    pub fn density_field(&self) -> Vec<f64> {
        let nx = self.xs.len();
        let mut out = Vec::with_capacity(self.nt() * (nx - 1));
        for i in 0..self.nt() {
            let row = self.row(i);
            for j in 0..nx - 1 {
                let rho = -(row[j + 1] - row[j]) / (self.xs[j + 1] - self.xs[j]);
                out.push(rho.clamp(0.0, self.rho_m));
            }
        }
        out
    }

    /// Vehicles on the segment at lattice time `i`.
    pub fn stored(&self, i: usize) -> f64 {
        let row = self.row(i);
        row[0] - row[row.len() - 1]
    }

    /// Vehicle counts entering and leaving over consecutive windows of `step` seconds.
    pub fn boundary_counts(&self, step: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let dt = if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            step
        };
        let stride = (step / dt).round() as usize;
        if stride == 0 || ((stride as f64) * dt - step).abs() > 1e-9 * step {
            return Err(Error::Config(format!(
                "count step {step} is not a multiple of the lattice step {dt}"
            )));
        }
        let last = self.xs.len() - 1;
        let n = (self.nt() - 1) / stride;
        let mut q_in = Vec::with_capacity(n);
        let mut q_out = Vec::with_capacity(n);
        for k in 1..=n {
            let (a, b) = ((k - 1) * stride, k * stride);
            q_in.push(self.at(b, 0) - self.at(a, 0));
            q_out.push(self.at(b, last) - self.at(a, last));
        }
        Ok((q_in, q_out))
    }

    /// CSV with header `t,x,M,rho`, rows by time then position.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,M,rho")?;
        let rho = self.density_field();
        let nc = self.xs.len() - 1;
        for i in 0..self.nt() {
            for (j, &x) in self.xs.iter().enumerate() {
                let cell = j.min(nc - 1);
                writeln!(
                    w,
                    "{},{},{},{}",
                    crate::io::sig9(self.times[i]),
                    crate::io::sig9(x),
                    crate::io::sig9(self.at(i, j)),
                    crate::io::sig9(rho[i * nc + cell])
                )?;
            }
        }
        Ok(())
    }
}

/// A compatibility problem found after solving: the condition's own extent
/// evaluates below its prescribed value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatibilityWarning {
    pub condition: usize,
    pub excess: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub surface: CountSurface,
    pub warnings: Vec<CompatibilityWarning>,
}

/// Checks the stability bound on boundary interval durations.
pub fn check_cfl(set: &ConditionSet) -> Result<()> {
    let limit = set.length() / set.fd().v_f();
    for (a, b) in set.boundary_intervals() {
        if b - a > limit + 1e-9 {
            return Err(Error::Config(format!(
                "boundary interval of {} s exceeds L / v_f = {limit} s",
                b - a
            )));
        }
    }
    Ok(())
}

/// Solves for the count surface generated by a fixed condition list.
pub fn solve(conds: &[ValueCondition], grid: &Grid, fd: &FundamentalDiagram) -> Result<Solution> {
    let set = ConditionSet::from_conditions(*fd, grid.length, conds)?;
    check_cfl(&set)?;
    let surface = sample_surface(&set, grid);
    let warnings = compatibility(&set, grid);
    Ok(Solution { surface, warnings })
}

pub fn sample_surface(set: &ConditionSet, grid: &Grid) -> CountSurface {
    let mut surface = CountSurface::new(grid, set.fd().rho_m());
    for &t in grid.times() {
        surface.push_row(t, set);
    }
    surface
}

/// Reports conditions whose extent is dominated by more than `1e-6 q_m T`.
pub fn compatibility(set: &ConditionSet, grid: &Grid) -> Vec<CompatibilityWarning> {
    let tol = 1e-6 * set.fd().q_m() * grid.horizon.max(1.0);
    let mut out = Vec::new();
    for (idx, cond) in set.conditions().iter().enumerate() {
        let probes: Vec<(f64, f64)> = match *cond {
            ValueCondition::Initial { x_start, x_end, .. } => vec![(0.0, x_start), (0.0, x_end)],
            ValueCondition::Upstream { t_start, t_end, .. } => {
                vec![(t_start, 0.0), (t_end.min(grid.horizon), 0.0)]
            }
            ValueCondition::Downstream { t_start, t_end, .. } => {
                vec![(t_start, grid.length), (t_end.min(grid.horizon), grid.length)]
            }
            ValueCondition::Internal {
                position,
                t_start,
                t_end,
                ..
            } => vec![(t_start, position), (t_end.min(grid.horizon), position)],
        };
        let excess = probes
            .iter()
            .filter(|(t, _)| *t <= grid.horizon)
            .map(|&(t, x)| cond.prescribed(t, x) - set.value_at(t, x))
            .fold(0.0, f64::max);
        if excess > tol {
            out.push(CompatibilityWarning {
                condition: idx,
                excess,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd() -> FundamentalDiagram {
        FundamentalDiagram::urban()
    }

    fn uniform_initial(rho: f64, length: f64, cells: usize) -> Vec<ValueCondition> {
        let w = length / cells as f64;
        (0..cells)
            .map(|l| ValueCondition::Initial {
                index: l,
                x_start: l as f64 * w,
                x_end: (l + 1) as f64 * w,
                density: rho,
                anchor: -rho * l as f64 * w,
            })
            .collect()
    }

    #[test]
    fn uniform_free_flow_component() {
        let conds = uniform_initial(0.02, 450.0, 1);
        let m = conds[0].component(10.0, 140.0, &fd(), 450.0);
        assert!(m.abs() < 1e-12, "{m}");
        // general point inside the light cone: 0.28 t - 0.02 x
        let m = conds[0].component(7.0, 300.0, &fd(), 450.0);
        assert!((m - (0.28 * 7.0 - 0.02 * 300.0)).abs() < 1e-12);
    }

    #[test]
    fn red_signal_freezes_downstream_count() {
        let init = uniform_initial(0.02, 450.0, 1)[0];
        let m0 = init.component(0.0, 450.0, &fd(), 450.0);
        let red = ValueCondition::Downstream {
            index: 0,
            t_start: 0.0,
            t_end: 48.0,
            flow: 0.0,
            anchor: m0,
        };
        for t in [1.0, 10.0, 30.0, 48.0] {
            assert_eq!(red.component(t, 450.0, &fd(), 450.0), m0);
        }
    }

    #[test]
    fn internal_anchor_growth() {
        let c = ValueCondition::Internal {
            index: 0,
            position: 140.0,
            t_start: 100.0,
            t_end: 200.0,
            anchor: 5.0,
            rate: 0.28,
        };
        assert!((c.component(130.0, 140.0, &fd(), 450.0) - 13.4).abs() < 1e-12);
        assert_eq!(c.component(99.0, 140.0, &fd(), 450.0), f64::INFINITY);
    }

    #[test]
    fn empty_segment_is_zero() {
        let grid = Grid::for_fd(&fd(), 450.0, 120.0).unwrap();
        let mut conds = uniform_initial(0.0, 450.0, 5);
        for j in 0..12 {
            let (a, b) = (j as f64 * 10.0, (j + 1) as f64 * 10.0);
            conds.push(ValueCondition::Upstream { index: j, t_start: a, t_end: b, flow: 0.0, anchor: 0.0 });
            conds.push(ValueCondition::Downstream { index: j, t_start: a, t_end: b, flow: 0.56, anchor: 0.56 * a });
        }
        let sol = solve(&conds, &grid, &fd()).unwrap();
        assert!(sol.surface.values().iter().all(|&m| m.abs() < 1e-12));
        assert!(sol.surface.density_field().iter().all(|&r| r < 1e-12));
    }

    #[test]
    fn fast_path_matches_reference() {
        let fd = fd();
        let mut conds = Vec::new();
        let dens = [0.01, 0.05, 0.2, 0.03, 0.12];
        let mut anchor = 0.0;
        for (l, &d) in dens.iter().enumerate() {
            conds.push(ValueCondition::Initial { index: l, x_start: l as f64 * 90.0, x_end: (l + 1) as f64 * 90.0, density: d, anchor });
            anchor -= d * 90.0;
        }
        let flows = [0.5, 0.1, 0.56, 0.3, 0.0, 0.2];
        let mut up = 0.0;
        let mut down = anchor;
        for (j, &f) in flows.iter().enumerate() {
            let (a, b) = (j as f64 * 10.0, (j + 1) as f64 * 10.0);
            conds.push(ValueCondition::Upstream { index: j, t_start: a, t_end: b, flow: f, anchor: up });
            conds.push(ValueCondition::Downstream { index: j, t_start: a, t_end: b, flow: 0.56 - f, anchor: down });
            up += f * 10.0 - 0.3;
            down += (0.56 - f) * 10.0 + 0.2;
        }
        conds.push(ValueCondition::Internal { index: 0, position: 140.0, t_start: 12.5, t_end: 40.0, anchor: -2.0, rate: 0.28 });
        let set = ConditionSet::from_conditions(fd, 450.0, &conds).unwrap();
        for i in 0..=60 {
            for j in 0..=45 {
                let (t, x) = (i as f64, j as f64 * 10.0);
                let fast = set.value_at(t, x);
                let slow = set.reference_value_at(t, x);
                assert!((fast - slow).abs() < 1e-9, "t={t} x={x}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn split_pieces_equal_whole_interval() {
        let fd = fd();
        let mut whole = uniform_initial(0.05, 450.0, 3);
        let mut split = whole.clone();
        whole.push(ValueCondition::Upstream { index: 0, t_start: 0.0, t_end: 10.0, flow: 0.3, anchor: 0.0 });
        for k in 0..10 {
            let t = k as f64;
            split.push(ValueCondition::Upstream { index: k, t_start: t, t_end: t + 1.0, flow: 0.3, anchor: 0.3 * t });
        }
        let a = ConditionSet::from_conditions(fd, 450.0, &whole).unwrap();
        let b = ConditionSet::from_conditions(fd, 450.0, &split).unwrap();
        for i in 0..=40 {
            for j in 0..=9 {
                let (t, x) = (i as f64 * 0.5, j as f64 * 50.0);
                assert!((a.value_at(t, x) - b.value_at(t, x)).abs() < 1e-12);
                assert!((b.value_at(t, x) - b.reference_value_at(t, x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_overlapping_boundary_intervals() {
        let mut set = ConditionSet::new(fd(), 450.0);
        set.push(ValueCondition::Upstream { index: 0, t_start: 0.0, t_end: 10.0, flow: 0.1, anchor: 0.0 }).unwrap();
        let err = set.push(ValueCondition::Upstream { index: 1, t_start: 5.0, t_end: 15.0, flow: 0.1, anchor: 0.0 });
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn cfl_violation_is_config_error() {
        let grid = Grid::for_fd(&fd(), 100.0, 60.0).unwrap();
        let mut conds = uniform_initial(0.0, 100.0, 1);
        conds.push(ValueCondition::Upstream { index: 0, t_start: 0.0, t_end: 60.0, flow: 0.1, anchor: 0.0 });
        assert!(matches!(solve(&conds, &grid, &fd()), Err(Error::Config(_))));
    }

    #[test]
    fn boundary_count_step_must_divide() {
        let grid = Grid::for_fd(&fd(), 450.0, 20.0).unwrap();
        let sol = solve(&uniform_initial(0.0, 450.0, 1), &grid, &fd()).unwrap();
        assert!(sol.surface.boundary_counts(2.5).is_err());
        let (qi, qo) = sol.surface.boundary_counts(10.0).unwrap();
        assert_eq!(qi.len(), 2);
        assert_eq!(qo, vec![0.0, 0.0]);
    }

    #[test]
    fn jammed_segment_stays_jammed() {
        let grid = Grid::for_fd(&fd(), 450.0, 60.0).unwrap();
        let mut conds = uniform_initial(0.24, 450.0, 3);
        let m_l = -0.24 * 450.0;
        for j in 0..6 {
            let (a, b) = (j as f64 * 10.0, (j + 1) as f64 * 10.0);
            conds.push(ValueCondition::Downstream { index: j, t_start: a, t_end: b, flow: 0.0, anchor: m_l });
        }
        let sol = solve(&conds, &grid, &fd()).unwrap();
        for &r in &sol.surface.density_field() {
            assert!((r - 0.24).abs() < 1e-9, "{r}");
        }
    }
}
