//! Browser bindings: simulate a scenario into a density heatmap, score stop
//! positions, and run a short GA from the page.

use curbflow::optimizer::{ga_minimize, GaConfig};
use curbflow::presets::{ride_hailing, urban_base, RIDE_HAIL_BASELINE_SEED};
use curbflow::problem::{base_grid, candidate_grid};
use curbflow::{evaluate, simulate, Error, Result, Scenario};
use wasm_bindgen::prelude::*;

/// Density field on the simulation lattice, time-major.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Heatmap {
    times: Vec<f64>,
    edges: Vec<f64>,
    density: Vec<f64>,
    rho_max: f64,
    objective: f64,
    summary: String,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    #[wasm_bindgen(getter)]
    pub fn cells(&self) -> usize {
        self.edges.len() - 1
    }

    #[wasm_bindgen(getter)]
    pub fn objective(&self) -> f64 {
        self.objective
    }

    #[wasm_bindgen(getter)]
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    #[wasm_bindgen(getter)]
    pub fn length(&self) -> f64 {
        *self.edges.last().unwrap_or(&0.0)
    }

    pub fn density(&self, step: usize, cell: usize) -> f64 {
        self.density[step * self.cells() + cell]
    }

    /// Density at the lattice cell holding `(t, x)`; NaN outside the field.
    pub fn probe(&self, t: f64, x: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t);
        let j = self.edges.partition_point(|&e| e <= x);
        if i == 0 || j == 0 || j > self.cells() {
            return f64::NAN;
        }
        self.density(i - 1, j - 1)
    }

    /// JSON with the objective terms, unreached vehicles and solver warnings.
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    /// RGBA image, one pixel per lattice cell: time left to right,
    /// downstream end at the top.
    pub fn rgba(&self) -> Vec<u8> {
        let (w, h) = (self.steps(), self.cells());
        let mut px = vec![0u8; w * h * 4];
        for i in 0..w {
            for j in 0..h {
                let [r, g, b] = colour(self.density(i, j) / self.rho_max);
                let o = ((h - 1 - j) * w + i) * 4;
                px[o..o + 4].copy_from_slice(&[r, g, b, 255]);
            }
        }
        px
    }
}

const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [247.0, 251.0, 255.0]),
    (0.17, [158.0, 202.0, 225.0]),
    (0.35, [253.0, 174.0, 97.0]),
    (0.7, [215.0, 48.0, 39.0]),
    (1.0, [90.0, 0.0, 20.0]),
];

/// Sequential colour scale on `[0, 1]`; the second stop sits at the
/// critical density of the urban diagram.
pub fn colour(u: f64) -> [u8; 3] {
    let u = if u.is_finite() { u.clamp(0.0, 1.0) } else { 0.0 };
    let k = STOPS.windows(2).position(|w| u <= w[1].0).unwrap_or(STOPS.len() - 2);
    let ((a, ca), (b, cb)) = (STOPS[k], STOPS[k + 1]);
    let s = (u - a) / (b - a);
    let mix = |c: usize| (ca[c] + s * (cb[c] - ca[c])).round() as u8;
    [mix(0), mix(1), mix(2)]
}

fn parse(json: &str) -> Result<Scenario> {
    let s: Scenario = serde_json::from_str(json)?;
    s.validate()?;
    Ok(s)
}

pub fn preset_json(name: &str) -> Result<String> {
    match name {
        "ride_hailing" => Ok(ride_hailing().to_json()),
        "urban_base" => Ok(urban_base().to_json()),
        _ => Err(Error::Config(format!("unknown preset {name}"))),
    }
}

pub fn heatmap(scenario: &str, positions: &[f64]) -> Result<Heatmap> {
    let s = parse(scenario)?;
    let sol = evaluate(positions, &s)?;
    let sim = simulate(&s, positions)?;
    let unreached: Vec<u32> = sim.unreached().collect();
    let summary = serde_json::json!({ "solution": sol, "unreached": unreached, "warnings": sim.warnings }).to_string();
    Ok(Heatmap {
        times: sim.surface.times().to_vec(),
        edges: sim.surface.xs().to_vec(),
        density: sim.surface.density_field(),
        rho_max: s.fd.rho_m(),
        objective: sol.objective,
        summary,
    })
}

/// Short GA seeded with `start`; returns the best positions found.
pub fn improve(scenario: &str, start: &[f64], population: usize, generations: usize, seed: u64) -> Result<Vec<f64>> {
    let s = parse(scenario)?;
    let grid = candidate_grid(&s)?;
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = GaConfig {
        population,
        max_generations: generations,
        stall_generations: generations,
        seed,
        max_seconds: 30.0,
        ..GaConfig::default()
    };
    let initial = (start.len() == grid.len()).then_some(start);
    Ok(ga_minimize(|x| evaluate(x, &s).map(|r| r.objective), &grid, &cfg, initial)?.positions)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn preset(name: &str) -> std::result::Result<String, JsError> {
    preset_json(name).map_err(js)
}

/// Allowed stop positions (same for every vehicle before detour limits).
#[wasm_bindgen]
pub fn stop_grid(scenario: &str) -> std::result::Result<Vec<f64>, JsError> {
    parse(scenario).map(|s| base_grid(&s)).map_err(js)
}

/// No-control positions of the ride-hailing rollout.
#[wasm_bindgen]
pub fn baseline(scenario: &str) -> std::result::Result<Vec<f64>, JsError> {
    parse(scenario).map(|s| curbflow::mpc::baseline_positions(&s, RIDE_HAIL_BASELINE_SEED)).map_err(js)
}

/// `n` RGBA pixels spanning the colour scale, for a legend.
#[wasm_bindgen]
pub fn colour_scale(n: usize) -> Vec<u8> {
    (0..n)
        .flat_map(|i| {
            let [r, g, b] = colour(i as f64 / (n.max(2) - 1) as f64);
            [r, g, b, 255]
        })
        .collect()
}

#[wasm_bindgen]
pub fn simulate_heatmap(scenario: &str, positions: Vec<f64>) -> std::result::Result<Heatmap, JsError> {
    heatmap(scenario, &positions).map_err(js)
}

#[wasm_bindgen]
pub fn optimize(
    scenario: &str,
    start: Vec<f64>,
    population: usize,
    generations: usize,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    improve(scenario, &start, population, generations, seed as u64).map_err(js)
}
