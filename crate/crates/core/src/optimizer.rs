//! Solvers over the discrete stop-position grid.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{candidate_grid, evaluate, ControlSolution};
use crate::scenario::Scenario;
use crate::surrogates::{Family, TrainedSurrogate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub max_generations: usize,
    pub stall_generations: usize,
    /// Stop when the best value improved by less than this per generation,
    /// averaged over the stall window.
    pub tolerance: f64,
    pub crossover_fraction: f64,
    /// Per-gene mutation probability; `0` means `1 / genes`.
    pub mutation_rate: f64,
    pub elite: usize,
    pub max_seconds: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 50,
            max_generations: 500,
            stall_generations: 50,
            tolerance: 0.5,
            crossover_fraction: 0.8,
            mutation_rate: 0.0,
            elite: 2,
            max_seconds: 1800.0,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Config("GA population must be at least 4".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("GA tolerance must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_fraction) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config("GA fractions must lie in [0, 1]".into()));
        }
        if self.elite >= self.population {
            return Err(Error::Config("GA elite count must be below the population".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub positions: Vec<f64>,
    pub fitness: f64,
    pub generations: usize,
    pub evaluations: usize,
    pub timed_out: bool,
    /// Best-ever fitness after each generation.
    pub history: Vec<f64>,
}

fn snap(grid: &[f64], x: f64) -> usize {
    (0..grid.len()).min_by(|&a, &b| (grid[a] - x).abs().total_cmp(&(grid[b] - x).abs())).unwrap_or(0)
}

fn decode(grid: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    idx.iter().zip(grid).map(|(&i, g)| g[i]).collect()
}

/// Genetic algorithm over grid indices. `initial`, when given, is snapped to
/// the grid and placed in the first population.
pub fn ga_minimize<F>(objective: F, grid: &[Vec<f64>], cfg: &GaConfig, initial: Option<&[f64]>) -> Result<GaResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    cfg.validate()?;
    if grid.is_empty() || grid.iter().any(|g| g.is_empty()) {
        return Err(Error::Config("every vehicle needs at least one candidate position".into()));
    }
    let start = web_time::Instant::now();
    let genes = grid.len();
    let mut rng = crate::rng(cfg.seed);
    let rate = if cfg.mutation_rate > 0.0 { cfg.mutation_rate } else { 1.0 / genes as f64 };
    let random = |rng: &mut crate::Rng| -> Vec<usize> { grid.iter().map(|g| crate::index(rng, g.len())).collect() };

    let mut pop: Vec<Vec<usize>> = (0..cfg.population).map(|_| random(&mut rng)).collect();
    if let Some(x) = initial {
        pop[0] = x.iter().zip(grid).map(|(&v, g)| snap(g, v)).collect();
    }
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut best: (Vec<usize>, f64) = (pop[0].clone(), f64::INFINITY);
    let mut history = Vec::new();
    let mut timed_out = false;
    let mut generations = 0;

    loop {
        let mut fresh: Vec<Vec<usize>> = Vec::new();
        for ind in &pop {
            if !cache.contains_key(ind) && !fresh.contains(ind) {
                fresh.push(ind.clone());
            }
        }
        let values = crate::par_map(&fresh, |ind| objective(&decode(grid, ind)));
        for (ind, v) in fresh.into_iter().zip(values) {
            let v = v?;
            cache.insert(ind, if v.is_nan() { f64::INFINITY } else { v });
        }
        let fit: Vec<f64> = pop.iter().map(|ind| cache[ind]).collect();
        for (ind, &f) in pop.iter().zip(&fit) {
            if f < best.1 {
                best = (ind.clone(), f);
            }
        }
        history.push(best.1);
        generations += 1;
        let g = history.len() - 1;
        if g >= cfg.stall_generations
            && (history[g - cfg.stall_generations] - history[g]) / (cfg.stall_generations as f64) < cfg.tolerance
        {
            break;
        }
        if generations >= cfg.max_generations {
            break;
        }
        if start.elapsed().as_secs_f64() > cfg.max_seconds {
            timed_out = true;
            break;
        }

        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
        let mut next: Vec<Vec<usize>> = order[..cfg.elite].iter().map(|&i| pop[i].clone()).collect();
        let tournament = |rng: &mut crate::Rng| -> usize {
            let (a, b) = (crate::index(rng, pop.len()), crate::index(rng, pop.len()));
            if fit[b] < fit[a] { b } else { a }
        };
        while next.len() < cfg.population {
            let p1 = tournament(&mut rng);
            let mut child = pop[p1].clone();
            let crossed = rng.gen_bool(cfg.crossover_fraction);
            if crossed {
                let p2 = tournament(&mut rng);
                for (c, &o) in child.iter_mut().zip(&pop[p2]) {
                    if rng.gen_bool(0.5) {
                        *c = o;
                    }
                }
            }
            let mut mutated = false;
            for (c, gset) in child.iter_mut().zip(grid) {
                if rng.gen_bool(rate) {
                    *c = crate::index(&mut rng, gset.len());
                    mutated = true;
                }
            }
            if !crossed && !mutated {
                let k = crate::index(&mut rng, genes);
                child[k] = crate::index(&mut rng, grid[k].len());
            }
            next.push(child);
        }
        pop = next;
    }
    Ok(GaResult {
        positions: decode(grid, &best.0),
        fitness: best.1,
        generations,
        evaluations: cache.len(),
        timed_out,
        history,
    })
}

fn surrogate_input(x: &[f64], context: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.extend_from_slice(context);
    v
}

fn check_dims(model: &TrainedSurrogate, grid: &[Vec<f64>], context: &[f64]) -> Result<()> {
    if grid.len() + context.len() != model.n_inputs() {
        return Err(Error::Schema(format!(
            "model takes {} inputs, grid and context give {}",
            model.n_inputs(),
            grid.len() + context.len()
        )));
    }
    Ok(())
}

/// Exact minimizer of a linear surrogate: each position sits at the end of
/// its grid favoured by the sign of its coefficient; zero picks the minimum.
pub fn lr_exact_minimize(model: &TrainedSurrogate, grid: &[Vec<f64>], context: &[f64]) -> Result<Vec<f64>> {
    check_dims(model, grid, context)?;
    let (_, slopes) = model
        .linear_coefficients()
        .ok_or_else(|| Error::Config(format!("{} model has no linear coefficients", model.family)))?;
    Ok(grid
        .iter()
        .zip(&slopes)
        .map(|(g, &b)| if b < 0.0 { g[g.len() - 1] } else { g[0] })
        .collect())
}

pub const EXHAUSTIVE_LIMIT: usize = 1_000_000;

/// Minimizes any surrogate over the grid by enumeration when the product
/// grid has at most [`EXHAUSTIVE_LIMIT`] points, otherwise by coordinate
/// descent from 10 random starts. The flag is true for the exact case.
pub fn pr_minimize(model: &TrainedSurrogate, grid: &[Vec<f64>], context: &[f64], seed: u64) -> Result<(Vec<f64>, bool)> {
    check_dims(model, grid, context)?;
    let f = |idx: &[usize]| model.predict_unchecked(&surrogate_input(&decode(grid, idx), context));
    let total = grid.iter().try_fold(1usize, |a, g| a.checked_mul(g.len()));
    match total {
        Some(total) if total <= EXHAUSTIVE_LIMIT => {
            let mut idx = vec![0usize; grid.len()];
            let mut best = (idx.clone(), f(&idx));
            for _ in 1..total {
                for (k, g) in grid.iter().enumerate().rev() {
                    idx[k] += 1;
                    if idx[k] < g.len() {
                        break;
                    }
                    idx[k] = 0;
                }
                let v = f(&idx);
                if v < best.1 {
                    best = (idx.clone(), v);
                }
            }
            Ok((decode(grid, &best.0), true))
        }
        _ => {
            let mut rng = crate::rng(seed);
            let mut best: Option<(Vec<usize>, f64)> = None;
            for _ in 0..10 {
                let mut idx: Vec<usize> = grid.iter().map(|g| crate::index(&mut rng, g.len())).collect();
                let mut val = f(&idx);
                loop {
                    let mut improved = false;
                    for k in 0..grid.len() {
                        let keep = idx[k];
                        let (mut arg, mut bv) = (keep, val);
                        for j in 0..grid[k].len() {
                            idx[k] = j;
                            let v = f(&idx);
                            if v < bv {
                                arg = j;
                                bv = v;
                            }
                        }
                        idx[k] = arg;
                        if arg != keep {
                            val = bv;
                            improved = true;
                        }
                    }
                    if !improved {
                        break;
                    }
                }
                if best.as_ref().is_none_or(|b| val < b.1) {
                    best = Some((idx, val));
                }
            }
            Ok((decode(grid, &best.unwrap().0), false))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectResult {
    pub solution: ControlSolution,
    pub ga: GaResult,
}

/// GA driven directly by simulation.
pub fn direct_minimize(scenario: &Scenario, cfg: &GaConfig, initial: Option<&[f64]>) -> Result<DirectResult> {
    let grid = candidate_grid(scenario)?;
    if grid.is_empty() {
        return Ok(DirectResult {
            solution: evaluate(&[], scenario)?,
            ga: GaResult { positions: vec![], fitness: 0.0, generations: 0, evaluations: 0, timed_out: false, history: vec![] },
        });
    }
    let ga = ga_minimize(|x| evaluate(x, scenario).map(|s| s.objective), &grid, cfg, initial)?;
    let solution = evaluate(&ga.positions, scenario)?;
    Ok(DirectResult { solution, ga })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurrogateMethod {
    SignRule,
    Enumeration,
    CoordinateDescent,
    Genetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateResult {
    /// Scored by simulation.
    pub solution: ControlSolution,
    pub predicted: f64,
    pub method: SurrogateMethod,
    pub timed_out: bool,
}

/// Minimizes a trained surrogate with the solver suited to its family and
/// re-scores the result by simulation. `context` holds the scenario
/// features of global models and is empty for local ones.
pub fn surrogate_minimize(
    model: &TrainedSurrogate,
    scenario: &Scenario,
    context: &[f64],
    cfg: &GaConfig,
) -> Result<SurrogateResult> {
    let grid = candidate_grid(scenario)?;
    check_dims(model, &grid, context)?;
    let (positions, method, timed_out) = match model.family {
        Family::LR => (lr_exact_minimize(model, &grid, context)?, SurrogateMethod::SignRule, false),
        Family::PR => {
            let (x, exact) = pr_minimize(model, &grid, context, cfg.seed)?;
            (x, if exact { SurrogateMethod::Enumeration } else { SurrogateMethod::CoordinateDescent }, false)
        }
        _ => {
            let r = ga_minimize(
                |x| Ok(model.predict_unchecked(&surrogate_input(x, context))),
                &grid,
                cfg,
                None,
            )?;
            (r.positions, SurrogateMethod::Genetic, r.timed_out)
        }
    };
    let predicted = model.predict_unchecked(&surrogate_input(&positions, context));
    Ok(SurrogateResult { solution: evaluate(&positions, scenario)?, predicted, method, timed_out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{Dataset, DatasetMeta, SampleMode};
    use crate::surrogates::{fit, SurrogateConfig};

    fn grid20() -> Vec<f64> {
        (3..=22).map(|m| 14.0 * m as f64).collect()
    }

    #[test]
    fn ga_single_vehicle_abs() {
        let g = vec![grid20()];
        let r = ga_minimize(|x| Ok((x[0] - 154.0).abs()), &g, &GaConfig::default(), None).unwrap();
        assert_eq!(r.positions, vec![154.0]);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ga_constant_stops_at_stall_limit() {
        let g = vec![grid20(), grid20()];
        let cfg = GaConfig::default();
        let r = ga_minimize(|_| Ok(1.0), &g, &cfg, None).unwrap();
        assert_eq!(r.generations, cfg.stall_generations + 1);
        assert!(!r.timed_out);
    }

    #[test]
    fn ga_separable_convex_mostly_exact() {
        let g = vec![grid20(), grid20()];
        let f = |x: &[f64]| Ok(((x[0] - 100.0) / 10.0).powi(2) + ((x[1] - 250.0) / 7.0).powi(2));
        let mut exact = f64::INFINITY;
        for a in &g[0] {
            for b in &g[1] {
                exact = exact.min(f(&[*a, *b]).unwrap());
            }
        }
        let hits = (0..100)
            .filter(|&s| {
                let cfg = GaConfig { seed: s, ..Default::default() };
                ga_minimize(f, &g, &cfg, None).unwrap().fitness <= exact + 0.5
            })
            .count();
        assert!(hits >= 95, "{hits}");
    }

    #[test]
    fn ga_is_deterministic_and_honours_time_cap() {
        let g = vec![grid20(); 3];
        let f = |x: &[f64]| Ok(x.iter().map(|v| (v - 200.0).abs()).sum::<f64>());
        let cfg = GaConfig { seed: 4, ..Default::default() };
        assert_eq!(ga_minimize(f, &g, &cfg, None).unwrap(), ga_minimize(f, &g, &cfg, None).unwrap());
        let capped = GaConfig { max_seconds: 0.0, ..cfg };
        let r = ga_minimize(f, &g, &capped, None).unwrap();
        assert!(r.timed_out && r.generations == 1);
    }

    #[test]
    fn ga_seeded_start_is_never_lost() {
        let g = vec![grid20(); 4];
        let f = |x: &[f64]| Ok(if x == [42.0, 56.0, 70.0, 84.0] { -100.0 } else { 0.0 });
        let r = ga_minimize(f, &g, &GaConfig::default(), Some(&[42.0, 56.0, 70.0, 84.0])).unwrap();
        assert_eq!(r.fitness, -100.0);
    }

    fn linear_model(beta: &[f64], seed: u64) -> TrainedSurrogate {
        let mut rng = crate::rng(seed);
        let x: Vec<Vec<f64>> =
            (0..30).map(|_| beta.iter().map(|_| 14.0 * rng.gen_range(3..=22) as f64).collect()).collect();
        let y = x.iter().map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
        let d = Dataset {
            meta: DatasetMeta {
                mode: SampleMode::Local,
                columns: crate::sampling::position_columns(beta.len()),
                seed,
                scenario_hash: String::new(),
                rows: 30,
            },
            inputs: x,
            targets: y,
        };
        fit(Family::LR, &d, &SurrogateConfig::default(), 0).unwrap()
    }

    #[test]
    fn sign_rule_picks_grid_ends() {
        let m = linear_model(&[0.3, -0.3], 1);
        let g = vec![grid20(), grid20()];
        assert_eq!(lr_exact_minimize(&m, &g, &[]).unwrap(), vec![42.0, 308.0]);
    }

    #[test]
    fn sign_rule_matches_enumeration() {
        let g = vec![grid20(); 3];
        for seed in 0..100u64 {
            let mut rng = crate::rng(1000 + seed);
            let beta: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = linear_model(&beta, seed);
            let (a, exact) = pr_minimize(&m, &g, &[], 0).unwrap();
            assert!(exact);
            assert_eq!(lr_exact_minimize(&m, &g, &[]).unwrap(), a);
        }
    }

    #[test]
    fn coordinate_descent_beats_random_search() {
        // 8 vehicles exceed the enumeration limit
        let m = linear_model(&[0.5, -0.2, 0.1, 0.7, -0.9, 0.3, -0.4, 0.05], 3);
        let g = vec![grid20(); 8];
        let (x, exact) = pr_minimize(&m, &g, &[], 0).unwrap();
        assert!(!exact);
        let fx = m.predict(&x).unwrap();
        let mut rng = crate::rng(77);
        for _ in 0..100_000 {
            let r: Vec<f64> = g.iter().map(|a| a[crate::index(&mut rng, a.len())]).collect();
            assert!(fx <= m.predict(&r).unwrap() + 1e-9);
        }
    }
}
