//! Surrogate accuracy metrics and the replicated experiment suites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::sig9;
use crate::optimizer::{direct_minimize, surrogate_minimize, GaConfig};
use crate::presets::ScenarioClass;
use crate::problem::ControlSolution;
use crate::sampling::{sample_global, sample_local, Dataset};
use crate::scenario::Scenario;
use crate::surrogates::{fit, Family, SurrogateConfig};

/// Fraction of discordant pairs, divided by `N^2`. Ties count as concordant.
pub fn ranking_error(f_true: &[f64], f_pred: &[f64]) -> Result<f64> {
    if f_true.len() != f_pred.len() {
        return Err(Error::Schema(format!("{} true values but {} predictions", f_true.len(), f_pred.len())));
    }
    let n = f_true.len();
    if n < 2 {
        return Err(Error::SampleSize("ranking error needs at least two solutions".into()));
    }
    let mut swapped = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            if (f_true[i] - f_true[j]) * (f_pred[i] - f_pred[j]) < 0.0 {
                swapped += 1;
            }
        }
    }
    Ok(swapped as f64 / (n * n) as f64)
}

/// Objective gap of the surrogate-optimal solution over the direct one,
/// clamped at zero.
pub fn mean_error(surrogate: &ControlSolution, direct: &ControlSolution) -> f64 {
    (surrogate.objective - direct.objective).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub classes: Vec<ScenarioClass>,
    pub families: Vec<Family>,
    /// Training sizes; smaller local sets are prefixes of the largest one.
    pub local_sizes: Vec<usize>,
    pub global_sizes: Vec<usize>,
    pub replications: usize,
    pub test_size: usize,
    /// Limit on sub-scenarios per class; `0` uses all of them.
    pub max_sub_scenarios: usize,
    pub mean_error: bool,
    pub ga: GaConfig,
    pub surrogate: SurrogateConfig,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            classes: ScenarioClass::ALL.to_vec(),
            families: Family::ALL.to_vec(),
            local_sizes: vec![100, 200, 300, 400, 500],
            global_sizes: vec![5000, 10_000, 15_000],
            replications: 5,
            test_size: 1000,
            max_sub_scenarios: 0,
            mean_error: true,
            ga: GaConfig::default(),
            surrogate: SurrogateConfig::default(),
            seed: 0,
        }
    }
}

/// A sub-scenario with its test set and, when mean errors are wanted, the
/// direct solution.
#[derive(Debug, Clone)]
pub struct SubFixture {
    pub class: ScenarioClass,
    pub index: usize,
    pub scenario: Scenario,
    pub test: Dataset,
    pub direct: Option<ControlSolution>,
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix-style combination; stable across platforms
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

pub fn build_fixtures(spec: &ExperimentSpec) -> Result<Vec<SubFixture>> {
    let mut jobs = Vec::new();
    for &class in &spec.classes {
        let mut subs = class.sub_scenarios();
        if spec.max_sub_scenarios > 0 {
            subs.truncate(spec.max_sub_scenarios);
        }
        for (i, s) in subs.into_iter().enumerate() {
            jobs.push((class, i, s));
        }
    }
    let built = crate::par_map(&jobs, |(class, i, s)| -> Result<SubFixture> {
        let test = sample_local(s, spec.test_size, mix(&[spec.seed, 1, class.index() as u64, *i as u64]))?;
        let direct = if spec.mean_error {
            let ga = GaConfig { seed: mix(&[spec.seed, 2, class.index() as u64, *i as u64]), ..spec.ga.clone() };
            Some(direct_minimize(s, &ga, None)?.solution)
        } else {
            None
        };
        Ok(SubFixture { class: *class, index: *i, scenario: s.clone(), test, direct })
    });
    built.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Local,
    Global,
}

/// One (family, size, class) cell averaged over sub-scenarios and replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scope: Scope,
    pub family: Family,
    pub size: usize,
    pub class: ScenarioClass,
    pub re: Option<f64>,
    pub me: Option<f64>,
    pub fit_seconds: f64,
    pub solve_seconds: f64,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteResults {
    pub cells: Vec<CellResult>,
}

impl SuiteResults {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,family,size,class,re,me,fit_seconds,solve_seconds,runs,failures\n");
        let opt = |v: Option<f64>| v.map(sig9).unwrap_or_default();
        for c in &self.cells {
            let scope = match c.scope {
                Scope::Local => "local",
                Scope::Global => "global",
            };
            s.push_str(&format!(
                "{scope},{},{},{},{},{},{},{},{},{}\n",
                c.family,
                c.size,
                c.class.name(),
                opt(c.re),
                opt(c.me),
                sig9(c.fit_seconds),
                sig9(c.solve_seconds),
                c.runs,
                c.failures
            ));
        }
        s
    }

    /// Mean RE over classes for one family and size.
    pub fn mean_re(&self, scope: Scope, family: Family, size: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.scope == scope && c.family == family && c.size == size)
            .filter_map(|c| c.re)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

struct Run {
    family: Family,
    size: usize,
    class: ScenarioClass,
    re: Option<f64>,
    me: Option<f64>,
    fit_seconds: f64,
    solve_seconds: f64,
}

fn aggregate(scope: Scope, spec: &ExperimentSpec, sizes: &[usize], runs: Vec<Run>) -> SuiteResults {
    let mut cells = Vec::new();
    for &family in &spec.families {
        for &size in sizes {
            for &class in &spec.classes {
                let rs: Vec<&Run> =
                    runs.iter().filter(|r| r.family == family && r.size == size && r.class == class).collect();
                let ok: Vec<&&Run> = rs.iter().filter(|r| r.re.is_some()).collect();
                let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
                cells.push(CellResult {
                    scope,
                    family,
                    size,
                    class,
                    re: mean(ok.iter().filter_map(|r| r.re).collect()),
                    me: mean(ok.iter().filter_map(|r| r.me).collect()),
                    fit_seconds: mean(ok.iter().map(|r| r.fit_seconds).collect()).unwrap_or(0.0),
                    solve_seconds: mean(ok.iter().map(|r| r.solve_seconds).collect()).unwrap_or(0.0),
                    runs: ok.len(),
                    failures: rs.len() - ok.len(),
                });
            }
        }
    }
    SuiteResults { cells }
}

fn warm_up(spec: &ExperimentSpec, fixtures: &[SubFixture]) {
    if let Some(f) = fixtures.first() {
        let mut small = f.test.clone();
        small.inputs.truncate(50);
        small.targets.truncate(50);
        small.meta.rows = small.targets.len();
        for &fam in &spec.families {
            let _ = fit(fam, &small, &spec.surrogate, 0);
        }
    }
}

/// Evaluates one trained model on a fixture; errors become a missing cell.
fn score(
    model: &crate::surrogates::TrainedSurrogate,
    fx: &SubFixture,
    test: &Dataset,
    context: &[f64],
    spec: &ExperimentSpec,
    ga_seed: u64,
) -> Result<(f64, Option<f64>, f64)> {
    let pred: Vec<f64> = test.inputs.iter().map(|x| model.predict(x)).collect::<Result<_>>()?;
    let re = ranking_error(&test.targets, &pred)?;
    let (me, solve) = match &fx.direct {
        Some(direct) => {
            let t = web_time::Instant::now();
            let ga = GaConfig { seed: ga_seed, ..spec.ga.clone() };
            let r = surrogate_minimize(model, &fx.scenario, context, &ga)?;
            (Some(mean_error(&r.solution, direct)), t.elapsed().as_secs_f64())
        }
        None => (None, 0.0),
    };
    Ok((re, me, solve))
}

/// Per-solve local surrogates: sample, fit, then RE on the shared test set
/// and ME against the direct solution.
pub fn run_local_suite(spec: &ExperimentSpec, fixtures: &[SubFixture]) -> Result<SuiteResults> {
    let max = *spec.local_sizes.iter().max().ok_or_else(|| Error::Config("no local sizes".into()))?;
    warm_up(spec, fixtures);
    let jobs: Vec<(usize, usize)> =
        (0..fixtures.len()).flat_map(|f| (0..spec.replications).map(move |r| (f, r))).collect();
    let per_job = crate::par_map(&jobs, |&(fi, rep)| -> Vec<Run> {
        let fx = &fixtures[fi];
        let key = [spec.seed, 3, fx.class.index() as u64, fx.index as u64, rep as u64];
        let full = match sample_local(&fx.scenario, max, mix(&key)) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("local sample failed for {} #{}: {e}", fx.class.name(), fx.index);
                return Vec::new();
            }
        };
        let mut out = Vec::new();
        for &size in &spec.local_sizes {
            let mut d = full.clone();
            d.inputs.truncate(size);
            d.targets.truncate(size);
            d.meta.rows = d.targets.len();
            for &family in &spec.families {
                let t = web_time::Instant::now();
                let result = fit(family, &d, &spec.surrogate, mix(&[key[3], key[4], size as u64]))
                    .and_then(|m| {
                        let fit_s = t.elapsed().as_secs_f64();
                        score(&m, fx, &fx.test, &[], spec, mix(&[spec.seed, 4, fi as u64, rep as u64])).map(|s| (s, fit_s))
                    });
                match result {
                    Ok(((re, me, solve), fit_s)) => out.push(Run {
                        family,
                        size,
                        class: fx.class,
                        re: Some(re),
                        me,
                        fit_seconds: fit_s,
                        solve_seconds: solve,
                    }),
                    Err(e) => {
                        log::warn!("{family} size {size} on {} #{} failed: {e}", fx.class.name(), fx.index);
                        out.push(Run { family, size, class: fx.class, re: None, me: None, fit_seconds: 0.0, solve_seconds: 0.0 });
                    }
                }
            }
        }
        out
    });
    Ok(aggregate(Scope::Local, spec, &spec.local_sizes, per_job.into_iter().flatten().collect()))
}

/// Offline global surrogates trained over randomized scenarios and scored
/// on the local test sets with each sub-scenario's features appended.
pub fn run_global_suite(spec: &ExperimentSpec, fixtures: &[SubFixture]) -> Result<SuiteResults> {
    warm_up(spec, fixtures);
    let mut jobs = Vec::new();
    for &class in &spec.classes {
        for &size in &spec.global_sizes {
            for rep in 0..spec.replications {
                jobs.push((class, size, rep));
            }
        }
    }
    let per_job = crate::par_map(&jobs, |&(class, size, rep)| -> Vec<Run> {
        let template = class.template();
        let key = mix(&[spec.seed, 5, class.index() as u64, size as u64, rep as u64]);
        let data = match sample_global(&template, size, key) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("global sample failed for {}: {e}", class.name());
                return Vec::new();
            }
        };
        let names = template.feature_names();
        let mut out = Vec::new();
        for &family in &spec.families {
            let t = web_time::Instant::now();
            let model = match fit(family, &data, &spec.surrogate, key) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("{family} global fit failed: {e}");
                    out.push(Run { family, size, class, re: None, me: None, fit_seconds: 0.0, solve_seconds: 0.0 });
                    continue;
                }
            };
            let fit_s = t.elapsed().as_secs_f64();
            for fx in fixtures.iter().filter(|f| f.class == class) {
                let r = template.encode(&fx.scenario).and_then(|ctx| {
                    let test = fx.test.with_context(&names, &ctx);
                    score(&model, fx, &test, &ctx, spec, mix(&[key, fx.index as u64]))
                });
                out.push(match r {
                    Ok((re, me, solve)) => Run { family, size, class, re: Some(re), me, fit_seconds: fit_s, solve_seconds: solve },
                    Err(e) => {
                        log::warn!("{family} global scoring failed: {e}");
                        Run { family, size, class, re: None, me: None, fit_seconds: 0.0, solve_seconds: 0.0 }
                    }
                });
            }
        }
        out
    });
    Ok(aggregate(Scope::Global, spec, &spec.global_sizes, per_job.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn ranking_error_examples() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ranking_error(&t, &t).unwrap(), 0.0);
        assert_eq!(ranking_error(&t, &[4.0, 3.0, 2.0, 1.0]).unwrap(), 0.375);
        assert_eq!(ranking_error(&t, &[2.0, 1.0, 3.0, 4.0]).unwrap(), 0.0625);
        assert_eq!(ranking_error(&t, &[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(ranking_error(&t, &[1.0]), Err(Error::Schema(_))));
    }

    #[test]
    fn ranking_error_monotone_invariance() {
        let mut rng = crate::rng(11);
        for _ in 0..100 {
            let n = rng.gen_range(2..40);
            let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let base = ranking_error(&t, &p).unwrap();
            let affine: Vec<f64> = p.iter().map(|v| 3.0 * v + 7.0).collect();
            let cubic: Vec<f64> = p.iter().map(|v| v * v * v + v).collect();
            assert_eq!(ranking_error(&t, &affine).unwrap(), base);
            assert_eq!(ranking_error(&t, &cubic).unwrap(), base);
        }
    }

    #[test]
    fn mean_error_clamps() {
        let s = |f: f64| ControlSolution {
            positions: vec![],
            objective: f,
            outflow_sum: 0.0,
            spillback_sum: 0.0,
            spillback_penalty: 0.0,
            detour_penalty: 0.0,
        };
        assert_eq!(mean_error(&s(50.0), &s(47.5)), 2.5);
        assert_eq!(mean_error(&s(40.0), &s(47.5)), 0.0);
        assert_eq!(mean_error(&s(47.5), &s(47.5)), 0.0);
    }

    #[test]
    fn tiny_suite_shape_and_reproducibility() {
        let spec = ExperimentSpec {
            classes: vec![ScenarioClass::C1, ScenarioClass::C2],
            families: vec![Family::LR, Family::PR],
            local_sizes: vec![30, 60],
            global_sizes: vec![80],
            replications: 1,
            test_size: 40,
            max_sub_scenarios: 1,
            mean_error: false,
            ..Default::default()
        };
        let fx = build_fixtures(&spec).unwrap();
        let local = run_local_suite(&spec, &fx).unwrap();
        assert_eq!(local.cells.len(), 2 * 2 * 2);
        assert!(local.cells.iter().all(|c| c.re.is_some_and(|r| (0.0..=0.5).contains(&r))));
        let global = run_global_suite(&spec, &fx).unwrap();
        assert_eq!(global.cells.len(), 2 * 2);
        let again = run_local_suite(&spec, &build_fixtures(&spec).unwrap()).unwrap();
        let strip = |r: &SuiteResults| r.cells.iter().map(|c| (c.re, c.me)).collect::<Vec<_>>();
        assert_eq!(strip(&local), strip(&again));
    }
}
