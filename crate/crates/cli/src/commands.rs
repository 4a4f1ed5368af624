use std::path::Path;

use curbflow::ctm::{compare_fields, ctm_simulate, OracleRun, SHOCK_DILATION, SHOCK_JUMP};
use curbflow::evaluation::{build_fixtures, run_global_suite, run_local_suite, ExperimentSpec};
use curbflow::io::sig9;
use curbflow::mpc::{self, baseline_positions, SolverChoice};
use curbflow::optimizer::{direct_minimize, surrogate_minimize};
use curbflow::presets::{ride_hailing, urban_base, ScenarioClass};
use curbflow::sampling::{sample_global, sample_local, Dataset};
use curbflow::surrogates::{fit, Family, TrainedSurrogate};
use curbflow::{evaluate, simulate, Error, Result, Scenario};
use serde_json::json;

use crate::config::{parse_positions, RunConfig};
use crate::manifest::Recorder;
use crate::{Command, Common, SolverKind, SuiteArgs};

fn start(name: &str, common: &Common) -> Result<Recorder> {
    let cfg = RunConfig::resolve(name, common.config.as_deref(), common.seed, common.threads, &common.out)?;
    if cfg.threads > 0 {
        // fails only if a pool already exists, which the tool never creates first
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    Ok(Recorder::new(cfg))
}

fn load_scenario(rec: &mut Recorder, path: &Path) -> Result<Scenario> {
    let s = Scenario::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read scenario {}: {io}", path.display())),
        Error::Json(j) => Error::Schema(format!("{}: {j}", path.display())),
        other => other,
    })?;
    rec.input(path)?;
    Ok(s)
}

fn positions_or_baseline(s: &Scenario, given: Option<&str>, baseline_seed: u64) -> Result<Vec<f64>> {
    match given {
        Some(p) => parse_positions(p),
        None => Ok(baseline_positions(s, baseline_seed)),
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { scenario, positions, baseline_seed, common } => {
            let mut rec = start("simulate", &common)?;
            let s = load_scenario(&mut rec, &scenario)?;
            let x = positions_or_baseline(&s, positions.as_deref(), baseline_seed)?;
            let sol = evaluate(&x, &s)?;
            let sim = simulate(&s, &x)?;
            let mut density = Vec::new();
            sim.surface.write_csv(&mut density)?;
            rec.write("density.csv", &String::from_utf8(density).expect("CSV is ASCII"))?;
            let mut flows = String::from("step,t_start,q_in,q_out\n");
            for (k, (a, b)) in sim.q_in.iter().zip(&sim.q_out).enumerate() {
                flows.push_str(&format!("{k},{},{},{}\n", sig9(k as f64 * s.step), sig9(*a), sig9(*b)));
            }
            rec.write("flows.csv", &flows)?;
            let unreached: Vec<u32> = sim.unreached().collect();
            rec.write_json("summary.json", &json!({ "solution": sol, "unreached": unreached, "warnings": sim.warnings }))?;
            println!("objective {}", sig9(sol.objective));
            rec.finish()
        }
        Command::Sample { scenario, class, n, common } => {
            let mut rec = start("sample", &common)?;
            let data = match (&scenario, &class) {
                (Some(p), _) => {
                    let s = load_scenario(&mut rec, p)?;
                    sample_local(&s, n, rec.cfg.seed)?
                }
                (None, Some(c)) => sample_global(&ScenarioClass::parse(c)?.template(), n, rec.cfg.seed)?,
                (None, None) => return Err(Error::Config("sample needs --scenario or --class".into())),
            };
            data.save(&rec.cfg.out.join("samples.csv"))?;
            rec.wrote("samples.csv")?;
            rec.wrote("samples.json")?;
            println!("{} rows, {} inputs", data.len(), data.n_features());
            rec.finish()
        }
        Command::Train { data, family, common } => {
            let mut rec = start("train", &common)?;
            let family = Family::parse(&family)?;
            let ds = Dataset::load(&data).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("cannot read dataset {}: {io}", data.display())),
                other => other,
            })?;
            rec.input(&data)?;
            let model = fit(family, &ds, &rec.cfg.surrogate(), rec.cfg.seed)?;
            rec.write("model.json", &model.to_json()?)?;
            println!("{family} trained on {} rows", ds.len());
            rec.finish()
        }
        Command::Optimize { scenario, solver, family, samples, model, class, common } => {
            let mut rec = start("optimize", &common)?;
            let s = load_scenario(&mut rec, &scenario)?;
            let ga = rec.cfg.ga();
            let result = match solver {
                SolverKind::Direct => {
                    let r = direct_minimize(&s, &ga, None)?;
                    json!({ "solver": "direct", "solution": r.solution, "ga": r.ga })
                }
                SolverKind::Surrogate => {
                    let (m, context) = match &model {
                        Some(p) => {
                            let m = TrainedSurrogate::load(p)?;
                            rec.input(p)?;
                            let context = match &class {
                                Some(c) => ScenarioClass::parse(c)?.template().encode(&s)?,
                                None => Vec::new(),
                            };
                            (m, context)
                        }
                        None => {
                            let data = sample_local(&s, samples, rec.cfg.seed)?;
                            (fit(Family::parse(&family)?, &data, &rec.cfg.surrogate(), rec.cfg.seed)?, Vec::new())
                        }
                    };
                    let r = surrogate_minimize(&m, &s, &context, &ga)?;
                    json!({ "solver": "surrogate", "family": m.family, "solution": r.solution, "predicted": r.predicted, "method": r.method, "timed_out": r.timed_out })
                }
                SolverKind::Identity => {
                    let x = baseline_positions(&s, curbflow::presets::RIDE_HAIL_BASELINE_SEED);
                    json!({ "solver": "identity", "solution": evaluate(&x, &s)? })
                }
            };
            let objective = result["solution"]["objective"].as_f64().unwrap_or(f64::NAN);
            rec.write_json("solution.json", &result)?;
            println!("objective {}", sig9(objective));
            rec.finish()
        }
        Command::MpcRun { scenario, solver, family, samples, sweep, common } => {
            let mut rec = start("mpc-run", &common)?;
            let s = load_scenario(&mut rec, &scenario)?;
            let mut cfg = rec.cfg.file.mpc.clone().unwrap_or_default();
            cfg.seed = rec.cfg.seed;
            if rec.cfg.file.ga.is_some() {
                cfg.ga = rec.cfg.ga();
            }
            if let Some(sc) = &rec.cfg.file.surrogate {
                cfg.surrogate = sc.clone();
            }
            cfg.solver = match solver {
                SolverKind::Direct => SolverChoice::Direct,
                SolverKind::Identity => SolverChoice::Identity,
                SolverKind::Surrogate => SolverChoice::Surrogate { family: Family::parse(&family)?, samples },
            };
            let runs: Vec<(String, Scenario)> = if sweep {
                let base = baseline_positions(&s, cfg.baseline_seed);
                mpc::weight_regimes(&s, &base, rec.cfg.seed)
                    .into_iter()
                    .map(|((lo, hi), sc)| (format!("wd_{}_{}", sig9(lo), sig9(hi)), sc))
                    .collect()
            } else {
                vec![("run".to_string(), s)]
            };
            let mut rows = String::from("regime,baseline_f,controlled_f,improvement_pct,solves,solve_seconds\n");
            let mut reports = Vec::new();
            for (name, sc) in &runs {
                let r = mpc::run(sc, &cfg)?;
                rows.push_str(&format!(
                    "{name},{},{},{},{},{}\n",
                    sig9(r.baseline.objective),
                    sig9(r.controlled.objective),
                    sig9(r.improvement_pct),
                    r.solves.len(),
                    sig9(r.total_solve_seconds)
                ));
                rec.write(&format!("solves_{name}.csv"), &r.solves_csv())?;
                println!("{name}: improvement {:.2}%", r.improvement_pct);
                reports.push(json!({ "regime": name, "report": r }));
            }
            rec.write("rollout.csv", &rows)?;
            rec.write_json("summary.json", &json!({ "config": cfg, "runs": reports }))?;
            rec.finish()
        }
        Command::EvaluateLocal { suite, common } => evaluate_suite("evaluate-local", &suite, &common, true),
        Command::EvaluateGlobal { suite, common } => evaluate_suite("evaluate-global", &suite, &common, false),
        Command::OracleDiff { scenario, positions, baseline_seed, cell, common } => {
            let mut rec = start("oracle-diff", &common)?;
            let s = load_scenario(&mut rec, &scenario)?;
            let x = positions_or_baseline(&s, positions.as_deref(), baseline_seed)?;
            if !(cell > 0.0) {
                return Err(Error::Config("oracle cell must be positive".into()));
            }
            let sim = simulate(&s, &x)?;
            let oracle = ctm_simulate(&s, &x, &OracleRun::with_cell(cell, &s.fd))?;
            let c = compare_fields(&sim, &oracle, SHOCK_JUMP, SHOCK_DILATION);
            rec.write_json("oracle_diff.json", &json!({ "positions": x, "cell": cell, "comparison": c }))?;
            println!("max |diff| {} over {} cells ({} excluded near shocks)", sig9(c.max_abs_diff), c.compared, c.excluded);
            rec.finish()
        }
        Command::ExportScenarios { common } => {
            let mut rec = start("export-scenarios", &common)?;
            rec.write("urban_base.json", &(urban_base().to_json() + "\n"))?;
            rec.write("ride_hailing.json", &(ride_hailing().to_json() + "\n"))?;
            for class in ScenarioClass::ALL {
                let name = class.name().to_lowercase();
                rec.write_json(&format!("{name}_template.json"), &class.template())?;
                std::fs::create_dir_all(rec.cfg.out.join(&name))?;
                for (i, s) in class.sub_scenarios().iter().enumerate() {
                    rec.write(&format!("{name}/sub{i:02}.json"), &(s.to_json() + "\n"))?;
                }
            }
            rec.finish()
        }
    }
}

fn split<T>(list: &Option<String>, parse: impl Fn(&str) -> Result<T>) -> Result<Option<Vec<T>>> {
    list.as_ref().map(|l| l.split(',').map(|p| parse(p.trim())).collect()).transpose()
}

fn evaluate_suite(name: &str, args: &SuiteArgs, common: &Common, local: bool) -> Result<()> {
    let mut rec = start(name, common)?;
    let mut spec = rec.cfg.file.experiment.clone().unwrap_or_default();
    spec.seed = rec.cfg.seed;
    if let Some(ga) = &rec.cfg.file.ga {
        spec.ga = ga.clone();
    }
    if let Some(sc) = &rec.cfg.file.surrogate {
        spec.surrogate = sc.clone();
    }
    if let Some(c) = split(&args.classes, ScenarioClass::parse)? {
        spec.classes = c;
    }
    if let Some(f) = split(&args.families, Family::parse)? {
        spec.families = f;
    }
    if let Some(sizes) = split(&args.sizes, |p| p.parse::<usize>().map_err(|_| Error::Config(format!("bad size {p:?}"))))? {
        if local {
            spec.local_sizes = sizes;
        } else {
            spec.global_sizes = sizes;
        }
    }
    if let Some(r) = args.replications {
        spec.replications = r;
    }
    if let Some(m) = args.max_sub_scenarios {
        spec.max_sub_scenarios = m;
    }
    if args.no_mean_error || !local {
        spec.mean_error = false;
    }
    validate_spec(&spec)?;
    let fixtures = build_fixtures(&spec)?;
    let results = if local { run_local_suite(&spec, &fixtures)? } else { run_global_suite(&spec, &fixtures)? };
    rec.write("results.csv", &results.to_csv())?;
    rec.write_json("experiment.json", &spec)?;
    println!("{} result cells", results.cells.len());
    rec.finish()
}

fn validate_spec(spec: &ExperimentSpec) -> Result<()> {
    if spec.classes.is_empty() || spec.families.is_empty() {
        return Err(Error::Config("experiment needs at least one class and one family".into()));
    }
    if spec.replications == 0 {
        return Err(Error::Config("replications must be positive".into()));
    }
    spec.ga.validate()
}
