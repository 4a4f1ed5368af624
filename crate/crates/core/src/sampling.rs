//! Training and test sample generation for the surrogates.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::presets::ScenarioTemplate;
use crate::problem::{candidate_grid, evaluate};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Local,
    Global,
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub mode: SampleMode,
    /// Input columns; positions first, then scenario parameters.
    pub columns: Vec<String>,
    pub seed: u64,
    pub scenario_hash: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.meta.columns.len()
    }

    /// Appends the same extra features to every row, turning a local sample
    /// into a test set for global models.
    pub fn with_context(&self, names: &[String], values: &[f64]) -> Dataset {
        let mut d = self.clone();
        d.meta.mode = SampleMode::Global;
        d.meta.columns.extend(names.iter().cloned());
        for row in &mut d.inputs {
            row.extend_from_slice(values);
        }
        d
    }

    /// Concatenates datasets with identical columns.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::SampleSize("nothing to concatenate".into()))?;
        let mut d = first.clone();
        for p in &parts[1..] {
            if p.meta.columns != d.meta.columns {
                return Err(Error::Schema("datasets have different columns".into()));
            }
            d.inputs.extend(p.inputs.iter().cloned());
            d.targets.extend(p.targets.iter().copied());
        }
        d.meta.rows = d.targets.len();
        Ok(d)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.meta.columns.join(",");
        s.push_str(",f\n");
        for (row, f) in self.inputs.iter().zip(&self.targets) {
            for v in row {
                s.push_str(&format!("{v},"));
            }
            s.push_str(&format!("{f}\n"));
        }
        s
    }

    /// Writes `path` and a JSON sidecar with the same stem.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Schema("empty dataset file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() != meta.columns.len() + 1 || cols[..meta.columns.len()] != meta.columns[..] {
            return Err(Error::Schema("dataset header does not match its sidecar".into()));
        }
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let mut vals = vals.map_err(|e| Error::Schema(format!("row {}: {e}", i + 1)))?;
            if vals.len() != cols.len() {
                return Err(Error::Schema(format!("row {} has {} fields", i + 1, vals.len())));
            }
            targets.push(vals.pop().unwrap());
            inputs.push(vals);
        }
        if targets.len() != meta.rows {
            return Err(Error::Schema(format!("sidecar says {} rows, file has {}", meta.rows, targets.len())));
        }
        Ok(Dataset { meta, inputs, targets })
    }
}

pub fn position_columns(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Draws `n` distinct index combinations, one index per grid axis.
pub fn draw_distinct(grid: &[Vec<f64>], n: usize, rng: &mut crate::Rng) -> Result<Vec<Vec<f64>>> {
    let total = grid.iter().try_fold(1usize, |acc, g| acc.checked_mul(g.len()));
    if total.is_some_and(|t| n > t) {
        return Err(Error::SampleSize(format!(
            "{n} samples requested but only {} distinct combinations exist",
            total.unwrap()
        )));
    }
    let mut seen = HashSet::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let cap = 1000 * n.max(1);
    while rows.len() < n {
        let idx: Vec<usize> = grid.iter().map(|g| crate::index(rng, g.len())).collect();
        attempts += 1;
        if seen.insert(idx.clone()) {
            rows.push(idx.iter().zip(grid).map(|(&i, g)| g[i]).collect());
        } else if attempts > cap {
            return Err(Error::SampleSize(format!("could not draw {n} distinct combinations")));
        }
    }
    Ok(rows)
}

/// Random distinct stop-position sets for one fixed scenario, scored by simulation.
pub fn sample_local(scenario: &Scenario, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::SampleSize("at least one sample is required".into()));
    }
    let grid = candidate_grid(scenario)?;
    let inputs = draw_distinct(&grid, n, &mut crate::rng(seed))?;
    let targets = crate::par_map(&inputs, |x| evaluate(x, scenario).map(|s| s.objective))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            mode: SampleMode::Local,
            columns: position_columns(grid.len()),
            seed,
            scenario_hash: sha256_hex(scenario.to_json().as_bytes()),
            rows: n,
        },
        inputs,
        targets,
    })
}

/// Random stop positions together with random scenario parameters drawn from
/// the template; each row carries its parameter encoding.
pub fn sample_global(template: &ScenarioTemplate, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::SampleSize("at least one sample is required".into()));
    }
    let mut rng = crate::rng(seed);
    let mut jobs = Vec::with_capacity(n);
    for _ in 0..n {
        let s = template.draw(&mut rng);
        let grid = candidate_grid(&s)?;
        let x: Vec<f64> = grid.iter().map(|g| g[crate::index(&mut rng, g.len())]).collect();
        jobs.push((s, x));
    }
    let rows = crate::par_map(&jobs, |(s, x)| -> Result<(Vec<f64>, f64)> {
        let f = evaluate(x, s)?.objective;
        let mut row = x.clone();
        row.extend(template.encode(s)?);
        Ok((row, f))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut columns = position_columns(template.n_approaching);
    columns.extend(template.feature_names());
    let template_json = serde_json::to_string(template)?;
    let (inputs, targets) = rows.into_iter().unzip();
    Ok(Dataset {
        meta: DatasetMeta {
            mode: SampleMode::Global,
            columns,
            seed,
            scenario_hash: sha256_hex(template_json.as_bytes()),
            rows: n,
        },
        inputs,
        targets,
    })
}
