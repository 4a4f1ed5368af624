//! Surrogate models of the objective behind a common fit/predict interface.

mod forest;
mod gp;
mod linalg;
mod linear;
mod nn;
mod rbnn;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::sampling::Dataset;

pub use forest::{Forest, ForestConfig, Node, Tree};
pub use gp::{nelder_mead, GpConfig, GpModel};
pub use linear::{LinearModel, QuadraticModel};
pub use nn::{NnConfig, NnModel};
pub use rbnn::{kmeans, RbnnConfig, RbnnModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    LR,
    PR,
    NN,
    RBNN,
    RTE,
    GPR,
}

impl Family {
    pub const ALL: [Family; 6] = [Family::LR, Family::PR, Family::NN, Family::RBNN, Family::RTE, Family::GPR];

    pub fn name(self) -> &'static str {
        match self {
            Family::LR => "LR",
            Family::PR => "PR",
            Family::NN => "NN",
            Family::RBNN => "RBNN",
            Family::RTE => "RTE",
            Family::GPR => "GPR",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown surrogate family {s}")))
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of all families.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub nn: NnConfig,
    pub rbnn: RbnnConfig,
    pub rte: ForestConfig,
    pub gpr: GpConfig,
}

/// Per-column standardization of inputs plus the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let s = var.sqrt();
    (m, if s > 1e-12 * (1.0 + m.abs()) { s } else { 1.0 })
}

impl Scaler {
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Self {
        let p = x[0].len();
        let (mean, scale) = (0..p).map(|j| mean_std(x.iter().map(move |r| r[j]))).unzip();
        let (y_mean, y_scale) = mean_std(y.iter().copied());
        Scaler { mean, scale, y_mean, y_scale }
    }

    pub fn input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn target(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn output(&self, t: f64) -> f64 {
        self.y_mean + self.y_scale * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Linear(LinearModel),
    Quadratic(QuadraticModel),
    Network(NnModel),
    RadialBasis(RbnnModel),
    Forest(Forest),
    Gaussian(GpModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub n: usize,
    pub seed: u64,
    pub fit_seconds: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSurrogate {
    pub family: Family,
    pub columns: Vec<String>,
    pub scaler: Scaler,
    pub params: ModelParams,
    pub meta: TrainMeta,
}

pub const FORMAT_VERSION: u32 = 1;

/// Hash of the persisted layout; bump with any change to the model types.
pub fn schema_hash() -> String {
    sha256_hex(b"curbflow-surrogate:v1:LR,PR,NN,RBNN,RTE,GPR:scaler(mean,scale,y_mean,y_scale)")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    version: u32,
    schema: String,
    model: TrainedSurrogate,
}

pub fn fit(family: Family, data: &Dataset, cfg: &SurrogateConfig, seed: u64) -> Result<TrainedSurrogate> {
    if data.is_empty() {
        return Err(Error::SampleSize("cannot fit a surrogate to an empty dataset".into()));
    }
    let start = web_time::Instant::now();
    let scaler = Scaler::fit(&data.inputs, &data.targets);
    let z: Vec<Vec<f64>> = data.inputs.iter().map(|r| scaler.input(r)).collect();
    let y: Vec<f64> = data.targets.iter().map(|&t| scaler.target(t)).collect();
    let mut rng = crate::rng(seed);
    let mut warnings = Vec::new();
    let mut ridge_note = |ridged: bool| {
        if ridged {
            log::warn!("{family}: singular normal equations, ridge 1e-8 applied");
            warnings.push("singular normal equations; ridge 1e-8 applied".to_string());
        }
    };
    let params = match family {
        Family::LR => {
            let (m, r) = LinearModel::fit(&z, &y)?;
            ridge_note(r);
            ModelParams::Linear(m)
        }
        Family::PR => {
            let (m, r) = QuadraticModel::fit(&z, &y)?;
            ridge_note(r);
            ModelParams::Quadratic(m)
        }
        Family::NN => ModelParams::Network(NnModel::fit(&z, &y, &cfg.nn, &mut rng)),
        Family::RBNN => {
            let (m, r) = RbnnModel::fit(&z, &y, &cfg.rbnn, &mut rng)?;
            ridge_note(r);
            ModelParams::RadialBasis(m)
        }
        Family::RTE => ModelParams::Forest(Forest::fit(&z, &y, &cfg.rte, &mut rng)),
        Family::GPR => {
            if z.len() > cfg.gpr.max_points {
                warnings.push(format!("trained on a random subset of {} of {} rows", cfg.gpr.max_points, z.len()));
            }
            let m = GpModel::fit(&z, &y, &cfg.gpr, &mut rng)?;
            if m.jitter > 0.0 {
                warnings.push(format!("kernel jitter {} added", m.jitter));
            }
            ModelParams::Gaussian(m)
        }
    };
    Ok(TrainedSurrogate {
        family,
        columns: data.meta.columns.clone(),
        scaler,
        params,
        meta: TrainMeta { n: data.len(), seed, fit_seconds: start.elapsed().as_secs_f64(), warnings },
    })
}

impl TrainedSurrogate {
    pub fn n_inputs(&self) -> usize {
        self.scaler.mean.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_inputs() {
            return Err(Error::Schema(format!("expected {} inputs, got {}", self.n_inputs(), x.len())));
        }
        Ok(self.predict_unchecked(x))
    }

    /// Prediction without the dimension check, for optimizer inner loops.
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let z = self.scaler.input(x);
        let t = match &self.params {
            ModelParams::Linear(m) => m.predict(&z),
            ModelParams::Quadratic(m) => m.predict(&z),
            ModelParams::Network(m) => m.predict(&z),
            ModelParams::RadialBasis(m) => m.predict(&z),
            ModelParams::Forest(m) => m.predict(&z),
            ModelParams::Gaussian(m) => m.predict(&z),
        };
        self.scaler.output(t)
    }

    /// Predictive variance in objective units; GPR only.
    pub fn predict_variance(&self, x: &[f64]) -> Result<Option<f64>> {
        match &self.params {
            ModelParams::Gaussian(m) => {
                if x.len() != self.n_inputs() {
                    return Err(Error::Schema("input dimension mismatch".into()));
                }
                let v = m.variance(&self.scaler.input(x))?;
                Ok(Some(v * self.scaler.y_scale * self.scaler.y_scale))
            }
            _ => Ok(None),
        }
    }

    /// Linear coefficients in original units `(intercept, slopes)`; LR only.
    pub fn linear_coefficients(&self) -> Option<(f64, Vec<f64>)> {
        let ModelParams::Linear(m) = &self.params else { return None };
        let s = &self.scaler;
        let slopes: Vec<f64> = m.weights.iter().zip(&s.scale).map(|(w, sc)| s.y_scale * w / sc).collect();
        let intercept = s.y_mean + s.y_scale * m.intercept - slopes.iter().zip(&s.mean).map(|(b, m)| b * m).sum::<f64>();
        Some((intercept, slopes))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Envelope { version: FORMAT_VERSION, schema: schema_hash(), model: self.clone() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.version != FORMAT_VERSION || env.schema != schema_hash() {
            return Err(Error::Schema(format!("unsupported model file version {} / schema {}", env.version, env.schema)));
        }
        Ok(env.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{DatasetMeta, SampleMode};
    use rand::Rng as _;

    pub(crate) fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let p = x[0].len();
        Dataset {
            meta: DatasetMeta {
                mode: SampleMode::Local,
                columns: crate::sampling::position_columns(p),
                seed: 0,
                scenario_hash: String::new(),
                rows: y.len(),
            },
            inputs: x,
            targets: y,
        }
    }

    fn random_rows(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng(seed);
        (0..n).map(|_| (0..p).map(|_| 14.0 * rng.gen_range(3..=22) as f64).collect()).collect()
    }

    #[test]
    fn lr_recovers_coefficients() {
        let x = random_rows(60, 4, 1);
        let beta = [0.3, -1.2, 0.05, 2.0];
        let y: Vec<f64> = x.iter().map(|r| 7.5 + r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()).collect();
        let m = fit(Family::LR, &dataset(x, y), &SurrogateConfig::default(), 0).unwrap();
        let (c, s) = m.linear_coefficients().unwrap();
        assert!((c - 7.5).abs() < 1e-8, "{c}");
        for (a, b) in s.iter().zip(beta) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn pr_at_mean_is_intercept() {
        let x = random_rows(80, 3, 2);
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1] / 100.0 - r[2]).collect();
        let m = fit(Family::PR, &dataset(x, y), &SurrogateConfig::default(), 0).unwrap();
        let ModelParams::Quadratic(q) = &m.params else { panic!() };
        let at_mean = m.predict(&m.scaler.mean.clone()).unwrap();
        assert!((at_mean - m.scaler.output(q.intercept)).abs() < 1e-9);
    }

    #[test]
    fn rte_constant_targets() {
        let x = random_rows(50, 4, 3);
        let m = fit(Family::RTE, &dataset(x, vec![3.25; 50]), &SurrogateConfig::default(), 9).unwrap();
        for r in random_rows(20, 4, 4) {
            assert_eq!(m.predict(&r).unwrap(), 3.25);
        }
    }

    #[test]
    fn gpr_interpolates_without_noise() {
        let x = random_rows(40, 2, 5);
        let mut uniq: Vec<Vec<f64>> = Vec::new();
        for r in x {
            if !uniq.contains(&r) {
                uniq.push(r);
            }
        }
        let y: Vec<f64> = uniq.iter().map(|r| (r[0] / 50.0).sin() + r[1] / 100.0).collect();
        let cfg = SurrogateConfig { gpr: GpConfig { noise: Some(1e-12), ..Default::default() }, ..Default::default() };
        let m = fit(Family::GPR, &dataset(uniq.clone(), y.clone()), &cfg, 0).unwrap();
        for (r, t) in uniq.iter().zip(&y) {
            assert!((m.predict(r).unwrap() - t).abs() < 1e-6);
        }
    }

    #[test]
    fn gpr_reverts_to_mean_far_away() {
        let x = random_rows(30, 2, 6);
        let y: Vec<f64> = x.iter().map(|r| r[0] - 0.5 * r[1]).collect();
        let m = fit(Family::GPR, &dataset(x, y), &SurrogateConfig::default(), 0).unwrap();
        let ModelParams::Gaussian(g) = &m.params else { panic!() };
        let far: Vec<f64> = m.scaler.scale.iter().map(|s| 1e3 * g.length_scales[0] * s).collect();
        assert!((m.predict(&far).unwrap() - m.scaler.y_mean).abs() < 1e-3 * m.scaler.y_scale);
        assert!(g.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn dimension_mismatch_is_schema_error() {
        let x = random_rows(20, 2, 7);
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let m = fit(Family::LR, &dataset(x, y), &SurrogateConfig::default(), 0).unwrap();
        assert!(matches!(m.predict(&[1.0]), Err(Error::Schema(_))));
    }

    #[test]
    fn every_family_round_trips_bit_identically() {
        let x = random_rows(60, 3, 8);
        let y: Vec<f64> = x.iter().map(|r| (r[0] - 150.0).abs() + r[1] * r[2] / 300.0).collect();
        let d = dataset(x, y);
        let probes = random_rows(10, 3, 9);
        for fam in Family::ALL {
            let m = fit(fam, &d, &SurrogateConfig::default(), 1).unwrap();
            let back = TrainedSurrogate::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m, "{fam}");
            for p in &probes {
                assert_eq!(back.predict(p).unwrap().to_bits(), m.predict(p).unwrap().to_bits());
            }
            let again = fit(fam, &d, &SurrogateConfig::default(), 1).unwrap();
            assert_eq!(again.params, m.params, "{fam} not deterministic");
        }
    }
}
