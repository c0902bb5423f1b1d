//! Run configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use femseg::augment::AugmentConfig;
use femseg::nn::{AdamConfig, TrainConfig, UNetConfig};
use femseg::postprocess::Connectivity;
use serde::Deserialize;

use crate::error::{CliError, CliResult, Context};

pub const WORKERS_ENV: &str = "FEMSEG_WORKERS";

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV with columns `case_id,image,mask,split`.
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Case-level parallelism; falls back to the environment, then 1.
    pub workers: Option<usize>,
    /// Network shape. Optional for `predict`, where the checkpoint supplies it
    /// and a stated value must agree.
    pub model: Option<ModelSection>,
    pub preprocess: PreprocessSection,
    pub train: TrainSection,
    pub augment: AugmentSection,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.csv"),
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: None,
            model: None,
            preprocess: PreprocessSection::default(),
            train: TrainSection::default(),
            augment: AugmentSection::default(),
            predict: PredictSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub levels: usize,
    pub base_features: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let u = UNetConfig::default();
        Self { levels: u.levels, base_features: u.base_features }
    }
}

impl ModelSection {
    pub fn unet(&self) -> UNetConfig {
        UNetConfig { levels: self.levels, base_features: self.base_features, ..UNetConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    /// Split each scan at mid-width and mirror the left half, one femur per input.
    pub split_femurs: bool,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self { split_femurs: true }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub patch: [usize; 3],
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_overlap: [usize; 3],
    pub prefetch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            patch: t.patch,
            epochs: t.epochs,
            iterations_per_epoch: t.iterations_per_epoch,
            learning_rate: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.eps,
            validation_overlap: t.validation_overlap,
            prefetch: t.prefetch,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub apply_probability: f64,
    pub brightness_range: [f64; 2],
    pub rotation_range_deg: [f64; 2],
    pub scaling_range: [f64; 2],
    pub elastic_alpha_range: [f64; 2],
    pub elastic_sigma_range: [f64; 2],
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        let p = |r: (f64, f64)| [r.0, r.1];
        Self {
            apply_probability: a.apply_probability,
            brightness_range: p(a.brightness_range),
            rotation_range_deg: p(a.rotation_range_deg),
            scaling_range: p(a.scaling_range),
            elastic_alpha_range: p(a.elastic_alpha_range),
            elastic_sigma_range: p(a.elastic_sigma_range),
        }
    }
}

impl AugmentSection {
    pub fn augment(&self) -> AugmentConfig {
        let p = |r: [f64; 2]| (r[0], r[1]);
        AugmentConfig {
            brightness_range: p(self.brightness_range),
            rotation_range_deg: p(self.rotation_range_deg),
            scaling_range: p(self.scaling_range),
            elastic_alpha_range: p(self.elastic_alpha_range),
            elastic_sigma_range: p(self.elastic_sigma_range),
            apply_probability: self.apply_probability,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub checkpoint: Option<PathBuf>,
    pub patch: [usize; 3],
    pub overlap: [usize; 3],
    pub largest_component: bool,
    /// 6 or 26.
    pub connectivity: u8,
    /// Manifest splits to run on.
    pub splits: Vec<String>,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            patch: [128; 3],
            overlap: [64; 3],
            largest_component: true,
            connectivity: 26,
            splits: vec!["test".into()],
        }
    }
}

impl PredictSection {
    pub fn connectivity(&self) -> Connectivity {
        if self.connectivity == 6 {
            Connectivity::Six
        } else {
            Connectivity::TwentySix
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Defaults to `<output_dir>/predictions`.
    pub predictions_dir: Option<PathBuf>,
    pub overlays: bool,
    /// Defaults to the prediction splits.
    pub splits: Option<Vec<String>>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { predictions_dir: None, overlays: true, splits: None }
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::Config(format!("empty override key `{key}`")))?;
    let mut t = table;
    for p in parts {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Parses a `key=value` override; the value is read as TOML, falling back to a bare string.
fn parse_override(s: &str) -> CliResult<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form key=value")))?;
    let value = match format!("v = {v}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Reads `path`, applies overrides and resolves relative paths against
    /// the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).config(format!("cannot read config {}", path.display()))?;
        let mut table: toml::Table = text.parse().config(format!("config {}", path.display()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut table, &k, v)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().config(format!("config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.output_dir = base.join(&cfg.output_dir);
        if let Some(c) = &mut cfg.predict.checkpoint {
            *c = base.join(&*c);
        }
        if let Some(d) = &mut cfg.evaluate.predictions_dir {
            *d = base.join(&*d);
        }
        Ok(cfg)
    }

    pub fn workers(&self) -> CliResult<usize> {
        let n = match self.workers {
            Some(n) => n,
            None => match std::env::var(WORKERS_ENV) {
                Ok(s) => s.trim().parse().config(format!("{WORKERS_ENV}={s}"))?,
                Err(_) => 1,
            },
        };
        if n == 0 {
            return Err(CliError::Config("worker count must be at least 1".into()));
        }
        Ok(n)
    }

    pub fn unet(&self) -> UNetConfig {
        self.model.unwrap_or_default().unet()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            patch: t.patch,
            epochs: t.epochs,
            iterations_per_epoch: t.iterations_per_epoch,
            adam: AdamConfig { lr: t.learning_rate, beta1: t.beta1, beta2: t.beta2, eps: t.epsilon },
            seed: self.seed,
            validation_overlap: t.validation_overlap,
            prefetch: t.prefetch,
        }
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.evaluate.predictions_dir.clone().unwrap_or_else(|| self.output_dir.join("predictions"))
    }

    pub fn evaluate_splits(&self) -> &[String] {
        self.evaluate.splits.as_deref().unwrap_or(&self.predict.splits)
    }

    pub fn validate_train(&self) -> CliResult<()> {
        self.workers()?;
        let unet = self.unet();
        unet.validate().config("[model]")?;
        self.train_config().validate(&unet).config("[train]")?;
        self.augment.augment().validate().config("[augment]")
    }

    /// Checks the inference settings against `unet` (from the checkpoint).
    pub fn validate_predict(&self, unet: &UNetConfig) -> CliResult<()> {
        self.workers()?;
        if let Some(m) = self.model {
            if m.unet() != *unet {
                return Err(CliError::Config(format!(
                    "checkpoint network ({} levels, {} base features) does not match [model] ({} levels, {} base features)",
                    unet.levels, unet.base_features, m.levels, m.base_features
                )));
            }
        }
        let p = &self.predict;
        let k = unet.divisor();
        if p.patch.iter().any(|d| *d == 0 || d % k != 0) {
            return Err(CliError::Config(format!("[predict] patch {:?} must be positive multiples of {k}", p.patch)));
        }
        if (0..3).any(|a| p.overlap[a] >= p.patch[a]) {
            return Err(CliError::Config("[predict] overlap must be smaller than the patch".into()));
        }
        if p.connectivity != 6 && p.connectivity != 26 {
            return Err(CliError::Config(format!("[predict] connectivity {} must be 6 or 26", p.connectivity)));
        }
        if p.splits.is_empty() {
            return Err(CliError::Config("[predict] splits is empty".into()));
        }
        Ok(())
    }
}
