//! Flat `key = value` training configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. [`TrainConfig::to_text`] writes every key in a fixed
//! order and parses back to an equal config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::audio::NoiseConfig;
use crate::error::{Error, Result};
use crate::graph::PathConfig;
use crate::model::{ModelConfig, TaskMode};
use crate::objectives::LossWeights;
use crate::optim::DiffGradHyper;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub labeled_manifest: Option<PathBuf>,
    pub unlabeled_manifest: Option<PathBuf>,
    /// When absent, dev speakers are split off the labeled set.
    pub dev_manifest: Option<PathBuf>,
    /// Unlabeled-format manifest of noise clips; Gaussian noise when absent.
    pub noise_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ratio: usize,
    pub crop_len: usize,
    pub dev_fraction: f64,
    pub cache_audio: bool,
    pub optim: DiffGradHyper,
    pub weights: LossWeights,
    pub repr_path: bool,
    pub consistency_path: bool,
    pub repr_weight: f64,
    pub consistency_weight: f64,
    pub stop_gradient: bool,
    pub augment: bool,
    pub noise: NoiseConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            labeled_manifest: None,
            unlabeled_manifest: None,
            dev_manifest: None,
            noise_manifest: None,
            out_dir: PathBuf::from("runs"),
            seed: 0,
            epochs: 200,
            batch_size: 8,
            ratio: 4,
            crop_len: 64000,
            dev_fraction: 0.15,
            cache_audio: true,
            optim: DiffGradHyper::default(),
            weights: LossWeights::default(),
            repr_path: true,
            consistency_path: true,
            repr_weight: 1.0,
            consistency_weight: 1.0,
            stop_gradient: true,
            augment: true,
            noise: NoiseConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

/// Every accepted key, in serialization order.
pub const KEYS: &[&str] = &[
    "labeled_manifest",
    "unlabeled_manifest",
    "dev_manifest",
    "noise_manifest",
    "out_dir",
    "seed",
    "epochs",
    "batch_size",
    "ratio",
    "crop_len",
    "dev_fraction",
    "cache_audio",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "friction",
    "task_mode",
    "weight_height",
    "weight_age",
    "weight_gender",
    "repr_path",
    "consistency_path",
    "repr_weight",
    "consistency_weight",
    "stop_gradient",
    "augment",
    "snr_db_min",
    "snr_db_max",
    "noise_prob",
    "conv_channels",
    "kernel_sizes",
    "strides",
    "latent_dim",
    "regressor_hidden",
    "discriminator_hidden",
    "groupnorm_groups",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "labeled_manifest" => self.labeled_manifest = opt_path(v),
            "unlabeled_manifest" => self.unlabeled_manifest = opt_path(v),
            "dev_manifest" => self.dev_manifest = opt_path(v),
            "noise_manifest" => self.noise_manifest = opt_path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "ratio" => self.ratio = parse(key, v)?,
            "crop_len" => self.crop_len = parse(key, v)?,
            "dev_fraction" => self.dev_fraction = parse(key, v)?,
            "cache_audio" => self.cache_audio = parse_bool(key, v)?,
            "lr" => self.optim.lr = parse(key, v)?,
            "beta1" => self.optim.beta1 = parse(key, v)?,
            "beta2" => self.optim.beta2 = parse(key, v)?,
            "eps" => self.optim.eps = parse(key, v)?,
            "friction" => self.optim.friction = parse_bool(key, v)?,
            "task_mode" => self.model.task_mode = v.parse()?,
            "weight_height" => self.weights.alpha = parse(key, v)?,
            "weight_age" => self.weights.beta = parse(key, v)?,
            "weight_gender" => self.weights.gamma = parse(key, v)?,
            "repr_path" => self.repr_path = parse_bool(key, v)?,
            "consistency_path" => self.consistency_path = parse_bool(key, v)?,
            "repr_weight" => self.repr_weight = parse(key, v)?,
            "consistency_weight" => self.consistency_weight = parse(key, v)?,
            "stop_gradient" => self.stop_gradient = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "snr_db_min" => self.noise.snr_db_min = parse(key, v)?,
            "snr_db_max" => self.noise.snr_db_max = parse(key, v)?,
            "noise_prob" => self.noise.p_apply = parse(key, v)?,
            "conv_channels" => self.model.conv_channels = parse(key, v)?,
            "kernel_sizes" => self.model.kernel_sizes = parse_list(key, v)?,
            "strides" => self.model.strides = parse_list(key, v)?,
            "latent_dim" => self.model.latent_dim = parse(key, v)?,
            "regressor_hidden" => self.model.regressor_hidden = parse_list(key, v)?,
            "discriminator_hidden" => self.model.discriminator_hidden = parse_list(key, v)?,
            "groupnorm_groups" => self.model.groupnorm_groups = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "labeled_manifest" => show(&self.labeled_manifest),
            "unlabeled_manifest" => show(&self.unlabeled_manifest),
            "dev_manifest" => show(&self.dev_manifest),
            "noise_manifest" => show(&self.noise_manifest),
            "out_dir" => self.out_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "ratio" => self.ratio.to_string(),
            "crop_len" => self.crop_len.to_string(),
            "dev_fraction" => self.dev_fraction.to_string(),
            "cache_audio" => self.cache_audio.to_string(),
            "lr" => self.optim.lr.to_string(),
            "beta1" => self.optim.beta1.to_string(),
            "beta2" => self.optim.beta2.to_string(),
            "eps" => self.optim.eps.to_string(),
            "friction" => self.optim.friction.to_string(),
            "task_mode" => self.model.task_mode.to_string(),
            "weight_height" => self.weights.alpha.to_string(),
            "weight_age" => self.weights.beta.to_string(),
            "weight_gender" => self.weights.gamma.to_string(),
            "repr_path" => self.repr_path.to_string(),
            "consistency_path" => self.consistency_path.to_string(),
            "repr_weight" => self.repr_weight.to_string(),
            "consistency_weight" => self.consistency_weight.to_string(),
            "stop_gradient" => self.stop_gradient.to_string(),
            "augment" => self.augment.to_string(),
            "snr_db_min" => self.noise.snr_db_min.to_string(),
            "snr_db_max" => self.noise.snr_db_max.to_string(),
            "noise_prob" => self.noise.p_apply.to_string(),
            "conv_channels" => self.model.conv_channels.to_string(),
            "kernel_sizes" => join(&self.model.kernel_sizes),
            "strides" => join(&self.model.strides),
            "latent_dim" => self.model.latent_dim.to_string(),
            "regressor_hidden" => join(&self.model.regressor_hidden),
            "discriminator_hidden" => join(&self.model.discriminator_hidden),
            "groupnorm_groups" => self.model.groupnorm_groups.to_string(),
            _ => unreachable!("key list and getter out of sync: {key}"),
        }
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key `{k}` repeated", no + 1)));
            }
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key in a fixed order.
    pub fn to_text(&self) -> String {
        self.text_of(KEYS.iter().copied())
    }

    /// Like [`to_text`](Self::to_text) without `out_dir`: the part of the
    /// config that determines the trained parameters.
    pub fn training_text(&self) -> String {
        self.text_of(KEYS.iter().copied().filter(|k| *k != "out_dir"))
    }

    fn text_of<'a>(&self, keys: impl Iterator<Item = &'a str>) -> String {
        let mut s = String::new();
        for k in keys {
            writeln!(s, "{k} = {}", self.get(k)).expect("write to string");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.noise.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.ratio == 0 {
            return bad("epochs, batch_size and ratio must be >= 1".into());
        }
        if self.crop_len < self.model.min_input_len() {
            return bad(format!(
                "crop_len {} below the encoder minimum {}",
                self.crop_len,
                self.model.min_input_len()
            ));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return bad(format!("dev_fraction {} outside [0, 1)", self.dev_fraction));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return bad("optimizer needs lr > 0, betas in [0, 1), eps > 0".into());
        }
        let w = &self.weights;
        for (name, v) in [
            ("weight_height", w.alpha),
            ("weight_age", w.beta),
            ("weight_gender", w.gamma),
            ("repr_weight", self.repr_weight),
            ("consistency_weight", self.consistency_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Loss-path settings after applying the enable flags: a disabled path
    /// has weight 0.
    pub fn paths(&self) -> PathConfig {
        PathConfig {
            weights: self.weights,
            task_mode: self.model.task_mode,
            repr_weight: if self.repr_path { self.repr_weight } else { 0.0 },
            consistency_weight: if self.consistency_path { self.consistency_weight } else { 0.0 },
            stop_gradient: self.stop_gradient,
        }
    }

    pub fn uses_triplets(&self) -> bool {
        let p = self.paths();
        p.repr_weight != 0.0 || p.consistency_weight != 0.0
    }

    /// Reduced architecture for desk-scale runs: 32 channels, 64-dim latent.
    pub fn reduced_model() -> ModelConfig {
        ModelConfig {
            conv_channels: 32,
            latent_dim: 64,
            ..ModelConfig::default()
        }
    }

    pub fn task_mode(&self) -> TaskMode {
        self.model.task_mode
    }
}
