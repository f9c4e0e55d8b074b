//! Training and augmentation settings, readable from and echoable to `key=value` text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::models::{ArchConfig, NUM_CLASSES};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Normal,
    Uniform,
}

/// How fake-batch labels are chosen in a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FakeLabels {
    CopyReal,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Samples per class written at the end of each epoch.
    pub sample_grid: usize,
    /// Write checkpoints every this many epochs; 0 only at the end.
    pub checkpoint_every: usize,
    pub noise: NoiseKind,
    pub fake_labels: FakeLabels,
    pub zero_disc_head: bool,
    pub spectral_iterations: usize,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 64,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            sample_grid: 4,
            checkpoint_every: 0,
            noise: NoiseKind::Normal,
            fake_labels: FakeLabels::CopyReal,
            zero_disc_head: false,
            spectral_iterations: 1,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.spectral_iterations == 0 {
            return Err(Error::Config(
                "epochs, batch_size and spectral_iterations must be positive".into(),
            ));
        }
        if !(self.lr.is_finite()
            && self.lr > 0.0
            && self.adam_epsilon.is_finite()
            && self.adam_epsilon > 0.0)
        {
            return Err(Error::Config("lr and adam_epsilon must be positive".into()));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{k}={b} outside [0, 1)")));
            }
        }
        self.arch.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetPolicy {
    MatchMax,
    Explicit([usize; NUM_CLASSES]),
}

impl fmt::Display for TargetPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetPolicy::MatchMax => write!(f, "match-max"),
            TargetPolicy::Explicit(t) => {
                let parts: Vec<String> = t.iter().map(usize::to_string).collect();
                write!(f, "explicit:{}", parts.join(","))
            }
        }
    }
}

impl std::str::FromStr for TargetPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "match-max" {
            return Ok(TargetPolicy::MatchMax);
        }
        let Some(rest) = s.strip_prefix("explicit:") else {
            return Err(Error::Config(format!(
                "policy `{s}`: expected match-max or explicit:n0,...,n6"
            )));
        };
        let nums: Vec<usize> = rest
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("policy `{s}` has a non-integer target")))?;
        let targets: [usize; NUM_CLASSES] = nums
            .try_into()
            .map_err(|_| Error::Config(format!("policy `{s}` needs {NUM_CLASSES} targets")))?;
        Ok(TargetPolicy::Explicit(targets))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSettings {
    pub tau: f64,
    pub policy: TargetPolicy,
    /// Draw budget per needed sample.
    pub oversample: usize,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            tau: 0.5,
            policy: TargetPolicy::MatchMax,
            oversample: 50,
        }
    }
}

/// Every tunable value of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub augment: AugmentSettings,
}

pub const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "adam_epsilon",
    "seed",
    "sample_grid",
    "checkpoint_every",
    "noise",
    "fake_labels",
    "zero_disc_head",
    "spectral_iterations",
    "latent_dim",
    "base_filters",
    "image_size",
    "generator_activation",
    "discriminator_slope",
    "dropout",
    "tau",
    "policy",
    "oversample",
];

pub const AUGMENT_KEYS: &[&str] = &["tau", "policy", "oversample"];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_activation(value: &str) -> Result<Activation> {
    if value == "relu" {
        return Ok(Activation::Relu);
    }
    if let Some(a) = value.strip_prefix("leaky_relu:") {
        return Ok(Activation::LeakyRelu(parse("generator_activation", a)?));
    }
    Err(Error::Config(format!(
        "generator_activation `{value}`: expected relu or leaky_relu:<slope>"
    )))
}

fn format_activation(a: Activation) -> String {
    match a {
        Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
        Activation::Relu => "relu".into(),
        Activation::Tanh => "tanh".into(),
        Activation::Sigmoid => "sigmoid".into(),
    }
}

impl RunConfig {
    /// Applies one `key=value` setting; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let a = &mut self.augment;
        match key {
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_epsilon" => t.adam_epsilon = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "sample_grid" => t.sample_grid = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "noise" => {
                t.noise = match value {
                    "normal" => NoiseKind::Normal,
                    "uniform" => NoiseKind::Uniform,
                    _ => {
                        return Err(Error::Config(format!(
                            "noise `{value}`: expected normal or uniform"
                        )))
                    }
                }
            }
            "fake_labels" => {
                t.fake_labels = match value {
                    "copy" => FakeLabels::CopyReal,
                    "uniform" => FakeLabels::Uniform,
                    _ => {
                        return Err(Error::Config(format!(
                            "fake_labels `{value}`: expected copy or uniform"
                        )))
                    }
                }
            }
            "zero_disc_head" => t.zero_disc_head = parse(key, value)?,
            "spectral_iterations" => t.spectral_iterations = parse(key, value)?,
            "latent_dim" => t.arch.latent_dim = parse(key, value)?,
            "base_filters" => t.arch.base_filters = parse(key, value)?,
            "image_size" => t.arch.image_size = parse(key, value)?,
            "generator_activation" => t.arch.generator_activation = parse_activation(value)?,
            "discriminator_slope" => t.arch.discriminator_slope = parse(key, value)?,
            "dropout" => t.arch.dropout = parse(key, value)?,
            "tau" => a.tau = parse(key, value)?,
            "policy" => a.policy = value.parse()?,
            "oversample" => a.oversample = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.augment.tau) {
            return Err(Error::Config(format!(
                "tau={} outside [0, 1)",
                self.augment.tau
            )));
        }
        if self.augment.oversample == 0 {
            return Err(Error::Config("oversample must be positive".into()));
        }
        Ok(())
    }

    /// Every effective value, in [`KEYS`] order; parsing the output reproduces `self`.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let a = &self.augment;
        let values: BTreeMap<&str, String> = [
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("adam_epsilon", t.adam_epsilon.to_string()),
            ("seed", t.seed.to_string()),
            ("sample_grid", t.sample_grid.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            (
                "noise",
                match t.noise {
                    NoiseKind::Normal => "normal",
                    NoiseKind::Uniform => "uniform",
                }
                .into(),
            ),
            (
                "fake_labels",
                match t.fake_labels {
                    FakeLabels::CopyReal => "copy",
                    FakeLabels::Uniform => "uniform",
                }
                .into(),
            ),
            ("zero_disc_head", t.zero_disc_head.to_string()),
            ("spectral_iterations", t.spectral_iterations.to_string()),
            ("latent_dim", t.arch.latent_dim.to_string()),
            ("base_filters", t.arch.base_filters.to_string()),
            ("image_size", t.arch.image_size.to_string()),
            (
                "generator_activation",
                format_activation(t.arch.generator_activation),
            ),
            (
                "discriminator_slope",
                t.arch.discriminator_slope.to_string(),
            ),
            ("dropout", t.arch.dropout.to_string()),
            ("tau", a.tau.to_string()),
            ("policy", a.policy.to_string()),
            ("oversample", a.oversample.to_string()),
        ]
        .into_iter()
        .collect();
        KEYS.iter().map(|&k| (k, values[k].clone())).collect()
    }

    /// The training subset of [`RunConfig::to_pairs`].
    pub fn train_pairs(&self) -> Vec<(&'static str, String)> {
        self.to_pairs()
            .into_iter()
            .filter(|(k, _)| !AUGMENT_KEYS.contains(k))
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
