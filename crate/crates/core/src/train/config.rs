use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::{LossWeights, NormMode, Similarity};
use crate::nets::{NetworkSpec, TEACHER_SK_UNET, STUDENT_MOBILE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    Constant,
    Cosine,
}

/// Network size preset: the full design or the desk-scale one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Full,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    F32,
    F64,
}

/// Every knob of a training run. Serialized as flat `key = value` text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `teacher`, `scratch`, `distill`, `softkd` or `fsd_only`.
    pub mode: String,
    pub student_variant: String,
    pub teacher_variant: String,
    pub preset: Preset,
    pub depth: Option<usize>,
    pub base_channels: Option<usize>,
    /// `None` taps every level.
    pub tap_levels: Option<Vec<usize>>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub similarity: Similarity,
    pub norm: NormMode,
    pub temperature: f64,
    pub projector_hidden: usize,
    pub augment: bool,
    pub threshold: f64,
    pub precision: Precision,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: "distill".into(),
            student_variant: STUDENT_MOBILE.into(),
            teacher_variant: TEACHER_SK_UNET.into(),
            preset: Preset::Full,
            depth: None,
            base_channels: None,
            tap_levels: None,
            lr: 1e-3,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            schedule: Schedule::Constant,
            weights: LossWeights::default(),
            similarity: Similarity::Outer,
            norm: NormMode::Mean,
            temperature: 4.0,
            projector_hidden: 256,
            augment: true,
            threshold: 0.5,
            precision: Precision::F32,
            eval_batch: 16,
        }
    }
}

pub const MODES: [&str; 5] = ["teacher", "scratch", "distill", "softkd", "fsd_only"];

fn bad(key: &str, expected: &str, value: &str) -> Error {
    Error::Config(format!("field `{key}`: expected {expected}, got `{value}`"))
}

fn num<T: std::str::FromStr>(key: &str, expected: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, expected, v))
}

fn auto<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, "an integer or `auto`", v).map(Some)
    }
}

fn show_auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".into(), |v| v.to_string())
}

impl TrainConfig {
    /// All keys in serialization order.
    pub const KEYS: [&'static str; 27] = [
        "mode",
        "student_variant",
        "teacher_variant",
        "preset",
        "depth",
        "base_channels",
        "tap_levels",
        "lr",
        "epochs",
        "batch_size",
        "seed",
        "optimizer",
        "momentum",
        "schedule",
        "w_ce",
        "w_fsd",
        "w_asd",
        "w_rec",
        "similarity",
        "norm",
        "temperature",
        "projector_hidden",
        "augment",
        "threshold",
        "precision",
        "eval_batch",
        "network",
    ];

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "mode" => {
                if !MODES.contains(&v) {
                    return Err(bad(key, &format!("one of {}", MODES.join("|")), v));
                }
                self.mode = v.into();
            }
            "student_variant" => self.student_variant = v.into(),
            "teacher_variant" => self.teacher_variant = v.into(),
            "preset" => {
                self.preset = match v {
                    "full" => Preset::Full,
                    "tiny" => Preset::Tiny,
                    _ => return Err(bad(key, "full|tiny", v)),
                }
            }
            "depth" => self.depth = auto(key, v)?,
            "base_channels" => self.base_channels = auto(key, v)?,
            "tap_levels" => {
                self.tap_levels = if v == "all" {
                    None
                } else {
                    Some(
                        v.split(',')
                            .map(|t| num(key, "`all` or a comma-separated list of levels", t.trim()))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "lr" => self.lr = num(key, "a number", v)?,
            "epochs" => self.epochs = num(key, "an integer", v)?,
            "batch_size" => self.batch_size = num(key, "an integer", v)?,
            "seed" => self.seed = num(key, "an unsigned integer", v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(bad(key, "adam|sgd", v)),
                }
            }
            "momentum" => self.momentum = num(key, "a number", v)?,
            "schedule" => {
                self.schedule = match v {
                    "constant" => Schedule::Constant,
                    "cosine" => Schedule::Cosine,
                    _ => return Err(bad(key, "constant|cosine", v)),
                }
            }
            "w_ce" => self.weights.w_ce = num(key, "a number", v)?,
            "w_fsd" => self.weights.w_fsd = num(key, "a number", v)?,
            "w_asd" => self.weights.w_asd = num(key, "a number", v)?,
            "w_rec" => self.weights.w_rec = num(key, "a number", v)?,
            "similarity" => self.similarity = Similarity::parse(v).map_err(|_| bad(key, "outer|direct", v))?,
            "norm" => self.norm = NormMode::parse(v).map_err(|_| bad(key, "mean|raw", v))?,
            "temperature" => self.temperature = num(key, "a number", v)?,
            "projector_hidden" => self.projector_hidden = num(key, "an integer", v)?,
            "augment" => self.augment = num(key, "true|false", v)?,
            "threshold" => self.threshold = num(key, "a number", v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(bad(key, "f32|f64", v)),
                }
            }
            "eval_batch" => self.eval_batch = num(key, "an integer", v)?,
            // derived and written for reference only
            "network" => {}
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "mode" => self.mode.clone(),
            "student_variant" => self.student_variant.clone(),
            "teacher_variant" => self.teacher_variant.clone(),
            "preset" => match self.preset {
                Preset::Full => "full".into(),
                Preset::Tiny => "tiny".into(),
            },
            "depth" => show_auto(self.depth),
            "base_channels" => show_auto(self.base_channels),
            "tap_levels" => match &self.tap_levels {
                None => "all".into(),
                Some(l) => l.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
            },
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "optimizer" => match self.optimizer {
                OptimizerKind::Adam => "adam".into(),
                OptimizerKind::Sgd => "sgd".into(),
            },
            "momentum" => self.momentum.to_string(),
            "schedule" => match self.schedule {
                Schedule::Constant => "constant".into(),
                Schedule::Cosine => "cosine".into(),
            },
            "w_ce" => self.weights.w_ce.to_string(),
            "w_fsd" => self.weights.w_fsd.to_string(),
            "w_asd" => self.weights.w_asd.to_string(),
            "w_rec" => self.weights.w_rec.to_string(),
            "similarity" => self.similarity.name().into(),
            "norm" => self.norm.name().into(),
            "temperature" => self.temperature.to_string(),
            "projector_hidden" => self.projector_hidden.to_string(),
            "augment" => self.augment.to_string(),
            "threshold" => self.threshold.to_string(),
            "precision" => match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            "eval_batch" => self.eval_batch.to_string(),
            "network" => self.network_variant().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k));
        }
        s
    }

    /// Short digest of the canonical text form.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.to_kv().as_bytes());
        crate::nets::hex(&d[..8])
    }

    pub fn validate(&self) -> Result<()> {
        if !MODES.contains(&self.mode.as_str()) {
            return Err(bad("mode", &MODES.join("|"), &self.mode));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(bad("lr", "a positive number", &self.lr.to_string()));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "an integer >= 1", "0"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "an integer >= 1", "0"));
        }
        if self.eval_batch == 0 {
            return Err(bad("eval_batch", "an integer >= 1", "0"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(bad("threshold", "a number in (0,1)", &self.threshold.to_string()));
        }
        if !(self.temperature > 0.0) {
            return Err(bad("temperature", "a positive number", &self.temperature.to_string()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(bad("momentum", "a number in [0,1)", &self.momentum.to_string()));
        }
        if self.projector_hidden == 0 {
            return Err(bad("projector_hidden", "an integer >= 1", "0"));
        }
        self.weights.validate()?;
        self.spec_for(&self.teacher_variant)?.validate()?;
        self.spec_for(&self.student_variant)?.validate()?;
        Ok(())
    }

    /// The variant trained by this run.
    pub fn network_variant(&self) -> &str {
        if self.mode == "teacher" {
            &self.teacher_variant
        } else {
            &self.student_variant
        }
    }

    /// Network spec for `variant` under this run's preset and overrides.
    pub fn spec_for(&self, variant: &str) -> Result<NetworkSpec> {
        let mut spec = match self.preset {
            Preset::Full => NetworkSpec::full(variant)?,
            Preset::Tiny => NetworkSpec::tiny(variant),
        };
        if let Some(d) = self.depth {
            spec.depth = d;
        }
        if let Some(b) = self.base_channels {
            spec.base_channels = b;
        }
        spec.tap_levels = match &self.tap_levels {
            Some(l) => l.clone(),
            None => (1..=spec.depth).collect(),
        };
        Ok(spec)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        self.spec_for(self.network_variant())
    }

    /// Desk-scale defaults: tiny networks, small batches.
    pub fn desk(mode: &str, student_variant: &str, seed: u64, epochs: usize) -> Self {
        Self {
            mode: mode.into(),
            student_variant: student_variant.into(),
            preset: Preset::Tiny,
            epochs,
            seed,
            batch_size: 8,
            projector_hidden: 64,
            ..Self::default()
        }
    }
}
