//! Run configuration files.
//!
//! A run config is a TOML document holding everything a command or
//! experiment needs: data generation, splits, both training stages,
//! evaluation settings and the per-experiment knobs. Unknown keys are
//! rejected. The top-level `seed` overrides the seeds of the data and
//! training sections.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluate::DEFAULT_KS;
use crate::nn::BackbonePreset;
use crate::schema::SplitFractions;
use crate::synthdata::{CorruptionKind, CorruptionSpec, RenderStyle, SynthConfig};
use crate::teacher::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    /// Keep the epoch snapshot with the best validation F1@1.
    #[serde(default)]
    pub select_best: bool,
}

fn default_ks() -> Vec<usize> {
    DEFAULT_KS.to_vec()
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            ks: default_ks(),
            select_best: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSettings {
    /// Specs written as `kind:severity`.
    pub corruptions: Vec<String>,
    /// Corrupted unlabeled copies added to the student pool.
    pub corrupted_pool: usize,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        let corruptions = CorruptionKind::ALL
            .iter()
            .flat_map(|k| (1..=5).map(move |s| format!("{}:{s}", k.name())))
            .collect();
        Self {
            corruptions,
            corrupted_pool: 3000,
        }
    }
}

impl RobustnessSettings {
    pub fn specs(&self) -> Result<Vec<CorruptionSpec>> {
        self.corruptions
            .iter()
            .map(|s| s.parse().map_err(|e: Error| Error::Config(e.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossDomainSettings {
    /// Images rendered in the second domain; half feed the pool, half the test set.
    pub n_images: usize,
    pub style: RenderStyle,
}

impl Default for CrossDomainSettings {
    fn default() -> Self {
        Self {
            n_images: 2000,
            style: RenderStyle::Cluttered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    /// Pool sizes for the unlabeled-size sweep.
    pub unlabeled_sizes: Vec<usize>,
    /// Attribute type whose teacher is retrained in hyperparameter sweeps.
    pub attribute_type: String,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            unlabeled_sizes: vec![500, 2000, 5000],
            attribute_type: "pattern".into(),
        }
    }
}

/// Everything a run needs, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: SynthConfig,
    pub split: SplitFractions,
    /// Leading train records whose labels the teachers may use.
    pub labeled_count: usize,
    /// Extra unlabeled images of the same domain added to the student pool.
    #[serde(default)]
    pub extra_unlabeled: usize,
    /// Whether the teachers' labeled images are also in the student pool.
    #[serde(default = "yes")]
    pub include_teacher_images: bool,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub robustness: RobustnessSettings,
    #[serde(default)]
    pub cross_domain: CrossDomainSettings,
    #[serde(default)]
    pub sweep: SweepSettings,
}

fn yes() -> bool {
    true
}

impl RunConfigFile {
    /// The desk-scale configuration used by the experiments.
    pub fn standard() -> Self {
        let teacher = TrainConfig {
            dim: 64,
            learning_rate: 0.2,
            momentum: 0.0,
            epochs: 20,
            lr_decay_every_epochs: 4,
            batch_size: 32,
            samples_per_epoch: 1024,
            ..TrainConfig::desk_teacher()
        };
        let student = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 40,
            lr_decay_every_epochs: 15,
            samples_per_epoch: 4096,
            warmup_images: 4096,
            backbone_preset: BackbonePreset::Medium,
            ..teacher.clone()
        };
        Self {
            seed: 0,
            output_dir: None,
            data: SynthConfig {
                n_images: 5000,
                ..SynthConfig::default()
            },
            split: SplitFractions::new(0.7, 0.05, 0.25),
            labeled_count: 500,
            extra_unlabeled: 3000,
            include_teacher_images: true,
            teacher,
            student,
            eval: EvalSettings {
                select_best: true,
                ..EvalSettings::default()
            },
            robustness: RobustnessSettings::default(),
            cross_domain: CrossDomainSettings::default(),
            sweep: SweepSettings::default(),
        }
    }

    /// A tiny configuration for smoke tests; finishes in seconds.
    pub fn smoke() -> Self {
        let mut c = Self::standard();
        c.data = SynthConfig {
            image_size: 16,
            n_colors: 3,
            n_shapes: 2,
            n_patterns: 3,
            n_textures: 2,
            n_images: 160,
            ..SynthConfig::default()
        };
        c.split = SplitFractions::new(0.6, 0.1, 0.3);
        c.labeled_count = 60;
        c.extra_unlabeled = 40;
        c.teacher = TrainConfig {
            dim: 8,
            epochs: 2,
            batch_size: 8,
            samples_per_epoch: 32,
            lr_decay_every_epochs: 1,
            backbone_preset: BackbonePreset::Small,
            ..c.teacher
        };
        c.student = TrainConfig {
            dim: 8,
            epochs: 2,
            batch_size: 8,
            samples_per_epoch: 32,
            warmup_images: 16,
            lr_decay_every_epochs: 1,
            backbone_preset: BackbonePreset::Small,
            ..c.student
        };
        c.robustness.corrupted_pool = 40;
        c.cross_domain.n_images = 40;
        c.sweep.unlabeled_sizes = vec![20, 60];
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match Error::io(path, e) {
            Error::NotFound(p) => Error::Config(format!("config file {} not found", p.display())),
            other => other,
        })?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.split.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.teacher_config().validate()?;
        self.student_config().validate()?;
        let n_train = (self.split.train * self.data.n_images as f64 + 1e-9).floor() as usize;
        if self.labeled_count == 0 || self.labeled_count > n_train {
            return Err(Error::Config(format!(
                "labeled_count must be in 1..={n_train} (the train split size)"
            )));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) || self.eval.ks.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config("eval.ks must be strictly increasing and >= 1".into()));
        }
        if !self.eval.ks.contains(&1) || !self.eval.ks.contains(&3) {
            return Err(Error::Config("eval.ks must include 1 and 3".into()));
        }
        self.robustness.specs()?;
        if self.sweep.unlabeled_sizes.is_empty() {
            return Err(Error::Config("sweep.unlabeled_sizes must not be empty".into()));
        }
        if self.synth().schema().get(&self.sweep.attribute_type).is_err() {
            return Err(Error::Config(format!(
                "sweep.attribute_type `{}` is not a generated attribute type",
                self.sweep.attribute_type
            )));
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.data.clone()
        }
    }

    pub fn teacher_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.teacher.clone()
        }
    }

    pub fn student_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.student.clone()
        }
    }

    /// `output_dir`, else `$MTSS_OUT`, else `runs`.
    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os("MTSS_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}
