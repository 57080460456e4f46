use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_pipeline::DegradeConfig;
use crate::losses::{ContentLoss, LossSpec};
use crate::models::{DiscriminatorConfig, FeatureExtractorConfig, GeneratorConfig};

/// Iteration budget and sampling of one training phase. The iteration count
/// is the sum of the `lr_segments` lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    /// `(iterations, learning_rate)` pairs run in order.
    pub lr_segments: Vec<(usize, f64)>,
    pub batch_size: usize,
    /// Side of the high-resolution training crops.
    pub crop: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            lr_segments: vec![(1_000_000, 1e-4)],
            batch_size: 16,
            crop: 96,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.lr_segments.is_empty() {
            return Err(Error::InvalidArgument(
                "lr_segments must not be empty".into(),
            ));
        }
        for &(n, lr) in &self.lr_segments {
            if n == 0 || !(lr.is_finite() && lr > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "invalid lr segment ({n}, {lr})"
                )));
            }
        }
        if self.batch_size == 0 || self.crop == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and crop must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.lr_segments.iter().map(|s| s.0).sum()
    }

    /// Learning rate for 1-based iteration `it`; the last rate persists past the end.
    pub fn lr_at(&self, it: usize) -> f64 {
        let mut end = 0;
        for &(n, lr) in &self.lr_segments {
            end += n;
            if it <= end {
                return lr;
            }
        }
        self.lr_segments.last().map_or(0.0, |s| s.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    pub schedule: TrainSchedule,
    pub loss: LossSpec,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            schedule: TrainSchedule::default(),
            loss: LossSpec::content_only(ContentLoss::Mse),
        }
    }
}

/// Layout of the frozen feature network; the tap comes from the loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureNetConfig {
    pub block_convs: Vec<usize>,
    pub width_per_block: Vec<usize>,
    pub seed: u64,
    /// Checkpoint-container weight file; seeded weights when absent.
    pub weights: Option<std::path::PathBuf>,
}

impl Default for FeatureNetConfig {
    fn default() -> Self {
        let d = FeatureExtractorConfig::default();
        Self {
            block_convs: d.block_convs,
            width_per_block: d.width_per_block,
            seed: 0,
            weights: None,
        }
    }
}

impl FeatureNetConfig {
    pub fn extractor_config(&self, tap: (usize, usize)) -> FeatureExtractorConfig {
        FeatureExtractorConfig {
            block_convs: self.block_convs.clone(),
            width_per_block: self.width_per_block.clone(),
            tap,
        }
    }
}

/// Everything a training run depends on besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub feature: FeatureNetConfig,
    pub degrade: DegradeConfig,
    pub pretrain: PhaseConfig,
    pub gan: PhaseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper_full()
    }
}

impl TrainConfig {
    /// Full-scale settings: 16 blocks, 96-pixel crops, batch 16, 10⁶
    /// pretraining iterations at 10⁻⁴, then 10⁵ + 10⁵ adversarial iterations
    /// at 10⁻⁴ and 10⁻⁵ with the deepest feature tap. Not practical on a CPU.
    pub fn paper_full() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            feature: FeatureNetConfig::default(),
            degrade: DegradeConfig::default(),
            pretrain: PhaseConfig::default(),
            gan: PhaseConfig {
                schedule: TrainSchedule {
                    lr_segments: vec![(100_000, 1e-4), (100_000, 1e-5)],
                    ..TrainSchedule::default()
                },
                loss: LossSpec {
                    content: ContentLoss::Feature(5, 4),
                    ..LossSpec::default()
                },
            },
        }
    }

    /// Small networks and short schedules that finish in seconds to minutes.
    pub fn toy() -> Self {
        let schedule = |segments: Vec<(usize, f64)>| TrainSchedule {
            lr_segments: segments,
            batch_size: 8,
            crop: 32,
            seed: 0,
            checkpoint_every: 0,
        };
        Self {
            generator: GeneratorConfig {
                blocks: 2,
                width: 16,
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig {
                input_size: 32,
                widths: vec![16, 16, 32, 32, 64, 64, 128, 128],
                dense_width: 128,
                ..DiscriminatorConfig::default()
            },
            feature: FeatureNetConfig {
                width_per_block: vec![16, 32, 64, 128, 128],
                ..FeatureNetConfig::default()
            },
            degrade: DegradeConfig::default(),
            pretrain: PhaseConfig {
                schedule: schedule(vec![(400, 3e-3), (100, 1e-3)]),
                loss: LossSpec::content_only(ContentLoss::Mse),
            },
            gan: PhaseConfig {
                schedule: schedule(vec![(100, 1e-4), (100, 1e-5)]),
                loss: LossSpec {
                    content: ContentLoss::Feature(2, 2),
                    ..LossSpec::default()
                },
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper-full" => Ok(Self::paper_full()),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (toy, paper-full)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.degrade.validate()?;
        if self.degrade.factor != self.generator.upscale {
            return Err(Error::InvalidArgument(format!(
                "degrade factor {} differs from generator upscale {}",
                self.degrade.factor, self.generator.upscale
            )));
        }
        for (name, phase) in [("pretrain", &self.pretrain), ("gan", &self.gan)] {
            phase.schedule.validate()?;
            phase.loss.validate()?;
            if phase.schedule.crop % self.degrade.factor != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} crop {} is not a multiple of {}",
                    phase.schedule.crop, self.degrade.factor
                )));
            }
            if let ContentLoss::Feature(i, j) = phase.loss.content {
                self.feature.extractor_config((i, j)).validate()?;
            }
        }
        if self.pretrain.loss.adversarial_weight != 0.0 {
            return Err(Error::InvalidArgument(
                "pretraining uses no adversarial term".into(),
            ));
        }
        if self.gan.schedule.crop != self.discriminator.input_size {
            return Err(Error::InvalidArgument(format!(
                "gan crop {} must equal discriminator input size {}",
                self.gan.schedule.crop, self.discriminator.input_size
            )));
        }
        Ok(())
    }
}
