use std::str::FromStr;

use super::TrainError;
use crate::autodiff::{LrSchedule, OptimizerKind};
use crate::encoder::ENCODER_PREFIX;
use crate::field::{DECODER_PREFIX, HASH_PREFIX};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            _ => Err(TrainError::Config(format!("unknown precision `{s}` (expected f32 or f64)"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Uniform,
    /// Equal expected point count per class present in the subject.
    ClassBalanced,
}

impl FromStr for Sampling {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "class_balanced" => Ok(Self::ClassBalanced),
            _ => Err(TrainError::Config(format!("unknown sampling `{s}` (expected uniform or class_balanced)"))),
        }
    }
}

impl std::fmt::Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::ClassBalanced => "class_balanced",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSelector {
    Joint,
    IntensityOnly,
}

/// Which parameter groups are held fixed, and which losses drive the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeMask {
    pub freeze_encoder: bool,
    pub freeze_decoder: bool,
    pub freeze_hash: bool,
    pub loss: LossSelector,
}

impl Default for FreezeMask {
    fn default() -> Self {
        Self { freeze_encoder: false, freeze_decoder: false, freeze_hash: false, loss: LossSelector::Joint }
    }
}

impl FreezeMask {
    pub fn decoder_transfer() -> Self {
        Self { freeze_decoder: true, loss: LossSelector::IntensityOnly, ..Self::default() }
    }

    pub fn encoder_transfer() -> Self {
        Self { freeze_encoder: true, loss: LossSelector::IntensityOnly, ..Self::default() }
    }

    pub fn frozen_prefixes(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.freeze_encoder {
            v.push(ENCODER_PREFIX);
        }
        if self.freeze_decoder {
            v.push(DECODER_PREFIX);
        }
        if self.freeze_hash {
            v.push(HASH_PREFIX);
        }
        v
    }

    pub fn to_kv(&self, map: &mut KvMap) {
        map.set("freeze.encoder", self.freeze_encoder);
        map.set("freeze.decoder", self.freeze_decoder);
        map.set("freeze.hash", self.freeze_hash);
        map.set(
            "freeze.loss",
            match self.loss {
                LossSelector::Joint => "joint",
                LossSelector::IntensityOnly => "intensity_only",
            },
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_int: f64,
    pub lambda_seg: f64,
    pub epochs: usize,
    pub points_per_step: usize,
    pub seed: u64,
    pub dice_epsilon: f64,
    pub precision: Precision,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub optimizer: OptimizerKind,
    /// Validation cadence in epochs; 0 validates only after the last epoch.
    pub val_every: usize,
    pub sampling: Sampling,
    /// Foreground classes kept in the losses; others count as background.
    pub classes_included: Option<Vec<u16>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_int: 1.0,
            lambda_seg: 0.3,
            epochs: 500,
            points_per_step: 4096,
            seed: 0,
            dice_epsilon: 1e-6,
            precision: Precision::F32,
            base_lr: 1e-3,
            lr_decay: 0.5,
            decay_every: 100,
            optimizer: OptimizerKind::Sgd,
            val_every: 0,
            sampling: Sampling::Uniform,
            classes_included: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda_int >= 0.0) || !(self.lambda_seg >= 0.0) {
            return Err(TrainError::Config("loss weights must be non-negative".into()));
        }
        if !(self.dice_epsilon > 0.0) {
            return Err(TrainError::Config("dice epsilon must be positive".into()));
        }
        if self.points_per_step == 0 {
            return Err(TrainError::Config("points per step must be positive".into()));
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<LrSchedule, TrainError> {
        Ok(LrSchedule::new(self.base_lr, self.lr_decay, self.decay_every)?)
    }

    pub fn to_kv(&self, map: &mut KvMap) {
        map.set("train.lambda_int", self.lambda_int);
        map.set("train.lambda_seg", self.lambda_seg);
        map.set("train.epochs", self.epochs);
        map.set("train.points_per_step", self.points_per_step);
        map.set("train.seed", self.seed);
        map.set("train.dice_epsilon", self.dice_epsilon);
        map.set("train.precision", self.precision);
        map.set("train.lr", self.base_lr);
        map.set("train.lr_decay", self.lr_decay);
        map.set("train.decay_every", self.decay_every);
        map.set("train.optimizer", self.optimizer);
        map.set("train.val_every", self.val_every);
        map.set("train.sampling", self.sampling);
        if let Some(c) = &self.classes_included {
            map.set("train.classes_included", c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        }
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, TrainError> {
        let d = Self::default();
        let c = Self {
            lambda_int: map.parse_or("train.lambda_int", d.lambda_int, "number")?,
            lambda_seg: map.parse_or("train.lambda_seg", d.lambda_seg, "number")?,
            epochs: map.parse_or("train.epochs", d.epochs, "integer")?,
            points_per_step: map.parse_or("train.points_per_step", d.points_per_step, "integer")?,
            seed: map.parse_or("train.seed", d.seed, "integer")?,
            dice_epsilon: map.parse_or("train.dice_epsilon", d.dice_epsilon, "number")?,
            precision: map.get("train.precision").map(str::parse).transpose()?.unwrap_or(d.precision),
            base_lr: map.parse_or("train.lr", d.base_lr, "number")?,
            lr_decay: map.parse_or("train.lr_decay", d.lr_decay, "number")?,
            decay_every: map.parse_or("train.decay_every", d.decay_every, "integer")?,
            optimizer: map.get("train.optimizer").map(str::parse).transpose()?.unwrap_or(d.optimizer),
            val_every: map.parse_or("train.val_every", d.val_every, "integer")?,
            sampling: map.get("train.sampling").map(str::parse).transpose()?.unwrap_or(d.sampling),
            classes_included: map.parse_list("train.classes_included", "class indices")?,
        };
        c.validate()?;
        Ok(c)
    }
}
