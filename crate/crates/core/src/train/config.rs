use std::fmt;
use std::str::FromStr;

use crate::config::{ConfigDoc, Section};
use crate::error::{Error, Result};
use crate::metrics::DiceVariant;

use super::adam::AdamConfig;

const SECTION: &str = "train";
const KEYS: [&str; 14] = [
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "patience",
    "max_epochs",
    "fixed_epochs",
    "loss",
    "stop_metric",
    "seed",
    "steps_per_epoch",
    "eval_batch",
    "min_delta",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Dice(DiceVariant),
    CrossEntropy,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Dice(DiceVariant::PerClass) => "dice",
            LossKind::Dice(DiceVariant::Pooled) => "dice_pooled",
            LossKind::CrossEntropy => "cross_entropy",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dice" => Ok(LossKind::Dice(DiceVariant::PerClass)),
            "dice_pooled" => Ok(LossKind::Dice(DiceVariant::Pooled)),
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            o => Err(Error::Config(format!(
                "unknown loss `{o}` (expected dice, dice_pooled or cross_entropy)"
            ))),
        }
    }
}

/// What the validation pass reports to early stopping and model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StopMetric {
    #[default]
    F1,
    Loss,
}

impl fmt::Display for StopMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopMetric::F1 => "f1",
            StopMetric::Loss => "loss",
        })
    }
}

impl FromStr for StopMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f1" | "val_f1" => Ok(StopMetric::F1),
            "loss" | "val_loss" => Ok(StopMetric::Loss),
            o => Err(Error::Config(format!("unknown stop metric `{o}` (expected f1 or loss)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub patience: usize,
    /// `None` trains until patience runs out.
    pub max_epochs: Option<usize>,
    /// Train exactly `max_epochs` epochs and keep the last model.
    pub fixed_epochs: bool,
    pub loss: LossKind,
    pub stop_metric: StopMetric,
    pub min_delta: f64,
    pub seed: u64,
    /// Overrides `ceil(L / (T * B))`.
    pub steps_per_epoch: Option<usize>,
    /// Windows per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 12,
            patience: 150,
            max_epochs: None,
            fixed_epochs: false,
            loss: LossKind::Dice(DiceVariant::PerClass),
            stop_metric: StopMetric::F1,
            min_delta: 1e-6,
            seed: 0,
            steps_per_epoch: None,
            eval_batch: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", a.lr)));
        }
        for (name, b) in [("beta1", a.beta1), ("beta2", a.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if a.eps.is_nan() || a.eps <= 0.0 {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.max_epochs == Some(0) {
            return Err(Error::Config("max_epochs must be positive (omit it for no limit)".into()));
        }
        if self.fixed_epochs && self.max_epochs.is_none() {
            return Err(Error::Config("fixed_epochs needs max_epochs".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn from_section(s: &Section) -> Result<Self> {
        s.expect_keys(&KEYS)?;
        let mut c = Self::default();
        s.read("lr", &mut c.adam.lr)?;
        s.read("beta1", &mut c.adam.beta1)?;
        s.read("beta2", &mut c.adam.beta2)?;
        s.read("adam_eps", &mut c.adam.eps)?;
        s.read("batch_size", &mut c.batch_size)?;
        s.read("patience", &mut c.patience)?;
        let mut max_epochs = 0usize;
        s.read("max_epochs", &mut max_epochs)?;
        if s.get("max_epochs").is_some() {
            c.max_epochs = Some(max_epochs);
        }
        s.read("fixed_epochs", &mut c.fixed_epochs)?;
        s.read("loss", &mut c.loss)?;
        s.read("stop_metric", &mut c.stop_metric)?;
        s.read("min_delta", &mut c.min_delta)?;
        s.read("seed", &mut c.seed)?;
        let mut spe = 0usize;
        s.read("steps_per_epoch", &mut spe)?;
        if s.get("steps_per_epoch").is_some() {
            c.steps_per_epoch = Some(spe);
        }
        s.read("eval_batch", &mut c.eval_batch)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_doc(doc: &ConfigDoc) -> Result<Self> {
        match doc.section(SECTION) {
            Some(s) => Self::from_section(s),
            None => Ok(Self::default()),
        }
    }

    pub fn to_section(&self) -> Section {
        let mut s = Section::new(SECTION);
        s.set("lr", self.adam.lr);
        s.set("beta1", self.adam.beta1);
        s.set("beta2", self.adam.beta2);
        s.set("adam_eps", self.adam.eps);
        s.set("batch_size", self.batch_size);
        s.set("patience", self.patience);
        if let Some(m) = self.max_epochs {
            s.set("max_epochs", m);
        }
        s.set("fixed_epochs", self.fixed_epochs);
        s.set("loss", self.loss);
        s.set("stop_metric", self.stop_metric);
        s.set("min_delta", self.min_delta);
        s.set("seed", self.seed);
        if let Some(n) = self.steps_per_epoch {
            s.set("steps_per_epoch", n);
        }
        s.set("eval_batch", self.eval_batch);
        s
    }
}
