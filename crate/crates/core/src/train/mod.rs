//! Optimisation loop, model selection and cross-validation planning.

mod adam;
mod config;
mod cv;
mod evaluate;
mod stopping;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use adam::{Adam, AdamConfig};
pub use config::{LossKind, StopMetric, TrainConfig};
pub use cv::{holdout_split, make_cv_plan, validation_size, CvPlan, Split, VALIDATION_FRACTION};
pub use evaluate::{evaluate, predict_record, validation_loss, Evaluation};
pub use stopping::{EarlyStopping, Observation};

use crate::error::{Error, Result};
use crate::metrics::{cross_entropy, dice_loss_with};
use crate::model::{Head, UTimeModel};
use crate::sampling::{steps_per_epoch, BalancedSampler};
use crate::signal::PsgRecord;
use crate::tensor::{Mode, Tape, Tensor};

pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_f1: f64,
    /// The value early stopping compared (F1, or the negated loss).
    pub score: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    pub best: Option<BestEpoch>,
    pub stopped: StopReason,
    pub steps: u64,
    pub steps_per_epoch: usize,
}

#[derive(Default, Clone, Copy)]
pub struct TrainOptions<'a> {
    /// Receives `history.csv` and the checkpoints when set.
    pub out_dir: Option<&'a Path>,
    /// Checked between gradient steps; setting it ends training after the
    /// current step with [`StopReason::Manual`].
    pub stop: Option<&'a AtomicBool>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One gradient step on a balanced batch. Returns the batch loss.
pub fn train_step<R: rand::Rng>(
    model: &mut UTimeModel,
    adam: &mut Adam,
    sampler: &BalancedSampler,
    records: &[PsgRecord],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let batch = sampler.sample_batch(records, cfg.batch_size, rng)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let x = tape.leaf(batch.x, false);
    let segment = model.config().segment_samples;
    let p = model.forward(&mut tape, &vars, &x, Mode::Train, Head::Segments(segment))?;
    let loss = match cfg.loss {
        LossKind::Dice(v) => dice_loss_with(&mut tape, &batch.y, &p, v)?,
        LossKind::CrossEntropy => cross_entropy(&mut tape, &batch.y, &p)?,
    };
    let value = loss.value().data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    let grads = tape.backward(&loss)?;
    let g: Vec<Tensor<f32>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();
    adam.step(model.params_mut(), &g)?;
    Ok(value)
}

/// Trains `model` in place. Unless `fixed_epochs` is set, the model is
/// left at the best validation epoch.
pub fn train(
    model: &mut UTimeModel,
    train_records: &[PsgRecord],
    val_records: &[PsgRecord],
    cfg: &TrainConfig,
    opts: TrainOptions<'_>,
) -> Result<TrainRun> {
    cfg.validate()?;
    if train_records.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if val_records.is_empty() && !cfg.fixed_epochs {
        return Err(Error::Config(
            "validation split is empty; enable fixed_epochs to train without validation".into(),
        ));
    }
    let mc = model.config().clone();
    for r in train_records.iter().chain(val_records) {
        if r.n_channels() != mc.in_channels || r.segment_samples != mc.segment_samples {
            return Err(Error::Config(format!(
                "{}: {} channels x {} samples per segment, model expects {} x {}",
                r.record_id,
                r.n_channels(),
                r.segment_samples,
                mc.in_channels,
                mc.segment_samples
            )));
        }
    }
    let window = mc.transition_window;
    let sampler = BalancedSampler::new(train_records, window, mc.classes)?;
    let scored: usize = train_records.iter().map(|r| r.mask.iter().filter(|&&m| m).count()).sum();
    let spe = cfg.steps_per_epoch.unwrap_or_else(|| steps_per_epoch(scored, window, cfg.batch_size));
    log::info!(
        "training on {} records ({scored} scored segments), {spe} steps per epoch",
        train_records.len()
    );

    let mut history_file = match opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            let path = dir.join(HISTORY_FILE);
            let mut f = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
            writeln!(f, "epoch,train_loss,val_f1,seconds")?;
            Some(f)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    stopper.min_delta = cfg.min_delta;
    let mut history = Vec::new();
    let mut best: Option<BestEpoch> = None;
    let mut best_model: Option<UTimeModel> = None;
    let manual = || opts.stop.is_some_and(|s| s.load(Ordering::Relaxed));
    let mut stopped = StopReason::MaxEpochs;

    let mut epoch = 0;
    loop {
        if cfg.max_epochs.is_some_and(|m| epoch >= m) {
            stopped = StopReason::MaxEpochs;
            break;
        }
        epoch += 1;
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut done = 0;
        for _ in 0..spe {
            if manual() {
                stopped = StopReason::Manual;
                break;
            }
            loss_sum += train_step(model, &mut adam, &sampler, train_records, cfg, &mut rng)?;
            done += 1;
        }
        if done == 0 {
            break;
        }
        let train_loss = loss_sum / done as f64;

        let (val_f1, val_loss) = if val_records.is_empty() {
            (None, None)
        } else {
            let f1 = evaluate(model, val_records, window, cfg.eval_batch)?.mean_f1();
            let loss = match cfg.stop_metric {
                StopMetric::Loss => Some(validation_loss(model, val_records, window, cfg.eval_batch, cfg.loss)?),
                StopMetric::F1 => None,
            };
            (Some(f1), loss)
        };
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_f1,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} val_f1 {} ({:.1}s)",
            opt(val_f1),
            rec.seconds
        );
        if let Some(f) = history_file.as_mut() {
            writeln!(f, "{},{:.6},{},{:.3}", epoch, train_loss, opt(val_f1), rec.seconds)?;
            f.flush()?;
        }
        history.push(rec);
        if let Some(dir) = opts.out_dir {
            model.save(&dir.join(LATEST_CHECKPOINT))?;
        }

        if let Some(f1) = val_f1 {
            let score = match cfg.stop_metric {
                StopMetric::F1 => f1,
                StopMetric::Loss => -val_loss.unwrap_or(f64::NAN),
            };
            let obs = stopper.observe(epoch, score);
            if obs.improved {
                let checkpoint = opts.out_dir.filter(|_| !cfg.fixed_epochs).map(|d| d.join(BEST_CHECKPOINT));
                if let Some(p) = &checkpoint {
                    model.save(p)?;
                }
                best = Some(BestEpoch {
                    epoch,
                    val_f1: f1,
                    score,
                    checkpoint,
                });
                best_model = Some(model.clone());
            }
            if obs.stop && !cfg.fixed_epochs {
                stopped = StopReason::Patience;
                break;
            }
        }
        if stopped == StopReason::Manual {
            break;
        }
    }

    if !cfg.fixed_epochs {
        if let Some(m) = best_model {
            *model = m;
        }
    } else if let Some(dir) = opts.out_dir {
        // Fixed-epoch runs select the final model.
        model.save(&dir.join(BEST_CHECKPOINT))?;
    }
    Ok(TrainRun {
        steps: adam.steps(),
        steps_per_epoch: spe,
        history,
        best,
        stopped,
    })
}
