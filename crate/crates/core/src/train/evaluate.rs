use rayon::prelude::*;

use crate::error::Result;
use crate::metrics::loss::{cross_entropy_with_grad, dice_with_grad};
use crate::metrics::ConfusionMatrix;
use crate::model::UTimeModel;
use crate::sampling::sequential_windows;
use crate::signal::PsgRecord;
use crate::tensor::{argmax_rows, Tensor};

use super::config::LossKind;

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub global: ConfusionMatrix,
    /// `(record_id, matrix)` in input order.
    pub records: Vec<(String, ConfusionMatrix)>,
}

impl Evaluation {
    pub fn mean_f1(&self) -> f64 {
        self.global.f1().mean
    }

    pub fn matrices(&self) -> Vec<ConfusionMatrix> {
        self.records.iter().map(|(_, m)| m.clone()).collect()
    }
}

/// Per-segment class probabilities `[n_segments, K]` for a whole record,
/// predicted window by window with `batch` windows per forward pass.
pub fn predict_record(model: &UTimeModel, rec: &PsgRecord, window: usize, batch: usize) -> Result<Tensor<f32>> {
    let i = model.config().segment_samples;
    let c = rec.n_channels();
    let k = model.config().classes;
    let windows = sequential_windows(rec, window);
    let mut out = Vec::with_capacity(rec.n_segments() * k);
    for group in windows.chunks(batch.max(1)) {
        let mut x = Vec::with_capacity(group.len() * window * i * c);
        for w in group {
            x.extend_from_slice(&w.x);
        }
        let x = Tensor::new([group.len(), window * i, c], x)?;
        let p = model.predict(&x)?;
        for (b, w) in group.iter().enumerate() {
            let base = b * window * k;
            out.extend_from_slice(&p.data()[base..base + w.covered * k]);
        }
    }
    Tensor::new([rec.n_segments(), k], out)
}

fn confusion(model: &UTimeModel, rec: &PsgRecord, window: usize, batch: usize) -> Result<ConfusionMatrix> {
    let probs = predict_record(model, rec, window, batch)?;
    let pred = argmax_rows(&probs);
    let mut cm = ConfusionMatrix::new(model.config().classes);
    for ((&t, &p), &scored) in rec.labels.iter().zip(&pred).zip(&rec.mask) {
        if scored {
            cm.record(t, p)?;
        }
    }
    Ok(cm)
}

/// Sequential-window inference over every record; unscored segments are
/// left out and the global matrix is the element-wise sum.
pub fn evaluate(model: &UTimeModel, records: &[PsgRecord], window: usize, batch: usize) -> Result<Evaluation> {
    let mats: Vec<ConfusionMatrix> = records
        .par_iter()
        .map(|r| confusion(model, r, window, batch))
        .collect::<Result<_>>()?;
    let mut global = ConfusionMatrix::new(model.config().classes);
    for m in &mats {
        global += m;
    }
    Ok(Evaluation {
        global,
        records: records.iter().map(|r| r.record_id.clone()).zip(mats).collect(),
    })
}

/// Loss over all scored segments of `records`, pooled into one batch.
pub fn validation_loss(
    model: &UTimeModel,
    records: &[PsgRecord],
    window: usize,
    batch: usize,
    loss: LossKind,
) -> Result<f64> {
    let k = model.config().classes;
    let per: Vec<(Vec<f32>, Vec<usize>)> = records
        .par_iter()
        .map(|r| {
            let probs = predict_record(model, r, window, batch)?;
            let mut p = Vec::new();
            let mut y = Vec::new();
            for (s, row) in probs.data().chunks(k).enumerate() {
                if r.mask[s] {
                    p.extend_from_slice(row);
                    y.push(r.labels[s]);
                }
            }
            Ok((p, y))
        })
        .collect::<Result<_>>()?;
    let (mut p, mut y) = (Vec::new(), Vec::new());
    for (pp, yy) in per {
        p.extend(pp.into_iter().map(f64::from));
        y.extend(yy);
    }
    let n = y.len();
    if n == 0 {
        return Ok(f64::NAN);
    }
    let y = Tensor::new([n, k], crate::metrics::one_hot::<f64>(&y, k)?)?;
    let p = Tensor::new([n, k], p)?;
    Ok(match loss {
        LossKind::Dice(v) => dice_with_grad(&y, &p, v)?.0,
        LossKind::CrossEntropy => cross_entropy_with_grad(&y, &p)?.0,
    })
}
