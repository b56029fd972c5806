//! Class-balanced training windows and sequential evaluation windows.
//!
//! Each training item forces one segment of a uniformly drawn class into
//! a window of `T` consecutive scored segments; the other `T - 1` segments
//! keep the data distribution.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::one_hot;
use crate::signal::{PsgRecord, CLASS_NAMES};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub record: usize,
    pub record_id: String,
    pub start: usize,
    pub forced_class: usize,
    pub forced_position: usize,
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, T * segment_samples, C]`
    pub x: Tensor<f32>,
    /// One-hot `[B, T, K]`
    pub y: Tensor<f32>,
    pub provenance: Vec<Provenance>,
}

/// Segments of one record usable for a class, each with the scored run holding it.
#[derive(Clone, Debug, Default)]
struct Candidates {
    segments: Vec<usize>,
    runs: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct BalancedSampler {
    window: usize,
    classes: usize,
    /// `by_class[k]` lists `(record index, candidates)` for records holding class `k`.
    by_class: Vec<Vec<(usize, Candidates)>>,
}

impl BalancedSampler {
    /// Records without a scored run of at least `window` segments are skipped.
    pub fn new(records: &[PsgRecord], window: usize, classes: usize) -> Result<Self> {
        if window == 0 || classes == 0 {
            return Err(Error::Parameter("window and class count must be positive".into()));
        }
        let mut by_class: Vec<Vec<(usize, Candidates)>> = vec![Vec::new(); classes];
        for (ri, rec) in records.iter().enumerate() {
            let runs: Vec<_> = rec.scored_runs().into_iter().filter(|r| r.len() >= window).collect();
            if runs.is_empty() {
                log::warn!(
                    "{}: no run of {window} consecutive scored segments; excluded from sampling",
                    rec.record_id
                );
                continue;
            }
            let mut per: Vec<Candidates> = vec![Candidates::default(); classes];
            for run in &runs {
                for s in run.clone() {
                    let k = rec.labels[s];
                    if k < classes {
                        per[k].segments.push(s);
                        per[k].runs.push((run.start, run.end));
                    }
                }
            }
            for (k, c) in per.into_iter().enumerate() {
                if !c.segments.is_empty() {
                    by_class[k].push((ri, c));
                }
            }
        }
        if let Some(k) = by_class.iter().position(Vec::is_empty) {
            let name = CLASS_NAMES.get(k).copied().unwrap_or("?");
            return Err(Error::Sampling(format!(
                "class {k} ({name}) does not occur in any sampling window of the dataset"
            )));
        }
        Ok(Self {
            window,
            classes,
            by_class,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Draws one window location: `(record, start, class, position)`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> (usize, usize, usize, usize) {
        let k = rng.random_range(0..self.classes);
        let options = &self.by_class[k];
        let (ri, cands) = &options[rng.random_range(0..options.len())];
        let j = rng.random_range(0..cands.segments.len());
        let (s, (run_start, run_end)) = (cands.segments[j], cands.runs[j]);
        let p = rng.random_range(0..self.window);
        // Shift the window inward so it stays inside the scored run.
        let start = s.saturating_sub(p).clamp(run_start, run_end - self.window);
        (*ri, start, k, s - start)
    }

    pub fn sample_batch<R: Rng>(&self, records: &[PsgRecord], batch: usize, rng: &mut R) -> Result<Batch> {
        let first = records
            .first()
            .ok_or_else(|| Error::Sampling("no records".into()))?;
        let (i, c) = (first.segment_samples, first.n_channels());
        let t = self.window;
        let mut x = Vec::with_capacity(batch * t * i * c);
        let mut y = Vec::with_capacity(batch * t * self.classes);
        let mut provenance = Vec::with_capacity(batch);
        for _ in 0..batch {
            let (ri, start, k, pos) = self.draw(rng);
            let rec = &records[ri];
            if rec.segment_samples != i || rec.n_channels() != c {
                return Err(Error::Sampling(format!("{}: inconsistent segment width or channel count", rec.record_id)));
            }
            x.extend(rec.window(start..start + t));
            y.extend(one_hot::<f32>(&rec.labels[start..start + t], self.classes)?);
            provenance.push(Provenance {
                record: ri,
                record_id: rec.record_id.clone(),
                start,
                forced_class: k,
                forced_position: pos,
            });
        }
        Ok(Batch {
            x: Tensor::new([batch, t * i, c], x)?,
            y: Tensor::new([batch, t, self.classes], y)?,
            provenance,
        })
    }
}

/// `ceil(L / (T * B))` gradient steps per epoch for `L` training segments.
pub fn steps_per_epoch(segments: usize, window: usize, batch: usize) -> usize {
    segments.div_ceil(window * batch).max(1)
}

/// A `T`-segment evaluation window. Segments past the record end repeat the
/// last segment and are not scored.
#[derive(Clone, Debug)]
pub struct EvalWindow {
    pub start: usize,
    /// Interleaved `[T * segment_samples, C]`.
    pub x: Vec<f32>,
    /// Real segments covered by this window (the rest is padding).
    pub covered: usize,
}

pub fn sequential_windows(rec: &PsgRecord, window: usize) -> Vec<EvalWindow> {
    let n = rec.n_segments();
    let (i, c) = (rec.segment_samples, rec.n_channels());
    let mut out = Vec::with_capacity(n.div_ceil(window));
    let mut start = 0;
    while start < n {
        let end = (start + window).min(n);
        let mut x = rec.window(start..end);
        if end - start < window {
            let last = rec.window(n - 1..n);
            for _ in 0..window - (end - start) {
                x.extend_from_slice(&last);
            }
        }
        debug_assert_eq!(x.len(), window * i * c);
        out.push(EvalWindow {
            start,
            x,
            covered: end - start,
        });
        start = end;
    }
    out
}
