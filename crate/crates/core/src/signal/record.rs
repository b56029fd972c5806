use std::ops::Range;

use crate::error::{Error, Result};

/// A preprocessed recording: channel-major samples plus one label per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct PsgRecord {
    pub record_id: String,
    pub subject_id: String,
    pub sample_rate: f64,
    pub segment_samples: usize,
    pub channel_names: Vec<String>,
    /// One buffer per channel, each `segments * segment_samples` long.
    pub channels: Vec<Vec<f32>>,
    /// Class index per segment; meaningful only where `mask` is true.
    pub labels: Vec<usize>,
    /// False for segments excluded from scoring and sampling.
    pub mask: Vec<bool>,
}

impl PsgRecord {
    pub fn n_segments(&self) -> usize {
        self.labels.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_segments();
        if self.mask.len() != n {
            return Err(Error::Data(format!("{}: {} labels but {} mask entries", self.record_id, n, self.mask.len())));
        }
        if self.channels.is_empty() || self.channel_names.len() != self.channels.len() {
            return Err(Error::Data(format!("{}: channel names do not match channel data", self.record_id)));
        }
        let want = n * self.segment_samples;
        if let Some(c) = self.channels.iter().position(|c| c.len() != want) {
            return Err(Error::Data(format!(
                "{}: channel {c} has {} samples, expected {n} segments x {} = {want}",
                self.record_id,
                self.channels[c].len(),
                self.segment_samples
            )));
        }
        Ok(())
    }

    /// Interleaved `[segments * segment_samples, C]` samples of `segments`.
    pub fn window(&self, segments: Range<usize>) -> Vec<f32> {
        let i = self.segment_samples;
        let c = self.n_channels();
        let (a, b) = (segments.start * i, segments.end * i);
        let mut out = Vec::with_capacity((b - a) * c);
        for s in a..b {
            for ch in &self.channels {
                out.push(ch[s]);
            }
        }
        out
    }

    /// Maximal runs of consecutive scored segments as `start..end`.
    pub fn scored_runs(&self) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut start = None;
        for (s, &m) in self.mask.iter().enumerate() {
            match (m, start) {
                (true, None) => start = Some(s),
                (false, Some(a)) => {
                    runs.push(a..s);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(a) = start {
            runs.push(a..self.mask.len());
        }
        runs
    }

    pub fn slice_segments(&self, range: Range<usize>) -> PsgRecord {
        let i = self.segment_samples;
        PsgRecord {
            record_id: self.record_id.clone(),
            subject_id: self.subject_id.clone(),
            sample_rate: self.sample_rate,
            segment_samples: i,
            channel_names: self.channel_names.clone(),
            channels: self.channels.iter().map(|c| c[range.start * i..range.end * i].to_vec()).collect(),
            labels: self.labels[range.clone()].to_vec(),
            mask: self.mask[range].to_vec(),
        }
    }

    /// Scored segments per class.
    pub fn class_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for (&l, &m) in self.labels.iter().zip(&self.mask) {
            if m && l < k {
                counts[l] += 1;
            }
        }
        counts
    }
}
