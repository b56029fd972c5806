//! Per-record normalization, outlier suppression and wake trimming.

use std::ops::Range;

use super::record::PsgRecord;
use super::stages::Stage;
use crate::error::{Error, Result};

/// Channels whose IQR is below this are divided by 1 and flagged.
pub const MIN_IQR: f64 = 1e-8;
pub const OUTLIER_FACTOR: f64 = 20.0;
/// 30 minutes of 30-second segments.
pub const WAKE_MARGIN_SEGMENTS: usize = 60;

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ScaleInfo {
    pub median: f64,
    pub iqr: f64,
    /// IQR below [`MIN_IQR`]; the channel was only shifted.
    pub degenerate: bool,
}

/// `(x - median) / IQR` over the whole channel.
pub fn robust_scale(channel: &mut [f32]) -> ScaleInfo {
    if channel.is_empty() {
        return ScaleInfo {
            median: 0.0,
            iqr: 0.0,
            degenerate: true,
        };
    }
    let mut sorted: Vec<f64> = channel.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let degenerate = iqr < MIN_IQR;
    let scale = if degenerate { 1.0 } else { iqr };
    for v in channel.iter_mut() {
        *v = ((*v as f64 - median) / scale) as f32;
    }
    ScaleInfo {
        median,
        iqr,
        degenerate,
    }
}

/// Zeros, per channel, every scored segment holding a value with
/// `|x| > factor` (the scaled IQR being 1). Returns the number of
/// (channel, segment) pairs zeroed.
pub fn zero_extreme_segments(record: &mut PsgRecord, factor: f64) -> usize {
    let i = record.segment_samples;
    let mut zeroed = 0;
    for ch in &mut record.channels {
        for (s, seg) in ch.chunks_mut(i).enumerate() {
            if !record.mask.get(s).copied().unwrap_or(false) {
                continue;
            }
            if seg.iter().any(|v| (v.abs() as f64) > factor) {
                seg.fill(0.0);
                zeroed += 1;
            }
        }
    }
    zeroed
}

/// Segment range from `margin` before the first to `margin` after the last
/// scored non-wake segment, clamped to the record.
pub fn wake_trim_range(labels: &[usize], mask: &[bool], margin: usize) -> Result<Range<usize>> {
    let sleep = |s: &usize| mask[*s] && labels[*s] != Stage::W.index();
    let first = (0..labels.len()).find(sleep);
    let last = (0..labels.len()).rev().find(sleep);
    match (first, last) {
        (Some(a), Some(b)) => Ok(a.saturating_sub(margin)..(b + margin + 1).min(labels.len())),
        _ => Err(Error::Trim("record has no scored non-wake segment".into())),
    }
}

pub fn trim_wake_margins(record: &PsgRecord, margin: usize) -> Result<(PsgRecord, Range<usize>)> {
    let range = wake_trim_range(&record.labels, &record.mask, margin)
        .map_err(|e| Error::Trim(format!("{}: {e}", record.record_id)))?;
    Ok((record.slice_segments(range.clone()), range))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartiles(x: &[f32]) -> (f64, f64, f64) {
        let mut s: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        s.sort_by(f64::total_cmp);
        (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.75))
    }

    #[test]
    fn scaled_channel_has_median_zero_iqr_one() {
        // median 5, IQR 2
        let mut x = vec![3.0f32, 4.0, 5.0, 6.0, 7.0];
        let info = robust_scale(&mut x);
        assert_eq!((info.median, info.iqr), (5.0, 2.0));
        let (q1, q2, q3) = quartiles(&x);
        assert!(q2.abs() < 1e-12);
        assert!((q3 - q1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_channel_is_flagged_and_centred() {
        let mut x = vec![4.0f32; 10];
        let info = robust_scale(&mut x);
        assert!(info.degenerate);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantile_matches_hand_values() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.75), 3.25);
    }

    fn record(labels: Vec<usize>, seg: usize) -> PsgRecord {
        let n = labels.len();
        PsgRecord {
            record_id: "r".into(),
            subject_id: "s".into(),
            sample_rate: 1.0,
            segment_samples: seg,
            channel_names: vec!["a".into()],
            channels: vec![vec![1.0; n * seg]],
            mask: vec![true; n],
            labels,
        }
    }

    #[test]
    fn outlier_segment_is_zeroed_in_its_channel_only() {
        let mut r = record(vec![0, 1, 2], 4);
        r.channels.push(vec![1.0; 12]);
        r.channel_names.push("b".into());
        r.channels[0][5] = 25.0;
        assert_eq!(zero_extreme_segments(&mut r, 20.0), 1);
        assert_eq!(&r.channels[0][4..8], &[0.0; 4]);
        assert_eq!(r.channels[1], vec![1.0; 12]);
        let mut clean = record(vec![0, 1], 3);
        clean.channels[0] = vec![-20.0, 20.0, 0.0, 1.0, -1.0, 19.9];
        let before = clean.clone();
        assert_eq!(zero_extreme_segments(&mut clean, 20.0), 0);
        assert_eq!(clean, before);
    }

    #[test]
    fn unscored_segments_are_left_alone() {
        let mut r = record(vec![0, 0], 2);
        r.mask[1] = false;
        r.channels[0][3] = 100.0;
        assert_eq!(zero_extreme_segments(&mut r, 20.0), 0);
    }

    #[test]
    fn trim_range_arithmetic() {
        let mut labels = vec![0; 1000];
        labels[100] = 2;
        labels[900] = 3;
        let mask = vec![true; 1000];
        assert_eq!(wake_trim_range(&labels, &mask, 60).unwrap(), 40..961);
        let mut early = vec![0; 100];
        early[10] = 1;
        assert_eq!(wake_trim_range(&early, &vec![true; 100], 60).unwrap(), 0..71);
        assert!(wake_trim_range(&[0; 5], &[true; 5], 60).is_err());
    }
}
