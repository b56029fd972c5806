//! Dataset manifests, the preprocessing pipeline and the preprocessed cache.

use std::fs;
use std::path::{Path, PathBuf};

use super::edf;
use super::labels::{self, EPOCH_SECONDS};
use super::preprocess::{self, ScaleInfo, OUTLIER_FACTOR, WAKE_MARGIN_SEGMENTS};
use super::record::PsgRecord;
use super::resample::resample;
use super::stages::{map_stages, StageMap, CLASS_NAMES, UNSCORED};
use crate::error::{Error, Result};
use crate::tensor::{checkpoint, Tensor};

pub const MANIFEST_HEADER: [&str; 3] = ["record_path", "label_path", "subject_id"];
pub const CACHE_INDEX: &str = "cache_index.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub record_path: PathBuf,
    pub label_path: PathBuf,
    pub subject_id: String,
}

impl ManifestEntry {
    /// File stem of the signal file.
    pub fn record_id(&self) -> String {
        self.record_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.record_path.display().to_string())
    }
}

/// Reads a `record_path,label_path,subject_id` manifest; relative paths
/// are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(bad(format!("header must be `{}`", MANIFEST_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 || rec.iter().any(str::is_empty) {
            return Err(bad(format!("line {line}: expected three non-empty fields")));
        }
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        out.push(ManifestEntry {
            record_path: resolve(&rec[0]),
            label_path: resolve(&rec[1]),
            subject_id: rec[2].to_string(),
        });
    }
    let mut ids: Vec<String> = out.iter().map(ManifestEntry::record_id).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(bad(format!("record id `{}` appears twice", w[0])));
    }
    Ok(out)
}

/// Writes a manifest with paths relative to `dir` where possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(io)?;
    for e in entries {
        w.write_record([rel(&e.record_path), rel(&e.label_path), e.subject_id.clone()]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

#[derive(Clone, Debug)]
pub struct PrepareOptions {
    pub sample_rate: f64,
    /// Label substrings; empty selects every channel.
    pub channels: Vec<String>,
    pub trim_wake_margins: bool,
    pub margin_segments: usize,
    pub outlier_factor: f64,
    pub stage_map: StageMap,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            sample_rate: 100.0,
            channels: Vec::new(),
            trim_wake_margins: false,
            margin_segments: WAKE_MARGIN_SEGMENTS,
            outlier_factor: OUTLIER_FACTOR,
            stage_map: StageMap::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RecordReport {
    pub record_id: String,
    pub subject_id: String,
    pub channels: Vec<String>,
    pub scale: Vec<ScaleInfo>,
    pub label_segments: usize,
    pub signal_segments: usize,
    pub discarded_labels: usize,
    pub zeroed_segments: usize,
    /// Kept segment range when wake margins were trimmed.
    pub trimmed: Option<(usize, usize)>,
    pub segments: usize,
}

/// One input channel before preprocessing.
pub struct RawChannel {
    pub name: String,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

/// Pipeline after reading: resample, map and align labels, robust scaling,
/// outlier zeroing, optional wake trimming.
pub fn preprocess(
    record_id: &str,
    subject_id: &str,
    raw: Vec<RawChannel>,
    raw_labels: &[String],
    opts: &PrepareOptions,
) -> Result<(PsgRecord, RecordReport)> {
    if raw.is_empty() {
        return Err(Error::Data(format!("{record_id}: no channels selected")));
    }
    let seg = opts.sample_rate * EPOCH_SECONDS;
    if seg.fract() != 0.0 || seg < 1.0 {
        return Err(Error::Parameter(format!(
            "{} Hz does not give a whole number of samples per segment",
            opts.sample_rate
        )));
    }
    let seg = seg as usize;
    let mut names = Vec::with_capacity(raw.len());
    let mut channels = Vec::with_capacity(raw.len());
    for ch in raw {
        let y = resample(&ch.samples, ch.sample_rate, opts.sample_rate)
            .map_err(|e| Error::Data(format!("{record_id} channel `{}`: {e}", ch.name)))?;
        names.push(ch.name);
        channels.push(y);
    }

    let (mut labels, mut mask) = map_stages(raw_labels, &opts.stage_map)?;
    let label_segments = labels.len();
    let signal_segments = channels.iter().map(Vec::len).min().unwrap_or(0) / seg;
    let n = label_segments.min(signal_segments);
    if label_segments != signal_segments {
        log::warn!(
            "{record_id}: {label_segments} label segments but {signal_segments} signal segments; truncating to {n}"
        );
    }
    if n == 0 {
        return Err(Error::Data(format!("{record_id}: no complete labelled segment")));
    }
    labels.truncate(n);
    mask.truncate(n);
    let discarded_labels = mask.iter().filter(|m| !**m).count();
    let mut channels: Vec<Vec<f32>> = channels
        .into_iter()
        .map(|c| c[..n * seg].iter().map(|&v| v as f32).collect())
        .collect();
    let scale: Vec<ScaleInfo> = channels.iter_mut().map(|c| preprocess::robust_scale(c)).collect();
    for (name, s) in names.iter().zip(&scale) {
        if s.degenerate {
            log::warn!("{record_id}: channel `{name}` has IQR {} and was only centred", s.iqr);
        }
    }
    let mut record = PsgRecord {
        record_id: record_id.to_string(),
        subject_id: subject_id.to_string(),
        sample_rate: opts.sample_rate,
        segment_samples: seg,
        channel_names: names.clone(),
        channels,
        labels,
        mask,
    };
    let zeroed_segments = preprocess::zero_extreme_segments(&mut record, opts.outlier_factor);
    let mut trimmed = None;
    if opts.trim_wake_margins {
        let (r, range) = preprocess::trim_wake_margins(&record, opts.margin_segments)?;
        record = r;
        trimmed = Some((range.start, range.end));
    }
    let report = RecordReport {
        record_id: record_id.to_string(),
        subject_id: subject_id.to_string(),
        channels: names,
        scale,
        label_segments,
        signal_segments,
        discarded_labels,
        zeroed_segments,
        trimmed,
        segments: record.n_segments(),
    };
    Ok((record, report))
}

/// Reads the EDF and label file of `entry` and runs [`preprocess`].
pub fn prepare_record(entry: &ManifestEntry, opts: &PrepareOptions) -> Result<(PsgRecord, RecordReport)> {
    let rec = edf::read_edf(&entry.record_path)?;
    let selected = rec.select(&opts.channels)?;
    let raw = selected
        .into_iter()
        .map(|s| RawChannel {
            name: s.label.clone(),
            sample_rate: s.sample_rate,
            samples: s.samples.clone(),
        })
        .collect();
    let raw_labels = labels::read_labels(&entry.label_path)?;
    preprocess(&entry.record_id(), &entry.subject_id, raw, &raw_labels, opts)
}

/// The training pipeline for a record without labels (resampling, scaling
/// and outlier zeroing; never trimmed). Every segment comes back unscored.
pub fn preprocess_unlabeled(record_id: &str, raw: Vec<RawChannel>, opts: &PrepareOptions) -> Result<PsgRecord> {
    let seconds = raw
        .iter()
        .map(|c| c.samples.len() as f64 / c.sample_rate)
        .fold(f64::INFINITY, f64::min);
    if !seconds.is_finite() {
        return Err(Error::Data(format!("{record_id}: no channels selected")));
    }
    let n = (seconds / EPOCH_SECONDS).floor() as usize;
    let placeholder = vec![CLASS_NAMES[0].to_string(); n];
    let opts = PrepareOptions {
        trim_wake_margins: false,
        ..opts.clone()
    };
    let (mut rec, _) = preprocess(record_id, record_id, raw, &placeholder, &opts)?;
    rec.mask.fill(false);
    Ok(rec)
}

/// Reads and preprocesses an EDF file for prediction.
pub fn prepare_unlabeled(path: &Path, opts: &PrepareOptions) -> Result<PsgRecord> {
    let rec = edf::read_edf(path)?;
    let raw = rec
        .select(&opts.channels)?
        .into_iter()
        .map(|s| RawChannel {
            name: s.label.clone(),
            sample_rate: s.sample_rate,
            samples: s.samples.clone(),
        })
        .collect();
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    preprocess_unlabeled(&id, raw, opts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub record_id: String,
    pub subject_id: String,
    pub sample_rate: f64,
    pub segments: usize,
    pub signal_file: String,
    pub labels_file: String,
}

/// Writes the signal container (one entry per channel) and the labels sidecar.
pub fn write_cache_record(dir: &Path, rec: &PsgRecord) -> Result<CacheEntry> {
    rec.validate()?;
    let signal_file = format!("{}.sig", rec.record_id);
    let labels_file = format!("{}.labels.csv", rec.record_id);
    let tensors: Vec<Tensor<f32>> = rec
        .channels
        .iter()
        .map(|c| Tensor::new([c.len()], c.clone()))
        .collect::<Result<_>>()?;
    let entries: Vec<(&str, &Tensor<f32>)> = rec.channel_names.iter().map(String::as_str).zip(&tensors).collect();
    checkpoint::save(&dir.join(&signal_file), &entries)?;
    let stages: Vec<&str> = rec
        .labels
        .iter()
        .zip(&rec.mask)
        .map(|(&l, &m)| if m { CLASS_NAMES[l] } else { UNSCORED })
        .collect();
    let path = dir.join(&labels_file);
    fs::write(&path, labels::format_labels(&stages)).map_err(|e| Error::file(&path, e))?;
    Ok(CacheEntry {
        record_id: rec.record_id.clone(),
        subject_id: rec.subject_id.clone(),
        sample_rate: rec.sample_rate,
        segments: rec.n_segments(),
        signal_file,
        labels_file,
    })
}

const INDEX_HEADER: [&str; 6] = ["record_id", "subject_id", "sample_rate", "segments", "signal_file", "labels_file"];

pub fn write_cache_index(dir: &Path, entries: &[CacheEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(INDEX_HEADER).map_err(io)?;
    for e in entries {
        w.write_record([
            e.record_id.clone(),
            e.subject_id.clone(),
            e.sample_rate.to_string(),
            e.segments.to_string(),
            e.signal_file.clone(),
            e.labels_file.clone(),
        ])
        .map_err(io)?;
    }
    let path = dir.join(CACHE_INDEX);
    fs::write(&path, w.into_inner().map_err(|e| Error::Data(e.to_string()))?).map_err(|e| Error::file(&path, e))
}

pub fn read_cache_index(dir: &Path) -> Result<Vec<CacheEntry>> {
    let path = dir.join(CACHE_INDEX);
    let file = fs::File::open(&path).map_err(|e| Error::file(&path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != INDEX_HEADER.len() {
            return Err(bad(format!("expected {} fields", INDEX_HEADER.len())));
        }
        out.push(CacheEntry {
            record_id: rec[0].to_string(),
            subject_id: rec[1].to_string(),
            sample_rate: rec[2].parse().map_err(|_| bad(format!("bad sample rate `{}`", &rec[2])))?,
            segments: rec[3].parse().map_err(|_| bad(format!("bad segment count `{}`", &rec[3])))?,
            signal_file: rec[4].to_string(),
            labels_file: rec[5].to_string(),
        });
    }
    Ok(out)
}

pub fn read_cache_record(dir: &Path, entry: &CacheEntry) -> Result<PsgRecord> {
    let entries = checkpoint::load(&dir.join(&entry.signal_file))?;
    let raw = labels::read_labels(&dir.join(&entry.labels_file))?;
    let (labels, mask) = map_stages(&raw, &StageMap::default())?;
    let seg = (entry.sample_rate * EPOCH_SECONDS) as usize;
    let (channel_names, channels) = entries.into_iter().map(|(n, t)| (n, t.into_data())).unzip();
    let rec = PsgRecord {
        record_id: entry.record_id.clone(),
        subject_id: entry.subject_id.clone(),
        sample_rate: entry.sample_rate,
        segment_samples: seg,
        channel_names,
        channels,
        labels,
        mask,
    };
    rec.validate()?;
    if rec.n_segments() != entry.segments {
        return Err(Error::Data(format!(
            "{}: index lists {} segments, cache holds {}",
            entry.record_id,
            entry.segments,
            rec.n_segments()
        )));
    }
    Ok(rec)
}

/// Every record of a cache directory, in index order.
pub fn load_cache(dir: &Path) -> Result<Vec<PsgRecord>> {
    read_cache_index(dir)?
        .iter()
        .map(|e| read_cache_record(dir, e))
        .collect()
}
