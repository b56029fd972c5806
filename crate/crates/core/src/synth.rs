//! Synthetic PSG-like recordings with stage-dependent spectral content.
//!
//! Each 30 s segment is a sum of random sinusoids drawn from its stage's
//! band, plus white noise at a fixed SNR. N2 carries 14 Hz spindle bursts
//! and N3 is amplified. The classes are far easier to separate than real
//! EEG; this exists to exercise the pipeline end to end.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::signal::edf::{write_edf, EdfChannel};
use crate::signal::labels::format_labels;
use crate::signal::{write_manifest, ManifestEntry, Stage};

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub band: (f64, f64),
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub segment_seconds: f64,
    pub channels: usize,
    pub stay_probability: f64,
    pub snr_db: f64,
    /// Bands and relative RMS amplitude for W, N1, N2, N3, REM.
    pub stages: [StageSpec; 5],
    pub spindle_rate_per_min: f64,
    pub spindle_hz: f64,
    pub spindle_seconds: f64,
    /// Peak spindle amplitude relative to the background RMS.
    pub spindle_amplitude: f64,
    /// Sinusoids summed per segment for the band-limited background.
    pub components: usize,
    /// Physical units (microvolts) per unit of synthetic amplitude.
    pub microvolts: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let spec = |lo, hi, amplitude| StageSpec {
            band: (lo, hi),
            amplitude,
        };
        Self {
            sample_rate: 100.0,
            segment_seconds: 30.0,
            channels: 1,
            stay_probability: 0.85,
            snr_db: 6.0,
            stages: [
                spec(8.0, 13.0, 1.0),
                spec(4.0, 7.0, 1.0),
                spec(4.0, 7.0, 1.0),
                spec(0.3, 3.0, 3.0),
                spec(6.0, 11.0, 1.0),
            ],
            spindle_rate_per_min: 3.0,
            spindle_hz: 14.0,
            spindle_seconds: 1.0,
            spindle_amplitude: 4.0,
            components: 16,
            microvolts: 20.0,
        }
    }
}

impl SynthConfig {
    pub fn segment_samples(&self) -> usize {
        (self.sample_rate * self.segment_seconds).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate / 2.0;
        for (s, st) in Stage::ALL.iter().zip(&self.stages) {
            let (lo, hi) = st.band;
            if !(lo > 0.0 && lo < hi && hi < nyq) {
                return Err(Error::Parameter(format!("{s} band {lo}-{hi} Hz is not inside (0, {nyq})")));
            }
        }
        if !(0.0..=1.0).contains(&self.stay_probability) {
            return Err(Error::Parameter("stay probability outside [0, 1]".into()));
        }
        if self.channels == 0 || self.components == 0 || self.segment_samples() == 0 {
            return Err(Error::Parameter("channels, components and segment length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecord {
    pub stages: Vec<Stage>,
    /// Physical samples per channel.
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
}

/// Markov chain over the five stages: stay with `stay`, otherwise move to
/// one of the other four uniformly. Starts and ends in W.
pub fn stage_sequence<R: Rng>(rng: &mut R, n: usize, stay: f64) -> Vec<Stage> {
    let mut out = Vec::with_capacity(n);
    let mut s = Stage::W;
    for i in 0..n {
        if i > 0 && !rng.random_bool(stay) {
            let j = rng.random_range(0..4);
            s = Stage::ALL.iter().copied().filter(|&o| o != s).nth(j).unwrap();
        }
        out.push(s);
    }
    if let Some(last) = out.last_mut() {
        *last = Stage::W;
    }
    out
}

fn segment<R: Rng>(rng: &mut R, stage: Stage, cfg: &SynthConfig, out: &mut [f64]) {
    let spec = &cfg.stages[stage.index()];
    let fs = cfg.sample_rate;
    let (lo, hi) = spec.band;
    // Unit-variance background: each of m sinusoids has power 1/(2m) * 2.
    let m = cfg.components;
    let a = spec.amplitude * (2.0 / m as f64).sqrt();
    out.fill(0.0);
    for _ in 0..m {
        let f = rng.random_range(lo..hi);
        let phase = rng.random_range(0.0..2.0 * PI);
        let w = 2.0 * PI * f / fs;
        for (n, v) in out.iter_mut().enumerate() {
            *v += a * (w * n as f64 + phase).sin();
        }
    }
    if stage == Stage::N2 {
        let lambda = cfg.spindle_rate_per_min * cfg.segment_seconds / 60.0;
        let count = Poisson::new(lambda).map(|p| p.sample(rng) as usize).unwrap_or(0);
        let len = (cfg.spindle_seconds * fs).round() as usize;
        let w = 2.0 * PI * cfg.spindle_hz / fs;
        for _ in 0..count {
            if len >= out.len() {
                break;
            }
            let onset = rng.random_range(0..=out.len() - len);
            let phase = rng.random_range(0.0..2.0 * PI);
            for k in 0..len {
                let env = 0.5 - 0.5 * (2.0 * PI * k as f64 / (len - 1).max(1) as f64).cos();
                out[onset + k] += cfg.spindle_amplitude * spec.amplitude * env * (w * k as f64 + phase).sin();
            }
        }
    }
    let power = out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64;
    let noise_sd = (power / 10f64.powf(cfg.snr_db / 10.0)).sqrt();
    if noise_sd > 0.0 {
        let normal = Normal::new(0.0, noise_sd).unwrap();
        for v in out.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    for v in out.iter_mut() {
        *v *= cfg.microvolts;
    }
}

/// Deterministic function of `(seed, n_segments, cfg)`.
pub fn generate_record(seed: u64, n_segments: usize, cfg: &SynthConfig) -> Result<SynthRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = stage_sequence(&mut rng, n_segments, cfg.stay_probability);
    let i = cfg.segment_samples();
    let mut channels = vec![vec![0.0; n_segments * i]; cfg.channels];
    for (s, &stage) in stages.iter().enumerate() {
        for ch in channels.iter_mut() {
            segment(&mut rng, stage, cfg, &mut ch[s * i..(s + 1) * i]);
        }
    }
    Ok(SynthRecord {
        stages,
        channels,
        sample_rate: cfg.sample_rate,
    })
}

/// Seed of record `index` within a dataset.
pub fn record_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub const CHANNEL_PREFIX: &str = "EEG Syn";

/// Writes `subjNN.edf`, `subjNN.csv` per subject and `manifest.csv` into `dir`.
pub fn generate_dataset(
    dir: &Path,
    seed: u64,
    n_subjects: usize,
    segments_per_record: usize,
    cfg: &SynthConfig,
) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let width = n_subjects.saturating_sub(1).to_string().len().max(2);
    let mut entries = Vec::with_capacity(n_subjects);
    for s in 0..n_subjects {
        let id = format!("subj{s:0width$}");
        let rec = generate_record(record_seed(seed, s), segments_per_record, cfg)?;
        let labels: Vec<String> = (0..cfg.channels).map(|c| format!("{CHANNEL_PREFIX}{c}")).collect();
        let chans: Vec<EdfChannel<'_>> = rec
            .channels
            .iter()
            .zip(&labels)
            .map(|(x, l)| EdfChannel {
                label: l,
                physical_dimension: "uV",
                sample_rate: cfg.sample_rate,
                samples: x,
            })
            .collect();
        let edf_path = dir.join(format!("{id}.edf"));
        write_edf(&edf_path, &chans, cfg.segment_seconds, &id)?;
        let label_path = dir.join(format!("{id}.csv"));
        let names: Vec<&str> = rec.stages.iter().map(|s| s.name()).collect();
        fs::write(&label_path, format_labels(&names)).map_err(|e| Error::file(&label_path, e))?;
        entries.push(ManifestEntry {
            record_path: edf_path,
            label_path,
            subject_id: id,
        });
    }
    write_manifest(&dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}
