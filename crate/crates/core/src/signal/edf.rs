//! European Data Format (EDF) reading and writing.
//!
//! Only plain EDF is handled: a 256-byte fixed header, 256 bytes of
//! per-signal header for each signal, then data records of 16-bit
//! little-endian two's-complement samples. Annotation signals of EDF+
//! files are read like any other signal and can simply be left unselected.

use std::fs;
use std::path::Path;

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

/// Field name and width of each per-signal header block, in file order.
const SIGNAL_FIELDS: [(&str, usize); 10] = [
    ("label", 16),
    ("transducer type", 80),
    ("physical dimension", 8),
    ("physical minimum", 8),
    ("physical maximum", 8),
    ("digital minimum", 8),
    ("digital maximum", 8),
    ("prefiltering", 80),
    ("samples per record", 8),
    ("reserved", 32),
];

#[derive(Debug, thiserror::Error)]
pub enum EdfError {
    #[error("EDF header field `{field}` at byte {offset}: {message}")]
    Header {
        offset: usize,
        field: String,
        message: String,
    },
    #[error("EDF data truncated at byte {offset}: expected {expected} bytes of data records, found {found}")]
    Truncated { offset: u64, expected: u64, found: u64 },
    #[error("signal {signal} (`{label}`) has zero digital range (header byte {offset})")]
    ZeroDigitalRange {
        signal: usize,
        label: String,
        offset: usize,
    },
    #[error("no channel matching `{0}`")]
    ChannelNotFound(String),
    #[error("cannot write EDF: {0}")]
    Write(String),
}

impl EdfError {
    fn header(offset: usize, field: &str, message: impl Into<String>) -> Self {
        EdfError::Header {
            offset,
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Byte offset in the file the error refers to, if any.
    pub fn offset(&self) -> Option<u64> {
        match self {
            EdfError::Header { offset, .. } | EdfError::ZeroDigitalRange { offset, .. } => Some(*offset as u64),
            EdfError::Truncated { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalHeader {
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (digital as i32 - self.digital_min) as f64 * self.gain() + self.physical_min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    pub reserved: String,
    /// `None` when the file declares `-1` (unknown) records.
    pub declared_records: Option<usize>,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }

    pub fn sample_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.record_duration
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfSignal {
    pub label: String,
    pub physical_dimension: String,
    pub sample_rate: f64,
    /// Calibrated physical values.
    pub samples: Vec<f64>,
    /// Physical size of one digital step.
    pub resolution: f64,
}

#[derive(Clone, Debug)]
pub struct EdfRecording {
    pub header: EdfHeader,
    pub signals: Vec<EdfSignal>,
}

impl EdfRecording {
    /// First signal whose label equals `pattern`, else the first that contains it.
    pub fn channel(&self, pattern: &str) -> Result<&EdfSignal, EdfError> {
        let p = pattern.trim();
        self.signals
            .iter()
            .find(|s| s.label == p)
            .or_else(|| self.signals.iter().find(|s| s.label.contains(p)))
            .ok_or_else(|| EdfError::ChannelNotFound(pattern.to_string()))
    }

    pub fn select(&self, patterns: &[String]) -> Result<Vec<&EdfSignal>, EdfError> {
        if patterns.is_empty() {
            return Ok(self.signals.iter().collect());
        }
        patterns.iter().map(|p| self.channel(p)).collect()
    }
}

fn ascii_field<'a>(bytes: &'a [u8], offset: usize, width: usize, field: &str) -> Result<&'a str, EdfError> {
    let raw = bytes
        .get(offset..offset + width)
        .ok_or_else(|| EdfError::header(offset, field, format!("header ends before this field ({} bytes available)", bytes.len())))?;
    if let Some(i) = raw.iter().position(|b| !(0x20..=0x7e).contains(b)) {
        return Err(EdfError::header(
            offset + i,
            field,
            format!("non-printable byte 0x{:02x}", raw[i]),
        ));
    }
    Ok(std::str::from_utf8(raw).unwrap().trim())
}

fn numeric<T: std::str::FromStr>(bytes: &[u8], offset: usize, width: usize, field: &str) -> Result<T, EdfError> {
    let s = ascii_field(bytes, offset, width, field)?;
    s.parse::<T>()
        .map_err(|_| EdfError::header(offset, field, format!("`{s}` is not a valid number")))
}

fn check_clock(s: &str, offset: usize, field: &str) -> Result<(), EdfError> {
    let b = s.as_bytes();
    let ok = b.len() == 8
        && b[2] == b'.'
        && b[5] == b'.'
        && [0, 1, 3, 4, 6, 7].iter().all(|&i| b[i].is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(EdfError::header(offset, field, format!("`{s}` is not in dd.mm.yy / hh.mm.ss form")))
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader, EdfError> {
    if bytes.len() < FIXED_HEADER {
        return Err(EdfError::header(
            bytes.len(),
            "fixed header",
            format!("file has only {} of the 256 fixed header bytes", bytes.len()),
        ));
    }
    let version = ascii_field(bytes, 0, 8, "version")?.to_string();
    if version != "0" {
        return Err(EdfError::header(0, "version", format!("expected `0`, found `{version}`")));
    }
    let patient = ascii_field(bytes, 8, 80, "patient")?.to_string();
    let recording = ascii_field(bytes, 88, 80, "recording")?.to_string();
    let start_date = ascii_field(bytes, 168, 8, "start date")?.to_string();
    check_clock(&start_date, 168, "start date")?;
    let start_time = ascii_field(bytes, 176, 8, "start time")?.to_string();
    check_clock(&start_time, 176, "start time")?;
    let header_bytes: usize = numeric(bytes, 184, 8, "header bytes")?;
    let reserved = ascii_field(bytes, 192, 44, "reserved")?.to_string();
    let n_records: i64 = numeric(bytes, 236, 8, "number of data records")?;
    let declared_records = match n_records {
        -1 => None,
        n if n >= 1 => Some(n as usize),
        n => {
            return Err(EdfError::header(236, "number of data records", format!("{n} is neither -1 nor positive")));
        }
    };
    let record_duration: f64 = numeric(bytes, 244, 8, "data record duration")?;
    if !(record_duration.is_finite() && record_duration > 0.0) {
        return Err(EdfError::header(244, "data record duration", format!("{record_duration} s is not positive")));
    }
    let ns: usize = numeric(bytes, 252, 4, "number of signals")?;
    if ns == 0 {
        return Err(EdfError::header(252, "number of signals", "file declares no signals"));
    }
    let expected = FIXED_HEADER + ns * SIGNAL_HEADER;
    if header_bytes != expected {
        return Err(EdfError::header(
            184,
            "header bytes",
            format!("{header_bytes} does not equal 256 * (1 + {ns}) = {expected}"),
        ));
    }
    if bytes.len() < expected {
        return Err(EdfError::header(
            bytes.len(),
            "signal headers",
            format!("file ends inside the signal headers ({} of {expected} bytes)", bytes.len()),
        ));
    }

    let mut field_base = [0usize; 10];
    let mut at = FIXED_HEADER;
    for (i, (_, w)) in SIGNAL_FIELDS.iter().enumerate() {
        field_base[i] = at;
        at += ns * w;
    }
    let off = |f: usize, s: usize| field_base[f] + s * SIGNAL_FIELDS[f].1;

    let mut signals = Vec::with_capacity(ns);
    for s in 0..ns {
        let text = |f: usize| ascii_field(bytes, off(f, s), SIGNAL_FIELDS[f].1, SIGNAL_FIELDS[f].0).map(str::to_string);
        let label = text(0)?;
        let physical_min: f64 = numeric(bytes, off(3, s), 8, SIGNAL_FIELDS[3].0)?;
        let physical_max: f64 = numeric(bytes, off(4, s), 8, SIGNAL_FIELDS[4].0)?;
        let digital_min: i32 = numeric(bytes, off(5, s), 8, SIGNAL_FIELDS[5].0)?;
        let digital_max: i32 = numeric(bytes, off(6, s), 8, SIGNAL_FIELDS[6].0)?;
        let samples_per_record: usize = numeric(bytes, off(8, s), 8, SIGNAL_FIELDS[8].0)?;
        for (v, f) in [(digital_min, 5), (digital_max, 6)] {
            if !(i16::MIN as i32..=i16::MAX as i32).contains(&v) {
                return Err(EdfError::header(off(f, s), SIGNAL_FIELDS[f].0, format!("{v} is outside the 16-bit range")));
            }
        }
        if digital_max == digital_min {
            return Err(EdfError::ZeroDigitalRange {
                signal: s,
                label,
                offset: off(5, s),
            });
        }
        if digital_max < digital_min {
            return Err(EdfError::header(off(6, s), "digital maximum", format!("{digital_max} is below the digital minimum {digital_min}")));
        }
        if !(physical_min.is_finite() && physical_max.is_finite()) || physical_min == physical_max {
            return Err(EdfError::header(off(4, s), "physical maximum", format!("degenerate physical range [{physical_min}, {physical_max}]")));
        }
        if samples_per_record == 0 {
            return Err(EdfError::header(off(8, s), "samples per record", "signal has no samples per record"));
        }
        signals.push(SignalHeader {
            label,
            transducer: text(1)?,
            physical_dimension: text(2)?,
            physical_min,
            physical_max,
            digital_min,
            digital_max,
            prefiltering: text(7)?,
            samples_per_record,
        });
    }

    Ok(EdfHeader {
        version,
        patient,
        recording,
        start_date,
        start_time,
        header_bytes,
        reserved,
        declared_records,
        record_duration,
        signals,
    })
}

pub fn parse_edf(bytes: &[u8]) -> Result<EdfRecording, EdfError> {
    let header = parse_header(bytes)?;
    let rec_bytes = header.record_bytes();
    let data = &bytes[header.header_bytes..];
    let n_records = match header.declared_records {
        Some(n) => {
            let need = (n * rec_bytes) as u64;
            if (data.len() as u64) < need {
                let complete = data.len() / rec_bytes;
                return Err(EdfError::Truncated {
                    offset: (header.header_bytes + complete * rec_bytes) as u64,
                    expected: need,
                    found: data.len() as u64,
                });
            }
            n
        }
        None => data.len() / rec_bytes,
    };

    let mut signals: Vec<EdfSignal> = header
        .signals
        .iter()
        .enumerate()
        .map(|(i, s)| EdfSignal {
            label: s.label.clone(),
            physical_dimension: s.physical_dimension.clone(),
            sample_rate: header.sample_rate(i),
            samples: Vec::with_capacity(n_records * s.samples_per_record),
            resolution: s.gain().abs(),
        })
        .collect();
    let mut at = 0usize;
    for _ in 0..n_records {
        for (sh, out) in header.signals.iter().zip(signals.iter_mut()) {
            let chunk = &data[at..at + sh.samples_per_record * 2];
            out.samples.extend(
                chunk
                    .chunks_exact(2)
                    .map(|b| sh.to_physical(i16::from_le_bytes([b[0], b[1]]))),
            );
            at += chunk.len();
        }
    }
    Ok(EdfRecording { header, signals })
}

pub fn read_edf(path: &Path) -> crate::Result<EdfRecording> {
    let bytes = fs::read(path).map_err(|e| crate::Error::file(path, e))?;
    Ok(parse_edf(&bytes)?)
}

/// One channel handed to [`write_edf`].
#[derive(Clone, Debug)]
pub struct EdfChannel<'a> {
    pub label: &'a str,
    pub physical_dimension: &'a str,
    /// Samples per second; must be a whole number of samples per data record.
    pub sample_rate: f64,
    pub samples: &'a [f64],
}

fn pad(s: &str, width: usize) -> Vec<u8> {
    let mut b: Vec<u8> = s
        .bytes()
        .map(|c| if (0x20..=0x7e).contains(&c) { c } else { b'_' })
        .take(width)
        .collect();
    b.resize(width, b' ');
    b
}

/// Formats `v` into at most 8 characters, rounding away from the data range
/// (`up` rounds towards +inf).
fn fit_number(v: f64, up: bool) -> Result<(String, f64), EdfError> {
    for decimals in (0..=6).rev() {
        let scale = 10f64.powi(decimals);
        let r = if up { (v * scale).ceil() } else { (v * scale).floor() } / scale;
        let s = format!("{r:.*}", decimals as usize);
        if s.len() <= 8 {
            return Ok((s.clone(), s.parse().unwrap()));
        }
    }
    Err(EdfError::Write(format!("physical value {v} does not fit an 8-character field")))
}

/// Serializes channels as a plain EDF file with records of
/// `record_duration` seconds. A trailing partial record is zero-padded.
pub fn encode_edf(channels: &[EdfChannel<'_>], record_duration: f64, patient: &str) -> Result<Vec<u8>, EdfError> {
    if channels.is_empty() {
        return Err(EdfError::Write("no channels".into()));
    }
    let ns = channels.len();
    let mut spr = Vec::with_capacity(ns);
    let mut ranges = Vec::with_capacity(ns);
    let mut n_records = 0usize;
    for ch in channels {
        let per = ch.sample_rate * record_duration;
        if per < 1.0 || (per - per.round()).abs() > 1e-9 {
            return Err(EdfError::Write(format!(
                "channel `{}`: {} Hz x {record_duration} s is not a whole number of samples",
                ch.label, ch.sample_rate
            )));
        }
        let per = per.round() as usize;
        spr.push(per);
        n_records = n_records.max(ch.samples.len().div_ceil(per));
        let (mut lo, mut hi) = ch
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (-1.0, 1.0);
        }
        // Zero padding of the last record must stay representable.
        lo = lo.min(0.0);
        hi = hi.max(0.0);
        if hi - lo < 1e-6 {
            hi = lo + 1.0;
        }
        let (smin, pmin) = fit_number(lo, false)?;
        let (smax, pmax) = fit_number(hi, true)?;
        ranges.push((smin, pmin, smax, pmax));
    }
    let n_records = n_records.max(1);
    let dmin = i16::MIN as i32;
    let dmax = i16::MAX as i32;

    let mut out = Vec::new();
    out.extend(pad("0", 8));
    out.extend(pad(patient, 80));
    out.extend(pad("Startdate X X X X", 80));
    out.extend(pad("01.01.00", 8));
    out.extend(pad("00.00.00", 8));
    out.extend(pad(&(FIXED_HEADER + ns * SIGNAL_HEADER).to_string(), 8));
    out.extend(pad("", 44));
    out.extend(pad(&n_records.to_string(), 8));
    out.extend(pad(&format!("{record_duration}"), 8));
    out.extend(pad(&ns.to_string(), 4));
    for ch in channels {
        out.extend(pad(ch.label, 16));
    }
    for _ in channels {
        out.extend(pad("", 80));
    }
    for ch in channels {
        out.extend(pad(ch.physical_dimension, 8));
    }
    for r in &ranges {
        out.extend(pad(&r.0, 8));
    }
    for r in &ranges {
        out.extend(pad(&r.2, 8));
    }
    for _ in channels {
        out.extend(pad(&dmin.to_string(), 8));
    }
    for _ in channels {
        out.extend(pad(&dmax.to_string(), 8));
    }
    for _ in channels {
        out.extend(pad("", 80));
    }
    for &s in &spr {
        out.extend(pad(&s.to_string(), 8));
    }
    for _ in channels {
        out.extend(pad("", 32));
    }
    debug_assert_eq!(out.len(), FIXED_HEADER + ns * SIGNAL_HEADER);

    for rec in 0..n_records {
        for (i, ch) in channels.iter().enumerate() {
            let (_, pmin, _, pmax) = ranges[i];
            let scale = (dmax - dmin) as f64 / (pmax - pmin);
            for j in 0..spr[i] {
                let v = ch.samples.get(rec * spr[i] + j).copied().unwrap_or(0.0);
                let d = ((v - pmin) * scale + dmin as f64).round().clamp(dmin as f64, dmax as f64) as i16;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_edf(path: &Path, channels: &[EdfChannel<'_>], record_duration: f64, patient: &str) -> crate::Result<()> {
    let bytes = encode_edf(channels, record_duration, patient)?;
    fs::write(path, bytes).map_err(|e| crate::Error::file(path, e))
}
