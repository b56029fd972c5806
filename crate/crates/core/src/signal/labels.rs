//! Hypnogram label files.
//!
//! Two CSV schemas are accepted, with or without a header row:
//! `epoch_index,stage` and `onset_s,duration_s,stage` (intervals expanded to
//! fixed-length epochs). Epochs not covered by any row are `UNSCORED`.

use std::path::Path;

use super::stages::UNSCORED;
use crate::error::{Error, Result};

pub const EPOCH_SECONDS: f64 = 30.0;

fn label_err(path: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Label(format!("{path}:{line}: {msg}"))
}

/// Raw stage tokens, one per epoch, starting at epoch 0.
pub fn parse_labels(text: &str, origin: &str) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut epochs: Vec<Option<String>> = Vec::new();
    let put = |epochs: &mut Vec<Option<String>>, idx: usize, stage: &str, line: usize| -> Result<()> {
        if epochs.len() <= idx {
            epochs.resize(idx + 1, None);
        }
        if epochs[idx].is_some() {
            return Err(label_err(origin, line, format!("epoch {idx} labelled twice")));
        }
        epochs[idx] = Some(stage.to_string());
        Ok(())
    };
    let mut width = None;
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| label_err(origin, n + 1, e))?;
        let line = rec.position().map_or(n + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let fields: Vec<&str> = rec.iter().collect();
        if width.is_none() && fields[0].parse::<f64>().is_err() {
            // Header row.
            width = Some(fields.len());
            continue;
        }
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w || !(w == 2 || w == 3) {
            return Err(label_err(origin, line, format!("expected 2 or 3 columns consistently, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| label_err(origin, line, format!("`{s}` is not a number")));
        if w == 2 {
            let idx = num(fields[0])?;
            if idx < 0.0 || idx.fract() != 0.0 {
                return Err(label_err(origin, line, format!("epoch index `{}` is not a non-negative integer", fields[0])));
            }
            put(&mut epochs, idx as usize, fields[1], line)?;
        } else {
            let (onset, dur) = (num(fields[0])?, num(fields[1])?);
            if onset < 0.0 || dur < 0.0 {
                return Err(label_err(origin, line, "negative onset or duration"));
            }
            let first = (onset / EPOCH_SECONDS).round() as usize;
            let count = (dur / EPOCH_SECONDS).round() as usize;
            for e in first..first + count {
                put(&mut epochs, e, fields[2], line)?;
            }
        }
    }
    Ok(epochs.into_iter().map(|e| e.unwrap_or_else(|| UNSCORED.to_string())).collect())
}

pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_labels(&text, &path.display().to_string())
}

/// `epoch_index,stage` rows with a header.
pub fn format_labels<S: AsRef<str>>(stages: &[S]) -> String {
    let mut out = String::from("epoch_index,stage\n");
    for (i, s) in stages.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", s.as_ref()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_schema_with_header_and_gap() {
        let l = parse_labels("epoch_index,stage\n0,W\n1,S1\n3,R\n", "t").unwrap();
        assert_eq!(l, ["W", "S1", UNSCORED, "R"]);
    }

    #[test]
    fn interval_schema_expands() {
        let l = parse_labels("onset_s,duration_s,stage\n0,90,W\n90,30,N1\n", "t").unwrap();
        assert_eq!(l, ["W", "W", "W", "N1"]);
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_labels("0,W\n0,N1\n", "f.csv").unwrap_err().to_string();
        assert!(e.contains("f.csv:2"), "{e}");
        let e = parse_labels("0,W\n1,2,N1\n", "f.csv").unwrap_err().to_string();
        assert!(e.contains("f.csv:2"), "{e}");
    }

    #[test]
    fn format_roundtrip() {
        let stages = ["W", "N2", "REM"];
        assert_eq!(parse_labels(&format_labels(&stages), "t").unwrap(), stages);
    }
}
