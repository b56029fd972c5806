//! Config file loading and the metric reports shared by several commands.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Map, Value};
use utime::config::ConfigDoc;
use utime::metrics::{metrics_json, per_record_f1, StdKind};
use utime::signal::{PsgRecord, CLASS_NAMES};
use utime::train::{Evaluation, TrainConfig};
use utime::UTimeConfig;

use crate::args::{Aggregation, StdArg};
use crate::run_dir::RunDir;

#[derive(Clone, Debug)]
pub struct Settings {
    pub model: UTimeConfig,
    pub train: TrainConfig,
}

impl Settings {
    /// Reads `path` (defaults when `None`); `seed` replaces `train.seed`.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let doc = ConfigDoc::parse(&text).with_context(|| format!("in {}", p.display()))?;
                if let Some(s) = doc.sections.iter().find(|s| s.name != "model" && s.name != "train") {
                    bail!("{}: unknown section [{}]", p.display(), s.name);
                }
                doc
            }
            None => ConfigDoc::default(),
        };
        let model = UTimeConfig::from_doc(&doc)?;
        let mut train = TrainConfig::from_doc(&doc)?;
        if let Some(s) = seed {
            train.seed = s;
        }
        Ok(Self { model, train })
    }

    pub fn to_text(&self) -> String {
        let mut doc = ConfigDoc::default();
        doc.push(self.model.to_section());
        doc.push(self.train.to_section());
        doc.to_text()
    }

    /// Rejects records whose channel count or segment width the model cannot take.
    pub fn check_records(&self, records: &[PsgRecord]) -> Result<()> {
        if records.is_empty() {
            bail!("no records to work on");
        }
        for r in records {
            if r.n_channels() != self.model.in_channels {
                bail!(
                    "{}: {} channels but the model takes {} (set model.in_channels)",
                    r.record_id,
                    r.n_channels(),
                    self.model.in_channels
                );
            }
            if r.segment_samples != self.model.segment_samples {
                bail!(
                    "{}: {} samples per segment but the model expects {}",
                    r.record_id,
                    r.segment_samples,
                    self.model.segment_samples
                );
            }
        }
        Ok(())
    }
}

impl From<StdArg> for StdKind {
    fn from(s: StdArg) -> Self {
        match s {
            StdArg::Population => StdKind::Population,
            StdArg::Sample => StdKind::Sample,
        }
    }
}

/// The `metrics.json` document: headline F1, global and per-record statistics,
/// and the F1 of every record.
pub fn metrics_document(eval: &Evaluation, aggregation: Aggregation, std: StdArg) -> Result<Value> {
    let names = &CLASS_NAMES[..eval.global.classes()];
    let mats = eval.matrices();
    let base = metrics_json(&eval.global, &mats, names, std.into())?;
    let headline = match aggregation {
        Aggregation::Global => eval.global.f1().mean,
        Aggregation::PerRecord => {
            let pr = per_record_f1(&mats, std.into())?;
            pr.mean.iter().sum::<f64>() / pr.mean.len() as f64
        }
    };
    let mut root = Map::new();
    root.insert(
        "aggregation".into(),
        json!(match aggregation {
            Aggregation::Global => "global",
            Aggregation::PerRecord => "per_record",
        }),
    );
    root.insert("mean_f1".into(), json!(headline));
    if let Value::Object(m) = base {
        root.extend(m);
    }
    let mut recs = Map::new();
    for (id, cm) in &eval.records {
        let f = cm.f1();
        let per: Map<String, Value> = names.iter().zip(&f.per_class).map(|(n, v)| (n.to_string(), json!(v))).collect();
        recs.insert(id.clone(), json!({"per_class": per, "mean": f.mean, "segments": cm.total()}));
    }
    root.insert("records".into(), Value::Object(recs));
    Ok(Value::Object(root))
}

/// Writes `metrics.json`, `confusion_global.csv` and one `confusion_<record>.csv` per record.
pub fn write_evaluation(dir: &RunDir, eval: &Evaluation, aggregation: Aggregation, std: StdArg) -> Result<()> {
    let names = &CLASS_NAMES[..eval.global.classes()];
    dir.write_json("metrics.json", &metrics_document(eval, aggregation, std)?)?;
    dir.write("confusion_global.csv", eval.global.to_csv(names))?;
    for (id, cm) in &eval.records {
        dir.write(&format!("confusion_{id}.csv"), cm.to_csv(names))?;
    }
    Ok(())
}
