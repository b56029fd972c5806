use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;
use utime::metrics::ConfusionMatrix;
use utime::model::receptive_field;
use utime::signal::{
    load_cache, prepare_record, prepare_unlabeled, read_manifest, write_cache_index, write_cache_record,
    PrepareOptions, PsgRecord, CLASS_NAMES,
};
use utime::synth::{generate_dataset, SynthConfig};
use utime::tensor::{argmax_rows, checkpoint, Tensor};
use utime::train::{self, evaluate, holdout_split, make_cv_plan, Evaluation, Split, TrainOptions};
use utime::{Head, UTimeModel};

use crate::args::*;
use crate::run_dir::RunDir;
use crate::settings::{write_evaluation, Settings};

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        channels: a.channels,
        ..Default::default()
    };
    let seed = a.seed.seed.unwrap_or(0);
    let entries = generate_dataset(&a.out, seed, a.subjects, a.segments, &cfg)?;
    log::info!("wrote {} synthetic records to {}", entries.len(), a.out.display());
    println!("{}", a.out.join("manifest.csv").display());
    Ok(())
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let entries = read_manifest(&a.manifest)?;
    if entries.is_empty() {
        bail!("{}: manifest lists no records", a.manifest.display());
    }
    let opts = PrepareOptions {
        sample_rate: a.rate,
        channels: a.channels.clone(),
        trim_wake_margins: a.trim_wake_margins,
        margin_segments: a.margin,
        outlier_factor: a.outlier_factor,
        ..Default::default()
    };
    let dir = RunDir::create(&a.out, "prepare", None, None, &a.manifest)?;
    let mut index = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for e in &entries {
        match prepare_record(e, &opts) {
            Ok((rec, report)) => {
                index.push(write_cache_record(&a.out, &rec)?);
                reports.push(report);
            }
            Err(err) => {
                log::error!("{}: {err}", e.record_id());
                failures.push(json!({"record_id": e.record_id(), "error": err.to_string()}));
            }
        }
    }
    write_cache_index(&a.out, &index)?;
    dir.write_json(
        "prepare_report.json",
        &json!({
            "sample_rate": a.rate,
            "channels": a.channels,
            "trim_wake_margins": a.trim_wake_margins,
            "records": reports,
            "failures": failures,
        }),
    )?;
    let n_fail = failures.len();
    dir.finish()?;
    log::info!("prepared {} records, {n_fail} failed", index.len());
    if a.strict && n_fail > 0 {
        bail!("{n_fail} of {} records failed to prepare", entries.len());
    }
    Ok(())
}

fn pick(records: &[PsgRecord], idx: &[usize]) -> Vec<PsgRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

fn ids(records: &[PsgRecord], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| records[i].record_id.clone()).collect()
}

/// Trains one model on `split` inside `dir` and returns the trained model.
fn train_in(dir: &RunDir, settings: &Settings, records: &[PsgRecord], split: &Split, model_seed: u64) -> Result<UTimeModel> {
    dir.write("config.txt", settings.to_text())?;
    dir.write_json(
        "split.json",
        &json!({
            "train": ids(records, &split.train),
            "val": ids(records, &split.val),
            "test": ids(records, &split.test),
        }),
    )?;
    let mut model = UTimeModel::new(settings.model.clone(), model_seed)?;
    let run = train::train(
        &mut model,
        &pick(records, &split.train),
        &pick(records, &split.val),
        &settings.train,
        TrainOptions {
            out_dir: Some(&dir.path),
            ..Default::default()
        },
    )?;
    dir.write_json("train_run.json", &run)?;
    Ok(model)
}

fn load_data(settings: &Settings, data: &Path) -> Result<Vec<PsgRecord>> {
    let records = load_cache(data).with_context(|| format!("loading cache {}", data.display()))?;
    settings.check_records(&records)?;
    Ok(records)
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let settings = Settings::load(a.config.as_deref(), a.seed.seed)?;
    let records = load_data(&settings, &a.data)?;
    let subjects: Vec<String> = records.iter().map(|r| r.subject_id.clone()).collect();
    let split = holdout_split(&subjects, settings.train.seed)?;
    let dir = RunDir::create(&a.out, "train", a.config.as_deref(), Some(settings.train.seed), &a.data)?;
    let model = train_in(&dir, &settings, &records, &split, settings.train.seed)?;
    let val = pick(&records, &split.val);
    let eval = evaluate(&model, &val, settings.model.transition_window, settings.train.eval_batch)?;
    write_evaluation(&dir, &eval, Aggregation::Global, StdArg::Population)?;
    println!("validation mean F1 {:.4}", eval.mean_f1());
    dir.finish()
}

/// Model initialisation seed of CV split `i`.
fn split_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

pub fn cv(a: &CvArgs) -> Result<()> {
    let settings = Settings::load(a.config.as_deref(), a.seed.seed)?;
    let records = load_data(&settings, &a.data)?;
    let subjects: Vec<String> = records.iter().map(|r| r.subject_id.clone()).collect();
    let plan = make_cv_plan(&subjects, a.splits, settings.train.seed)?;
    let top = RunDir::create(&a.out, "cv", a.config.as_deref(), Some(settings.train.seed), &a.data)?;
    top.write("config.txt", settings.to_text())?;
    let named: Vec<_> = plan
        .splits
        .iter()
        .map(|s| json!({"index": s.index, "train": ids(&records, &s.train), "val": ids(&records, &s.val), "test": ids(&records, &s.test)}))
        .collect();
    top.write_json("cv_plan.json", &json!({"n_splits": plan.n_splits, "assignment": plan.assignment, "splits": named}))?;

    let results: Mutex<Vec<Option<Evaluation>>> = Mutex::new(vec![None; plan.splits.len()]);
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<anyhow::Error>> = Mutex::new(None);
    let run_split = |split: &Split| -> Result<Evaluation> {
        let path = a.out.join(format!("split_{:02}", split.index));
        let dir = RunDir::create(&path, "cv-split", a.config.as_deref(), Some(settings.train.seed), &a.data)?;
        let model = train_in(&dir, &settings, &records, split, split_seed(settings.train.seed, split.index))?;
        let test = pick(&records, &split.test);
        let eval = evaluate(&model, &test, settings.model.transition_window, settings.train.eval_batch)?;
        write_evaluation(&dir, &eval, Aggregation::Global, StdArg::Population)?;
        log::info!("split {}: test mean F1 {:.4}", split.index, eval.mean_f1());
        dir.finish()?;
        Ok(eval)
    };
    std::thread::scope(|s| {
        for _ in 0..a.jobs.clamp(1, plan.splits.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= plan.splits.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                match run_split(&plan.splits[i]) {
                    Ok(e) => results.lock().unwrap()[i] = Some(e),
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e.context(format!("split {i}")));
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut global = ConfusionMatrix::new(settings.model.classes);
    let mut per_record = Vec::new();
    for e in results.into_inner().unwrap().into_iter().flatten() {
        global += &e.global;
        per_record.extend(e.records);
    }
    let total = Evaluation {
        global,
        records: per_record,
    };
    write_evaluation(&top, &total, Aggregation::Global, StdArg::Population)?;
    println!("cross-validated mean F1 {:.4}", total.mean_f1());
    top.finish()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let settings = Settings::load(a.config.as_deref(), None)?;
    let mut records = load_data(&settings, &a.data)?;
    if !a.records.is_empty() {
        for id in &a.records {
            if !records.iter().any(|r| &r.record_id == id) {
                bail!("record `{id}` is not in {}", a.data.display());
            }
        }
        records.retain(|r| a.records.contains(&r.record_id));
    }
    let model = UTimeModel::load(settings.model.clone(), &a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let dir = RunDir::create(&a.out, "eval", a.config.as_deref(), None, &a.data)?;
    let eval = evaluate(&model, &records, settings.model.transition_window, settings.train.eval_batch)?;
    write_evaluation(&dir, &eval, a.aggregation, a.std)?;
    println!("mean F1 {:.4}", eval.mean_f1());
    dir.finish()
}

/// Parses `1/30`, `0.5` or `2` as a frequency in Hz.
pub fn parse_freq(s: &str) -> Result<f64> {
    let v = match s.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>()? / d.trim().parse::<f64>()?,
        None => s.trim().parse::<f64>()?,
    };
    if !(v.is_finite() && v > 0.0) {
        bail!("frequency `{s}` must be positive");
    }
    Ok(v)
}

/// Samples per output label at frequency `freq`.
pub fn samples_per_label(sample_rate: f64, freq: f64) -> Result<usize> {
    let n = sample_rate / freq;
    let r = n.round();
    if (n - r).abs() > 1e-6 || r < 1.0 {
        bail!("{freq} Hz does not divide the {sample_rate} Hz sample rate into whole samples");
    }
    Ok(r as usize)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let settings = Settings::load(a.config.as_deref(), None)?;
    let model = UTimeModel::load(settings.model.clone(), &a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let opts = PrepareOptions {
        sample_rate: a.rate,
        channels: a.channels.clone(),
        ..Default::default()
    };
    let rec = prepare_unlabeled(&a.record, &opts)?;
    settings.check_records(std::slice::from_ref(&rec))?;
    let t = rec.n_samples();
    let x = Tensor::new([1, t, rec.n_channels()], rec.window(0..rec.n_segments()))?;
    let names = &CLASS_NAMES[..settings.model.classes];
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    if a.dense {
        let p = model.predict_with(&x, Head::DenseProbabilities)?;
        if a.binary {
            let path = a.out.as_ref().ok_or_else(|| anyhow!("--binary needs --out"))?;
            drop(out);
            checkpoint::save(path, &[("dense_probabilities", &p)])?;
            return Ok(());
        }
        writeln!(out, "sample_index,{}", names.join(","))?;
        for (n, row) in p.data().chunks(names.len()).enumerate() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{n},{}", vals.join(","))?;
        }
        return Ok(out.flush()?);
    }
    let step = samples_per_label(a.rate, parse_freq(&a.freq)?)?;
    if t % step != 0 {
        bail!("{t} samples are not a whole number of {step}-sample output periods");
    }
    let p = model.predict_with(&x, Head::Segments(step))?;
    let labels = argmax_rows(&p);
    writeln!(out, "segment_index\tonset_s\tstage\tconfidence")?;
    for (n, (row, &k)) in p.data().chunks(names.len()).zip(&labels).enumerate() {
        let onset = (n * step) as f64 / a.rate;
        writeln!(out, "{n}\t{onset}\t{}\t{:.6}", names[k], row[k])?;
    }
    Ok(out.flush()?)
}

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let settings = Settings::load(a.config.as_deref(), None)?;
    let c = &settings.model;
    let model: UTimeModel = match &a.checkpoint {
        Some(p) => UTimeModel::load(c.clone(), p).with_context(|| format!("loading {}", p.display()))?,
        None => UTimeModel::new(c.clone(), 0)?,
    };
    let rf = receptive_field(c);
    println!("trainable parameters: {}", model.count_parameters());
    println!("receptive field: {rf} samples ({:.1} s at 100 Hz)", rf as f64 / 100.0);
    println!("minimum input length: {} samples", c.t_min());
    println!("segment: {} samples, window: {} segments", c.segment_samples, c.transition_window);
    if a.layers {
        for p in model.params() {
            println!("{:<28} {:>18} {:>9}", p.name, format!("{:?}", p.value.shape()), p.value.len());
        }
    }
    if let Some(t) = a.trace {
        let x = Tensor::zeros([1, t, c.in_channels]);
        for row in model.trace(&x, Head::Segments(c.segment_samples))? {
            println!("{:<24} {:<10} {:?}", row.name, row.kind, row.shape);
        }
    }
    Ok(())
}
