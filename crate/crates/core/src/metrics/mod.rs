//! Training objectives and evaluation metrics.

pub mod loss;

use std::ops::{Add, AddAssign};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub use loss::{cross_entropy, dice_loss, dice_loss_with, one_hot, DiceVariant};

/// Counts of (true class, predicted class) pairs. Rows are true classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let k = rows.len();
        let mut cm = Self::new(k);
        for (a, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension(format!(
                    "confusion row {a} has {} entries, expected {k}",
                    row.len()
                )));
            }
            cm.counts[a * k..(a + 1) * k].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Dimension(format!(
                "{} true labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Label(format!(
                "label pair ({truth}, {pred}) out of range for {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.k).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|b| (0..self.k).map(|a| self.get(a, b)).sum())
            .collect()
    }

    pub fn f1(&self) -> F1Report {
        f1_from_confusion(self)
    }

    /// CSV with a header of predicted class names and one row per true class.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut s = String::from("true\\pred");
        for n in names.iter().take(self.k) {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for a in 0..self.k {
            s.push_str(names.get(a).copied().unwrap_or("?"));
            for b in 0..self.k {
                s.push_str(&format!(",{}", self.get(a, b)));
            }
            s.push('\n');
        }
        s
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.k, rhs.k, "adding confusion matrices of different class counts");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

impl Add for &ConfusionMatrix {
    type Output = ConfusionMatrix;
    fn add(self, rhs: &ConfusionMatrix) -> ConfusionMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

/// Element-wise sum of a list of matrices.
pub fn sum_confusions(items: &[ConfusionMatrix], k: usize) -> ConfusionMatrix {
    items.iter().fold(ConfusionMatrix::new(k), |mut acc, m| {
        acc += m;
        acc
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Report {
    pub per_class: Vec<f64>,
    pub mean: f64,
    /// Classes with neither support nor predictions; their F1 is reported as 0.
    pub undefined: Vec<bool>,
}

/// `F1_k = 2 TP_k / (2 TP_k + FP_k + FN_k)`.
pub fn f1_from_confusion(cm: &ConfusionMatrix) -> F1Report {
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let mut per_class = Vec::with_capacity(cm.k);
    let mut undefined = Vec::with_capacity(cm.k);
    for c in 0..cm.k {
        let tp = cm.get(c, c) as f64;
        // 2TP + FP + FN = row + col
        let den = (rows[c] + cols[c]) as f64;
        if den == 0.0 {
            per_class.push(0.0);
            undefined.push(true);
        } else {
            per_class.push(2.0 * tp / den);
            undefined.push(false);
        }
    }
    let mean = per_class.iter().sum::<f64>() / cm.k.max(1) as f64;
    F1Report {
        per_class,
        mean,
        undefined,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

/// Per-class statistics of per-record F1 scores.
#[derive(Clone, Debug, PartialEq)]
pub struct PerRecordF1 {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Number of records contributing to each class.
    pub count: Vec<usize>,
}

/// Aggregates the F1 of each record separately. A record where a class has
/// neither support nor predictions does not contribute to that class.
pub fn per_record_f1(records: &[ConfusionMatrix], std_kind: StdKind) -> Result<PerRecordF1> {
    let first = records
        .first()
        .ok_or_else(|| Error::Parameter("per-record F1 needs at least one record".into()))?;
    let k = first.k;
    let reports: Vec<F1Report> = records.iter().map(f1_from_confusion).collect();
    let mut out = PerRecordF1 {
        mean: vec![0.0; k],
        std: vec![0.0; k],
        min: vec![0.0; k],
        max: vec![0.0; k],
        count: vec![0; k],
    };
    for c in 0..k {
        let vals: Vec<f64> = reports
            .iter()
            .filter(|r| !r.undefined[c])
            .map(|r| r.per_class[c])
            .collect();
        out.count[c] = vals.len();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let ss: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
        let denom = match std_kind {
            StdKind::Population => n,
            StdKind::Sample => (n - 1.0).max(1.0),
        };
        out.mean[c] = mean;
        out.std[c] = (ss / denom).sqrt();
        out.min[c] = vals.iter().copied().fold(f64::INFINITY, f64::min);
        out.max[c] = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(out)
}

fn named(names: &[&str], values: &[f64]) -> Value {
    let mut m = Map::new();
    for (n, v) in names.iter().zip(values) {
        m.insert((*n).to_string(), json!(v));
    }
    Value::Object(m)
}

/// `{"global": {"per_class", "mean"}, "per_record": {"mean", "std", "min", "max"}}`
pub fn metrics_json(global: &ConfusionMatrix, records: &[ConfusionMatrix], names: &[&str], std_kind: StdKind) -> Result<Value> {
    let g = f1_from_confusion(global);
    let mut root = Map::new();
    root.insert(
        "global".into(),
        json!({
            "per_class": named(names, &g.per_class),
            "mean": g.mean,
            "segments": global.total(),
        }),
    );
    if !records.is_empty() {
        let pr = per_record_f1(records, std_kind)?;
        root.insert(
            "per_record".into(),
            json!({
                "records": records.len(),
                "mean": named(names, &pr.mean),
                "std": named(names, &pr.std),
                "min": named(names, &pr.min),
                "max": named(names, &pr.max),
            }),
        );
    }
    Ok(Value::Object(root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_labels_fill_the_diagonal() {
        let cm = ConfusionMatrix::from_labels(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(cm.get(a, b), (a == b) as u64);
            }
        }
        assert_eq!(cm.f1().per_class, vec![1.0; 3]);
    }

    #[test]
    fn off_diagonal_counts() {
        let cm = ConfusionMatrix::from_labels(&[0, 0], &[1, 1], 2).unwrap();
        assert_eq!(cm.get(0, 1), 2);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(matches!(
            ConfusionMatrix::from_labels(&[0, 5], &[0, 0], 5),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn absent_class_is_flagged_zero() {
        let cm = ConfusionMatrix::from_labels(&[0, 1], &[0, 1], 3).unwrap();
        let r = cm.f1();
        assert_eq!(r.per_class[2], 0.0);
        assert!(r.undefined[2]);
        assert!(!r.undefined[0]);
    }

    #[test]
    fn single_and_duplicate_records() {
        let cm = ConfusionMatrix::from_labels(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        let one = per_record_f1(std::slice::from_ref(&cm), StdKind::Population).unwrap();
        assert_eq!(one.mean, cm.f1().per_class);
        assert_eq!(one.std, vec![0.0, 0.0]);
        let two = per_record_f1(&[cm.clone(), cm.clone()], StdKind::Population).unwrap();
        assert_eq!(two.std, vec![0.0, 0.0]);
        assert_eq!(two.min, two.max);
        assert!(per_record_f1(&[], StdKind::Population).is_err());
    }

    #[test]
    fn global_and_per_record_f1_differ() {
        // One large accurate record and one small poor record.
        let a = ConfusionMatrix::from_rows(&[&[90, 10], &[10, 90]]).unwrap();
        let b = ConfusionMatrix::from_rows(&[&[1, 4], &[4, 1]]).unwrap();
        let global = (&a + &b).f1();
        let pr = per_record_f1(&[a, b], StdKind::Population).unwrap();
        assert!((global.per_class[0] - pr.mean[0]).abs() > 0.1);
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_rows(&[&[3, 1], &[0, 2]]).unwrap();
        assert_eq!(cm.to_csv(&["W", "N1"]), "true\\pred,W,N1\nW,3,1\nN1,0,2\n");
    }

    fn brute_f1(truth: &[usize], pred: &[usize], c: usize) -> Option<f64> {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count();
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count();
        let fn_ = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count();
        let den = 2 * tp + fp + fn_;
        (den > 0).then(|| 2.0 * tp as f64 / den as f64)
    }

    proptest! {
        #[test]
        fn row_sums_are_class_frequencies(pairs in proptest::collection::vec((0usize..5, 0usize..5), 0..200)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = ConfusionMatrix::from_labels(&t, &p, 5).unwrap();
            let rows = cm.row_sums();
            for c in 0..5 {
                prop_assert_eq!(rows[c] as usize, t.iter().filter(|&&v| v == c).count());
            }
            prop_assert_eq!(cm.total() as usize, t.len());
        }

        #[test]
        fn per_record_matches_brute_force(records in proptest::collection::vec(proptest::collection::vec((0usize..3, 0usize..3), 1..40), 1..6)) {
            let cms: Vec<ConfusionMatrix> = records.iter().map(|r| {
                let (t, p): (Vec<_>, Vec<_>) = r.iter().copied().unzip();
                ConfusionMatrix::from_labels(&t, &p, 3).unwrap()
            }).collect();
            let pr = per_record_f1(&cms, StdKind::Population).unwrap();
            for c in 0..3 {
                let vals: Vec<f64> = records.iter().filter_map(|r| {
                    let (t, p): (Vec<_>, Vec<_>) = r.iter().copied().unzip();
                    brute_f1(&t, &p, c)
                }).collect();
                prop_assert_eq!(pr.count[c], vals.len());
                if !vals.is_empty() {
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
                    prop_assert!((pr.mean[c] - m).abs() < 1e-12);
                    prop_assert!((pr.std[c] - sd).abs() < 1e-12);
                }
            }
        }
    }
}
