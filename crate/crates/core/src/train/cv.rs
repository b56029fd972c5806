use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Fraction of the non-test records held out for validation (rounded up, at least one).
pub const VALIDATION_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Split {
    pub index: usize,
    /// Indices into the record list the plan was built from.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CvPlan {
    pub n_splits: usize,
    pub assignment: BTreeMap<String, usize>,
    pub splits: Vec<Split>,
}

pub fn validation_size(train_records: usize) -> usize {
    ((train_records as f64 * VALIDATION_FRACTION).ceil() as usize).max(1)
}

fn group(subjects: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (r, s) in subjects.iter().enumerate() {
        by_subject.entry(s.as_str()).or_default().push(r);
    }
    by_subject
}

fn collect(by_subject: &BTreeMap<&str, Vec<usize>>, subs: &[&str]) -> Vec<usize> {
    let mut v: Vec<usize> = subs.iter().flat_map(|s| by_subject[s].iter().copied()).collect();
    v.sort_unstable();
    v
}

/// Shuffles `pool` and takes subjects from its front until they hold
/// `ceil(5%)` of the pool's records, always leaving one subject for training.
/// Returns `(validation, training)` subjects.
fn draw_validation<'a>(
    mut pool: Vec<&'a str>,
    by_subject: &BTreeMap<&str, Vec<usize>>,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<&'a str>, Vec<&'a str>)> {
    let n: usize = pool.iter().map(|s| by_subject[s].len()).sum();
    let target = validation_size(n);
    pool.shuffle(rng);
    let mut taken = 0;
    let mut got = 0;
    while got < target && taken + 1 < pool.len() {
        got += by_subject[pool[taken]].len();
        taken += 1;
    }
    if taken == 0 {
        return None;
    }
    let train = pool.split_off(taken);
    Some((pool, train))
}

/// Single train/validation split by subject, for training without a test fold.
pub fn holdout_split(subjects: &[String], seed: u64) -> Result<Split> {
    let by_subject = group(subjects);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<&str> = by_subject.keys().copied().collect();
    let (val, train) = draw_validation(pool, &by_subject, &mut rng)
        .ok_or_else(|| Error::Plan("need at least two subjects to hold out a validation set".into()))?;
    Ok(Split {
        index: 0,
        train: collect(&by_subject, &train),
        val: collect(&by_subject, &val),
        test: Vec::new(),
    })
}

/// Per-subject split plan. `subjects[r]` is the subject of record `r`.
pub fn make_cv_plan(subjects: &[String], n_splits: usize, seed: u64) -> Result<CvPlan> {
    if n_splits < 2 {
        return Err(Error::Plan(format!("need at least 2 splits, got {n_splits}")));
    }
    let by_subject = group(subjects);
    if by_subject.len() < n_splits {
        return Err(Error::Plan(format!(
            "{} distinct subjects cannot fill {n_splits} splits",
            by_subject.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&str> = by_subject.keys().copied().collect();
    order.shuffle(&mut rng);

    let mut assignment = BTreeMap::new();
    for (n, s) in order.iter().enumerate() {
        assignment.insert(s.to_string(), n % n_splits);
    }

    let mut splits = Vec::with_capacity(n_splits);
    for f in 0..n_splits {
        let test_subjects: Vec<&str> = order.iter().copied().filter(|s| assignment[*s] == f).collect();
        let rest: Vec<&str> = order.iter().copied().filter(|s| assignment[*s] != f).collect();
        let (val_subjects, train_subjects) = draw_validation(rest, &by_subject, &mut rng).ok_or_else(|| {
            Error::Plan(format!("split {f}: a single training subject leaves nothing for validation"))
        })?;
        splits.push(Split {
            index: f,
            train: collect(&by_subject, &train_subjects),
            val: collect(&by_subject, &val_subjects),
            test: collect(&by_subject, &test_subjects),
        });
    }
    Ok(CvPlan {
        n_splits,
        assignment,
        splits,
    })
}
