//! Sleep-stage vocabulary and its mapping onto the five AASM classes.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    W,
    N1,
    N2,
    N3,
    Rem,
}

pub const CLASS_NAMES: [&str; 5] = ["W", "N1", "N2", "N3", "REM"];

/// Written for segments excluded from scoring.
pub const UNSCORED: &str = "UNSCORED";

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize(token: &str) -> String {
    token.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_uppercase()
}

/// Maps source tokens (R&K or AASM, case-insensitive) to a stage, or to
/// `None` for segments that are discarded from scoring.
#[derive(Clone, Debug)]
pub struct StageMap {
    map: HashMap<String, Option<Stage>>,
}

impl Default for StageMap {
    fn default() -> Self {
        use Stage::*;
        let mut m = StageMap { map: HashMap::new() };
        let table: [(&[&str], Option<Stage>); 6] = [
            (&["W", "WAKE", "SLEEP STAGE W"], Some(W)),
            (&["N1", "S1", "SLEEP STAGE 1", "SLEEP STAGE N1"], Some(N1)),
            (&["N2", "S2", "SLEEP STAGE 2", "SLEEP STAGE N2"], Some(N2)),
            (
                &["N3", "S3", "S4", "SLEEP STAGE 3", "SLEEP STAGE 4", "SLEEP STAGE N3"],
                Some(N3),
            ),
            (&["R", "REM", "SLEEP STAGE R"], Some(Rem)),
            (
                &["MOVEMENT", "MOVEMENT TIME", "MT", "UNSCORED", "UNKNOWN", "?", "SLEEP STAGE ?"],
                None,
            ),
        ];
        for (tokens, stage) in table {
            for t in tokens {
                m.insert(t, stage);
            }
        }
        m
    }
}

impl StageMap {
    pub fn insert(&mut self, token: &str, stage: Option<Stage>) {
        self.map.insert(normalize(token), stage);
    }

    pub fn map(&self, token: &str) -> Result<Option<Stage>> {
        self.map
            .get(&normalize(token))
            .copied()
            .ok_or_else(|| Error::Vocabulary(token.trim().to_string()))
    }
}

/// Class indices and the scored mask; discarded segments get label 0 and mask false.
pub fn map_stages<S: AsRef<str>>(raw: &[S], map: &StageMap) -> Result<(Vec<usize>, Vec<bool>)> {
    let mut labels = Vec::with_capacity(raw.len());
    let mut mask = Vec::with_capacity(raw.len());
    for t in raw {
        match map.map(t.as_ref())? {
            Some(s) => {
                labels.push(s.index());
                mask.push(true);
            }
            None => {
                labels.push(0);
                mask.push(false);
            }
        }
    }
    Ok((labels, mask))
}
