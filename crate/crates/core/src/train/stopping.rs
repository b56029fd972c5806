/// Patience-based early stopping on a score where larger is better.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    /// Required margin over the best score to count as an improvement.
    pub min_delta: f64,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            min_delta: 1e-6,
            best: None,
            since_best: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> Observation {
        let improved = match self.best {
            None => !score.is_nan(),
            Some((_, b)) => score > b + self.min_delta,
        };
        if improved {
            self.best = Some((epoch, score));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Observation {
            improved,
            stop: self.since_best >= self.patience,
        }
    }
}
