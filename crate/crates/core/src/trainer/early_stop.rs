/// Stops once validation RMSE has risen for `patience` consecutive epochs,
/// each rise measured against the immediately preceding epoch. Tracks the
/// best (lowest, earliest on ties) epoch seen.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    previous: Option<f64>,
    rises: usize,
    best: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            previous: None,
            rises: 0,
            best: None,
        }
    }

    pub fn observe(&mut self, epoch: usize, rmse: f64) -> Verdict {
        let improved = self.best.is_none_or(|(_, b)| rmse < b);
        if improved {
            self.best = Some((epoch, rmse));
        }
        match self.previous {
            Some(p) if rmse > p => self.rises += 1,
            _ => self.rises = 0,
        }
        self.previous = Some(rmse);
        Verdict {
            improved,
            stop: self.rises >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}
