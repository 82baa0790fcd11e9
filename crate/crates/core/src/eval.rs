//! Scoring whole datasets.

use rayon::prelude::*;

use crate::data::{Dataset, SparseInstance};
use crate::error::{Error, Result};
use crate::fm::{fm_score, FmParams};
use crate::nfm::NfmParams;

/// Targets are ±1, so predictions are clipped into this range before the
/// residual is taken.
pub const DEFAULT_CLIP: (f64, f64) = (-1.0, 1.0);

const CHUNK: usize = 512;

/// Anything that can score a batch of instances in eval mode.
pub trait Scorer: Sync {
    fn score_batch(&self, xs: &[&SparseInstance]) -> Result<Vec<f64>>;
}

impl Scorer for FmParams {
    fn score_batch(&self, xs: &[&SparseInstance]) -> Result<Vec<f64>> {
        xs.iter().map(|x| fm_score(self, x)).collect()
    }
}

impl Scorer for NfmParams {
    fn score_batch(&self, xs: &[&SparseInstance]) -> Result<Vec<f64>> {
        self.predict_batch(xs)
    }
}

/// A trained model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Fm(FmParams),
    Nfm(NfmParams),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Fm(_) => "fm",
            Self::Nfm(_) => "nfm",
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            Self::Fm(p) => p.num_features(),
            Self::Nfm(p) => p.num_features(),
        }
    }

    pub fn predict(&self, x: &SparseInstance) -> Result<f64> {
        match self {
            Self::Fm(p) => fm_score(p, x),
            Self::Nfm(p) => p.predict(x),
        }
    }
}

impl Scorer for Model {
    fn score_batch(&self, xs: &[&SparseInstance]) -> Result<Vec<f64>> {
        match self {
            Self::Fm(p) => p.score_batch(xs),
            Self::Nfm(p) => p.score_batch(xs),
        }
    }
}

/// Trainable parameter count. FM: `1 + n + n·k`; NFM adds hidden weights
/// and biases, `h`, and `2·dim` per normalized layer.
pub fn count_parameters(model: &Model) -> usize {
    match model {
        Model::Fm(p) => p.count_parameters(),
        Model::Nfm(p) => p.count_parameters(),
    }
}

/// Eval-mode predictions for every instance, in dataset order.
pub fn predict_all<S: Scorer + ?Sized>(model: &S, data: &Dataset) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = data
        .instances()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let refs: Vec<&SparseInstance> = chunk.iter().collect();
            model.score_batch(&refs)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Root mean squared residual of clipped predictions.
pub fn rmse(
    predictions: &[f64],
    targets: impl IntoIterator<Item = f64>,
    clip: Option<(f64, f64)>,
) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, y) in predictions.iter().zip(targets) {
        let p = match clip {
            Some((lo, hi)) => p.clamp(lo, hi),
            None => *p,
        };
        sum += (p - y) * (p - y);
        count += 1;
    }
    if count != predictions.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {count} targets",
            predictions.len()
        )));
    }
    let r = (sum / count as f64).sqrt();
    if !r.is_finite() {
        return Err(Error::NonFinite("rmse".into()));
    }
    Ok(r)
}

pub fn evaluate_rmse<S: Scorer + ?Sized>(
    model: &S,
    data: &Dataset,
    clip: Option<(f64, f64)>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predictions = predict_all(model, data)?;
    rmse(&predictions, data.targets(), clip)
}
