//! Batch normalization over mini-batches of row vectors.
//!
//! Train mode standardizes each dimension with the batch mean and biased
//! batch variance, `γ ⊙ (x − μ_B)/√(σ_B² + ε) + β`. Eval mode substitutes
//! the running estimates. Running estimates follow
//! `running ← momentum · running + (1 − momentum) · batch`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::Mode;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Statistics actually used to normalize one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Forward output plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct BnTrace {
    pub mode: Mode,
    /// `(x − μ)/√(σ² + ε)` before scale and shift.
    pub normalized: Matrix,
    pub stats: BatchStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BnGrads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
        }
    }
}

impl BatchNormState {
    pub fn new(dim: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum,
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if [
            self.beta.len(),
            self.running_mean.len(),
            self.running_var.len(),
        ]
        .iter()
        .any(|&l| l != d)
        {
            return Err(Error::Shape("batch-norm vectors differ in length".into()));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) || !(self.epsilon > 0.0) {
            return Err(Error::BatchNorm(format!(
                "momentum {} must lie in (0,1) and epsilon {} be positive",
                self.momentum, self.epsilon
            )));
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::BatchNorm("negative running variance".into()));
        }
        let all = self
            .gamma
            .iter()
            .chain(&self.beta)
            .chain(&self.running_mean)
            .chain(&self.running_var);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("batch-norm state".into()));
        }
        Ok(())
    }

    /// Normalizes `batch` without touching the running estimates.
    pub fn forward(&self, batch: &Matrix, mode: Mode) -> Result<(Matrix, BnTrace)> {
        let d = self.dim();
        if batch.cols() != d {
            return Err(Error::Shape(format!(
                "batch width {} vs batch-norm dim {d}",
                batch.cols()
            )));
        }
        let stats = match mode {
            Mode::Train => {
                if batch.rows() < 2 {
                    return Err(Error::BatchNorm(format!(
                        "train mode needs at least 2 rows, got {}",
                        batch.rows()
                    )));
                }
                batch_stats(batch)
            }
            Mode::Eval => BatchStats {
                mean: self.running_mean.clone(),
                var: self.running_var.clone(),
            },
        };
        let inv_std: Vec<f64> = stats
            .var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let mut normalized = batch.clone();
        let mut out = Matrix::zeros(batch.rows(), d);
        for r in 0..batch.rows() {
            let nr = normalized.row_mut(r);
            for c in 0..d {
                nr[c] = (nr[c] - stats.mean[c]) * inv_std[c];
            }
            let or = out.row_mut(r);
            for c in 0..d {
                or[c] = self.gamma[c] * nr[c] + self.beta[c];
            }
        }
        Ok((
            out,
            BnTrace {
                mode,
                normalized,
                stats,
            },
        ))
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    /// Returns `∂/∂input` and accumulates `∂/∂γ`, `∂/∂β` into `grads`.
    /// Train mode propagates through the batch statistics.
    pub fn backward(&self, trace: &BnTrace, upstream: &Matrix, grads: &mut BnGrads) -> Matrix {
        let d = self.dim();
        let rows = upstream.rows();
        let xhat = &trace.normalized;
        let mut sum_dy = vec![0.0; d];
        let mut sum_dy_xhat = vec![0.0; d];
        for r in 0..rows {
            for c in 0..d {
                let dy = upstream.get(r, c);
                sum_dy[c] += dy;
                sum_dy_xhat[c] += dy * xhat.get(r, c);
            }
        }
        for c in 0..d {
            grads.gamma[c] += sum_dy_xhat[c];
            grads.beta[c] += sum_dy[c];
        }
        let inv_std: Vec<f64> = trace
            .stats
            .var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let mut dx = Matrix::zeros(rows, d);
        match trace.mode {
            Mode::Eval => {
                for r in 0..rows {
                    for c in 0..d {
                        dx.set(r, c, upstream.get(r, c) * self.gamma[c] * inv_std[c]);
                    }
                }
            }
            Mode::Train => {
                let n = rows as f64;
                for r in 0..rows {
                    for c in 0..d {
                        let dy = upstream.get(r, c);
                        let v = self.gamma[c] * inv_std[c] / n
                            * (n * dy - sum_dy[c] - xhat.get(r, c) * sum_dy_xhat[c]);
                        dx.set(r, c, v);
                    }
                }
            }
        }
        dx
    }
}

/// Per-dimension mean and biased variance.
pub fn batch_stats(batch: &Matrix) -> BatchStats {
    let n = batch.rows() as f64;
    let mean: Vec<f64> = batch.sum_rows().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; batch.cols()];
    for r in 0..batch.rows() {
        for ((v, x), m) in var.iter_mut().zip(batch.row(r)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    BatchStats { mean, var }
}

/// Normalizes a batch and, in train mode, folds its statistics into the
/// running estimates.
pub fn batchnorm_forward(state: &mut BatchNormState, batch: &Matrix, mode: Mode) -> Result<Matrix> {
    let (out, trace) = state.forward(batch, mode)?;
    if mode == Mode::Train {
        state.update_running(&trace.stats);
    }
    Ok(out)
}
