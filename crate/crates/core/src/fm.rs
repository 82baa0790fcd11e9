//! Second-order factorization machine.
//!
//! `ŷ(x) = w0 + Σ w_i x_i + Σ_{i<j} ⟨v_i, v_j⟩ x_i x_j`, scored in
//! `O(k·N_x)` through `Σ_{i<j} ⟨v_i, v_j⟩ x_i x_j = ½ Σ_f [(Σ_i v_if x_i)² − Σ_i v_if² x_i²]`.

use rand_distr::{Distribution, Normal};

use crate::data::SparseInstance;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Standard deviation of the Gaussian used for fresh embeddings.
pub const DEFAULT_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FmParams {
    pub w0: f64,
    pub linear: Vec<f64>,
    /// `n × k`, row `i` is `v_i`.
    pub embeddings: Matrix,
}

impl FmParams {
    pub fn zeros(num_features: usize, factors: usize) -> Self {
        Self {
            w0: 0.0,
            linear: vec![0.0; num_features],
            embeddings: Matrix::zeros(num_features, factors),
        }
    }

    /// `w0 = 0`, `w = 0`, embeddings i.i.d. `N(0, std²)`.
    pub fn init<R: rand::Rng + ?Sized>(
        num_features: usize,
        factors: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_features == 0 || factors == 0 {
            return Err(Error::Config("FM needs n >= 1 and k >= 1".into()));
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let mut p = Self::zeros(num_features, factors);
        for v in p.embeddings.as_mut_slice() {
            *v = normal.sample(rng);
        }
        Ok(p)
    }

    /// Random parameters for tests and benchmarks: everything drawn from `U(-scale, scale)`.
    pub fn random<R: rand::Rng + ?Sized>(
        num_features: usize,
        factors: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut draw = || rng.random_range(-scale..=scale);
        let w0 = draw();
        let linear = (0..num_features).map(|_| draw()).collect();
        let embeddings = Matrix::from_fn(num_features, factors, |_, _| draw());
        Self {
            w0,
            linear,
            embeddings,
        }
    }

    pub fn num_features(&self) -> usize {
        self.linear.len()
    }

    pub fn factors(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_features() == 0 || self.factors() == 0 {
            return Err(Error::Shape("FM needs n >= 1 and k >= 1".into()));
        }
        if self.embeddings.rows() != self.num_features() {
            return Err(Error::Shape(format!(
                "{} linear weights but {} embedding rows",
                self.num_features(),
                self.embeddings.rows()
            )));
        }
        if !self.w0.is_finite()
            || !self.linear.iter().all(|v| v.is_finite())
            || !self.embeddings.is_finite()
        {
            return Err(Error::NonFinite("FM parameters".into()));
        }
        Ok(())
    }

    /// `w0 + Σ w_i x_i`.
    pub fn linear_term(&self, x: &SparseInstance) -> Result<f64> {
        x.check_range(self.num_features())?;
        Ok(x.iter()
            .fold(self.w0, |acc, (i, v)| acc + self.linear[i] * v))
    }

    /// `1 + n + n·k`.
    pub fn count_parameters(&self) -> usize {
        1 + self.num_features() * (1 + self.factors())
    }
}

/// Linear-time FM score.
pub fn fm_score(params: &FmParams, x: &SparseInstance) -> Result<f64> {
    let linear = params.linear_term(x)?;
    let k = params.factors();
    let mut interaction = 0.0;
    for f in 0..k {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (i, v) in x.iter() {
            let t = params.embeddings.get(i, f) * v;
            sum += t;
            sum_sq += t * t;
        }
        interaction += sum * sum - sum_sq;
    }
    Ok(linear + 0.5 * interaction)
}

/// Partials of `ŷ_FM(x)`; parameters of inactive features are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FmGradient {
    pub w0: f64,
    /// `(i, x_i)` for each active feature, in index order.
    pub linear: Vec<(usize, f64)>,
    /// `(i, x_i (Σ_j x_j v_j) − x_i² v_i)` for each active feature.
    pub embeddings: Vec<(usize, Vec<f64>)>,
}

pub fn fm_gradients(params: &FmParams, x: &SparseInstance) -> Result<FmGradient> {
    x.check_range(params.num_features())?;
    let k = params.factors();
    let mut sum = vec![0.0; k];
    for (i, v) in x.iter() {
        crate::linalg::axpy(v, params.embedding(i), &mut sum);
    }
    let embeddings = x
        .iter()
        .map(|(i, v)| {
            let g = params
                .embedding(i)
                .iter()
                .zip(&sum)
                .map(|(vi, s)| v * (s - v * vi))
                .collect();
            (i, g)
        })
        .collect();
    Ok(FmGradient {
        w0: 1.0,
        linear: x.iter().collect(),
        embeddings,
    })
}
