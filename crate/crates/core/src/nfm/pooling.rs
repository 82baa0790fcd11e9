//! Embedding lookup and pooling of the scaled embedding set.

use std::fmt;
use std::str::FromStr;

use crate::data::SparseInstance;
use crate::error::{Error, Result};
use crate::fm::FmParams;
use crate::linalg::axpy;

/// Pooling strategy as chosen in a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingKind {
    BiInteraction,
    Average,
    Concat,
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BiInteraction => "bi",
            Self::Average => "average",
            Self::Concat => "concat",
        })
    }
}

impl FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bi" | "bi-interaction" | "bi_interaction" => Ok(Self::BiInteraction),
            "average" | "avg" | "mean" => Ok(Self::Average),
            "concat" | "concatenation" => Ok(Self::Concat),
            other => Err(Error::Config(format!("unknown pooling {other:?}"))),
        }
    }
}

/// Pooling as stored in a model. Concatenation needs a fixed number of
/// active features (one per field) to have a fixed output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    BiInteraction,
    Average,
    Concat { fields: usize },
}

impl Pooling {
    pub fn kind(self) -> PoolingKind {
        match self {
            Self::BiInteraction => PoolingKind::BiInteraction,
            Self::Average => PoolingKind::Average,
            Self::Concat { .. } => PoolingKind::Concat,
        }
    }

    pub fn output_dim(self, factors: usize) -> usize {
        match self {
            Self::Concat { fields } => fields * factors,
            _ => factors,
        }
    }
}

/// `{x_i · v_i : x_i ≠ 0}` in index order.
pub fn embed(fm: &FmParams, x: &SparseInstance) -> Result<Vec<Vec<f64>>> {
    x.check_range(fm.num_features())?;
    Ok(x.iter()
        .map(|(i, v)| fm.embedding(i).iter().map(|e| e * v).collect())
        .collect())
}

fn common_width(embeds: &[Vec<f64>], width: Option<usize>) -> Result<usize> {
    let k = width.or_else(|| embeds.first().map(Vec::len)).unwrap_or(0);
    if let Some(bad) = embeds.iter().find(|u| u.len() != k) {
        return Err(Error::Shape(format!(
            "embedding of length {} among vectors of length {k}",
            bad.len()
        )));
    }
    Ok(k)
}

/// `½[(Σ u_i)² − Σ u_i²]` element-wise. An empty set pools to the zero
/// vector of width `width` (or an empty vector when no width is given).
pub fn bi_interaction(embeds: &[Vec<f64>], width: Option<usize>) -> Result<Vec<f64>> {
    let k = common_width(embeds, width)?;
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    for u in embeds {
        for ((s, q), e) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(u) {
            *s += e;
            *q += e * e;
        }
    }
    Ok(sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| 0.5 * (s * s - q))
        .collect())
}

pub fn pool(embeds: &[Vec<f64>], pooling: Pooling, width: usize) -> Result<Vec<f64>> {
    match pooling {
        Pooling::BiInteraction => bi_interaction(embeds, Some(width)),
        Pooling::Average => {
            let k = common_width(embeds, Some(width))?;
            let mut out = vec![0.0; k];
            for u in embeds {
                axpy(1.0, u, &mut out);
            }
            if !embeds.is_empty() {
                let n = embeds.len() as f64;
                out.iter_mut().for_each(|o| *o /= n);
            }
            Ok(out)
        }
        Pooling::Concat { fields } => {
            common_width(embeds, Some(width))?;
            if embeds.len() != fields {
                return Err(Error::Shape(format!(
                    "concat pooling expects {fields} active features, got {}",
                    embeds.len()
                )));
            }
            Ok(embeds.concat())
        }
    }
}

/// Pools directly from the parameters without materializing the embedding
/// set. Writes into `out` (length `pooling.output_dim(k)`) and returns the
/// running sum `Σ x_i v_i`, which the Bi-Interaction backward pass reuses.
pub(crate) fn pool_into(
    fm: &FmParams,
    x: &SparseInstance,
    pooling: Pooling,
    out: &mut [f64],
    sum: &mut [f64],
) -> Result<()> {
    x.check_range(fm.num_features())?;
    let k = fm.factors();
    sum.fill(0.0);
    match pooling {
        Pooling::BiInteraction => {
            out.fill(0.0);
            for (i, v) in x.iter() {
                for ((s, q), e) in sum.iter_mut().zip(out.iter_mut()).zip(fm.embedding(i)) {
                    let t = e * v;
                    *s += t;
                    *q += t * t;
                }
            }
            for (o, s) in out.iter_mut().zip(sum.iter()) {
                *o = 0.5 * (s * s - *o);
            }
        }
        Pooling::Average => {
            for (i, v) in x.iter() {
                axpy(v, fm.embedding(i), sum);
            }
            let n = x.nnz().max(1) as f64;
            for (o, s) in out.iter_mut().zip(sum.iter()) {
                *o = s / n;
            }
        }
        Pooling::Concat { fields } => {
            if x.nnz() != fields {
                return Err(Error::Shape(format!(
                    "concat pooling expects {fields} active features, got {}",
                    x.nnz()
                )));
            }
            for (slot, (i, v)) in x.iter().enumerate() {
                for (o, e) in out[slot * k..(slot + 1) * k]
                    .iter_mut()
                    .zip(fm.embedding(i))
                {
                    *o = e * v;
                }
            }
        }
    }
    Ok(())
}

/// Brute-force pairwise form `Σ_{i<j} u_i ⊙ u_j`, kept for cross-checking.
pub fn bi_interaction_pairwise(embeds: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for i in 0..embeds.len() {
        for j in i + 1..embeds.len() {
            for (o, (a, b)) in out.iter_mut().zip(embeds[i].iter().zip(&embeds[j])) {
                *o += a * b;
            }
        }
    }
    out
}

/// Partial of the Bi-Interaction output w.r.t. `v_i`:
/// `x_i Σ_j x_j v_j − x_i² v_i = Σ_{j≠i} x_i x_j v_j` (a diagonal Jacobian,
/// returned as its diagonal).
pub fn bi_interaction_grad(fm: &FmParams, x: &SparseInstance, feature: usize) -> Result<Vec<f64>> {
    x.check_range(fm.num_features())?;
    let k = fm.factors();
    let Some(pos) = x.indices().iter().position(|&i| i == feature) else {
        return Ok(vec![0.0; k]);
    };
    let xi = x.values()[pos];
    let mut sum = vec![0.0; k];
    for (j, v) in x.iter() {
        axpy(v, fm.embedding(j), &mut sum);
    }
    Ok(sum
        .iter()
        .zip(fm.embedding(feature))
        .map(|(s, vi)| xi * (s - xi * vi))
        .collect())
}
