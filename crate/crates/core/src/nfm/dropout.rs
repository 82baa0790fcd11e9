//! Inverted dropout: kept units are scaled by `1/(1−ρ)` at train time so
//! that evaluation needs no rescaling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "dropout ratio {ratio} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Independent per-unit mask with entries `0` or `1/(1−ρ)`, or `None` when
/// `ρ = 0`.
pub fn sample_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    ratio: f64,
    rng: &mut R,
) -> Option<Matrix> {
    if ratio == 0.0 {
        return None;
    }
    let scale = 1.0 / (1.0 - ratio);
    Some(Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < ratio {
            0.0
        } else {
            scale
        }
    }))
}
