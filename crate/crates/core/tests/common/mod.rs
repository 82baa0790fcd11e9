//! Oracles shared by the integration tests: brute-force scorers, random
//! models and a central finite-difference checker that walks every
//! parameter of an NFM in a fixed order.

#![allow(dead_code)]

use nfm_core::fm::FmParams;
use nfm_core::linalg::Matrix;
use nfm_core::nfm::{forward_batch, Activation, Mode, NfmArch, NfmGradients, NfmParams, Pooling};
use nfm_core::rng::{seeded, Rng};
use nfm_core::SparseInstance;
use rand::Rng as _;

/// Quadratic-time FM: explicit double loop over active pairs.
pub fn brute_fm(p: &FmParams, x: &SparseInstance) -> f64 {
    let pairs: Vec<(usize, f64)> = x.iter().collect();
    let mut y = p.w0;
    for &(i, xi) in &pairs {
        y += p.linear[i] * xi;
    }
    for a in 0..pairs.len() {
        for b in a + 1..pairs.len() {
            let (i, xi) = pairs[a];
            let (j, xj) = pairs[b];
            let dot: f64 = p
                .embedding(i)
                .iter()
                .zip(p.embedding(j))
                .map(|(u, v)| u * v)
                .sum();
            y += dot * xi * xj;
        }
    }
    y
}

/// Up to `max_nnz` distinct features in `0..n`, real values in ±[0.1, 2].
pub fn random_instance(rng: &mut Rng, n: usize, max_nnz: usize) -> SparseInstance {
    let nnz = rng.random_range(0..=max_nnz.min(n));
    let mut ids: Vec<usize> = (0..n).collect();
    nfm_core::rng::shuffle(&mut ids, rng);
    let pairs = ids[..nnz]
        .iter()
        .map(|&i| {
            let mag = rng.random_range(0.1..2.0);
            (i, if rng.random_bool(0.5) { mag } else { -mag })
        })
        .collect();
    SparseInstance::new(pairs, rng.random_range(-1.0..1.0)).unwrap()
}

/// Instance with exactly `nnz` active features.
pub fn instance_with(rng: &mut Rng, n: usize, nnz: usize) -> SparseInstance {
    loop {
        let x = random_instance(rng, n, nnz);
        if x.nnz() == nnz {
            return x;
        }
    }
}

pub fn random_fm(rng: &mut Rng, n: usize, k: usize) -> FmParams {
    let mut p = FmParams::random(n, k, 0.5, rng);
    p.w0 = rng.random_range(-1.0..1.0);
    p
}

/// Random network with every parameter (including `h`, `γ`, `β`) drawn
/// away from its default so no gradient is trivially zero.
pub fn random_nfm(
    rng: &mut Rng,
    n: usize,
    k: usize,
    layers: &[usize],
    activation: Activation,
    batch_norm: bool,
    pooling: Pooling,
) -> NfmParams {
    let arch = NfmArch {
        pooling,
        layer_dims: layers.to_vec(),
        activation,
        batch_norm,
        ..NfmArch::new(k)
    };
    let mut p = NfmParams::init(n, &arch, rng).unwrap();
    p.fm = random_fm(rng, n, k);
    for h in &mut p.h {
        *h = rng.random_range(-1.0..1.0);
    }
    let mut bns: Vec<_> = p.pool_bn.iter_mut().collect();
    bns.extend(p.layers.iter_mut().filter_map(|l| l.bn.as_mut()));
    for bn in bns {
        for g in &mut bn.gamma {
            *g = rng.random_range(0.5..1.5);
        }
        for b in &mut bn.beta {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    for l in &mut p.layers {
        for b in &mut l.bias {
            *b = rng.random_range(-0.2..0.2);
        }
    }
    p
}

/// Visits every scalar parameter in a fixed order: `w0`, `w`, `V`, pooling
/// BN (`γ`, `β`), then per hidden layer `W`, `b`, BN, and finally `h`.
pub fn visit_params(p: &mut NfmParams, f: &mut dyn FnMut(&mut f64)) {
    f(&mut p.fm.w0);
    p.fm.linear.iter_mut().for_each(&mut *f);
    p.fm.embeddings.as_mut_slice().iter_mut().for_each(&mut *f);
    if let Some(bn) = p.pool_bn.as_mut() {
        bn.gamma
            .iter_mut()
            .chain(bn.beta.iter_mut())
            .for_each(&mut *f);
    }
    for l in &mut p.layers {
        l.weights.as_mut_slice().iter_mut().for_each(&mut *f);
        l.bias.iter_mut().for_each(&mut *f);
        if let Some(bn) = l.bn.as_mut() {
            bn.gamma
                .iter_mut()
                .chain(bn.beta.iter_mut())
                .for_each(&mut *f);
        }
    }
    p.h.iter_mut().for_each(&mut *f);
}

pub fn param_count(p: &NfmParams) -> usize {
    let mut c = 0;
    visit_params(&mut p.clone(), &mut |_| c += 1);
    c
}

/// Gradients laid out in [`visit_params`] order; sparse rows absent from
/// the gradient count as zero.
pub fn flatten_grads(p: &NfmParams, g: &NfmGradients) -> Vec<f64> {
    let k = p.factors();
    let mut out = vec![g.w0];
    out.extend((0..p.num_features()).map(|i| g.linear_grad(i)));
    for i in 0..p.num_features() {
        match g.embedding_grad(i) {
            Some(row) => out.extend_from_slice(row),
            None => out.extend(std::iter::repeat_n(0.0, k)),
        }
    }
    if let Some(bn) = &g.pool_bn {
        out.extend(bn.gamma.iter().chain(&bn.beta));
    }
    for l in &g.layers {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(&l.bias);
        if let Some(bn) = &l.bn {
            out.extend(bn.gamma.iter().chain(&bn.beta));
        }
    }
    out.extend_from_slice(&g.h);
    out
}

fn nudge(p: &NfmParams, idx: usize, delta: f64) -> NfmParams {
    let mut q = p.clone();
    let mut c = 0;
    visit_params(&mut q, &mut |v| {
        if c == idx {
            *v += delta;
        }
        c += 1;
    });
    q
}

/// Central differences of `f` with step `h` for every parameter.
pub fn finite_differences(p: &NfmParams, h: f64, f: &dyn Fn(&NfmParams) -> f64) -> Vec<f64> {
    (0..param_count(p))
        .map(|i| (f(&nudge(p, i, h)) - f(&nudge(p, i, -h))) / (2.0 * h))
        .collect()
}

/// `|a − b| / max(|a|, |b|)`, with values below `floor` in magnitude
/// treated as `floor` so round-off on vanishing partials is not amplified.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn worst_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> (usize, f64) {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n, floor))
        .enumerate()
        .fold(
            (0, 0.0),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        )
}

/// `Σ_b c_b ŷ_b` of a train-mode pass whose dropout masks come from a
/// freshly seeded stream, so every call sees the same masks.
pub fn weighted_scores(
    p: &NfmParams,
    xs: &[&SparseInstance],
    ratios: &[f64],
    mask_seed: u64,
    weights: &[f64],
) -> f64 {
    let t = forward_batch(p, xs, Mode::Train, ratios, &mut seeded(mask_seed, 1)).unwrap();
    t.scores.iter().zip(weights).map(|(s, c)| s * c).sum()
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}
