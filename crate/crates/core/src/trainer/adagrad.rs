//! Adagrad over [`NfmParams`].
//!
//! For every parameter θ with gradient g: `acc += g²; θ −= lr·g/(√acc + ε)`.
//! Embedding gradients are first augmented with `2λθ`. Only rows of `w`
//! and `V` that appear in the gradient are touched, so inactive features
//! keep both their values and their accumulators.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nfm::{BnGrads, NfmGradients, NfmParams};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BnAccum {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAccum {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub bn: Option<BnAccum>,
}

/// Accumulated squared gradients, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub w0: f64,
    pub linear: Vec<f64>,
    pub embeddings: Matrix,
    pub pool_bn: Option<BnAccum>,
    pub layers: Vec<LayerAccum>,
    pub h: Vec<f64>,
}

impl AdagradState {
    pub fn zeros_like(params: &NfmParams) -> Self {
        let bn = |dim: usize| BnAccum {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
        };
        Self {
            w0: 0.0,
            linear: vec![0.0; params.num_features()],
            embeddings: Matrix::zeros(params.num_features(), params.factors()),
            pool_bn: params.pool_bn.as_ref().map(|b| bn(b.dim())),
            layers: params
                .layers
                .iter()
                .map(|l| LayerAccum {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                    bn: l.bn.as_ref().map(|b| bn(b.dim())),
                })
                .collect(),
            h: vec![0.0; params.h.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub epsilon: f64,
    pub l2_embedding: f64,
}

#[inline]
fn update(theta: &mut f64, g: f64, acc: &mut f64, lr: f64, eps: f64) {
    *acc += g * g;
    *theta -= lr * g / (acc.sqrt() + eps);
}

fn update_slice(theta: &mut [f64], g: &[f64], acc: &mut [f64], lr: f64, eps: f64) {
    for ((t, g), a) in theta.iter_mut().zip(g).zip(acc.iter_mut()) {
        update(t, *g, a, lr, eps);
    }
}

fn update_bn(
    gamma: &mut [f64],
    beta: &mut [f64],
    g: &BnGrads,
    acc: &mut BnAccum,
    lr: f64,
    eps: f64,
) {
    update_slice(gamma, &g.gamma, &mut acc.gamma, lr, eps);
    update_slice(beta, &g.beta, &mut acc.beta, lr, eps);
}

fn check_shapes(params: &NfmParams, grads: &NfmGradients, state: &AdagradState) -> Result<()> {
    let mismatch = |what: &str| Err(Error::Shape(format!("adagrad: {what} shape mismatch")));
    if grads.embeddings.width() != params.factors()
        || state.embeddings.cols() != params.factors()
        || state.linear.len() != params.num_features()
    {
        return mismatch("embedding");
    }
    if let Some(&i) = grads
        .embeddings
        .ids()
        .iter()
        .chain(grads.linear.ids())
        .find(|&&i| i >= params.num_features())
    {
        return Err(Error::IndexOutOfRange {
            index: i,
            num_features: params.num_features(),
        });
    }
    if grads.h.len() != params.h.len() || state.h.len() != params.h.len() {
        return mismatch("prediction vector");
    }
    if grads.layers.len() != params.depth() || state.layers.len() != params.depth() {
        return mismatch("layer count");
    }
    let bn_dim = |b: Option<usize>, g: Option<&BnGrads>, a: Option<&BnAccum>| {
        b == g.map(|g| g.gamma.len()) && b == a.map(|a| a.gamma.len())
    };
    if !bn_dim(
        params.pool_bn.as_ref().map(|b| b.dim()),
        grads.pool_bn.as_ref(),
        state.pool_bn.as_ref(),
    ) {
        return mismatch("pooling batch norm");
    }
    for ((layer, g), a) in params.layers.iter().zip(&grads.layers).zip(&state.layers) {
        let shape = (layer.weights.rows(), layer.weights.cols());
        if (g.weights.rows(), g.weights.cols()) != shape
            || (a.weights.rows(), a.weights.cols()) != shape
            || g.bias.len() != layer.bias.len()
            || a.bias.len() != layer.bias.len()
            || !bn_dim(
                layer.bn.as_ref().map(|b| b.dim()),
                g.bn.as_ref(),
                a.bn.as_ref(),
            )
        {
            return mismatch("hidden layer");
        }
    }
    Ok(())
}

impl Adagrad {
    pub fn new(learning_rate: f64, l2_embedding: f64) -> Self {
        Self {
            learning_rate,
            epsilon: DEFAULT_EPSILON,
            l2_embedding,
        }
    }

    pub fn step(
        &self,
        params: &mut NfmParams,
        grads: &NfmGradients,
        state: &mut AdagradState,
    ) -> Result<()> {
        check_shapes(params, grads, state)?;
        let (lr, eps, l2) = (self.learning_rate, self.epsilon, self.l2_embedding);

        update(&mut params.fm.w0, grads.w0, &mut state.w0, lr, eps);
        for (i, g) in grads.linear.iter() {
            update(
                &mut params.fm.linear[i],
                g[0],
                &mut state.linear[i],
                lr,
                eps,
            );
        }
        for (i, g) in grads.embeddings.iter() {
            let theta = params.fm.embeddings.row_mut(i);
            let acc = state.embeddings.row_mut(i);
            for ((t, g), a) in theta.iter_mut().zip(g).zip(acc.iter_mut()) {
                let g = g + 2.0 * l2 * *t;
                update(t, g, a, lr, eps);
            }
        }
        if let (Some(bn), Some(g), Some(a)) = (
            params.pool_bn.as_mut(),
            grads.pool_bn.as_ref(),
            state.pool_bn.as_mut(),
        ) {
            update_bn(&mut bn.gamma, &mut bn.beta, g, a, lr, eps);
        }
        for ((layer, g), a) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(state.layers.iter_mut())
        {
            update_slice(
                layer.weights.as_mut_slice(),
                g.weights.as_slice(),
                a.weights.as_mut_slice(),
                lr,
                eps,
            );
            update_slice(&mut layer.bias, &g.bias, &mut a.bias, lr, eps);
            if let (Some(bn), Some(g), Some(a)) = (layer.bn.as_mut(), g.bn.as_ref(), a.bn.as_mut())
            {
                update_bn(&mut bn.gamma, &mut bn.beta, g, a, lr, eps);
            }
        }
        update_slice(&mut params.h, &grads.h, &mut state.h, lr, eps);
        Ok(())
    }
}

/// One Adagrad update with the default ε.
pub fn adagrad_step(
    params: &mut NfmParams,
    grads: &NfmGradients,
    state: &mut AdagradState,
    learning_rate: f64,
    l2_embedding: f64,
) -> Result<()> {
    Adagrad::new(learning_rate, l2_embedding).step(params, grads, state)
}
