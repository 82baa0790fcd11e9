//! Neural factorization machine.
//!
//! ```text
//! ŷ(x) = w0 + Σ w_i x_i + hᵀ z_L
//! z_0  = drop(BN(pool({x_i v_i})))
//! z_l  = drop(σ_l(BN(W_l z_{l-1} + b_l)))
//! ```
//!
//! Batch normalization and dropout are optional per model; both are
//! applied per mini-batch, so the forward pass works on batches and
//! records everything the backward pass needs in a [`ForwardTrace`].
//! With no hidden layers, Bi-Interaction pooling and `h = 1` the model is
//! exactly a factorization machine.

pub mod activation;
pub mod batchnorm;
pub mod dropout;
pub mod pooling;

use rand::Rng;

use crate::data::SparseInstance;
use crate::error::{Error, Result};
use crate::fm::{FmParams, DEFAULT_INIT_STD};
use crate::linalg::{axpy, dot, Matrix, SparseRows};

pub use activation::Activation;
pub use batchnorm::{batchnorm_forward, BatchNormState, BatchStats, BnGrads, BnTrace};
pub use pooling::{bi_interaction, embed, pool, Pooling, PoolingKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// `d_out × d_in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub bn: Option<BatchNormState>,
}

impl HiddenLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NfmParams {
    pub fm: FmParams,
    pub pooling: Pooling,
    pub pool_bn: Option<BatchNormState>,
    pub layers: Vec<HiddenLayer>,
    pub h: Vec<f64>,
}

/// Shape and initialization choices for a fresh model.
#[derive(Debug, Clone, PartialEq)]
pub struct NfmArch {
    pub factors: usize,
    pub pooling: Pooling,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub init_std: f64,
}

impl NfmArch {
    pub fn new(factors: usize) -> Self {
        Self {
            factors,
            pooling: Pooling::BiInteraction,
            layer_dims: Vec::new(),
            activation: Activation::Relu,
            batch_norm: false,
            bn_momentum: batchnorm::DEFAULT_MOMENTUM,
            bn_epsilon: batchnorm::DEFAULT_EPSILON,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

impl NfmParams {
    /// Embeddings `N(0, init_std²)`, hidden weights Glorot-uniform
    /// `U(±√(6/(d_in+d_out)))`, biases 0, `h = 1`, BN `γ = 1, β = 0`.
    pub fn init<R: Rng + ?Sized>(num_features: usize, arch: &NfmArch, rng: &mut R) -> Result<Self> {
        let fm = FmParams::init(num_features, arch.factors, arch.init_std, rng)?;
        let bn = |dim| {
            arch.batch_norm
                .then(|| BatchNormState::new(dim, arch.bn_momentum, arch.bn_epsilon))
        };
        let d0 = arch.pooling.output_dim(arch.factors);
        let mut layers = Vec::with_capacity(arch.layer_dims.len());
        let mut d_in = d0;
        for &d_out in &arch.layer_dims {
            if d_out == 0 {
                return Err(Error::Config("hidden layer of width 0".into()));
            }
            let limit = (6.0 / (d_in + d_out) as f64).sqrt();
            layers.push(HiddenLayer {
                weights: Matrix::from_fn(d_out, d_in, |_, _| rng.random_range(-limit..=limit)),
                bias: vec![0.0; d_out],
                activation: arch.activation,
                bn: bn(d_out),
            });
            d_in = d_out;
        }
        let params = Self {
            fm,
            pooling: arch.pooling,
            pool_bn: bn(d0),
            layers,
            h: vec![1.0; d_in],
        };
        params.validate()?;
        Ok(params)
    }

    /// The NFM-0 view of a factorization machine: Bi-Interaction pooling,
    /// no hidden layers, `h = 1`, no batch norm.
    pub fn from_fm(fm: FmParams) -> Self {
        let k = fm.factors();
        Self {
            fm,
            pooling: Pooling::BiInteraction,
            pool_bn: None,
            layers: Vec::new(),
            h: vec![1.0; k],
        }
    }

    pub fn num_features(&self) -> usize {
        self.fm.num_features()
    }

    pub fn factors(&self) -> usize {
        self.fm.factors()
    }

    pub fn pooled_dim(&self) -> usize {
        self.pooling.output_dim(self.factors())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// One dropout slot for the pooled vector plus one per hidden layer.
    pub fn dropout_slots(&self) -> usize {
        1 + self.layers.len()
    }

    pub fn uses_batch_norm(&self) -> bool {
        self.pool_bn.is_some() || self.layers.iter().any(|l| l.bn.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        self.fm.validate()?;
        if let Pooling::Concat { fields } = self.pooling {
            if fields == 0 {
                return Err(Error::Shape("concat pooling over zero fields".into()));
            }
        }
        let mut d = self.pooled_dim();
        if let Some(bn) = &self.pool_bn {
            bn.validate()?;
            if bn.dim() != d {
                return Err(Error::Shape(format!(
                    "pooling batch norm has dim {} vs {d}",
                    bn.dim()
                )));
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.input_dim() != d {
                return Err(Error::Shape(format!(
                    "hidden layer {} expects input {} but receives {d}",
                    l + 1,
                    layer.input_dim()
                )));
            }
            d = layer.output_dim();
            if layer.bias.len() != d {
                return Err(Error::Shape(format!("hidden layer {} bias length", l + 1)));
            }
            if !layer.weights.is_finite() || !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("hidden layer {}", l + 1)));
            }
            if let Some(bn) = &layer.bn {
                bn.validate()?;
                if bn.dim() != d {
                    return Err(Error::Shape(format!(
                        "hidden layer {} batch norm dim",
                        l + 1
                    )));
                }
            }
        }
        if self.h.len() != d {
            return Err(Error::Shape(format!(
                "prediction vector has length {} vs {d}",
                self.h.len()
            )));
        }
        if !self.h.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("prediction vector".into()));
        }
        Ok(())
    }

    /// FM terms, hidden weights and biases, `h`, and `γ, β` of every
    /// normalized layer.
    pub fn count_parameters(&self) -> usize {
        let bn = |b: &Option<BatchNormState>| b.as_ref().map_or(0, |s| 2 * s.dim());
        self.fm.count_parameters()
            + bn(&self.pool_bn)
            + self
                .layers
                .iter()
                .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len() + bn(&l.bn))
                .sum::<usize>()
            + self.h.len()
    }

    /// Eval-mode score of one instance.
    pub fn predict(&self, x: &SparseInstance) -> Result<f64> {
        let trace = forward_batch(self, &[x], Mode::Eval, &[], &mut NoRandom)?;
        Ok(trace.scores[0])
    }

    /// Eval-mode scores of many instances.
    pub fn predict_batch(&self, xs: &[&SparseInstance]) -> Result<Vec<f64>> {
        Ok(forward_batch(self, xs, Mode::Eval, &[], &mut NoRandom)?.scores)
    }
}

/// Stand-in generator for passes that never draw (eval mode or zero
/// dropout). Panics if asked for randomness.
struct NoRandom;

impl rand::RngCore for NoRandom {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval-mode forward pass drew a random number")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval-mode forward pass drew a random number")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval-mode forward pass drew a random number")
    }
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `W z_{l-1} + b` before normalization.
    pub affine: Matrix,
    pub bn: Option<BnTrace>,
    /// Activation input (after BN when enabled).
    pub pre_activation: Matrix,
    pub activated: Matrix,
    pub mask: Option<Matrix>,
}

/// Intermediates of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'a> {
    pub mode: Mode,
    pub inputs: Vec<&'a SparseInstance>,
    /// `Σ x_i v_i` per instance.
    pub embedding_sums: Matrix,
    /// Raw pooling output `f(V_x)`.
    pub pooled: Matrix,
    pub pool_bn: Option<BnTrace>,
    pub pool_mask: Option<Matrix>,
    pub layers: Vec<LayerTrace>,
    /// `z_0 ..= z_L`.
    pub z: Vec<Matrix>,
    /// `w0 + Σ w_i x_i` per instance.
    pub linear: Vec<f64>,
    pub scores: Vec<f64>,
}

impl ForwardTrace<'_> {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Batch statistics used by each normalized layer, pooling layer first,
    /// for folding into running estimates. `None` where BN is disabled.
    pub fn batch_stats(&self) -> impl Iterator<Item = Option<&BatchStats>> {
        std::iter::once(self.pool_bn.as_ref())
            .chain(self.layers.iter().map(|l| l.bn.as_ref()))
            .map(|t| t.map(|t| &t.stats))
    }

    /// Smallest `|pre-activation|` over every hidden unit of every instance.
    pub fn min_abs_pre_activation(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.pre_activation.as_slice())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn check_ratios(params: &NfmParams, ratios: &[f64]) -> Result<()> {
    if !ratios.is_empty() && ratios.len() != params.dropout_slots() {
        return Err(Error::Config(format!(
            "{} dropout ratios for {} slots (pooling + {} hidden)",
            ratios.len(),
            params.dropout_slots(),
            params.depth()
        )));
    }
    ratios.iter().try_for_each(|&r| dropout::check_ratio(r))
}

fn finite_or(m: &Matrix, what: impl FnOnce() -> String) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Batched forward pass. `ratios` holds one dropout ratio for the pooled
/// vector and one per hidden layer, or is empty for no dropout; it is
/// ignored in eval mode. Batch-norm running estimates are not updated here.
pub fn forward_batch<'a, R: Rng + ?Sized>(
    params: &NfmParams,
    xs: &[&'a SparseInstance],
    mode: Mode,
    ratios: &[f64],
    rng: &mut R,
) -> Result<ForwardTrace<'a>> {
    check_ratios(params, ratios)?;
    let ratio = |slot: usize| match mode {
        Mode::Train => ratios.get(slot).copied().unwrap_or(0.0),
        Mode::Eval => 0.0,
    };
    let b = xs.len();
    let k = params.factors();
    let d0 = params.pooled_dim();

    let mut sums = Matrix::zeros(b, k);
    let mut pooled = Matrix::zeros(b, d0);
    let mut linear = Vec::with_capacity(b);
    for (r, x) in xs.iter().enumerate() {
        linear.push(params.fm.linear_term(x)?);
        let mut sum = vec![0.0; k];
        pooling::pool_into(&params.fm, x, params.pooling, pooled.row_mut(r), &mut sum)?;
        sums.row_mut(r).copy_from_slice(&sum);
    }
    finite_or(&pooled, || "pooling layer".into())?;

    let (mut z0, pool_bn) = match &params.pool_bn {
        Some(bn) => {
            let (out, trace) = bn.forward(&pooled, mode)?;
            (out, Some(trace))
        }
        None => (pooled.clone(), None),
    };
    let pool_mask = dropout::sample_mask(b, d0, ratio(0), rng);
    if let Some(m) = &pool_mask {
        z0.hadamard_assign(m);
    }
    finite_or(&z0, || "pooling layer".into())?;

    let mut z = vec![z0];
    let mut layers = Vec::with_capacity(params.depth());
    for (l, layer) in params.layers.iter().enumerate() {
        let input = z.last().expect("z_0 present");
        let mut affine = layer.weights.apply_rows(input);
        for r in 0..b {
            axpy(1.0, &layer.bias, affine.row_mut(r));
        }
        let (pre_activation, bn) = match &layer.bn {
            Some(state) => {
                let (out, trace) = state.forward(&affine, mode)?;
                (out, Some(trace))
            }
            None => (affine.clone(), None),
        };
        let mut activated = pre_activation.clone();
        let act = layer.activation;
        activated.map_inplace(|v| act.apply(v));
        let mask = dropout::sample_mask(b, layer.output_dim(), ratio(l + 1), rng);
        let mut out = activated.clone();
        if let Some(m) = &mask {
            out.hadamard_assign(m);
        }
        finite_or(&out, || format!("hidden layer {}", l + 1))?;
        layers.push(LayerTrace {
            affine,
            bn,
            pre_activation,
            activated,
            mask,
        });
        z.push(out);
    }

    let top = z.last().expect("z_L present");
    let scores: Vec<f64> = (0..b)
        .map(|r| linear[r] + dot(&params.h, top.row(r)))
        .collect();
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!(
            "prediction layer (instance {bad})"
        )));
    }
    Ok(ForwardTrace {
        mode,
        inputs: xs.to_vec(),
        embedding_sums: sums,
        pooled,
        pool_bn,
        pool_mask,
        layers,
        z,
        linear,
        scores,
    })
}

/// Single-instance forward pass.
pub fn nfm_forward<'a, R: Rng + ?Sized>(
    params: &NfmParams,
    x: &'a SparseInstance,
    mode: Mode,
    ratios: &[f64],
    rng: &mut R,
) -> Result<ForwardTrace<'a>> {
    forward_batch(params, &[x], mode, ratios, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub bn: Option<BnGrads>,
}

/// Gradients mirroring [`NfmParams`]; linear weights and embeddings are
/// stored only for features active in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NfmGradients {
    pub w0: f64,
    /// Width-1 rows.
    pub linear: SparseRows,
    pub embeddings: SparseRows,
    pub pool_bn: Option<BnGrads>,
    pub layers: Vec<LayerGrads>,
    pub h: Vec<f64>,
}

impl NfmGradients {
    pub fn zeros(params: &NfmParams) -> Self {
        Self {
            w0: 0.0,
            linear: SparseRows::new(1),
            embeddings: SparseRows::new(params.factors()),
            pool_bn: params.pool_bn.as_ref().map(|b| BnGrads::zeros(b.dim())),
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                    bn: l.bn.as_ref().map(|b| BnGrads::zeros(b.dim())),
                })
                .collect(),
            h: vec![0.0; params.h.len()],
        }
    }

    pub fn linear_grad(&self, feature: usize) -> f64 {
        self.linear.get(feature).map_or(0.0, |r| r[0])
    }

    pub fn embedding_grad(&self, feature: usize) -> Option<&[f64]> {
        self.embeddings.get(feature)
    }
}

fn check_trace(params: &NfmParams, trace: &ForwardTrace<'_>, upstream: &[f64]) -> Result<()> {
    let b = trace.len();
    if upstream.len() != b {
        return Err(Error::Shape(format!(
            "{} upstream values for a batch of {b}",
            upstream.len()
        )));
    }
    if trace.layers.len() != params.depth() || trace.z.len() != params.depth() + 1 {
        return Err(Error::Shape(format!(
            "trace has {} hidden layers, parameters have {}",
            trace.layers.len(),
            params.depth()
        )));
    }
    if trace.pooled.cols() != params.pooled_dim() || trace.embedding_sums.cols() != params.factors()
    {
        return Err(Error::Shape(
            "trace pooling width differs from parameters".into(),
        ));
    }
    if trace.pool_bn.is_some() != params.pool_bn.is_some() {
        return Err(Error::Shape(
            "trace and parameters disagree on pooling batch norm".into(),
        ));
    }
    for (l, (lt, layer)) in trace.layers.iter().zip(&params.layers).enumerate() {
        if lt.affine.cols() != layer.output_dim() || trace.z[l].cols() != layer.input_dim() {
            return Err(Error::Shape(format!(
                "trace shape differs at hidden layer {}",
                l + 1
            )));
        }
        if lt.bn.is_some() != layer.bn.is_some() {
            return Err(Error::Shape(format!(
                "batch norm presence differs at hidden layer {}",
                l + 1
            )));
        }
    }
    if trace.z[params.depth()].cols() != params.h.len() {
        return Err(Error::Shape("trace top layer width differs from h".into()));
    }
    Ok(())
}

/// Backward pass for a batch: returns `Σ_b upstream_b · ∂ŷ_b/∂θ` for every
/// parameter, respecting the trace's dropout masks and batch statistics.
pub fn backward(
    params: &NfmParams,
    trace: &ForwardTrace<'_>,
    upstream: &[f64],
) -> Result<NfmGradients> {
    check_trace(params, trace, upstream)?;
    let b = trace.len();
    let k = params.factors();
    let mut grads = NfmGradients::zeros(params);

    // linear part
    for (x, &g) in trace.inputs.iter().zip(upstream) {
        grads.w0 += g;
        for (i, v) in x.iter() {
            grads.linear.row_mut(i)[0] += g * v;
        }
    }

    // prediction layer
    let top = &trace.z[params.depth()];
    let mut dz = Matrix::zeros(b, params.h.len());
    for (r, &g) in upstream.iter().enumerate() {
        axpy(g, top.row(r), &mut grads.h);
        axpy(g, &params.h, dz.row_mut(r));
    }

    // hidden layers, top down
    for l in (0..params.depth()).rev() {
        let layer = &params.layers[l];
        let lt = &trace.layers[l];
        let lg = &mut grads.layers[l];
        if let Some(m) = &lt.mask {
            dz.hadamard_assign(m);
        }
        let act = layer.activation;
        for (d, (pre, post)) in dz.as_mut_slice().iter_mut().zip(
            lt.pre_activation
                .as_slice()
                .iter()
                .zip(lt.activated.as_slice()),
        ) {
            *d *= act.derivative(*pre, *post);
        }
        let d_affine = match (&layer.bn, &lt.bn, lg.bn.as_mut()) {
            (Some(state), Some(bt), Some(bg)) => state.backward(bt, &dz, bg),
            _ => dz,
        };
        lg.weights.add_outer_rows(&d_affine, &trace.z[l]);
        for r in 0..b {
            axpy(1.0, d_affine.row(r), &mut lg.bias);
        }
        dz = layer.weights.back_rows(&d_affine);
    }

    // pooled vector
    if let Some(m) = &trace.pool_mask {
        dz.hadamard_assign(m);
    }
    let d_pooled = match (&params.pool_bn, &trace.pool_bn, grads.pool_bn.as_mut()) {
        (Some(state), Some(bt), Some(bg)) => state.backward(bt, &dz, bg),
        _ => dz,
    };

    // embeddings
    for (r, x) in trace.inputs.iter().enumerate() {
        let dp = d_pooled.row(r);
        match params.pooling {
            Pooling::BiInteraction => {
                let sum = trace.embedding_sums.row(r);
                for (i, xi) in x.iter() {
                    let vi = params.fm.embedding(i);
                    let row = grads.embeddings.row_mut(i);
                    for f in 0..k {
                        row[f] += dp[f] * xi * (sum[f] - xi * vi[f]);
                    }
                }
            }
            Pooling::Average => {
                let n = x.nnz().max(1) as f64;
                for (i, xi) in x.iter() {
                    axpy(xi / n, dp, grads.embeddings.row_mut(i));
                }
            }
            Pooling::Concat { .. } => {
                for (slot, (i, xi)) in x.iter().enumerate() {
                    axpy(
                        xi,
                        &dp[slot * k..(slot + 1) * k],
                        grads.embeddings.row_mut(i),
                    );
                }
            }
        }
    }
    Ok(grads)
}

/// Backward pass for a single-instance trace.
pub fn nfm_backward(
    params: &NfmParams,
    trace: &ForwardTrace<'_>,
    upstream: f64,
) -> Result<NfmGradients> {
    backward(params, trace, &[upstream])
}
