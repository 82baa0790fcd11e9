//! Mini-batch Adagrad training under squared loss.
//!
//! Each epoch shuffles the training set with the run seed, cuts it into
//! batches (the last partial batch is kept), and for every batch runs a
//! train-mode forward pass, back-propagates `2(ŷ − y)` per instance, sums
//! the gradients over the batch and applies one Adagrad step. Validation
//! RMSE drives early stopping and the returned parameters are those of
//! the best validation epoch.

mod adagrad;
mod early_stop;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint;
use crate::data::{Dataset, SparseInstance};
use crate::error::{Error, Result};
use crate::eval::{evaluate_rmse, DEFAULT_CLIP};
use crate::fm::{FmParams, DEFAULT_INIT_STD};
use crate::nfm::{
    self, batchnorm, dropout, forward_batch, Activation, Mode, NfmArch, NfmParams, Pooling,
    PoolingKind,
};
use crate::rng::{self, stream};

pub use adagrad::{adagrad_step, Adagrad, AdagradState, BnAccum, LayerAccum};
pub use early_stop::{EarlyStopping, Verdict};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive rising validation epochs that end training.
    pub early_stop_patience: usize,
    /// Pooling slot first, then one per hidden layer.
    pub dropout_ratios: Vec<f64>,
    pub l2_embedding: f64,
    pub bn_enabled: bool,
    pub activation: Activation,
    pub layer_dims: Vec<usize>,
    pub pooling: PoolingKind,
    pub factors: usize,
    pub seed: u64,
    /// FM checkpoint whose `w0`, `w` and `V` seed the model.
    pub pretrain: Option<std::path::PathBuf>,
    pub adagrad_epsilon: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub init_std: f64,
    /// Whether `h` is trained. `None` trains it only when there are hidden
    /// layers (NFM-0 keeps `h = 1`).
    pub train_h: Option<bool>,
    /// Replace running BN estimates of the returned model with exact
    /// statistics over the whole training set.
    pub exact_bn_stats: bool,
    /// Prediction clipping for the reported RMSE.
    pub clip: Option<(f64, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 128,
            max_epochs: 200,
            early_stop_patience: 4,
            dropout_ratios: vec![0.0],
            l2_embedding: 0.0,
            bn_enabled: false,
            activation: Activation::Relu,
            layer_dims: Vec::new(),
            pooling: PoolingKind::BiInteraction,
            factors: 64,
            seed: 2017,
            pretrain: None,
            adagrad_epsilon: adagrad::DEFAULT_EPSILON,
            bn_momentum: batchnorm::DEFAULT_MOMENTUM,
            bn_epsilon: batchnorm::DEFAULT_EPSILON,
            init_std: DEFAULT_INIT_STD,
            train_h: None,
            exact_bn_stats: false,
            clip: Some(DEFAULT_CLIP),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch size, epochs and patience must be positive".into());
        }
        if self.factors == 0 || self.layer_dims.contains(&0) {
            return bad("factors and layer widths must be positive".into());
        }
        if self.dropout_ratios.len() != 1 + self.layer_dims.len() {
            return bad(format!(
                "{} dropout ratios for {} hidden layers (need one more than layers)",
                self.dropout_ratios.len(),
                self.layer_dims.len()
            ));
        }
        self.dropout_ratios
            .iter()
            .try_for_each(|&r| dropout::check_ratio(r))?;
        if !(self.l2_embedding >= 0.0 && self.l2_embedding.is_finite()) {
            return bad(format!(
                "l2 {} must be finite and non-negative",
                self.l2_embedding
            ));
        }
        if !(self.adagrad_epsilon > 0.0) || !(self.bn_epsilon > 0.0) || !(self.init_std > 0.0) {
            return bad("epsilons and init std must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad(format!(
                "batch-norm momentum {} outside (0, 1)",
                self.bn_momentum
            ));
        }
        Ok(())
    }

    fn arch(&self, pooling: Pooling) -> NfmArch {
        NfmArch {
            factors: self.factors,
            pooling,
            layer_dims: self.layer_dims.clone(),
            activation: self.activation,
            batch_norm: self.bn_enabled,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
            init_std: self.init_std,
        }
    }

    fn optimizer(&self) -> Adagrad {
        Adagrad {
            learning_rate: self.learning_rate,
            epsilon: self.adagrad_epsilon,
            l2_embedding: self.l2_embedding,
        }
    }
}

/// Per-epoch progress; RMSEs use eval mode and clipped predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_rmse: f64,
    pub valid_rmse: f64,
    pub wall_seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_rmse,valid_rmse,seconds";

pub fn write_epoch_csv<W: Write>(reports: &[EpochReport], mut out: W) -> Result<()> {
    writeln!(out, "{EPOCH_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{:.3}",
            r.epoch, r.train_rmse, r.valid_rmse, r.wall_seconds
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub params: P,
    pub reports: Vec<EpochReport>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_valid_rmse: f64,
}

/// `Σ (ŷ − y)²` over unclipped predictions.
pub fn squared_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !predictions.iter().chain(targets).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("squared loss input".into()));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum())
}

/// Copies `w0`, `w` and `V` of a factorization machine into `nfm`; hidden
/// layers, `h` and batch-norm state are left as they are.
pub fn pretrain_embeddings(mut nfm: NfmParams, fm: &FmParams) -> Result<NfmParams> {
    if fm.num_features() != nfm.num_features() || fm.factors() != nfm.factors() {
        return Err(Error::Shape(format!(
            "FM checkpoint is {}x{} but the model is {}x{}",
            fm.num_features(),
            fm.factors(),
            nfm.num_features(),
            nfm.factors()
        )));
    }
    nfm.fm = fm.clone();
    Ok(nfm)
}

/// Replaces each normalized layer's running mean/variance with the exact
/// population statistics of its input over `data`, computed layer by
/// layer in eval mode.
pub fn recompute_bn_statistics(params: &mut NfmParams, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    const CHUNK: usize = 1024;
    for slot in 0..params.dropout_slots() {
        let has_bn = match slot {
            0 => params.pool_bn.is_some(),
            l => params.layers[l - 1].bn.is_some(),
        };
        if !has_bn {
            continue;
        }
        let dim = match slot {
            0 => params.pooled_dim(),
            l => params.layers[l - 1].output_dim(),
        };
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for chunk in data.instances().chunks(CHUNK) {
            let refs: Vec<&SparseInstance> = chunk.iter().collect();
            let trace = forward_batch(params, &refs, Mode::Eval, &[], &mut rng::seeded(0, 0))?;
            let input = match slot {
                0 => &trace.pooled,
                l => &trace.layers[l - 1].affine,
            };
            for r in 0..input.rows() {
                for (c, v) in input.row(r).iter().enumerate() {
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
        }
        let n = data.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0))
            .collect();
        let bn = match slot {
            0 => params.pool_bn.as_mut(),
            l => params.layers[l - 1].bn.as_mut(),
        }
        .expect("checked above");
        bn.running_mean = mean;
        bn.running_var = var;
    }
    Ok(())
}

fn check_datasets(train: &Dataset, valid: &Dataset) -> Result<()> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.num_features() != valid.num_features() {
        return Err(Error::Shape(format!(
            "train has {} features, validation {}",
            train.num_features(),
            valid.num_features()
        )));
    }
    Ok(())
}

/// Batch boundaries over a shuffled order. A trailing batch of one is
/// merged into its predecessor when batch norm needs at least two rows.
fn batch_ranges(len: usize, batch: usize, min_rows: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..len)
        .step_by(batch)
        .map(|s| s..(s + batch).min(len))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < min_rows) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("has predecessor").end = last.end;
    }
    out
}

struct Run<'a> {
    config: &'a TrainConfig,
    ratios: Vec<f64>,
    train_h: bool,
}

impl Run<'_> {
    fn fit(
        &self,
        mut params: NfmParams,
        train: &Dataset,
        valid: &Dataset,
        observer: &mut dyn FnMut(&EpochReport),
    ) -> Result<TrainOutcome<NfmParams>> {
        let cfg = self.config;
        let opt = cfg.optimizer();
        let mut state = AdagradState::zeros_like(&params);
        let mut shuffle_rng = rng::seeded(cfg.seed, stream::SHUFFLE);
        let mut dropout_rng = rng::seeded(cfg.seed, stream::DROPOUT);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let min_rows = if params.uses_batch_norm() { 2 } else { 1 };
        let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
        let mut best = params.clone();
        let mut reports = Vec::new();

        for epoch in 1..=cfg.max_epochs {
            let start = Instant::now();
            rng::shuffle(&mut order, &mut shuffle_rng);
            for (b, range) in batch_ranges(order.len(), cfg.batch_size, min_rows)
                .into_iter()
                .enumerate()
            {
                let batch = b + 1;
                let xs: Vec<&SparseInstance> = order[range]
                    .iter()
                    .map(|&i| &train.instances()[i])
                    .collect();
                let trace =
                    forward_batch(&params, &xs, Mode::Train, &self.ratios, &mut dropout_rng)
                        .map_err(|e| match e {
                            Error::NonFinite(_) => Error::Diverged { epoch, batch },
                            other => other,
                        })?;
                let residuals: Vec<f64> = trace
                    .scores
                    .iter()
                    .zip(&xs)
                    .map(|(s, x)| s - x.target())
                    .collect();
                let loss: f64 = residuals.iter().map(|r| r * r).sum();
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch });
                }
                let upstream: Vec<f64> = residuals.iter().map(|r| 2.0 * r).collect();
                let mut grads = nfm::backward(&params, &trace, &upstream)?;
                if !self.train_h {
                    grads.h.fill(0.0);
                }
                let stats: Vec<Option<batchnorm::BatchStats>> =
                    trace.batch_stats().map(|s| s.cloned()).collect();
                opt.step(&mut params, &grads, &mut state)?;
                for (slot, s) in stats.iter().enumerate() {
                    let bn = match slot {
                        0 => params.pool_bn.as_mut(),
                        l => params.layers[l - 1].bn.as_mut(),
                    };
                    if let (Some(bn), Some(s)) = (bn, s) {
                        bn.update_running(s);
                    }
                }
            }
            let train_rmse = evaluate_rmse(&params, train, cfg.clip)?;
            let valid_rmse = evaluate_rmse(&params, valid, cfg.clip)?;
            let report = EpochReport {
                epoch,
                train_rmse,
                valid_rmse,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            observer(&report);
            reports.push(report);
            let verdict = stopper.observe(epoch, valid_rmse);
            if verdict.improved {
                best = params.clone();
            }
            if verdict.stop {
                break;
            }
        }

        if cfg.exact_bn_stats && best.uses_batch_norm() {
            recompute_bn_statistics(&mut best, train)?;
        }
        let (best_epoch, best_valid_rmse) = stopper.best().expect("at least one epoch ran");
        Ok(TrainOutcome {
            params: best,
            reports,
            best_epoch,
            best_valid_rmse,
        })
    }
}

fn concat_fields(train: &Dataset) -> Result<usize> {
    let fields = train.instances()[0].nnz();
    if let Some(pos) = train.instances().iter().position(|x| x.nnz() != fields) {
        return Err(Error::Shape(format!(
            "concat pooling needs a fixed active-feature count: instance 0 has {fields}, instance {pos} has {}",
            train.instances()[pos].nnz()
        )));
    }
    Ok(fields)
}

/// Fresh (or FM-pretrained) model for `config` over `train`'s feature space.
pub fn init_model(train: &Dataset, config: &TrainConfig) -> Result<NfmParams> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pooling = match config.pooling {
        PoolingKind::BiInteraction => Pooling::BiInteraction,
        PoolingKind::Average => Pooling::Average,
        PoolingKind::Concat => Pooling::Concat {
            fields: concat_fields(train)?,
        },
    };
    let mut init_rng = rng::seeded(config.seed, stream::INIT);
    let params = NfmParams::init(train.num_features(), &config.arch(pooling), &mut init_rng)?;
    match &config.pretrain {
        Some(path) => pretrain_embeddings(params, &checkpoint::load_fm(path)?),
        None => Ok(params),
    }
}

/// Trains an NFM, reporting each epoch to `observer`.
pub fn train_nfm(
    train: &Dataset,
    valid: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochReport),
) -> Result<TrainOutcome<NfmParams>> {
    check_datasets(train, valid)?;
    let params = init_model(train, config)?;
    train_nfm_from(params, train, valid, config, observer)
}

/// Trains starting from `params` instead of a fresh initialization. The
/// architecture fields of `config` are ignored; `params` must agree with
/// its dropout ratios.
pub fn train_nfm_from(
    params: NfmParams,
    train: &Dataset,
    valid: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochReport),
) -> Result<TrainOutcome<NfmParams>> {
    config.validate()?;
    check_datasets(train, valid)?;
    params.validate()?;
    if params.num_features() != train.num_features() {
        return Err(Error::Shape(format!(
            "model has {} features, data {}",
            params.num_features(),
            train.num_features()
        )));
    }
    if config.dropout_ratios.len() != params.dropout_slots() {
        return Err(Error::Config(format!(
            "{} dropout ratios for a model with {} dropout slots",
            config.dropout_ratios.len(),
            params.dropout_slots()
        )));
    }
    let run = Run {
        config,
        ratios: config.dropout_ratios.clone(),
        train_h: config.train_h.unwrap_or(params.depth() > 0),
    };
    run.fit(params, train, valid, observer)
}

pub fn nfm_train(
    train: &Dataset,
    valid: &Dataset,
    config: &TrainConfig,
) -> Result<(NfmParams, Vec<EpochReport>)> {
    let out = train_nfm(train, valid, config, &mut |_| {})?;
    Ok((out.params, out.reports))
}

/// Trains a plain factorization machine: the NFM-0 network with `h`
/// frozen at ones, no dropout and no batch norm. Architecture fields of
/// `config` other than `factors` are ignored; `l2_embedding` applies.
pub fn train_fm(
    train: &Dataset,
    valid: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochReport),
) -> Result<TrainOutcome<FmParams>> {
    let fm_config = TrainConfig {
        dropout_ratios: vec![0.0],
        bn_enabled: false,
        layer_dims: Vec::new(),
        pooling: PoolingKind::BiInteraction,
        train_h: Some(false),
        ..config.clone()
    };
    check_datasets(train, valid)?;
    let params = init_model(train, &fm_config)?;
    let run = Run {
        config: &fm_config,
        ratios: vec![0.0],
        train_h: false,
    };
    let out = run.fit(params, train, valid, observer)?;
    Ok(TrainOutcome {
        params: out.params.fm,
        reports: out.reports,
        best_epoch: out.best_epoch,
        best_valid_rmse: out.best_valid_rmse,
    })
}

pub fn fm_train(
    train: &Dataset,
    valid: &Dataset,
    config: &TrainConfig,
) -> Result<(FmParams, Vec<EpochReport>)> {
    let out = train_fm(train, valid, config, &mut |_| {})?;
    Ok((out.params, out.reports))
}

/// Loads an FM checkpoint and copies it into `nfm`.
pub fn pretrain_from_checkpoint(nfm: NfmParams, path: impl AsRef<Path>) -> Result<NfmParams> {
    pretrain_embeddings(nfm, &checkpoint::load_fm(path)?)
}
