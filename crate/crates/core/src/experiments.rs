//! Named experiment presets and the results table they produce.
//!
//! A preset expands into a list of [`Job`]s. Each job trains one model on
//! the training split, picks its best epoch on the validation split and
//! reports test RMSE. Grid presets emit one row per grid point; callers
//! pick the winner by validation RMSE with [`best_by_valid`].

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::data::{negative_sample, read_libfm_set, split, Dataset, SplitSpec};
use crate::encode::{encode_categorical, RawSchema};
use crate::error::{Error, Result};
use crate::eval::{count_parameters, evaluate_rmse, Model};
use crate::nfm::{Activation, PoolingKind};
use crate::trainer::{
    init_model, pretrain_embeddings, train_fm, train_nfm_from, EpochReport, TrainConfig,
};

pub const RESULTS_CSV_HEADER: &str =
    "method,factors,layers,dropout,lr,seed,valid_rmse,test_rmse,params";

pub const LEARNING_RATES: [f64; 4] = [0.005, 0.01, 0.02, 0.05];
pub const L2_GRID: [f64; 11] = [
    1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1,
];
pub const DROPOUT_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub const NEGATIVE_RATIO: usize = 2;

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Which benchmark a preset targets; fixes batch size and defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corpus {
    Frappe,
    MovieLens,
}

impl Corpus {
    pub fn batch_size(self) -> usize {
        match self {
            Self::Frappe => 128,
            Self::MovieLens => 4096,
        }
    }

    pub fn schema(self) -> RawSchema {
        match self {
            Self::Frappe => RawSchema::frappe(),
            Self::MovieLens => RawSchema::movielens_tags(),
        }
    }
}

/// One-hot encodes a raw log, adds `ratio` negatives per positive and
/// splits 70/20/10. Sampling and splitting both use `seed`.
pub fn prepare_raw<R: Read>(raw: R, schema: &RawSchema, ratio: usize, seed: u64) -> Result<Splits> {
    let encoded = encode_categorical(raw, schema)?;
    let full = negative_sample(&encoded.positives, encoded.item_field.clone(), ratio, seed)?;
    let (train, valid, test) = split(&full, &SplitSpec::standard(seed))?;
    Ok(Splits { train, valid, test })
}

fn find_with_suffix(dir: &Path, suffix: &str) -> Result<Option<PathBuf>> {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(suffix))
        })
        .collect();
    hits.sort();
    match hits.len() {
        0 => Ok(None),
        1 => Ok(hits.pop()),
        _ => Err(Error::Config(format!(
            "several *{suffix} files in {}",
            dir.display()
        ))),
    }
}

/// Loads `*train.libfm`, `*validation.libfm` and `*test.libfm` from `dir`
/// with a shared feature space. When those are missing, a raw log named
/// `raw_name` in `dir` is prepared in memory instead.
pub fn load_splits(dir: &Path, corpus: Corpus, seed: u64) -> Result<Splits> {
    let parts = ["train.libfm", "validation.libfm", "test.libfm"]
        .map(|s| find_with_suffix(dir, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if let [Some(a), Some(b), Some(c)] = parts.as_slice() {
        let mut sets = read_libfm_set(&[a, b, c])?.into_iter();
        let mut next = || sets.next().expect("three files read");
        return Ok(Splits {
            train: next(),
            valid: next(),
            test: next(),
        });
    }
    let raw_name = match corpus {
        Corpus::Frappe => "frappe.csv",
        Corpus::MovieLens => "tags.csv",
    };
    let raw = dir.join(raw_name);
    if raw.is_file() {
        return prepare_raw(fs::File::open(raw)?, &corpus.schema(), NEGATIVE_RATIO, seed);
    }
    Err(Error::Config(format!(
        "{} holds neither *.train/validation/test.libfm nor {raw_name}",
        dir.display()
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fm,
    Nfm,
    /// NFM whose `w0`, `w` and `V` start from an FM trained with the same
    /// factors and learning rate.
    NfmPretrained,
}

#[derive(Debug, Clone)]
pub struct Job {
    pub label: String,
    pub method: Method,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub factors: usize,
    pub layers: Vec<usize>,
    pub dropout: Vec<f64>,
    pub lr: f64,
    pub seed: u64,
    pub valid_rmse: f64,
    pub test_rmse: f64,
    pub params: usize,
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    if xs.is_empty() {
        return "none".into();
    }
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{}",
            self.method,
            self.factors,
            join(&self.layers),
            join(&self.dropout),
            self.lr,
            self.seed,
            self.valid_rmse,
            self.test_rmse,
            self.params
        )
    }
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{RESULTS_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    out.flush()?;
    Ok(())
}

/// Row with the lowest validation RMSE among those whose method starts
/// with `prefix`.
pub fn best_by_valid<'a>(rows: &'a [ResultRow], prefix: &str) -> Option<&'a ResultRow> {
    rows.iter()
        .filter(|r| r.method.starts_with(prefix))
        .min_by(|a, b| a.valid_rmse.total_cmp(&b.valid_rmse))
}

#[derive(Debug, Clone)]
pub struct JobOutcome {
    pub row: ResultRow,
    pub reports: Vec<EpochReport>,
    pub model: Model,
}

pub fn run_job(
    job: &Job,
    data: &Splits,
    observer: &mut dyn FnMut(&EpochReport),
) -> Result<JobOutcome> {
    let cfg = &job.config;
    let (model, reports, valid_rmse) = match job.method {
        Method::Fm => {
            let out = train_fm(&data.train, &data.valid, cfg, observer)?;
            (Model::Fm(out.params), out.reports, out.best_valid_rmse)
        }
        Method::Nfm | Method::NfmPretrained => {
            let mut params = init_model(&data.train, cfg)?;
            if job.method == Method::NfmPretrained {
                let fm_cfg = TrainConfig {
                    pretrain: None,
                    ..cfg.clone()
                };
                let fm = train_fm(&data.train, &data.valid, &fm_cfg, &mut |_| {})?;
                params = pretrain_embeddings(params, &fm.params)?;
            }
            let out = train_nfm_from(params, &data.train, &data.valid, cfg, observer)?;
            (Model::Nfm(out.params), out.reports, out.best_valid_rmse)
        }
    };
    let test_rmse = evaluate_rmse(&model, &data.test, cfg.clip)?;
    let row = ResultRow {
        method: job.label.clone(),
        factors: cfg.factors,
        layers: cfg.layer_dims.clone(),
        dropout: if job.method == Method::Fm {
            Vec::new()
        } else {
            cfg.dropout_ratios.clone()
        },
        lr: cfg.learning_rate,
        seed: cfg.seed,
        valid_rmse,
        test_rmse,
        params: count_parameters(&model),
    };
    Ok(JobOutcome {
        row,
        reports,
        model,
    })
}

pub const PRESETS: [&str; 10] = [
    "table2-frappe-fm",
    "table3-frappe",
    "frappe-layers",
    "frappe-activation",
    "frappe-dropout",
    "frappe-l2",
    "frappe-pretrain",
    "frappe-pooling",
    "table2-movielens-fm",
    "table3-movielens",
];

fn base(corpus: Corpus, factors: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        factors,
        batch_size: corpus.batch_size(),
        seed,
        ..TrainConfig::default()
    }
}

/// NFM-0: Bi-Interaction pooling straight into `h = 1`.
pub fn nfm0_config(corpus: Corpus, factors: usize, dropout: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        dropout_ratios: vec![dropout],
        ..base(corpus, factors, seed)
    }
}

/// NFM with hidden layers of width `factors`, batch norm on, hidden
/// dropout 0.5 and pooling dropout `dropout`.
pub fn nfm_config(
    corpus: Corpus,
    factors: usize,
    depth: usize,
    dropout: f64,
    seed: u64,
) -> TrainConfig {
    let mut ratios = vec![dropout];
    ratios.extend(std::iter::repeat_n(0.5, depth));
    TrainConfig {
        layer_dims: vec![factors; depth],
        dropout_ratios: ratios,
        bn_enabled: true,
        activation: Activation::Relu,
        ..base(corpus, factors, seed)
    }
}

fn fm_grid(corpus: Corpus, factors: usize, seed: u64) -> Vec<Job> {
    let mut jobs = Vec::new();
    for lr in LEARNING_RATES {
        for l2 in L2_GRID {
            jobs.push(Job {
                label: format!("FM-l2={l2:e}"),
                method: Method::Fm,
                config: TrainConfig {
                    learning_rate: lr,
                    l2_embedding: l2,
                    ..base(corpus, factors, seed)
                },
            });
        }
    }
    jobs
}

fn nfm_job(label: impl Into<String>, method: Method, config: TrainConfig) -> Job {
    Job {
        label: label.into(),
        method,
        config,
    }
}

fn table3(corpus: Corpus, seed: u64) -> Vec<Job> {
    let k = 64;
    LEARNING_RATES
        .into_iter()
        .flat_map(|lr| {
            [
                nfm_job(
                    "NFM-0",
                    Method::Nfm,
                    TrainConfig {
                        learning_rate: lr,
                        ..nfm0_config(corpus, k, 0.3, seed)
                    },
                ),
                nfm_job(
                    "NFM-1",
                    Method::Nfm,
                    TrainConfig {
                        learning_rate: lr,
                        ..nfm_config(corpus, k, 1, 0.3, seed)
                    },
                ),
            ]
        })
        .collect()
}

/// Expands a preset name into jobs.
pub fn preset_jobs(name: &str, seed: u64) -> Result<Vec<Job>> {
    let fr = Corpus::Frappe;
    let k = 64;
    let jobs = match name {
        "table2-frappe-fm" => fm_grid(fr, 128, seed),
        "table2-movielens-fm" => fm_grid(Corpus::MovieLens, 128, seed),
        "table3-frappe" => table3(fr, seed),
        "table3-movielens" => table3(Corpus::MovieLens, seed),
        "frappe-layers" => (0..=4)
            .map(|depth| {
                let cfg = if depth == 0 {
                    nfm0_config(fr, k, 0.3, seed)
                } else {
                    nfm_config(fr, k, depth, 0.3, seed)
                };
                nfm_job(format!("NFM-{depth}"), Method::Nfm, cfg)
            })
            .collect(),
        "frappe-activation" => Activation::ALL
            .into_iter()
            .map(|a| {
                nfm_job(
                    format!("NFM-1-{a}"),
                    Method::Nfm,
                    TrainConfig {
                        activation: a,
                        ..nfm_config(fr, k, 1, 0.3, seed)
                    },
                )
            })
            .collect(),
        "frappe-dropout" => DROPOUT_GRID
            .into_iter()
            .map(|d| {
                nfm_job(
                    format!("NFM-0-dropout={d}"),
                    Method::Nfm,
                    nfm0_config(fr, k, d, seed),
                )
            })
            .collect(),
        "frappe-l2" => L2_GRID
            .into_iter()
            .map(|l2| {
                nfm_job(
                    format!("NFM-0-l2={l2:e}"),
                    Method::Nfm,
                    TrainConfig {
                        l2_embedding: l2,
                        ..nfm0_config(fr, k, 0.0, seed)
                    },
                )
            })
            .collect(),
        "frappe-pretrain" => vec![
            nfm_job("NFM-1-random", Method::Nfm, nfm_config(fr, k, 1, 0.3, seed)),
            nfm_job(
                "NFM-1-pretrained",
                Method::NfmPretrained,
                nfm_config(fr, k, 1, 0.3, seed),
            ),
        ],
        "frappe-pooling" => [
            PoolingKind::BiInteraction,
            PoolingKind::Concat,
            PoolingKind::Average,
        ]
        .into_iter()
        .map(|p| {
            nfm_job(
                format!("NFM-1-{p}"),
                Method::Nfm,
                TrainConfig {
                    pooling: p,
                    ..nfm_config(fr, k, 1, 0.3, seed)
                },
            )
        })
        .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(jobs)
}

pub fn preset_corpus(name: &str) -> Corpus {
    if name.contains("movielens") {
        Corpus::MovieLens
    } else {
        Corpus::Frappe
    }
}
