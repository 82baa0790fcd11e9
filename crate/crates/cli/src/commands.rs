use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use nfm_core::checkpoint;
use nfm_core::data::{read_libfm, read_libfm_set, write_libfm};
use nfm_core::encode::RawSchema;
use nfm_core::experiments::{self, Splits};
use nfm_core::trainer::{self, write_epoch_csv, EpochReport, TrainConfig};
use nfm_core::{count_parameters, evaluate_rmse, Model};

use crate::args::{
    DataArgs, EvaluateArgs, MethodArg, PrepareArgs, RawPreset, ReproduceArgs, TrainArgs,
};

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or missing inputs: exit 2.
    Usage(anyhow::Error),
    /// Anything going wrong once the work has started: exit 1.
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::Run(e.into())
    }
}

pub type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("no such file: {}", path.display())))
    }
}

fn progress(label: &str) -> impl FnMut(&EpochReport) + '_ {
    move |r| {
        eprintln!(
            "[{label}] epoch {:>3}  train {:.4}  valid {:.4}  ({:.1}s)",
            r.epoch, r.train_rmse, r.valid_rmse, r.wall_seconds
        )
    }
}

fn raw_schema(args: &PrepareArgs) -> Result<RawSchema, Failure> {
    let mut schema = match args.preset {
        RawPreset::Frappe => RawSchema::frappe(),
        RawPreset::Movielens => RawSchema::movielens_tags(),
    };
    if let Some(cols) = &args.columns {
        schema.columns = cols.clone();
    }
    if let Some(item) = &args.item {
        schema.item_column = item.clone();
    }
    if let Some(d) = &args.delimiter {
        schema.delimiter = match d.as_str() {
            "tab" | "\\t" => b'\t',
            s if s.len() == 1 => s.as_bytes()[0],
            s => {
                return Err(usage(format!(
                    "delimiter must be one byte or \"tab\", got {s:?}"
                )))
            }
        };
    }
    if args.no_header {
        schema.has_header = false;
    }
    Ok(schema)
}

pub fn prepare(args: &PrepareArgs) -> Outcome {
    require_file(&args.raw)?;
    let schema = raw_schema(args)?;
    let raw = File::open(&args.raw).with_context(|| format!("opening {}", args.raw.display()))?;
    let splits = experiments::prepare_raw(raw, &schema, args.ratio, args.seed)?;
    fs::create_dir_all(&args.out_dir)?;
    for (part, data) in [
        ("train", &splits.train),
        ("validation", &splits.valid),
        ("test", &splits.test),
    ] {
        let path = args.out_dir.join(format!("{}.{part}.libfm", args.name));
        write_libfm(data, BufWriter::new(File::create(&path)?))?;
        println!("{part}\t{}\t{}", data.len(), path.display());
    }
    println!("features\t{}", splits.train.num_features());
    Ok(())
}

fn load_data(args: &DataArgs, seed: u64) -> Result<Splits, Failure> {
    if let Some(dir) = &args.data {
        if !dir.is_dir() {
            return Err(usage(format!("no such directory: {}", dir.display())));
        }
        return Ok(experiments::load_splits(
            dir,
            experiments::Corpus::Frappe,
            seed,
        )?);
    }
    let (Some(train), Some(valid)) = (&args.train, &args.valid) else {
        return Err(usage("pass --data DIR or both --train and --valid"));
    };
    let mut paths: Vec<&PathBuf> = vec![train, valid];
    paths.extend(&args.test);
    for p in &paths {
        require_file(p)?;
    }
    let mut sets = read_libfm_set(&paths)?.into_iter();
    let train = sets.next().expect("train read");
    let valid = sets.next().expect("valid read");
    let test = sets.next().unwrap_or_else(|| valid.clone());
    Ok(Splits { train, valid, test })
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let layers = if args.method == MethodArg::Fm {
        Vec::new()
    } else {
        args.layers.clone()
    };
    let dropout = match (&args.dropout, args.method) {
        (_, MethodArg::Fm) => vec![0.0],
        (None, _) => std::iter::once(0.0)
            .chain(layers.iter().map(|_| 0.5))
            .collect(),
        (Some(d), _) if d.len() == 1 => std::iter::once(d[0])
            .chain(layers.iter().map(|_| 0.5))
            .collect(),
        (Some(d), _) => d.clone(),
    };
    if args.method == MethodArg::Fm && (args.bn || args.pretrain.is_some()) {
        return Err(usage("--bn and --pretrain apply to --method nfm only"));
    }
    if let Some(p) = &args.pretrain {
        require_file(p)?;
    }
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        early_stop_patience: args.patience,
        dropout_ratios: dropout,
        l2_embedding: args.l2,
        bn_enabled: args.bn,
        activation: args.activation,
        layer_dims: layers,
        pooling: args.pooling,
        factors: args.factors,
        seed: args.seed,
        pretrain: args.pretrain.clone(),
        exact_bn_stats: args.exact_bn_stats,
        clip: args.clip.range(),
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.into()))?;
    Ok(cfg)
}

fn write_epochs(path: &Path, reports: &[EpochReport]) -> anyhow::Result<()> {
    write_epoch_csv(reports, BufWriter::new(File::create(path)?))
        .with_context(|| format!("writing {}", path.display()))
}

pub fn train(args: &TrainArgs) -> Outcome {
    let config = train_config(args)?;
    let data = load_data(&args.data, args.seed)?;
    let label = match args.method {
        MethodArg::Fm => "fm",
        MethodArg::Nfm => "nfm",
    };
    let mut observer = progress(label);
    let (model, reports, best_epoch, best_valid) = match args.method {
        MethodArg::Fm => {
            let out = trainer::train_fm(&data.train, &data.valid, &config, &mut observer)?;
            (
                Model::Fm(out.params),
                out.reports,
                out.best_epoch,
                out.best_valid_rmse,
            )
        }
        MethodArg::Nfm => {
            let out = trainer::train_nfm(&data.train, &data.valid, &config, &mut observer)?;
            (
                Model::Nfm(out.params),
                out.reports,
                out.best_epoch,
                out.best_valid_rmse,
            )
        }
    };
    checkpoint::save(&args.out, &model)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let csv = args.epochs_csv.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".epochs.csv");
        p.into()
    });
    write_epochs(&csv, &reports)?;
    println!("best_epoch\t{best_epoch}");
    println!("valid_rmse\t{best_valid:.6}");
    println!("params\t{}", count_parameters(&model));
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Outcome {
    require_file(&args.model)?;
    require_file(&args.data)?;
    let model = checkpoint::load(&args.model)?;
    let data = read_libfm(&args.data)?;
    let rmse = evaluate_rmse(&model, &data, args.clip.range())?;
    println!("model\t{}", model.kind());
    println!("instances\t{}", data.len());
    println!("rmse\t{rmse}");
    println!("params\t{}", count_parameters(&model));
    Ok(())
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn reproduce(args: &ReproduceArgs) -> Outcome {
    let jobs =
        experiments::preset_jobs(&args.preset, args.seed).map_err(|e| Failure::Usage(e.into()))?;
    if !args.data.is_dir() {
        return Err(usage(format!("no such directory: {}", args.data.display())));
    }
    let data = experiments::load_splits(
        &args.data,
        experiments::preset_corpus(&args.preset),
        args.seed,
    )?;
    if let Some(dir) = &args.epochs_dir {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::with_capacity(jobs.len());
    for (n, mut job) in jobs.into_iter().enumerate() {
        if let Some(cap) = args.max_epochs {
            if cap == 0 {
                return Err(usage("--max-epochs must be positive"));
            }
            job.config.max_epochs = cap;
        }
        let tag = format!("{} lr={}", job.label, job.config.learning_rate);
        let outcome = experiments::run_job(&job, &data, &mut progress(&tag))?;
        if let Some(dir) = &args.epochs_dir {
            let name = format!(
                "{n:03}-{}-lr{}.csv",
                file_safe(&job.label),
                job.config.learning_rate
            );
            write_epochs(&dir.join(name), &outcome.reports)?;
        }
        eprintln!("{}", outcome.row.csv_line());
        rows.push(outcome.row);
    }
    let mut out = BufWriter::new(File::create(&args.out)?);
    experiments::write_results_csv(&rows, &mut out)?;
    out.flush()?;
    let mut seen = Vec::new();
    for r in &rows {
        let family = r
            .method
            .split("-l2=")
            .next()
            .unwrap_or(&r.method)
            .to_string();
        if seen.contains(&family) {
            continue;
        }
        if let Some(best) = experiments::best_by_valid(&rows, &family) {
            println!("{}", best.csv_line());
        }
        seen.push(family);
    }
    Ok(())
}
