//! Sparse datasets in the libfm text format.
//!
//! Each non-empty line is `<target> <idx>:<value> ...`. Lines whose first
//! non-blank character is `#` are comments. Zero-valued entries are dropped
//! at parse time; entries are re-sorted by index. The feature-space
//! dimension is one more than the largest index seen (including indices
//! whose value was zero).

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// One example: sorted non-zero `(index, value)` pairs plus a target.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInstance {
    indices: Vec<usize>,
    values: Vec<f64>,
    target: f64,
}

impl SparseInstance {
    /// Builds an instance from unordered pairs. Zero values are dropped.
    pub fn new(mut pairs: Vec<(usize, f64)>, target: f64) -> Result<Self> {
        if !target.is_finite() {
            return Err(Error::Instance(format!("non-finite target {target}")));
        }
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        let mut last = None;
        for (i, v) in pairs {
            if last == Some(i) {
                return Err(Error::Instance(format!("duplicate feature index {i}")));
            }
            last = Some(i);
            if !v.is_finite() {
                return Err(Error::Instance(format!("non-finite value at index {i}")));
            }
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        Ok(Self {
            indices,
            values,
            target,
        })
    }

    /// Instance whose active features all have value 1.
    pub fn one_hot(indices: &[usize], target: f64) -> Result<Self> {
        Self::new(indices.iter().map(|&i| (i, 1.0)).collect(), target)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn set_target(&mut self, target: f64) {
        self.target = target;
    }

    /// Number of non-zero entries.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    pub fn check_range(&self, num_features: usize) -> Result<()> {
        match self.max_index() {
            Some(index) if index >= num_features => Err(Error::IndexOutOfRange {
                index,
                num_features,
            }),
            _ => Ok(()),
        }
    }
}

/// An immutable collection of instances over a shared feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<SparseInstance>,
    num_features: usize,
}

impl Dataset {
    pub fn new(instances: Vec<SparseInstance>, num_features: usize) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::Shape("num_features must be at least 1".into()));
        }
        for x in &instances {
            x.check_range(num_features)?;
        }
        Ok(Self {
            instances,
            num_features,
        })
    }

    pub fn instances(&self) -> &[SparseInstance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<SparseInstance> {
        self.instances
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Same instances over a feature space of at least `num_features`.
    pub fn with_num_features(mut self, num_features: usize) -> Result<Self> {
        if num_features < self.num_features {
            return Err(Error::Shape(format!(
                "cannot shrink feature space from {} to {num_features}",
                self.num_features
            )));
        }
        self.num_features = num_features;
        Ok(self)
    }

    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.instances.iter().map(|x| x.target())
    }
}

fn parse_line(line: &str, lineno: usize, max_index: &mut Option<usize>) -> Result<SparseInstance> {
    let err = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let mut tokens = line.split_whitespace();
    let target_tok = tokens.next().ok_or_else(|| err("missing target".into()))?;
    let target: f64 = target_tok
        .parse()
        .map_err(|_| err(format!("non-numeric target {target_tok:?}")))?;
    if !target.is_finite() {
        return Err(err(format!("non-finite target {target_tok:?}")));
    }
    let mut pairs = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("missing ':' in {tok:?}")))?;
        if idx.starts_with('-') {
            return Err(err(format!("negative index in {tok:?}")));
        }
        let idx: usize = idx
            .parse()
            .map_err(|_| err(format!("non-numeric index in {tok:?}")))?;
        let val: f64 = val
            .parse()
            .map_err(|_| err(format!("non-numeric value in {tok:?}")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite value in {tok:?}")));
        }
        *max_index = Some(max_index.map_or(idx, |m: usize| m.max(idx)));
        pairs.push((idx, val));
    }
    SparseInstance::new(pairs, target).map_err(|e| err(e.to_string()))
}

/// Parses libfm text. `num_features` is `1 + max index seen` (at least 1).
pub fn parse_libfm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut instances = Vec::new();
    let mut max_index = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        instances.push(parse_line(trimmed, i + 1, &mut max_index)?);
    }
    let num_features = max_index.map_or(1, |m| m + 1);
    Dataset::new(instances, num_features)
}

pub fn parse_libfm_str(text: &str) -> Result<Dataset> {
    parse_libfm(text.as_bytes())
}

pub fn read_libfm(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_libfm(std::io::BufReader::new(file))
}

/// Reads several files and widens them all to one shared feature space.
pub fn read_libfm_set<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<Dataset>> {
    let sets = paths.iter().map(read_libfm).collect::<Result<Vec<_>>>()?;
    let n = sets.iter().map(Dataset::num_features).max().unwrap_or(1);
    sets.into_iter().map(|d| d.with_num_features(n)).collect()
}

/// Writes libfm text. Numbers use Rust's shortest round-trip formatting,
/// so parsing the output reproduces the dataset exactly (up to
/// `num_features`, which is not stored in the format).
pub fn write_libfm<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for x in dataset.instances() {
        write!(out, "{}", x.target())?;
        for (i, v) in x.iter() {
            write!(out, " {i}:{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, valid: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train_fraction: train,
            valid_fraction: valid,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 70/20/10 protocol.
    pub fn standard(seed: u64) -> Self {
        Self {
            train_fraction: 0.7,
            valid_fraction: 0.2,
            test_fraction: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.valid_fraction, self.test_fraction];
        if fr.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::Split(format!(
                "fractions must be positive, got {fr:?}"
            )));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Part sizes for `n` instances: train and valid rounded down, test
    /// takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the 1e-9 slack keeps e.g. 0.7 * 100 from flooring to 69
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let train = floor(self.train_fraction).min(n);
        let valid = floor(self.valid_fraction).min(n - train);
        (train, valid, n - train - valid)
    }
}

/// Shuffles with the spec's seed and partitions into train/valid/test.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n_train, n_valid, n_test) = spec.sizes(dataset.len());
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::Split(format!(
            "{} instances give an empty part: sizes ({n_train}, {n_valid}, {n_test})",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng::shuffle(&mut order, &mut rng::seeded(spec.seed, stream::SHUFFLE));
    let take = |range: Range<usize>| {
        let instances = order[range]
            .iter()
            .map(|&i| dataset.instances[i].clone())
            .collect();
        Dataset {
            instances,
            num_features: dataset.num_features,
        }
    };
    Ok((
        take(0..n_train),
        take(n_train..n_train + n_valid),
        take(n_train + n_valid..dataset.len()),
    ))
}

/// Pairs every positive with `ratio` negatives.
///
/// Each positive must have exactly one active index inside `item_field`;
/// the remaining entries form its context. A negative copies the positive,
/// swaps the item for one drawn uniformly from `item_field` among items
/// never observed as positive with that same context, and gets target -1.
/// Draws are independent, so two negatives of one positive may coincide.
pub fn negative_sample(
    positives: &Dataset,
    item_field: Range<usize>,
    ratio: usize,
    seed: u64,
) -> Result<Dataset> {
    if ratio == 0 {
        return Err(Error::Sampling("ratio must be at least 1".into()));
    }
    if item_field.is_empty() || item_field.end > positives.num_features() {
        return Err(Error::Sampling(format!(
            "item field {item_field:?} is empty or exceeds {} features",
            positives.num_features()
        )));
    }

    type Context = Vec<(usize, u64)>;
    let split_item = |pos: usize, x: &SparseInstance| -> Result<(usize, f64, Context)> {
        let mut item = None;
        let mut context = Vec::with_capacity(x.nnz());
        for (i, v) in x.iter() {
            if item_field.contains(&i) {
                if item.is_some() {
                    return Err(Error::Sampling(format!(
                        "instance {pos} has more than one active item in {item_field:?}"
                    )));
                }
                item = Some((i, v));
            } else {
                context.push((i, v.to_bits()));
            }
        }
        let (i, v) = item.ok_or_else(|| {
            Error::Sampling(format!(
                "instance {pos} has no active item in {item_field:?}"
            ))
        })?;
        Ok((i, v, context))
    };

    let mut observed: HashMap<Context, HashSet<usize>> = HashMap::new();
    let mut parts = Vec::with_capacity(positives.len());
    for (pos, x) in positives.instances().iter().enumerate() {
        let (item, value, context) = split_item(pos, x)?;
        observed.entry(context.clone()).or_default().insert(item);
        parts.push((item, value, context));
    }

    let field_size = item_field.len();
    let mut rng = rng::seeded(seed, stream::SAMPLING);
    let mut out = Vec::with_capacity(positives.len() * (1 + ratio));
    for (pos, (x, (_, value, context))) in positives.instances().iter().zip(&parts).enumerate() {
        let used = &observed[context];
        if used.len() >= field_size {
            let ctx: Vec<usize> = context.iter().map(|&(i, _)| i).collect();
            return Err(Error::Sampling(format!(
                "item field exhausted for instance {pos} with context {ctx:?}"
            )));
        }
        let mut positive = x.clone();
        positive.set_target(1.0);
        out.push(positive);

        // enumerate when most items are taken, otherwise rejection sample
        let candidates: Option<Vec<usize>> = (used.len() * 2 > field_size)
            .then(|| item_field.clone().filter(|i| !used.contains(i)).collect());
        for _ in 0..ratio {
            let negative_item = match &candidates {
                Some(c) => c[rng::uniform_below(&mut rng, c.len() as u64) as usize],
                None => loop {
                    let i =
                        item_field.start + rng::uniform_below(&mut rng, field_size as u64) as usize;
                    if !used.contains(&i) {
                        break i;
                    }
                },
            };
            let mut pairs: Vec<(usize, f64)> = context
                .iter()
                .map(|&(i, bits)| (i, f64::from_bits(bits)))
                .collect();
            pairs.push((negative_item, *value));
            out.push(SparseInstance::new(pairs, -1.0)?);
        }
    }
    Dataset::new(out, positives.num_features())
}
