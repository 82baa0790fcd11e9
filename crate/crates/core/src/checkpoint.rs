//! Binary model checkpoints.
//!
//! All integers and floats are little-endian; floats are raw IEEE-754
//! binary64, so a save/load cycle is bit-exact.
//!
//! ```text
//! magic       8 bytes   "NFMCKPT\0"
//! version     u32       1
//! kind        u8        0 = FM, 1 = NFM
//! n           u64       features
//! k           u64       factors
//! w0          f64
//! w           n × f64
//! V           n·k × f64 (row i is v_i)
//! -- NFM only --
//! pooling     u8        0 = bi-interaction, 1 = average, 2 = concat
//! fields      u64       concat field count, 0 otherwise
//! pool_bn     bn-block
//! L           u32       hidden layers
//! per layer:  d_in u64, d_out u64, activation u8 (0 relu, 1 sigmoid,
//!             2 tanh, 3 identity), W d_out·d_in × f64 (row-major),
//!             b d_out × f64, bn-block
//! h_len       u64
//! h           h_len × f64
//!
//! bn-block:   present u8; if 1: dim u64, momentum f64, epsilon f64,
//!             gamma, beta, running_mean, running_var (dim × f64 each)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::eval::Model;
use crate::fm::FmParams;
use crate::linalg::Matrix;
use crate::nfm::{Activation, BatchNormState, HiddenLayer, NfmParams, Pooling};

pub const MAGIC: [u8; 8] = *b"NFMCKPT\0";
pub const VERSION: u32 = 1;

const KIND_FM: u8 = 0;
const KIND_NFM: u8 = 1;

/// Refuse absurd sizes from corrupt headers before allocating.
const MAX_ELEMENTS: u64 = 1 << 34;

fn write_f64s<W: Write>(out: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        out.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let n = r.read_u64::<LE>()?;
    if n > MAX_ELEMENTS {
        return Err(Error::Checkpoint(format!("implausible length {n}")));
    }
    Ok(n as usize)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LE>(&mut out)?;
    Ok(out)
}

fn write_fm<W: Write>(out: &mut W, fm: &FmParams) -> Result<()> {
    out.write_u64::<LE>(fm.num_features() as u64)?;
    out.write_u64::<LE>(fm.factors() as u64)?;
    out.write_f64::<LE>(fm.w0)?;
    write_f64s(out, &fm.linear)?;
    write_f64s(out, fm.embeddings.as_slice())
}

fn read_fm<R: Read>(r: &mut R) -> Result<FmParams> {
    let n = read_len(r)?;
    let k = read_len(r)?;
    if (n as u64).saturating_mul(k as u64) > MAX_ELEMENTS {
        return Err(Error::Checkpoint(format!("implausible shape {n}x{k}")));
    }
    let w0 = r.read_f64::<LE>()?;
    let linear = read_f64s(r, n)?;
    let embeddings = Matrix::from_vec(n, k, read_f64s(r, n * k)?);
    let fm = FmParams {
        w0,
        linear,
        embeddings,
    };
    fm.validate()?;
    Ok(fm)
}

fn write_bn<W: Write>(out: &mut W, bn: Option<&BatchNormState>) -> Result<()> {
    let Some(bn) = bn else {
        out.write_u8(0)?;
        return Ok(());
    };
    out.write_u8(1)?;
    out.write_u64::<LE>(bn.dim() as u64)?;
    out.write_f64::<LE>(bn.momentum)?;
    out.write_f64::<LE>(bn.epsilon)?;
    for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
        write_f64s(out, v)?;
    }
    Ok(())
}

fn read_bn<R: Read>(r: &mut R) -> Result<Option<BatchNormState>> {
    match r.read_u8()? {
        0 => Ok(None),
        1 => {
            let dim = read_len(r)?;
            let momentum = r.read_f64::<LE>()?;
            let epsilon = r.read_f64::<LE>()?;
            let bn = BatchNormState {
                gamma: read_f64s(r, dim)?,
                beta: read_f64s(r, dim)?,
                running_mean: read_f64s(r, dim)?,
                running_var: read_f64s(r, dim)?,
                momentum,
                epsilon,
            };
            bn.validate()?;
            Ok(Some(bn))
        }
        t => Err(Error::Checkpoint(format!("bad batch-norm flag {t}"))),
    }
}

pub fn write_model<W: Write>(mut out: W, model: &Model) -> Result<()> {
    out.write_all(&MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    match model {
        Model::Fm(fm) => {
            out.write_u8(KIND_FM)?;
            write_fm(&mut out, fm)?;
        }
        Model::Nfm(p) => {
            out.write_u8(KIND_NFM)?;
            write_fm(&mut out, &p.fm)?;
            let (tag, fields) = match p.pooling {
                Pooling::BiInteraction => (0u8, 0usize),
                Pooling::Average => (1, 0),
                Pooling::Concat { fields } => (2, fields),
            };
            out.write_u8(tag)?;
            out.write_u64::<LE>(fields as u64)?;
            write_bn(&mut out, p.pool_bn.as_ref())?;
            out.write_u32::<LE>(p.layers.len() as u32)?;
            for layer in &p.layers {
                out.write_u64::<LE>(layer.input_dim() as u64)?;
                out.write_u64::<LE>(layer.output_dim() as u64)?;
                out.write_u8(layer.activation.tag())?;
                write_f64s(&mut out, layer.weights.as_slice())?;
                write_f64s(&mut out, &layer.bias)?;
                write_bn(&mut out, layer.bn.as_ref())?;
            }
            out.write_u64::<LE>(p.h.len() as u64)?;
            write_f64s(&mut out, &p.h)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = r.read_u8()?;
    let fm = read_fm(&mut r)?;
    let model = match kind {
        KIND_FM => Model::Fm(fm),
        KIND_NFM => {
            let tag = r.read_u8()?;
            let fields = read_len(&mut r)?;
            let pooling = match tag {
                0 => Pooling::BiInteraction,
                1 => Pooling::Average,
                2 => Pooling::Concat { fields },
                t => return Err(Error::Checkpoint(format!("bad pooling tag {t}"))),
            };
            let pool_bn = read_bn(&mut r)?;
            let depth = r.read_u32::<LE>()?;
            let mut layers = Vec::new();
            for _ in 0..depth {
                let d_in = read_len(&mut r)?;
                let d_out = read_len(&mut r)?;
                let tag = r.read_u8()?;
                let activation = Activation::from_tag(tag)
                    .ok_or_else(|| Error::Checkpoint(format!("bad activation tag {tag}")))?;
                let weights = Matrix::from_vec(d_out, d_in, read_f64s(&mut r, d_out * d_in)?);
                let bias = read_f64s(&mut r, d_out)?;
                let bn = read_bn(&mut r)?;
                layers.push(HiddenLayer {
                    weights,
                    bias,
                    activation,
                    bn,
                });
            }
            let h_len = read_len(&mut r)?;
            let h = read_f64s(&mut r, h_len)?;
            let p = NfmParams {
                fm,
                pooling,
                pool_bn,
                layers,
                h,
            };
            p.validate()?;
            Model::Nfm(p)
        }
        k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after model".into()));
    }
    Ok(model)
}

pub fn save(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), model)
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    read_model(BufReader::new(File::open(path)?))
}

pub fn load_fm(path: impl AsRef<Path>) -> Result<FmParams> {
    match load(path)? {
        Model::Fm(fm) => Ok(fm),
        Model::Nfm(_) => Err(Error::Checkpoint(
            "expected an FM checkpoint, found NFM".into(),
        )),
    }
}
