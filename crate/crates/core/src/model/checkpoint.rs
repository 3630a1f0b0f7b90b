//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"ICLCKPT\0"
//! 8       4     u32 format version (= 1)
//! 12      4     u32 layers
//! 16      4     u32 heads
//! 20      4     u32 d_model
//! 24      4     u32 max_seq_len
//! 28      4     u32 mlp_hidden
//! 32      4     u32 flags: bit0 use_ln, bit1 use_residual, bit2 use_mlp,
//!                          bit3 softmax_scale, bit4 use_positional
//! 36      8     f64 eps_ln
//! 44      8     f64 init_std
//! 52      8     u64 training seed
//! 60      8     u64 step count
//! 68      4     u32 tensor count N
//! 72      ...   N tensors in declared order, each:
//!                 u32 rows, u32 cols, rows*cols f64 values (row-major)
//! ```
//!
//! Values are always stored as 64-bit floats; `f32` models are widened on
//! save and narrowed on load.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{tensor_shapes, ModelConfig, Transformer, TransformerWeights};
use crate::numkit::Matrix;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 8] = *b"ICLCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// A model plus the training metadata stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub model: Transformer<T>,
    pub seed: u64,
    pub step: u64,
}

fn flags(cfg: &ModelConfig) -> u32 {
    u32::from(cfg.use_ln)
        | u32::from(cfg.use_residual) << 1
        | u32::from(cfg.use_mlp) << 2
        | u32::from(cfg.softmax_scale) << 3
        | u32::from(cfg.use_positional) << 4
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let cfg = &self.model.config;
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for (v, what) in [
            (cfg.layers, "layers"),
            (cfg.heads, "heads"),
            (cfg.d_model, "d_model"),
            (cfg.max_seq_len, "max_seq_len"),
            (cfg.mlp_hidden, "mlp_hidden"),
        ] {
            w.write_all(&to_u32(v, what)?.to_le_bytes())?;
        }
        w.write_all(&flags(cfg).to_le_bytes())?;
        w.write_all(&cfg.eps_ln.to_le_bytes())?;
        w.write_all(&cfg.init_std.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        let tensors = self.model.weights.tensors();
        w.write_all(&to_u32(tensors.len(), "tensor count")?.to_le_bytes())?;
        for t in tensors {
            w.write_all(&to_u32(t.rows(), "rows")?.to_le_bytes())?;
            w.write_all(&to_u32(t.cols(), "cols")?.to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 8);
            for &v in t.as_slice() {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
        }
        let layers = read_u32(r)? as usize;
        let heads = read_u32(r)? as usize;
        let d_model = read_u32(r)? as usize;
        let max_seq_len = read_u32(r)? as usize;
        let mlp_hidden = read_u32(r)? as usize;
        let fl = read_u32(r)?;
        if fl >> 5 != 0 {
            return Err(Error::Checkpoint(format!("unknown flag bits {fl:#x}")));
        }
        let config = ModelConfig {
            layers,
            heads,
            d_model,
            max_seq_len,
            mlp_hidden,
            use_ln: fl & 1 != 0,
            use_residual: fl & 2 != 0,
            use_mlp: fl & 4 != 0,
            softmax_scale: fl & 8 != 0,
            use_positional: fl & 16 != 0,
            eps_ln: read_f64(r)?,
            init_std: read_f64(r)?,
        };
        config.validate().map_err(|e| Error::Checkpoint(format!("stored config is invalid: {e}")))?;
        let seed = read_u64(r)?;
        let step = read_u64(r)?;
        let count = read_u32(r)? as usize;
        let shapes = tensor_shapes(&config);
        if count != shapes.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, file declares {count}", shapes.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, er, ec) in shapes {
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            if (rows, cols) != (er, ec) {
                return Err(Error::Checkpoint(format!("{name}: expected {er}x{ec}, file has {rows}x{cols}")));
            }
            let mut buf = vec![0u8; rows * cols * 8];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect();
            tensors.push(Matrix::from_vec(rows, cols, data)?);
        }
        let weights = TransformerWeights::from_tensors(&config, tensors)?;
        if !weights.all_finite() {
            return Err(Error::Checkpoint("non-finite weight".into()));
        }
        Ok(Self {
            model: Transformer { config, weights },
            seed,
            step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::read_from(&mut bytes.as_slice()).map_err(|e| e.context(format!("loading {}", path.display())))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
