//! Versioned binary checkpoints.
//!
//! Layout: the magic string `GADSCKPT`, a little-endian `u32` format
//! version, the model kind, the configuration snapshot as JSON, the best
//! validation MAE and its epoch, then named tensor blocks (name, dims,
//! little-endian `f64` data). Round trips are bit-exact.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::HybridConfig;
use crate::model::GadsConfig;
use crate::preprocess::GroupSpec;
use crate::tensor::Tensor;
use crate::training::{ModelKind, ModelParams, TrainSetup};

pub const MAGIC: &[u8; 8] = b"GADSCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the model that was trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub gads: GadsConfig,
    pub hybrid: HybridConfig,
    pub groups: GroupSpec,
}

impl From<&TrainSetup> for ConfigSnapshot {
    fn from(setup: &TrainSetup) -> Self {
        Self {
            gads: setup.gads.clone(),
            hybrid: setup.hybrid.clone(),
            groups: setup.groups.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ConfigSnapshot,
    pub best_val_mae: f64,
    pub epoch: usize,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Rebuilds empty parameters from the snapshot, ready to be filled.
    fn blank_params(kind: ModelKind, config: &ConfigSnapshot) -> Result<ModelParams> {
        let setup = TrainSetup {
            gads: config.gads.clone(),
            hybrid: config.hybrid.clone(),
            groups: config.groups.clone(),
            train: Default::default(),
        };
        ModelParams::init(kind, &setup, 0)
    }
}

fn w_u32(out: &mut impl Write, v: u32) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn w_u64(out: &mut impl Write, v: u64) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn r_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn r_u64(input: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(u64::from_le_bytes(buf))
}

fn r_f64(input: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(r_u64(input)?))
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Persistence("checkpoint file is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.write_all(MAGIC)?;
    w_u32(&mut out, FORMAT_VERSION)?;
    out.write_all(&[match ckpt.kind {
        ModelKind::Vanilla => 0u8,
        ModelKind::Hybrid => 1u8,
    }])?;
    let config = serde_json::to_vec(&ckpt.config)?;
    w_u32(&mut out, config.len() as u32)?;
    out.write_all(&config)?;
    w_u64(&mut out, ckpt.best_val_mae.to_bits())?;
    w_u64(&mut out, ckpt.epoch as u64)?;

    let tensors = ckpt.params.named_tensors();
    w_u32(&mut out, tensors.len() as u32)?;
    for (name, t) in tensors {
        w_u32(&mut out, name.len() as u32)?;
        out.write_all(name.as_bytes())?;
        w_u32(&mut out, t.shape().len() as u32)?;
        for &d in t.shape() {
            w_u64(&mut out, d as u64)?;
        }
        for &v in t.data() {
            w_u64(&mut out, v.to_bits())?;
        }
    }
    fs::write(path, out).map_err(|e| {
        Error::Persistence(format!("cannot write checkpoint {}: {e}", path.display()))
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut input = bytes.as_slice();

    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Persistence(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut kind_byte = [0u8; 1];
    input.read_exact(&mut kind_byte).map_err(truncated)?;
    let kind = match kind_byte[0] {
        0 => ModelKind::Vanilla,
        1 => ModelKind::Hybrid,
        k => return Err(Error::Persistence(format!("unknown model kind byte {k}"))),
    };
    let config_len = r_u32(&mut input)? as usize;
    if input.len() < config_len {
        return Err(Error::Persistence("checkpoint file is truncated".into()));
    }
    let config: ConfigSnapshot = serde_json::from_slice(&input[..config_len])
        .map_err(|e| Error::Persistence(format!("bad config block: {e}")))?;
    input = &input[config_len..];
    let best_val_mae = r_f64(&mut input)?;
    let epoch = r_u64(&mut input)? as usize;

    let count = r_u32(&mut input)? as usize;
    let mut params = Checkpoint::blank_params(kind, &config)?;
    let mut named = params.named_tensors_mut();
    if count != named.len() {
        return Err(Error::Persistence(format!(
            "checkpoint holds {count} tensors, model expects {}",
            named.len()
        )));
    }
    for (expect_name, slot) in named.iter_mut() {
        let name_len = r_u32(&mut input)? as usize;
        if input.len() < name_len {
            return Err(Error::Persistence("checkpoint file is truncated".into()));
        }
        let name = std::str::from_utf8(&input[..name_len])
            .map_err(|_| Error::Persistence("tensor name is not UTF-8".into()))?
            .to_string();
        input = &input[name_len..];
        if &name != expect_name {
            return Err(Error::Persistence(format!(
                "tensor order mismatch: found '{name}', expected '{expect_name}'"
            )));
        }
        let ndim = r_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r_u64(&mut input)? as usize);
        }
        if shape != slot.shape() {
            return Err(Error::Persistence(format!(
                "tensor '{name}' has shape {:?}, model expects {:?}",
                shape,
                slot.shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r_f64(&mut input)?);
        }
        **slot = Tensor::from_vec(&shape, data)?;
    }
    drop(named);

    Ok(Checkpoint {
        kind,
        config,
        best_val_mae,
        epoch,
        params,
    })
}
