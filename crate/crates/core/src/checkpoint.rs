//! Binary checkpoint format.
//!
//! Layout: the magic string `RBCKPT1`, a model-kind byte (0 latent,
//! 1 multi-head), three mode-flag bytes (bag, conditioned, identity), the
//! head count, then `w`, `d`, `phi`, trunk depth and the trunk layer
//! output dims as little-endian u32, followed by every parameter array in
//! canonical block order as little-endian IEEE-754 f64 bit patterns.
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::baselines::{AnyModel, MultiheadParams};
use crate::error::{Error, Result};
use crate::model::{Dense, ModelDims, ModelParams, PresenceHead, RelevanceHead, Trunk};

const MAGIC: &[u8; 7] = b"RBCKPT1";

const KIND_LATENT: u8 = 0;
const KIND_MULTIHEAD: u8 = 1;

pub fn save_checkpoint(model: &AnyModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    out.write_all(MAGIC).map_err(io_err)?;
    let (kind, bag, conditioned, identity, heads) = match model {
        AnyModel::Latent(p) => (
            KIND_LATENT,
            p.bag_mode,
            p.relevance_conditioned,
            p.identity_relevance,
            1u32,
        ),
        AnyModel::Multihead(p) => (KIND_MULTIHEAD, p.bag_mode, false, false, p.heads.len() as u32),
    };
    out.write_all(&[kind, bag as u8, conditioned as u8, identity as u8])
        .map_err(io_err)?;
    out.write_all(&heads.to_le_bytes()).map_err(io_err)?;

    let (concepts, input_dim, phi_dim, trunk) = match model {
        AnyModel::Latent(p) => (p.concepts(), p.input_dim(), p.phi_dim(), &p.trunk),
        AnyModel::Multihead(p) => (p.concepts(), p.input_dim(), p.phi_dim(), &p.trunk),
    };
    for dim in [concepts, input_dim, phi_dim, trunk.layers.len()] {
        out.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    }
    for layer in &trunk.layers {
        out.write_all(&(layer.out_dim() as u32).to_le_bytes())
            .map_err(io_err)?;
    }
    for (_, block) in model.blocks() {
        for &v in block {
            out.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let mut cursor = Cursor::new(&bytes);

    let magic = cursor.take(7)?;
    if magic != MAGIC {
        if &magic[..6] == b"RBCKPT" {
            return Err(Error::CheckpointVersion(format!(
                "unsupported checkpoint version tag {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        return Err(Error::CorruptFile("not a checkpoint file".into()));
    }

    let kind = cursor.byte()?;
    let bag = cursor.flag()?;
    let conditioned = cursor.flag()?;
    let identity = cursor.flag()?;
    let heads = cursor.u32()? as usize;
    let concepts = cursor.u32()? as usize;
    let input_dim = cursor.u32()? as usize;
    let phi_dim = cursor.u32()? as usize;
    let depth = cursor.u32()? as usize;
    if depth > 1024 {
        return Err(Error::CorruptFile(format!("implausible trunk depth {depth}")));
    }
    let mut layer_dims = Vec::with_capacity(depth);
    for _ in 0..depth {
        layer_dims.push(cursor.u32()? as usize);
    }
    let declared_phi = layer_dims.last().copied().unwrap_or(input_dim);
    if declared_phi != phi_dim {
        return Err(Error::Dimension(format!(
            "header phi dim {phi_dim} does not match trunk output {declared_phi}"
        )));
    }
    let dims = ModelDims {
        concepts,
        input_dim,
        trunk_layers: layer_dims.clone(),
    };
    dims.validate().map_err(|e| Error::Dimension(e.to_string()))?;

    let trunk = {
        let mut layers = Vec::with_capacity(depth);
        let mut in_dim = input_dim;
        for &out_dim in &layer_dims {
            let weight = cursor.matrix(out_dim, in_dim)?;
            let bias = cursor.f64s(out_dim)?;
            layers.push(Dense { weight, bias });
            in_dim = out_dim;
        }
        Trunk { layers }
    };

    let model = match kind {
        KIND_LATENT => {
            if heads != 1 {
                return Err(Error::CorruptFile(format!(
                    "latent checkpoint declares {heads} heads"
                )));
            }
            let presence = PresenceHead {
                weight: cursor.matrix(concepts, phi_dim)?,
                bias: cursor.f64s(concepts)?,
            };
            let relevance = RelevanceHead {
                weight: cursor.matrix(concepts * 4, phi_dim)?,
                bias: cursor.f64s(concepts * 4)?,
            };
            AnyModel::Latent(ModelParams {
                trunk,
                presence,
                relevance,
                bag_mode: bag,
                relevance_conditioned: conditioned,
                identity_relevance: identity,
            })
        }
        KIND_MULTIHEAD => {
            if heads < 2 {
                return Err(Error::CorruptFile(format!(
                    "multihead checkpoint declares {heads} heads"
                )));
            }
            let mut head_params = Vec::with_capacity(heads);
            for _ in 0..heads {
                head_params.push(PresenceHead {
                    weight: cursor.matrix(concepts, phi_dim)?,
                    bias: cursor.f64s(concepts)?,
                });
            }
            AnyModel::Multihead(MultiheadParams {
                trunk,
                heads: head_params,
                bag_mode: bag,
            })
        }
        other => {
            return Err(Error::CorruptFile(format!("unknown model kind {other}")));
        }
    };

    if !cursor.at_end() {
        return Err(Error::CorruptFile(format!(
            "{} trailing bytes after parameter arrays",
            cursor.remaining()
        )));
    }
    model.validate()?;
    Ok(model)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptFile(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool> {
        match self.byte()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::CorruptFile(format!("invalid flag byte {other}"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<crate::linalg::Matrix> {
        let data = self.f64s(rows * cols)?;
        let mut m = crate::linalg::Matrix::zeros(rows, cols);
        m.as_mut_slice().copy_from_slice(&data);
        Ok(m)
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
