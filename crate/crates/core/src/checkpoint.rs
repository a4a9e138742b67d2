//! Versioned binary parameter snapshots.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic     8 bytes  "TTECKPT\0"
//! version   u32
//! config    u32 length + UTF-8 key = value text
//! cells     u64      grid cell count the model was built for
//! count     u32      number of tensors
//! per tensor:
//!   name    u32 length + UTF-8
//!   sparse  u8       1 for row-sparse embedding tables
//!   ndim    u32, then ndim × u64 dimensions
//!   data    product(dims) × f64
//! ```
//!
//! Values are stored bit-for-bit, so a save/load round trip is exact.

use std::io::{Read, Write};

use crate::autograd::{ParamStore, Tensor};
use crate::binio::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"TTECKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Configuration text the parameters were trained under.
    pub config: String,
    pub cell_count: usize,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = LeWriter::new(out);
        w.bytes(MAGIC)?;
        w.u32(CHECKPOINT_VERSION)?;
        w.str(&self.config)?;
        w.u64(self.cell_count as u64)?;
        w.u32(self.params.len() as u32)?;
        for (_, p) in self.params.iter() {
            w.str(&p.name)?;
            w.u8(p.sparse_rows as u8)?;
            w.u32(p.value.shape().len() as u32)?;
            for &d in p.value.shape() {
                w.u64(d as u64)?;
            }
            for &v in p.value.data() {
                w.f64(v)?;
            }
        }
        w.finish()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = LeReader::new(input);
        if &r.array::<8>()? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint",
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config = r.str()?;
        let cell_count = r.u64()? as usize;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.str()?;
            let sparse = r.u8()? != 0;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.add(name, Tensor::new(shape, data)?, sparse);
        }
        r.expect_eof()?;
        Ok(Self {
            config,
            cell_count,
            params,
        })
    }

    pub fn from_model(model: &Model, config: String) -> Self {
        Self {
            config,
            cell_count: model.cell_count,
            params: model.params.clone(),
        }
    }

    /// Rebuilds a model for `cfg` and loads every tensor into it. Names and
    /// shapes must match exactly.
    pub fn into_model(self, cfg: ModelConfig) -> Result<Model> {
        let mut model = Model::new(cfg, self.cell_count, 0);
        if model.params.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (id, p) in self.params.iter() {
            let slot = model.params.get_mut(id);
            if slot.name != p.name || slot.value.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    p.name,
                    p.value.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value = p.value.clone();
        }
        Ok(model)
    }
}
