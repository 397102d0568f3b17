//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "MDRNNCKP"
//! version          u32      FORMAT_VERSION
//! num_dims         u32
//! layer_kind       u8       0 = tanh, 1 = lstm
//! input_width      u32
//! hidden           u32      tanh: hidden units, lstm: memory blocks
//! cells_per_block  u32      1 for tanh
//! output_width     u32
//! multidirectional u8
//! rng_seed         u64
//! epochs_completed u64
//! metadata_len     u32, then metadata_len bytes of UTF-8
//! param_count      u64, then param_count f64 values
//! ```
//!
//! Parameters follow the network's group order: directions ascending, each
//! as input, recurrent per axis ascending, peepholes (lstm only), biases;
//! then output weights and output biases.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::lstm::LstmLayerConfig;
use crate::network::{LayerConfig, Network, NetworkConfig, NetworkParams};
use crate::tanh::TanhLayerConfig;

pub const MAGIC: &[u8; 8] = b"MDRNNCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Enough to resume the seeded random streams of a training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub epochs_completed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub rng: RngState,
    /// Free-form text; `train` stores the run configuration here.
    pub metadata: String,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = self.network.config();
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(to_u32(cfg.num_dims())?)?;
        let (kind, hidden, cells) = match cfg.layer {
            LayerConfig::Tanh(c) => (0u8, c.hidden_width, 1),
            LayerConfig::Lstm(c) => (1u8, c.num_blocks, c.cells_per_block),
        };
        w.write_u8(kind)?;
        w.write_u32::<LittleEndian>(to_u32(cfg.input_width())?)?;
        w.write_u32::<LittleEndian>(to_u32(hidden)?)?;
        w.write_u32::<LittleEndian>(to_u32(cells)?)?;
        w.write_u32::<LittleEndian>(to_u32(cfg.output_width)?)?;
        w.write_u8(cfg.multidirectional as u8)?;
        w.write_u64::<LittleEndian>(self.rng.seed)?;
        w.write_u64::<LittleEndian>(self.rng.epochs_completed)?;
        w.write_u32::<LittleEndian>(to_u32(self.metadata.len())?)?;
        w.write_all(self.metadata.as_bytes())?;
        let flat = self.network.params().to_flat();
        w.write_u64::<LittleEndian>(flat.len() as u64)?;
        for v in flat {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let num_dims = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let kind = r.read_u8().map_err(truncated)?;
        let input_width = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let hidden = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let cells_per_block = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let output_width = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let multidirectional = match r.read_u8().map_err(truncated)? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad multidirectional flag {v}"))),
        };
        let layer = match kind {
            0 => LayerConfig::Tanh(TanhLayerConfig {
                num_dims,
                input_width,
                hidden_width: hidden,
            }),
            1 => LayerConfig::Lstm(LstmLayerConfig {
                num_dims,
                input_width,
                num_blocks: hidden,
                cells_per_block,
            }),
            v => return Err(Error::Format(format!("unknown layer kind {v}"))),
        };
        let config = NetworkConfig {
            layer,
            output_width,
            multidirectional,
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("stored config is invalid: {e}")))?;
        let rng = RngState {
            seed: r.read_u64::<LittleEndian>().map_err(truncated)?,
            epochs_completed: r.read_u64::<LittleEndian>().map_err(truncated)?,
        };
        let meta_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if r.len() < meta_len {
            return Err(truncated_err());
        }
        let metadata = std::str::from_utf8(&r[..meta_len])
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?
            .to_string();
        r = &r[meta_len..];

        let count = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let mut params = NetworkParams::zeros(&config);
        if count != params.param_count() {
            return Err(Error::Format(format!(
                "checkpoint stores {count} parameters, its config needs {}",
                params.param_count()
            )));
        }
        if r.len() != count * 8 {
            return Err(if r.len() < count * 8 {
                truncated_err()
            } else {
                Error::Format("trailing bytes after parameters".into())
            });
        }
        let mut flat = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut flat)
            .map_err(truncated)?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite parameter in checkpoint".into()));
        }
        params.assign_flat(&flat)?;
        Ok(Checkpoint {
            network: Network::from_params(config, params)?,
            rng,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the checkpoint field")))
}

fn truncated_err() -> Error {
    Error::Format("checkpoint is truncated".into())
}

fn truncated(_: std::io::Error) -> Error {
    truncated_err()
}
