//! Model checkpoint container.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic        8 bytes  "UBR2SMDL"
//! version      u32      1
//! dropout      f64      classifier dropout rate
//! seed         u64      master seed of the run
//! lineage      u32 length + UTF-8 bytes (e.g. "pretrain" or "adapt/cycle-30")
//! layers       u32 count, then per layer:
//!   in_dim     u32
//!   out_dim    u32
//!   activation u8       0 = ReLU, 1 = identity
//!   weights    out_dim × in_dim f64, row major
//!   bias       out_dim f64
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::neuralcore::{Dense, Model};

const MAGIC: &[u8; 8] = b"UBR2SMDL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub lineage: String,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.model.dropout_rate().to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.lineage.len() as u32).to_le_bytes())?;
        w.write_all(self.lineage.as_bytes())?;
        let layers = self.model.layers();
        w.write_all(&(layers.len() as u32).to_le_bytes())?;
        for l in layers {
            w.write_all(&(l.in_dim() as u32).to_le_bytes())?;
            w.write_all(&(l.out_dim() as u32).to_le_bytes())?;
            w.write_all(&[Model::activation_tag(l.activation)])?;
            for v in l.weights.iter().chain(l.bias.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a ubr2s checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dropout = read_f64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let len = read_u32(&mut r)? as usize;
        let mut lineage = vec![0u8; len];
        r.read_exact(&mut lineage)?;
        let lineage =
            String::from_utf8(lineage).map_err(|_| Error::Format("lineage is not UTF-8".into()))?;
        let count = read_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let in_dim = read_u32(&mut r)? as usize;
            let out_dim = read_u32(&mut r)? as usize;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let activation = Model::activation_from_tag(tag[0])
                .ok_or_else(|| Error::Format(format!("unknown activation tag {}", tag[0])))?;
            let weights = (0..in_dim * out_dim)
                .map(|_| read_f64(&mut r))
                .collect::<Result<Vec<_>>>()?;
            let bias = (0..out_dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            layers.push(Dense {
                weights: Array2::from_shape_vec((out_dim, in_dim), weights)
                    .map_err(|e| Error::Format(e.to_string()))?,
                bias: Array1::from(bias),
                activation,
            });
        }
        Ok(Checkpoint {
            model: Model::from_layers(layers, dropout)?,
            seed,
            lineage,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::ModelSpec;
    use crate::seed::seeded_rng;

    #[test]
    fn roundtrip_preserves_parameters_exactly() {
        let model = Model::new(&ModelSpec::default(), &mut seeded_rng(2)).unwrap();
        let ckpt = Checkpoint {
            model,
            seed: 99,
            lineage: "pretrain".into(),
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.model.snapshot_id(), ckpt.model.snapshot_id());
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
