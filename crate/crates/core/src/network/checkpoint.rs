//! Binary model checkpoints and activation dumps.
//!
//! Checkpoint (`ETCV`, all integers little-endian):
//!
//! ```text
//! magic "ETCV" | version u16 = 1 | classes u32 | d1 u32 | d2 u32 | layer count u32
//! per layer: kind tag u8 (0 dense, 1 relu, 2 average_pool, 3 flatten, 4 identity)
//!   dense:        out u32 | in u32 | out*in f64 weights (row-major) | out f64 bias
//!   average_pool: window u32
//! ```
//!
//! Activation dump (`ETAD`):
//!
//! ```text
//! magic "ETAD" | version u16 = 1 | layer u32 | samples u32 | m u32 | samples*m f64
//! ```

use std::io::{Read, Write};

use super::{LayerIndex, LayerSpec, NetworkSpec};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MODEL_MAGIC: &[u8; 4] = b"ETCV";
const DUMP_MAGIC: &[u8; 4] = b"ETAD";
const VERSION: u16 = 1;

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Input(format!("{n} does not fit in u32")))
}

impl NetworkSpec {
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer::new(out);
        w.bytes(MODEL_MAGIC)?;
        w.u16(VERSION)?;
        w.u32(u32_of(self.num_classes)?)?;
        w.u32(u32_of(self.input_dims.0)?)?;
        w.u32(u32_of(self.input_dims.1)?)?;
        w.u32(u32_of(self.layers.len())?)?;
        for layer in &self.layers {
            match layer {
                LayerSpec::Dense { weight, bias } => {
                    w.u8(0)?;
                    w.u32(u32_of(weight.shape()[0])?)?;
                    w.u32(u32_of(weight.shape()[1])?)?;
                    w.f64s(weight.data())?;
                    w.f64s(bias.data())?;
                }
                LayerSpec::Relu => w.u8(1)?,
                LayerSpec::AveragePool { window } => {
                    w.u8(2)?;
                    w.u32(u32_of(*window)?)?;
                }
                LayerSpec::Flatten => w.u8(3)?,
                LayerSpec::Identity => w.u8(4)?,
            }
        }
        w.finish()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input, "checkpoint");
        r.magic(MODEL_MAGIC)?;
        r.version(VERSION)?;
        let classes = r.u32()? as usize;
        let d1 = r.u32()? as usize;
        let d2 = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let layer = match r.u8()? {
                0 => {
                    let out = r.u32()? as usize;
                    let inp = r.u32()? as usize;
                    let weight = Tensor::matrix(out, inp, r.f64s(out * inp)?)
                        .map_err(|e| r.err(format!("dense weight: {e}")))?;
                    let bias = Tensor::new(vec![out], r.f64s(out)?).map_err(|e| r.err(format!("dense bias: {e}")))?;
                    LayerSpec::Dense { weight, bias }
                }
                1 => LayerSpec::Relu,
                2 => LayerSpec::AveragePool {
                    window: r.u32()? as usize,
                },
                3 => LayerSpec::Flatten,
                4 => LayerSpec::Identity,
                tag => return Err(r.err(format!("unknown layer tag {tag}"))),
            };
            layers.push(layer);
        }
        r.expect_eof()?;
        NetworkSpec::new(layers, (d1, d2), classes).map_err(|e| r.err(e.to_string()))
    }
}

/// Activations of many samples at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub layer: LayerIndex,
    pub dim: usize,
    pub rows: Vec<Tensor>,
}

pub fn write_activation_dump<W: Write>(out: W, dump: &ActivationDump) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(DUMP_MAGIC)?;
    w.u16(VERSION)?;
    w.u32(u32_of(dump.layer)?)?;
    w.u32(u32_of(dump.rows.len())?)?;
    w.u32(u32_of(dump.dim)?)?;
    for row in &dump.rows {
        if row.len() != dump.dim {
            return Err(Error::dim("activation dump", row.shape(), &[dump.dim]));
        }
        w.f64s(row.data())?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_activation_dump<R: Read>(input: R) -> Result<ActivationDump> {
    let mut r = Reader::new(input, "activation dump");
    r.magic(DUMP_MAGIC)?;
    r.version(VERSION)?;
    let layer = r.u32()? as usize;
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(r.err("zero activation width"));
    }
    let rows = (0..n)
        .map(|_| r.f64s(dim).map(Tensor::vector))
        .collect::<Result<Vec<_>>>()?;
    r.expect_eof()?;
    Ok(ActivationDump { layer, dim, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::MlpArch;

    fn net() -> NetworkSpec {
        NetworkSpec::mlp(
            &MlpArch {
                input_dims: (2, 3),
                hidden: vec![4, 4],
                pool_window: 2,
                dropout: true,
                num_classes: 3,
            },
            12,
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let n = net();
        let mut buf = Vec::new();
        n.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"ETCV");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(NetworkSpec::read_checkpoint(buf.as_slice()).unwrap(), n);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let mut buf = Vec::new();
        net().write_checkpoint(&mut buf).unwrap();
        assert!(NetworkSpec::read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(NetworkSpec::read_checkpoint(bad.as_slice()).is_err());
        let mut extra = buf;
        extra.push(0);
        assert!(NetworkSpec::read_checkpoint(extra.as_slice()).is_err());
    }

    #[test]
    fn activation_dump_round_trip() {
        let n = net();
        let x = Tensor::vector(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        let rows = vec![n.forward_to(&x, 3).unwrap(), n.forward_to(&x.scale(2.0), 3).unwrap()];
        let dump = ActivationDump { layer: 3, dim: 4, rows };
        let mut buf = Vec::new();
        write_activation_dump(&mut buf, &dump).unwrap();
        assert_eq!(read_activation_dump(buf.as_slice()).unwrap(), dump);
    }
}
