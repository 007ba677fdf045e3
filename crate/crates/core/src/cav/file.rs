//! CAV bundle file (`ETCB`): a concatenation of records, each
//!
//! ```text
//! magic "ETCB" | version u16 = 1 | name len u32 | name bytes | layer u32
//! classifier u8 (0 signal, 1 svm) | run seed u64 | accuracy f64 | len u32 | len × f64
//! ```

use std::io::{Read, Write};

use super::{CavBundle, ClassifierKind};
use crate::binio::{Reader, Writer};
use crate::error::Result;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ETCB";
const VERSION: u16 = 1;

pub fn write_bundles<W: Write>(out: W, bundles: &[CavBundle]) -> Result<()> {
    let mut w = Writer::new(out);
    for b in bundles {
        w.bytes(MAGIC)?;
        w.u16(VERSION)?;
        w.string(&b.concept)?;
        w.len_u32(b.layer)?;
        w.u8(b.classifier.tag())?;
        w.u64(b.run_seed)?;
        w.f64(b.heldout_accuracy)?;
        w.len_u32(b.vector.len())?;
        w.f64s(b.vector.data())?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_bundles<R: Read>(input: R) -> Result<Vec<CavBundle>> {
    let mut r = Reader::new(input, "cav bundle");
    let mut out = Vec::new();
    while r.magic_or_eof(MAGIC)? {
        r.version(VERSION)?;
        let concept = r.string()?;
        let layer = r.u32()? as usize;
        let tag = r.u8()?;
        let classifier = ClassifierKind::from_tag(tag).ok_or_else(|| r.err(format!("unknown classifier tag {tag}")))?;
        let run_seed = r.u64()?;
        let heldout_accuracy = r.f64()?;
        let len = r.u32()? as usize;
        if len == 0 {
            return Err(r.err("empty vector"));
        }
        let vector = Tensor::vector(r.f64s(len)?);
        out.push(CavBundle {
            concept,
            layer,
            vector,
            classifier,
            heldout_accuracy,
            run_seed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(i: u64) -> CavBundle {
        CavBundle {
            concept: format!("concept-{i}"),
            layer: 3,
            vector: Tensor::vector(vec![0.25, -1.5, i as f64]),
            classifier: if i % 2 == 0 { ClassifierKind::Signal } else { ClassifierKind::Svm },
            heldout_accuracy: 0.875,
            run_seed: 0xDEAD_BEEF ^ i,
        }
    }

    #[test]
    fn round_trip() {
        let bundles: Vec<_> = (0..4).map(bundle).collect();
        let mut buf = Vec::new();
        write_bundles(&mut buf, &bundles).unwrap();
        assert_eq!(read_bundles(buf.as_slice()).unwrap(), bundles);
        assert!(read_bundles(&buf[..buf.len() - 2]).is_err());
        assert!(read_bundles(&[][..]).unwrap().is_empty());
    }
}
