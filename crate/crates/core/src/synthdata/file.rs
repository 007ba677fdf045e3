//! Dataset file (`ETDS`, little-endian):
//!
//! ```text
//! magic "ETDS" | version u16 = 1 | n u64 | d1 u32 | d2 u32 | classes u32 | concepts u32
//! concept names: (len u32, utf-8 bytes) × concepts
//! features: n × d1·d2 f64
//! labels:   n × u16
//! splits:   n × u8 (0 train, 1 validation, 2 test)
//! annotations: per sample ceil(concepts / 8) bytes, bit c of byte c/8 set when present
//! ```

use std::io::{Read, Write};

use super::{Dataset, Split};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ETDS";
const VERSION: u16 = 1;

pub fn write_dataset<W: Write>(out: W, ds: &Dataset) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(MAGIC)?;
    w.u16(VERSION)?;
    w.u64(ds.len() as u64)?;
    w.len_u32(ds.input_dims.0)?;
    w.len_u32(ds.input_dims.1)?;
    w.len_u32(ds.num_classes)?;
    w.len_u32(ds.concept_names.len())?;
    for name in &ds.concept_names {
        w.string(name)?;
    }
    for x in &ds.features {
        w.f64s(x.data())?;
    }
    for &y in &ds.labels {
        let y = u16::try_from(y).map_err(|_| Error::Input(format!("label {y} exceeds u16")))?;
        w.u16(y)?;
    }
    for s in &ds.splits {
        w.u8(s.tag())?;
    }
    let width = ds.concept_names.len().div_ceil(8);
    for present in &ds.annotations {
        let mut bits = vec![0u8; width];
        for (c, &on) in present.iter().enumerate() {
            if on {
                bits[c / 8] |= 1 << (c % 8);
            }
        }
        w.bytes(&bits)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = Reader::new(input, "dataset");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = usize::try_from(r.u64()?).map_err(|_| r.err("sample count overflows"))?;
    let d1 = r.u32()? as usize;
    let d2 = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let concepts = r.u32()? as usize;
    if d1 == 0 || d2 == 0 || num_classes == 0 {
        return Err(r.err("zero extent in header"));
    }
    let concept_names = (0..concepts).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let mut features = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        features.push(Tensor::new(vec![d1, d2], r.f64s(d1 * d2)?)?);
    }
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let y = r.u16()? as usize;
        if y >= num_classes {
            return Err(r.err(format!("label {y} outside {num_classes} classes")));
        }
        labels.push(y);
    }
    let mut splits = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let tag = r.u8()?;
        splits.push(Split::from_tag(tag).ok_or_else(|| r.err(format!("unknown split tag {tag}")))?);
    }
    let width = concepts.div_ceil(8);
    let mut annotations = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let bits = r.bytes(width)?;
        annotations.push((0..concepts).map(|c| bits[c / 8] & (1 << (c % 8)) != 0).collect());
    }
    r.expect_eof()?;
    Ok(Dataset {
        input_dims: (d1, d2),
        num_classes,
        concept_names,
        features,
        labels,
        splits,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{generate, ConceptGenSpec, DatasetSpec};
    use super::*;

    fn dataset() -> Dataset {
        let concepts = (0..9)
            .map(|i| ConceptGenSpec {
                name: format!("c{i}"),
                signal_dims: vec![4 + i],
                signal_strength: 1.0,
                presence_rate: 0.3,
                confound_with_class: None,
            })
            .collect();
        let spec = DatasetSpec {
            input_dims: (2, 8),
            num_classes: 3,
            class_dims: vec![0, 1, 2, 3],
            class_strength: 1.0,
            noise_sigma: 0.5,
            concepts,
            split: (0.7, 0.15),
        };
        generate(&spec, 120, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = dataset();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        assert_eq!(&buf[..4], b"ETDS");
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_dataset(&mut a, &dataset()).unwrap();
        write_dataset(&mut b, &dataset()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_is_detected() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &dataset()).unwrap();
        assert!(matches!(read_dataset(&buf[..buf.len() - 1]), Err(Error::Format { .. })));
    }
}
