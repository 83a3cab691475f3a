use std::collections::HashSet;
use std::path::Path;

use super::{count_u32, put_name, FormatError, Reader};
use crate::error::Result;
use crate::layers::{DType, Layer, LayerSet, Position};
use crate::linalg::Matrix;

const MAGIC: &str = "NAF1";
pub const NAF_VERSION: u16 = 1;

/// Serializes a layer set. `F32` layers are rounded to single precision.
pub fn encode_activations(layers: &LayerSet) -> std::result::Result<Vec<u8>, FormatError> {
    let m = layers.example_count();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(&NAF_VERSION.to_le_bytes());
    out.extend_from_slice(&count_u32(m, "example count")?.to_le_bytes());
    out.extend_from_slice(&count_u32(layers.len(), "layer count")?.to_le_bytes());
    for layer in layers {
        put_name(&mut out, &layer.name, "layer name")?;
        out.push(layer.stage);
        out.push(layer.position.tag());
        out.push(layer.dtype.tag());
        let x = &layer.activations;
        out.extend_from_slice(&count_u32(x.cols(), "feature count")?.to_le_bytes());
        out.reserve(x.as_slice().len() * layer.dtype.width());
        for (k, &v) in x.as_slice().iter().enumerate() {
            match layer.dtype {
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                DType::F32 => {
                    let narrow = v as f32;
                    if !narrow.is_finite() {
                        return Err(FormatError::NonFinite {
                            layer: layer.name.clone(),
                            row: k / x.cols(),
                            col: k % x.cols(),
                        });
                    }
                    out.extend_from_slice(&narrow.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_activations(bytes: &[u8]) -> std::result::Result<LayerSet, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16("format version")?;
    if version != NAF_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let m = r.u32("example count")? as usize;
    let count = r.u32("layer count")?;
    if m == 0 {
        return Err(FormatError::InvalidHeader("example count is zero".into()));
    }
    if count == 0 {
        return Err(FormatError::InvalidHeader("layer count is zero".into()));
    }

    let mut seen = HashSet::new();
    let mut layers = Vec::new();
    for _ in 0..count {
        let name = r.name("layer name")?;
        if !seen.insert(name.clone()) {
            return Err(FormatError::DuplicateLayerName(name));
        }
        let stage = r.u8("stage tag")?;
        let pos_tag = r.u8("position tag")?;
        let position = Position::from_tag(pos_tag).ok_or(FormatError::InvalidTag {
            field: "position",
            value: pos_tag,
        })?;
        let dtype_tag = r.u8("dtype tag")?;
        let dtype = DType::from_tag(dtype_tag).ok_or(FormatError::InvalidTag {
            field: "dtype",
            value: dtype_tag,
        })?;
        let p = r.u32("feature count")? as usize;
        if p == 0 {
            return Err(FormatError::InvalidHeader(format!("layer {name:?} has zero features")));
        }
        let cells = m.checked_mul(p).ok_or_else(|| {
            FormatError::InvalidHeader(format!("layer {name:?} size {m}×{p} overflows"))
        })?;
        let len = r.require(cells, dtype.width(), "layer values")?;
        let raw = r.take(len, "layer values")?;
        let data: Vec<f64> = match dtype {
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect(),
        };
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite {
                layer: name,
                row: k / p,
                col: k % p,
            });
        }
        let activations = Matrix::new(m, p, data).map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
        layers.push(
            Layer::new(name, activations)
                .with_stage(stage)
                .with_position(position)
                .with_dtype(dtype),
        );
    }
    r.finish()?;
    LayerSet::new(layers).map_err(|e| FormatError::InvalidHeader(e.to_string()))
}

pub fn write_activation_dump(layers: &LayerSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_activations(layers)?;
    std::fs::write(path, bytes).map_err(FormatError::from)?;
    Ok(())
}

pub fn read_activation_dump(path: impl AsRef<Path>) -> Result<LayerSet> {
    let bytes = std::fs::read(path).map_err(FormatError::from)?;
    Ok(decode_activations(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn sample() -> LayerSet {
        LayerSet::new(vec![
            Layer::new("conv1", synth::gaussian_matrix(5, 3, 1))
                .with_stage(0)
                .with_position(Position::PreResidual),
            Layer::new("block.2", synth::gaussian_matrix(5, 2, 2))
                .with_stage(1)
                .with_position(Position::PostResidual)
                .with_dtype(DType::F32),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_f64_bit_identical() {
        let set = sample();
        let back = decode_activations(&encode_activations(&set).unwrap()).unwrap();
        let a = &back.get(0);
        assert_eq!(a.name, "conv1");
        assert_eq!((a.stage, a.position, a.dtype), (0, Position::PreResidual, DType::F64));
        for (x, y) in a.activations.as_slice().iter().zip(set.get(0).activations.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn round_trip_f32_is_stable() {
        let once = decode_activations(&encode_activations(&sample()).unwrap()).unwrap();
        let l = once.get(1);
        assert_eq!(l.dtype, DType::F32);
        for v in l.activations.as_slice() {
            assert_eq!(*v, (*v as f32) as f64);
        }
        let bytes = encode_activations(&once).unwrap();
        let twice = decode_activations(&bytes).unwrap();
        assert_eq!(once, twice);
        assert_eq!(bytes, encode_activations(&twice).unwrap());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_activations(&sample()).unwrap();
        for cut in 0..bytes.len() {
            let err = decode_activations(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, FormatError::Truncated { .. } | FormatError::BadMagic { .. }),
                "cut {cut}: {err}"
            );
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_activations(&long), Err(FormatError::TrailingBytes(1))));
    }

    #[test]
    fn header_corruptions() {
        let bytes = encode_activations(&sample()).unwrap();
        let patch = |at: usize, val: &[u8]| {
            let mut b = bytes.clone();
            b[at..at + val.len()].copy_from_slice(val);
            decode_activations(&b).unwrap_err()
        };
        assert!(matches!(patch(0, b"NAF2"), FormatError::BadMagic { .. }));
        assert!(matches!(patch(4, &2u16.to_le_bytes()), FormatError::UnsupportedVersion(2)));
        assert!(matches!(patch(6, &0u32.to_le_bytes()), FormatError::InvalidHeader(_)));
        assert!(matches!(patch(10, &0u32.to_le_bytes()), FormatError::InvalidHeader(_)));
        assert!(matches!(patch(10, &u32::MAX.to_le_bytes()), FormatError::Truncated { .. }));
        assert!(matches!(patch(6, &u32::MAX.to_le_bytes()), FormatError::Truncated { .. }));
        // Layer 0 header: name len at 14, name 16..21, stage 21, position 22, dtype 23.
        assert!(matches!(patch(22, &[3]), FormatError::InvalidTag { field: "position", value: 3 }));
        assert!(matches!(patch(23, &[7]), FormatError::InvalidTag { field: "dtype", value: 7 }));
        assert!(matches!(patch(16, &[0xff]), FormatError::InvalidUtf8 { .. }));
        assert!(matches!(patch(24, &0u32.to_le_bytes()), FormatError::InvalidHeader(_)));
        assert!(matches!(patch(28, &f64::NAN.to_le_bytes()), FormatError::NonFinite { row: 0, col: 0, .. }));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut bytes = encode_activations(&sample()).unwrap();
        let second = bytes.windows(7).position(|w| w == b"block.2").unwrap();
        bytes[second..second + 7].copy_from_slice(b"conv1\0\0");
        // Shrink the length prefix to 5 and drop the two padding bytes.
        bytes[second - 2..second].copy_from_slice(&5u16.to_le_bytes());
        bytes.drain(second + 5..second + 7);
        assert!(matches!(decode_activations(&bytes), Err(FormatError::DuplicateLayerName(n)) if n == "conv1"));
    }

    #[test]
    fn f32_overflow_rejected_on_write() {
        let big = Matrix::new(1, 1, vec![1e300]).unwrap();
        let set = LayerSet::new(vec![Layer::new("x", big).with_dtype(DType::F32)]).unwrap();
        assert!(matches!(encode_activations(&set), Err(FormatError::NonFinite { .. })));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.naf");
        write_activation_dump(&sample(), &path).unwrap();
        assert_eq!(read_activation_dump(&path).unwrap().names(), vec!["conv1", "block.2"]);
        assert!(read_activation_dump(dir.path().join("missing.naf")).is_err());
    }
}
