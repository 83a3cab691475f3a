//! Binary activation (NAF1) and prediction (NPF1) dumps, plus heatmap
//! CSV and grayscale pixmap output.
//!
//! All integers are little-endian. Readers validate every declared length
//! against the bytes actually present before allocating, and reject
//! trailing bytes.

mod emit;
mod naf;
mod npf;

use thiserror::Error;

pub use emit::{emit_heatmap, heatmap_csv, heatmap_pgm, parse_heatmap_csv, read_heatmap_csv, write_heatmap_csv, write_heatmap_pgm};
pub use naf::{decode_activations, encode_activations, read_activation_dump, write_activation_dump, NAF_VERSION};
pub use npf::{decode_predictions, encode_predictions, read_prediction_dump, write_prediction_dump, PredictionDump};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated: {what} needs {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("duplicate layer name {0:?}")]
    DuplicateLayerName(String),

    #[error("duplicate model name {0:?}")]
    DuplicateModelName(String),

    #[error("{what} is not valid UTF-8")]
    InvalidUtf8 { what: &'static str },

    #[error("invalid {field} tag {value}")]
    InvalidTag { field: &'static str, value: u8 },

    #[error("label {label} at {location} is not below class count {class_count}")]
    LabelOutOfRange {
        location: String,
        label: u16,
        class_count: u32,
    },

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("non-finite value in layer {layer:?} at ({row}, {col})")]
    NonFinite { layer: String, row: usize, col: usize },

    #[error("CSV: {0}")]
    Csv(String),

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Bounds-checked little-endian cursor.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if n > self.remaining() {
            return Err(FormatError::Truncated {
                what,
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Fails unless `count · width` bytes remain, without consuming them.
    fn require(&self, count: usize, width: usize, what: &'static str) -> Result<usize, FormatError> {
        let needed = count.checked_mul(width).ok_or_else(|| FormatError::Truncated {
            what,
            offset: self.pos,
            needed: usize::MAX,
            available: self.remaining(),
        })?;
        if needed > self.remaining() {
            return Err(FormatError::Truncated {
                what,
                offset: self.pos,
                needed,
                available: self.remaining(),
            });
        }
        Ok(needed)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], FormatError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        self.array(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        self.array(what).map(u32::from_le_bytes)
    }

    fn magic(&mut self, expected: &'static str) -> Result<(), FormatError> {
        let found = self.take(4.min(self.remaining()), "magic")?;
        if found != expected.as_bytes() {
            return Err(FormatError::BadMagic {
                expected,
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    /// A `u16` length followed by that many UTF-8 bytes.
    fn name(&mut self, what: &'static str) -> Result<String, FormatError> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::InvalidUtf8 { what })
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

fn put_name(out: &mut Vec<u8>, name: &str, what: &str) -> Result<(), FormatError> {
    let len = u16::try_from(name.len())
        .map_err(|_| FormatError::InvalidHeader(format!("{what} {name:?} longer than 65535 bytes")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

fn count_u32(n: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(n).map_err(|_| FormatError::InvalidHeader(format!("{what} {n} exceeds u32")))
}
