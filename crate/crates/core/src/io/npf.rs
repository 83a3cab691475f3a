use std::collections::HashSet;
use std::path::Path;

use super::{count_u32, put_name, FormatError, Reader};
use crate::error::Result;
use crate::predictions::PredictionEnsemble;

const MAGIC: &str = "NPF1";

/// Contents of a prediction dump: one row of predicted labels per model
/// over a shared, ordered example set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionDump {
    pub class_count: u32,
    pub true_labels: Vec<u16>,
    pub model_names: Vec<String>,
    pub predicted: Vec<Vec<u16>>,
}

impl PredictionDump {
    pub fn example_count(&self) -> usize {
        self.true_labels.len()
    }

    pub fn into_ensemble(self, group_name: impl Into<String>) -> Result<PredictionEnsemble> {
        let widen = |v: Vec<u16>| v.into_iter().map(usize::from).collect::<Vec<_>>();
        PredictionEnsemble::new(
            group_name,
            self.model_names,
            self.predicted.into_iter().map(widen).collect(),
            widen(self.true_labels),
            self.class_count as usize,
        )
    }

    pub fn from_ensemble(e: &PredictionEnsemble) -> std::result::Result<Self, FormatError> {
        let narrow = |v: &[usize]| {
            v.iter()
                .map(|&l| u16::try_from(l).map_err(|_| FormatError::InvalidHeader(format!("label {l} exceeds u16"))))
                .collect::<std::result::Result<Vec<_>, _>>()
        };
        Ok(Self {
            class_count: count_u32(e.class_count(), "class count")?,
            true_labels: narrow(e.true_labels())?,
            model_names: e.model_names.clone(),
            predicted: (0..e.model_count()).map(|m| narrow(e.predicted(m))).collect::<std::result::Result<_, _>>()?,
        })
    }

    fn validate(&self) -> std::result::Result<(), FormatError> {
        if self.model_names.is_empty() {
            return Err(FormatError::InvalidHeader("model count is zero".into()));
        }
        if self.model_names.len() != self.predicted.len() {
            return Err(FormatError::InvalidHeader(format!(
                "{} model names for {} prediction rows",
                self.model_names.len(),
                self.predicted.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.model_names {
            if !seen.insert(name) {
                return Err(FormatError::DuplicateModelName(name.clone()));
            }
        }
        let check = |labels: &[u16], what: &str| {
            match labels.iter().position(|&l| u32::from(l) >= self.class_count) {
                Some(i) => Err(FormatError::LabelOutOfRange {
                    location: format!("{what}[{i}]"),
                    label: labels[i],
                    class_count: self.class_count,
                }),
                None => Ok(()),
            }
        };
        check(&self.true_labels, "true labels")?;
        for (name, row) in self.model_names.iter().zip(&self.predicted) {
            if row.len() != self.true_labels.len() {
                return Err(FormatError::InvalidHeader(format!(
                    "model {name:?} has {} predictions for {} examples",
                    row.len(),
                    self.true_labels.len()
                )));
            }
            check(row, &format!("model {name:?}"))?;
        }
        Ok(())
    }
}

pub fn encode_predictions(dump: &PredictionDump) -> std::result::Result<Vec<u8>, FormatError> {
    dump.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(&count_u32(dump.model_names.len(), "model count")?.to_le_bytes());
    out.extend_from_slice(&count_u32(dump.example_count(), "example count")?.to_le_bytes());
    out.extend_from_slice(&dump.class_count.to_le_bytes());
    dump.true_labels.iter().for_each(|l| out.extend_from_slice(&l.to_le_bytes()));
    for (name, row) in dump.model_names.iter().zip(&dump.predicted) {
        put_name(&mut out, name, "model name")?;
        row.iter().for_each(|l| out.extend_from_slice(&l.to_le_bytes()));
    }
    Ok(out)
}

fn labels(r: &mut Reader<'_>, n: usize, what: &'static str) -> std::result::Result<Vec<u16>, FormatError> {
    let len = r.require(n, 2, what)?;
    Ok(r.take(len, what)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

pub fn decode_predictions(bytes: &[u8]) -> std::result::Result<PredictionDump, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let models = r.u32("model count")?;
    let n = r.u32("example count")? as usize;
    let class_count = r.u32("class count")?;
    if models == 0 {
        return Err(FormatError::InvalidHeader("model count is zero".into()));
    }
    let true_labels = labels(&mut r, n, "true labels")?;
    let mut model_names = Vec::new();
    let mut predicted = Vec::new();
    for _ in 0..models {
        model_names.push(r.name("model name")?);
        predicted.push(labels(&mut r, n, "predicted labels")?);
    }
    r.finish()?;
    let dump = PredictionDump {
        class_count,
        true_labels,
        model_names,
        predicted,
    };
    dump.validate()?;
    Ok(dump)
}

pub fn write_prediction_dump(dump: &PredictionDump, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_predictions(dump)?;
    std::fs::write(path, bytes).map_err(FormatError::from)?;
    Ok(())
}

pub fn read_prediction_dump(path: impl AsRef<Path>) -> Result<PredictionDump> {
    let bytes = std::fs::read(path).map_err(FormatError::from)?;
    Ok(decode_predictions(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PredictionDump {
        PredictionDump {
            class_count: 3,
            true_labels: vec![0, 1, 2, 1],
            model_names: vec!["r1".into(), "r2".into()],
            predicted: vec![vec![0, 1, 1, 1], vec![2, 1, 2, 0]],
        }
    }

    #[test]
    fn round_trip() {
        let bytes = encode_predictions(&sample()).unwrap();
        assert_eq!(bytes.len(), 16 + 8 + 2 * (2 + 2 + 8));
        assert_eq!(decode_predictions(&bytes).unwrap(), sample());
    }

    #[test]
    fn ensemble_conversion() {
        let e = sample().into_ensemble("g").unwrap();
        assert_eq!(e.model_count(), 2);
        assert_eq!(e.predicted(1), &[2, 1, 2, 0]);
        assert_eq!(PredictionDump::from_ensemble(&e).unwrap(), sample());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_predictions(&sample()).unwrap();
        for cut in 0..bytes.len() {
            let err = decode_predictions(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, FormatError::Truncated { .. } | FormatError::BadMagic { .. }), "{cut}: {err}");
        }
    }

    #[test]
    fn corruptions() {
        let bytes = encode_predictions(&sample()).unwrap();
        let patch = |at: usize, val: &[u8]| {
            let mut b = bytes.clone();
            b[at..at + val.len()].copy_from_slice(val);
            decode_predictions(&b).unwrap_err()
        };
        assert!(matches!(patch(0, b"NAF1"), FormatError::BadMagic { .. }));
        assert!(matches!(patch(4, &0u32.to_le_bytes()), FormatError::InvalidHeader(_)));
        assert!(matches!(patch(4, &3u32.to_le_bytes()), FormatError::Truncated { .. }));
        assert!(matches!(patch(8, &u32::MAX.to_le_bytes()), FormatError::Truncated { .. }));
        assert!(matches!(patch(12, &2u32.to_le_bytes()), FormatError::LabelOutOfRange { label: 2, .. }));
        assert!(matches!(patch(16, &9u16.to_le_bytes()), FormatError::LabelOutOfRange { label: 9, .. }));
        // Second model name "r2" at 38..40.
        assert!(matches!(patch(38, b"r1"), FormatError::DuplicateModelName(n) if n == "r1"));
        assert!(matches!(patch(26, &[0xc3]), FormatError::InvalidUtf8 { .. }));
    }
}
