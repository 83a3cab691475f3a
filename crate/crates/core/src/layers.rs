//! Per-layer activation matrices and ordered layer collections.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Where a capture point sits relative to a residual connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Position {
    PreResidual,
    PostResidual,
    Other,
}

impl Position {
    pub fn tag(self) -> u8 {
        match self {
            Position::PreResidual => 0,
            Position::PostResidual => 1,
            Position::Other => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Position::PreResidual),
            1 => Some(Position::PostResidual),
            2 => Some(Position::Other),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Position::PreResidual => "preResidual",
            Position::PostResidual => "postResidual",
            Position::Other => "other",
        }
    }
}

/// Storage precision of a layer in a dump. Computation is always `f64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// One layer's m×p response matrix plus capture metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub stage: u8,
    pub position: Position,
    pub dtype: DType,
    pub activations: Matrix,
}

impl Layer {
    /// A layer with default metadata (stage 0, `Other`, stored as f64).
    pub fn new(name: impl Into<String>, activations: Matrix) -> Self {
        Self {
            name: name.into(),
            stage: 0,
            position: Position::Other,
            dtype: DType::F64,
            activations,
        }
    }

    pub fn with_position(mut self, position: Position) -> Self {
        self.position = position;
        self
    }

    pub fn with_stage(mut self, stage: u8) -> Self {
        self.stage = stage;
        self
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }
}

/// Ordered (input to output) layers that all describe the same examples in
/// the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSet {
    layers: Vec<Layer>,
}

impl LayerSet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("layer set is empty".into()))?;
        let m = first.activations.rows();
        let mut seen = HashSet::new();
        for layer in &layers {
            if layer.activations.rows() != m {
                return Err(Error::DimensionMismatch(format!(
                    "layer {:?} has {} examples, expected {m}",
                    layer.name,
                    layer.activations.rows()
                )));
            }
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate layer name {:?}",
                    layer.name
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn example_count(&self) -> usize {
        self.layers[0].activations.rows()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn get(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Layer> {
        self.layers.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn matrices(&self) -> Vec<&Matrix> {
        self.layers.iter().map(|l| &l.activations).collect()
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// Applies `f` to every activation matrix, keeping metadata.
    pub fn try_map(&self, f: impl Fn(&Matrix) -> Result<Matrix>) -> Result<LayerSet> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    activations: f(&l.activations)?,
                    ..l.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LayerSet::new(layers)
    }
}

impl<'a> IntoIterator for &'a LayerSet {
    type Item = &'a Layer;
    type IntoIter = std::slice::Iter<'a, Layer>;

    fn into_iter(self) -> Self::IntoIter {
        self.layers.iter()
    }
}
