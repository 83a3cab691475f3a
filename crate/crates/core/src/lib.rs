//! Representational similarity analysis for neural-network activations.
//!
//! The crate works on dumps of layer activations and model predictions and
//! has no dependency on a deep-learning runtime. It provides:
//!
//! - [`cka`]: linear CKA, full-batch or averaged over minibatches with the
//!   unbiased HSIC estimator, and all-pairs layer heatmaps.
//! - [`spectral`]: principal-component views of the same quantities
//!   (weighted PC alignment, variance explained, first-PC maps and removal).
//! - [`blockstruct`]: a heuristic detector for contiguous high-similarity
//!   blocks in a heatmap.
//! - [`probes`]: per-layer softmax-regression probes.
//! - [`predictions`]: ensemble accuracy comparisons, Welch tests with
//!   Holm–Šidák adjustment, and nested factor logistic models.
//! - [`io`]: the NAF1/NPF1 binary dump formats and CSV/PGM emitters.
//!
//! Heavy loops run on rayon when the default `parallel` feature is enabled
//! and sequentially otherwise; both builds give bit-identical results.

pub mod blockstruct;
pub mod cka;
pub mod error;
pub mod gram;
pub mod io;
pub mod layers;
pub mod linalg;
pub mod par;
pub mod predictions;
pub mod probes;
pub mod rng;
pub mod spectral;
pub mod synth;

pub use cka::{cka_full, cka_minibatch, heatmap, CkaHeatmap, CkaMode, Estimator, MinibatchParams};
pub use error::{Error, Result};
pub use layers::{DType, Layer, LayerSet, Position};
pub use linalg::{Matrix, Svd};
