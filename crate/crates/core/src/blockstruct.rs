//! Heuristic detection of "block structure": contiguous runs of layers whose
//! pairwise CKA is uniformly high, visible as bright squares on the
//! diagonal of a heatmap.
//!
//! An interval `[a, b]` qualifies when the mean over its `(b−a+1)²` square
//! is at least `threshold`, every entry in the square is at least
//! `threshold − 0.1`, and it spans at least `min_size` layers. Qualifying
//! intervals are then picked greedily, longest first (ties: higher mean,
//! then lower start), skipping any that overlap an earlier pick.

use std::cmp::Ordering;

use serde::Serialize;

use crate::cka::CkaHeatmap;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_MIN_SIZE: usize = 5;
/// How far below the threshold any single entry inside a block may fall.
pub const ENTRY_SLACK: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Block {
    pub start_layer: usize,
    pub end_layer: usize,
    pub mean_inside_cka: f64,
    /// Mean inside the block minus mean of the entries linking block layers
    /// to layers outside it; `None` when the block spans every layer.
    pub mean_boundary_contrast: Option<f64>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.end_layer - self.start_layer + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn overlaps(&self, other: &Block) -> bool {
        self.start_layer <= other.end_layer && other.start_layer <= self.end_layer
    }

    /// Greedy pick order: longer first, then higher mean, then earlier.
    fn priority(&self, other: &Block) -> Ordering {
        other
            .len()
            .cmp(&self.len())
            .then(other.mean_inside_cka.total_cmp(&self.mean_inside_cka))
            .then(self.start_layer.cmp(&other.start_layer))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockReport {
    /// Detected blocks, sorted by start layer, non-overlapping.
    pub blocks: Vec<Block>,
    pub threshold: f64,
    pub min_size: usize,
    pub layer_names: Vec<String>,
}

impl BlockReport {
    /// The block the greedy pass picked first (the longest one).
    pub fn primary(&self) -> Option<&Block> {
        self.blocks.iter().min_by(|a, b| a.priority(b))
    }
}

pub fn detect_blocks(h: &CkaHeatmap, threshold: f64, min_size: usize) -> Result<BlockReport> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "block detection needs a square heatmap, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    if min_size == 0 || !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid block parameters (threshold {threshold}, min size {min_size})"
        )));
    }
    let n = h.rows();
    let floor = threshold - ENTRY_SLACK;

    let mut candidates = Vec::new();
    for a in 0..n {
        let mut sum = 0.0;
        for b in a..n {
            // Extend the square by row b and column b.
            let new_entries = (a..b)
                .flat_map(|k| [h.get(b, k), h.get(k, b)])
                .chain(std::iter::once(h.get(b, b)));
            let mut ok = true;
            for v in new_entries {
                match v {
                    Some(v) if v >= floor => sum += v,
                    _ => ok = false,
                }
            }
            if !ok {
                // Every larger interval from `a` contains the failing entry.
                break;
            }
            let len = b - a + 1;
            let mean = sum / (len * len) as f64;
            if len >= min_size && mean >= threshold {
                candidates.push(Block {
                    start_layer: a,
                    end_layer: b,
                    mean_inside_cka: mean,
                    mean_boundary_contrast: None,
                });
            }
        }
    }
    candidates.sort_by(|x, y| x.priority(y));

    let mut blocks: Vec<Block> = Vec::new();
    for c in candidates {
        if blocks.iter().all(|b| !b.overlaps(&c)) {
            blocks.push(c);
        }
    }
    for b in &mut blocks {
        b.mean_boundary_contrast = boundary_mean(h, b.start_layer, b.end_layer).map(|out| b.mean_inside_cka - out);
    }
    blocks.sort_by_key(|b| b.start_layer);

    Ok(BlockReport {
        blocks,
        threshold,
        min_size,
        layer_names: h.row_names.clone(),
    })
}

fn boundary_mean(h: &CkaHeatmap, a: usize, b: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in a..=b {
        for j in (0..h.cols()).filter(|j| !(a..=b).contains(j)) {
            if let Some(v) = h.get(i, j) {
                sum += v;
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Dispersion {
    pub mean: f64,
    /// Sample standard deviation (zero for a single observation).
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

impl Dispersion {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self {
            mean,
            std_dev: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// How the primary block varies across training seeds of one architecture.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedVariability {
    pub presence: Vec<bool>,
    pub presence_rate: f64,
    /// Primary (longest) block per seed as `(start, end)`.
    pub primary_blocks: Vec<Option<(usize, usize)>>,
    pub start: Option<Dispersion>,
    pub end: Option<Dispersion>,
    pub length: Option<Dispersion>,
}

pub fn block_seed_variability(reports: &[BlockReport]) -> Result<SeedVariability> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no block reports given".into()));
    }
    let primary: Vec<Option<(usize, usize)>> = reports
        .iter()
        .map(|r| r.primary().map(|b| (b.start_layer, b.end_layer)))
        .collect();
    let present: Vec<(usize, usize)> = primary.iter().flatten().copied().collect();
    let starts: Vec<f64> = present.iter().map(|p| p.0 as f64).collect();
    let ends: Vec<f64> = present.iter().map(|p| p.1 as f64).collect();
    let lengths: Vec<f64> = present.iter().map(|p| (p.1 - p.0 + 1) as f64).collect();
    Ok(SeedVariability {
        presence: primary.iter().map(Option::is_some).collect(),
        presence_rate: present.len() as f64 / reports.len() as f64,
        primary_blocks: primary,
        start: Dispersion::of(&starts),
        end: Dispersion::of(&ends),
        length: Dispersion::of(&lengths),
    })
}
