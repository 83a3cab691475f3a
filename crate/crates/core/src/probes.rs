//! Linear probes: multinomial logistic regression from one layer's
//! activations to class labels.
//!
//! Fitting is deterministic full-batch gradient descent on mean
//! cross-entropy plus an L2 penalty on the weights (not the bias), from a
//! seeded small Gaussian initialization. Features are standardized with
//! training-split statistics; the reported weights are folded back so they
//! apply to raw activations.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{LayerSet, Position};
use crate::linalg::Matrix;
use crate::{par, rng};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProbeConfig {
    pub l2: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub init_scale: f64,
    pub standardize: bool,
    /// Seeds both the weight initialization and the train/test split.
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            step_size: 0.1,
            iterations: 500,
            init_scale: 0.01,
            standardize: true,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProbeResult {
    pub layer_name: String,
    pub position: Position,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// p×C weights acting on raw (unstandardized) activations.
    #[serde(skip)]
    pub weights: Matrix,
    pub bias: Vec<f64>,
    /// Training objective before each update, plus the final value.
    #[serde(skip)]
    pub loss_history: Vec<f64>,
}

/// Seeded shuffle of `0..m` split into (train, test) index lists, each
/// sorted. The train part holds `round(m · train_fraction)` examples.
pub fn train_test_split(m: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((m as f64) * train_fraction).round() as usize;
    if n_train == 0 || n_train == m {
        return Err(Error::TooFewExamples {
            what: "train/test split",
            required: 2,
            actual: m,
        });
    }
    let perm = rng::permutation(m, &mut rng::seeded(seed));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &Matrix, enabled: bool) -> Self {
        let p = x.cols();
        if !enabled {
            return Self {
                mean: vec![0.0; p],
                scale: vec![1.0; p],
            };
        }
        let mean = x.column_means();
        let mut var = vec![0.0; p];
        for i in 0..x.rows() {
            for ((v, &xv), &mu) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *v += (xv - mu) * (xv - mu);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / x.rows() as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let p = x.cols();
        let mut data = x.as_slice().to_vec();
        for row in data.chunks_mut(p) {
            for ((v, mu), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - mu) / s;
            }
        }
        Matrix::from_parts(x.rows(), p, data)
    }
}

/// Writes row-wise softmax probabilities of `x·w + b` into `probs` and
/// returns the mean cross-entropy against `labels`.
fn forward(x: &Matrix, w: &[f64], b: &[f64], labels: &[usize], probs: &mut [f64]) -> f64 {
    let c = b.len();
    let mut loss = 0.0;
    for (i, row) in probs.chunks_mut(c).enumerate() {
        row.copy_from_slice(b);
        for (j, &xv) in x.row(i).iter().enumerate() {
            if xv != 0.0 {
                for (r, &wv) in row.iter_mut().zip(&w[j * c..(j + 1) * c]) {
                    *r += xv * wv;
                }
            }
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            z += *r;
        }
        row.iter_mut().for_each(|r| *r /= z);
        loss -= row[labels[i]].max(f64::MIN_POSITIVE).ln();
    }
    loss / x.rows() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn accuracy(x: &Matrix, w: &[f64], b: &[f64], labels: &[usize]) -> f64 {
    let mut probs = vec![0.0; x.rows() * b.len()];
    forward(x, w, b, labels, &mut probs);
    let correct = probs
        .chunks(b.len())
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    correct as f64 / labels.len() as f64
}

fn check_labels(x: &Matrix, labels: &[usize], what: &str) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {} examples but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    Ok(())
}

/// Fits a probe on the training split and scores both splits.
pub fn train_probe(
    x_train: &Matrix,
    y_train: &[usize],
    x_test: &Matrix,
    y_test: &[usize],
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    check_labels(x_train, y_train, "train")?;
    check_labels(x_test, y_test, "test")?;
    if x_train.cols() != x_test.cols() {
        return Err(Error::DimensionMismatch(format!(
            "train has {} features, test has {}",
            x_train.cols(),
            x_test.cols()
        )));
    }
    let classes = y_train.iter().chain(y_test).copied().max().unwrap_or(0) + 1;
    if classes < 2 || y_train.iter().all(|&y| y == y_train[0]) {
        return Err(Error::Degenerate("probe training labels contain a single class".into()));
    }

    let standardizer = Standardizer::fit(x_train, config.standardize);
    let xs = standardizer.apply(x_train);
    let (m, p) = (xs.rows(), xs.cols());

    let mut init = rng::seeded(config.seed);
    let mut w: Vec<f64> = (0..p * classes)
        .map(|_| config.init_scale * init.sample::<f64, _>(StandardNormal))
        .collect();
    let mut b = vec![0.0; classes];

    let objective = |w: &[f64], data_loss: f64| data_loss + 0.5 * config.l2 * w.iter().map(|v| v * v).sum::<f64>();

    let mut probs = vec![0.0; m * classes];
    let mut grad_w = vec![0.0; p * classes];
    let mut grad_b = vec![0.0; classes];
    let mut history = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        let loss = forward(&xs, &w, &b, y_train, &mut probs);
        history.push(objective(&w, loss));

        // Residuals P − Y in place.
        for (row, &y) in probs.chunks_mut(classes).zip(y_train) {
            row[y] -= 1.0;
        }
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        for (i, resid) in probs.chunks(classes).enumerate() {
            for (gb, r) in grad_b.iter_mut().zip(resid) {
                *gb += r;
            }
            for (j, &xv) in xs.row(i).iter().enumerate() {
                if xv != 0.0 {
                    for (g, r) in grad_w[j * classes..(j + 1) * classes].iter_mut().zip(resid) {
                        *g += xv * r;
                    }
                }
            }
        }
        let inv_m = 1.0 / m as f64;
        for (wv, g) in w.iter_mut().zip(&grad_w) {
            *wv -= config.step_size * (g * inv_m + config.l2 * *wv);
        }
        for (bv, g) in b.iter_mut().zip(&grad_b) {
            *bv -= config.step_size * g * inv_m;
        }
    }
    let final_loss = forward(&xs, &w, &b, y_train, &mut probs);
    history.push(objective(&w, final_loss));

    let train_accuracy = accuracy(&xs, &w, &b, y_train);
    let test_accuracy = accuracy(&standardizer.apply(x_test), &w, &b, y_test);

    // Fold standardization into raw-feature weights.
    let mut raw_w = vec![0.0; p * classes];
    let mut raw_b = b.clone();
    for j in 0..p {
        for c in 0..classes {
            let v = w[j * classes + c] / standardizer.scale[j];
            raw_w[j * classes + c] = v;
            raw_b[c] -= standardizer.mean[j] * v;
        }
    }
    if raw_w.iter().chain(&raw_b).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("probe weights diverged".into()));
    }

    Ok(ProbeResult {
        layer_name: String::new(),
        position: Position::Other,
        train_accuracy,
        test_accuracy,
        weights: Matrix::from_parts(p, classes, raw_w),
        bias: raw_b,
        loss_history: history,
    })
}

/// One probe per layer (in layer order) on a shared seeded train/test split.
pub fn probe_curve(layers: &LayerSet, labels: &[usize], config: &ProbeConfig) -> Result<Vec<ProbeResult>> {
    let m = layers.example_count();
    if labels.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} examples but {} labels",
            labels.len()
        )));
    }
    let (train, test) = train_test_split(m, config.train_fraction, config.seed)?;
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    par::map_slice(layers.layers(), |layer| {
        let x = &layer.activations;
        let mut r = train_probe(&x.select_rows(&train)?, &y_train, &x.select_rows(&test)?, &y_test, config)?;
        r.layer_name = layer.name.clone();
        r.position = layer.position;
        Ok(r)
    })
    .into_iter()
    .collect()
}
