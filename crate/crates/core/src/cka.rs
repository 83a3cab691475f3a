//! Linear CKA: full-batch (biased or unbiased HSIC), minibatch averaging of
//! unbiased HSIC terms, and all-pairs heatmaps over layer sets.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gram::{self, GramMatrix, UnbiasedTerms};
use crate::layers::LayerSet;
use crate::linalg::Matrix;
use crate::{par, rng};

/// A self-HSIC at or below this fraction of its scale counts as zero.
const BIASED_DEGENERATE_RTOL: f64 = 1e-20;
const UNBIASED_DEGENERATE_RTOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Biased,
    Unbiased,
}

impl Estimator {
    fn min_examples(self) -> usize {
        match self {
            Estimator::Biased => 2,
            Estimator::Unbiased => 4,
        }
    }
}

/// Exactly rounded floating-point sum (Shewchuk's non-overlapping partials,
/// as in Python's `math.fsum`). The result is independent of the order in
/// which terms are added or accumulators merged.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(&last) = p.last() else {
            return 0.0;
        };
        let mut n = p.len() - 1;
        let mut hi = last;
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            let y = p[n - 1];
            n -= 1;
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        // Round half-even correction when the remaining partials push the
        // truncated low word across a tie.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Running sums of the three unbiased-HSIC terms of minibatch CKA.
#[derive(Clone, Debug, Default)]
pub struct MinibatchAccumulator {
    cross: ExactSum,
    self_x: ExactSum,
    self_y: ExactSum,
    batch_count: usize,
}

impl MinibatchAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one minibatch's `HSIC₁(KX, KY)`, `HSIC₁(KX, KX)` and
    /// `HSIC₁(KY, KY)`.
    pub fn push(&mut self, cross: f64, self_x: f64, self_y: f64) {
        self.cross.add(cross);
        self.self_x.add(self_x);
        self.self_y.add(self_y);
        self.batch_count += 1;
    }

    pub fn merge(&mut self, other: &MinibatchAccumulator) {
        self.cross.merge(&other.cross);
        self.self_x.merge(&other.self_x);
        self.self_y.merge(&other.self_y);
        self.batch_count += other.batch_count;
    }

    pub fn batch_count(&self) -> usize {
        self.batch_count
    }

    pub fn sum_cross(&self) -> f64 {
        self.cross.value()
    }

    pub fn sum_self_x(&self) -> f64 {
        self.self_x.value()
    }

    pub fn sum_self_y(&self) -> f64 {
        self.self_y.value()
    }

    /// Ratio of the averaged cross term to the geometric mean of the
    /// averaged self terms.
    pub fn finalize(&self) -> Result<f64> {
        if self.batch_count == 0 {
            return Err(Error::Degenerate("no minibatches accumulated".into()));
        }
        let k = self.batch_count as f64;
        let (sx, sy) = (self.sum_self_x() / k, self.sum_self_y() / k);
        if sx <= 0.0 || sy <= 0.0 {
            return Err(Error::Degenerate(format!(
                "non-positive averaged self-HSIC ({sx:e}, {sy:e})"
            )));
        }
        Ok(normalize(self.sum_cross() / k, sx, sy))
    }
}

#[inline]
fn normalize(cross: f64, self_x: f64, self_y: f64) -> f64 {
    cross / (self_x.sqrt() * self_y.sqrt())
}

/// Gram matrix plus whatever the chosen estimator needs precomputed.
enum Prepared {
    Biased { centered: GramMatrix, self_value: f64 },
    Unbiased { gram: GramMatrix, self_value: f64 },
}

impl Prepared {
    fn new(x: &Matrix, estimator: Estimator) -> Self {
        let k = gram::gram(x);
        match estimator {
            Estimator::Biased => {
                let centered = gram::centered(&k);
                let raw = gram::hsic0_centered(&centered, &centered);
                let self_value = clamp_degenerate(raw, gram::self_scale(&k, false), BIASED_DEGENERATE_RTOL);
                Prepared::Biased {
                    centered,
                    self_value,
                }
            }
            Estimator::Unbiased => {
                let t = UnbiasedTerms::new(&k);
                let raw = gram::hsic1_prepared(&t, &t);
                let self_value = clamp_degenerate(raw, gram::self_scale(&k, true), UNBIASED_DEGENERATE_RTOL);
                Prepared::Unbiased {
                    gram: k,
                    self_value,
                }
            }
        }
    }

    fn self_value(&self) -> f64 {
        match self {
            Prepared::Biased { self_value, .. } | Prepared::Unbiased { self_value, .. } => *self_value,
        }
    }

    fn cross(&self, other: &Prepared) -> f64 {
        match (self, other) {
            (Prepared::Biased { centered: a, .. }, Prepared::Biased { centered: b, .. }) => {
                gram::hsic0_centered(a, b)
            }
            (Prepared::Unbiased { gram: a, .. }, Prepared::Unbiased { gram: b, .. }) => {
                gram::hsic1_prepared(&UnbiasedTerms::new(a), &UnbiasedTerms::new(b))
            }
            _ => unreachable!("mixed estimators"),
        }
    }
}

/// Self-HSIC values that are rounding noise relative to their scale are
/// reported as exactly zero so callers see a degenerate input rather than a
/// ratio of noise.
fn clamp_degenerate(value: f64, scale: f64, rtol: f64) -> f64 {
    if value <= rtol * scale {
        0.0
    } else {
        value
    }
}

fn check_rows(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch(format!(
            "representations cover {} and {} examples",
            x.rows(),
            y.rows()
        )));
    }
    Ok(())
}

/// Full-dataset linear CKA with the chosen HSIC estimator.
pub fn cka_full(x: &Matrix, y: &Matrix, estimator: Estimator) -> Result<f64> {
    check_rows(x, y)?;
    let need = estimator.min_examples();
    if x.rows() < need {
        return Err(Error::TooFewExamples {
            what: "CKA",
            required: need,
            actual: x.rows(),
        });
    }
    let px = Prepared::new(x, estimator);
    let py = Prepared::new(y, estimator);
    finish_pair(&px, &py)
}

fn finish_pair(px: &Prepared, py: &Prepared) -> Result<f64> {
    let (sx, sy) = (px.self_value(), py.self_value());
    if sx <= 0.0 || sy <= 0.0 {
        return Err(Error::Degenerate(
            "zero self-similarity (constant activations?)".into(),
        ));
    }
    Ok(normalize(px.cross(py), sx, sy))
}

/// Anything that can hand out rows of activations for a set of example
/// indices. Implemented for in-memory matrices; a streaming reader can
/// implement it to avoid holding the whole dataset.
pub trait ActivationSource: Sync {
    fn example_count(&self) -> usize;
    fn gather(&self, indices: &[usize]) -> Result<Matrix>;
}

impl ActivationSource for Matrix {
    fn example_count(&self) -> usize {
        self.rows()
    }

    fn gather(&self, indices: &[usize]) -> Result<Matrix> {
        self.select_rows(indices)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MinibatchParams {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MinibatchParams {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 10,
            seed: 0,
        }
    }
}

impl MinibatchParams {
    fn validate(&self, m: usize) -> Result<()> {
        if self.batch_size < 4 {
            return Err(Error::InvalidArgument(format!(
                "batch size must be at least 4, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if m < self.batch_size {
            return Err(Error::TooFewExamples {
                what: "minibatch CKA",
                required: self.batch_size,
                actual: m,
            });
        }
        Ok(())
    }
}

/// The minibatches of one epoch: a seeded shuffle of `0..m` cut into
/// `⌊m / batch_size⌋` batches, leftovers dropped. Indices inside each batch
/// are sorted (HSIC does not depend on order within a batch).
pub fn epoch_batches(m: usize, params: &MinibatchParams, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = rng::stream(params.seed, epoch as u64);
    let perm = rng::permutation(m, &mut rng);
    perm.chunks_exact(params.batch_size)
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect()
}

fn batch_self_term(k: &GramMatrix, t: &UnbiasedTerms<'_>) -> f64 {
    clamp_degenerate(
        gram::hsic1_prepared(t, t),
        gram::self_scale(k, true),
        UNBIASED_DEGENERATE_RTOL,
    )
}

/// Minibatch CKA: averages unbiased HSIC terms over `epochs` passes of
/// shuffled, non-overlapping minibatches.
pub fn cka_minibatch<X, Y>(x: &X, y: &Y, params: &MinibatchParams) -> Result<f64>
where
    X: ActivationSource + ?Sized,
    Y: ActivationSource + ?Sized,
{
    let m = x.example_count();
    if y.example_count() != m {
        return Err(Error::DimensionMismatch(format!(
            "representations cover {m} and {} examples",
            y.example_count()
        )));
    }
    params.validate(m)?;

    let per_epoch = par::map_range(params.epochs, |epoch| -> Result<MinibatchAccumulator> {
        let mut acc = MinibatchAccumulator::new();
        for batch in epoch_batches(m, params, epoch) {
            let kx = gram::gram(&x.gather(&batch)?);
            let ky = gram::gram(&y.gather(&batch)?);
            let (tx, ty) = (UnbiasedTerms::new(&kx), UnbiasedTerms::new(&ky));
            acc.push(
                gram::hsic1_prepared(&tx, &ty),
                batch_self_term(&kx, &tx),
                batch_self_term(&ky, &ty),
            );
        }
        Ok(acc)
    });
    let mut total = MinibatchAccumulator::new();
    for acc in per_epoch {
        total.merge(&acc?);
    }
    total.finalize()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum CkaMode {
    Full { estimator: Estimator },
    Minibatch(MinibatchParams),
}

impl Default for CkaMode {
    fn default() -> Self {
        CkaMode::Minibatch(MinibatchParams::default())
    }
}

/// Layer-by-layer similarity matrix. Entries that could not be computed
/// (degenerate layers) are `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CkaHeatmap {
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    values: Vec<Option<f64>>,
}

impl CkaHeatmap {
    pub fn new(row_names: Vec<String>, col_names: Vec<String>, values: Vec<Option<f64>>) -> Result<Self> {
        if row_names.is_empty() || col_names.is_empty() || values.len() != row_names.len() * col_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} heatmap with {} values",
                row_names.len(),
                col_names.len(),
                values.len()
            )));
        }
        Ok(Self {
            row_names,
            col_names,
            values,
        })
    }

    /// Square heatmap over one set of names from a dense matrix.
    pub fn from_matrix(names: Vec<String>, m: &Matrix) -> Result<Self> {
        let cols = names.clone();
        Self::new(names, cols, m.as_slice().iter().map(|&v| Some(v)).collect())
    }

    pub fn rows(&self) -> usize {
        self.row_names.len()
    }

    pub fn cols(&self) -> usize {
        self.col_names.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.cols() + j]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn transpose(&self) -> CkaHeatmap {
        let (r, c) = (self.rows(), self.cols());
        let mut values = vec![None; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = self.values[i * c + j];
            }
        }
        CkaHeatmap {
            row_names: self.col_names.clone(),
            col_names: self.row_names.clone(),
            values,
        }
    }
}

fn pair_list(rows: usize, cols: usize, symmetric: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..rows {
        let start = if symmetric { i } else { 0 };
        for j in start..cols {
            pairs.push((i, j));
        }
    }
    pairs
}

/// CKA between every layer of `a` and every layer of `b` (or of `a` with
/// itself when `b` is `None`, in which case only the upper triangle is
/// computed and mirrored).
pub fn heatmap(a: &LayerSet, b: Option<&LayerSet>, mode: &CkaMode) -> Result<CkaHeatmap> {
    let symmetric = b.is_none();
    let b = b.unwrap_or(a);
    let m = a.example_count();
    if b.example_count() != m {
        return Err(Error::DimensionMismatch(format!(
            "layer sets cover {m} and {} examples",
            b.example_count()
        )));
    }
    let pairs = pair_list(a.len(), b.len(), symmetric);
    let computed = match mode {
        CkaMode::Full { estimator } => heatmap_full(a, b, symmetric, &pairs, *estimator)?,
        CkaMode::Minibatch(params) => heatmap_minibatch(a, b, symmetric, &pairs, params)?,
    };

    let (r, c) = (a.len(), b.len());
    let mut values = vec![None; r * c];
    for (&(i, j), v) in pairs.iter().zip(computed) {
        values[i * c + j] = v;
        if symmetric {
            values[j * c + i] = v;
        }
    }
    CkaHeatmap::new(a.names(), b.names(), values)
}

fn heatmap_full(
    a: &LayerSet,
    b: &LayerSet,
    symmetric: bool,
    pairs: &[(usize, usize)],
    estimator: Estimator,
) -> Result<Vec<Option<f64>>> {
    let m = a.example_count();
    if m < estimator.min_examples() {
        return Err(Error::TooFewExamples {
            what: "CKA",
            required: estimator.min_examples(),
            actual: m,
        });
    }
    let prep_a = par::map_slice(a.layers(), |l| Prepared::new(&l.activations, estimator));
    let prep_b = if symmetric {
        None
    } else {
        Some(par::map_slice(b.layers(), |l| Prepared::new(&l.activations, estimator)))
    };
    let prep_b = prep_b.as_ref().unwrap_or(&prep_a);
    Ok(par::map_slice(pairs, |&(i, j)| finish_pair(&prep_a[i], &prep_b[j]).ok()))
}

fn heatmap_minibatch(
    a: &LayerSet,
    b: &LayerSet,
    symmetric: bool,
    pairs: &[(usize, usize)],
    params: &MinibatchParams,
) -> Result<Vec<Option<f64>>> {
    let m = a.example_count();
    params.validate(m)?;

    let per_epoch = par::map_range(params.epochs, |epoch| -> Result<Vec<MinibatchAccumulator>> {
        let mut accs = vec![MinibatchAccumulator::new(); pairs.len()];
        for batch in epoch_batches(m, params, epoch) {
            let grams = |set: &LayerSet| -> Result<Vec<GramMatrix>> {
                set.iter()
                    .map(|l| Ok(gram::gram(&l.activations.gather(&batch)?)))
                    .collect()
            };
            let ga = grams(a)?;
            let gb = if symmetric { None } else { Some(grams(b)?) };
            let gb = gb.as_ref().unwrap_or(&ga);
            let ta: Vec<_> = ga.iter().map(UnbiasedTerms::new).collect();
            let tb_own: Option<Vec<_>> = (!symmetric).then(|| gb.iter().map(UnbiasedTerms::new).collect());
            let tb = tb_own.as_ref().unwrap_or(&ta);
            let self_a: Vec<f64> = ga.iter().zip(&ta).map(|(k, t)| batch_self_term(k, t)).collect();
            let self_b_own: Option<Vec<f64>> =
                (!symmetric).then(|| gb.iter().zip(tb).map(|(k, t)| batch_self_term(k, t)).collect());
            let self_b = self_b_own.as_ref().unwrap_or(&self_a);
            for (acc, &(i, j)) in accs.iter_mut().zip(pairs) {
                acc.push(gram::hsic1_prepared(&ta[i], &tb[j]), self_a[i], self_b[j]);
            }
        }
        Ok(accs)
    });

    let mut totals = vec![MinibatchAccumulator::new(); pairs.len()];
    for accs in per_epoch {
        for (t, acc) in totals.iter_mut().zip(accs?) {
            t.merge(&acc);
        }
    }
    Ok(totals.iter().map(|t| t.finalize().ok()).collect())
}
