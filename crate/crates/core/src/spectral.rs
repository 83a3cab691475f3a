//! Principal-component views of layer representations.
//!
//! Principal components live in example space: the left singular vectors of
//! the column-centered m×p activation matrix, so components of layers with
//! different widths can be compared directly. `λᵢ` denotes a squared
//! singular value.

use serde::Serialize;

use crate::cka::CkaHeatmap;
use crate::error::{Error, Result};
use crate::layers::LayerSet;
use crate::linalg::{dot, Matrix};
use crate::par;

/// Spectrum and leading example-space components of one layer.
#[derive(Clone, Debug)]
pub struct SpectralSummary {
    pub layer_name: String,
    pub example_count: usize,
    /// `λᵢ` for the retained components, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// `λᵢ / Σλ` (sum over the full spectrum) for the retained components.
    pub variance_fractions: Vec<f64>,
    /// Retained left singular vectors, each unit-norm with length m.
    pub components: Vec<Vec<f64>>,
    /// Whether every component of the thin SVD was retained.
    pub full_spectrum: bool,
}

/// Centers `x`, decomposes it, and keeps the first `top` components (all of
/// them when `top` is `None`).
pub fn summarize(layer_name: impl Into<String>, x: &Matrix, top: Option<usize>) -> Result<SpectralSummary> {
    let layer_name = layer_name.into();
    let centered = x.center_columns();
    if centered.frobenius_norm() == 0.0 {
        return Err(Error::Degenerate(format!("layer {layer_name:?} has no variance")));
    }
    let svd = centered.svd()?;
    let eig: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    let total: f64 = eig.iter().sum();
    let keep = top.map_or(eig.len(), |t| t.min(eig.len()));
    Ok(SpectralSummary {
        layer_name,
        example_count: x.rows(),
        variance_fractions: eig[..keep].iter().map(|l| l / total).collect(),
        components: (0..keep).map(|k| svd.left_vector(k)).collect(),
        eigenvalues: eig[..keep].to_vec(),
        full_spectrum: keep == eig.len(),
    })
}

/// Summaries of every layer, decomposed in parallel.
pub fn summarize_all(layers: &LayerSet, top: Option<usize>) -> Result<Vec<SpectralSummary>> {
    par::map_slice(layers.layers(), |l| summarize(l.name.clone(), &l.activations, top))
        .into_iter()
        .collect()
}

/// Linear CKA written as eigenvalue-weighted alignment of principal
/// components: `Σᵢⱼ λᵢ μⱼ ⟨uᵢ, vⱼ⟩² / (‖λ‖ ‖μ‖)`.
pub fn cka_spectral(sx: &SpectralSummary, sy: &SpectralSummary) -> Result<f64> {
    if sx.example_count != sy.example_count {
        return Err(Error::DimensionMismatch(format!(
            "summaries cover {} and {} examples",
            sx.example_count, sy.example_count
        )));
    }
    if !sx.full_spectrum || !sy.full_spectrum {
        return Err(Error::InvalidArgument(
            "spectral CKA needs summaries that retain the full spectrum".into(),
        ));
    }
    let mut num = 0.0;
    for (lx, ux) in sx.eigenvalues.iter().zip(&sx.components) {
        for (ly, uy) in sy.eigenvalues.iter().zip(&sy.components) {
            let c = dot(ux, uy);
            num += lx * ly * c * c;
        }
    }
    let nx = sx.eigenvalues.iter().map(|l| l * l).sum::<f64>().sqrt();
    let ny = sy.eigenvalues.iter().map(|l| l * l).sum::<f64>().sqrt();
    Ok(num / (nx * ny))
}

/// Fractions of variance explained by the top `top_k` principal components.
pub fn variance_explained(x: &Matrix, top_k: usize) -> Result<Vec<f64>> {
    Ok(summarize("", x, Some(top_k))?.variance_fractions)
}

/// Concatenates (along features) every layer whose stage tag is in
/// `stages`, for pooled variance analyses across a range of stages.
pub fn pool_stages(layers: &LayerSet, stages: &[u8]) -> Result<Matrix> {
    let parts: Vec<&Matrix> = layers
        .iter()
        .filter(|l| stages.contains(&l.stage))
        .map(|l| &l.activations)
        .collect();
    if parts.is_empty() {
        return Err(Error::InvalidArgument(format!("no layers tagged with stages {stages:?}")));
    }
    Matrix::hconcat(&parts)
}

/// The `count` highest stage tags present in the layer set, ascending.
pub fn last_stages(layers: &LayerSet, count: usize) -> Vec<u8> {
    let mut stages: Vec<u8> = layers.iter().map(|l| l.stage).collect();
    stages.sort_unstable();
    stages.dedup();
    let skip = stages.len().saturating_sub(count);
    stages.split_off(skip)
}

/// Squared cosine similarity between the first principal components of
/// every pair of layers.
pub fn first_pc_cosine_map(layers: &LayerSet) -> Result<CkaHeatmap> {
    let summaries = summarize_all(layers, Some(1))?;
    let n = summaries.len();
    let mut values = Vec::with_capacity(n * n);
    for a in &summaries {
        for b in &summaries {
            let c = dot(&a.components[0], &b.components[0]);
            values.push(Some(c * c));
        }
    }
    CkaHeatmap::new(layers.names(), layers.names(), values)
}

/// Centers the columns and projects out the first example-space principal
/// component: `Xc − u₁u₁ᵀXc`. Column means are not restored.
pub fn remove_first_pc(x: &Matrix) -> Result<Matrix> {
    let centered = x.center_columns();
    if centered.frobenius_norm() == 0.0 {
        return Err(Error::Degenerate("input has no variance".into()));
    }
    let u = centered.svd()?.left_vector(0);
    let (m, p) = (centered.rows(), centered.cols());
    let mut proj = vec![0.0; p];
    for (i, ui) in u.iter().enumerate() {
        for (pj, x) in proj.iter_mut().zip(centered.row(i)) {
            *pj += ui * x;
        }
    }
    let mut data = centered.into_vec();
    for i in 0..m {
        for j in 0..p {
            data[i * p + j] -= u[i] * proj[j];
        }
    }
    Ok(Matrix::from_parts(m, p, data))
}

/// Nonzero-activation statistics of a post-ReLU layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SparsityStats {
    /// Fraction of all (example, unit) entries that are nonzero.
    pub fraction_nonzero: f64,
    /// Fraction of units that are zero on every example.
    pub fraction_always_zero: f64,
    /// Fraction of units that are nonzero on every example.
    pub fraction_always_nonzero: f64,
    /// Count of negative entries; nonzero means the input was not post-ReLU.
    pub negative_entries: usize,
}

pub fn relu_sparsity(x: &Matrix) -> SparsityStats {
    let (m, p) = (x.rows(), x.cols());
    let mut nonzero_per_unit = vec![0usize; p];
    let mut negative = 0;
    for i in 0..m {
        for (count, &v) in nonzero_per_unit.iter_mut().zip(x.row(i)) {
            if v != 0.0 {
                *count += 1;
            }
            if v < 0.0 {
                negative += 1;
            }
        }
    }
    if negative > 0 {
        log::warn!("{negative} negative entries; input does not look like post-ReLU activations");
    }
    let total_nonzero: usize = nonzero_per_unit.iter().sum();
    let pf = p as f64;
    SparsityStats {
        fraction_nonzero: total_nonzero as f64 / (m * p) as f64,
        fraction_always_zero: nonzero_per_unit.iter().filter(|&&c| c == 0).count() as f64 / pf,
        fraction_always_nonzero: nonzero_per_unit.iter().filter(|&&c| c == m).count() as f64 / pf,
        negative_entries: negative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cka::{cka_full, heatmap, CkaMode, Estimator};
    use crate::layers::Layer;
    use crate::synth;
    use proptest::prelude::*;

    fn rank_one(m: usize, p: usize, seed: u64) -> Matrix {
        let u = synth::gaussian_matrix(m, 1, seed);
        let v = synth::gaussian_matrix(1, p, seed + 1);
        u.matmul(&v).unwrap()
    }

    /// u·wᵀ·scale + noise, with `u` shared.
    fn dominant(u: &Matrix, p: usize, scale: f64, noise: f64, seed: u64) -> Matrix {
        let w = synth::gaussian_matrix(1, p, seed);
        let e = synth::gaussian_matrix(u.rows(), p, seed + 1);
        let base = u.matmul(&w).unwrap();
        Matrix::new(
            u.rows(),
            p,
            base.as_slice()
                .iter()
                .zip(e.as_slice())
                .map(|(a, b)| scale * a + noise * b)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn spectral_self_is_one() {
        let x = synth::gaussian_matrix(30, 6, 1);
        let s = summarize("x", &x, None).unwrap();
        assert!((cka_spectral(&s, &s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_matches_gram_form() {
        let x = synth::gaussian_matrix(30, 6, 2).center_columns();
        let y = synth::gaussian_matrix(30, 9, 3).center_columns();
        let spec = cka_spectral(&summarize("x", &x, None).unwrap(), &summarize("y", &y, None).unwrap()).unwrap();
        let gram = cka_full(&x, &y, Estimator::Biased).unwrap();
        assert!((spec - gram).abs() < 1e-8, "{spec} vs {gram}");
    }

    #[test]
    fn rank_one_alignment() {
        let u = [1.0, -1.0, 0.0, 0.0];
        let v = [0.0, 0.0, 1.0, -1.0];
        let mk = |dir: [f64; 4], scale: f64| Matrix::from_fn(4, 2, |i, j| dir[i] * scale * (j + 1) as f64).unwrap();
        let a = summarize("a", &mk(u, 1.0), None).unwrap();
        let b = summarize("b", &mk(u, 3.0), None).unwrap();
        let c = summarize("c", &mk(v, 2.0), None).unwrap();
        assert!((cka_spectral(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(cka_spectral(&a, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn spectral_rejects_mismatch_and_truncation() {
        let a = summarize("a", &synth::gaussian_matrix(10, 3, 1), None).unwrap();
        let b = summarize("b", &synth::gaussian_matrix(11, 3, 1), None).unwrap();
        assert!(matches!(cka_spectral(&a, &b), Err(Error::DimensionMismatch(_))));
        let t = summarize("t", &synth::gaussian_matrix(10, 3, 2), Some(1)).unwrap();
        assert!(cka_spectral(&a, &t).is_err());
    }

    #[test]
    fn summary_invariants() {
        let s = summarize("x", &synth::gaussian_matrix(40, 7, 5), None).unwrap();
        let sum: f64 = s.variance_fractions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-8);
        assert!(s.variance_fractions.windows(2).all(|w| w[0] >= w[1]));
        for (a, ua) in s.components.iter().enumerate() {
            assert!((dot(ua, ua) - 1.0).abs() < 1e-8);
            for ub in &s.components[a + 1..] {
                assert!(dot(ua, ub).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn variance_explained_cases() {
        let f = variance_explained(&rank_one(20, 4, 3), 2).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-12);

        // Centered columns with singular values 10 and 1.
        let x = Matrix::from_rows(&[[5.0, 0.0], [-5.0, 0.0], [0.0, 0.5], [0.0, -0.5]]).unwrap();
        let f = variance_explained(&x, 2).unwrap();
        assert!((f[0] - 100.0 / 101.0).abs() < 1e-12);
        assert!((f[1] - 1.0 / 101.0).abs() < 1e-12);

        let iso = synth::gaussian_matrix(1000, 10, 17);
        let f = variance_explained(&iso, 1).unwrap();
        assert!((f[0] - 0.1).abs() < 0.05, "{}", f[0]);

        assert!(matches!(variance_explained(&Matrix::zeros(5, 2).unwrap(), 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn near_rank_one_cka_tracks_first_pc_alignment() {
        let u = synth::gaussian_matrix(200, 1, 8);
        let x = dominant(&u, 10, 1.0, 0.002, 9);
        let mut v = u.as_slice().to_vec();
        let tweak = synth::gaussian_matrix(200, 1, 10);
        v.iter_mut().zip(tweak.as_slice()).for_each(|(a, b)| *a += 0.5 * b);
        let y = dominant(&Matrix::new(200, 1, v).unwrap(), 12, 1.0, 0.002, 11);
        let sx = summarize("x", &x, None).unwrap();
        let sy = summarize("y", &y, None).unwrap();
        assert!(sx.variance_fractions[0] >= 0.999 && sy.variance_fractions[0] >= 0.999);
        let c = dot(&sx.components[0], &sy.components[0]);
        let cka = cka_full(&x, &y, Estimator::Biased).unwrap();
        assert!((cka - c * c).abs() < 0.01, "{cka} vs {}", c * c);
    }

    #[test]
    fn cosine_map_cases() {
        let fx = synth::BlockFixture {
            examples: 128,
            features: 16,
            layer_count: 10,
            block: (3, 7),
            signal_to_noise: 40.0,
            seed: 5,
        };
        let set = synth::planted_block_layers(&fx);
        let map = first_pc_cosine_map(&set).unwrap();
        for i in 0..10 {
            assert!((map.get(i, i).unwrap() - 1.0).abs() < 1e-12);
            for j in 0..10 {
                let v = map.get(i, j).unwrap();
                assert_eq!(v, map.get(j, i).unwrap());
                let inside = (3..=7).contains(&i) && (3..=7).contains(&j);
                if inside {
                    assert!(v > 0.95, "({i},{j}) = {v}");
                } else if i != j {
                    assert!(v < 0.3, "({i},{j}) = {v}");
                }
            }
        }

        let a = Matrix::from_rows(&[[1.0], [-1.0], [0.0], [0.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [0.0], [2.0], [-2.0]]).unwrap();
        let set = LayerSet::new(vec![Layer::new("a", a), Layer::new("b", b)]).unwrap();
        assert!(first_pc_cosine_map(&set).unwrap().get(0, 1).unwrap() < 1e-20);

        let dead = LayerSet::new(vec![Layer::new("z", Matrix::zeros(4, 1).unwrap())]).unwrap();
        assert!(first_pc_cosine_map(&dead).is_err());
    }

    #[test]
    fn remove_first_pc_cases() {
        let r = remove_first_pc(&rank_one(12, 5, 2)).unwrap();
        assert!(r.frobenius_norm() < 1e-10 * 12.0, "{}", r.frobenius_norm());

        let x = synth::gaussian_matrix(30, 6, 4);
        let u = summarize("x", &x, Some(1)).unwrap().components.remove(0);
        let out = remove_first_pc(&x).unwrap();
        for j in 0..6 {
            assert!(dot(&u, &out.column(j)).abs() < 1e-8);
        }
        assert!(remove_first_pc(&Matrix::from_rows(&[[2.0, 1.0]; 4]).unwrap()).is_err());
    }

    #[test]
    fn removing_pc1_breaks_the_block() {
        let fx = synth::BlockFixture {
            examples: 160,
            features: 16,
            layer_count: 8,
            block: (2, 5),
            signal_to_noise: 40.0,
            seed: 3,
        };
        let set = synth::planted_block_layers(&fx);
        let mode = CkaMode::Full { estimator: Estimator::Unbiased };
        let within = |h: &CkaHeatmap| {
            let mut s = 0.0;
            let mut n = 0;
            for i in 2..=5 {
                for j in 2..=5 {
                    if i != j {
                        s += h.get(i, j).unwrap();
                        n += 1;
                    }
                }
            }
            s / n as f64
        };
        let before = within(&heatmap(&set, None, &mode).unwrap());
        let removed = set.try_map(remove_first_pc).unwrap();
        let after = within(&heatmap(&removed, None, &mode).unwrap());
        assert!(before > 0.95 && after < 0.5, "{before} -> {after}");
    }

    #[test]
    fn sparsity_cases() {
        let z = relu_sparsity(&Matrix::zeros(4, 3).unwrap());
        assert_eq!((z.fraction_nonzero, z.fraction_always_zero, z.fraction_always_nonzero), (0.0, 1.0, 0.0));
        let p = relu_sparsity(&Matrix::from_rows(&[[1.0, 2.0], [0.5, 3.0]]).unwrap());
        assert_eq!((p.fraction_nonzero, p.fraction_always_zero, p.fraction_always_nonzero), (1.0, 0.0, 1.0));
        let checker = Matrix::from_fn(6, 4, |i, j| ((i + j) % 2) as f64).unwrap();
        let c = relu_sparsity(&checker);
        assert_eq!(c.fraction_nonzero, 0.5);
        assert_eq!(c.negative_entries, 0);
        let neg = relu_sparsity(&Matrix::from_rows(&[[-1.0, 0.0]]).unwrap());
        assert_eq!(neg.negative_entries, 1);
    }

    #[test]
    fn stage_pooling() {
        let set = synth::planted_block_layers(&synth::BlockFixture {
            examples: 20,
            features: 3,
            layer_count: 6,
            block: (1, 2),
            signal_to_noise: 1.0,
            seed: 1,
        });
        assert_eq!(last_stages(&set, 2), vec![1, 2]);
        let pooled = pool_stages(&set, &[1, 2]).unwrap();
        assert_eq!(pooled.cols(), 3 * 4);
        assert!(pool_stages(&set, &[9]).is_err());
    }

    proptest! {
        #[test]
        fn spectral_equals_biased_cka(seed in 0u64..5_000, m in 4usize..40, p1 in 1usize..12, p2 in 1usize..12) {
            let x = synth::gaussian_matrix(m, p1, seed).center_columns();
            let y = synth::gaussian_matrix(m, p2, seed + 1).center_columns();
            let spec = cka_spectral(&summarize("x", &x, None).unwrap(), &summarize("y", &y, None).unwrap()).unwrap();
            let gram = cka_full(&x, &y, Estimator::Biased).unwrap();
            prop_assert!((spec - gram).abs() < 1e-8);
        }

        #[test]
        fn removal_bounds_new_top_fraction(seed in 0u64..5_000, m in 6usize..30, p in 3usize..8) {
            let x = synth::gaussian_matrix(m, p, seed);
            let before = variance_explained(&x, 2).unwrap();
            let after = variance_explained(&remove_first_pc(&x).unwrap(), 1).unwrap();
            prop_assert!(after[0] <= before[1] / (1.0 - before[0]) + 1e-8, "{} vs {} {:?}", after[0], before[1] / (1.0 - before[0]), before);
        }
    }
}
