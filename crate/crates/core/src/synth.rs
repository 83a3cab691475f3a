//! Seeded synthetic fixtures: random matrices, correlated representation
//! pairs, and layer stacks with a planted block of layers that share one
//! dominant principal component. Used by the test suites, the benches, and
//! for trying the CLI without a trained model.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::layers::{Layer, LayerSet, Position};
use crate::linalg::Matrix;
use crate::rng;

fn normals(n: usize, rng: &mut rng::Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Matrix of i.i.d. standard normal entries.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng::seeded(seed);
    Matrix::new(rows, cols, normals(rows * cols, &mut rng)).expect("finite gaussian draws")
}

/// A Haar-ish random orthogonal p×p matrix (polar factor of a Gaussian).
pub fn random_orthogonal(p: usize, seed: u64) -> Matrix {
    let g = gaussian_matrix(p, p, seed ^ 0x9e37_79b9_7f4a_7c15);
    let svd = g.svd().expect("svd of gaussian matrix");
    svd.left
        .matmul(&svd.right.transpose())
        .expect("square factors")
}

/// Two representations of the same `m` examples that share a `shared`
/// dimensional latent signal, each with additive noise of scale `noise`.
pub fn correlated_pair(
    m: usize,
    p1: usize,
    p2: usize,
    shared: usize,
    noise: f64,
    seed: u64,
) -> (Matrix, Matrix) {
    let z = gaussian_matrix(m, shared, seed);
    let a = gaussian_matrix(shared, p1, seed + 1);
    let b = gaussian_matrix(shared, p2, seed + 2);
    let e1 = gaussian_matrix(m, p1, seed + 3).scale(noise);
    let e2 = gaussian_matrix(m, p2, seed + 4).scale(noise);
    let x = z.matmul(&a).unwrap();
    let y = z.matmul(&b).unwrap();
    (
        Matrix::new(m, p1, add(&x, &e1)).unwrap(),
        Matrix::new(m, p2, add(&y, &e2)).unwrap(),
    )
}

fn add(a: &Matrix, b: &Matrix) -> Vec<f64> {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x + y)
        .collect()
}

/// Configuration for [`planted_block_layers`].
#[derive(Clone, Debug)]
pub struct BlockFixture {
    pub examples: usize,
    pub features: usize,
    pub layer_count: usize,
    /// First and last (inclusive, 0-based) layer of the planted block.
    pub block: (usize, usize),
    /// Ratio of the shared rank-1 component's energy to the per-layer
    /// isotropic noise energy inside the block.
    pub signal_to_noise: f64,
    pub seed: u64,
}

impl Default for BlockFixture {
    fn default() -> Self {
        Self {
            examples: 256,
            features: 32,
            layer_count: 16,
            block: (5, 12),
            signal_to_noise: 40.0,
            seed: 2024,
        }
    }
}

/// Layers `block.0..=block.1` are `s · u wₗᵀ + Eₗ` for one shared example
/// direction `u` and per-layer readout `wₗ`; every other layer is pure
/// independent noise. Layers alternate pre/post-residual positions.
pub fn planted_block_layers(cfg: &BlockFixture) -> LayerSet {
    let m = cfg.examples;
    let p = cfg.features;
    let mut rng = rng::seeded(cfg.seed);
    let mut u = normals(m, &mut rng);
    let mean = u.iter().sum::<f64>() / m as f64;
    u.iter_mut().for_each(|v| *v -= mean);
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);

    // Noise energy is ≈ m·p; the planted term has energy s².
    let s = (cfg.signal_to_noise * (m * p) as f64).sqrt();

    let layers = (0..cfg.layer_count)
        .map(|l| {
            let mut layer_rng = rng::stream(cfg.seed, l as u64 + 1);
            let mut data = normals(m * p, &mut layer_rng);
            if (cfg.block.0..=cfg.block.1).contains(&l) {
                let mut w = normals(p, &mut layer_rng);
                let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                w.iter_mut().for_each(|v| *v /= wn);
                for i in 0..m {
                    for j in 0..p {
                        data[i * p + j] += s * u[i] * w[j];
                    }
                }
            }
            let position = if l % 2 == 0 {
                Position::PreResidual
            } else {
                Position::PostResidual
            };
            Layer::new(format!("layer{l:02}"), Matrix::new(m, p, data).unwrap())
                .with_position(position)
                .with_stage((l * 3 / cfg.layer_count.max(1)) as u8)
        })
        .collect();
    LayerSet::new(layers).expect("fixture layers are consistent")
}

/// Isotropic Gaussian clusters around `centers` (one per class) with the
/// given spread; returns features and labels, classes assigned round-robin.
pub fn gaussian_blobs(
    examples: usize,
    centers: &[Vec<f64>],
    spread: f64,
    seed: u64,
) -> (Matrix, Vec<usize>) {
    let dim = centers[0].len();
    let mut rng = rng::seeded(seed);
    let mut data = Vec::with_capacity(examples * dim);
    let mut labels = Vec::with_capacity(examples);
    for i in 0..examples {
        let c = i % centers.len();
        labels.push(c);
        for &mu in &centers[c][..dim] {
            data.push(mu + spread * rng.sample::<f64, _>(StandardNormal));
        }
    }
    (Matrix::new(examples, dim, data).unwrap(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gaussian_matrix(4, 3, 1), gaussian_matrix(4, 3, 1));
        assert_ne!(gaussian_matrix(4, 3, 1), gaussian_matrix(4, 3, 2));
        let a = planted_block_layers(&BlockFixture::default());
        let b = planted_block_layers(&BlockFixture::default());
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let q = random_orthogonal(6, 3);
        let qtq = q.transpose().matmul(&q).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq.get(i, j) - want).abs() < 1e-10);
            }
        }
    }
}
