//! Gram matrices and the two HSIC estimators.
//!
//! `hsic0` is the biased estimator `vec(K')·vec(L') / (m-1)²` over centered
//! Gram matrices. `hsic1` is the unbiased U-statistic form
//!
//! ```text
//! 1/(n(n-3)) · ( tr(K̃L̃) + 1ᵀK̃1·1ᵀL̃1 / ((n-1)(n-2)) − 2/(n-2) · 1ᵀK̃L̃1 )
//! ```
//!
//! where `K̃`, `L̃` are the Gram matrices with their diagonals zeroed. Neither
//! `K̃` nor the product `K̃L̃` is materialized: for symmetric inputs
//! `tr(K̃L̃)` is an off-diagonal elementwise product sum and `1ᵀK̃L̃1` is the
//! dot product of the two off-diagonal row-sum vectors.

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramVariant {
    /// `K = XXᵀ`
    Raw,
    /// `K' = HKH`
    Centered,
    /// `K̃`: raw Gram with a zeroed diagonal.
    DiagonalZeroed,
}

impl GramVariant {
    fn name(self) -> &'static str {
        match self {
            GramVariant::Raw => "raw",
            GramVariant::Centered => "centered",
            GramVariant::DiagonalZeroed => "diagonal-zeroed",
        }
    }
}

/// Dense, full (not packed) symmetric n×n matrix of example-pair inner
/// products.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
    variant: GramVariant,
}

impl GramMatrix {
    /// Wraps an explicit symmetric matrix as a raw Gram matrix.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "Gram matrix of size {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n,
                col: pos % n,
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if (a - b).abs() > 1e-10 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "Gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            values,
            variant: GramVariant::Raw,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn variant(&self) -> GramVariant {
        self.variant
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    fn expect(&self, variant: GramVariant) -> Result<()> {
        if self.variant != variant {
            return Err(Error::WrongGramVariant {
                expected: variant.name(),
                actual: self.variant.name(),
            });
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_parts(self.n, self.n, self.values.clone())
    }
}

/// `K = XXᵀ` over the rows (examples) of `x`.
pub fn gram(x: &Matrix) -> GramMatrix {
    let n = x.rows();
    let mut values = vec![0.0; n * n];
    par::fill_rows(&mut values, n, |i, out| {
        let xi = x.row(i);
        for (j, o) in out.iter_mut().enumerate().skip(i) {
            *o = dot(xi, x.row(j));
        }
    });
    // Mirror the upper triangle so the result is exactly symmetric.
    for i in 0..n {
        for j in 0..i {
            values[i * n + j] = values[j * n + i];
        }
    }
    GramMatrix {
        n,
        values,
        variant: GramVariant::Raw,
    }
}

/// Double centering `HKH` with `H = I − 11ᵀ/n`, computed as
/// `K_ij − r_i − r_j + g` from row means `r` and grand mean `g`.
pub fn center(k: &GramMatrix) -> Result<GramMatrix> {
    k.expect(GramVariant::Raw)?;
    Ok(double_center(k))
}

fn double_center(k: &GramMatrix) -> GramMatrix {
    let n = k.n;
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = k.values[i * n + j] - row_means[i] - row_means[j] + grand;
        }
    }
    GramMatrix {
        n,
        values,
        variant: GramVariant::Centered,
    }
}

/// `K̃`: copy of a raw Gram matrix with its diagonal set to zero.
pub fn zero_diagonal(k: &GramMatrix) -> Result<GramMatrix> {
    k.expect(GramVariant::Raw)?;
    let mut values = k.values.clone();
    for i in 0..k.n {
        values[i * k.n + i] = 0.0;
    }
    Ok(GramMatrix {
        n: k.n,
        values,
        variant: GramVariant::DiagonalZeroed,
    })
}

fn check_pair(k: &GramMatrix, l: &GramMatrix, min_n: usize, what: &'static str) -> Result<()> {
    k.expect(GramVariant::Raw)?;
    l.expect(GramVariant::Raw)?;
    if k.n != l.n {
        return Err(Error::DimensionMismatch(format!(
            "Gram matrices have sizes {} and {}",
            k.n, l.n
        )));
    }
    if k.n < min_n {
        return Err(Error::TooFewExamples {
            what,
            required: min_n,
            actual: k.n,
        });
    }
    Ok(())
}

/// Biased HSIC estimator on raw Gram matrices (m ≥ 2).
pub fn hsic0(k: &GramMatrix, l: &GramMatrix) -> Result<f64> {
    check_pair(k, l, 2, "biased HSIC")?;
    Ok(hsic0_centered(&double_center(k), &double_center(l)))
}

pub(crate) fn hsic0_centered(kc: &GramMatrix, lc: &GramMatrix) -> f64 {
    let m1 = (kc.n - 1) as f64;
    dot(&kc.values, &lc.values) / (m1 * m1)
}

/// Unbiased HSIC estimator on raw Gram matrices (n ≥ 4).
pub fn hsic1(k: &GramMatrix, l: &GramMatrix) -> Result<f64> {
    check_pair(k, l, 4, "unbiased HSIC")?;
    Ok(hsic1_prepared(&UnbiasedTerms::new(k), &UnbiasedTerms::new(l)))
}

/// Per-matrix pieces of the unbiased estimator that do not depend on the
/// other argument. The estimator is unchanged by adding a constant to every
/// off-diagonal entry, so entries are taken relative to their mean `shift`,
/// which removes most of the cancellation between its three terms.
pub(crate) struct UnbiasedTerms<'a> {
    gram: &'a GramMatrix,
    shift: f64,
    /// Shifted off-diagonal row sums `K̃1`.
    row_sums: Vec<f64>,
    total: f64,
}

impl<'a> UnbiasedTerms<'a> {
    pub(crate) fn new(gram: &'a GramMatrix) -> Self {
        let n = gram.n;
        let off_sum: f64 = (0..n).map(|i| gram.row(i).iter().sum::<f64>() - gram.get(i, i)).sum();
        let shift = off_sum / (n * (n - 1)) as f64;
        let row_sums: Vec<f64> = (0..n)
            .map(|i| {
                gram.row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, v)| v - shift)
                    .sum()
            })
            .collect();
        let total = row_sums.iter().sum();
        Self {
            gram,
            shift,
            row_sums,
            total,
        }
    }
}

pub(crate) fn hsic1_prepared(k: &UnbiasedTerms<'_>, l: &UnbiasedTerms<'_>) -> f64 {
    let n = k.gram.n;
    let mut trace = 0.0;
    for i in 0..n {
        let (kr, lr) = (k.gram.row(i), l.gram.row(i));
        for j in 0..n {
            if i != j {
                trace += (kr[j] - k.shift) * (lr[j] - l.shift);
            }
        }
    }
    let cross = dot(&k.row_sums, &l.row_sums);
    let nf = n as f64;
    (trace + k.total * l.total / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * cross)
        / (nf * (nf - 3.0))
}

/// Magnitude against which a self-HSIC value is judged to be zero:
/// the squared entries that feed each estimator's leading term.
pub(crate) fn self_scale(k: &GramMatrix, unbiased: bool) -> f64 {
    let n = k.n as f64;
    if unbiased {
        let mut s = 0.0;
        for i in 0..k.n {
            for (j, v) in k.row(i).iter().enumerate() {
                if i != j {
                    s += v * v;
                }
            }
        }
        s / (n * (n - 3.0))
    } else {
        dot(&k.values, &k.values) / ((n - 1.0) * (n - 1.0))
    }
}

pub(crate) fn centered(k: &GramMatrix) -> GramMatrix {
    double_center(k)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;

    /// Unbiased HSIC straight from its closed form: explicit K̃, L̃ and the
    /// full product K̃L̃, with plain loops.
    fn naive_hsic1(x: &Matrix, y: &Matrix) -> f64 {
        let n = x.rows();
        let kt = |i: usize, j: usize| -> f64 {
            if i == j {
                0.0
            } else {
                (0..x.cols()).map(|c| x.get(i, c) * x.get(j, c)).sum()
            }
        };
        let lt = |i: usize, j: usize| -> f64 {
            if i == j {
                0.0
            } else {
                (0..y.cols()).map(|c| y.get(i, c) * y.get(j, c)).sum()
            }
        };
        let mut prod = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for t in 0..n {
                    prod[i][j] += kt(i, t) * lt(t, j);
                }
            }
        }
        let trace: f64 = (0..n).map(|i| prod[i][i]).sum();
        let mut k_all = 0.0;
        let mut l_all = 0.0;
        let mut kl_all = 0.0;
        for i in 0..n {
            for j in 0..n {
                k_all += kt(i, j);
                l_all += lt(i, j);
                kl_all += prod[i][j];
            }
        }
        let nf = n as f64;
        (trace + k_all * l_all / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * kl_all)
            / (nf * (nf - 3.0))
    }

    /// Biased HSIC with an explicit centering matrix.
    fn naive_hsic0(x: &Matrix, y: &Matrix) -> f64 {
        let m = x.rows();
        let h = Matrix::from_fn(m, m, |i, j| (i == j) as u8 as f64 - 1.0 / m as f64).unwrap();
        let k = x.matmul(&x.transpose()).unwrap();
        let l = y.matmul(&y.transpose()).unwrap();
        let kc = h.matmul(&k).unwrap().matmul(&h).unwrap();
        let lc = h.matmul(&l).unwrap().matmul(&h).unwrap();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += kc.get(i, j) * lc.get(i, j);
            }
        }
        s / ((m - 1) as f64).powi(2)
    }

    #[test]
    fn gram_hand_cases() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        assert_eq!(gram(&x).values(), &[1.0, 0.0, 0.0, 4.0]);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = Matrix::from_rows(&[[s, s], [s, -s]]).unwrap();
        let g = gram(&q);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gram_matches_double_loop() {
        let x = synth::gaussian_matrix(6, 3, 4);
        let g = gram(&x);
        for i in 0..6 {
            for j in 0..6 {
                let want: f64 = (0..3).map(|c| x.get(i, c) * x.get(j, c)).sum();
                assert!((g.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centering_properties() {
        let constant = Matrix::from_rows(&[[1.5, 2.0]; 5]).unwrap();
        let c = center(&gram(&constant)).unwrap();
        assert!(c.values().iter().all(|v| v.abs() < 1e-12));

        let x = synth::gaussian_matrix(9, 4, 21);
        let k = gram(&x);
        let kc = center(&k).unwrap();
        for i in 0..9 {
            let row: f64 = (0..9).map(|j| kc.get(i, j)).sum::<f64>() / 9.0;
            let col: f64 = (0..9).map(|j| kc.get(j, i)).sum::<f64>() / 9.0;
            assert!(row.abs() < 1e-10 && col.abs() < 1e-10);
        }
        // H is a projection: centering again changes nothing.
        let again = double_center(&kc);
        for (a, b) in again.values().iter().zip(kc.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        // Matches the explicit H K H product.
        let h = Matrix::from_fn(9, 9, |i, j| (i == j) as u8 as f64 - 1.0 / 9.0).unwrap();
        let hkh = h.matmul(&k.to_matrix()).unwrap().matmul(&h).unwrap();
        for (a, b) in hkh.as_slice().iter().zip(kc.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(matches!(center(&kc), Err(Error::WrongGramVariant { .. })));
    }

    #[test]
    fn zero_diagonal_variant() {
        let k = gram(&synth::gaussian_matrix(5, 2, 3));
        let kt = zero_diagonal(&k).unwrap();
        assert_eq!(kt.variant(), GramVariant::DiagonalZeroed);
        assert!((0..5).all(|i| kt.get(i, i) == 0.0));
        assert_eq!(kt.get(1, 3), k.get(1, 3));
    }

    #[test]
    fn raw_gram_is_positive_semidefinite() {
        let x = synth::gaussian_matrix(12, 3, 2);
        let g = gram(&x).to_matrix();
        let s = g.svd().unwrap();
        // Symmetric PSD: eigenvalues are the singular values, and the
        // quadratic form stays nonnegative.
        let max = s.singular_values[0];
        for k in 0..s.rank() {
            let u = s.left_vector(k);
            let gu = g.matmul(&Matrix::new(12, 1, u.clone()).unwrap()).unwrap();
            let q = dot(&u, gu.as_slice());
            assert!(q >= -1e-8 * max);
        }
    }

    #[test]
    fn hsic0_hand_cases() {
        let x = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        let k = gram(&x);
        assert!((hsic0(&k, &k).unwrap() - 4.0).abs() < 1e-12);

        let constant = Matrix::from_rows(&[[3.0]; 6]).unwrap();
        let y = synth::gaussian_matrix(6, 2, 5);
        assert!(hsic0(&gram(&constant), &gram(&y)).unwrap().abs() < 1e-12);

        let one = gram(&Matrix::from_rows(&[[1.0]]).unwrap());
        assert!(matches!(hsic0(&one, &one), Err(Error::TooFewExamples { .. })));
    }

    #[test]
    fn hsic0_matches_elementwise_loop() {
        let x = synth::gaussian_matrix(7, 2, 31);
        let y = synth::gaussian_matrix(7, 3, 32);
        let got = hsic0(&gram(&x), &gram(&y)).unwrap();
        let want = naive_hsic0(&x, &y);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn hsic1_error_paths() {
        let x = synth::gaussian_matrix(3, 2, 1);
        let k = gram(&x);
        assert!(matches!(hsic1(&k, &k), Err(Error::TooFewExamples { required: 4, .. })));
        let k5 = gram(&synth::gaussian_matrix(5, 2, 1));
        let k6 = gram(&synth::gaussian_matrix(6, 2, 1));
        assert!(matches!(hsic1(&k5, &k6), Err(Error::DimensionMismatch(_))));
        let kc = center(&k6).unwrap();
        assert!(matches!(hsic1(&kc, &k6), Err(Error::WrongGramVariant { .. })));
    }

    #[test]
    fn hsic1_constant_features_vanish() {
        let constant = Matrix::from_rows(&[[1.0, 1.0]; 10]).unwrap();
        let y = synth::gaussian_matrix(10, 3, 8);
        let v = hsic1(&gram(&constant), &gram(&y)).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn hsic1_matches_naive_loop() {
        let x = synth::gaussian_matrix(10, 4, 41);
        let y = synth::gaussian_matrix(10, 4, 42);
        let got = hsic1(&gram(&x), &gram(&y)).unwrap();
        let want = naive_hsic1(&x, &y);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-300), "{got} vs {want}");
    }

    #[test]
    fn from_values_rejects_asymmetry() {
        assert!(GramMatrix::from_values(2, vec![1.0, 2.0, 3.0, 1.0]).is_err());
        assert!(GramMatrix::from_values(2, vec![1.0, 2.0, 2.0, 1.0]).is_ok());
    }

    #[test]
    fn hsic1_ignores_off_diagonal_offset() {
        let k = gram(&synth::gaussian_matrix(9, 3, 1));
        let l = gram(&synth::gaussian_matrix(9, 2, 2));
        let shifted = GramMatrix::from_values(
            9,
            (0..81).map(|t| k.values()[t] + if t / 9 == t % 9 { 0.0 } else { 123.25 }).collect(),
        )
        .unwrap();
        let (a, b) = (hsic1(&k, &l).unwrap(), hsic1(&shifted, &l).unwrap());
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        let c = gram(&Matrix::from_fn(12, 2, |_, j| [40.0, -7.5][j]).unwrap());
        let y = gram(&synth::gaussian_matrix(12, 4, 3));
        assert!(hsic1(&c, &y).unwrap().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn hsic_estimators_are_symmetric(seed in 0u64..5_000, n in 4usize..16) {
            let k = gram(&synth::gaussian_matrix(n, 3, seed));
            let l = gram(&synth::gaussian_matrix(n, 2, seed + 7));
            let a = hsic1(&k, &l).unwrap();
            let b = hsic1(&l, &k).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            let a = hsic0(&k, &l).unwrap();
            let b = hsic0(&l, &k).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            prop_assert!(a >= -1e-10);
        }

        #[test]
        fn hsic_invariant_to_orthogonal_transform(seed in 0u64..5_000, n in 5usize..20, p in 1usize..6) {
            let x = synth::gaussian_matrix(n, p, seed);
            let y = synth::gaussian_matrix(n, 3, seed + 1);
            let q = synth::random_orthogonal(p, seed + 2);
            let xq = x.matmul(&q).unwrap();
            let l = gram(&y);
            for f in [hsic0, hsic1] {
                let a = f(&gram(&x), &l).unwrap();
                let b = f(&gram(&xq), &l).unwrap();
                prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-12));
            }
        }

        #[test]
        fn hsic0_scales_quadratically(seed in 0u64..5_000, c in 0.1f64..10.0) {
            let x = synth::gaussian_matrix(9, 3, seed);
            let l = gram(&synth::gaussian_matrix(9, 2, seed + 3));
            let a = hsic0(&gram(&x), &l).unwrap();
            let b = hsic0(&gram(&x.scale(c)), &l).unwrap();
            prop_assert!((b - c * c * a).abs() <= 1e-9 * b.abs().max(1e-12));
        }
    }
}
