//! Symmetric eigendecomposition and the SoftAbs matrix-function machinery.
//!
//! The SoftAbs map sends a symmetric matrix `H = Q diag(lambda) Q^T` to
//! `Q diag(lambda_i coth(alpha lambda_i)) Q^T`, a smooth, everywhere
//! positive-definite approximation of `|H|` floored at `1/alpha`. Everything
//! downstream (metric evaluations, trace-kernel gradients) is built from the
//! pieces computed here: the eigendecomposition, the transformed spectrum,
//! and the divided-difference matrix `J` of the scalar map.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Below this |alpha*lambda| the scalar map uses its even Taylor series.
pub const TAU_SMALL: f64 = 1e-4;
/// Above this |alpha*lambda| coth has saturated to 1 below unit roundoff.
pub const TAU_BIG: f64 = 18.0;
/// Relative eigenvalue gap under which the divided difference switches to the
/// derivative rule.
pub const EPS_TIE: f64 = 1e-10;

/// `lambda * coth(alpha * lambda)`, evaluated stably over the whole real line.
///
/// Three regimes: Taylor series near zero, `|lambda|` once coth saturates,
/// and the direct formula in between. Never exponentiates a large argument,
/// so `alpha = 1e6` is safe.
pub fn softabs(lambda: f64, alpha: f64) -> f64 {
    let u = alpha * lambda;
    let au = u.abs();
    if au >= TAU_BIG {
        lambda.abs()
    } else if au <= TAU_SMALL {
        1.0 / alpha + alpha * lambda * lambda / 3.0
    } else {
        lambda / u.tanh()
    }
}

/// Derivative of [`softabs`] with respect to `lambda`:
/// `coth(u) - u / sinh^2(u)` with `u = alpha * lambda`. Odd in `lambda`.
pub fn softabs_deriv(lambda: f64, alpha: f64) -> f64 {
    let u = alpha * lambda;
    let au = u.abs();
    if au >= TAU_BIG {
        u.signum()
    } else if au <= TAU_SMALL {
        u * (2.0 / 3.0 - u * u * (4.0 / 45.0))
    } else {
        let s = u.sinh();
        1.0 / u.tanh() - u / (s * s)
    }
}

/// Divided difference of the SoftAbs scalar map between two eigenvalues,
/// falling back to the derivative at the midpoint when they (nearly) tie.
pub fn softabs_divided_diff(l1: f64, l2: f64, alpha: f64) -> f64 {
    let scale = 1.0 + l1.abs() + l2.abs();
    if (l1 - l2).abs() > EPS_TIE * scale {
        (softabs(l1, alpha) - softabs(l2, alpha)) / (l1 - l2)
    } else {
        softabs_deriv(0.5 * (l1 + l2), alpha)
    }
}

/// Eigendecomposition of a symmetric matrix: `H = Q diag(values) Q^T`.
///
/// Eigenvalues are in fixed correspondence with the columns of `vectors`;
/// no ordering is guaranteed and none is assumed downstream.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Decompose a symmetric matrix, symmetrizing `(H + H^T)/2` first.
///
/// Non-finite entries are reported as a divergence-class error so the
/// sampler can reject the trajectory point instead of aborting.
pub fn sym_eigen(h: &DMatrix<f64>) -> Result<SymEig> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Invalid(format!(
            "expected square matrix, got {}x{}",
            n,
            h.ncols()
        )));
    }
    if !h.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("hessian passed to sym_eigen"));
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    Ok(SymEig {
        values: eig.eigenvalues,
        vectors: eig.eigenvectors,
    })
}

/// Cached spectral data for one SoftAbs metric evaluation: the
/// eigendecomposition of the Hessian, the transformed spectrum, and the
/// divided-difference matrix consumed by the gradient kernels.
#[derive(Debug, Clone)]
pub struct SoftAbsPieces {
    pub alpha: f64,
    pub eig: SymEig,
    /// `lambda_i coth(alpha lambda_i)`, always >= max(|lambda_i|, 1/alpha).
    pub lambda_soft: DVector<f64>,
    /// Symmetric divided-difference matrix; `J[(i,i)]` is the scalar derivative.
    pub jmat: DMatrix<f64>,
}

impl SoftAbsPieces {
    pub fn new(h: &DMatrix<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Invalid(format!("alpha must be positive, got {alpha}")));
        }
        let eig = sym_eigen(h)?;
        let n = eig.values.len();
        let lambda_soft = eig.values.map(|l| softabs(l, alpha));
        let mut jmat = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = softabs_divided_diff(eig.values[i], eig.values[j], alpha);
                jmat[(i, j)] = v;
                jmat[(j, i)] = v;
            }
        }
        Ok(SoftAbsPieces {
            alpha,
            eig,
            lambda_soft,
            jmat,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda_soft.len()
    }

    /// Reconstruct the metric `Q diag(lambda_soft) Q^T`.
    pub fn metric(&self) -> DMatrix<f64> {
        let q = &self.eig.vectors;
        q * DMatrix::from_diagonal(&self.lambda_soft) * q.transpose()
    }

    /// `log |Sigma| = sum_i log lambda_soft_i`.
    pub fn log_det(&self) -> f64 {
        self.lambda_soft.iter().map(|l| l.ln()).sum()
    }

    /// Apply the inverse metric: `Q diag(1/lambda_soft) Q^T p`.
    pub fn inv_apply(&self, p: &DVector<f64>) -> DVector<f64> {
        let q = &self.eig.vectors;
        let mut w = q.transpose() * p;
        for i in 0..w.len() {
            w[i] /= self.lambda_soft[i];
        }
        q * w
    }

    /// Quadratic form `p^T Sigma^{-1} p` without forming the inverse.
    pub fn inv_quad_form(&self, p: &DVector<f64>) -> f64 {
        let w = self.eig.vectors.transpose() * p;
        w.iter()
            .zip(self.lambda_soft.iter())
            .map(|(wi, li)| wi * wi / li)
            .sum()
    }

    /// Apply a square root of the metric, `Q diag(sqrt(lambda_soft)) z`,
    /// turning a standard normal `z` into a draw with covariance `Sigma`.
    pub fn sqrt_apply(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut w = z.clone();
        for i in 0..w.len() {
            w[i] *= self.lambda_soft[i].sqrt();
        }
        &self.eig.vectors * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // High-precision references (mpmath, 40 digits, rounded to f64).
    const COTH_1: f64 = 1.3130352854993313;
    const SOFTABS_DERIV_1_1: f64 = 0.5889736245330208;
    const SOFTABS_2_075: f64 = 2.209582785965024;
    const SOFTABS_DERIV_2_075: f64 = 0.7739453599701533;
    const SOFTABS_03_25: f64 = 0.4723301500733209;
    const SOFTABS_DERIV_03_25: f64 = 0.46530241134202075;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    #[test]
    fn softabs_limits_and_references() {
        assert_relative_eq!(softabs(0.0, 1e6), 1e-6, max_relative = 1e-15);
        assert_relative_eq!(softabs(3.0, 1e6), 3.0, max_relative = 1e-15);
        assert_relative_eq!(softabs(1.0, 1.0), COTH_1, max_relative = 1e-14);
        assert_relative_eq!(softabs(2.0, 0.75), SOFTABS_2_075, max_relative = 1e-14);
        assert_relative_eq!(softabs(0.3, 2.5), SOFTABS_03_25, max_relative = 1e-14);
        // 5 * coth(1): same u = 1 on a different lambda
        assert_relative_eq!(softabs(5.0, 0.2), 5.0 * COTH_1, max_relative = 1e-14);
    }

    #[test]
    fn softabs_deriv_limits_and_references() {
        assert_eq!(softabs_deriv(0.0, 123.0), 0.0);
        assert_relative_eq!(softabs_deriv(3.0, 1e6), 1.0, max_relative = 1e-15);
        assert_relative_eq!(softabs_deriv(-3.0, 1e6), -1.0, max_relative = 1e-15);
        assert_relative_eq!(softabs_deriv(1.0, 1.0), SOFTABS_DERIV_1_1, max_relative = 1e-14);
        assert_relative_eq!(
            softabs_deriv(2.0, 0.75),
            SOFTABS_DERIV_2_075,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            softabs_deriv(0.3, 2.5),
            SOFTABS_DERIV_03_25,
            max_relative = 1e-14
        );
        // odd in lambda
        assert_relative_eq!(
            softabs_deriv(-0.5, 3.0),
            -SOFTABS_DERIV_2_075,
            max_relative = 1e-14
        );
    }

    #[test]
    fn sym_eigen_identity_and_diagonal() {
        let eig = sym_eigen(&DMatrix::identity(2, 2)).unwrap();
        for v in eig.values.iter() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-12);
        }
        let qtq = eig.vectors.transpose() * &eig.vectors;
        assert!(max_abs(&(qtq - DMatrix::identity(2, 2))) < 1e-12);

        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, -1.0]));
        let eig = sym_eigen(&h).unwrap();
        let mut vals: Vec<f64> = eig.values.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(vals[0], -1.0, max_relative = 1e-12);
        assert_relative_eq!(vals[1], 4.0, max_relative = 1e-12);
        // eigenvectors of a diagonal matrix are a signed permutation
        for v in eig.vectors.iter() {
            assert!(v.abs() < 1e-10 || (v.abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sym_eigen_two_by_two_hand_solved() {
        // [[2,1],[1,2]]: lambda = 3, 1 with eigenvectors (1,1)/sqrt2, (1,-1)/sqrt2
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let eig = sym_eigen(&h).unwrap();
        let mut vals: Vec<f64> = eig.values.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(vals[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(vals[1], 3.0, max_relative = 1e-12);
        let r = 0.5f64.sqrt();
        for j in 0..2 {
            let col = eig.vectors.column(j);
            for x in col.iter() {
                assert_relative_eq!(x.abs(), r, max_relative = 1e-10);
            }
        }
        // reconstruction
        let rec = &eig.vectors * DMatrix::from_diagonal(&eig.values) * eig.vectors.transpose();
        assert!(max_abs(&(rec - h)) < 1e-12);
    }

    #[test]
    fn sym_eigen_rejects_non_finite() {
        let mut h = DMatrix::identity(3, 3);
        h[(1, 2)] = f64::NAN;
        let err = sym_eigen(&h).unwrap_err();
        assert!(err.is_divergence());
    }

    #[test]
    fn sym_eigen_orthogonality_at_larger_n() {
        let n = 50;
        let mut h = DMatrix::zeros(n, n);
        // deterministic well-scaled symmetric fill
        for i in 0..n {
            for j in 0..=i {
                let v = ((i * 31 + j * 17) as f64 * 0.7).sin();
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let eig = sym_eigen(&h).unwrap();
        let qtq = eig.vectors.transpose() * &eig.vectors;
        assert!(max_abs(&(qtq - DMatrix::identity(n, n))) <= 1e-10);
        let rec = &eig.vectors * DMatrix::from_diagonal(&eig.values) * eig.vectors.transpose();
        assert!(max_abs(&(rec - &h)) <= 1e-9 * (1.0 + max_abs(&h)));
    }

    #[test]
    fn pieces_zero_matrix() {
        let alpha = 1e3;
        let pieces = SoftAbsPieces::new(&DMatrix::zeros(4, 4), alpha).unwrap();
        for l in pieces.lambda_soft.iter() {
            assert_relative_eq!(*l, 1.0 / alpha, max_relative = 1e-14);
        }
        // both rules give the derivative at 0, which is 0
        assert!(max_abs(&pieces.jmat) < 1e-15);
    }

    #[test]
    fn pieces_parity_pair_gives_zero_divided_difference() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -2.0]));
        let pieces = SoftAbsPieces::new(&h, 1e6).unwrap();
        // columns may come in either order; the off-diagonal entry is the pair
        assert!(pieces.jmat[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn pieces_divided_difference_reference() {
        // lambda = 1 and 0 at alpha = 1: (coth 1 - 1) / 1
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let pieces = SoftAbsPieces::new(&h, 1.0).unwrap();
        assert_relative_eq!(pieces.jmat[(0, 1)], COTH_1 - 1.0, max_relative = 1e-12);
    }

    #[test]
    fn divided_diff_continuous_at_tie_threshold() {
        let alpha = 1.0;
        for base in [0.5f64, -1.2, 3.0] {
            let scale = 1.0 + 2.0 * base.abs();
            let just_above = base + 1.01 * EPS_TIE * scale;
            let just_below = base + 0.99 * EPS_TIE * scale;
            let a = softabs_divided_diff(base, just_above, alpha);
            let b = softabs_divided_diff(base, just_below, alpha);
            assert!((a - b).abs() <= 1e-6, "jump {} at base {base}", (a - b).abs());
        }
    }

    #[test]
    fn pieces_reconstruction_is_spd() {
        // deterministic pseudo-random symmetric matrices, N <= 20
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for &n in &[2usize, 7, 20] {
            for &alpha in &[1.0, 1e2, 1e6] {
                let mut h = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        let v = next();
                        h[(i, j)] = v;
                        h[(j, i)] = v;
                    }
                }
                let pieces = SoftAbsPieces::new(&h, alpha).unwrap();
                let metric = pieces.metric();
                let eig = sym_eigen(&metric).unwrap();
                let min = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(
                    min >= 0.999 / alpha,
                    "min eigenvalue {min} below floor at alpha={alpha}, n={n}"
                );
                // inv_apply really is the inverse of the reconstruction
                let p = DVector::from_fn(n, |i, _| (i as f64 * 0.37).cos());
                let back = &metric * pieces.inv_apply(&p);
                assert!((back - &p).amax() < 1e-8 * (1.0 + p.amax()));
            }
        }
    }

    proptest! {
        #[test]
        fn softabs_dominates_abs_and_floor(lambda in -10.0f64..10.0, which in 0usize..3) {
            let alpha = [1.0, 1e2, 1e6][which];
            let v = softabs(lambda, alpha);
            prop_assert!(v >= lambda.abs() - 1e-12 * (1.0 + lambda.abs()));
            prop_assert!(v >= 1.0 / alpha * (1.0 - 1e-12));
            // even
            prop_assert!((v - softabs(-lambda, alpha)).abs() <= 1e-12 * (1.0 + v));
        }

        #[test]
        fn softabs_monotone_in_abs_lambda(a in 0.0f64..10.0, b in 0.0f64..10.0, which in 0usize..3) {
            let alpha = [1.0, 1e2, 1e6][which];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(softabs(hi, alpha) >= softabs(lo, alpha) - 1e-12);
        }

        #[test]
        fn softabs_deriv_matches_finite_differences(lambda in -10.0f64..10.0, which in 0usize..3) {
            let alpha = [1.0, 1e2, 1e6][which];
            let u = (alpha * lambda).abs();
            // stay away from the regime switches where the FD stencil straddles branches
            prop_assume!(!(0.5e-4..2e-4).contains(&u));
            prop_assume!(!(17.0..19.0).contains(&u));
            let h = 1e-6 * (1.0 + lambda.abs());
            // keep both probes inside the same branch near the origin
            prop_assume!(u == 0.0 || alpha * h < 0.4 * u || u < 1e-5);
            let fd = (softabs(lambda + h, alpha) - softabs(lambda - h, alpha)) / (2.0 * h);
            let an = softabs_deriv(lambda, alpha);
            let scale = 1.0f64.max(an.abs());
            prop_assert!((fd - an).abs() <= 1e-5 * scale, "fd {fd} vs analytic {an}");
        }

        #[test]
        fn divided_diff_within_unit_interval(
            l1 in -10.0f64..10.0,
            l2 in -10.0f64..10.0,
            which in 0usize..3,
        ) {
            let alpha = [1.0, 1e2, 1e6][which];
            let j = softabs_divided_diff(l1, l2, alpha);
            // |softabs(a) - softabs(b)| <= |a - b| (the map is 1-Lipschitz)
            prop_assert!(j.abs() <= 1.0 + 1e-9);
        }
    }
}
