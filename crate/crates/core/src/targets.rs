//! Target distributions exposing the potential and its derivatives through
//! third order.
//!
//! The sampler works with `V(q) = -log pi(q)` up to an additive constant;
//! only differences of `V` enter accept ratios, so constants are dropped
//! everywhere. Coordinate layout for the funnel is `(x_1 .. x_n, v)` with
//! the latent scale `v` last.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest funnel `v` before `exp(v)` is treated as an overflow; surfaced as
/// a divergence so the sampler rejects instead of propagating infinities.
const FUNNEL_V_MAX: f64 = 700.0;

/// A target distribution with analytic derivatives up to the third order.
///
/// New targets implement the four derivative operations; targets without
/// analytic third derivatives can delegate `hessian_partials` to
/// [`fd_hessian_partials`]. The two `*_diag` methods are cheap paths for the
/// diagonal metric families and default to slicing the dense results.
pub trait Target {
    fn dim(&self) -> usize;
    fn name(&self) -> &str;

    /// `V(q)`, additive constants dropped.
    fn potential(&self, q: &DVector<f64>) -> Result<f64>;
    /// `dV/dq`.
    fn gradient(&self, q: &DVector<f64>) -> Result<DVector<f64>>;
    /// Symmetric matrix `d^2 V / dq_i dq_j`.
    fn hessian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>>;
    /// One symmetric matrix `dH/dq_n` per coordinate.
    fn hessian_partials(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>>;

    /// Diagonal of the Hessian.
    fn hessian_diag(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.hessian(q)?.diagonal())
    }

    /// For each coordinate `n`, the vector over `i` of `d H_ii / dq_n`.
    fn hessian_partials_diag(&self, q: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        Ok(self
            .hessian_partials(q)?
            .into_iter()
            .map(|m| m.diagonal())
            .collect())
    }
}

fn check_point<T: Target + ?Sized>(model: &T, q: &DVector<f64>) -> Result<()> {
    if q.len() != model.dim() {
        return Err(Error::Invalid(format!(
            "point has dimension {}, target {} expects {}",
            q.len(),
            model.name(),
            model.dim()
        )));
    }
    if !q.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("position"));
    }
    Ok(())
}

fn finite(value: f64, context: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Neal's funnel: `x_i ~ N(0, exp(-v))` for `i = 1..n`, `v ~ N(0, 9)`.
///
/// `V(x, v) = (e^v / 2) sum x_i^2 - n v / 2 + v^2 / 18`. The exact marginal
/// `v ~ N(0, 9)` holds for every `n`, which makes `v` the bias oracle used
/// throughout the test suites.
#[derive(Debug, Clone)]
pub struct Funnel {
    n: usize,
}

impl Funnel {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "funnel needs at least one x coordinate");
        Funnel { n }
    }

    /// Number of `x` coordinates (total dimension is `n + 1`).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Index of the latent scale coordinate `v` in the layout.
    pub fn v_index(&self) -> usize {
        self.n
    }

    fn split(&self, q: &DVector<f64>) -> Result<(f64, f64)> {
        let v = q[self.n];
        if v > FUNNEL_V_MAX {
            return Err(Error::NonFinite("funnel exp(v) overflow"));
        }
        let sum_sq: f64 = (0..self.n).map(|i| q[i] * q[i]).sum();
        Ok((v, sum_sq))
    }
}

impl Target for Funnel {
    fn dim(&self) -> usize {
        self.n + 1
    }

    fn name(&self) -> &str {
        "funnel"
    }

    fn potential(&self, q: &DVector<f64>) -> Result<f64> {
        check_point(self, q)?;
        let (v, sum_sq) = self.split(q)?;
        let ev = v.exp();
        finite(
            0.5 * ev * sum_sq - 0.5 * self.n as f64 * v + v * v / 18.0,
            "funnel potential",
        )
    }

    fn gradient(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        check_point(self, q)?;
        let (v, sum_sq) = self.split(q)?;
        let ev = v.exp();
        let mut g = DVector::zeros(self.n + 1);
        for i in 0..self.n {
            g[i] = q[i] * ev;
        }
        g[self.n] = 0.5 * ev * sum_sq - 0.5 * self.n as f64 + v / 9.0;
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("funnel gradient"));
        }
        Ok(g)
    }

    fn hessian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_point(self, q)?;
        let (v, sum_sq) = self.split(q)?;
        let ev = v.exp();
        let n = self.n;
        let mut h = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            h[(i, i)] = ev;
            let cross = q[i] * ev;
            h[(i, n)] = cross;
            h[(n, i)] = cross;
        }
        h[(n, n)] = 0.5 * ev * sum_sq + 1.0 / 9.0;
        if !h.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("funnel hessian"));
        }
        Ok(h)
    }

    fn hessian_partials(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        check_point(self, q)?;
        let (v, sum_sq) = self.split(q)?;
        let ev = v.exp();
        let n = self.n;
        let mut out = Vec::with_capacity(n + 1);
        // d/dx_k: only the (k, v) cross term and the (v, v) entry move
        for k in 0..n {
            let mut m = DMatrix::zeros(n + 1, n + 1);
            m[(k, n)] = ev;
            m[(n, k)] = ev;
            m[(n, n)] = q[k] * ev;
            out.push(m);
        }
        // d/dv: every exp(v) factor differentiates to itself
        let mut m = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            m[(i, i)] = ev;
            let cross = q[i] * ev;
            m[(i, n)] = cross;
            m[(n, i)] = cross;
        }
        m[(n, n)] = 0.5 * ev * sum_sq;
        out.push(m);
        if !ev.is_finite() || !sum_sq.is_finite() {
            return Err(Error::NonFinite("funnel hessian partials"));
        }
        Ok(out)
    }

    fn hessian_diag(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        check_point(self, q)?;
        let (v, sum_sq) = self.split(q)?;
        let ev = v.exp();
        let mut d = DVector::from_element(self.n + 1, ev);
        d[self.n] = 0.5 * ev * sum_sq + 1.0 / 9.0;
        if !d.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("funnel hessian diagonal"));
        }
        Ok(d)
    }

    fn hessian_partials_diag(&self, q: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        check_point(self, q)?;
        let (v, sum_sq) = self.split(q)?;
        let ev = v.exp();
        let n = self.n;
        let mut out = Vec::with_capacity(n + 1);
        for k in 0..n {
            let mut d = DVector::zeros(n + 1);
            d[n] = q[k] * ev;
            out.push(d);
        }
        let mut d = DVector::from_element(n + 1, ev);
        d[n] = 0.5 * ev * sum_sq;
        out.push(d);
        Ok(out)
    }
}

/// Quadratic potential `V(q) = q^T P q / 2` with a constant symmetric
/// precision `P`.
///
/// With SPD `P` this is the multivariate Gaussian `N(0, P^{-1})`; indefinite
/// `P` is accepted too, which gives the constant-Hessian test bed the SoftAbs
/// metric is designed to regularize.
#[derive(Debug, Clone)]
pub struct Gaussian {
    precision: DMatrix<f64>,
}

impl Gaussian {
    /// Standard normal in `dim` dimensions (`P = I`).
    pub fn standard(dim: usize) -> Self {
        Gaussian {
            precision: DMatrix::identity(dim, dim),
        }
    }

    /// Independent coordinates with the given precisions.
    pub fn with_precision_diag(diag: &[f64]) -> Self {
        Gaussian {
            precision: DMatrix::from_diagonal(&DVector::from_row_slice(diag)),
        }
    }

    /// Arbitrary symmetric precision matrix.
    pub fn with_precision(precision: DMatrix<f64>) -> Self {
        assert_eq!(precision.nrows(), precision.ncols(), "precision must be square");
        Gaussian { precision }
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl Target for Gaussian {
    fn dim(&self) -> usize {
        self.precision.nrows()
    }

    fn name(&self) -> &str {
        "gaussian"
    }

    fn potential(&self, q: &DVector<f64>) -> Result<f64> {
        check_point(self, q)?;
        finite(0.5 * (q.transpose() * &self.precision * q)[0], "gaussian potential")
    }

    fn gradient(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        check_point(self, q)?;
        Ok(&self.precision * q)
    }

    fn hessian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_point(self, q)?;
        Ok(self.precision.clone())
    }

    fn hessian_partials(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        check_point(self, q)?;
        let n = self.dim();
        Ok(vec![DMatrix::zeros(n, n); n])
    }
}

/// Central finite differences of the potential; cross-check for `gradient`.
pub fn fd_gradient<T: Target + ?Sized>(model: &T, q: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let n = model.dim();
    let mut g = DVector::zeros(n);
    let mut probe = q.clone();
    for i in 0..n {
        probe[i] = q[i] + h;
        let plus = model.potential(&probe)?;
        probe[i] = q[i] - h;
        let minus = model.potential(&probe)?;
        probe[i] = q[i];
        g[i] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

/// Central finite differences of the gradient; cross-check for `hessian`.
pub fn fd_hessian<T: Target + ?Sized>(model: &T, q: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let n = model.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut probe = q.clone();
    for i in 0..n {
        probe[i] = q[i] + h;
        let plus = model.gradient(&probe)?;
        probe[i] = q[i] - h;
        let minus = model.gradient(&probe)?;
        probe[i] = q[i];
        let col = (plus - minus) / (2.0 * h);
        m.set_column(i, &col);
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Central finite differences of the Hessian, symmetrized per slice.
///
/// Documented fallback for user-supplied targets lacking analytic third
/// derivatives.
pub fn fd_hessian_partials<T: Target + ?Sized>(
    model: &T,
    q: &DVector<f64>,
    h: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let n = model.dim();
    let mut out = Vec::with_capacity(n);
    let mut probe = q.clone();
    for i in 0..n {
        probe[i] = q[i] + h;
        let plus = model.hessian(&probe)?;
        probe[i] = q[i] - h;
        let minus = model.hessian(&probe)?;
        probe[i] = q[i];
        let m = (plus - minus) / (2.0 * h);
        out.push((&m + m.transpose()) * 0.5);
    }
    Ok(out)
}
