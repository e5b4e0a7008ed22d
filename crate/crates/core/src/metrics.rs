//! The metric family: Euclidean plus four SoftAbs variants.
//!
//! Each family supplies the kinetic term `tau = p^T Sigma^{-1}(q) p / 2`, the
//! position term `phi = log|Sigma(q)|/2 + V(q)`, momentum sampling with
//! covariance `Sigma(q)`, and the three gradients the integrator consumes:
//! `dtau/dp`, `dtau/dq`, `dphi/dq`.
//!
//! For the full SoftAbs metric the two position gradients use the cached
//! trace kernels `Q D J D Q^T` and `Q (R o J) Q^T`, so the whole gradient
//! costs O(N^3) instead of the O(N^4) of the naive per-component form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spectral::{softabs, softabs_deriv, SoftAbsPieces};
use crate::targets::Target;

/// Guard on `alpha * (g . g)` before sinh/cosh in the outer-product metric.
const OUTER_OVERFLOW: f64 = 700.0;

/// Which metric to run the chain under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricFamily {
    /// Constant diagonal mass matrix (EMHMC).
    Euclidean,
    /// SoftAbs of the full Hessian.
    SoftAbs,
    /// SoftAbs of the Hessian diagonal.
    DiagSoftAbs,
    /// SoftAbs propagated through the gradient outer product `g g^T`.
    OuterSoftAbs,
    /// SoftAbs of the squared gradient components.
    DiagOuterSoftAbs,
}

impl MetricFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricFamily::Euclidean => "euclidean",
            MetricFamily::SoftAbs => "softabs",
            MetricFamily::DiagSoftAbs => "diag-softabs",
            MetricFamily::OuterSoftAbs => "outer-softabs",
            MetricFamily::DiagOuterSoftAbs => "diag-outer-softabs",
        }
    }

    /// True for the position-dependent families that need the implicit
    /// generalized leapfrog; false for Euclidean, where explicit leapfrog
    /// applies.
    pub fn is_riemannian(&self) -> bool {
        !matches!(self, MetricFamily::Euclidean)
    }
}

impl std::str::FromStr for MetricFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "euclidean" => Ok(MetricFamily::Euclidean),
            "softabs" => Ok(MetricFamily::SoftAbs),
            "diag-softabs" => Ok(MetricFamily::DiagSoftAbs),
            "outer-softabs" => Ok(MetricFamily::OuterSoftAbs),
            "diag-outer-softabs" => Ok(MetricFamily::DiagOuterSoftAbs),
            other => Err(format!(
                "unknown metric family '{other}' (expected euclidean, softabs, \
                 diag-softabs, outer-softabs, or diag-outer-softabs)"
            )),
        }
    }
}

impl std::fmt::Display for MetricFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metric selection plus its parameters.
#[derive(Debug, Clone)]
pub struct MetricConfig {
    pub family: MetricFamily,
    /// SoftAbs regularization; unused for Euclidean.
    pub alpha: f64,
    /// Diagonal of the Euclidean mass matrix; `None` means identity.
    pub mass_diag: Option<DVector<f64>>,
}

impl MetricConfig {
    pub fn euclidean() -> Self {
        MetricConfig {
            family: MetricFamily::Euclidean,
            alpha: 1.0,
            mass_diag: None,
        }
    }

    pub fn new(family: MetricFamily, alpha: f64) -> Self {
        MetricConfig {
            family,
            alpha,
            mass_diag: None,
        }
    }

    pub fn softabs(alpha: f64) -> Self {
        Self::new(MetricFamily::SoftAbs, alpha)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.family.is_riemannian() && !(self.alpha > 0.0) {
            return Err(Error::Invalid(format!(
                "alpha must be positive for {}, got {}",
                self.family, self.alpha
            )));
        }
        if let Some(m) = &self.mass_diag {
            if m.len() != dim {
                return Err(Error::Invalid(format!(
                    "mass diagonal has length {}, expected {dim}",
                    m.len()
                )));
            }
            if !m.iter().all(|x| *x > 0.0 && x.is_finite()) {
                return Err(Error::Invalid("mass diagonal entries must be positive".into()));
            }
        }
        Ok(())
    }

    /// Build the position-dependent cache at `q`. All downstream metric
    /// operations read from the returned state; it is rebuilt on every
    /// position change.
    pub fn refresh<T: Target + ?Sized>(&self, model: &T, q: &DVector<f64>) -> Result<MetricState> {
        self.validate(model.dim())?;
        let potential = model.potential(q)?;
        let grad = model.gradient(q)?;
        let cache = match self.family {
            MetricFamily::Euclidean => Cache::Euclidean {
                mass: self
                    .mass_diag
                    .clone()
                    .unwrap_or_else(|| DVector::from_element(model.dim(), 1.0)),
            },
            MetricFamily::SoftAbs => {
                let hessian = model.hessian(q)?;
                let pieces = SoftAbsPieces::new(&hessian, self.alpha)?;
                let partials = model.hessian_partials(q)?;
                Cache::SoftAbs { pieces, partials }
            }
            MetricFamily::DiagSoftAbs => {
                let h_diag = model.hessian_diag(q)?;
                let lambda = diag_softabs_transform(&h_diag, self.alpha);
                let lambda_deriv = h_diag.map(|h| softabs_deriv(h, self.alpha));
                let diag_partials = model.hessian_partials_diag(q)?;
                Cache::DiagSoftAbs {
                    lambda,
                    lambda_deriv,
                    diag_partials,
                }
            }
            MetricFamily::OuterSoftAbs => {
                let coeffs = outer_softabs_coeffs(&grad, self.alpha)?;
                let hessian = model.hessian(q)?;
                Cache::OuterSoftAbs { coeffs, hessian }
            }
            MetricFamily::DiagOuterSoftAbs => {
                let lambda = diag_outer_softabs(&grad, self.alpha);
                let lambda_deriv = grad.map(|g| softabs_deriv(g * g, self.alpha));
                let hessian = model.hessian(q)?;
                Cache::DiagOuterSoftAbs {
                    lambda,
                    lambda_deriv,
                    hessian,
                }
            }
        };
        Ok(MetricState {
            q: q.clone(),
            potential,
            grad,
            cache,
        })
    }
}

/// Element-wise SoftAbs of a Hessian diagonal.
pub fn diag_softabs_transform(h_diag: &DVector<f64>, alpha: f64) -> DVector<f64> {
    h_diag.map(|h| softabs(h, alpha))
}

/// Element-wise SoftAbs of the squared gradient components.
pub fn diag_outer_softabs(g: &DVector<f64>, alpha: f64) -> DVector<f64> {
    g.map(|gi| softabs(gi * gi, alpha))
}

/// Scalar factors of the outer-product metric
/// `Sigma = a I + b g g^T` with `a = s/sinh(alpha s)`, `b = tanh(alpha s/2)`,
/// `s = g . g`, plus their derivatives in `s`.
#[derive(Debug, Clone, Copy)]
pub struct OuterCoeffs {
    pub s: f64,
    pub a: f64,
    pub a_ds: f64,
    pub b: f64,
    pub b_ds: f64,
}

/// Evaluate the outer-product metric factors. The sinh overflow guard turns
/// this family's characteristic instability into a recoverable divergence.
pub fn outer_softabs_coeffs(g: &DVector<f64>, alpha: f64) -> Result<OuterCoeffs> {
    if !(alpha > 0.0) {
        return Err(Error::Invalid(format!("alpha must be positive, got {alpha}")));
    }
    let s = g.dot(g);
    if !s.is_finite() {
        return Err(Error::NonFinite("gradient norm in outer-product metric"));
    }
    let u = alpha * s;
    if u > OUTER_OVERFLOW {
        return Err(Error::MetricOverflow(
            "alpha * |g|^2 too large for sinh in the outer-product metric",
        ));
    }
    let b = (0.5 * u).tanh();
    let b_ds = 0.5 * alpha * (1.0 - b * b);
    let (a, a_ds) = if u <= 1e-4 {
        // u/sinh(u) = 1 - u^2/6 + 7u^4/360, d/ds(s/sinh) = -u/3 + 7u^3/90
        (
            (1.0 - u * u / 6.0 + 7.0 * u.powi(4) / 360.0) / alpha,
            -u / 3.0 + 7.0 * u.powi(3) / 90.0,
        )
    } else {
        let sh = u.sinh();
        (s / sh, (1.0 - u * (u.cosh() / sh)) / sh)
    };
    Ok(OuterCoeffs { s, a, a_ds, b, b_ds })
}

impl OuterCoeffs {
    /// Dense `a I + b g g^T`; test and inspection helper, never on the hot path.
    pub fn dense(&self, g: &DVector<f64>) -> DMatrix<f64> {
        let n = g.len();
        DMatrix::identity(n, n) * self.a + g * g.transpose() * self.b
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Euclidean {
        mass: DVector<f64>,
    },
    SoftAbs {
        pieces: SoftAbsPieces,
        partials: Vec<DMatrix<f64>>,
    },
    DiagSoftAbs {
        lambda: DVector<f64>,
        lambda_deriv: DVector<f64>,
        diag_partials: Vec<DVector<f64>>,
    },
    OuterSoftAbs {
        coeffs: OuterCoeffs,
        hessian: DMatrix<f64>,
    },
    DiagOuterSoftAbs {
        lambda: DVector<f64>,
        lambda_deriv: DVector<f64>,
        hessian: DMatrix<f64>,
    },
}

/// Immutable position-dependent cache: the metric pieces at one `q`, plus the
/// potential and its gradient evaluated there.
#[derive(Debug, Clone)]
pub struct MetricState {
    q: DVector<f64>,
    potential: f64,
    grad: DVector<f64>,
    cache: Cache,
}

/// `Tr[A B]` for symmetric A, B via the element-wise product.
fn sym_trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

impl MetricState {
    pub fn position(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `V(q)` as cached at refresh.
    pub fn potential(&self) -> f64 {
        self.potential
    }

    /// `dV/dq` as cached at refresh.
    pub fn potential_gradient(&self) -> &DVector<f64> {
        &self.grad
    }

    /// SoftAbs spectral pieces, when this state belongs to the full family.
    pub fn softabs_pieces(&self) -> Option<&SoftAbsPieces> {
        match &self.cache {
            Cache::SoftAbs { pieces, .. } => Some(pieces),
            _ => None,
        }
    }

    /// Transformed eigenvalue set of the diagonal families.
    pub fn diag_lambda(&self) -> Option<&DVector<f64>> {
        match &self.cache {
            Cache::DiagSoftAbs { lambda, .. } | Cache::DiagOuterSoftAbs { lambda, .. } => {
                Some(lambda)
            }
            _ => None,
        }
    }

    /// Kinetic term `p^T Sigma^{-1} p / 2`.
    pub fn tau(&self, p: &DVector<f64>) -> f64 {
        match &self.cache {
            Cache::Euclidean { mass } => {
                0.5 * p.iter().zip(mass.iter()).map(|(pi, mi)| pi * pi / mi).sum::<f64>()
            }
            Cache::SoftAbs { pieces, .. } => 0.5 * pieces.inv_quad_form(p),
            Cache::DiagSoftAbs { lambda, .. } | Cache::DiagOuterSoftAbs { lambda, .. } => {
                0.5 * p.iter().zip(lambda.iter()).map(|(pi, li)| pi * pi / li).sum::<f64>()
            }
            Cache::OuterSoftAbs { coeffs, .. } => {
                // Sherman-Morrison on Sigma = a I + b g g^T
                let OuterCoeffs { s, a, b, .. } = *coeffs;
                let gp = self.grad.dot(p);
                p.dot(p) / (2.0 * a) - b * gp * gp / (2.0 * a * (a + b * s))
            }
        }
    }

    /// Position term `log|Sigma(q)|/2 + V(q)`; the constant `log|M|/2` of the
    /// Euclidean family is dropped (it cancels in every accept ratio).
    pub fn phi(&self) -> f64 {
        let log_det_half = match &self.cache {
            Cache::Euclidean { .. } => 0.0,
            Cache::SoftAbs { pieces, .. } => 0.5 * pieces.log_det(),
            Cache::DiagSoftAbs { lambda, .. } | Cache::DiagOuterSoftAbs { lambda, .. } => {
                0.5 * lambda.iter().map(|l| l.ln()).sum::<f64>()
            }
            Cache::OuterSoftAbs { coeffs, .. } => {
                let OuterCoeffs { s, a, b, .. } = *coeffs;
                let n = self.q.len() as f64;
                0.5 * ((n - 1.0) * a.ln() + (a + b * s).ln())
            }
        };
        log_det_half + self.potential
    }

    /// Total energy `tau + phi`.
    pub fn hamiltonian(&self, p: &DVector<f64>) -> f64 {
        self.tau(p) + self.phi()
    }

    /// `dtau/dp = Sigma^{-1} p`, never forming a dense inverse.
    pub fn dtau_dp(&self, p: &DVector<f64>) -> DVector<f64> {
        match &self.cache {
            Cache::Euclidean { mass } => {
                DVector::from_fn(p.len(), |i, _| p[i] / mass[i])
            }
            Cache::SoftAbs { pieces, .. } => pieces.inv_apply(p),
            Cache::DiagSoftAbs { lambda, .. } | Cache::DiagOuterSoftAbs { lambda, .. } => {
                DVector::from_fn(p.len(), |i, _| p[i] / lambda[i])
            }
            Cache::OuterSoftAbs { coeffs, .. } => {
                let OuterCoeffs { s, a, b, .. } = *coeffs;
                let g = &self.grad;
                let scale = b * g.dot(p) / (a * (a + b * s));
                p / a - g * scale
            }
        }
    }

    /// `dtau/dq`, the implicit momentum force of the Riemannian families.
    pub fn dtau_dq(&self, p: &DVector<f64>) -> DVector<f64> {
        let n = self.q.len();
        match &self.cache {
            Cache::Euclidean { .. } => DVector::zeros(n),
            Cache::SoftAbs { pieces, partials } => {
                // kernel Q D J D Q^T with D = Diag((Q^T p)_i / lambda_soft_i);
                // each component is then one O(N^2) trace
                let q = &pieces.eig.vectors;
                let w = q.transpose() * p;
                let d = DVector::from_fn(n, |i, _| w[i] / pieces.lambda_soft[i]);
                let mut inner = pieces.jmat.clone();
                for i in 0..n {
                    for j in 0..n {
                        inner[(i, j)] *= d[i] * d[j];
                    }
                }
                let kernel = q * inner * q.transpose();
                DVector::from_fn(n, |k, _| -0.5 * sym_trace_product(&kernel, &partials[k]))
            }
            Cache::DiagSoftAbs {
                lambda,
                lambda_deriv,
                diag_partials,
            } => DVector::from_fn(n, |k, _| {
                -0.5 * (0..n)
                    .map(|i| {
                        let pi = p[i];
                        (pi * pi / (lambda[i] * lambda[i])) * lambda_deriv[i] * diag_partials[k][i]
                    })
                    .sum::<f64>()
            }),
            Cache::OuterSoftAbs { coeffs, hessian } => {
                let OuterCoeffs { s, a, a_ds, b, b_ds } = *coeffs;
                let g = &self.grad;
                let gp = g.dot(p);
                let hg = hessian * g;
                let hp = hessian * p;
                // c = b / (2a(a + bs)) and its s-derivative by the quotient rule
                let denom = 2.0 * a * (a + b * s);
                let c = b / denom;
                let denom_ds = 2.0 * a_ds * (a + b * s) + 2.0 * a * (a_ds + b_ds * s + b);
                let c_ds = (b_ds * denom - b * denom_ds) / (denom * denom);
                let pp = p.dot(p);
                DVector::from_fn(n, |k, _| {
                    let s_dk = 2.0 * hg[k];
                    -pp / (2.0 * a * a) * a_ds * s_dk - c_ds * s_dk * gp * gp
                        - 2.0 * c * gp * hp[k]
                })
            }
            Cache::DiagOuterSoftAbs {
                lambda,
                lambda_deriv,
                hessian,
            } => {
                // d lambda_i / dq_k = f'(g_i^2) * 2 g_i H_ik
                let w = DVector::from_fn(n, |i, _| {
                    let pi = p[i];
                    (pi * pi / (lambda[i] * lambda[i])) * lambda_deriv[i] * self.grad[i]
                });
                -(hessian * w)
            }
        }
    }

    /// `dphi/dq`: half the log-determinant gradient plus the potential
    /// gradient.
    pub fn dphi_dq(&self) -> DVector<f64> {
        let n = self.q.len();
        match &self.cache {
            Cache::Euclidean { .. } => self.grad.clone(),
            Cache::SoftAbs { pieces, partials } => {
                // kernel Q (R o J) Q^T; R diagonal, so only J's diagonal survives
                let q = &pieces.eig.vectors;
                let r_j = DVector::from_fn(n, |i, _| {
                    pieces.jmat[(i, i)] / pieces.lambda_soft[i]
                });
                let kernel = q * DMatrix::from_diagonal(&r_j) * q.transpose();
                DVector::from_fn(n, |k, _| {
                    0.5 * sym_trace_product(&kernel, &partials[k]) + self.grad[k]
                })
            }
            Cache::DiagSoftAbs {
                lambda,
                lambda_deriv,
                diag_partials,
            } => DVector::from_fn(n, |k, _| {
                0.5 * (0..n)
                    .map(|i| lambda_deriv[i] / lambda[i] * diag_partials[k][i])
                    .sum::<f64>()
                    + self.grad[k]
            }),
            Cache::OuterSoftAbs { coeffs, hessian } => {
                let OuterCoeffs { s, a, a_ds, b, b_ds } = *coeffs;
                let g = &self.grad;
                let hg = hessian * g;
                let nn = n as f64;
                let factor =
                    0.5 * ((nn - 1.0) * a_ds / a + (a_ds + b_ds * s + b) / (a + b * s));
                DVector::from_fn(n, |k, _| factor * 2.0 * hg[k] + g[k])
            }
            Cache::DiagOuterSoftAbs {
                lambda,
                lambda_deriv,
                hessian,
            } => {
                let w = DVector::from_fn(n, |i, _| lambda_deriv[i] * self.grad[i] / lambda[i]);
                hessian * w + &self.grad
            }
        }
    }

    /// Draw `p ~ N(0, Sigma(q))` by applying a square-root factor of the
    /// metric to standard normals. Deterministic given the rng state.
    pub fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.q.len();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        match &self.cache {
            Cache::Euclidean { mass } => DVector::from_fn(n, |i, _| z[i] * mass[i].sqrt()),
            Cache::SoftAbs { pieces, .. } => pieces.sqrt_apply(&z),
            Cache::DiagSoftAbs { lambda, .. } | Cache::DiagOuterSoftAbs { lambda, .. } => {
                DVector::from_fn(n, |i, _| z[i] * lambda[i].sqrt())
            }
            Cache::OuterSoftAbs { coeffs, .. } => {
                // A = sqrt(a) I + (b / (sqrt(a+bs) + sqrt(a))) g g^T satisfies
                // A A^T = a I + b g g^T; the quotient form is stable as s -> 0
                let OuterCoeffs { s, a, b, .. } = *coeffs;
                let g = &self.grad;
                let scale = b * g.dot(&z) / ((a + b * s).sqrt() + a.sqrt());
                &z * a.sqrt() + g * scale
            }
        }
    }
}

/// A target bundled with the metric it is sampled under.
pub struct System<'a, T: Target + ?Sized> {
    pub model: &'a T,
    pub metric: MetricConfig,
}

impl<'a, T: Target + ?Sized> System<'a, T> {
    pub fn new(model: &'a T, metric: MetricConfig) -> Self {
        System { model, metric }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn refresh(&self, q: &DVector<f64>) -> Result<MetricState> {
        self.metric.refresh(self.model, q)
    }
}
