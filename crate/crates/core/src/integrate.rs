//! Symplectic integrators: explicit leapfrog for the Euclidean metric and the
//! implicit generalized leapfrog for the position-dependent families.
//!
//! The generalized scheme realizes the splitting
//! `Phi_t = phi_{t/2} o tau_{t/2} o T_t o tau_{t/2} o phi_{t/2}`: an explicit
//! half kick from `dphi/dq`, a fixed-point half kick from `dtau/dq`, an
//! implicit position update averaging `dtau/dp` at the old and new points,
//! then the mirrored explicit kicks. Both fixed-point loops run to a
//! threshold, not a fixed count, so non-convergence surfaces as a divergence
//! instead of a bias.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::metrics::{MetricFamily, MetricState, System};
use crate::targets::Target;

/// Step size, trajectory length, and fixed-point controls.
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub epsilon: f64,
    pub n_steps: usize,
    /// Max-abs-component convergence threshold of the fixed-point loops.
    pub fp_threshold: f64,
    pub fp_max_iters: usize,
}

impl IntegratorConfig {
    pub fn new(epsilon: f64, n_steps: usize) -> Self {
        IntegratorConfig {
            epsilon,
            n_steps,
            fp_threshold: 1e-12,
            fp_max_iters: 100,
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        IntegratorConfig {
            epsilon,
            ..self.clone()
        }
    }
}

/// One point in phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhaseState {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        PhaseState { q, p }
    }

    /// Momentum flip; composing step-flip-step-flip must return the start.
    pub fn flip(&self) -> Self {
        PhaseState {
            q: self.q.clone(),
            p: -&self.p,
        }
    }
}

/// Fixed-point iteration counts for one generalized-leapfrog step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepReport {
    pub p_iters: usize,
    pub q_iters: usize,
}

/// Result of integrating a full trajectory.
#[derive(Debug)]
pub struct Trajectory {
    pub end: PhaseState,
    /// Metric cache at the final position, reusable by the caller.
    pub end_metric: MetricState,
    pub h_start: f64,
    pub h_end: f64,
    /// Hamiltonian after 0, 1, ..., L steps.
    pub energies: Vec<f64>,
    /// Per-step phase-space log, populated only when requested.
    pub rows: Option<Vec<TrajectoryRow>>,
    pub max_fp_iters: usize,
}

impl Trajectory {
    pub fn delta_h(&self) -> f64 {
        self.h_end - self.h_start
    }
}

/// One logged trajectory point.
#[derive(Debug)]
pub struct TrajectoryRow {
    pub step: usize,
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub h: f64,
}

fn ensure_finite(v: &DVector<f64>, context: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Explicit leapfrog step for a constant diagonal mass matrix.
fn euclidean_step<T: Target + ?Sized>(
    sys: &System<'_, T>,
    st: &MetricState,
    p: &DVector<f64>,
    epsilon: f64,
) -> Result<(MetricState, DVector<f64>)> {
    let half = 0.5 * epsilon;
    let p_half = p - st.dphi_dq() * half;
    let q_new = st.position() + st.dtau_dp(&p_half) * epsilon;
    ensure_finite(&q_new, "leapfrog position update")?;
    let st_new = sys.refresh(&q_new)?;
    let p_new = p_half - st_new.dphi_dq() * half;
    ensure_finite(&p_new, "leapfrog momentum update")?;
    Ok((st_new, p_new))
}

/// Implicit generalized leapfrog step; the metric is refreshed at each new
/// position iterate and once more after the position update, before the
/// closing kicks, which keeps the map self-adjoint (and hence reversible).
fn generalized_step<T: Target + ?Sized>(
    sys: &System<'_, T>,
    st: &MetricState,
    p: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<(MetricState, DVector<f64>, StepReport)> {
    let half = 0.5 * cfg.epsilon;

    // explicit phi half kick
    let mut p_cur = p - st.dphi_dq() * half;
    ensure_finite(&p_cur, "phi half kick")?;

    // implicit momentum half kick: p = rho - (eps/2) dtau/dq(p, q), solved by
    // fixed point starting from rho (the metric stays at the entry position)
    let rho = p_cur.clone();
    let mut p_iters = 0;
    loop {
        p_iters += 1;
        let cand = &rho - st.dtau_dq(&p_cur) * half;
        ensure_finite(&cand, "momentum fixed point")?;
        let delta = (&cand - &p_cur).amax();
        p_cur = cand;
        if delta <= cfg.fp_threshold {
            break;
        }
        if p_iters >= cfg.fp_max_iters {
            return Err(Error::FixedPointStall {
                max_iters: cfg.fp_max_iters,
                residual: delta,
            });
        }
    }

    // implicit position update: q = sigma + (eps/2)[dtau/dp(p, sigma) + dtau/dp(p, q)];
    // the first term is constant over the loop, the second refreshes per iterate.
    // The first candidate evaluates both terms at sigma, as written in the
    // pre-update initialization.
    let sigma = st.position();
    let fixed_half = st.dtau_dp(&p_cur) * half;
    let mut cand = sigma + &fixed_half + &fixed_half;
    ensure_finite(&cand, "position fixed point")?;
    let mut delta = (&cand - sigma).amax();
    let mut q_cur = cand;
    let mut q_iters = 1;
    while delta > cfg.fp_threshold {
        if q_iters >= cfg.fp_max_iters {
            return Err(Error::FixedPointStall {
                max_iters: cfg.fp_max_iters,
                residual: delta,
            });
        }
        let st_cur = sys.refresh(&q_cur)?;
        q_iters += 1;
        cand = sigma + &fixed_half + st_cur.dtau_dp(&p_cur) * half;
        ensure_finite(&cand, "position fixed point")?;
        delta = (&cand - &q_cur).amax();
        q_cur = cand;
    }

    // metric at the settled position, then the mirrored explicit kicks
    let st_new = sys.refresh(&q_cur)?;
    let p_after_tau = &p_cur - st_new.dtau_dq(&p_cur) * half;
    let p_new = p_after_tau - st_new.dphi_dq() * half;
    ensure_finite(&p_new, "closing kicks")?;
    Ok((st_new, p_new, StepReport { p_iters, q_iters }))
}

/// One explicit leapfrog step. Only valid for the Euclidean family, where
/// `dtau/dq = 0` makes the scheme exact for the splitting.
pub fn leapfrog_step<T: Target + ?Sized>(
    sys: &System<'_, T>,
    state: &PhaseState,
    epsilon: f64,
) -> Result<PhaseState> {
    if sys.metric.family != MetricFamily::Euclidean {
        return Err(Error::Invalid(format!(
            "explicit leapfrog requires the euclidean family, got {}",
            sys.metric.family
        )));
    }
    let st = sys.refresh(&state.q)?;
    let (st_new, p_new) = euclidean_step(sys, &st, &state.p, epsilon)?;
    Ok(PhaseState::new(st_new.position().clone(), p_new))
}

/// One generalized leapfrog step (any metric family).
pub fn gen_leapfrog_step<T: Target + ?Sized>(
    sys: &System<'_, T>,
    state: &PhaseState,
    cfg: &IntegratorConfig,
) -> Result<(PhaseState, StepReport)> {
    let st = sys.refresh(&state.q)?;
    let (st_new, p_new, report) = generalized_step(sys, &st, &state.p, cfg)?;
    Ok((PhaseState::new(st_new.position().clone(), p_new), report))
}

/// Integrate `n_steps` composed steps, dispatching to the explicit scheme for
/// the Euclidean family and the generalized one otherwise. The first
/// divergent step aborts the whole trajectory.
pub fn integrate_trajectory<T: Target + ?Sized>(
    sys: &System<'_, T>,
    state: &PhaseState,
    cfg: &IntegratorConfig,
    record: bool,
) -> Result<Trajectory> {
    let st = sys.refresh(&state.q)?;
    integrate_from(sys, &st, &state.p, cfg, record)
}

/// Like [`integrate_trajectory`] but starting from an already refreshed
/// metric state; the sampler uses this so a rejected transition never pays
/// for re-deriving the cache it kept.
pub fn integrate_from<T: Target + ?Sized>(
    sys: &System<'_, T>,
    start: &MetricState,
    p0: &DVector<f64>,
    cfg: &IntegratorConfig,
    record: bool,
) -> Result<Trajectory> {
    let mut p = p0.clone();
    let h_start = start.hamiltonian(&p);
    if !h_start.is_finite() {
        return Err(Error::NonFinite("initial hamiltonian"));
    }
    let mut energies = Vec::with_capacity(cfg.n_steps + 1);
    energies.push(h_start);
    let mut rows = record.then(|| {
        vec![TrajectoryRow {
            step: 0,
            q: start.position().clone(),
            p: p.clone(),
            h: h_start,
        }]
    });
    let mut max_fp_iters = 0;
    let mut cur: Option<MetricState> = None;

    let explicit = sys.metric.family == MetricFamily::Euclidean;
    for step in 1..=cfg.n_steps {
        let st_ref = cur.as_ref().unwrap_or(start);
        let st_new = if explicit {
            let (st_new, p_new) = euclidean_step(sys, st_ref, &p, cfg.epsilon)?;
            p = p_new;
            st_new
        } else {
            let (st_new, p_new, report) = generalized_step(sys, st_ref, &p, cfg)?;
            p = p_new;
            max_fp_iters = max_fp_iters.max(report.p_iters).max(report.q_iters);
            st_new
        };
        let h = st_new.hamiltonian(&p);
        if !h.is_finite() {
            return Err(Error::NonFinite("hamiltonian along trajectory"));
        }
        energies.push(h);
        if let Some(rows) = rows.as_mut() {
            rows.push(TrajectoryRow {
                step,
                q: st_new.position().clone(),
                p: p.clone(),
                h,
            });
        }
        cur = Some(st_new);
    }

    let end_metric = cur.unwrap_or_else(|| start.clone());
    let h_end = *energies.last().expect("at least the initial energy");
    Ok(Trajectory {
        end: PhaseState::new(end_metric.position().clone(), p.clone()),
        end_metric,
        h_start,
        h_end,
        energies,
        rows,
        max_fp_iters,
    })
}
