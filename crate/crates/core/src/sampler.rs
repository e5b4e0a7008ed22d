//! The HMC Markov chain: momentum refresh, trajectory proposal, Metropolis
//! correction, dual-averaging warm-up, sample collection.
//!
//! A chain is strictly sequential; parallelism is across chains, each with
//! its own seed. All randomness flows from one ChaCha8 stream keyed by a
//! 64-bit seed, so identical configs give bit-identical output.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::integrate::{integrate_from, IntegratorConfig};
use crate::metrics::{MetricConfig, MetricState, System};
use crate::targets::Target;

/// The stream every run draws from: ChaCha8 keyed by a 64-bit seed. The
/// generator is platform-independent, so seeded outputs are portable.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dual-averaging hyperparameters. The defaults are the de facto standards
/// for this scheme; only the target rate usually needs choosing.
#[derive(Debug, Clone, Copy)]
pub struct AdaptConfig {
    pub target_accept: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
}

impl AdaptConfig {
    pub fn with_target(target_accept: f64) -> Self {
        AdaptConfig {
            target_accept,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }
}

/// Dual-averaging recursion steering log(epsilon) toward the target accept
/// rate. During warm-up the chain runs at `current()`; afterwards it freezes
/// at `averaged()`.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    cfg: AdaptConfig,
    mu: f64,
    log_eps: f64,
    log_eps_avg: f64,
    h_stat: f64,
    iter: u64,
}

impl DualAveraging {
    pub fn new(cfg: AdaptConfig, eps_init: f64) -> Self {
        DualAveraging {
            cfg,
            mu: (10.0 * eps_init).ln(),
            log_eps: eps_init.ln(),
            // freezes at eps_init if no update ever happens; overwritten by
            // the first update (its weight is 1 at m = 1)
            log_eps_avg: eps_init.ln(),
            h_stat: 0.0,
            iter: 0,
        }
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.iter += 1;
        let m = self.iter as f64;
        let eta = 1.0 / (m + self.cfg.t0);
        self.h_stat = (1.0 - eta) * self.h_stat + eta * (self.cfg.target_accept - accept_prob);
        self.log_eps = self.mu - m.sqrt() / self.cfg.gamma * self.h_stat;
        let w = m.powf(-self.cfg.kappa);
        self.log_eps_avg = w * self.log_eps + (1.0 - w) * self.log_eps_avg;
    }

    /// Step size for the next warm-up transition.
    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Averaged step size the sampling phase freezes at.
    pub fn averaged(&self) -> f64 {
        self.log_eps_avg.exp()
    }
}

/// Full chain configuration. `integrator.epsilon` is the fixed step size, or
/// the initial one when `adapt` is set.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub metric: MetricConfig,
    pub integrator: IntegratorConfig,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub adapt: Option<AdaptConfig>,
    pub seed: u64,
    pub init_range: (f64, f64),
}

impl ChainConfig {
    pub fn new(metric: MetricConfig, integrator: IntegratorConfig) -> Self {
        ChainConfig {
            metric,
            integrator,
            n_warmup: 0,
            n_samples: 0,
            adapt: None,
            seed: 0,
            init_range: (-1.0, 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.integrator.epsilon > 0.0) {
            return Err(Error::Invalid(format!(
                "step size must be positive, got {}",
                self.integrator.epsilon
            )));
        }
        if self.integrator.n_steps == 0 {
            return Err(Error::Invalid("need at least one integration step".into()));
        }
        if !(self.integrator.fp_threshold > 0.0) {
            return Err(Error::Invalid("fixed-point threshold must be positive".into()));
        }
        if self.adapt.is_none() && self.integrator.fp_threshold >= self.integrator.epsilon {
            return Err(Error::Invalid(format!(
                "fixed-point threshold {} must be below the step size {}",
                self.integrator.fp_threshold, self.integrator.epsilon
            )));
        }
        if let Some(a) = &self.adapt {
            if !(a.target_accept > 0.0 && a.target_accept < 1.0) {
                return Err(Error::Invalid(format!(
                    "target accept rate must lie in (0, 1), got {}",
                    a.target_accept
                )));
            }
        }
        if !(self.init_range.0 < self.init_range.1) {
            return Err(Error::Invalid("empty initialization range".into()));
        }
        Ok(())
    }
}

/// What one Metropolis transition did.
pub struct TransitionOutcome {
    /// New metric state on acceptance; `None` means the position is retained.
    pub next: Option<MetricState>,
    /// `min(1, exp(-dH))`; exactly 0 for a divergent trajectory.
    pub accept_prob: f64,
    /// Energy change of the proposal; NaN when the trajectory diverged.
    pub delta_h: f64,
    pub divergent: bool,
}

impl TransitionOutcome {
    pub fn accepted(&self) -> bool {
        self.next.is_some()
    }
}

/// One HMC transition: fresh momentum, `n_steps` of integration, Metropolis
/// accept-reject. Divergences reject; they are never fatal.
pub fn hmc_transition<T: Target + ?Sized, R: Rng + ?Sized>(
    sys: &System<'_, T>,
    st: &MetricState,
    integrator: &IntegratorConfig,
    rng: &mut R,
) -> Result<TransitionOutcome> {
    let p = st.sample_momentum(rng);
    match integrate_from(sys, st, &p, integrator, false) {
        Ok(tr) => {
            let delta_h = tr.delta_h();
            if !delta_h.is_finite() {
                return Ok(TransitionOutcome {
                    next: None,
                    accept_prob: 0.0,
                    delta_h: f64::NAN,
                    divergent: true,
                });
            }
            let accept_prob = (-delta_h).exp().min(1.0);
            let u: f64 = rng.random();
            let next = (u < accept_prob).then_some(tr.end_metric);
            Ok(TransitionOutcome {
                next,
                accept_prob,
                delta_h,
                divergent: false,
            })
        }
        Err(e) if e.is_divergence() => Ok(TransitionOutcome {
            next: None,
            accept_prob: 0.0,
            delta_h: f64::NAN,
            divergent: true,
        }),
        Err(e) => Err(e),
    }
}

/// Everything a finished chain reports.
#[derive(Debug)]
pub struct ChainOutput {
    /// `n_samples x dim` matrix, one recorded position per row.
    pub samples: DMatrix<f64>,
    /// Per recorded transition: was the proposal accepted.
    pub accepts: Vec<bool>,
    /// Per recorded transition: energy change (NaN on divergence).
    pub delta_h: Vec<f64>,
    /// Fraction of accepted proposals over the sampling phase.
    pub accept_rate: f64,
    /// Step size the sampling phase ran at.
    pub epsilon_final: f64,
    /// Step size used at each warm-up iteration.
    pub warmup_epsilons: Vec<f64>,
    /// Divergent trajectories over warm-up plus sampling.
    pub n_divergent: usize,
    /// Wall-clock seconds for the whole run.
    pub elapsed_seconds: f64,
}

/// Run a full chain: seeded `U(init_range)` start, `n_warmup` (optionally
/// adaptive) transitions, then `n_samples` recorded transitions at frozen
/// epsilon. Deterministic given the seed, wall time aside.
pub fn run_chain<T: Target + ?Sized>(model: &T, cfg: &ChainConfig) -> Result<ChainOutput> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sys = System::new(model, cfg.metric.clone());
    let dim = model.dim();

    let q0 = DVector::from_fn(dim, |_, _| rng.random_range(cfg.init_range.0..cfg.init_range.1));
    let mut st = sys.refresh(&q0).map_err(|e| match e {
        e if e.is_divergence() => Error::ChainFailed {
            reason: format!("metric undefined at the initial point: {e}"),
            epsilon: cfg.integrator.epsilon,
            divergent_fraction: 1.0,
        },
        e => e,
    })?;

    let mut da = cfg
        .adapt
        .map(|a| DualAveraging::new(a, cfg.integrator.epsilon));
    let mut warmup_epsilons = Vec::with_capacity(cfg.n_warmup);
    let mut n_divergent = 0usize;
    let mut n_divergent_warmup = 0usize;

    for _ in 0..cfg.n_warmup {
        let eps = da
            .as_ref()
            .map_or(cfg.integrator.epsilon, DualAveraging::current);
        warmup_epsilons.push(eps);
        let step_cfg = cfg.integrator.with_epsilon(eps);
        let out = hmc_transition(&sys, &st, &step_cfg, &mut rng)?;
        if out.divergent {
            n_divergent += 1;
            n_divergent_warmup += 1;
        }
        if let Some(d) = da.as_mut() {
            d.update(out.accept_prob);
        }
        if let Some(next) = out.next {
            st = next;
        }
    }

    let epsilon_final = da
        .as_ref()
        .map_or(cfg.integrator.epsilon, DualAveraging::averaged);

    if cfg.n_warmup > 0 {
        let frac = n_divergent_warmup as f64 / cfg.n_warmup as f64;
        if frac >= 0.99 {
            return Err(Error::ChainFailed {
                reason: "nearly every warm-up trajectory diverged".into(),
                epsilon: epsilon_final,
                divergent_fraction: frac,
            });
        }
    }

    let step_cfg = cfg.integrator.with_epsilon(epsilon_final);
    let mut samples = DMatrix::zeros(cfg.n_samples, dim);
    let mut accepts = Vec::with_capacity(cfg.n_samples);
    let mut delta_h = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let out = hmc_transition(&sys, &st, &step_cfg, &mut rng)?;
        if out.divergent {
            n_divergent += 1;
        }
        accepts.push(out.accepted());
        delta_h.push(out.delta_h);
        if let Some(next) = out.next {
            st = next;
        }
        samples.row_mut(i).copy_from(&st.position().transpose());
    }

    let n_accept = accepts.iter().filter(|a| **a).count();
    let accept_rate = if cfg.n_samples > 0 {
        n_accept as f64 / cfg.n_samples as f64
    } else {
        0.0
    };

    Ok(ChainOutput {
        samples,
        accepts,
        delta_h,
        accept_rate,
        epsilon_final,
        warmup_epsilons,
        n_divergent,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    })
}
