//! Shared fixtures for the criterion benchmarks: funnel systems with
//! metric states and momenta drawn at reproducible points.

use nalgebra::DVector;
use rand::Rng;
use rmhmc::metrics::{MetricConfig, MetricState, System};
use rmhmc::sampler::seeded_rng;
use rmhmc::targets::{Funnel, Target};

/// A funnel position in the unit box, deterministic in the seed.
pub fn funnel_point(dim: usize, seed: u64) -> DVector<f64> {
    let mut rng = seeded_rng(seed);
    DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))
}

/// Refreshed metric state plus a momentum drawn from it.
pub fn state_with_momentum(
    model: &Funnel,
    cfg: &MetricConfig,
    seed: u64,
) -> (MetricState, DVector<f64>) {
    let mut rng = seeded_rng(seed);
    let q = DVector::from_fn(model.dim(), |_, _| rng.random_range(-1.0..1.0));
    let st = System::new(model, cfg.clone())
        .refresh(&q)
        .expect("benchmark point must be well-defined");
    let p = st.sample_momentum(&mut rng);
    (st, p)
}
