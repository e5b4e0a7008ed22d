//! Resolved run specifications: CLI flags merged over an optional flat
//! key=value config file, then validated into everything a run needs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rmhmc::metrics::{MetricConfig, MetricFamily};
use rmhmc::sampler::{AdaptConfig, ChainConfig};
use rmhmc::targets::{Funnel, Gaussian, Target};
use rmhmc::IntegratorConfig;
use serde::{Deserialize, Serialize};

/// Configuration problem; exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// A fully resolved run: what to sample, under which metric, for how long.
/// Serialized verbatim into the summary JSON as the config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Row label in benchmark tables.
    pub name: String,
    pub target: String,
    /// Funnel: number of x coordinates (dimension n+1). Gaussian: dimension.
    pub n: usize,
    pub metric: String,
    pub alpha: f64,
    /// Fixed step size; `None` means adaptive.
    pub epsilon: Option<f64>,
    pub adapt: bool,
    pub target_accept: f64,
    /// Initial step size for dual averaging.
    pub epsilon_init: f64,
    pub steps: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub fp_threshold: f64,
    pub fp_max_iters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_diag: Option<Vec<f64>>,
}

/// Builder with every field optional; flags override config-file entries,
/// and whatever is left falls back to defaults.
#[derive(Debug, Clone, Default)]
pub struct PartialSpec {
    pub name: Option<String>,
    pub target: Option<String>,
    pub n: Option<usize>,
    pub metric: Option<String>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub adapt: Option<bool>,
    pub target_accept: Option<f64>,
    pub epsilon_init: Option<f64>,
    pub steps: Option<usize>,
    pub warmup: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub fp_threshold: Option<f64>,
    pub fp_max_iters: Option<usize>,
    pub mass_diag: Option<Vec<f64>>,
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> anyhow::Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| bad(format!("invalid value '{value}' for {key}: {e}")))
}

pub fn parse_mass_diag(value: &str) -> anyhow::Result<Vec<f64>> {
    value
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("invalid mass entry '{tok}': {e}")))
        })
        .collect()
}

impl PartialSpec {
    /// Apply one `key=value` assignment (config file or benchmark spec line).
    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        match key.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "name" => self.name = Some(value.to_string()),
            "target" => self.target = Some(value.to_string()),
            "n" => self.n = Some(parse_as(key, value)?),
            "metric" => self.metric = Some(value.to_string()),
            "alpha" => self.alpha = Some(parse_as(key, value)?),
            "epsilon" => self.epsilon = Some(parse_as(key, value)?),
            "adapt" => self.adapt = Some(parse_as(key, value)?),
            "target_accept" => self.target_accept = Some(parse_as(key, value)?),
            "epsilon_init" => self.epsilon_init = Some(parse_as(key, value)?),
            "steps" => self.steps = Some(parse_as(key, value)?),
            "warmup" => self.warmup = Some(parse_as(key, value)?),
            "samples" => self.samples = Some(parse_as(key, value)?),
            "seed" => self.seed = Some(parse_as(key, value)?),
            "fp_threshold" => self.fp_threshold = Some(parse_as(key, value)?),
            "fp_max_iters" => self.fp_max_iters = Some(parse_as(key, value)?),
            "mass_diag" => self.mass_diag = Some(parse_mass_diag(value)?),
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Fill any unset field from `fallback` (the config file layer).
    pub fn or(mut self, fallback: PartialSpec) -> PartialSpec {
        macro_rules! merge {
            ($($field:ident),*) => {
                $(if self.$field.is_none() { self.$field = fallback.$field; })*
            };
        }
        merge!(
            name,
            target,
            n,
            metric,
            alpha,
            epsilon,
            adapt,
            target_accept,
            epsilon_init,
            steps,
            warmup,
            samples,
            seed,
            fp_threshold,
            fp_max_iters,
            mass_diag
        );
        self
    }

    /// Validate and fill defaults. The fixed-epsilon and adaptive modes are
    /// mutually exclusive and one must be chosen.
    pub fn resolve(self) -> anyhow::Result<RunSpec> {
        let target = self.target.unwrap_or_else(|| "funnel".into());
        if target != "funnel" && target != "gaussian" {
            return Err(bad(format!(
                "unknown target '{target}' (expected funnel or gaussian)"
            )));
        }
        let metric = self.metric.unwrap_or_else(|| "softabs".into());
        let family = MetricFamily::from_str(&metric).map_err(bad)?;
        let adapt = self.adapt.unwrap_or(false);
        match (self.epsilon, adapt) {
            (Some(_), true) => {
                return Err(bad("--epsilon and --adapt are mutually exclusive"));
            }
            (None, false) => {
                return Err(bad("choose a step size: either --epsilon <eps> or --adapt"));
            }
            (Some(e), false) if !(e > 0.0) => {
                return Err(bad(format!("epsilon must be positive, got {e}")));
            }
            _ => {}
        }
        let alpha = self.alpha.unwrap_or(1e6);
        if family.is_riemannian() && !(alpha > 0.0) {
            return Err(bad(format!("alpha must be positive, got {alpha}")));
        }
        let target_accept = self.target_accept.unwrap_or(0.95);
        if adapt && !(target_accept > 0.0 && target_accept < 1.0) {
            return Err(bad(format!(
                "target accept rate must lie in (0, 1), got {target_accept}"
            )));
        }
        let epsilon_init = self.epsilon_init.unwrap_or(0.1);
        if adapt && !(epsilon_init > 0.0) {
            return Err(bad(format!("epsilon-init must be positive, got {epsilon_init}")));
        }
        let steps = self
            .steps
            .unwrap_or_else(|| default_steps(family, self.epsilon));
        let spec = RunSpec {
            name: self.name.unwrap_or_else(|| metric.clone()),
            target,
            n: self.n.unwrap_or(10),
            metric: family.as_str().to_string(),
            alpha,
            epsilon: self.epsilon,
            adapt,
            target_accept,
            epsilon_init,
            steps,
            warmup: self.warmup.unwrap_or(1000),
            samples: self.samples.unwrap_or(1000),
            seed: self.seed.unwrap_or(0),
            fp_threshold: self.fp_threshold.unwrap_or(1e-12),
            fp_max_iters: self.fp_max_iters.unwrap_or(100),
            mass_diag: self.mass_diag,
        };
        if spec.n == 0 {
            return Err(bad("dimension parameter n must be at least 1"));
        }
        Ok(spec)
    }
}

/// Trajectory lengths approximating the half-period of the oscillating
/// trajectories: L*eps ~ 8 on the Euclidean metric and ~ 25 on the
/// Riemannian ones. With a fixed epsilon the length follows from it; under
/// adaptation it assumes the step sizes those metrics typically adapt to.
fn default_steps(family: MetricFamily, epsilon: Option<f64>) -> usize {
    let period = match family {
        MetricFamily::Euclidean => 8.0,
        _ => 25.0,
    };
    match epsilon {
        Some(e) => ((period / e).round() as usize).clamp(1, 100_000),
        None => match family {
            MetricFamily::Euclidean => 16,
            MetricFamily::SoftAbs => 120,
            MetricFamily::DiagSoftAbs => 50,
            MetricFamily::OuterSoftAbs | MetricFamily::DiagOuterSoftAbs => 25,
        },
    }
}

/// Parse a flat `key=value` config file (one assignment per line, `#` for
/// comments).
pub fn load_config_file(path: &Path) -> anyhow::Result<PartialSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
    let mut spec = PartialSpec::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("{}:{}: expected key=value", path.display(), lineno + 1)))?;
        spec.set(key, value.trim())?;
    }
    Ok(spec)
}

/// Parse one benchmark spec line: whitespace-separated `key=value` tokens.
pub fn parse_spec_line(line: &str) -> anyhow::Result<PartialSpec> {
    let mut spec = PartialSpec::default();
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{token}'")))?;
        spec.set(key, value)?;
    }
    Ok(spec)
}

/// The target model behind a dynamic dispatch; both built-ins are cheap to
/// construct.
pub fn build_model(spec: &RunSpec) -> Box<dyn Target> {
    match spec.target.as_str() {
        "funnel" => Box::new(Funnel::new(spec.n)),
        _ => Box::new(Gaussian::standard(spec.n)),
    }
}

impl RunSpec {
    pub fn metric_family(&self) -> MetricFamily {
        MetricFamily::from_str(&self.metric).expect("validated at resolve time")
    }

    pub fn metric_config(&self) -> MetricConfig {
        let mut cfg = MetricConfig::new(self.metric_family(), self.alpha);
        if let Some(m) = &self.mass_diag {
            cfg.mass_diag = Some(DVector::from_row_slice(m));
        }
        cfg
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        let mut cfg = IntegratorConfig::new(self.epsilon.unwrap_or(self.epsilon_init), self.steps);
        cfg.fp_threshold = self.fp_threshold;
        cfg.fp_max_iters = self.fp_max_iters;
        cfg
    }

    pub fn chain_config(&self) -> ChainConfig {
        let mut cfg = ChainConfig::new(self.metric_config(), self.integrator_config());
        cfg.n_warmup = self.warmup;
        cfg.n_samples = self.samples;
        cfg.seed = self.seed;
        if self.adapt {
            cfg.adapt = Some(AdaptConfig::with_target(self.target_accept));
        }
        cfg
    }

    /// Coordinate names `q_0 .. q_{N-1}`.
    pub fn coordinate_names(&self, dim: usize) -> Vec<String> {
        (0..dim).map(|i| format!("q_{i}")).collect()
    }

    /// Column index of the funnel's latent `v` (the bias oracle), if any.
    pub fn v_column(&self, dim: usize) -> Option<usize> {
        (self.target == "funnel").then(|| dim - 1)
    }
}

/// Stable string map used for deterministic JSON output of per-coordinate
/// statistics.
pub type EssMap = BTreeMap<String, Option<f64>>;
