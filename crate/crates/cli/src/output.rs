//! CSV and JSON serialization of chain results.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a file back recovers the exact f64 bits and identical runs produce
//! byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rmhmc::diagnostics;
use rmhmc::integrate::TrajectoryRow;
use rmhmc::sampler::ChainOutput;
use serde::{Deserialize, Serialize};

use crate::spec::{EssMap, RunSpec};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Samples CSV: `iter,q_0,...,q_{N-1},accept,delta_H`.
pub fn write_samples_csv(path: &Path, spec: &RunSpec, out: &ChainOutput) -> anyhow::Result<()> {
    let dim = out.samples.ncols();
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("iter");
    for name in spec.coordinate_names(dim) {
        header.push(',');
        header.push_str(&name);
    }
    header.push_str(",accept,delta_H");
    writeln!(w, "{header}")?;
    for i in 0..out.samples.nrows() {
        write!(w, "{i}")?;
        for j in 0..dim {
            write!(w, ",{}", fmt_f64(out.samples[(i, j)]))?;
        }
        writeln!(
            w,
            ",{},{}",
            u8::from(out.accepts[i]),
            fmt_f64(out.delta_h[i])
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Trajectory CSV: `step,q_0,...,p_0,...,H`.
pub fn write_trajectory_csv(
    path: &Path,
    dim: usize,
    rows: &[TrajectoryRow],
) -> anyhow::Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("step");
    for i in 0..dim {
        header.push_str(&format!(",q_{i}"));
    }
    for i in 0..dim {
        header.push_str(&format!(",p_{i}"));
    }
    header.push_str(",H");
    writeln!(w, "{header}")?;
    for row in rows {
        write!(w, "{}", row.step)?;
        for x in row.q.iter() {
            write!(w, ",{}", fmt_f64(*x))?;
        }
        for x in row.p.iter() {
            write!(w, ",{}", fmt_f64(*x))?;
        }
        writeln!(w, ",{}", fmt_f64(row.h))?;
    }
    w.flush()?;
    Ok(())
}

/// Bias diagnostics of the funnel's latent coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VMarginal {
    pub coordinate: String,
    pub mean: f64,
    pub variance: f64,
    pub ess: Option<f64>,
    /// `mean / sqrt(9 / ess)` against the exact `N(0, 9)` marginal.
    pub z: Option<f64>,
}

/// Summary JSON document (schema v1, documented in docs/summary-schema.md).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub schema_version: u32,
    pub target: String,
    pub dim: usize,
    pub metric: String,
    pub alpha: f64,
    pub seed: u64,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub steps: usize,
    pub adapt: bool,
    pub epsilon_final: f64,
    pub accept_rate: f64,
    pub n_divergent: usize,
    pub elapsed_seconds: f64,
    /// Effective sample size per coordinate; null where undefined
    /// (constant or too-short series).
    pub ess: EssMap,
    pub v_marginal: Option<VMarginal>,
    pub config: RunSpec,
}

pub fn build_summary(spec: &RunSpec, dim: usize, out: &ChainOutput) -> Summary {
    let names = spec.coordinate_names(dim);
    let mut ess = EssMap::new();
    for (j, name) in names.iter().enumerate() {
        let series: Vec<f64> = out.samples.column(j).iter().copied().collect();
        ess.insert(name.clone(), diagnostics::ess(&series).ok().map(|r| r.ess));
    }
    let v_marginal = spec.v_column(dim).and_then(|col| {
        diagnostics::summarize(&out.samples, col, Some((0.0, 9.0)))
            .ok()
            .map(|s| VMarginal {
                coordinate: names[col].clone(),
                mean: s.mean,
                variance: s.variance,
                ess: s.ess.as_ref().map(|r| r.ess),
                z: s.z,
            })
    });
    Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        target: spec.target.clone(),
        dim,
        metric: spec.metric.clone(),
        alpha: spec.alpha,
        seed: spec.seed,
        n_warmup: spec.warmup,
        n_samples: spec.samples,
        steps: spec.steps,
        adapt: spec.adapt,
        epsilon_final: out.epsilon_final,
        accept_rate: out.accept_rate,
        n_divergent: out.n_divergent,
        elapsed_seconds: out.elapsed_seconds,
        ess,
        v_marginal,
        config: spec.clone(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One row of the benchmark comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkRow {
    pub name: String,
    pub target: String,
    pub metric: String,
    pub alpha: f64,
    pub warmup: usize,
    pub samples: usize,
    pub epsilon: f64,
    pub accept_rate: f64,
    pub time_seconds: f64,
    /// ESS of the funnel's v coordinate (last coordinate otherwise).
    pub ess: Option<f64>,
    pub ess_per_sample: Option<f64>,
    pub ess_per_second: Option<f64>,
    /// Chain-failure message when the run did not complete.
    pub error: Option<String>,
}

pub fn write_benchmark_csv(path: &Path, rows: &[BenchmarkRow]) -> anyhow::Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "name,target,metric,alpha,warmup,samples,epsilon,accept_rate,time_seconds,ess,ess_per_sample,ess_per_second,error"
    )?;
    for r in rows {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.name,
            r.target,
            r.metric,
            fmt_f64(r.alpha),
            r.warmup,
            r.samples,
            fmt_f64(r.epsilon),
            fmt_f64(r.accept_rate),
            fmt_f64(r.time_seconds),
            opt(r.ess),
            opt(r.ess_per_sample),
            opt(r.ess_per_second),
            r.error.clone().unwrap_or_default()
        )?;
    }
    w.flush()?;
    Ok(())
}
