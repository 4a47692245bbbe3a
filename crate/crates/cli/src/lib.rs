//! Runs configured experiments and writes their CSV tables and manifest.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use meritfed::engine::{ExperimentOutcome, TheoremReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{emit, RunConfig};

pub const METRICS_HEADER: [&str; 9] = [
    "seed",
    "round",
    "method",
    "dist_sq",
    "loss_gap",
    "grad_norm_sq",
    "val_loss",
    "accuracy",
    "delta",
];
pub const WEIGHTS_HEADER: [&str; 5] = ["seed", "round", "method", "client_index", "weight"];
pub const THEOREM_HEADER: [&str; 15] = [
    "seed",
    "method",
    "delta_estimator",
    "mean_delta",
    "rounds",
    "gamma",
    "group_size",
    "applicable",
    "avg_grad_norm_sq",
    "nonconvex_rhs",
    "nonconvex_holds",
    "final_gap",
    "pl_rhs",
    "pl_holds",
    "step_within_limit",
];

/// Full-precision (17 significant digit) rendering.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Output directory: explicit flag, then the config's `out`, then
/// `MERITFED_OUT`, then `meritfed-out`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os("MERITFED_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("meritfed-out"))
}

#[derive(Serialize)]
struct SeedManifest<'a> {
    seed: u64,
    mixture_direction: &'a Option<Vec<f64>>,
    optimum: &'a Option<Vec<f64>>,
    uniform_stationary_point: &'a Option<Vec<f64>>,
    step_warning: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: String,
    seeds: Vec<SeedManifest<'a>>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn theorem_row(seed: u64, r: &TheoremReport) -> Vec<String> {
    let mut row = vec![
        seed.to_string(),
        r.method.clone(),
        r.delta_estimator.name().to_string(),
        fmt_f64(r.mean_delta),
        r.rounds.to_string(),
        fmt_f64(r.gamma),
        r.group_size.to_string(),
        r.applicable().to_string(),
    ];
    match &r.bounds {
        Some(b) => row.extend([
            fmt_f64(b.avg_grad_norm_sq),
            fmt_f64(b.nonconvex_rhs),
            b.nonconvex_holds.to_string(),
            fmt_f64(b.final_gap),
            fmt_f64(b.pl_rhs),
            b.pl_holds.to_string(),
            b.step_within_limit.to_string(),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 7)),
    }
    row
}

/// Writes `metrics.csv`, `weights.csv`, `theorem.csv` and `manifest.json`.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, outcomes: &[ExperimentOutcome]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut metrics = csv_writer(&dir.join("metrics.csv"))?;
    let mut weights = csv_writer(&dir.join("weights.csv"))?;
    let mut theorem = csv_writer(&dir.join("theorem.csv"))?;
    metrics.write_record(METRICS_HEADER)?;
    weights.write_record(WEIGHTS_HEADER)?;
    theorem.write_record(THEOREM_HEADER)?;

    for out in outcomes {
        let seed = out.seed.to_string();
        for round in &out.rounds {
            let r = round.round.to_string();
            for m in &round.methods {
                metrics.write_record([
                    seed.as_str(),
                    &r,
                    &m.method,
                    &fmt_opt(m.dist_sq),
                    &fmt_opt(m.loss_gap),
                    &fmt_opt(m.grad_norm_sq),
                    &fmt_f64(m.val_loss),
                    &fmt_opt(m.accuracy),
                    &fmt_opt(m.delta),
                ])?;
                if let Some(w) = &m.weights {
                    for (i, v) in w.as_slice().iter().enumerate() {
                        weights.write_record([
                            seed.as_str(),
                            &r,
                            &m.method,
                            &i.to_string(),
                            &fmt_f64(*v),
                        ])?;
                    }
                }
            }
        }
        for report in &out.theorem {
            theorem.write_record(theorem_row(out.seed, report))?;
        }
    }
    metrics.flush()?;
    weights.flush()?;
    theorem.flush()?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: emit(cfg),
        seeds: outcomes
            .iter()
            .map(|o| SeedManifest {
                seed: o.seed,
                mixture_direction: &o.mixture_direction,
                optimum: &o.optimum,
                uniform_stationary_point: &o.uniform_stationary_point,
                step_warning: o.step_warning,
            })
            .collect(),
    };
    let mut file = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Runs every repeat seed (in parallel) and returns the outcomes in seed
/// order.
pub fn run_seeds(cfg: &RunConfig) -> Result<Vec<ExperimentOutcome>> {
    cfg.seeds()
        .into_par_iter()
        .map(|seed| {
            let spec = cfg.experiment_spec(seed)?;
            meritfed::run_experiment(&spec).with_context(|| format!("seed {seed}"))
        })
        .collect()
}

/// Runs `cfg` and writes all outputs to `dir`.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<Vec<ExperimentOutcome>> {
    let outcomes = run_seeds(cfg)?;
    write_outputs(dir, cfg, &outcomes)?;
    Ok(outcomes)
}
