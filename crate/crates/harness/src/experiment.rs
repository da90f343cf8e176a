//! Seeded Monte Carlo trials over a sweep.

use std::time::Instant;

use bifdoa_core::array::{simulate_snapshots, ArrayGeometry, SnapshotBatch, SourceScene};
use bifdoa_core::bif::{nmse_db, run_bif, BifConfig};
use bifdoa_core::covariance::{sample_covariance, ComplexCovariance};
use bifdoa_core::doa::{angle_errors, detect, estimate_doas};
use bifdoa_core::quantize::{
    conventional_adc, modulo_sample, onebit_sample, ConventionalAdcParams, ModuloQuantizerParams,
};
use bifdoa_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PipelineSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Timeout,
    Failed,
}

/// One (pipeline, sweep value, trial) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub pipeline: String,
    pub total_bits: u32,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub detected: bool,
    /// Per-source error in degrees; `NaN` when the trial produced no estimate.
    pub angle_errors: Vec<f64>,
    /// NMSE of the quantized or recovered batch against the unquantized one.
    pub nmse_db: Option<f64>,
    pub wall_s: Option<f64>,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Record per-pipeline wall time. Off by default so reruns are byte-identical.
    pub record_wall_time: bool,
}

/// Result of running one pipeline on one batch, before bookkeeping.
pub struct PipelineOutcome {
    pub covariance: Option<ComplexCovariance>,
    pub nmse_db: Option<f64>,
    pub status: TrialStatus,
}

/// Acquires `batch` through `pipeline` and returns the covariance handed to
/// the DOA estimator.
pub fn apply_pipeline(
    config: &ExperimentConfig,
    scene: &SourceScene,
    pipeline: PipelineSpec,
    batch: &SnapshotBatch,
    deadline: Option<Instant>,
) -> PipelineOutcome {
    let std = scene.signal_channel_std();
    let failed = |status| PipelineOutcome {
        covariance: None,
        nmse_db: None,
        status,
    };
    match pipeline {
        PipelineSpec::OnebitBif { bits } => {
            let q = match ModuloQuantizerParams::new(bits, config.quantizer.modulo_range_scale * std) {
                Ok(q) => q,
                Err(_) => return failed(TrialStatus::Failed),
            };
            let mut bif = BifConfig::new(q);
            bif.max_iters = config.quantizer.max_iters;
            bif.deadline = deadline;
            match run_bif(&onebit_sample(batch), &modulo_sample(batch, q), &bif) {
                Ok(r) => PipelineOutcome {
                    nmse_db: nmse_db(&r.recovered, &batch.data).ok(),
                    covariance: Some(r.covariance),
                    status: TrialStatus::Ok,
                },
                Err(Error::Timeout) => failed(TrialStatus::Timeout),
                Err(e) => {
                    log::debug!("{} failed at seed {}: {e}", pipeline.id(), batch.rng_seed);
                    failed(TrialStatus::Failed)
                }
            }
        }
        PipelineSpec::Conventional { bits } => {
            let adc = match ConventionalAdcParams::new(bits, config.quantizer.adc_threshold_scale * std) {
                Ok(a) => a,
                Err(_) => return failed(TrialStatus::Failed),
            };
            let q = conventional_adc(batch, adc);
            match ComplexCovariance::hermitian_part(&sample_covariance(&q)) {
                Ok(c) => PipelineOutcome {
                    nmse_db: nmse_db(&q, &batch.data).ok(),
                    covariance: Some(c),
                    status: TrialStatus::Ok,
                },
                Err(_) => failed(TrialStatus::Failed),
            }
        }
    }
}

fn run_cell(
    config: &ExperimentConfig,
    geometry: &ArrayGeometry,
    sweep_value: f64,
    trial: usize,
    options: &RunOptions,
) -> Vec<ResultRow> {
    let seed = config.base_seed.wrapping_add(trial as u64);
    let scene = config.scene_at(sweep_value).expect("validated configuration");
    let k = scene.num_sources();
    let batch = simulate_snapshots(&scene, geometry, seed).expect("validated configuration");
    config
        .pipelines
        .iter()
        .map(|&pipeline| {
            let start = Instant::now();
            let deadline = config
                .timeout_s
                .map(|s| start + std::time::Duration::from_secs_f64(s));
            let outcome = apply_pipeline(config, &scene, pipeline, &batch, deadline);
            let mut status = outcome.status;
            let estimate = outcome
                .covariance
                .and_then(|c| estimate_doas(&c, k, geometry, config.grid_step_deg).ok());
            if status == TrialStatus::Ok && estimate.is_none() {
                status = TrialStatus::Failed;
            }
            if deadline.is_some_and(|d| Instant::now() > d) {
                status = TrialStatus::Timeout;
            }
            let ok = status == TrialStatus::Ok;
            let (detected, errors) = match (&estimate, ok) {
                (Some(est), true) => (
                    detect(scene.doas_deg(), est, config.detection_tol_deg),
                    angle_errors(scene.doas_deg(), est),
                ),
                _ => (false, vec![f64::NAN; k]),
            };
            ResultRow {
                pipeline: pipeline.id(),
                total_bits: pipeline.total_bits(),
                sweep_name: config.sweep.name().to_string(),
                sweep_value,
                trial,
                seed,
                detected,
                angle_errors: errors,
                nmse_db: if ok { outcome.nmse_db } else { None },
                wall_s: options.record_wall_time.then(|| start.elapsed().as_secs_f64()),
                status,
            }
        })
        .collect()
}

/// Runs every (sweep value, trial) cell and returns rows ordered by pipeline
/// (configuration order), sweep value and trial.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> anyhow::Result<Vec<ResultRow>> {
    config.validate()?;
    let geometry = config.geometry.build()?;
    let values = config.sweep.values();
    let cells: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let work = || -> Vec<(usize, usize, Vec<ResultRow>)> {
        cells
            .par_iter()
            .map(|&(s, t)| (s, t, run_cell(config, &geometry, values[s], t, options)))
            .collect()
    };
    let results = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work),
        None => work(),
    };
    let mut indexed: Vec<(usize, usize, usize, ResultRow)> = results
        .into_iter()
        .flat_map(|(s, t, rows)| rows.into_iter().enumerate().map(move |(p, r)| (p, s, t, r)))
        .collect();
    indexed.sort_by_key(|&(p, s, t, _)| (p, s, t));
    Ok(indexed.into_iter().map(|(_, _, _, r)| r).collect())
}

/// Fraction of detected trials for one pipeline at one sweep value.
pub fn detection_probability(rows: &[ResultRow], pipeline: &str, sweep_value: f64) -> anyhow::Result<f64> {
    let matching: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.pipeline == pipeline && r.sweep_value == sweep_value)
        .collect();
    if matching.is_empty() {
        anyhow::bail!("no rows for pipeline {pipeline} at sweep value {sweep_value}");
    }
    Ok(matching.iter().filter(|r| r.detected).count() as f64 / matching.len() as f64)
}

/// `(sweep value, P_D)` for each sweep point of one pipeline, in sweep order.
pub fn detection_curve(rows: &[ResultRow], pipeline: &str) -> Vec<(f64, f64)> {
    let mut values: Vec<f64> = rows
        .iter()
        .filter(|r| r.pipeline == pipeline)
        .map(|r| r.sweep_value)
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
        .into_iter()
        .map(|v| (v, detection_probability(rows, pipeline, v).expect("value taken from rows")))
        .collect()
}
