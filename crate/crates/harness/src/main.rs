use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bifdoa_core::array::simulate_snapshots;
use bifdoa_core::covariance::{sample_covariance, ComplexCovariance};
use bifdoa_harness::config::ExperimentConfig;
use bifdoa_harness::experiment::{apply_pipeline, detection_curve, run_experiment, RunOptions};
use bifdoa_harness::manifest::RunManifest;
use bifdoa_harness::results::export_csv;
use bifdoa_harness::spectrum::{export_spectrum, music_spectrum};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bifdoa", version, about = "One-bit-aided modulo sampling DOA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write `<name>.csv` plus a manifest.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "BIFDOA_OUT", default_value = "results")]
        out: PathBuf,
        /// Override the number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Record per-pipeline wall time in the `wall_s` column.
        #[arg(long)]
        timings: bool,
    },
    /// Write MUSIC pseudo-spectra of the first sweep point, first trial.
    Spectrum {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

fn run(
    config_path: &Path,
    out: &Path,
    trials: Option<usize>,
    threads: Option<usize>,
    seed: Option<u64>,
    timings: bool,
) -> anyhow::Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(t) = trials {
        config.trials = t;
    }
    if let Some(s) = seed {
        config.base_seed = s;
    }
    config.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let options = RunOptions {
        threads,
        record_wall_time: timings,
    };
    let rows = run_experiment(&config, &options)?;
    let csv = out.join(format!("{}.csv", config.name));
    export_csv(&rows, config.scene.doas_deg.len(), &csv)?;
    let mut manifest = RunManifest::new("run", &config, config_path, threads);
    manifest.outputs.push(csv.display().to_string());
    manifest.write(&manifest_path(&csv))?;
    for p in &config.pipelines {
        let curve: Vec<String> = detection_curve(&rows, &p.id())
            .iter()
            .map(|(v, pd)| format!("{v}:{pd:.2}"))
            .collect();
        println!("{:<18} P_D {}", p.id(), curve.join(" "));
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn spectrum(config_path: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(s) = seed {
        config.base_seed = s;
    }
    let geometry = config.geometry.build()?;
    let scene = config.scene_at(config.sweep.values()[0])?;
    let k = scene.num_sources();
    let batch = simulate_snapshots(&scene, &geometry, config.base_seed)?;
    let clean = ComplexCovariance::hermitian_part(&sample_covariance(&batch.data))?;
    let mut series = vec![music_spectrum("unquantized", &clean, k, &geometry, config.grid_step_deg)?];
    for p in &config.pipelines {
        match apply_pipeline(&config, &scene, *p, &batch, None).covariance {
            Some(c) => series.push(music_spectrum(&p.id(), &c, k, &geometry, config.grid_step_deg)?),
            None => log::warn!("{} produced no covariance; skipped", p.id()),
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    export_spectrum(&series, out)?;
    let mut manifest = RunManifest::new("spectrum", &config, config_path, None);
    manifest.outputs.push(out.display().to_string());
    manifest.write(&manifest_path(out))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            out,
            trials,
            threads,
            seed,
            timings,
        } => run(config, out, *trials, *threads, *seed, *timings),
        Command::Spectrum { config, out, seed } => spectrum(config, out, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
