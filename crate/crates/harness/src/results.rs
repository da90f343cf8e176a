//! CSV persistence of result tables.
//!
//! Columns, in order: `schema_version, pipeline, total_bits, sweep_name,
//! sweep_value, trial, seed, detected, err_theta_1 .. err_theta_K, nmse_db,
//! wall_s, status`. Missing values are empty fields. Floats use the shortest
//! representation that parses back to the same value.

use std::path::Path;

use anyhow::{anyhow, bail, Context};

use crate::config::SCHEMA_VERSION;
use crate::experiment::{ResultRow, TrialStatus};

pub fn csv_header(num_sources: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "schema_version",
        "pipeline",
        "total_bits",
        "sweep_name",
        "sweep_value",
        "trial",
        "seed",
        "detected",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=num_sources).map(|k| format!("err_theta_{k}")));
    h.extend(["nmse_db", "wall_s", "status"].iter().map(|s| s.to_string()));
    h
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn status_str(s: TrialStatus) -> &'static str {
    match s {
        TrialStatus::Ok => "ok",
        TrialStatus::Timeout => "timeout",
        TrialStatus::Failed => "failed",
    }
}

pub fn write_csv<W: std::io::Write>(rows: &[ResultRow], num_sources: usize, out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(num_sources))?;
    for r in rows {
        if r.angle_errors.len() != num_sources {
            bail!("row for {} has {} angle errors, expected {num_sources}", r.pipeline, r.angle_errors.len());
        }
        let mut rec = vec![
            SCHEMA_VERSION.to_string(),
            r.pipeline.clone(),
            r.total_bits.to_string(),
            r.sweep_name.clone(),
            fmt_f64(r.sweep_value),
            r.trial.to_string(),
            r.seed.to_string(),
            r.detected.to_string(),
        ];
        rec.extend(r.angle_errors.iter().map(|&e| fmt_f64(e)));
        rec.push(fmt_opt(r.nmse_db));
        rec.push(fmt_opt(r.wall_s));
        rec.push(status_str(r.status).into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rows` to `path`; an empty table produces a header-only file.
pub fn export_csv(rows: &[ResultRow], num_sources: usize, path: &Path) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    write_csv(rows, num_sources, std::io::BufWriter::new(file))
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_csv<R: std::io::Read>(input: R) -> anyhow::Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let k = header.iter().filter(|h| h.starts_with("err_theta_")).count();
    if header != csv_header(k) {
        bail!("unexpected CSV header {header:?}");
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("data row {}", line + 1);
        let field = |i: usize| rec.get(i).ok_or_else(|| anyhow!("missing column {i}"));
        let float = |i: usize| -> anyhow::Result<f64> {
            let s = field(i)?;
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                Ok(s.parse()?)
            }
        };
        let opt = |i: usize| -> anyhow::Result<Option<f64>> {
            let v = float(i)?;
            Ok((!v.is_nan()).then_some(v))
        };
        let version: u32 = field(0)?.parse().with_context(ctx)?;
        if version != SCHEMA_VERSION {
            bail!("unsupported schema_version {version} in {}", ctx());
        }
        let status = match field(10 + k)? {
            "ok" => TrialStatus::Ok,
            "timeout" => TrialStatus::Timeout,
            "failed" => TrialStatus::Failed,
            other => bail!("unknown status {other:?} in {}", ctx()),
        };
        rows.push(ResultRow {
            pipeline: field(1)?.to_string(),
            total_bits: field(2)?.parse().with_context(ctx)?,
            sweep_name: field(3)?.to_string(),
            sweep_value: float(4).with_context(ctx)?,
            trial: field(5)?.parse().with_context(ctx)?,
            seed: field(6)?.parse().with_context(ctx)?,
            detected: field(7)?.parse().with_context(ctx)?,
            angle_errors: (0..k).map(|i| float(8 + i)).collect::<anyhow::Result<_>>().with_context(ctx)?,
            nmse_db: opt(8 + k).with_context(ctx)?,
            wall_s: opt(9 + k).with_context(ctx)?,
            status,
        });
    }
    Ok(rows)
}

pub fn parse_csv(path: &Path) -> anyhow::Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_csv(std::io::BufReader::new(file)).with_context(|| format!("cannot parse {}", path.display()))
}
