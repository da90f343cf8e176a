//! MUSIC pseudo-spectrum export.

use std::path::Path;

use anyhow::{bail, Context};
use bifdoa_core::array::ArrayGeometry;
use bifdoa_core::covariance::ComplexCovariance;
use bifdoa_core::doa::{angle_grid, music_pseudo_spectrum};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSeries {
    pub label: String,
    pub theta_deg: Vec<f64>,
    /// Pseudo-spectrum in dB, normalized so the peak is 0 dB.
    pub power_db: Vec<f64>,
}

impl SpectrumSeries {
    pub fn peak_deg(&self) -> f64 {
        let i = self
            .power_db
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.theta_deg[i]
    }
}

/// Evaluates the MUSIC pseudo-spectrum of `cov` with `k` sources on a uniform
/// grid over (−90°, 90°).
pub fn music_spectrum(
    label: &str,
    cov: &ComplexCovariance,
    k: usize,
    geometry: &ArrayGeometry,
    grid_step_deg: f64,
) -> anyhow::Result<SpectrumSeries> {
    let theta_deg = angle_grid(grid_step_deg);
    let p = music_pseudo_spectrum(cov, k, geometry, &theta_deg)?;
    let peak = p.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    Ok(SpectrumSeries {
        label: label.to_string(),
        theta_deg,
        power_db: p.iter().map(|v| 10.0 * (v / peak).log10()).collect(),
    })
}

/// Long-format CSV with columns `pipeline, theta_deg, spectrum_db`.
pub fn export_spectrum(series: &[SpectrumSeries], path: &Path) -> anyhow::Result<()> {
    let write = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pipeline", "theta_deg", "spectrum_db"])?;
        for s in series {
            for (t, p) in s.theta_deg.iter().zip(&s.power_db) {
                w.write_record([s.label.clone(), format!("{t}"), format!("{p}")])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write().with_context(|| format!("cannot write {}", path.display()))
}

pub fn parse_spectrum(path: &Path) -> anyhow::Result<Vec<SpectrumSeries>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    if r.headers()?.iter().collect::<Vec<_>>() != ["pipeline", "theta_deg", "spectrum_db"] {
        bail!("unexpected spectrum header in {}", path.display());
    }
    let mut out: Vec<SpectrumSeries> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let label = &rec[0];
        if out.last().map(|s| s.label.as_str()) != Some(label) {
            out.push(SpectrumSeries {
                label: label.to_string(),
                theta_deg: vec![],
                power_db: vec![],
            });
        }
        let s = out.last_mut().expect("pushed above");
        s.theta_deg.push(rec[1].parse()?);
        s.power_db.push(rec[2].parse()?);
    }
    Ok(out)
}
