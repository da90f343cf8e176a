//! Subspace DOA estimation: root MUSIC for uniform linear arrays and a gridded
//! MUSIC search for arbitrary linear geometries.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::array::{steering_unchecked, ArrayGeometry};
use crate::covariance::ComplexCovariance;
use crate::error::{Error, Result};

/// Golden-section refinement stops once the bracket is narrower than this (degrees).
const REFINE_TOL_DEG: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct DoaEstimate {
    /// Estimated bearings in degrees, ascending.
    pub angles: Vec<f64>,
    /// Covariance eigenvalues, descending.
    pub eigen_spectrum: Vec<f64>,
    /// Number of sources that was asked for; `angles` may be shorter for
    /// spectral MUSIC when too few peaks exist.
    pub requested: usize,
}

impl DoaEstimate {
    pub fn is_short(&self) -> bool {
        self.angles.len() < self.requested
    }
}

/// Eigen-decomposition with eigenvalues descending. Each eigenvector is
/// phase-normalized so its first non-negligible component is real and positive.
pub fn sorted_eigen(cov: &ComplexCovariance) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = SymmetricEigen::new(cov.matrix().clone());
    let n = cov.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        if let Some(lead) = v.iter().find(|z| z.norm() > 1e-12).copied() {
            let phase = lead.conj() / lead.norm();
            v *= phase;
        }
        vectors.set_column(dst, &v);
    }
    (values, vectors)
}

fn noise_projector(cov: &ComplexCovariance, k: usize) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = cov.dim();
    if k == 0 || k >= n {
        return Err(Error::Domain(format!(
            "source count {k} must satisfy 1 ≤ K < N = {n}"
        )));
    }
    let (values, vectors) = sorted_eigen(cov);
    let noise = vectors.columns(k, n - k);
    Ok((values, noise * noise.adjoint()))
}

fn pseudo_spectrum_at(projector: &DMatrix<Complex64>, geometry: &ArrayGeometry, theta_deg: f64) -> f64 {
    let a = steering_unchecked(geometry, theta_deg.to_radians().sin());
    let denom = (a.adjoint() * projector * &a)[(0, 0)].re;
    1.0 / denom.max(1e-300)
}

/// MUSIC pseudo-spectrum `1/‖E_nᴴ a(θ)‖²` evaluated at each angle of `grid_deg`.
pub fn music_pseudo_spectrum(
    cov: &ComplexCovariance,
    k: usize,
    geometry: &ArrayGeometry,
    grid_deg: &[f64],
) -> Result<Vec<f64>> {
    check_geometry(cov, geometry)?;
    let (_, projector) = noise_projector(cov, k)?;
    Ok(grid_deg
        .iter()
        .map(|&t| pseudo_spectrum_at(&projector, geometry, t))
        .collect())
}

fn check_geometry(cov: &ComplexCovariance, geometry: &ArrayGeometry) -> Result<()> {
    if cov.dim() != geometry.len() {
        return Err(Error::Dimension(format!(
            "{}×{} covariance for a {}-sensor array",
            cov.dim(),
            cov.dim(),
            geometry.len()
        )));
    }
    Ok(())
}

/// Coefficients of `z^{N−1} · a(z)ᴴ P a(z)`, highest power first.
fn root_music_polynomial(projector: &DMatrix<Complex64>) -> Vec<Complex64> {
    let n = projector.nrows();
    // Power N−1+m collects the m-th diagonal (j − i = m).
    (0..2 * n - 1)
        .rev()
        .map(|p| {
            let m = p as isize - (n as isize - 1);
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let j = i as isize + m;
                if (0..n as isize).contains(&j) {
                    s += projector[(i, j as usize)];
                }
            }
            s
        })
        .collect()
}

/// Roots of a polynomial (highest power first) as companion-matrix eigenvalues.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let first = coeffs
        .iter()
        .position(|c| c.norm() > 0.0)
        .ok_or_else(|| Error::Domain("zero polynomial".into()))?;
    let coeffs = &coeffs[first..];
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Ok(vec![]);
    }
    let lead = coeffs[0];
    let mut companion = DMatrix::<Complex64>::zeros(deg, deg);
    for j in 0..deg {
        companion[(0, j)] = -coeffs[j + 1] / lead;
    }
    for i in 1..deg {
        companion[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    let roots = companion.eigenvalues().ok_or(Error::EigenFailure)?;
    Ok(roots.iter().copied().collect())
}

/// Pairs roots of a conjugate-reciprocal polynomial as `(r, 1/r̄)` and returns
/// one representative per pair: the inner modulus with the pair's mean phase.
fn pair_reciprocal_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let n = roots.len();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let mirror = Complex64::new(1.0, 0.0) / roots[j].conj();
            candidates.push(((roots[i] - mirror).norm(), i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; n];
    let mut reps = Vec::with_capacity(n / 2);
    for (_, i, j) in candidates {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        let modulus = roots[i].norm().min(roots[j].norm());
        let phase = (roots[i] / roots[i].norm() + roots[j] / roots[j].norm()).arg();
        reps.push(Complex64::from_polar(modulus, phase));
    }
    // An odd leftover (numerically unpaired root) is kept if it lies inside.
    for i in 0..n {
        if !used[i] && roots[i].norm() <= 1.0 {
            reps.push(roots[i]);
        }
    }
    reps
}

/// Root MUSIC for a uniform linear array.
pub fn root_music(cov: &ComplexCovariance, k: usize, geometry: &ArrayGeometry) -> Result<DoaEstimate> {
    if !geometry.is_ula() {
        return Err(Error::NotUniformLinear(format!("{:?}", geometry.kind())));
    }
    check_geometry(cov, geometry)?;
    let (eigen_spectrum, projector) = noise_projector(cov, k)?;
    let roots = polynomial_roots(&root_music_polynomial(&projector))?;
    let mut reps: Vec<(f64, f64, Complex64)> = pair_reciprocal_roots(&roots)
        .into_iter()
        .map(|r| {
            let u = (r.arg() / std::f64::consts::PI).clamp(-1.0, 1.0);
            let theta = u.asin().to_degrees();
            ((1.0 - r.norm()).abs(), pseudo_spectrum_at(&projector, geometry, theta), r)
        })
        .collect();
    reps.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut angles: Vec<f64> = reps
        .iter()
        .take(k)
        .map(|(_, _, r)| (r.arg() / std::f64::consts::PI).clamp(-1.0, 1.0).asin().to_degrees())
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(DoaEstimate {
        angles,
        eigen_spectrum,
        requested: k,
    })
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Uniform grid over the open interval (−90°, 90°).
pub fn angle_grid(step_deg: f64) -> Vec<f64> {
    let count = (180.0 / step_deg).ceil() as usize;
    (1..count)
        .map(|i| -90.0 + i as f64 * step_deg)
        .filter(|t| *t < 90.0)
        .collect()
}

/// Grid-search MUSIC with golden-section refinement of the `k` largest peaks.
pub fn spectral_music(
    cov: &ComplexCovariance,
    k: usize,
    geometry: &ArrayGeometry,
    grid_step_deg: f64,
) -> Result<DoaEstimate> {
    if !(grid_step_deg > 0.0 && grid_step_deg < 90.0) {
        return Err(Error::Domain(format!("grid step {grid_step_deg}° out of range")));
    }
    check_geometry(cov, geometry)?;
    let (eigen_spectrum, projector) = noise_projector(cov, k)?;
    let grid = angle_grid(grid_step_deg);
    let spectrum: Vec<f64> = grid
        .iter()
        .map(|&t| pseudo_spectrum_at(&projector, geometry, t))
        .collect();
    let mut peaks: Vec<usize> = (1..grid.len().saturating_sub(1))
        .filter(|&i| spectrum[i] > spectrum[i - 1] && spectrum[i] >= spectrum[i + 1])
        .collect();
    peaks.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]).then(a.cmp(&b)));
    let mut angles: Vec<f64> = peaks
        .iter()
        .take(k)
        .map(|&i| {
            let f = |t: f64| pseudo_spectrum_at(&projector, geometry, t);
            let lo = (grid[i] - grid_step_deg).max(-90.0);
            let hi = (grid[i] + grid_step_deg).min(90.0);
            golden_max(f, lo, hi, REFINE_TOL_DEG)
        })
        .collect();
    if angles.len() < k {
        log::warn!("spectral MUSIC found {} of {k} peaks", angles.len());
    }
    angles.sort_by(f64::total_cmp);
    Ok(DoaEstimate {
        angles,
        eigen_spectrum,
        requested: k,
    })
}

/// Root MUSIC on a ULA, spectral MUSIC otherwise.
pub fn estimate_doas(
    cov: &ComplexCovariance,
    k: usize,
    geometry: &ArrayGeometry,
    grid_step_deg: f64,
) -> Result<DoaEstimate> {
    if geometry.is_ula() {
        root_music(cov, k, geometry)
    } else {
        spectral_music(cov, k, geometry, grid_step_deg)
    }
}

/// True when every true bearing has some estimate within `tol_deg`.
pub fn detect(true_doas: &[f64], estimated: &DoaEstimate, tol_deg: f64) -> bool {
    true_doas.iter().all(|&t| {
        estimated
            .angles
            .iter()
            .any(|&e| (t - e).abs() <= tol_deg)
    })
}

/// Per-source error `min_i |θ_k − θ̂_i|` in degrees (infinite with no estimates).
pub fn angle_errors(true_doas: &[f64], estimated: &DoaEstimate) -> Vec<f64> {
    true_doas
        .iter()
        .map(|&t| {
            estimated
                .angles
                .iter()
                .map(|&e| (t - e).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Normalized steering vector for callers that need one outside this module.
pub fn unit_steering(geometry: &ArrayGeometry, theta_deg: f64) -> DVector<Complex64> {
    let a = steering_unchecked(geometry, theta_deg.to_radians().sin());
    let n = (a.len() as f64).sqrt();
    a / Complex64::new(n, 0.0)
}
