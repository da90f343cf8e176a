//! One-bit-aided blind integer forcing.
//!
//! The one-bit channel supplies, through the arcsine law, the normalized
//! covariance used to pick the first forcing matrix. Decoded snapshots whose
//! signs agree with the one-bit samples are trusted and feed a refined
//! covariance, which in turn selects a better forcing matrix, until the
//! covariance settles.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::covariance::{
    arcsin_law, complex_to_real_composite, onebit_empirical_covariance, psd_project_relative,
    ComplexCovariance, RealCompositeCovariance,
};
use crate::error::{Error, Result};
use crate::lattice::{
    solve_if_matrix_with_delta, stack_real_batch, unstack_real_batch, IfMatrix, DEFAULT_DELTA,
};
use crate::quantize::ModuloQuantizerParams;

/// Iteration controls for [`run_bif`].
#[derive(Debug, Clone)]
pub struct BifConfig {
    pub max_iters: usize,
    /// Relative Frobenius change of the refined covariance that counts as converged.
    pub convergence_tol: f64,
    pub quantizer: ModuloQuantizerParams,
    pub lll_delta: f64,
    /// Eigenvalue floor, relative to the largest eigenvalue, applied before each IF solve.
    pub psd_floor: f64,
    /// Abort with [`Error::Timeout`] once this instant has passed.
    pub deadline: Option<Instant>,
}

impl BifConfig {
    pub fn new(quantizer: ModuloQuantizerParams) -> Self {
        Self {
            max_iters: 10,
            convergence_tol: 1e-4,
            quantizer,
            lll_delta: DEFAULT_DELTA,
            psd_floor: 1e-8,
            deadline: None,
        }
    }

    fn check_deadline(&self) -> Result<()> {
        match self.deadline {
            Some(d) if Instant::now() > d => Err(Error::Timeout),
            _ => Ok(()),
        }
    }
}

/// Everything [`run_bif`] produces.
#[derive(Debug, Clone)]
pub struct BifResult {
    /// Complex covariance assembled from the sign-consistent recovered snapshots.
    pub covariance: ComplexCovariance,
    /// Real composite covariance of the last completed iteration.
    pub composite_covariance: RealCompositeCovariance,
    /// Zero-based time indices of the sign-consistent snapshots, ascending.
    pub consistent_set: Vec<usize>,
    /// Refinement iterations completed after initialisation.
    pub iterations_run: usize,
    pub converged: bool,
    /// Set when fewer than `2N` snapshots backed some covariance estimate.
    pub rank_deficient: bool,
    /// Recovered snapshots for every time index, consistent or not.
    pub recovered: DMatrix<Complex64>,
    /// Max row variance of each forcing matrix: initialisation first, then one per iteration.
    /// The first entry is on the normalized (unit-diagonal) scale.
    pub per_iteration_objective: Vec<f64>,
    /// Fraction of consistent snapshots after initialisation and after each iteration.
    pub consistent_fraction: Vec<f64>,
    pub if_matrix: IfMatrix,
}

/// Time indices whose recovered sample matches the one-bit sample in every
/// stacked component (`sign(0) = +1`).
pub fn sign_consistency_set(recovered: &DMatrix<f64>, onebit_stacked: &DMatrix<f64>) -> Result<Vec<usize>> {
    if recovered.shape() != onebit_stacked.shape() {
        return Err(Error::Dimension(format!(
            "recovered {:?} vs one-bit {:?}",
            recovered.shape(),
            onebit_stacked.shape()
        )));
    }
    Ok((0..recovered.ncols())
        .filter(|&t| {
            recovered
                .column(t)
                .iter()
                .zip(onebit_stacked.column(t).iter())
                .all(|(&g, &h)| (g >= 0.0) == (h >= 0.0))
        })
        .collect())
}

/// `(1/|𝕋|) Σ_{t∈𝕋} ĝ(t) ĝ(t)ᵀ`; `None` when `t_set` is empty.
pub fn refine_covariance(recovered: &DMatrix<f64>, t_set: &[usize]) -> Option<RealCompositeCovariance> {
    if t_set.is_empty() {
        return None;
    }
    let sub = recovered.select_columns(t_set);
    let c = (&sub * sub.transpose()) / t_set.len() as f64;
    Some(RealCompositeCovariance::symmetric_part(&c))
}

fn complex_covariance_of(recovered: &DMatrix<Complex64>, t_set: &[usize]) -> Result<ComplexCovariance> {
    let sub = recovered.select_columns(t_set);
    let c = (&sub * sub.adjoint()) / Complex64::new(t_set.len() as f64, 0.0);
    ComplexCovariance::hermitian_part(&c)
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let denom = old.norm();
    if denom == 0.0 {
        return f64::INFINITY;
    }
    (new - old).norm() / denom
}

/// Recovers unfolded snapshots from paired one-bit and modulo samples and
/// estimates their covariance.
pub fn run_bif(
    onebit: &DMatrix<Complex64>,
    modulo: &DMatrix<Complex64>,
    config: &BifConfig,
) -> Result<BifResult> {
    if onebit.shape() != modulo.shape() {
        return Err(Error::Dimension(format!(
            "one-bit {:?} vs modulo {:?}",
            onebit.shape(),
            modulo.shape()
        )));
    }
    let (n, t) = onebit.shape();
    if n == 0 || t == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    let lambda = config.quantizer.range();
    if modulo.iter().any(|z| !(z.re.abs() < lambda) || !(z.im.abs() < lambda)) {
        return Err(Error::Domain(format!(
            "modulo samples exceed the quantizer range ±{lambda}"
        )));
    }
    let qvar = config.quantizer.noise_variance();
    let y = stack_real_batch(modulo);
    let h = stack_real_batch(onebit);
    let mut rank_deficient = false;

    // Normalized covariance from the one-bit channel.
    let normalized = arcsin_law(&onebit_empirical_covariance(onebit)?)?;
    let normalized_r = psd_project_relative(&complex_to_real_composite(&normalized), config.psd_floor);

    // Initial forcing matrix without the quantization-noise term.
    let mut forcing = solve_if_matrix_with_delta(&normalized_r, 0.0, config.lll_delta)?;
    let mut recovered = forcing.decode_batch(&y, lambda);
    let mut t_set = sign_consistency_set(&recovered, &h)?;
    let mut objectives = vec![forcing.objective()];
    let mut fractions = vec![t_set.len() as f64 / t as f64];
    let mut cov_r = refine_covariance(&recovered, &t_set).ok_or(Error::EmptyConsistentSet {
        snapshots: t,
        lambda,
    })?;
    if t_set.len() < 2 * n {
        log::debug!("only {} consistent snapshots for a {}-dimensional covariance", t_set.len(), 2 * n);
        rank_deficient = true;
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        config.check_deadline()?;
        let m = psd_project_relative(&cov_r, config.psd_floor);
        let next_forcing = solve_if_matrix_with_delta(&m, qvar, config.lll_delta)?;
        let next_recovered = next_forcing.decode_batch(&y, lambda);
        let next_set = sign_consistency_set(&next_recovered, &h)?;
        let Some(next_cov) = refine_covariance(&next_recovered, &next_set) else {
            log::warn!("iteration {} left no consistent snapshot; keeping the previous estimate", iterations + 1);
            break;
        };
        iterations += 1;
        objectives.push(next_forcing.objective());
        fractions.push(next_set.len() as f64 / t as f64);
        if next_set.len() < 2 * n {
            log::debug!("only {} consistent snapshots for a {}-dimensional covariance", next_set.len(), 2 * n);
            rank_deficient = true;
        }
        let change = relative_change(next_cov.matrix(), cov_r.matrix());
        forcing = next_forcing;
        recovered = next_recovered;
        t_set = next_set;
        cov_r = next_cov;
        if change < config.convergence_tol {
            converged = true;
            break;
        }
    }

    if t_set.len() < 2 * n {
        log::debug!("final consistent set has {} snapshots for a {}-dimensional covariance", t_set.len(), 2 * n);
    }
    let recovered = unstack_real_batch(&recovered)?;
    let covariance = complex_covariance_of(&recovered, &t_set)?;
    Ok(BifResult {
        covariance,
        composite_covariance: cov_r,
        consistent_set: t_set,
        iterations_run: iterations,
        converged,
        rank_deficient,
        recovered,
        per_iteration_objective: objectives,
        consistent_fraction: fractions,
        if_matrix: forcing,
    })
}

/// `10·log10(‖estimate − truth‖² / ‖truth‖²)`, floored at −200 dB.
pub fn nmse_db(estimate: &DMatrix<Complex64>, truth: &DMatrix<Complex64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "estimate {:?} vs truth {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let power = truth.norm_squared();
    if power == 0.0 {
        return Err(Error::Domain("NMSE against an all-zero reference".into()));
    }
    let err = (estimate - truth).norm_squared();
    Ok((10.0 * (err / power).log10()).max(-200.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{simulate_snapshots, ArrayGeometry, SourceScene};
    use crate::covariance::sample_covariance;
    use crate::quantize::{modulo_quantize, onebit_quantize};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn consistency_set_examples() {
        let truth = DMatrix::from_fn(4, 6, |i, t| ((i * 7 + t * 3) as f64).sin());
        let h = truth.map(|v| if v >= 0.0 { 1.0 } else { -1.0 } * std::f64::consts::FRAC_1_SQRT_2);
        assert_eq!(sign_consistency_set(&truth, &h).unwrap(), (0..6).collect::<Vec<_>>());

        let mut flipped = truth.clone();
        flipped[(2, 3)] = -flipped[(2, 3)];
        assert_eq!(sign_consistency_set(&flipped, &h).unwrap(), vec![0, 1, 2, 4, 5]);

        assert!(sign_consistency_set(&truth, &h.columns(0, 3).into_owned()).is_err());
    }

    #[test]
    fn injected_failures_are_filtered() {
        let truth = DMatrix::from_fn(6, 50, |i, t| ((i * 13 + t * 5) as f64 * 0.37).cos() + 0.05);
        let h = truth.map(|v| if v >= 0.0 { 1.0 } else { -1.0 } * std::f64::consts::FRAC_1_SQRT_2);
        let mut recovered = truth.clone();
        let mut expect_out = vec![];
        for t in [3usize, 10, 11, 27, 40] {
            // Shift one component by a full period, as a decode failure would.
            let i = t % 6;
            recovered[(i, t)] += 2.0 * 0.9 * if truth[(i, t)] >= 0.0 { -1.0 } else { 1.0 };
            if (recovered[(i, t)] >= 0.0) != (truth[(i, t)] >= 0.0) {
                expect_out.push(t);
            }
        }
        // A failure that keeps the sign goes unnoticed.
        recovered[(0, 45)] += 0.01;
        let set = sign_consistency_set(&recovered, &h).unwrap();
        let expected: Vec<usize> = (0..50).filter(|t| !expect_out.contains(t)).collect();
        assert_eq!(set, expected);
    }

    #[test]
    fn refine_examples() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let r = refine_covariance(&v, &[0]).unwrap();
        assert!((r.matrix() - &v * v.transpose()).norm() < 1e-15);
        assert!(refine_covariance(&v, &[]).is_none());

        let data = DMatrix::from_fn(2, 10, |i, t| (i + 2 * t) as f64);
        let half: Vec<usize> = (0..10).step_by(2).collect();
        let sub = data.select_columns(&half);
        let r = refine_covariance(&data, &half).unwrap();
        assert!((r.matrix() - (&sub * sub.transpose()) / 5.0).norm() < 1e-12);
    }

    #[test]
    fn refine_converges_to_composite_covariance() {
        let g = ArrayGeometry::ula(3).unwrap();
        let scene = SourceScene::new(vec![12.0], vec![2.0], 0.5, 50_000).unwrap();
        let b = simulate_snapshots(&scene, &g, 4).unwrap();
        let stacked = stack_real_batch(&b.data);
        let all: Vec<usize> = (0..50_000).collect();
        let est = refine_covariance(&stacked, &all).unwrap();
        let truth = crate::array::theoretical_covariance(&scene, &g).unwrap();
        // E[ḡḡᵀ] is half the composite form of E[gg^H].
        let expect = complex_to_real_composite(&ComplexCovariance::new(truth).unwrap()).into_matrix() * 0.5;
        assert!((est.matrix() - expect).amax() < 0.05);
    }

    #[test]
    fn nmse_examples() {
        let truth = DMatrix::from_fn(3, 4, |i, j| c(i as f64 + 1.0, j as f64 - 1.5));
        assert_eq!(nmse_db(&truth, &truth).unwrap(), -200.0);
        assert!((nmse_db(&DMatrix::zeros(3, 4), &truth).unwrap()).abs() < 1e-12);
        let scaled = &truth * c(1.1, 0.0);
        assert!((nmse_db(&scaled, &truth).unwrap() + 20.0).abs() < 1e-9);
        assert!(nmse_db(&truth, &DMatrix::zeros(3, 4)).is_err());
        assert!(nmse_db(&truth, &DMatrix::zeros(3, 3)).is_err());
    }

    fn scene_batch(lambda_scale: f64, bits: u32, seed: u64) -> (crate::array::SnapshotBatch, BifConfig) {
        let g = ArrayGeometry::ula(12).unwrap();
        let scene = SourceScene::from_snr_db(vec![-2.0, 3.0, 75.0], &[30.0, -10.0, 15.0], 1.0, 4_000).unwrap();
        let b = simulate_snapshots(&scene, &g, seed).unwrap();
        let q = ModuloQuantizerParams::new(bits, lambda_scale * scene.signal_channel_std()).unwrap();
        (b, BifConfig::new(q))
    }

    #[test]
    fn no_folding_regime_reduces_to_identity_path() {
        // λ far above the signal amplitude: nothing folds.
        let (b, cfg) = scene_batch(20.0, 14, 5);
        let y = modulo_quantize(&b.data, cfg.quantizer);
        let r = run_bif(&onebit_quantize(&b.data), &y, &cfg).unwrap();
        assert!((&r.recovered - &y).camax() < 1e-9);
        assert!(r.consistent_set.len() as f64 >= 0.999 * 4_000.0);
        let emp = sample_covariance(&b.data);
        assert!((r.covariance.matrix() - &emp).norm() / emp.norm() < 1e-3);
    }

    #[test]
    fn folded_scene_is_unwrapped() {
        let (b, cfg) = scene_batch(0.6, 5, 0);
        let y = modulo_quantize(&b.data, cfg.quantizer);
        let r = run_bif(&onebit_quantize(&b.data), &y, &cfg).unwrap();
        // Folding is frequent at λ = 0.6σ.
        assert!(nmse_db(&y, &b.data).unwrap() > -10.0);
        assert!(r.consistent_set.len() as f64 >= 0.99 * 4_000.0);
        let clean = b.data.select_columns(&r.consistent_set);
        let rec = r.recovered.select_columns(&r.consistent_set);
        // Consistent snapshots carry only the modulo quantization error.
        let step = cfg.quantizer.step();
        assert!((&rec - &clean).iter().all(|e| e.re.abs() <= step / 2.0 + 1e-9 && e.im.abs() <= step / 2.0 + 1e-9));
        for &t in &r.consistent_set {
            for i in 0..12 {
                let (rg, hg) = (r.recovered[(i, t)], b.data[(i, t)]);
                assert_eq!(rg.re >= 0.0, hg.re >= 0.0);
                assert_eq!(rg.im >= 0.0, hg.im >= 0.0);
            }
        }
        let direct = complex_covariance_of(&r.recovered, &r.consistent_set).unwrap();
        assert_eq!(&direct, &r.covariance);
    }

    #[test]
    fn scale_covariance() {
        let (b, cfg) = scene_batch(0.6, 5, 7);
        let y = modulo_quantize(&b.data, cfg.quantizer);
        let r1 = run_bif(&onebit_quantize(&b.data), &y, &cfg).unwrap();

        // A power-of-two scale keeps every floating-point decision bit-identical.
        let scale = 4.0;
        let data = &b.data * c(scale, 0.0);
        let q = ModuloQuantizerParams::new(cfg.quantizer.bits(), cfg.quantizer.range() * scale).unwrap();
        let cfg2 = BifConfig::new(q);
        let y2 = modulo_quantize(&data, q);
        let r2 = run_bif(&onebit_quantize(&data), &y2, &cfg2).unwrap();
        assert_eq!(r1.consistent_set, r2.consistent_set);
        let ratio = (r2.covariance.matrix() - r1.covariance.matrix() * c(scale * scale, 0.0)).norm()
            / r2.covariance.matrix().norm();
        assert!(ratio < 1e-12);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (b, cfg) = scene_batch(0.6, 5, 8);
        let y = modulo_quantize(&b.data, cfg.quantizer);
        let h = onebit_quantize(&b.data);
        assert!(run_bif(&h.columns(0, 10).into_owned(), &y, &cfg).is_err());
        // Samples outside the declared range mean the parameters do not match the batch.
        let wrong = BifConfig::new(ModuloQuantizerParams::new(5, cfg.quantizer.range() / 2.0).unwrap());
        assert!(matches!(run_bif(&h, &y, &wrong), Err(Error::Domain(_))));
    }

    #[test]
    fn expired_deadline_times_out() {
        let (b, mut cfg) = scene_batch(0.6, 5, 9);
        cfg.deadline = Some(Instant::now() - std::time::Duration::from_secs(1));
        let y = modulo_quantize(&b.data, cfg.quantizer);
        assert!(matches!(run_bif(&onebit_quantize(&b.data), &y, &cfg), Err(Error::Timeout)));
    }
}
