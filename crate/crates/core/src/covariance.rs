//! Covariance estimation from one-bit samples and conversions between the
//! complex and the stacked real (`[Re; Im]`) representations.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hermitian `N×N` covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexCovariance {
    matrix: DMatrix<Complex64>,
}

impl ComplexCovariance {
    /// Validates Hermitian symmetry (relative 1e−10) and a real non-negative diagonal.
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let n = matrix.nrows();
        for i in 0..n {
            let d = matrix[(i, i)];
            if d.im.abs() > 1e-10 * scale || d.re < -1e-10 * scale {
                return Err(Error::Domain(format!("diagonal entry {i} is {d}")));
            }
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)].conj()).norm() > 1e-10 * scale {
                    return Err(Error::Domain(format!("not Hermitian at ({i}, {j})")));
                }
            }
        }
        Ok(Self { matrix })
    }

    /// Wraps `(M + M^H)/2`.
    pub fn hermitian_part(matrix: &DMatrix<Complex64>) -> Result<Self> {
        Self::new((matrix + matrix.adjoint()) * Complex64::new(0.5, 0.0))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Symmetric `2N×2N` covariance of stacked `[Re g; Im g]` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RealCompositeCovariance {
    matrix: DMatrix<f64>,
}

impl RealCompositeCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.amax().max(1.0);
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::Domain(format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { matrix })
    }

    /// Wraps `(M + Mᵀ)/2`.
    pub fn symmetric_part(matrix: &DMatrix<f64>) -> Self {
        Self {
            matrix: (matrix + matrix.transpose()) * 0.5,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }
}

/// `(1/T) Σ_t x(t) x(t)^H` over the columns of `data`.
pub fn sample_covariance(data: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let t = data.ncols().max(1) as f64;
    (data * data.adjoint()) / Complex64::new(t, 0.0)
}

/// `(1/T) Σ_t x(t) x(t)ᵀ` over the columns of a real matrix.
pub fn sample_covariance_real(data: &DMatrix<f64>) -> DMatrix<f64> {
    let t = data.ncols().max(1) as f64;
    (data * data.transpose()) / t
}

/// Empirical covariance of one-bit samples. The diagonal is exactly one.
pub fn onebit_empirical_covariance(onebit: &DMatrix<Complex64>) -> Result<ComplexCovariance> {
    if onebit.ncols() == 0 || onebit.nrows() == 0 {
        return Err(Error::Dimension("empty one-bit batch".into()));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if onebit
        .iter()
        .any(|z| (z.re.abs() - s).abs() > 1e-12 || (z.im.abs() - s).abs() > 1e-12)
    {
        return Err(Error::Domain(
            "one-bit samples must have components ±1/√2".into(),
        ));
    }
    let mut c = sample_covariance(onebit);
    for i in 0..c.nrows() {
        c[(i, i)] = Complex64::new(1.0, 0.0);
    }
    ComplexCovariance::hermitian_part(&c)
}

/// Normalized covariance from the one-bit covariance:
/// `sin(π/2·Re C̄) + j·sin(π/2·Im C̄)`, entrywise.
///
/// Entries up to `1 + 1e−9` in magnitude are clamped to ±1; anything larger is
/// rejected as malformed input.
pub fn arcsin_law(onebit_cov: &ComplexCovariance) -> Result<ComplexCovariance> {
    const SLACK: f64 = 1e-9;
    let mut clamped = 0usize;
    let mut check = |x: f64| -> Result<f64> {
        if !(x.abs() <= 1.0 + SLACK) {
            return Err(Error::Domain(format!(
                "one-bit covariance entry {x} outside [−1, 1]"
            )));
        }
        if x.abs() > 1.0 {
            clamped += 1;
        }
        Ok(x.clamp(-1.0, 1.0))
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let m = onebit_cov.matrix();
    let mut out = DMatrix::<Complex64>::zeros(m.nrows(), m.ncols());
    for (o, z) in out.iter_mut().zip(m.iter()) {
        let re = check(z.re)?;
        let im = check(z.im)?;
        *o = Complex64::new((half_pi * re).sin(), (half_pi * im).sin());
    }
    if clamped > 0 {
        log::debug!("arcsine law: clamped {clamped} components to ±1");
    }
    ComplexCovariance::hermitian_part(&out)
}

/// `[[Re C, −Im C], [Im C, Re C]]`.
pub fn complex_to_real_composite(c: &ComplexCovariance) -> RealCompositeCovariance {
    let n = c.dim();
    let m = c.matrix();
    let r = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    RealCompositeCovariance { matrix: r }
}

/// Inverse of [`complex_to_real_composite`]; averages the two real blocks and
/// antisymmetrizes the imaginary blocks.
pub fn real_composite_to_complex(r: &RealCompositeCovariance) -> Result<ComplexCovariance> {
    let dim = r.dim();
    if !dim.is_multiple_of(2) {
        return Err(Error::Dimension(format!("odd composite dimension {dim}")));
    }
    let n = dim / 2;
    let m = r.matrix();
    let c = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(
            0.5 * (m[(i, j)] + m[(i + n, j + n)]),
            0.5 * (m[(i + n, j)] - m[(i, j + n)]),
        )
    });
    ComplexCovariance::hermitian_part(&c)
}

/// Clips the eigenvalues of `r` from below at `floor`.
pub fn psd_project(r: &RealCompositeCovariance, floor: f64) -> RealCompositeCovariance {
    let floor = floor.max(0.0);
    let eig = SymmetricEigen::new(r.matrix.clone());
    if eig.eigenvalues.min() >= floor {
        return r.clone();
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    RealCompositeCovariance::symmetric_part(&m)
}

/// [`psd_project`] with the floor set relative to the largest eigenvalue.
pub fn psd_project_relative(r: &RealCompositeCovariance, relative_floor: f64) -> RealCompositeCovariance {
    let max = SymmetricEigen::new(r.matrix.clone()).eigenvalues.max().max(0.0);
    psd_project(r, relative_floor * max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{seeded_rng, simulate_snapshots, theoretical_covariance, ArrayGeometry, SourceScene};
    use crate::quantize::onebit_quantize;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian_psd(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = seeded_rng(seed);
        let x = DMatrix::from_fn(n, n + 2, |_, _| {
            c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        });
        &x * x.adjoint()
    }

    #[test]
    fn onebit_covariance_examples() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = DMatrix::from_column_slice(2, 1, &[c(s, s), c(-s, s)]);
        let rep = DMatrix::from_fn(2, 5, |i, _| h[(i, 0)]);
        let cov = onebit_empirical_covariance(&rep).unwrap();
        let outer = &h * h.adjoint();
        assert!((cov.matrix() - outer).norm() < 1e-15);

        let row = DMatrix::from_fn(1, 7, |_, j| if j % 2 == 0 { c(s, -s) } else { c(-s, s) });
        assert_eq!(onebit_empirical_covariance(&row).unwrap().matrix()[(0, 0)], c(1.0, 0.0));

        assert!(onebit_empirical_covariance(&DMatrix::zeros(2, 0)).is_err());
        assert!(onebit_empirical_covariance(&DMatrix::from_element(1, 1, c(1.0, 0.0))).is_err());
    }

    #[test]
    fn arcsin_examples() {
        let id = ComplexCovariance::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(arcsin_law(&id).unwrap(), id);

        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0 / 3.0, 0.0), c(1.0 / 3.0, 0.0), c(1.0, 0.0)]);
        let out = arcsin_law(&ComplexCovariance::new(m).unwrap()).unwrap();
        assert!((out.matrix()[(0, 1)].re - 0.5).abs() < 1e-15);

        let bad = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.1, 0.0), c(1.1, 0.0), c(1.0, 0.0)]);
        assert!(arcsin_law(&ComplexCovariance::new(bad).unwrap()).is_err());

        let edge = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0 + 1e-12, 0.0), c(1.0 + 1e-12, 0.0), c(1.0, 0.0)]);
        let out = arcsin_law(&ComplexCovariance::new(edge).unwrap()).unwrap();
        assert_eq!(out.matrix()[(0, 1)].re, 1.0);
    }

    /// Quadrant probability of a standard bivariate normal with correlation ρ,
    /// by Simpson quadrature of the angular integral
    /// `(√(1−ρ²)/2π) ∫_0^{π/2} dφ / (1 − ρ sin 2φ)`.
    fn quadrant_probability(rho: f64) -> f64 {
        let n = 20_000;
        let h = std::f64::consts::FRAC_PI_2 / n as f64;
        let f = |phi: f64| 1.0 / (1.0 - rho * (2.0 * phi).sin());
        let mut acc = f(0.0) + f(std::f64::consts::FRAC_PI_2);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        (1.0 - rho * rho).sqrt() / (2.0 * std::f64::consts::PI) * acc * h / 3.0
    }

    #[test]
    fn onebit_covariance_converges_to_sign_correlation() {
        let g = ArrayGeometry::ula(3).unwrap();
        let scene = SourceScene::new(vec![20.0], vec![1.0], 0.5, 10_000).unwrap();
        let b = simulate_snapshots(&scene, &g, 17).unwrap();
        let cov = onebit_empirical_covariance(&onebit_quantize(&b.data)).unwrap();
        let truth = theoretical_covariance(&scene, &g).unwrap();
        for i in 0..3 {
            assert_eq!(cov.matrix()[(i, i)], c(1.0, 0.0));
            for j in (0..3).filter(|&j| j != i) {
                let rho = truth[(i, j)] / (truth[(i, i)].re * truth[(j, j)].re).sqrt();
                // E[sign x sign y] = 4·P(x>0, y>0) − 1 for each real pair.
                let expect = c(
                    4.0 * quadrant_probability(rho.re) - 1.0,
                    4.0 * quadrant_probability(rho.im) - 1.0,
                );
                assert!((cov.matrix()[(i, j)] - expect).norm() < 0.05, "({i},{j})");
            }
        }
    }

    #[test]
    fn arcsin_chain_recovers_correlation() {
        let rho = 0.5;
        let mut rng = seeded_rng(3);
        let t = 100_000;
        let data = DMatrix::from_fn(2, t, |_, _| c(0.0, 0.0));
        let mut data = data;
        for col in 0..t {
            let pair = |rng: &mut crate::array::SimRng| {
                let u: f64 = StandardNormal.sample(rng);
                let v: f64 = StandardNormal.sample(rng);
                (u, rho * u + (1.0 - rho * rho).sqrt() * v)
            };
            let (a, b) = pair(&mut rng);
            let (ai, bi) = pair(&mut rng);
            data[(0, col)] = c(a, ai);
            data[(1, col)] = c(b, bi);
        }
        let est = arcsin_law(&onebit_empirical_covariance(&onebit_quantize(&data)).unwrap()).unwrap();
        assert!((est.matrix()[(0, 1)].re - rho).abs() < 0.02);
        assert_eq!(est.matrix()[(0, 0)], c(1.0, 0.0));
    }

    #[test]
    fn composite_examples() {
        let id = ComplexCovariance::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(complex_to_real_composite(&id).into_matrix(), DMatrix::identity(6, 6));

        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        let r = complex_to_real_composite(&ComplexCovariance::new(m).unwrap());
        #[rustfmt::skip]
        let expect = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, -1.0,
            0.0, 1.0, 1.0, 0.0,
            0.0, 1.0, 1.0, 0.0,
            -1.0, 0.0, 0.0, 1.0,
        ]);
        assert_eq!(r.into_matrix(), expect);

        let back = real_composite_to_complex(&RealCompositeCovariance::new(DMatrix::identity(4, 4)).unwrap()).unwrap();
        assert_eq!(back.into_matrix(), DMatrix::identity(2, 2));
        assert!(real_composite_to_complex(&RealCompositeCovariance::new(DMatrix::identity(3, 3)).unwrap()).is_err());
    }

    #[test]
    fn composite_doubles_eigenvalues() {
        let m = random_hermitian_psd(5, 8);
        let cc = ComplexCovariance::hermitian_part(&m).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(cc.matrix().clone()).eigenvalues.iter().copied().collect();
        let mut doubled: Vec<f64> = ev.iter().flat_map(|&x| [x, x]).collect();
        let mut rv: Vec<f64> = SymmetricEigen::new(complex_to_real_composite(&cc).into_matrix())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.clear();
        doubled.sort_by(f64::total_cmp);
        rv.sort_by(f64::total_cmp);
        for (a, b) in doubled.iter().zip(&rv) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_round_trip_and_projection() {
        let m = random_hermitian_psd(4, 2);
        let cc = ComplexCovariance::hermitian_part(&m).unwrap();
        let back = real_composite_to_complex(&complex_to_real_composite(&cc)).unwrap();
        assert!((back.matrix() - cc.matrix()).norm() < 1e-13);

        // Perturbed blocks still map to a Hermitian matrix.
        let mut rng = seeded_rng(4);
        let mut r = complex_to_real_composite(&cc).into_matrix();
        let noise = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-0.1..0.1));
        r += &noise + noise.transpose();
        let out = real_composite_to_complex(&RealCompositeCovariance::new(r).unwrap()).unwrap();
        let h = out.matrix();
        assert!((h - h.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn psd_projection_examples() {
        let psd = RealCompositeCovariance::new(DMatrix::from_diagonal(&nalgebra::dvector![2.0, 1.0])).unwrap();
        assert_eq!(psd_project(&psd, 0.0), psd);

        let ind = RealCompositeCovariance::new(DMatrix::from_diagonal(&nalgebra::dvector![1.0, -0.1])).unwrap();
        let p = psd_project(&ind, 1e-6);
        assert!((p.matrix() - DMatrix::from_diagonal(&nalgebra::dvector![1.0, 1e-6])).norm() < 1e-15);

        let mut rng = seeded_rng(12);
        let x = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let sym = RealCompositeCovariance::symmetric_part(&x);
        assert!(sym.min_eigenvalue() < 0.0);
        let p = psd_project(&sym, 1e-3);
        assert!(p.min_eigenvalue() >= 1e-3 - 1e-12);
        let again = psd_project(&p, 1e-3);
        assert!((again.matrix() - p.matrix()).norm() < 1e-12);
    }

    #[test]
    fn arcsin_estimate_is_scale_invariant() {
        let g = ArrayGeometry::ula(4).unwrap();
        let scene = SourceScene::new(vec![-10.0, 25.0], vec![3.0, 1.0], 0.2, 2_000).unwrap();
        let b = simulate_snapshots(&scene, &g, 21).unwrap();
        let scales = [0.3, 2.0, 17.0, 1e-3];
        let scaled = DMatrix::from_fn(4, 2_000, |i, j| b.data[(i, j)] * scales[i]);
        let est = |d: &DMatrix<Complex64>| {
            arcsin_law(&onebit_empirical_covariance(&onebit_quantize(d)).unwrap()).unwrap()
        };
        assert_eq!(est(&b.data), est(&scaled));
    }

    #[test]
    fn arcsin_estimate_error_shrinks_with_snapshots() {
        let g = ArrayGeometry::ula(4).unwrap();
        let scene = SourceScene::new(vec![-10.0, 25.0], vec![3.0, 1.0], 0.5, 1).unwrap();
        let truth = theoretical_covariance(&scene, &g).unwrap();
        let norm = DMatrix::from_fn(4, 4, |i, j| truth[(i, j)] / (truth[(i, i)].re * truth[(j, j)].re).sqrt());
        let err = |t: usize| -> f64 {
            // Average over seeds to tame the fluctuation of a single draw.
            (0..8)
                .map(|s| {
                    let b = simulate_snapshots(&scene.with_snapshots(t).unwrap(), &g, 100 + s).unwrap();
                    let est = arcsin_law(&onebit_empirical_covariance(&onebit_quantize(&b.data)).unwrap()).unwrap();
                    (est.matrix() - &norm).norm()
                })
                .sum::<f64>()
                / 8.0
        };
        let ratio = err(400) / err(40_000);
        // O(1/√T): a hundredfold increase in T shrinks the error about tenfold.
        assert!((5.0..20.0).contains(&ratio), "ratio {ratio}");
    }
}
