//! Linear-array geometry, steering vectors and the narrowband snapshot model.
//!
//! Sensor positions are integer multiples of half a wavelength, so a source at
//! bearing `θ` imprints the phase `π·d·sin θ` on the sensor at index `d`.
//! Snapshots follow `g(t) = Σ_k a(θ_k) x_k(t) + w(t)` with independent
//! circularly-symmetric complex Gaussian amplitudes and noise.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Generator used for every stochastic draw in the crate.
pub type SimRng = ChaCha20Rng;

/// Seeded generator; identical seeds give identical streams on every platform.
pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// How a geometry's index set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    Ula,
    Coprime { p: usize, q: usize },
    Nested { n1: usize, n2: usize },
    Custom,
}

/// Sensor index set of a linear array, in half-wavelength units.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    sensor_indices: Vec<usize>,
    kind: GeometryKind,
}

impl ArrayGeometry {
    /// Uniform linear array `{0, …, n−1}`.
    pub fn ula(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("ULA needs at least one sensor".into()));
        }
        Ok(Self {
            sensor_indices: (0..n).collect(),
            kind: GeometryKind::Ula,
        })
    }

    /// Coprime array `{p·i : 0 ≤ i < q} ∪ {q·j : 0 ≤ j < p}` with `p + q − 1` sensors.
    pub fn coprime(p: usize, q: usize) -> Result<Self> {
        if p < 2 || q < 2 {
            return Err(Error::InvalidConfig(format!(
                "coprime array needs P, Q ≥ 2 (got {p}, {q})"
            )));
        }
        if gcd(p, q) != 1 {
            return Err(Error::InvalidConfig(format!("{p} and {q} are not coprime")));
        }
        let mut idx: Vec<usize> = (0..q).map(|i| p * i).chain((0..p).map(|j| q * j)).collect();
        idx.sort_unstable();
        idx.dedup();
        debug_assert_eq!(idx.len(), p + q - 1);
        Ok(Self {
            sensor_indices: idx,
            kind: GeometryKind::Coprime { p, q },
        })
    }

    /// Two-level nested array `{1, …, n1} ∪ {m(n1+1) : 1 ≤ m ≤ n2}`.
    pub fn nested(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "nested array needs N1, N2 ≥ 1 (got {n1}, {n2})"
            )));
        }
        let idx = (1..=n1).chain((1..=n2).map(|m| m * (n1 + 1))).collect();
        Ok(Self {
            sensor_indices: idx,
            kind: GeometryKind::Nested { n1, n2 },
        })
    }

    /// Arbitrary index set; must be strictly increasing.
    pub fn custom(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidConfig("empty sensor index set".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "sensor indices must be strictly increasing".into(),
            ));
        }
        // A custom set that happens to be {0..N-1} behaves as a ULA.
        let kind = if indices.iter().enumerate().all(|(i, &d)| i == d) {
            GeometryKind::Ula
        } else {
            GeometryKind::Custom
        };
        Ok(Self {
            sensor_indices: indices,
            kind,
        })
    }

    pub fn sensor_indices(&self) -> &[usize] {
        &self.sensor_indices
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.sensor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensor_indices.is_empty()
    }

    pub fn is_ula(&self) -> bool {
        self.kind == GeometryKind::Ula
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Far-field sources observed by the array, plus sensor noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceScene {
    doas_deg: Vec<f64>,
    source_powers: Vec<f64>,
    noise_power: f64,
    snapshots: usize,
}

impl SourceScene {
    pub fn new(
        doas_deg: Vec<f64>,
        source_powers: Vec<f64>,
        noise_power: f64,
        snapshots: usize,
    ) -> Result<Self> {
        if doas_deg.is_empty() {
            return Err(Error::InvalidConfig("scene needs at least one source".into()));
        }
        if doas_deg.len() != source_powers.len() {
            return Err(Error::InvalidConfig(format!(
                "{} DOAs but {} source powers",
                doas_deg.len(),
                source_powers.len()
            )));
        }
        if let Some(t) = doas_deg.iter().find(|t| !(t.abs() < 90.0)) {
            return Err(Error::InvalidConfig(format!("DOA {t}° outside (−90°, 90°)")));
        }
        for (i, a) in doas_deg.iter().enumerate() {
            if doas_deg[..i].contains(a) {
                return Err(Error::InvalidConfig(format!("duplicate DOA {a}°")));
            }
        }
        if source_powers.iter().chain([&noise_power]).any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidConfig("all powers must be positive and finite".into()));
        }
        if snapshots == 0 {
            return Err(Error::InvalidConfig("snapshot count must be at least 1".into()));
        }
        Ok(Self {
            doas_deg,
            source_powers,
            noise_power,
            snapshots,
        })
    }

    /// Builds a scene from per-source SNRs, `SNR_k = 20·log10(σ_k/σ)`.
    pub fn from_snr_db(
        doas_deg: Vec<f64>,
        snr_db: &[f64],
        noise_power: f64,
        snapshots: usize,
    ) -> Result<Self> {
        let powers = snr_db
            .iter()
            .map(|s| noise_power * 10f64.powf(s / 10.0))
            .collect();
        Self::new(doas_deg, powers, noise_power, snapshots)
    }

    pub fn doas_deg(&self) -> &[f64] {
        &self.doas_deg
    }

    pub fn source_powers(&self) -> &[f64] {
        &self.source_powers
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn num_sources(&self) -> usize {
        self.doas_deg.len()
    }

    pub fn with_snapshots(&self, snapshots: usize) -> Result<Self> {
        Self::new(
            self.doas_deg.clone(),
            self.source_powers.clone(),
            self.noise_power,
            snapshots,
        )
    }

    /// Per-channel (I or Q) standard deviation of the noiseless signal,
    /// `√(Σ_k σ_k² / 2)`.
    pub fn signal_channel_std(&self) -> f64 {
        (self.source_powers.iter().sum::<f64>() / 2.0).sqrt()
    }
}

/// A block of complex snapshots, one column per time instant.
#[derive(Debug, Clone)]
pub struct SnapshotBatch {
    pub data: DMatrix<Complex64>,
    pub geometry: ArrayGeometry,
    pub rng_seed: u64,
}

impl SnapshotBatch {
    pub fn sensors(&self) -> usize {
        self.data.nrows()
    }

    pub fn snapshots(&self) -> usize {
        self.data.ncols()
    }
}

/// `a(θ)` with entries `exp(j·π·d_n·sin θ)`. Accepts `θ ∈ [−90°, 90°]`.
pub fn steering_vector(geometry: &ArrayGeometry, theta_deg: f64) -> Result<DVector<Complex64>> {
    if !theta_deg.is_finite() || theta_deg.abs() > 90.0 {
        return Err(Error::Domain(format!("angle {theta_deg}° outside [−90°, 90°]")));
    }
    Ok(steering_unchecked(geometry, theta_deg.to_radians().sin()))
}

/// Steering vector for a direction cosine `u = sin θ`.
pub(crate) fn steering_unchecked(geometry: &ArrayGeometry, u: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        geometry.len(),
        geometry
            .sensor_indices
            .iter()
            .map(|&d| Complex64::from_polar(1.0, std::f64::consts::PI * d as f64 * u)),
    )
}

/// Steering matrix with one column per DOA.
pub fn steering_matrix(geometry: &ArrayGeometry, doas_deg: &[f64]) -> Result<DMatrix<Complex64>> {
    let cols = doas_deg
        .iter()
        .map(|&t| steering_vector(geometry, t))
        .collect::<Result<Vec<_>>>()?;
    if cols.is_empty() {
        return Ok(DMatrix::zeros(geometry.len(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Circularly-symmetric complex Gaussian with the given variance.
fn complex_gaussian(rng: &mut SimRng, variance: f64) -> Complex64 {
    let u: f64 = StandardNormal.sample(rng);
    let v: f64 = StandardNormal.sample(rng);
    Complex64::new(u, v) * (variance / 2.0).sqrt()
}

/// Draws `T` snapshots of the scene. Amplitudes are drawn first (source-major,
/// then time), then the noise matrix column by column.
pub fn simulate_snapshots(
    scene: &SourceScene,
    geometry: &ArrayGeometry,
    seed: u64,
) -> Result<SnapshotBatch> {
    let n = geometry.len();
    let k = scene.num_sources();
    if n < k + 1 {
        return Err(Error::InvalidConfig(format!(
            "{n} sensors cannot resolve {k} sources (need at least K+1)"
        )));
    }
    let t = scene.snapshots;
    let mut rng = seeded_rng(seed);

    let mut amplitudes = DMatrix::<Complex64>::zeros(k, t);
    for (src, &p) in scene.source_powers.iter().enumerate() {
        for col in 0..t {
            amplitudes[(src, col)] = complex_gaussian(&mut rng, p);
        }
    }
    let mut data = DMatrix::<Complex64>::zeros(n, t);
    for col in 0..t {
        for row in 0..n {
            data[(row, col)] = complex_gaussian(&mut rng, scene.noise_power);
        }
    }
    let steering = steering_matrix(geometry, &scene.doas_deg)?;
    data.gemm(
        Complex64::new(1.0, 0.0),
        &steering,
        &amplitudes,
        Complex64::new(1.0, 0.0),
    );
    Ok(SnapshotBatch {
        data,
        geometry: geometry.clone(),
        rng_seed: seed,
    })
}

/// `Σ_k σ_k² a(θ_k) a(θ_k)^H + σ² I` for an arbitrary (possibly empty) source list.
pub fn covariance_from_sources(
    geometry: &ArrayGeometry,
    doas_deg: &[f64],
    powers: &[f64],
    noise_power: f64,
) -> Result<DMatrix<Complex64>> {
    if doas_deg.len() != powers.len() {
        return Err(Error::Dimension(format!(
            "{} DOAs but {} powers",
            doas_deg.len(),
            powers.len()
        )));
    }
    let n = geometry.len();
    let mut cov = DMatrix::<Complex64>::identity(n, n) * Complex64::new(noise_power, 0.0);
    for (&theta, &p) in doas_deg.iter().zip(powers) {
        let a = steering_vector(geometry, theta)?;
        cov += (&a * a.adjoint()) * Complex64::new(p, 0.0);
    }
    Ok(cov)
}

/// Closed-form `E[g g^H]` of the scene.
pub fn theoretical_covariance(
    scene: &SourceScene,
    geometry: &ArrayGeometry,
) -> Result<DMatrix<Complex64>> {
    covariance_from_sources(geometry, &scene.doas_deg, &scene.source_powers, scene.noise_power)
}
