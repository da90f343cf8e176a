//! LLL lattice reduction and the integer-forcing modulo decoder.
//!
//! The forcing matrix is chosen by reducing the lattice whose Gram matrix is
//! the (noise-augmented) covariance `M = Lᵀ L`: a coefficient vector `u`
//! yields a basis column `L u` of squared length `uᵀ M u`, which is exactly the
//! variance of the forced combination `uᵀ(ḡ + z)`. Short reduced columns are
//! therefore combinations that stay inside the modulo range.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::covariance::RealCompositeCovariance;
use crate::error::{Error, Result};
use crate::quantize::fold;

/// Lovász parameter used unless a caller asks otherwise.
pub const DEFAULT_DELTA: f64 = 0.75;

/// Columns of `basis` generate the lattice.
#[derive(Debug, Clone)]
pub struct LatticeBasis {
    basis: DMatrix<f64>,
    delta: f64,
}

impl LatticeBasis {
    pub fn new(basis: DMatrix<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.25 && delta < 1.0) {
            return Err(Error::Domain(format!("LLL delta {delta} not in (1/4, 1)")));
        }
        if basis.ncols() == 0 || basis.nrows() < basis.ncols() {
            return Err(Error::Dimension(format!(
                "basis of shape {}×{} cannot have independent columns",
                basis.nrows(),
                basis.ncols()
            )));
        }
        if basis.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("basis has non-finite entries".into()));
        }
        Ok(Self { basis, delta })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Output of [`lll_reduce`]: `reduced = basis · unimodular`.
#[derive(Debug, Clone)]
pub struct LllReduction {
    pub reduced: DMatrix<f64>,
    pub unimodular: DMatrix<i64>,
    /// Exact integer inverse of `unimodular`.
    pub unimodular_inv: DMatrix<i64>,
}

/// Gram–Schmidt coefficients `μ` (strictly lower part) and squared norms `‖b*_i‖²`.
pub fn gram_schmidt(basis: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = basis.ncols();
    let mut mu = DMatrix::<f64>::identity(n, n);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = basis.column(i).into_owned();
        for j in 0..i {
            let m = if norms[j] > 0.0 {
                basis.column(i).dot(&ortho[j]) / norms[j]
            } else {
                0.0
            };
            mu[(i, j)] = m;
            v.axpy(-m, &ortho[j], 1.0);
        }
        norms.push(v.norm_squared());
        ortho.push(v);
    }
    (mu, norms)
}

/// A violated LLL condition, reported by [`check_lll_conditions`].
#[derive(Debug, Clone, PartialEq)]
pub enum LllViolation {
    SizeReduction { i: usize, j: usize, mu: f64 },
    Lovasz { k: usize, lhs: f64, rhs: f64 },
}

/// Checks size reduction `|μ_ij| ≤ 1/2` and the Lovász condition
/// `‖b*_k‖² ≥ (δ − μ²_{k,k−1})‖b*_{k−1}‖²`, both with relative slack `tol`.
pub fn check_lll_conditions(
    reduced: &DMatrix<f64>,
    delta: f64,
    tol: f64,
) -> std::result::Result<(), LllViolation> {
    let (mu, norms) = gram_schmidt(reduced);
    let n = reduced.ncols();
    for i in 1..n {
        for j in 0..i {
            if mu[(i, j)].abs() > 0.5 + tol {
                return Err(LllViolation::SizeReduction { i, j, mu: mu[(i, j)] });
            }
        }
        let lhs = norms[i];
        let rhs = (delta - mu[(i, i - 1)].powi(2)) * norms[i - 1];
        if lhs < rhs * (1.0 - tol) {
            return Err(LllViolation::Lovasz { k: i, lhs, rhs });
        }
    }
    Ok(())
}

struct LllState {
    b: DMatrix<f64>,
    mu: DMatrix<f64>,
    norms: Vec<f64>,
    u: DMatrix<i64>,
    u_inv: DMatrix<i64>,
}

impl LllState {
    fn new(basis: &DMatrix<f64>, u: DMatrix<i64>, u_inv: DMatrix<i64>) -> Result<Self> {
        let b = basis * u.map(|x| x as f64);
        let (mu, norms) = gram_schmidt(&b);
        let scale = b.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
        for (column, &norm_sq) in norms.iter().enumerate() {
            if !(norm_sq > 1e-26 * scale) {
                return Err(Error::RankDeficient { column, norm_sq });
            }
        }
        Ok(Self { b, mu, norms, u, u_inv })
    }

    /// Column `k` minus `q` times column `l`, keeping `μ` and `U⁻¹` in step.
    fn reduce(&mut self, k: usize, l: usize) -> Result<()> {
        let m = self.mu[(k, l)];
        if m.abs() <= 0.5 {
            return Ok(());
        }
        let qf = m.round();
        if qf.abs() > 2f64.powi(52) {
            return Err(Error::IntegerOverflow);
        }
        let q = qf as i64;
        let n = self.b.ncols();
        let col_l = self.b.column(l).into_owned();
        self.b.column_mut(k).axpy(-qf, &col_l, 1.0);
        for r in 0..n {
            let t = self.u[(r, l)].checked_mul(q).ok_or(Error::IntegerOverflow)?;
            self.u[(r, k)] = self.u[(r, k)].checked_sub(t).ok_or(Error::IntegerOverflow)?;
            let t = self.u_inv[(k, r)].checked_mul(q).ok_or(Error::IntegerOverflow)?;
            self.u_inv[(l, r)] = self.u_inv[(l, r)].checked_add(t).ok_or(Error::IntegerOverflow)?;
        }
        for j in 0..l {
            self.mu[(k, j)] -= qf * self.mu[(l, j)];
        }
        self.mu[(k, l)] -= qf;
        Ok(())
    }

    fn swap(&mut self, k: usize) {
        let n = self.b.ncols();
        let m = self.mu[(k, k - 1)];
        let big = self.norms[k] + m * m * self.norms[k - 1];
        let new_mu = m * self.norms[k - 1] / big;
        let new_norm_k = self.norms[k - 1] * self.norms[k] / big;
        self.b.swap_columns(k, k - 1);
        self.u.swap_columns(k, k - 1);
        self.u_inv.swap_rows(k, k - 1);
        for j in 0..k - 1 {
            let t = self.mu[(k, j)];
            self.mu[(k, j)] = self.mu[(k - 1, j)];
            self.mu[(k - 1, j)] = t;
        }
        for i in k + 1..n {
            let t = self.mu[(i, k)];
            self.mu[(i, k)] = self.mu[(i, k - 1)] - m * t;
            self.mu[(i, k - 1)] = t + new_mu * self.mu[(i, k)];
        }
        self.mu[(k, k - 1)] = new_mu;
        self.norms[k - 1] = big;
        self.norms[k] = new_norm_k;
    }

    fn run(&mut self, delta: f64, max_swaps: usize) -> Result<()> {
        let n = self.b.ncols();
        let mut k = 1;
        let mut swaps = 0;
        while k < n {
            self.reduce(k, k - 1)?;
            let m = self.mu[(k, k - 1)];
            if self.norms[k] < (delta - m * m) * self.norms[k - 1] {
                self.swap(k);
                swaps += 1;
                if swaps > max_swaps {
                    log::warn!("LLL stopped after {max_swaps} swaps");
                    return Ok(());
                }
                k = (k - 1).max(1);
            } else {
                for l in (0..k - 1).rev() {
                    self.reduce(k, l)?;
                }
                k += 1;
            }
        }
        Ok(())
    }
}

/// LLL-reduces the columns of `basis`.
///
/// Gram–Schmidt data is tracked in floating point while the unimodular
/// transform and its inverse are tracked exactly. After each pass the basis is
/// rebuilt as `basis · U` and the conditions are re-verified from scratch; a
/// pass that drifted is resumed from the rebuilt basis.
pub fn lll_reduce(basis: &LatticeBasis) -> Result<LllReduction> {
    let n = basis.basis.ncols();
    let mut u = DMatrix::<i64>::identity(n, n);
    let mut u_inv = DMatrix::<i64>::identity(n, n);
    const PASSES: usize = 6;
    for pass in 0..PASSES {
        let mut state = LllState::new(&basis.basis, u, u_inv)?;
        state.run(basis.delta, 100_000 * n.max(1))?;
        u = state.u;
        u_inv = state.u_inv;
        let reduced = &basis.basis * u.map(|x| x as f64);
        match check_lll_conditions(&reduced, basis.delta, 1e-9) {
            Ok(()) => {
                return Ok(LllReduction {
                    reduced,
                    unimodular: u,
                    unimodular_inv: u_inv,
                })
            }
            Err(v) if pass + 1 == PASSES => {
                log::warn!("LLL conditions still violated after {PASSES} passes: {v:?}");
                return Ok(LllReduction {
                    reduced,
                    unimodular: u,
                    unimodular_inv: u_inv,
                });
            }
            Err(v) => log::debug!("LLL pass {pass} drifted ({v:?}); refreshing Gram–Schmidt"),
        }
    }
    unreachable!()
}

/// Determinant of an integer matrix by fraction-free (Bareiss) elimination.
pub fn integer_determinant(a: &DMatrix<i64>) -> BigInt {
    assert!(a.is_square(), "determinant of a non-square matrix");
    let n = a.nrows();
    if n == 0 {
        return BigInt::one();
    }
    let mut m: Vec<Vec<BigInt>> = (0..n)
        .map(|i| (0..n).map(|j| BigInt::from(a[(i, j)])).collect())
        .collect();
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if m[k][k].is_zero() {
            match (k + 1..n).find(|&i| !m[i][k].is_zero()) {
                Some(i) => {
                    m.swap(i, k);
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = (&m[k][k] * &m[i][j] - &m[i][k] * &m[k][j]) / &prev;
                m[i][j] = v;
            }
        }
        prev = m[k][k].clone();
    }
    sign * &m[n - 1][n - 1]
}

/// Exact inverse of an invertible integer matrix, returned in floating point.
///
/// Fraction-free Gauss–Jordan on `[A | I]` ends at `[d·I | d·A⁻¹]` with every
/// intermediate division exact.
pub fn integer_inverse(a: &DMatrix<i64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension("inverse of a non-square matrix".into()));
    }
    let n = a.nrows();
    let mut m: Vec<Vec<BigInt>> = (0..n)
        .map(|i| {
            (0..2 * n)
                .map(|j| {
                    if j < n {
                        BigInt::from(a[(i, j)])
                    } else {
                        BigInt::from((j - n == i) as i64)
                    }
                })
                .collect()
        })
        .collect();
    let mut prev = BigInt::one();
    for k in 0..n {
        let p = (k..n)
            .find(|&i| !m[i][k].is_zero())
            .ok_or_else(|| Error::Domain("integer matrix is singular".into()))?;
        m.swap(p, k);
        for i in 0..n {
            if i == k {
                continue;
            }
            for j in 0..2 * n {
                if j == k {
                    continue;
                }
                let v = (&m[k][k] * &m[i][j] - &m[i][k] * &m[k][j]) / &prev;
                m[i][j] = v;
            }
            m[i][k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }
    let d = prev;
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        debug_assert_eq!(m[i][i], d);
        for j in 0..n {
            inv[(i, j)] = ratio_to_f64(&m[i][n + j], &d);
        }
    }
    Ok(inv)
}

fn ratio_to_f64(num: &BigInt, den: &BigInt) -> f64 {
    let q = num / den;
    let r = num % den;
    let whole = q.to_f64().unwrap_or(f64::NAN);
    if r.is_zero() {
        return whole;
    }
    let (rf, df) = (r.to_f64(), den.to_f64());
    match (rf, df) {
        (Some(rf), Some(df)) if df.abs().is_finite() && df != 0.0 => whole + rf / df,
        _ => {
            // Scale both down until they fit; only reached for astronomically large entries.
            let shift = den.abs().bits().saturating_sub(900);
            let rf = (&r >> shift).to_f64().unwrap_or(0.0);
            let df = (den >> shift).to_f64().unwrap_or(1.0);
            whole + rf / df
        }
    }
}

/// Integer-forcing matrix. Row `k` of `a` is the coefficient vector `a_k`, so the
/// decoder computes `a⁻¹ · M_λ(a · ȳ)` directly.
#[derive(Debug, Clone)]
pub struct IfMatrix {
    a: DMatrix<i64>,
    a_f64: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    objective: f64,
}

impl IfMatrix {
    /// No forcing; decoding returns its input.
    pub fn identity(n: usize) -> Self {
        Self {
            a: DMatrix::identity(n, n),
            a_f64: DMatrix::identity(n, n),
            a_inv: DMatrix::identity(n, n),
            objective: f64::NAN,
        }
    }

    /// Wraps an arbitrary invertible integer matrix; the objective is left unset.
    pub fn from_integer_matrix(a: DMatrix<i64>) -> Result<Self> {
        let a_inv = integer_inverse(&a)?;
        Ok(Self {
            a_f64: a.map(|x| x as f64),
            a,
            a_inv,
            objective: f64::NAN,
        })
    }

    pub fn a(&self) -> &DMatrix<i64> {
        &self.a
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    /// Largest row variance `max_k a_kᵀ M a_k` achieved for the covariance it was solved for.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Variances `a_kᵀ M a_k` of every row under `m`.
    pub fn row_variances(&self, m: &DMatrix<f64>) -> Vec<f64> {
        row_quadratic_forms(&self.a_f64, m)
    }

    pub fn is_identity(&self) -> bool {
        self.a == DMatrix::identity(self.dim(), self.dim())
    }

    /// Decodes every column of `y` (each a stacked `[Re; Im]` modulo sample).
    pub fn decode_batch(&self, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let mut forced = &self.a_f64 * y;
        forced.apply(|v| *v = fold(*v, lambda));
        &self.a_inv * forced
    }
}

fn row_quadratic_forms(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let am = a * m;
    (0..a.nrows()).map(|k| am.row(k).dot(&a.row(k))).collect()
}

/// Approximate minimiser of `max_k a_kᵀ (m + σ_q² I) a_k` over invertible integer
/// matrices via LLL, with [`DEFAULT_DELTA`].
pub fn solve_if_matrix(m: &RealCompositeCovariance, quantization_noise_var: f64) -> Result<IfMatrix> {
    solve_if_matrix_with_delta(m, quantization_noise_var, DEFAULT_DELTA)
}

/// [`solve_if_matrix`] with an explicit Lovász parameter.
///
/// Rows are ordered by ascending variance. If the reduced matrix does worse than
/// the identity the identity is returned instead.
pub fn solve_if_matrix_with_delta(
    m: &RealCompositeCovariance,
    quantization_noise_var: f64,
    delta: f64,
) -> Result<IfMatrix> {
    if !(quantization_noise_var >= 0.0) {
        return Err(Error::Domain(format!(
            "quantization noise variance {quantization_noise_var} must be non-negative"
        )));
    }
    let n = m.dim();
    let mut gram = m.matrix().clone();
    for i in 0..n {
        gram[(i, i)] += quantization_noise_var;
    }
    let chol = Cholesky::new(gram.clone()).ok_or(Error::NotPositiveDefinite)?;
    // gram = L Lᵀ, so the columns of Lᵀ form a basis with Gram matrix `gram`.
    let basis = chol.l().transpose();
    let red = lll_reduce(&LatticeBasis::new(basis, delta)?)?;

    let u_f = red.unimodular.map(|x| x as f64);
    let forms: Vec<f64> = (0..n)
        .map(|k| {
            let col = u_f.column(k);
            (&gram * col).dot(&col)
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| forms[x].total_cmp(&forms[y]).then(x.cmp(&y)));
    let objective = forms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let identity_objective = (0..n).map(|i| gram[(i, i)]).fold(f64::NEG_INFINITY, f64::max);

    if !(objective <= identity_objective) {
        log::debug!(
            "LLL objective {objective:e} exceeds identity objective {identity_objective:e}; no forcing"
        );
        let mut id = IfMatrix::identity(n);
        id.objective = identity_objective;
        return Ok(id);
    }

    // Row k of `a` is column order[k] of U; the matching inverse is column
    // order[k] of U⁻ᵀ, i.e. row order[k] of U⁻¹ transposed.
    let a = DMatrix::from_fn(n, n, |k, j| red.unimodular[(j, order[k])]);
    let a_inv = DMatrix::from_fn(n, n, |i, k| red.unimodular_inv[(order[k], i)] as f64);
    Ok(IfMatrix {
        a_f64: a.map(|x| x as f64),
        a,
        a_inv,
        objective,
    })
}

/// `Â⁻¹ · M_λ(Â · ȳ)` for a single stacked sample.
pub fn if_decode(y_bar: &DVector<f64>, if_matrix: &IfMatrix, lambda: f64) -> DVector<f64> {
    let y = DMatrix::from_column_slice(y_bar.len(), 1, y_bar.as_slice());
    let out = if_matrix.decode_batch(&y, lambda);
    DVector::from_column_slice(out.as_slice())
}

/// `[Re g; Im g]`.
pub fn stack_real(g: &DVector<Complex64>) -> DVector<f64> {
    let n = g.len();
    DVector::from_fn(2 * n, |i, _| if i < n { g[i].re } else { g[i - n].im })
}

pub fn unstack_real(v: &DVector<f64>) -> Result<DVector<Complex64>> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::Dimension(format!("odd stacked length {}", v.len())));
    }
    let n = v.len() / 2;
    Ok(DVector::from_fn(n, |i, _| Complex64::new(v[i], v[i + n])))
}

/// Column-wise [`stack_real`] for an `N×T` batch.
pub fn stack_real_batch(g: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = g.nrows();
    DMatrix::from_fn(2 * n, g.ncols(), |i, t| {
        if i < n {
            g[(i, t)].re
        } else {
            g[(i - n, t)].im
        }
    })
}

pub fn unstack_real_batch(v: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
    if !v.nrows().is_multiple_of(2) {
        return Err(Error::Dimension(format!("odd stacked height {}", v.nrows())));
    }
    let n = v.nrows() / 2;
    Ok(DMatrix::from_fn(n, v.ncols(), |i, t| {
        Complex64::new(v[(i, t)], v[(i + n, t)])
    }))
}
