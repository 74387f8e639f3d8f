//! Spectrum, spectral projection onto the kernel, invariant density and
//! empirical exponential decay towards the projection.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Schur, SVD};
use num_complex::Complex64;
use thiserror::Error;

use crate::assembly::NonlocalOperator;
use crate::solver::{sup_norm, ShiftedSolver, SolveError, Stepper};

/// Largest interior dimension handled by the dense eigensolver.
pub const MAX_DENSE_DIM: usize = 4096;

/// Distances below this are treated as numerically zero by [`decay_fit`].
pub const DISTANCE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("interior dimension {0} exceeds the dense eigensolve budget of {MAX_DENSE_DIM}")]
    DimensionTooLarge(usize),
    #[error("Schur iteration did not converge")]
    EigensolveNoConvergence,
    #[error("zero eigenvalue looks defective (left/right pairing singular, σ_min = {0:e})")]
    DefectiveZeroEigenvalue(f64),
    #[error("NotConservative: expected exactly one zero mode, found {0}")]
    NotConservative(usize),
    #[error("DistanceUnderflow: fewer than two distances above {DISTANCE_FLOOR:e}")]
    DistanceUnderflow,
    #[error("need at least four increasing sample times")]
    BadTimes,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    /// Sorted by descending real part, then descending imaginary part.
    pub eigenvalues: Vec<Complex64>,
    pub spectral_bound: f64,
    /// `s` minus the largest real part below `s − tol_zero`.
    pub gap: f64,
    /// Eigenvalues of modulus below `tol_zero`.
    pub zero_modes: usize,
    pub tol_zero: f64,
    pub rank_p: usize,
    /// Spectral projection onto the kernel; filled by [`spectral_projection`].
    pub projection: Option<DMatrix<f64>>,
    /// Right kernel basis (columns); filled by [`spectral_projection`].
    pub kernel: Option<DMatrix<f64>>,
}

/// `1e-8 · ‖A_nl‖_∞`.
pub fn default_tol_zero(op: &NonlocalOperator) -> f64 {
    1e-8 * op.norm_inf()
}

pub fn eigen_spectrum(op: &NonlocalOperator, tol_zero: Option<f64>) -> Result<SpectralResult, SpectralError> {
    let n = op.dim();
    if n > MAX_DENSE_DIM {
        return Err(SpectralError::DimensionTooLarge(n));
    }
    let tol_zero = tol_zero.unwrap_or_else(|| default_tol_zero(op));
    let mut eigenvalues = schur_eigenvalues(op)?;
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let spectral_bound = eigenvalues.first().map(|l| l.re).unwrap_or(f64::NEG_INFINITY);
    let gap = eigenvalues
        .iter()
        .map(|l| l.re)
        .find(|&re| re < spectral_bound - tol_zero)
        .map(|re| spectral_bound - re)
        .unwrap_or(f64::INFINITY);
    let zero_modes = eigenvalues.iter().filter(|l| l.norm() < tol_zero).count();
    Ok(SpectralResult {
        eigenvalues,
        spectral_bound,
        gap,
        zero_modes,
        tol_zero,
        rank_p: 0,
        projection: None,
        kernel: None,
    })
}

/// Eigenvalues from the real Schur form. QR sweeps occasionally stall on
/// the raw matrix; the scaled matrix and its transpose are tried next.
fn schur_eigenvalues(op: &NonlocalOperator) -> Result<Vec<Complex64>, SpectralError> {
    let a = op.matrix();
    let n = a.nrows();
    let scale = op.norm_inf().max(f64::MIN_POSITIVE);
    let attempts = [(a.clone(), 1.0), (a / scale, scale), (a.transpose() / scale, scale)];
    for (m, factor) in attempts {
        if let Some(schur) = Schur::try_new(m, f64::EPSILON, 1000 * n.max(10)) {
            return Ok(schur.complex_eigenvalues().iter().map(|l| l * factor).collect());
        }
    }
    Err(SpectralError::EigensolveNoConvergence)
}

/// Orthonormal basis for the `k` smallest right singular vectors of `a`,
/// polished by block inverse iteration with `(εI − a)⁻¹`.
fn null_basis(a: &DMatrix<f64>, k: usize, norm: f64) -> Result<DMatrix<f64>, SpectralError> {
    let n = a.nrows();
    let svd = SVD::new(a.clone(), false, true);
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut basis = DMatrix::from_fn(n, k, |r, c| v_t[(order[c], r)]);
    let solver = ShiftedSolver::new(1e-8 * norm.max(f64::MIN_POSITIVE), a)?;
    for _ in 0..3 {
        basis = solver.solve_matrix(&basis)?.qr().q();
    }
    Ok(basis)
}

/// Right and left kernel bases of dimension `k`.
fn kernels(op: &NonlocalOperator, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>), SpectralError> {
    let a = op.matrix();
    let norm = op.norm_inf();
    Ok((null_basis(a, k, norm)?, null_basis(&a.transpose(), k, norm)?))
}

/// `P = R (LᵀR)⁻¹ Lᵀ` from right/left kernel bases; `P = 0` without zero modes.
pub fn spectral_projection(op: &NonlocalOperator, spec: &SpectralResult) -> Result<SpectralResult, SpectralError> {
    let n = op.dim();
    let k = spec.zero_modes;
    let mut out = spec.clone();
    out.rank_p = k;
    if k == 0 {
        out.projection = Some(DMatrix::zeros(n, n));
        out.kernel = Some(DMatrix::zeros(n, 0));
        return Ok(out);
    }
    let (right, left) = kernels(op, k)?;
    let pairing = left.transpose() * &right;
    let smin = pairing.singular_values().min();
    if !(smin > 1e-8) {
        return Err(SpectralError::DefectiveZeroEigenvalue(smin));
    }
    let inv = pairing
        .try_inverse()
        .ok_or(SpectralError::DefectiveZeroEigenvalue(smin))?;
    out.projection = Some(&right * inv * left.transpose());
    out.kernel = Some(right);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantDensity {
    /// Density values at interior nodes; `Σ h_i · cell_volume = 1`.
    pub h: DVector<f64>,
    pub cell_volume: f64,
    /// Largest negative entry removed by clipping, relative to `max h`.
    pub clipped: f64,
}

impl InvariantDensity {
    /// `∫ f h` by the nodal quadrature.
    pub fn integrate(&self, f: &DVector<f64>) -> f64 {
        self.h.dot(f) * self.cell_volume
    }
}

/// Normalized left null vector of `A_nl` for a single zero mode.
pub fn invariant_density(
    op: &NonlocalOperator,
    cell_volume: f64,
    tol_zero: Option<f64>,
) -> Result<InvariantDensity, SpectralError> {
    let spec = eigen_spectrum(op, tol_zero)?;
    if spec.zero_modes != 1 {
        return Err(SpectralError::NotConservative(spec.zero_modes));
    }
    let (_, left) = kernels(op, 1)?;
    let mut l: DVector<f64> = left.column(0).into_owned();
    if l.sum() < 0.0 {
        l = -l;
    }
    let top = l.amax();
    let most_negative = l.iter().copied().fold(0.0, f64::min);
    let clipped = -most_negative / top;
    l.apply(|v| *v = v.max(0.0));
    let total = l.sum() * cell_volume;
    Ok(InvariantDensity { h: l / total, cell_volume, clipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub times: Vec<f64>,
    /// `‖T(t)u0 − P u0‖_∞` at each time.
    pub distances: Vec<f64>,
    /// Smallest `M ≥ 1` with `d(t) ≤ M e^{−εt} d(0)` on every sample.
    pub m: f64,
    pub epsilon: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    /// Some tail distances fell below [`DISTANCE_FLOOR`] and were dropped.
    pub underflow: bool,
}

/// `‖T(t)u0 − P u0‖_∞` by backward Euler, halving the step until two
/// refinements agree to `rel_tol`.
pub fn converged_distance(
    op: &NonlocalOperator,
    u0: &DVector<f64>,
    target: &DVector<f64>,
    t: f64,
    rel_tol: f64,
) -> Result<f64, SolveError> {
    if t == 0.0 {
        return Ok(sup_norm(&(u0 - target)));
    }
    let mut k = 16usize;
    let mut prev = sup_norm(&(Stepper::new(op, t, k)?.run(u0)? - target));
    loop {
        k *= 2;
        let d = sup_norm(&(Stepper::new(op, t, k)?.run(u0)? - target));
        if (d - prev).abs() <= rel_tol * d || d < DISTANCE_FLOOR || k >= 1 << 16 {
            return Ok(d);
        }
        prev = d;
    }
}

pub fn decay_fit(
    op: &NonlocalOperator,
    projection: &DMatrix<f64>,
    u0: &DVector<f64>,
    times: &[f64],
) -> Result<DecayFit, SpectralError> {
    if times.len() < 4 || times.windows(2).any(|w| !(w[1] > w[0])) || times[0] < 0.0 {
        return Err(SpectralError::BadTimes);
    }
    let target = projection * u0;
    let d0 = sup_norm(&(u0 - &target));
    let distances = times
        .iter()
        .map(|&t| converged_distance(op, u0, &target, t, 0.01))
        .collect::<Result<Vec<f64>, _>>()?;
    let window: Vec<(f64, f64)> = times[times.len() / 2..]
        .iter()
        .zip(&distances[times.len() / 2..])
        .filter(|(_, &d)| d >= DISTANCE_FLOOR)
        .map(|(&t, &d)| (t, libm::log(d)))
        .collect();
    let underflow = distances.iter().any(|&d| d < DISTANCE_FLOOR);
    if window.len() < 2 || !(d0 >= DISTANCE_FLOOR) {
        return Err(SpectralError::DistanceUnderflow);
    }
    let k = window.len() as f64;
    let mt = window.iter().map(|p| p.0).sum::<f64>() / k;
    let my = window.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = window.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let sxy: f64 = window.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let residual = libm::sqrt(
        window
            .iter()
            .map(|p| {
                let r = p.1 - (intercept + slope * p.0);
                r * r
            })
            .sum::<f64>()
            / k,
    );
    let epsilon = -slope;
    let m = times
        .iter()
        .zip(&distances)
        .map(|(&t, &d)| d * libm::exp(epsilon * t) / d0)
        .fold(1.0, f64::max);
    Ok(DecayFit {
        times: times.to_vec(),
        distances,
        m,
        epsilon,
        residual,
        underflow,
    })
}
