//! Resolvents and semigroup evolution of the nonlocal operator.
//!
//! The resolvent is available through three routes that must agree:
//!
//! * `Direct`: solve `(λ − A_nl) u_i = f` and set `u_b = M u_i`.
//! * `Neumann`: with `w = R(λ, A₀) f`, sum `v = Σ S_λⁿ w`, where `S_λ v` is
//!   the `λ`-harmonic function with boundary data `M v_i`.
//! * `BoundaryReduced`: solve `(I − G_λ) β = M w_i` on the boundary, with
//!   `G_λ = M E_λ` and `E_λ` the harmonic lift, then `u = w + E_λ β`.
//!
//! All vectors are generic over real (`f64`) or complex (`Complex64`) scalars.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use thiserror::Error;

use crate::assembly::{DirichletOperator, NonlocalOperator};
use crate::measures::MeasureMatrix;

/// Relative pivot size below which a factorization is declared singular.
const PIVOT_RATIO: f64 = 1e-13;

pub trait Scalar: ComplexField<RealField = f64> + Copy {
    fn to_complex(self) -> Complex64;
}

impl Scalar for f64 {
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Scalar for Complex64 {
    fn to_complex(self) -> Complex64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("singular system at λ = {lambda}")]
    SingularSystem { lambda: Complex64 },
    #[error("SingularAtZero: λ = 0 lies in the spectrum (a closed conservative class exists)")]
    SingularAtZero,
    #[error("NeumannStalled after {iterations} iterations (increment {increment:e}, ratio {ratio})")]
    NeumannStalled {
        iterations: usize,
        increment: f64,
        ratio: f64,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("PreconditionViolated: first measure exceeds the second by {excess:e}; observed resolvent violation {max_violation:e}")]
    PreconditionViolated { excess: f64, max_violation: f64 },
}

/// Values on interior and boundary nodes, each in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVector<T: Scalar> {
    pub interior: DVector<T>,
    pub boundary: DVector<T>,
}

impl<T: Scalar> GridVector<T> {
    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.interior).max(sup_norm(&self.boundary))
    }

    pub fn max_interior_modulus(&self) -> f64 {
        sup_norm(&self.interior)
    }

    pub fn max_boundary_modulus(&self) -> f64 {
        sup_norm(&self.boundary)
    }

    pub fn sub(&self, other: &Self) -> Self {
        GridVector {
            interior: &self.interior - &other.interior,
            boundary: &self.boundary - &other.boundary,
        }
    }
}

impl GridVector<f64> {
    pub fn min(&self) -> f64 {
        self.interior.iter().chain(self.boundary.iter()).copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.interior.iter().chain(self.boundary.iter()).copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn sup_norm<T: Scalar>(v: &DVector<T>) -> f64 {
    v.iter().map(|x| x.modulus()).fold(0.0, f64::max)
}

fn real_to<T: Scalar>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::from_real)
}

/// Real vector promoted to the scalar type `T`.
pub fn promote<T: Scalar>(v: &DVector<f64>) -> DVector<T> {
    v.map(T::from_real)
}

/// LU factorization of `shift·I − A` with a singularity check.
pub struct ShiftedSolver<T: Scalar> {
    lu: LU<T, Dyn, Dyn>,
    lambda: Complex64,
}

impl<T: Scalar> ShiftedSolver<T> {
    pub fn new(shift: T, a: &DMatrix<f64>) -> Result<Self, SolveError> {
        let n = a.nrows();
        let mut m: DMatrix<T> = real_to::<T>(a).map(|v: T| -v);
        for i in 0..n {
            m[(i, i)] += shift;
        }
        Self::factor(m, shift.to_complex())
    }

    /// Factors `scale·(shift·I − A)`; used by the time steppers.
    fn factor(m: DMatrix<T>, lambda: Complex64) -> Result<Self, SolveError> {
        let lu = m.lu();
        let u = lu.u();
        let diag = u.diagonal();
        let big = sup_norm(&diag);
        let small = diag.iter().map(|x| x.modulus()).fold(f64::INFINITY, f64::min);
        if !(big > 0.0) || !(small >= PIVOT_RATIO * big) {
            return Err(SolveError::SingularSystem { lambda });
        }
        Ok(ShiftedSolver { lu, lambda })
    }

    pub fn solve(&self, rhs: &DVector<T>) -> Result<DVector<T>, SolveError> {
        self.lu
            .solve(rhs)
            .ok_or(SolveError::SingularSystem { lambda: self.lambda })
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>, SolveError> {
        self.lu
            .solve(rhs)
            .ok_or(SolveError::SingularSystem { lambda: self.lambda })
    }
}

/// Solver for the Dirichlet problem `λu − 𝒜u = f`, `u|_∂Ω = φ` at fixed `λ`.
pub struct DirichletResolvent<'a, T: Scalar> {
    op: &'a DirichletOperator,
    solver: ShiftedSolver<T>,
}

impl<'a, T: Scalar> DirichletResolvent<'a, T> {
    pub fn new(op: &'a DirichletOperator, lambda: T) -> Result<Self, SolveError> {
        check_lambda(lambda)?;
        let solver = ShiftedSolver::new(lambda, &op.a_ii().to_dense())?;
        Ok(DirichletResolvent { op, solver })
    }

    /// Interior `u` solves `(λ − A_ii) u = f + A_ib φ`; boundary values are `φ`.
    pub fn solve(&self, f: &DVector<T>, phi: &DVector<T>) -> Result<GridVector<T>, SolveError> {
        check_len(f.len(), self.op.n_interior())?;
        check_len(phi.len(), self.op.n_boundary())?;
        let rhs = f + self.op.a_ib().mul_vec(phi);
        Ok(GridVector {
            interior: self.solver.solve(&rhs)?,
            boundary: phi.clone(),
        })
    }

    /// Harmonic lift `E_λ = (λ − A_ii)⁻¹ A_ib` as a dense interior×boundary matrix.
    pub fn lift_matrix(&self) -> Result<DMatrix<T>, SolveError> {
        self.solver.solve_matrix(&real_to(&self.op.a_ib().to_dense()))
    }
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<(), SolveError> {
    let l = lambda.to_complex();
    if !(l.re >= 0.0) || !l.im.is_finite() {
        return Err(SolveError::InvalidRequest("Re λ must be ≥ 0"));
    }
    Ok(())
}

fn check_len(got: usize, expected: usize) -> Result<(), SolveError> {
    if got != expected {
        return Err(SolveError::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn dirichlet_solve<T: Scalar>(
    op: &DirichletOperator,
    lambda: T,
    f: &DVector<T>,
    phi: &DVector<T>,
) -> Result<GridVector<T>, SolveError> {
    DirichletResolvent::new(op, lambda)?.solve(f, phi)
}

fn apply_s_with<T: Scalar>(
    dr: &DirichletResolvent<'_, T>,
    m: &DMatrix<T>,
    v: &DVector<T>,
) -> Result<GridVector<T>, SolveError> {
    let phi = m * v;
    dr.solve(&DVector::zeros(v.len()), &phi)
}

/// `S_λ v`: the `λ`-harmonic function with boundary data `φ = M v_i`.
pub fn apply_s<T: Scalar>(
    op: &NonlocalOperator,
    lambda: T,
    v: &GridVector<T>,
) -> Result<GridVector<T>, SolveError> {
    let dr = DirichletResolvent::new(op.dirichlet(), lambda)?;
    apply_s_with(&dr, &real_to(op.measure().matrix()), &v.interior)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolventMethod {
    Direct,
    Neumann,
    BoundaryReduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventRequest<T: Scalar> {
    pub lambda: T,
    pub rhs: DVector<T>,
    pub method: ResolventMethod,
    pub tol: f64,
    pub max_iter: usize,
}

impl<T: Scalar> ResolventRequest<T> {
    pub fn new(lambda: T, rhs: DVector<T>, method: ResolventMethod) -> Self {
        ResolventRequest { lambda, rhs, method, tol: 1e-12, max_iter: 100_000 }
    }
}

/// True when some set of states is closed under the jump structure of a
/// Metzler `A_nl` and carries no killing, so `0 ∈ σ(A_nl)`. `None` if `A_nl`
/// is not Metzler with nonpositive row sums.
pub fn has_conservative_closed_class(op: &NonlocalOperator) -> Option<bool> {
    if !op.is_metzler() {
        return None;
    }
    let a = op.matrix();
    let n = a.nrows();
    let scale = op.norm_inf().max(f64::MIN_POSITIVE);
    let sums: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    if sums.iter().any(|&s| s > 1e-12 * scale) {
        return None;
    }
    // nodes reaching a leaky node along positive off-diagonal entries
    let mut reaches = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &s) in sums.iter().enumerate() {
        if s < -1e-12 * scale {
            reaches[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !reaches[i] && i != j && a[(i, j)] > 0.0 {
                reaches[i] = true;
                queue.push_back(i);
            }
        }
    }
    Some(reaches.iter().any(|r| !r))
}

pub fn resolvent<T: Scalar>(
    op: &NonlocalOperator,
    req: &ResolventRequest<T>,
) -> Result<GridVector<T>, SolveError> {
    check_lambda(req.lambda)?;
    check_len(req.rhs.len(), op.dim())?;
    if !(req.tol > 0.0) || req.max_iter == 0 {
        return Err(SolveError::InvalidRequest("tol must be > 0 and max_iter ≥ 1"));
    }
    if req.lambda.to_complex() == Complex64::new(0.0, 0.0)
        && has_conservative_closed_class(op) == Some(true)
    {
        return Err(SolveError::SingularAtZero);
    }
    let singular_at_zero = |e: SolveError| match e {
        SolveError::SingularSystem { lambda } if lambda == Complex64::new(0.0, 0.0) => {
            SolveError::SingularAtZero
        }
        e => e,
    };
    let m: DMatrix<T> = real_to(op.measure().matrix());
    match req.method {
        ResolventMethod::Direct => {
            let solver = ShiftedSolver::new(req.lambda, op.matrix()).map_err(singular_at_zero)?;
            let interior = solver.solve(&req.rhs)?;
            Ok(GridVector { boundary: &m * &interior, interior })
        }
        ResolventMethod::Neumann => {
            let dr = DirichletResolvent::new(op.dirichlet(), req.lambda)?;
            let w = dr.solve(&req.rhs, &DVector::zeros(op.measure().n_boundary()))?;
            neumann_sum(&dr, &m, w, req.tol, req.max_iter)
        }
        ResolventMethod::BoundaryReduced => {
            let dr = DirichletResolvent::new(op.dirichlet(), req.lambda)?;
            let w = dr.solve(&req.rhs, &DVector::zeros(op.measure().n_boundary()))?;
            let lift = dr.lift_matrix()?;
            let g = &m * &lift;
            let nb = g.nrows();
            let reduced = DMatrix::<T>::identity(nb, nb) - g;
            let beta = ShiftedSolver::factor(reduced, req.lambda.to_complex())
                .map_err(singular_at_zero)?
                .solve(&(&m * &w.interior))?;
            Ok(GridVector {
                interior: &w.interior + &lift * &beta,
                boundary: beta,
            })
        }
    }
}

/// Sums `v = w + S v` until the increment, and the geometric tail it
/// implies, fall below `tol`. Stalls when ten consecutive increment ratios
/// exceed 0.999.
fn neumann_sum<T: Scalar>(
    dr: &DirichletResolvent<'_, T>,
    m: &DMatrix<T>,
    w: GridVector<T>,
    tol: f64,
    max_iter: usize,
) -> Result<GridVector<T>, SolveError> {
    let mut v = w.clone();
    let mut prev_inc = f64::INFINITY;
    let mut ratios: VecDeque<f64> = VecDeque::with_capacity(10);
    for it in 1..=max_iter {
        let s = apply_s_with(dr, m, &v.interior)?;
        let next = GridVector {
            interior: &w.interior + &s.interior,
            boundary: &w.boundary + &s.boundary,
        };
        let inc = next.sub(&v).sup_norm();
        v = next;
        let ratio = if prev_inc > 0.0 && prev_inc.is_finite() { inc / prev_inc } else { 0.0 };
        let tail = if ratio < 1.0 { inc * ratio / (1.0 - ratio) } else { f64::INFINITY };
        if inc == 0.0 || (inc < tol && (tail < tol || inc < 1e-3 * tol)) {
            return Ok(v);
        }
        if ratios.len() == 10 {
            ratios.pop_front();
        }
        ratios.push_back(ratio);
        if ratios.len() == 10 && ratios.iter().all(|&r| r > 0.999) {
            return Err(SolveError::NeumannStalled { iterations: it, increment: inc, ratio });
        }
        if it == max_iter {
            return Err(SolveError::NeumannStalled { iterations: it, increment: inc, ratio });
        }
        prev_inc = inc;
    }
    unreachable!("max_iter ≥ 1")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeScheme {
    /// `k = ceil(t/dt)` equal implicit Euler steps.
    BackwardEuler { dt: f64 },
    /// `((n/t)(n/t − A)⁻¹)ⁿ`.
    PostWidder { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveRequest {
    pub u0: DVector<f64>,
    pub t: f64,
    pub scheme: TimeScheme,
}

/// Repeated application of `s(s − A_nl)⁻¹`.
pub struct Stepper {
    solver: ShiftedSolver<f64>,
    scale: f64,
    steps: usize,
}

impl Stepper {
    pub fn new(op: &NonlocalOperator, t: f64, steps: usize) -> Result<Self, SolveError> {
        if !(t > 0.0) || steps == 0 {
            return Err(SolveError::InvalidRequest("t must be > 0 with at least one step"));
        }
        let s = steps as f64 / t;
        Ok(Stepper { solver: ShiftedSolver::new(s, op.matrix())?, scale: s, steps })
    }

    /// Backward Euler form `(I − dt A)⁻¹` for a single step of size `dt`.
    pub fn euler(op: &NonlocalOperator, dt: f64) -> Result<Self, SolveError> {
        if !(dt > 0.0) {
            return Err(SolveError::InvalidRequest("dt must be > 0"));
        }
        let n = op.dim();
        let m = DMatrix::<f64>::identity(n, n) - op.matrix() * dt;
        Ok(Stepper {
            solver: ShiftedSolver::factor(m, Complex64::new(1.0 / dt, 0.0))?,
            scale: 1.0,
            steps: 1,
        })
    }

    pub fn step(&self, u: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        Ok(self.solver.solve(u)? * self.scale)
    }

    pub fn run(&self, u0: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        let mut u = u0.clone();
        for _ in 0..self.steps {
            u = self.step(&u)?;
        }
        Ok(u)
    }
}

pub fn evolve(op: &NonlocalOperator, req: &EvolveRequest) -> Result<DVector<f64>, SolveError> {
    check_len(req.u0.len(), op.dim())?;
    if !(req.t > 0.0) {
        return Err(SolveError::InvalidRequest("t must be > 0"));
    }
    match req.scheme {
        TimeScheme::BackwardEuler { dt } => {
            if !(dt > 0.0) {
                return Err(SolveError::InvalidRequest("dt must be > 0"));
            }
            let k = libm::ceil(req.t / dt - 1e-12).max(1.0) as usize;
            let stepper = Stepper::euler(op, req.t / k as f64)?;
            let mut u = req.u0.clone();
            for _ in 0..k {
                u = stepper.step(&u)?;
            }
            Ok(u)
        }
        TimeScheme::PostWidder { n } => {
            if n == 0 {
                return Err(SolveError::InvalidRequest("n must be ≥ 1"));
            }
            Stepper::new(op, req.t, n)?.run(&req.u0)
        }
    }
}

/// Backward Euler with step halving: returns the first refinement whose
/// sup-norm change from the previous one is at most
/// `rel_tol · max(‖u‖_∞, floor)`, together with its step count.
pub fn evolve_converged(
    op: &NonlocalOperator,
    u0: &DVector<f64>,
    t: f64,
    rel_tol: f64,
    floor: f64,
    initial_steps: usize,
    max_steps: usize,
) -> Result<(DVector<f64>, usize), SolveError> {
    let mut k = initial_steps.max(1);
    let mut prev = Stepper::new(op, t, k)?.run(u0)?;
    loop {
        k *= 2;
        let next = Stepper::new(op, t, k)?.run(u0)?;
        let change = sup_norm(&(&next - &prev));
        if change <= rel_tol * sup_norm(&next).max(floor) || k >= max_steps {
            return Ok((next, k));
        }
        prev = next;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundScan {
    /// `(λ, ‖λ(λ − A_nl)⁻¹‖_∞)` per sample.
    pub values: Vec<(Complex64, f64)>,
    pub max: f64,
}

/// Exact induced sup-norm of `λ(λ − A_nl)⁻¹` on interior vectors, computed
/// column by column from the dense inverse. Boundary values `M u_i` never
/// exceed the interior sup norm because rows of `M` are sub-stochastic.
pub fn holomorphic_bound_scan(
    op: &NonlocalOperator,
    omega: f64,
    samples: &[Complex64],
) -> Result<BoundScan, SolveError> {
    if samples.is_empty() {
        return Err(SolveError::InvalidRequest("no samples"));
    }
    if !(omega > 0.0) || samples.iter().any(|l| !(l.re >= omega)) {
        return Err(SolveError::InvalidRequest("samples must satisfy Re λ ≥ ω > 0"));
    }
    let n = op.dim();
    let mut values = Vec::with_capacity(samples.len());
    for &lambda in samples {
        let inv = ShiftedSolver::new(lambda, op.matrix())?
            .solve_matrix(&DMatrix::<Complex64>::identity(n, n))?;
        let norm = inv
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        values.push((lambda, lambda.norm() * norm));
    }
    let max = values.iter().map(|v| v.1).fold(0.0, f64::max);
    Ok(BoundScan { values, max })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominationReport {
    pub holds: bool,
    /// `max(0, max(R₁f − R₂f))` over all grid nodes.
    pub max_violation: f64,
}

/// Compares `R(λ)f` under two measures on the same Dirichlet operator.
pub fn domination_check(
    d: &DirichletOperator,
    m1: &MeasureMatrix,
    m2: &MeasureMatrix,
    lambda: f64,
    f: &DVector<f64>,
    tol: f64,
) -> Result<DominationReport, SolveError> {
    if !(lambda > 0.0) {
        return Err(SolveError::InvalidRequest("λ must be > 0"));
    }
    if f.iter().any(|&v| v < 0.0) {
        return Err(SolveError::InvalidRequest("f must be nonnegative"));
    }
    let solve = |m: &MeasureMatrix| -> Result<GridVector<f64>, SolveError> {
        let op = crate::assembly::assemble_nonlocal(d, m)
            .map_err(|_| SolveError::DimensionMismatch { expected: d.n_boundary(), got: m.n_boundary() })?;
        resolvent(&op, &ResolventRequest::new(lambda, f.clone(), ResolventMethod::Direct))
    };
    let u1 = solve(m1)?;
    let u2 = solve(m2)?;
    let max_violation = u1.sub(&u2).max().max(0.0);
    let report = DominationReport { holds: max_violation <= tol, max_violation };
    let excess = m1.max_excess_over(m2);
    if excess > 0.0 {
        return Err(SolveError::PreconditionViolated { excess, max_violation });
    }
    Ok(report)
}
