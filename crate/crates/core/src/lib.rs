//! Second-order elliptic operators with nonlocal boundary conditions of
//! instantaneous-return type.
//!
//! On a bounded domain `Ω` the operator
//!
//! ```text
//! 𝒜u = Σ a_ij ∂_i∂_j u + Σ b_j ∂_j u + c₀ u
//! ```
//!
//! is paired with the boundary condition `u(z) = ∫_Ω u(x) μ(z, dx)` for each
//! boundary point `z`, where every `μ(z, ·)` is a sub-probability measure on
//! `Ω`. Probabilistically, a diffusing particle that reaches `z` jumps back
//! into `Ω` with law `μ(z, ·)` or dies with probability `1 − μ(z, Ω)`.
//!
//! The crate discretizes this on uniform lattices ([`grid`], [`assembly`]),
//! computes resolvents three ways ([`solver`]), evolves the semigroup, extracts
//! the spectral projection and invariant density ([`spectral`]), and
//! simulates the return process ([`mc`]). It is `no_std` with `alloc`.
#![no_std]

extern crate alloc;

pub mod assembly;
pub mod coeffs;
pub mod expr;
pub mod grid;
pub mod mc;
pub mod measures;
pub mod solver;
pub mod spectral;
pub mod sparse;

pub use assembly::{assemble_dirichlet, assemble_nonlocal, AssemblyError, DirichletOperator, NonlocalOperator, Scheme};
pub use coeffs::{validate_coefficients, CoeffError, CoefficientSet, ValidationReport};
pub use expr::{eval_expr, parse_expr, Expr};
pub use grid::{build_grid, connected_components, AxisBox, DomainSpec, Grid, GridError, NodeClass};
pub use measures::{discretize_measures, Atom, MeasureError, MeasureLaw, MeasureMatrix, MeasureRegion, MeasureSpec, Selector};
pub use mc::{
    mc_vs_pde, occupation_histogram, simulate_ensemble, BatteryItem, ChunkExecutor, ComparisonReport, McError,
    Occupation, PathEstimate, ProcessConfig, ReturnProcess, Sequential,
};
pub use num_complex::Complex64;
pub use solver::{
    apply_s, dirichlet_solve, domination_check, evolve, evolve_converged, has_conservative_closed_class,
    holomorphic_bound_scan, promote, resolvent, BoundScan, DominationReport, EvolveRequest, GridVector, ResolventMethod, ResolventRequest, SolveError, TimeScheme,
};
pub use spectral::{
    decay_fit, eigen_spectrum, invariant_density, spectral_projection, DecayFit, InvariantDensity, SpectralError,
    SpectralResult,
};
