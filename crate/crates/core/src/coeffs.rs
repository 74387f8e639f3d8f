//! Coefficient fields of the elliptic operator and their validation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::expr::{parse_expr, DomainError, Expr, ParseError};
use crate::grid::{Grid, NodeClass};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoeffError {
    #[error("coefficient `{field}`: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("coefficient shape: {0}")]
    Shape(&'static str),
    #[error("evaluating coefficients at node {node}: {source}")]
    Eval {
        node: usize,
        #[source]
        source: DomainError,
    },
    #[error("validation failed: {quantity} at node {node}")]
    ValidationFailed {
        node: usize,
        quantity: Violation,
        report: ValidationReport,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    Asymmetric { defect: f64 },
    Ellipticity { min_eigenvalue: f64, eta: f64 },
    PositivePotential { c0: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Asymmetric { defect } => write!(f, "a is not symmetric (defect {defect:e})"),
            Violation::Ellipticity { min_eigenvalue, eta } => {
                write!(f, "smallest eigenvalue of a is {min_eigenvalue} < eta = {eta}")
            }
            Violation::PositivePotential { c0 } => write!(f, "c0 > 0 (c0 = {c0})"),
        }
    }
}

/// `a` (row-major d×d), `b` (d) and `c0` as expressions in `x`, `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub dim: usize,
    pub a: Vec<Expr>,
    pub b: Vec<Expr>,
    pub c0: Expr,
    pub eta: f64,
}

/// Coefficients evaluated at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCoeffs {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub c0: f64,
}

impl CoefficientSet {
    /// `a` as rows of source texts, `b` as a list, `c0` a single text.
    pub fn parse(a: &[Vec<&str>], b: &[&str], c0: &str, eta: f64) -> Result<Self, CoeffError> {
        let dim = a.len();
        if !(1..=2).contains(&dim) || a.iter().any(|row| row.len() != dim) || b.len() != dim {
            return Err(CoeffError::Shape("a must be d×d and b of length d, with d in {1, 2}"));
        }
        let field = |name: String, src: &str| {
            parse_expr(src).map_err(|source| CoeffError::Parse { field: name, source })
        };
        let mut a_exprs = Vec::with_capacity(dim * dim);
        for (i, row) in a.iter().enumerate() {
            for (j, src) in row.iter().enumerate() {
                a_exprs.push(field(alloc::format!("a[{i}][{j}]"), src)?);
            }
        }
        let b_exprs = b
            .iter()
            .enumerate()
            .map(|(j, src)| field(alloc::format!("b[{j}]"), src))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CoefficientSet {
            dim,
            a: a_exprs,
            b: b_exprs,
            c0: field("c0".into(), c0)?,
            eta,
        })
    }

    /// `a = diffusion·I`, `b = drift`, `c0` constant.
    pub fn constant(dim: usize, diffusion: f64, drift: &[f64], c0: f64) -> Self {
        let mut a = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                a.push(Expr::Num(if i == j { diffusion } else { 0.0 }));
            }
        }
        CoefficientSet {
            dim,
            a,
            b: drift.iter().map(|&v| Expr::Num(v)).collect(),
            c0: Expr::Num(c0),
            eta: diffusion,
        }
    }

    pub fn eval(&self, p: &[f64]) -> Result<PointCoeffs, DomainError> {
        let mut out = PointCoeffs { a: [[0.0; 2]; 2], b: [0.0; 2], c0: self.c0.eval_at(p)? };
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.a[i][j] = self.a[i * self.dim + j].eval_at(p)?;
            }
            out.b[i] = self.b[i].eval_at(p)?;
        }
        Ok(out)
    }

    /// True when the mixed entries of `a` are identically zero.
    pub fn diagonal_diffusion(&self) -> bool {
        self.dim == 1
            || (self.a[1].constant_value() == Some(0.0) && self.a[2].constant_value() == Some(0.0))
    }
}

impl PointCoeffs {
    /// Smallest eigenvalue of the symmetric part of `a`.
    pub fn min_eigenvalue(&self, dim: usize) -> f64 {
        if dim == 1 {
            return self.a[0][0];
        }
        let off = 0.5 * (self.a[0][1] + self.a[1][0]);
        let tr = self.a[0][0] + self.a[1][1];
        let det = self.a[0][0] * self.a[1][1] - off * off;
        let disc = libm::sqrt((tr * tr - 4.0 * det).max(0.0));
        0.5 * (tr - disc)
    }

    pub fn symmetry_defect(&self) -> f64 {
        (self.a[0][1] - self.a[1][0]).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub nodes_sampled: usize,
    pub min_eigenvalue: f64,
    pub max_c0: f64,
    pub max_symmetry_defect: f64,
    pub eta: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.max_symmetry_defect == 0.0 && self.min_eigenvalue >= self.eta && self.max_c0 <= 0.0
    }
}

/// Samples every interior and boundary node; the first offending node (in
/// node order) is reported on failure.
pub fn validate_coefficients(c: &CoefficientSet, grid: &Grid) -> Result<ValidationReport, CoeffError> {
    if c.dim != grid.dim() {
        return Err(CoeffError::Shape("coefficient dimension differs from grid dimension"));
    }
    if !(c.eta > 0.0) {
        return Err(CoeffError::Shape("eta must be positive"));
    }
    let mut report = ValidationReport {
        nodes_sampled: 0,
        min_eigenvalue: f64::INFINITY,
        max_c0: f64::NEG_INFINITY,
        max_symmetry_defect: 0.0,
        eta: c.eta,
    };
    let mut first: Option<(usize, Violation)> = None;
    for g in 0..grid.node_count() {
        if grid.class(g) == NodeClass::Exterior {
            continue;
        }
        let pc = c.eval(&grid.point(g)).map_err(|source| CoeffError::Eval { node: g, source })?;
        report.nodes_sampled += 1;
        let defect = pc.symmetry_defect();
        let lam = pc.min_eigenvalue(c.dim);
        report.max_symmetry_defect = report.max_symmetry_defect.max(defect);
        report.min_eigenvalue = report.min_eigenvalue.min(lam);
        report.max_c0 = report.max_c0.max(pc.c0);
        if first.is_none() {
            first = if defect != 0.0 {
                Some((g, Violation::Asymmetric { defect }))
            } else if lam < c.eta {
                Some((g, Violation::Ellipticity { min_eigenvalue: lam, eta: c.eta }))
            } else if pc.c0 > 0.0 {
                Some((g, Violation::PositivePotential { c0: pc.c0 }))
            } else {
                None
            };
        }
    }
    match first {
        None => Ok(report),
        Some((node, quantity)) => Err(CoeffError::ValidationFailed { node, quantity, report }),
    }
}
