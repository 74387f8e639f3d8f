//! Finite-difference assembly of the Dirichlet operator `A₀` and of the
//! nonlocal operator `A_nl = A_ii + A_ib·M`.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::coeffs::{CoefficientSet, PointCoeffs};
use crate::expr::DomainError;
use crate::grid::{Grid, NodeClass};
use crate::measures::MeasureMatrix;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error("evaluating coefficients at node {node}: {source}")]
    Eval {
        node: usize,
        #[source]
        source: DomainError,
    },
    #[error("coefficient dimension {coeffs} does not match grid dimension {grid}")]
    DimensionMismatch { coeffs: usize, grid: usize },
    #[error("shape mismatch: measure is {rows}×{cols}, operator expects {expected_rows}×{expected_cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    Central,
    #[default]
    Upwinded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssemblyWarning {
    /// Central drift with cell Péclet number above 1; discrete positivity is
    /// not guaranteed.
    SchemeMonotonicity { axis: usize, peclet: f64, node: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletOperator {
    a_ii: CsrMatrix,
    a_ib: CsrMatrix,
    scheme: Scheme,
    warnings: Vec<AssemblyWarning>,
}

impl DirichletOperator {
    pub fn a_ii(&self) -> &CsrMatrix {
        &self.a_ii
    }

    pub fn a_ib(&self) -> &CsrMatrix {
        &self.a_ib
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn warnings(&self) -> &[AssemblyWarning] {
        &self.warnings
    }

    pub fn n_interior(&self) -> usize {
        self.a_ii.nrows()
    }

    pub fn n_boundary(&self) -> usize {
        self.a_ib.ncols()
    }

    /// Off-diagonals of `A_ii` and all of `A_ib` nonnegative, diagonal negative.
    pub fn has_monotone_sign_pattern(&self) -> bool {
        self.a_ii.iter().all(|(i, j, v)| if i == j { v < 0.0 } else { v >= 0.0 })
            && self.a_ib.iter().all(|(_, _, v)| v >= 0.0)
    }
}

/// Stencil weights of one interior row, keyed by global lattice node.
struct Row {
    entries: Vec<(usize, f64)>,
}

impl Row {
    fn add(&mut self, g: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        match self.entries.iter_mut().find(|(n, _)| *n == g) {
            Some(e) => e.1 += w,
            None => self.entries.push((g, w)),
        }
    }
}

fn stencil_row(grid: &Grid, g: usize, pc: &PointCoeffs, scheme: Scheme, dim: usize) -> Row {
    let h = grid.spacing();
    let h2 = h * h;
    let mut row = Row { entries: Vec::with_capacity(9) };
    let step = |axis: usize, s: isize| -> usize {
        let (di, dj) = if axis == 0 { (s, 0) } else { (0, s) };
        grid.offset(g, di, dj).expect("interior node has lattice neighbours")
    };
    for axis in 0..dim {
        let plus = step(axis, 1);
        let minus = step(axis, -1);
        let diff = pc.a[axis][axis] / h2;
        row.add(plus, diff);
        row.add(minus, diff);
        let b = pc.b[axis];
        match scheme {
            Scheme::Central => {
                row.add(plus, b / (2.0 * h));
                row.add(minus, -b / (2.0 * h));
            }
            Scheme::Upwinded => {
                if b > 0.0 {
                    row.add(plus, b / h);
                } else if b < 0.0 {
                    row.add(minus, -b / h);
                }
            }
        }
    }
    if dim == 2 {
        // 2·a12·u_xy with the four-corner cross stencil
        let a12 = 0.5 * (pc.a[0][1] + pc.a[1][0]);
        if a12 != 0.0 {
            let w = a12 / (2.0 * h2);
            for (di, dj, sign) in [(1isize, 1isize, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                let corner = grid.offset(g, di, dj).filter(|&c| grid.class(c) != NodeClass::Exterior);
                match corner {
                    Some(c) => row.add(c, sign * w),
                    None => {
                        // exterior corner: average of the two adjacent axis nodes
                        row.add(step(0, di), 0.5 * sign * w);
                        row.add(step(1, dj), 0.5 * sign * w);
                    }
                }
            }
        }
    }
    row
}

pub fn assemble_dirichlet(
    grid: &Grid,
    c: &CoefficientSet,
    scheme: Scheme,
) -> Result<DirichletOperator, AssemblyError> {
    if c.dim != grid.dim() {
        return Err(AssemblyError::DimensionMismatch { coeffs: c.dim, grid: grid.dim() });
    }
    let (ni, nb) = (grid.n_interior(), grid.n_boundary());
    let h = grid.spacing();
    let mut ii = Vec::with_capacity(ni * (2 * c.dim + 1));
    let mut ib = Vec::new();
    let mut warnings: Vec<AssemblyWarning> = Vec::new();
    for (k, &g) in grid.interior_nodes().iter().enumerate() {
        let pc = c
            .eval(&grid.point(g))
            .map_err(|source| AssemblyError::Eval { node: g, source })?;
        if scheme == Scheme::Central {
            for axis in 0..c.dim {
                let peclet = pc.b[axis].abs() * h / (2.0 * pc.a[axis][axis]);
                if peclet > 1.0 && !warnings.iter().any(|w| matches!(w, AssemblyWarning::SchemeMonotonicity { axis: a, .. } if *a == axis)) {
                    warnings.push(AssemblyWarning::SchemeMonotonicity { axis, peclet, node: g });
                }
            }
        }
        let row = stencil_row(grid, g, &pc, scheme, c.dim);
        let mut off_sum = 0.0;
        for &(n, w) in &row.entries {
            if n == g {
                continue;
            }
            off_sum += w;
            match (grid.interior_index(n), grid.boundary_index(n)) {
                (Some(j), _) => ii.push((k, j, w)),
                (None, Some(j)) => ib.push((k, j, w)),
                _ => unreachable!("stencil reached an exterior node"),
            }
        }
        // row sums vanish before the potential is added
        ii.push((k, k, -off_sum + pc.c0));
    }
    Ok(DirichletOperator {
        a_ii: CsrMatrix::from_triplets(ni, ni, ii),
        a_ib: CsrMatrix::from_triplets(ni, nb, ib),
        scheme,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalOperator {
    a_nl: DMatrix<f64>,
    dirichlet: DirichletOperator,
    measure: MeasureMatrix,
}

impl NonlocalOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a_nl
    }

    pub fn dirichlet(&self) -> &DirichletOperator {
        &self.dirichlet
    }

    pub fn measure(&self) -> &MeasureMatrix {
        &self.measure
    }

    pub fn dim(&self) -> usize {
        self.a_nl.nrows()
    }

    /// `‖A_nl‖_∞`, the largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.a_nl
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Off-diagonal entries nonnegative.
    pub fn is_metzler(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.a_nl[(i, j)] >= 0.0))
    }
}

pub fn assemble_nonlocal(
    d: &DirichletOperator,
    m: &MeasureMatrix,
) -> Result<NonlocalOperator, AssemblyError> {
    if m.n_boundary() != d.n_boundary() || m.n_interior() != d.n_interior() {
        return Err(AssemblyError::ShapeMismatch {
            rows: m.n_boundary(),
            cols: m.n_interior(),
            expected_rows: d.n_boundary(),
            expected_cols: d.n_interior(),
        });
    }
    let a_nl = d.a_ii.to_dense() + d.a_ib.mul_dense(m.matrix());
    Ok(NonlocalOperator {
        a_nl,
        dirichlet: d.clone(),
        measure: m.clone(),
    })
}
