//! Boundary measure families and their discretization into the nonnegative
//! matrix `M` (boundary nodes × interior nodes).
//!
//! Row `z` of `M` is the quadrature of `u ↦ ∫ u dμ(z, ·)` over interior node
//! values. The row deficit `1 − mass(z)` is the probability of killing on
//! hitting `z`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{Bindings, DomainError, Expr};
use crate::grid::{DomainSpec, Grid, NodeClass};

/// Slack allowed on analytic masses before clipping to `[0, 1]`.
pub const MASS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("mass {mass} at boundary node {node} is outside [0, 1]")]
    MassOutOfRange { node: usize, mass: f64 },
    #[error("atom at {point:?} is not inside the domain")]
    AtomOutsideDomain { point: Vec<f64> },
    #[error("negative weight {weight} at boundary node {node}")]
    NegativeWeight { node: usize, weight: f64 },
    #[error("density vanishes on every interior cell but mass is {mass} at boundary node {node}")]
    DegenerateDensity { node: usize, mass: f64 },
    #[error("mixture coefficients must be nonnegative and sum to 1")]
    InvalidMixture,
    #[error("evaluating measure at boundary node {node}: {source}")]
    Eval {
        node: usize,
        #[source]
        source: DomainError,
    },
    #[error("measure matrix shape {rows}×{cols} does not match the grid")]
    ShapeMismatch { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureLaw {
    Zero,
    Atoms(Vec<Atom>),
    /// Density `w(z, x)` (variables `zx`, `zy`, `x`, `y`) rescaled to total
    /// mass `m(z)` (variables `zx`, `zy` or `x`, `y`, both bound to `z`).
    Density { density: Expr, mass: Expr },
    Mixture(Vec<(f64, MeasureLaw)>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    All,
    /// Boundary nodes adjacent to an interior node of the given domain piece.
    Piece(usize),
    /// Boundary nodes where the expression in `x`, `y` is positive.
    Predicate(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureRegion {
    pub selector: Selector,
    pub law: MeasureLaw,
}

/// Regions are matched in order; unmatched boundary nodes get the zero measure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasureSpec {
    pub regions: Vec<MeasureRegion>,
}

impl MeasureSpec {
    pub fn zero() -> Self {
        MeasureSpec { regions: Vec::new() }
    }

    pub fn uniform(law: MeasureLaw) -> Self {
        MeasureSpec {
            regions: vec![MeasureRegion { selector: Selector::All, law }],
        }
    }

    pub fn atom(point: &[f64], weight: f64) -> Self {
        Self::uniform(MeasureLaw::Atoms(vec![Atom { point: point.to_vec(), weight }]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureMatrix {
    m: DMatrix<f64>,
    row_mass: Vec<f64>,
}

impl MeasureMatrix {
    pub fn zero(grid: &Grid) -> Self {
        MeasureMatrix {
            m: DMatrix::zeros(grid.n_boundary(), grid.n_interior()),
            row_mass: vec![0.0; grid.n_boundary()],
        }
    }

    /// Wraps a raw matrix; rows must be nonnegative with sums in `[0, 1]`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self, MeasureError> {
        let mut row_mass = Vec::with_capacity(m.nrows());
        for (k, row) in m.row_iter().enumerate() {
            if let Some(&w) = row.iter().find(|w| !(**w >= 0.0)) {
                return Err(MeasureError::NegativeWeight { node: k, weight: w });
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + 1e-12 {
                return Err(MeasureError::MassOutOfRange { node: k, mass: s });
            }
            row_mass.push(s);
        }
        Ok(MeasureMatrix { m, row_mass })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn row_mass(&self) -> &[f64] {
        &self.row_mass
    }

    pub fn n_boundary(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_interior(&self) -> usize {
        self.m.ncols()
    }

    /// Every row is a probability vector.
    pub fn is_conservative(&self) -> bool {
        self.row_mass.iter().all(|&s| (s - 1.0).abs() <= 1e-12)
    }

    /// `φ = M v` for interior values `v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.m * v
    }

    /// Largest entry of `self − other` (positive iff `self ≰ other`).
    pub fn max_excess_over(&self, other: &MeasureMatrix) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        MeasureMatrix {
            m: &self.m * factor,
            row_mass: self.row_mass.iter().map(|s| s * factor).collect(),
        }
    }
}

fn boundary_piece(grid: &Grid, g: usize) -> Option<usize> {
    grid.axis_neighbors(g)
        .find_map(|nb| grid.interior_index(nb).map(|k| grid.piece_of_interior()[k]))
}

fn selects(sel: &Selector, grid: &Grid, g: usize, z: &[f64]) -> Result<bool, DomainError> {
    Ok(match sel {
        Selector::All => true,
        Selector::Piece(p) => boundary_piece(grid, g) == Some(*p),
        Selector::Predicate(e) => e.eval(&Bindings::at(z).with_boundary(z))? > 0.0,
    })
}

/// Multilinear splat of a unit atom at `p` onto interior nodes. Weight on
/// non-interior cell corners is moved proportionally onto interior corners.
pub fn splat(grid: &Grid, p: &[f64], weight: f64) -> Vec<(usize, f64)> {
    let corners: Vec<(usize, f64)> = grid
        .cell_corners(p)
        .into_iter()
        .filter_map(|(g, w)| grid.interior_index(g).map(|k| (k, w)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let inside: f64 = corners.iter().map(|(_, w)| w).sum();
    if corners.is_empty() || !(inside > 0.0) {
        return vec![(grid.nearest_interior(p), weight)];
    }
    let mut out: Vec<(usize, f64)> = corners.iter().map(|&(k, w)| (k, weight * w / inside)).collect();
    let head: f64 = out[..out.len() - 1].iter().map(|(_, w)| w).sum();
    if let Some(last) = out.last_mut() {
        last.1 = weight - head;
    }
    out
}

fn law_row(
    law: &MeasureLaw,
    domain: &DomainSpec,
    grid: &Grid,
    node: usize,
    z: &[f64],
) -> Result<(Vec<f64>, f64), MeasureError> {
    let ni = grid.n_interior();
    let eval_err = |source| MeasureError::Eval { node, source };
    match law {
        MeasureLaw::Zero => Ok((vec![0.0; ni], 0.0)),
        MeasureLaw::Atoms(atoms) => {
            let mut row = vec![0.0; ni];
            let mut mass = 0.0;
            for atom in atoms {
                if !(atom.weight >= 0.0) {
                    return Err(MeasureError::NegativeWeight { node, weight: atom.weight });
                }
                if atom.point.len() != grid.dim() || !domain.contains(&atom.point) {
                    return Err(MeasureError::AtomOutsideDomain { point: atom.point.clone() });
                }
                for (k, w) in splat(grid, &atom.point, atom.weight) {
                    row[k] += w;
                }
                mass += atom.weight;
            }
            if mass > 1.0 + MASS_SLACK {
                return Err(MeasureError::MassOutOfRange { node, mass });
            }
            Ok((row, mass))
        }
        MeasureLaw::Density { density, mass } => {
            let at_z = Bindings::at(z).with_boundary(z);
            let m = mass.eval(&at_z).map_err(eval_err)?;
            if m < -MASS_SLACK || m > 1.0 + MASS_SLACK {
                return Err(MeasureError::MassOutOfRange { node, mass: m });
            }
            let m = m.clamp(0.0, 1.0);
            let vol = grid.cell_volume();
            let mut row = Vec::with_capacity(ni);
            for k in 0..ni {
                let x = grid.interior_point(k);
                let w = density
                    .eval(&Bindings::at(&x).with_boundary(z))
                    .map_err(eval_err)?;
                if w < 0.0 {
                    return Err(MeasureError::NegativeWeight { node, weight: w });
                }
                row.push(w * vol);
            }
            let total: f64 = row.iter().sum();
            if m == 0.0 {
                return Ok((vec![0.0; ni], 0.0));
            }
            if !(total > 0.0) {
                return Err(MeasureError::DegenerateDensity { node, mass: m });
            }
            for w in &mut row {
                *w *= m / total;
            }
            Ok((row, m))
        }
        MeasureLaw::Mixture(parts) => {
            let sum: f64 = parts.iter().map(|(c, _)| c).sum();
            if parts.iter().any(|(c, _)| !(*c >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(MeasureError::InvalidMixture);
            }
            let mut row = vec![0.0; ni];
            let mut mass = 0.0;
            for (c, part) in parts {
                let (r, m) = law_row(part, domain, grid, node, z)?;
                for (acc, v) in row.iter_mut().zip(r) {
                    *acc += c * v;
                }
                mass += c * m;
            }
            Ok((row, mass))
        }
    }
}

pub fn discretize_measures(
    spec: &MeasureSpec,
    domain: &DomainSpec,
    grid: &Grid,
) -> Result<MeasureMatrix, MeasureError> {
    let (nb, ni) = (grid.n_boundary(), grid.n_interior());
    let mut m = DMatrix::zeros(nb, ni);
    let mut row_mass = vec![0.0; nb];
    for (kb, &g) in grid.boundary_nodes().iter().enumerate() {
        debug_assert_eq!(grid.class(g), NodeClass::Boundary);
        let z = grid.point(g);
        let mut law = None;
        for region in &spec.regions {
            if selects(&region.selector, grid, g, &z).map_err(|source| MeasureError::Eval { node: g, source })? {
                law = Some(&region.law);
                break;
            }
        }
        let Some(law) = law else { continue };
        let (mut row, mass) = law_row(law, domain, grid, g, &z)?;
        let mass = mass.clamp(0.0, 1.0);
        let total: f64 = row.iter().sum();
        if total > 0.0 && total != mass {
            for w in &mut row {
                *w *= mass / total;
            }
        }
        for (k, w) in row.into_iter().enumerate() {
            m[(kb, k)] = w;
        }
        row_mass[kb] = mass;
    }
    Ok(MeasureMatrix { m, row_mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn unit(n: usize) -> (DomainSpec, Grid) {
        let d = DomainSpec::intervals(&[(0.0, 1.0)]);
        let g = build_grid(&d, n).unwrap();
        (d, g)
    }

    #[test]
    fn atom_on_node() {
        let (d, g) = unit(4);
        let m = discretize_measures(&MeasureSpec::atom(&[0.5], 1.0), &d, &g).unwrap();
        for r in 0..2 {
            assert_eq!(m.matrix().row(r).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        }
        assert!(m.is_conservative());
    }

    #[test]
    fn atom_between_nodes() {
        let (d, g) = unit(4);
        let m = discretize_measures(&MeasureSpec::atom(&[0.4], 1.0), &d, &g).unwrap();
        let row: Vec<f64> = m.matrix().row(0).iter().copied().collect();
        assert!((row[0] - 0.4).abs() < 1e-15);
        assert!((row[1] - 0.6).abs() < 1e-15);
        assert_eq!(row[2], 0.0);
    }

    #[test]
    fn atom_next_to_boundary_moves_weight_inside() {
        let (d, g) = unit(4);
        let m = discretize_measures(&MeasureSpec::atom(&[0.1], 0.7), &d, &g).unwrap();
        assert_eq!(m.matrix().row(0).iter().copied().collect::<Vec<_>>(), vec![0.7, 0.0, 0.0]);
    }

    #[test]
    fn uniform_density() {
        let (d, g) = unit(4);
        let spec = MeasureSpec::uniform(MeasureLaw::Density {
            density: parse_expr("1").unwrap(),
            mass: parse_expr("1").unwrap(),
        });
        let m = discretize_measures(&spec, &d, &g).unwrap();
        for r in 0..2 {
            for k in 0..3 {
                assert!((m.matrix()[(r, k)] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_and_domain_errors() {
        let (d, g) = unit(8);
        let over = MeasureSpec::uniform(MeasureLaw::Density {
            density: parse_expr("1").unwrap(),
            mass: parse_expr("1.1").unwrap(),
        });
        assert!(matches!(discretize_measures(&over, &d, &g), Err(MeasureError::MassOutOfRange { .. })));
        let slight = MeasureSpec::uniform(MeasureLaw::Density {
            density: parse_expr("1").unwrap(),
            mass: parse_expr("1 + 1e-10").unwrap(),
        });
        let m = discretize_measures(&slight, &d, &g).unwrap();
        assert_eq!(m.row_mass(), &[1.0, 1.0]);
        assert!(matches!(
            discretize_measures(&MeasureSpec::atom(&[1.5], 1.0), &d, &g),
            Err(MeasureError::AtomOutsideDomain { .. })
        ));
        assert!(matches!(
            discretize_measures(&MeasureSpec::atom(&[0.5], 1.5), &d, &g),
            Err(MeasureError::MassOutOfRange { .. })
        ));
    }

    #[test]
    fn regions_and_mixtures() {
        let (d, g) = unit(4);
        let spec = MeasureSpec {
            regions: vec![
                MeasureRegion {
                    selector: Selector::Predicate(parse_expr("0.5 - x").unwrap()),
                    law: MeasureLaw::Mixture(vec![
                        (0.5, MeasureLaw::Atoms(vec![Atom { point: vec![0.25], weight: 1.0 }])),
                        (0.5, MeasureLaw::Zero),
                    ]),
                },
                MeasureRegion { selector: Selector::All, law: MeasureLaw::Zero },
            ],
        };
        let m = discretize_measures(&spec, &d, &g).unwrap();
        assert_eq!(m.row_mass(), &[0.5, 0.0]);
        assert_eq!(m.matrix()[(0, 0)], 0.5);
        let bad = MeasureSpec::uniform(MeasureLaw::Mixture(vec![(0.3, MeasureLaw::Zero)]));
        assert_eq!(discretize_measures(&bad, &d, &g), Err(MeasureError::InvalidMixture));
    }

    #[test]
    fn piece_selector_separates_components() {
        let d = DomainSpec::intervals(&[(0.0, 1.0), (2.0, 3.0)]);
        let g = build_grid(&d, 4).unwrap();
        let spec = MeasureSpec {
            regions: vec![
                MeasureRegion { selector: Selector::Piece(0), law: MeasureLaw::Atoms(vec![Atom { point: vec![0.5], weight: 1.0 }]) },
                MeasureRegion { selector: Selector::Piece(1), law: MeasureLaw::Atoms(vec![Atom { point: vec![2.5], weight: 1.0 }]) },
            ],
        };
        let m = discretize_measures(&spec, &d, &g).unwrap();
        assert!(m.is_conservative());
        assert_eq!(m.matrix()[(0, 1)], 1.0);
        assert_eq!(m.matrix()[(3, 4)], 1.0);
    }

    #[test]
    fn density_quadrature_converges() {
        // ∫ x^2 (1 + x) dx / ∫ (1 + x) dx = 7/18
        let spec = MeasureSpec::uniform(MeasureLaw::Density {
            density: parse_expr("1 + x").unwrap(),
            mass: parse_expr("1").unwrap(),
        });
        let mut errs = Vec::new();
        for n in [16usize, 32, 64, 128] {
            let (d, g) = unit(n);
            let m = discretize_measures(&spec, &d, &g).unwrap();
            let v = DVector::from_fn(g.n_interior(), |k, _| g.interior_point(k)[0].powi(2));
            errs.push((m.apply(&v)[0] - 7.0 / 18.0).abs());
        }
        for w in errs.windows(2) {
            assert!(libm::log2(w[0] / w[1]) >= 1.0 - 1e-3, "{errs:?}");
        }
    }

    #[test]
    fn mass_vector_identity_2d() {
        let d = DomainSpec::rectangles(&[[0.0, 1.0, 0.0, 1.0]]);
        let g = build_grid(&d, 8).unwrap();
        let spec = MeasureSpec::uniform(MeasureLaw::Density {
            density: parse_expr("exp(-(x-zx)^2-(y-zy)^2)").unwrap(),
            mass: parse_expr("0.5 + 0.4*zx").unwrap(),
        });
        let m = discretize_measures(&spec, &d, &g).unwrap();
        let ones = DVector::from_element(g.n_interior(), 1.0);
        let mv = m.apply(&ones);
        for k in 0..g.n_boundary() {
            let z = g.boundary_point(k);
            assert!((mv[k] - (0.5 + 0.4 * z[0])).abs() < 1e-12);
            assert!(m.matrix().row(k).iter().all(|&w| w >= 0.0));
        }
    }

    proptest! {
        #[test]
        fn splat_conserves_mass(x in 0.01f64..0.99, y in 0.01f64..0.99, w in 0.0f64..1.0) {
            let d = DomainSpec::rectangles(&[[0.0, 1.0, 0.0, 1.0]]);
            let g = build_grid(&d, 8).unwrap();
            let parts = splat(&g, &[x, y], w);
            let total: f64 = parts.iter().map(|(_, v)| v).sum();
            prop_assert!((total - w).abs() <= 1e-15);
            prop_assert!(parts.iter().all(|(_, v)| *v >= 0.0));
        }

        #[test]
        fn splat_conserves_mass_1d(x in 0.001f64..0.999, w in 0.0f64..1.0) {
            let (_, g) = unit(16);
            let total: f64 = splat(&g, &[x], w).iter().map(|(_, v)| v).sum();
            prop_assert!((total - w).abs() <= 1e-15);
        }
    }
}
