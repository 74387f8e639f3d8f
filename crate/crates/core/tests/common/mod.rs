#![allow(dead_code)]

use nbd_core::*;

pub struct Scenario {
    pub domain: DomainSpec,
    pub grid: Grid,
    pub coeffs: CoefficientSet,
    pub measure: MeasureMatrix,
    pub op: NonlocalOperator,
}

impl Scenario {
    pub fn build(domain: DomainSpec, n: usize, coeffs: CoefficientSet, spec: &MeasureSpec) -> Self {
        let grid = build_grid(&domain, n).unwrap();
        let measure = discretize_measures(spec, &domain, &grid).unwrap();
        let d = assemble_dirichlet(&grid, &coeffs, Scheme::Upwinded).unwrap();
        let op = assemble_nonlocal(&d, &measure).unwrap();
        Scenario { domain, grid, coeffs, measure, op }
    }

    pub fn interior_values(&self, f: impl Fn(&[f64]) -> f64) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            self.grid.n_interior(),
            (0..self.grid.n_interior()).map(|k| f(&self.grid.interior_point(k))),
        )
    }
}

pub fn laplace(dim: usize) -> CoefficientSet {
    CoefficientSet::constant(dim, 1.0, &vec![0.0; dim], 0.0)
}

/// (0,1), a = 1, every boundary node returns to `δ_{1/2}` with the given mass.
pub fn delta_return(n: usize, mass: f64) -> Scenario {
    Scenario::build(
        DomainSpec::intervals(&[(0.0, 1.0)]),
        n,
        laplace(1),
        &MeasureSpec::atom(&[0.5], mass),
    )
}

/// (0,1) with drift and uniform return density scaled to `mass`.
pub fn drift_uniform(n: usize, drift: f64, mass: f64) -> Scenario {
    let law = MeasureLaw::Density { density: Expr::Num(1.0), mass: Expr::Num(mass) };
    Scenario::build(
        DomainSpec::intervals(&[(0.0, 1.0)]),
        n,
        CoefficientSet::constant(1, 1.0, &[drift], 0.0),
        &MeasureSpec::uniform(law),
    )
}

pub fn dirichlet_only(n: usize) -> Scenario {
    Scenario::build(DomainSpec::intervals(&[(0.0, 1.0)]), n, laplace(1), &MeasureSpec::zero())
}

/// Unit square with a uniform return density of the given mass.
pub fn square(n: usize, mass: f64) -> Scenario {
    let law = MeasureLaw::Density { density: Expr::Num(1.0), mass: Expr::Num(mass) };
    Scenario::build(
        DomainSpec::rectangles(&[[0.0, 1.0, 0.0, 1.0]]),
        n,
        CoefficientSet::constant(2, 1.0, &[0.5, -0.25], 0.0),
        &MeasureSpec::uniform(law),
    )
}

/// (0,1) ∪ (2,3); each piece returns to its own midpoint.
pub fn two_components(n: usize) -> Scenario {
    let domain = DomainSpec::intervals(&[(0.0, 1.0), (2.0, 3.0)]);
    let spec = MeasureSpec {
        regions: vec![
            MeasureRegion {
                selector: Selector::Piece(0),
                law: MeasureLaw::Atoms(vec![Atom { point: vec![0.5], weight: 1.0 }]),
            },
            MeasureRegion {
                selector: Selector::Piece(1),
                law: MeasureLaw::Atoms(vec![Atom { point: vec![2.5], weight: 1.0 }]),
            },
        ],
    };
    Scenario::build(domain, n, laplace(1), &spec)
}
