//! Domains and uniform lattices with interior/boundary classification.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::expr::Expr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("invalid domain: {0}")]
    InvalidDomain(&'static str),
    #[error("resolution too coarse: piece {piece} spans {cells:.3} cells at n = {n} (need >= 2, n >= 4)")]
    ResolutionTooCoarse { piece: usize, cells: f64, n: usize },
    #[error("domain has no interior lattice node")]
    EmptyDomain,
}

/// Axis-aligned box. In 1D only axis 0 is meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl AxisBox {
    pub fn interval(a: f64, b: f64) -> Self {
        AxisBox { lo: [a, 0.0], hi: [b, 0.0] }
    }

    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        AxisBox { lo: [x0, y0], hi: [x1, y1] }
    }

    pub(crate) fn contains_open(&self, p: &[f64], dim: usize, tol: f64) -> bool {
        (0..dim).all(|a| p[a] > self.lo[a] + tol && p[a] < self.hi[a] - tol)
    }

    fn overlaps(&self, other: &AxisBox, dim: usize) -> bool {
        (0..dim).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainShape {
    /// Union of pairwise disjoint open boxes.
    Boxes(Vec<AxisBox>),
    /// `{ p : indicator(p) > 0 }` inside the bounding box (2D lattices).
    Mask(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub dim: usize,
    pub shape: DomainShape,
    pub bbox: AxisBox,
}

impl DomainSpec {
    pub fn intervals(pieces: &[(f64, f64)]) -> Self {
        let boxes: Vec<AxisBox> = pieces.iter().map(|&(a, b)| AxisBox::interval(a, b)).collect();
        Self::boxes(1, boxes)
    }

    pub fn rectangles(pieces: &[[f64; 4]]) -> Self {
        let boxes: Vec<AxisBox> = pieces
            .iter()
            .map(|r| AxisBox::rect(r[0], r[1], r[2], r[3]))
            .collect();
        Self::boxes(2, boxes)
    }

    /// Boxes with the bounding box set to their hull.
    pub fn boxes(dim: usize, boxes: Vec<AxisBox>) -> Self {
        let mut bbox = AxisBox {
            lo: [f64::INFINITY; 2],
            hi: [f64::NEG_INFINITY; 2],
        };
        for b in &boxes {
            for a in 0..2 {
                bbox.lo[a] = bbox.lo[a].min(b.lo[a]);
                bbox.hi[a] = bbox.hi[a].max(b.hi[a]);
            }
        }
        DomainSpec { dim, shape: DomainShape::Boxes(boxes), bbox }
    }

    pub fn mask(indicator: Expr, bbox: AxisBox) -> Self {
        DomainSpec { dim: 2, shape: DomainShape::Mask(indicator), bbox }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.dim != 1 && self.dim != 2 {
            return Err(GridError::BadDimension(self.dim));
        }
        for a in 0..self.dim {
            if !(self.bbox.hi[a] > self.bbox.lo[a]) || !self.bbox.lo[a].is_finite() || !self.bbox.hi[a].is_finite() {
                return Err(GridError::InvalidDomain("bounding box must have positive finite extent"));
            }
        }
        if let DomainShape::Boxes(boxes) = &self.shape {
            if boxes.is_empty() {
                return Err(GridError::InvalidDomain("no pieces"));
            }
            for (i, b) in boxes.iter().enumerate() {
                for a in 0..self.dim {
                    if !(b.hi[a] > b.lo[a]) {
                        return Err(GridError::InvalidDomain("piece with non-positive volume"));
                    }
                    if b.lo[a] < self.bbox.lo[a] || b.hi[a] > self.bbox.hi[a] {
                        return Err(GridError::InvalidDomain("bounding box does not contain every piece"));
                    }
                }
                if boxes[..i].iter().any(|o| o.overlaps(b, self.dim)) {
                    return Err(GridError::InvalidDomain("pieces overlap"));
                }
            }
        }
        Ok(())
    }

    /// Membership of a continuous point in the open domain.
    pub fn contains(&self, p: &[f64]) -> bool {
        match &self.shape {
            DomainShape::Boxes(boxes) => boxes.iter().any(|b| b.contains_open(p, self.dim, 0.0)),
            DomainShape::Mask(ind) => {
                self.bbox.contains_open(p, self.dim, 0.0)
                    && ind.eval_at(p).map(|v| v > 0.0).unwrap_or(false)
            }
        }
    }

    /// The box piece containing `p`; `None` for masks or points outside.
    pub fn containing_box(&self, p: &[f64]) -> Option<&AxisBox> {
        match &self.shape {
            DomainShape::Boxes(boxes) => boxes.iter().find(|b| b.contains_open(p, self.dim, 0.0)),
            DomainShape::Mask(_) => None,
        }
    }

    pub fn piece_count(&self) -> Option<usize> {
        match &self.shape {
            DomainShape::Boxes(b) => Some(b.len()),
            DomainShape::Mask(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
    Exterior,
}

/// Uniform lattice over the bounding box. Nodes are numbered y-major then x.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    h: f64,
    origin: [f64; 2],
    shape: [usize; 2],
    class: Vec<NodeClass>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    interior_of: Vec<Option<usize>>,
    boundary_of: Vec<Option<usize>>,
    piece: Vec<usize>,
    labels: Vec<usize>,
    n_components: usize,
}

pub fn build_grid(domain: &DomainSpec, n: usize) -> Result<Grid, GridError> {
    domain.validate()?;
    if n < 4 {
        return Err(GridError::ResolutionTooCoarse { piece: 0, cells: 0.0, n });
    }
    let h = 1.0 / n as f64;
    if let DomainShape::Boxes(boxes) = &domain.shape {
        for (i, b) in boxes.iter().enumerate() {
            for a in 0..domain.dim {
                let cells = (b.hi[a] - b.lo[a]) * n as f64;
                if cells < 2.0 - 1e-9 {
                    return Err(GridError::ResolutionTooCoarse { piece: i, cells, n });
                }
            }
        }
    }

    let mut shape = [1usize; 2];
    for (a, s) in shape.iter_mut().enumerate().take(domain.dim) {
        let cells = libm::ceil((domain.bbox.hi[a] - domain.bbox.lo[a]) * n as f64 - 1e-9) as usize;
        *s = cells + 1;
    }
    let origin = domain.bbox.lo;
    let total = shape[0] * shape[1];
    let coord = |g: usize| -> [f64; 2] {
        let (i, j) = (g % shape[0], g / shape[0]);
        [origin[0] + i as f64 * h, origin[1] + j as f64 * h]
    };

    let tol = 1e-9 * h;
    let mut piece_of = vec![usize::MAX; total];
    for (g, slot) in piece_of.iter_mut().enumerate() {
        let p = coord(g);
        match &domain.shape {
            DomainShape::Boxes(boxes) => {
                if let Some(k) = boxes.iter().position(|b| b.contains_open(&p, domain.dim, tol)) {
                    *slot = k;
                }
            }
            DomainShape::Mask(ind) => {
                let (i, j) = (g % shape[0], g / shape[0]);
                let on_edge = i == 0 || i + 1 == shape[0] || j == 0 || j + 1 == shape[1];
                if !on_edge && ind.eval_at(&p).map(|v| v > 0.0).unwrap_or(false) {
                    *slot = 0;
                }
            }
        }
    }

    let mut grid = Grid {
        dim: domain.dim,
        n,
        h,
        origin,
        shape,
        class: vec![NodeClass::Exterior; total],
        interior: Vec::new(),
        boundary: Vec::new(),
        interior_of: vec![None; total],
        boundary_of: vec![None; total],
        piece: Vec::new(),
        labels: Vec::new(),
        n_components: 0,
    };
    for g in 0..total {
        if piece_of[g] != usize::MAX {
            grid.class[g] = NodeClass::Interior;
        }
    }
    for g in 0..total {
        if grid.class[g] == NodeClass::Exterior
            && grid.axis_neighbors(g).any(|nb| piece_of[nb] != usize::MAX)
        {
            grid.class[g] = NodeClass::Boundary;
        }
    }
    for g in 0..total {
        match grid.class[g] {
            NodeClass::Interior => {
                grid.interior_of[g] = Some(grid.interior.len());
                grid.interior.push(g);
                grid.piece.push(piece_of[g]);
            }
            NodeClass::Boundary => {
                grid.boundary_of[g] = Some(grid.boundary.len());
                grid.boundary.push(g);
            }
            NodeClass::Exterior => {}
        }
    }
    if grid.interior.is_empty() {
        return Err(GridError::EmptyDomain);
    }
    let (count, labels) = connected_components(&grid);
    grid.n_components = count;
    grid.labels = labels;
    Ok(grid)
}

/// Flood fill over axis-adjacent interior nodes. Labels are numbered in order
/// of each component's first node.
pub fn connected_components(grid: &Grid) -> (usize, Vec<usize>) {
    let mut labels = vec![usize::MAX; grid.interior.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..grid.interior.len() {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = count;
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            for nb in grid.axis_neighbors(grid.interior[k]) {
                if let Some(m) = grid.interior_of[nb] {
                    if labels[m] == usize::MAX {
                        labels[m] = count;
                        queue.push_back(m);
                    }
                }
            }
        }
        count += 1;
    }
    (count, labels)
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per unit length.
    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn cell_volume(&self) -> f64 {
        libm::pow(self.h, self.dim as f64)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn node_count(&self) -> usize {
        self.class.len()
    }

    pub fn class(&self, g: usize) -> NodeClass {
        self.class[g]
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    pub fn interior_index(&self, g: usize) -> Option<usize> {
        self.interior_of[g]
    }

    pub fn boundary_index(&self, g: usize) -> Option<usize> {
        self.boundary_of[g]
    }

    /// Component label of each interior node.
    pub fn component_labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn component_count(&self) -> usize {
        self.n_components
    }

    /// Index of the domain piece holding each interior node (0 for masks).
    pub fn piece_of_interior(&self) -> &[usize] {
        &self.piece
    }

    pub fn lattice_index(&self, g: usize) -> [usize; 2] {
        [g % self.shape[0], g / self.shape[0]]
    }

    pub fn global(&self, i: usize, j: usize) -> usize {
        j * self.shape[0] + i
    }

    pub fn coords(&self, g: usize) -> [f64; 2] {
        let [i, j] = self.lattice_index(g);
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
        ]
    }

    /// Coordinates truncated to the grid dimension.
    pub fn point(&self, g: usize) -> Vec<f64> {
        self.coords(g)[..self.dim].to_vec()
    }

    pub fn interior_point(&self, k: usize) -> Vec<f64> {
        self.point(self.interior[k])
    }

    pub fn boundary_point(&self, k: usize) -> Vec<f64> {
        self.point(self.boundary[k])
    }

    /// Lattice node offset by `di`, `dj`, if it lies on the lattice.
    pub fn offset(&self, g: usize, di: isize, dj: isize) -> Option<usize> {
        let [i, j] = self.lattice_index(g);
        let ni = i as isize + di;
        let nj = j as isize + dj;
        if ni < 0 || nj < 0 || ni >= self.shape[0] as isize || nj >= self.shape[1] as isize {
            return None;
        }
        Some(self.global(ni as usize, nj as usize))
    }

    pub fn axis_neighbors(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        let steps: &[(isize, isize)] = if self.dim == 1 {
            &[(-1, 0), (1, 0)]
        } else {
            &[(-1, 0), (1, 0), (0, -1), (0, 1)]
        };
        steps.iter().filter_map(move |&(di, dj)| self.offset(g, di, dj))
    }

    /// Lower-corner lattice index and fractional offsets of the cell holding
    /// `p`, clamped to the lattice.
    pub fn locate(&self, p: &[f64]) -> ([usize; 2], [f64; 2]) {
        let mut idx = [0usize; 2];
        let mut frac = [0.0; 2];
        for a in 0..self.dim {
            let s = (p[a] - self.origin[a]) / self.h;
            let max_cell = self.shape[a].saturating_sub(2) as f64;
            let c = libm::floor(s).clamp(0.0, max_cell);
            idx[a] = c as usize;
            frac[a] = (s - c).clamp(0.0, 1.0);
        }
        (idx, frac)
    }

    /// Corners of the cell holding `p` with their multilinear weights.
    pub fn cell_corners(&self, p: &[f64]) -> Vec<(usize, f64)> {
        let (idx, t) = self.locate(p);
        if self.dim == 1 {
            vec![
                (self.global(idx[0], 0), 1.0 - t[0]),
                (self.global(idx[0] + 1, 0), t[0]),
            ]
        } else {
            let mut out = Vec::with_capacity(4);
            for (dj, wy) in [(0, 1.0 - t[1]), (1, t[1])] {
                for (di, wx) in [(0, 1.0 - t[0]), (1, t[0])] {
                    out.push((self.global(idx[0] + di, idx[1] + dj), wx * wy));
                }
            }
            out
        }
    }

    fn dist2(&self, g: usize, p: &[f64]) -> f64 {
        let c = self.coords(g);
        (0..self.dim).map(|a| (c[a] - p[a]) * (c[a] - p[a])).sum()
    }

    /// Boundary node closest to `p` (ties broken by node order).
    pub fn nearest_boundary(&self, p: &[f64]) -> usize {
        let mut g = [0usize; 2];
        for (a, slot) in g.iter_mut().enumerate().take(self.dim) {
            let s = libm::round((p[a] - self.origin[a]) / self.h);
            *slot = s.clamp(0.0, (self.shape[a] - 1) as f64) as usize;
        }
        if let Some(k) = self.boundary_of[self.global(g[0], g[1])] {
            return k;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &b) in self.boundary.iter().enumerate() {
            let d = self.dist2(b, p);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Interior node closest to `p`.
    pub fn nearest_interior(&self, p: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &g) in self.interior.iter().enumerate() {
            let d = self.dist2(g, p);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn unit_interval(n: usize) -> Grid {
        build_grid(&DomainSpec::intervals(&[(0.0, 1.0)]), n).unwrap()
    }

    #[test]
    fn unit_interval_at_n4() {
        let g = unit_interval(4);
        assert_eq!(g.spacing(), 0.25);
        let xs: Vec<f64> = (0..g.n_interior()).map(|k| g.interior_point(k)[0]).collect();
        assert_eq!(xs, vec![0.25, 0.5, 0.75]);
        let bs: Vec<f64> = (0..g.n_boundary()).map(|k| g.boundary_point(k)[0]).collect();
        assert_eq!(bs, vec![0.0, 1.0]);
        assert_eq!(g.component_count(), 1);
    }

    #[test]
    fn disjoint_intervals() {
        let g = build_grid(&DomainSpec::intervals(&[(0.0, 1.0), (2.0, 3.0)]), 4).unwrap();
        assert_eq!(g.n_interior(), 6);
        assert_eq!(g.n_boundary(), 4);
        assert_eq!(g.component_count(), 2);
        assert_eq!(g.component_labels(), &[0, 0, 0, 1, 1, 1]);
        assert_eq!(g.piece_of_interior(), &[0, 0, 0, 1, 1, 1]);
        // lattice nodes 1.25..1.75 are exterior
        assert_eq!(g.class(6), NodeClass::Exterior);
    }

    #[test]
    fn unit_square_excludes_corners() {
        let g = build_grid(&DomainSpec::rectangles(&[[0.0, 1.0, 0.0, 1.0]]), 4).unwrap();
        assert_eq!(g.shape(), [5, 5]);
        assert_eq!(g.n_interior(), 9);
        assert_eq!(g.n_boundary(), 12);
        for corner in [0, 4, 20, 24] {
            assert_eq!(g.class(corner), NodeClass::Exterior);
        }
        assert_eq!(g.component_count(), 1);
        // y-major ordering
        assert_eq!(g.interior_nodes(), &[6, 7, 8, 11, 12, 13, 16, 17, 18]);
    }

    #[test]
    fn too_coarse_and_empty() {
        let d = DomainSpec::intervals(&[(0.0, 0.25)]);
        assert!(matches!(build_grid(&d, 4), Err(GridError::ResolutionTooCoarse { .. })));
        assert!(matches!(
            build_grid(&DomainSpec::intervals(&[(0.0, 1.0)]), 3),
            Err(GridError::ResolutionTooCoarse { .. })
        ));
        let never = DomainSpec::mask(parse_expr("-1").unwrap(), AxisBox::rect(0.0, 1.0, 0.0, 1.0));
        assert_eq!(build_grid(&never, 8), Err(GridError::EmptyDomain));
    }

    #[test]
    fn rejects_overlap() {
        let d = DomainSpec::intervals(&[(0.0, 1.0), (0.5, 2.0)]);
        assert!(matches!(build_grid(&d, 8), Err(GridError::InvalidDomain(_))));
    }

    #[test]
    fn masked_disc_invariants() {
        let disc = parse_expr("0.16 - (x-0.5)^2 - (y-0.5)^2").unwrap();
        let d = DomainSpec::mask(disc, AxisBox::rect(0.0, 1.0, 0.0, 1.0));
        let g = build_grid(&d, 16).unwrap();
        for &n in g.interior_nodes() {
            assert!(g.axis_neighbors(n).all(|m| g.class(m) != NodeClass::Exterior));
        }
        for &b in g.boundary_nodes() {
            assert!(g.axis_neighbors(b).any(|m| g.class(m) == NodeClass::Interior));
            assert!(!d.contains(&g.point(b)) || g.lattice_index(b)[0] == 0);
        }
        assert_eq!(g.component_count(), 1);
    }

    #[test]
    fn nearest_boundary_lookup() {
        let g = unit_interval(8);
        assert_eq!(g.nearest_boundary(&[-0.01]), 0);
        assert_eq!(g.nearest_boundary(&[1.003]), 1);
        let g2 = build_grid(&DomainSpec::rectangles(&[[0.0, 1.0, 0.0, 1.0]]), 4).unwrap();
        let k = g2.nearest_boundary(&[0.001, 0.001]);
        let p = g2.boundary_point(k);
        assert!(p == vec![0.25, 0.0] || p == vec![0.0, 0.25]);
    }

    #[test]
    fn deterministic() {
        let d = DomainSpec::rectangles(&[[0.0, 1.0, 0.0, 0.5], [0.0, 1.0, 0.75, 1.5]]);
        let a = build_grid(&d, 8).unwrap();
        let b = build_grid(&d, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.component_count(), 2);
    }
}
