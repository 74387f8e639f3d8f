//! Monte Carlo simulation of the instantaneous-return diffusion.
//!
//! Each step applies exponential killing at rate `−c₀`, then an
//! Euler–Maruyama move `X += b dt + σ √dt ξ` with `σσᵀ = 2a`. A move that
//! leaves the domain is bisected (8 times) to a crossing point. A move that
//! stays inside a box piece may still have touched a face in between; that
//! event is sampled from the Brownian bridge probability
//! `exp(−2 d₀ d₁ / (2 a_kk dt))` per face, with the crossing placed on the
//! face. After a crossing the particle jumps back to an interior cell drawn
//! from the row of `M` at the nearest boundary node, or dies with the row
//! deficit.
//!
//! Paths are grouped in chunks. Chunk `i` draws from the ChaCha8 stream `i`
//! keyed by `seed`, so results depend only on `(seed, chunk_size)` and never
//! on execution order; chunk tallies are merged in chunk order.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::assembly::NonlocalOperator;
use crate::coeffs::{CoefficientSet, PointCoeffs};
use crate::expr::{DomainError, Expr};
use crate::grid::{DomainSpec, Grid, NodeClass};
use crate::measures::MeasureMatrix;
use crate::solver::{evolve_converged, SolveError};

pub const BISECTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("StartOutsideDomain: {0:?} is not inside the domain")]
    StartOutsideDomain(Vec<f64>),
    #[error("invalid process configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("evaluating a field along a path: {0}")]
    Eval(#[from] DomainError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub chunk_size: usize,
}

impl ProcessConfig {
    pub fn validate(&self) -> Result<(), McError> {
        if !(self.dt > 0.0) || self.n_paths == 0 || self.chunk_size == 0 {
            return Err(McError::InvalidConfig("need dt > 0, n_paths ≥ 1, chunk_size ≥ 1"));
        }
        Ok(())
    }

    pub fn n_chunks(&self) -> usize {
        self.n_paths.div_ceil(self.chunk_size)
    }
}

/// Runs chunk closures and returns their results in chunk order.
pub trait ChunkExecutor {
    fn map_chunks<R, F>(&self, n_chunks: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ChunkExecutor for Sequential {
    fn map_chunks<R, F>(&self, n_chunks: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n_chunks).map(f).collect()
    }
}

/// Per-chunk accumulator (Welford mean and second moment).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChunkTally {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
    pub alive: u64,
    pub kills: u64,
    pub returns: u64,
    /// Alive paths per interior node cell, when requested.
    pub histogram: Option<Vec<u64>>,
}

impl ChunkTally {
    fn push(&mut self, value: f64) {
        self.n += 1;
        let delta = value - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (value - self.mean);
    }

    /// Chan et al. pairwise merge; deterministic for a fixed merge order.
    pub fn merge(mut self, other: &ChunkTally) -> ChunkTally {
        let n = self.n + other.n;
        if n == 0 {
            return self;
        }
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.n = n;
        self.alive += other.alive;
        self.kills += other.kills;
        self.returns += other.returns;
        match (&mut self.histogram, &other.histogram) {
            (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (None, Some(b)) => self.histogram = Some(b.clone()),
            _ => {}
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEstimate {
    /// Estimate of `E[f(X_t); t < ζ]`.
    pub mean: f64,
    pub stderr: f64,
    pub alive_fraction: f64,
    pub kill_count: u64,
    pub return_count: u64,
    pub n_paths: u64,
}

impl From<&ChunkTally> for PathEstimate {
    fn from(t: &ChunkTally) -> Self {
        let var = if t.n > 1 { t.m2 / (t.n - 1) as f64 } else { 0.0 };
        PathEstimate {
            mean: t.mean,
            stderr: libm::sqrt(var.max(0.0) / t.n.max(1) as f64),
            alive_fraction: t.alive as f64 / t.n.max(1) as f64,
            kill_count: t.kills,
            return_count: t.returns,
            n_paths: t.n,
        }
    }
}

/// Coefficients either frozen (constant fields) or evaluated along the path.
enum Fields<'a> {
    Constant(PointCoeffs),
    Variable(&'a CoefficientSet),
}

/// The return process on a discretized domain; sampling uses the rows of `M`.
pub struct ReturnProcess<'a> {
    domain: &'a DomainSpec,
    grid: &'a Grid,
    fields: Fields<'a>,
    dim: usize,
    /// Cumulative normalized weights per boundary row.
    cdf: Vec<Vec<(usize, f64)>>,
    row_mass: Vec<f64>,
}

fn sqrt_2a(pc: &PointCoeffs, dim: usize) -> [[f64; 2]; 2] {
    if dim == 1 {
        return [[libm::sqrt(2.0 * pc.a[0][0]), 0.0], [0.0, 0.0]];
    }
    // symmetric square root of a 2×2 SPD matrix: (S + √det I) / √(tr + 2√det)
    let off = pc.a[0][1] + pc.a[1][0];
    let s = [[2.0 * pc.a[0][0], off], [off, 2.0 * pc.a[1][1]]];
    let rdet = libm::sqrt((s[0][0] * s[1][1] - s[0][1] * s[1][0]).max(0.0));
    let t = libm::sqrt(s[0][0] + s[1][1] + 2.0 * rdet);
    [
        [(s[0][0] + rdet) / t, s[0][1] / t],
        [s[1][0] / t, (s[1][1] + rdet) / t],
    ]
}

impl<'a> ReturnProcess<'a> {
    pub fn new(
        domain: &'a DomainSpec,
        grid: &'a Grid,
        coeffs: &'a CoefficientSet,
        measure: &'a MeasureMatrix,
    ) -> Self {
        let constant = coeffs.a.iter().chain(coeffs.b.iter()).chain(core::iter::once(&coeffs.c0))
            .all(|e| e.constant_value().is_some());
        let fields = match coeffs.eval(&vec![0.0; coeffs.dim]) {
            Ok(pc) if constant => Fields::Constant(pc),
            _ => Fields::Variable(coeffs),
        };
        let cdf = measure
            .matrix()
            .row_iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                let mut acc = 0.0;
                let mut out = Vec::new();
                for (k, &w) in row.iter().enumerate() {
                    if w > 0.0 {
                        acc += w / total;
                        out.push((k, acc));
                    }
                }
                if let Some(last) = out.last_mut() {
                    last.1 = 1.0;
                }
                out
            })
            .collect();
        ReturnProcess {
            domain,
            grid,
            fields,
            dim: coeffs.dim,
            cdf,
            row_mass: measure.row_mass().to_vec(),
        }
    }

    fn coeffs_at(&self, x: &[f64]) -> Result<PointCoeffs, DomainError> {
        match &self.fields {
            Fields::Constant(pc) => Ok(*pc),
            Fields::Variable(c) => c.eval(x),
        }
    }

    fn interior_cell(&self, x: &[f64]) -> usize {
        let h = self.grid.spacing();
        let origin = self.grid.coords(0);
        let mut idx = [0usize; 2];
        for a in 0..self.dim {
            let s = libm::round((x[a] - origin[a]) / h);
            idx[a] = s.clamp(0.0, (self.grid.shape()[a] - 1) as f64) as usize;
        }
        let g = self.grid.global(idx[0], idx[1]);
        self.grid
            .interior_index(g)
            .unwrap_or_else(|| self.grid.nearest_interior(x))
    }

    /// Jump target drawn from row `kb` of `M`, jittered uniformly in the cell.
    fn resample(&self, kb: usize, rng: &mut ChaCha8Rng, x: &mut [f64; 2]) {
        let u: f64 = rng.random();
        let row = &self.cdf[kb];
        let pos = row.partition_point(|&(_, c)| c <= u).min(row.len() - 1);
        let node = self.grid.interior_nodes()[row[pos].0];
        let c = self.grid.coords(node);
        let h = self.grid.spacing();
        let mut y = c;
        for a in 0..self.dim {
            let j: f64 = rng.random();
            y[a] = c[a] + (j - 0.5) * h;
        }
        *x = if self.domain.contains(&y[..self.dim]) { y } else { c };
    }

    fn bisect(&self, x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
        let dim = self.dim;
        let (mut lo, mut hi) = (x, y);
        for _ in 0..BISECTIONS {
            let mut mid = lo;
            for a in 0..dim {
                mid[a] = 0.5 * (lo[a] + hi[a]);
            }
            if self.domain.contains(&mid[..dim]) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut z = lo;
        for a in 0..dim {
            z[a] = 0.5 * (lo[a] + hi[a]);
        }
        z
    }

    /// Samples an unobserved face contact between two interior positions of
    /// the same box piece; returns the contact point on the face.
    fn bridge_crossing(
        &self,
        x: &[f64; 2],
        y: &[f64; 2],
        pc: &PointCoeffs,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<[f64; 2]> {
        let dim = self.dim;
        let bx = self.domain.containing_box(&x[..dim])?;
        if !bx.contains_open(&y[..dim], dim, 0.0) {
            // moved between pieces without leaving the domain; cannot happen for disjoint open boxes
            return None;
        }
        let mut faces = [(0usize, 0.0f64, 0.0f64); 4];
        let mut count = 0;
        let mut total_log_survive = 0.0;
        for a in 0..dim {
            let var = 2.0 * pc.a[a][a] * dt;
            for face in [bx.lo[a], bx.hi[a]] {
                let e = 2.0 * (x[a] - face).abs() * (y[a] - face).abs() / var;
                if e < 40.0 {
                    let p = libm::exp(-e);
                    faces[count] = (a, face, p);
                    count += 1;
                    total_log_survive += libm::log1p(-p.min(1.0 - 1e-16));
                }
            }
        }
        if count == 0 {
            return None;
        }
        let hit = 1.0 - libm::exp(total_log_survive);
        let u: f64 = rng.random();
        if u >= hit {
            return None;
        }
        // choose the face in proportion to its own contact probability
        let weights: f64 = faces[..count].iter().map(|f| f.2).sum();
        let mut pick = u / hit * weights;
        let mut chosen = faces[count - 1];
        for f in &faces[..count] {
            if pick < f.2 {
                chosen = *f;
                break;
            }
            pick -= f.2;
        }
        let mut z = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])];
        z[chosen.0] = chosen.1;
        Some(z)
    }

    /// Simulates chunk `index` of `cfg` and tallies `f(X_t)` on survival.
    pub fn simulate_chunk(
        &self,
        cfg: &ProcessConfig,
        index: usize,
        x0: &[f64],
        t: f64,
        f: &Expr,
        histogram: bool,
    ) -> Result<ChunkTally, McError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let first = index * cfg.chunk_size;
        let count = cfg.chunk_size.min(cfg.n_paths.saturating_sub(first));
        let steps = libm::ceil(t / cfg.dt - 1e-9).max(1.0) as usize;
        let dt = t / steps as f64;
        let sqdt = libm::sqrt(dt);
        let f_const = f.constant_value();
        let mut tally = ChunkTally {
            histogram: histogram.then(|| vec![0u64; self.grid.n_interior()]),
            ..Default::default()
        };
        let dim = self.dim;
        for _ in 0..count {
            let mut x = [x0[0], x0.get(1).copied().unwrap_or(0.0)];
            let mut alive = true;
            for _ in 0..steps {
                let pc = self.coeffs_at(&x[..dim])?;
                if pc.c0 < 0.0 {
                    let survive = libm::exp(pc.c0 * dt);
                    if rng.random::<f64>() >= survive {
                        alive = false;
                        break;
                    }
                }
                let sigma = sqrt_2a(&pc, dim);
                let mut xi = [0.0; 2];
                for v in xi.iter_mut().take(dim) {
                    *v = StandardNormal.sample(&mut rng);
                }
                let mut y = x;
                for a in 0..dim {
                    let noise: f64 = (0..dim).map(|c| sigma[a][c] * xi[c]).sum();
                    y[a] = x[a] + pc.b[a] * dt + noise * sqdt;
                }
                let z = if self.domain.contains(&y[..dim]) {
                    match self.bridge_crossing(&x, &y, &pc, dt, &mut rng) {
                        Some(z) => z,
                        None => {
                            x = y;
                            continue;
                        }
                    }
                } else {
                    self.bisect(x, y)
                };
                let kb = self.grid.nearest_boundary(&z[..dim]);
                let mass = self.row_mass[kb];
                if mass > 0.0 && rng.random::<f64>() < mass {
                    self.resample(kb, &mut rng, &mut x);
                    tally.returns += 1;
                } else {
                    alive = false;
                    break;
                }
            }
            if alive {
                tally.alive += 1;
                let v = match f_const {
                    Some(c) => c,
                    None => f.eval_at(&x[..dim])?,
                };
                tally.push(v);
                if let Some(hist) = tally.histogram.as_mut() {
                    hist[self.interior_cell(&x[..dim])] += 1;
                }
            } else {
                tally.kills += 1;
                tally.push(0.0);
            }
        }
        Ok(tally)
    }

    fn run<E: ChunkExecutor>(
        &self,
        cfg: &ProcessConfig,
        x0: &[f64],
        t: f64,
        f: &Expr,
        histogram: bool,
        exec: &E,
    ) -> Result<ChunkTally, McError> {
        cfg.validate()?;
        if x0.len() != self.dim || !self.domain.contains(x0) {
            return Err(McError::StartOutsideDomain(x0.to_vec()));
        }
        if !(t > 0.0) {
            return Err(McError::InvalidConfig("t must be > 0"));
        }
        let parts = exec.map_chunks(cfg.n_chunks(), |i| self.simulate_chunk(cfg, i, x0, t, f, histogram));
        let mut total = ChunkTally::default();
        for part in parts {
            total = total.merge(&part?);
        }
        Ok(total)
    }
}

pub fn simulate_ensemble<E: ChunkExecutor>(
    process: &ReturnProcess<'_>,
    cfg: &ProcessConfig,
    x0: &[f64],
    t: f64,
    f: &Expr,
    exec: &E,
) -> Result<PathEstimate, McError> {
    Ok(PathEstimate::from(&process.run(cfg, x0, t, f, false, exec)?))
}

/// Fraction of all paths alive at `t` in each interior node cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    pub fractions: DVector<f64>,
    pub alive_fraction: f64,
}

impl Occupation {
    /// `½ Σ |p_i − h_i · vol|` after normalizing `p` to the alive paths.
    pub fn total_variation(&self, h: &DVector<f64>, cell_volume: f64) -> f64 {
        let alive: f64 = self.fractions.sum();
        0.5 * self
            .fractions
            .iter()
            .zip(h.iter())
            .map(|(p, hv)| (p / alive - hv * cell_volume).abs())
            .sum::<f64>()
    }
}

pub fn occupation_histogram<E: ChunkExecutor>(
    process: &ReturnProcess<'_>,
    cfg: &ProcessConfig,
    x0: &[f64],
    t: f64,
    exec: &E,
) -> Result<Occupation, McError> {
    let tally = process.run(cfg, x0, t, &Expr::Num(1.0), true, exec)?;
    let hist = tally.histogram.unwrap_or_default();
    Ok(Occupation {
        fractions: DVector::from_iterator(hist.len(), hist.iter().map(|&c| c as f64 / tally.n as f64)),
        alive_fraction: tally.alive as f64 / tally.n as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryItem {
    pub x0: Vec<f64>,
    pub t: f64,
    pub f: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub item: BatteryItem,
    pub mc: PathEstimate,
    pub pde: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub max_abs_z: f64,
}

/// Multilinear interpolation of a semigroup value at `x`. Boundary node
/// values are `M u_i`; exterior corners are dropped and the remaining
/// weights renormalized.
pub fn interpolate(grid: &Grid, interior: &DVector<f64>, boundary: &DVector<f64>, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut weight = 0.0;
    for (g, w) in grid.cell_corners(x) {
        let v = match grid.class(g) {
            NodeClass::Interior => interior[grid.interior_index(g).unwrap()],
            NodeClass::Boundary => boundary[grid.boundary_index(g).unwrap()],
            NodeClass::Exterior => continue,
        };
        acc += w * v;
        weight += w;
    }
    acc / weight
}

/// `(T(t)f)(x0)` by step-halving backward Euler to relative tolerance `rel_tol`.
pub fn pde_value(
    grid: &Grid,
    op: &NonlocalOperator,
    item: &BatteryItem,
    rel_tol: f64,
) -> Result<f64, McError> {
    let u0 = DVector::from_iterator(
        grid.n_interior(),
        (0..grid.n_interior())
            .map(|k| item.f.eval_at(&grid.interior_point(k)))
            .collect::<Result<Vec<f64>, _>>()?,
    );
    let (u, _) = evolve_converged(op, &u0, item.t, rel_tol, 1e-3, 16, 1 << 18)?;
    let ub = op.measure().apply(&u);
    Ok(interpolate(grid, &u, &ub, &item.x0))
}

/// z-scores `(MC − PDE) / stderr` over a battery; a zero standard error
/// yields `z = 0` when both sides agree to 1e-12.
pub fn mc_vs_pde<E: ChunkExecutor>(
    process: &ReturnProcess<'_>,
    grid: &Grid,
    op: &NonlocalOperator,
    cfg: &ProcessConfig,
    battery: &[BatteryItem],
    pde_rel_tol: f64,
    exec: &E,
) -> Result<ComparisonReport, McError> {
    if battery.is_empty() {
        return Err(McError::InvalidConfig("empty battery"));
    }
    let mut rows = Vec::with_capacity(battery.len());
    for item in battery {
        let mc = simulate_ensemble(process, cfg, &item.x0, item.t, &item.f, exec)?;
        let pde = pde_value(grid, op, item, pde_rel_tol)?;
        let diff = mc.mean - pde;
        let z = if mc.stderr > 0.0 {
            diff / mc.stderr
        } else if diff.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        rows.push(ComparisonRow { item: item.clone(), mc, pde, z });
    }
    let max_abs_z = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    Ok(ComparisonReport { rows, max_abs_z })
}
