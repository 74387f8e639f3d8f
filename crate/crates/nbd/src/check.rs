//! The invariant suite behind `nbd check`.

use nalgebra::{DMatrix, DVector};
use nbd_core::grid::DomainShape;
use nbd_core::solver::{sup_norm, ShiftedSolver};
use nbd_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Built, Config, LawConfig};
use crate::exec::Rayon;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skip => "skip",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

fn le(name: &'static str, value: f64, threshold: f64, detail: impl Into<String>) -> CheckResult {
    let status = if value <= threshold { Status::Pass } else { Status::Fail };
    CheckResult { name, status, value, threshold, detail: detail.into() }
}

fn ge(name: &'static str, value: f64, threshold: f64, detail: impl Into<String>) -> CheckResult {
    let status = if value >= threshold { Status::Pass } else { Status::Fail };
    CheckResult { name, status, value, threshold, detail: detail.into() }
}

fn skip(name: &'static str, why: &str) -> CheckResult {
    CheckResult { name, status: Status::Skip, value: f64::NAN, threshold: f64::NAN, detail: why.into() }
}

fn fail(name: &'static str, why: String) -> CheckResult {
    CheckResult { name, status: Status::Fail, value: f64::NAN, threshold: f64::NAN, detail: why }
}

const LAMBDAS: [f64; 4] = [0.5, 1.0, 5.0, 50.0];

struct Ctx<'a> {
    b: &'a Built,
    exec: &'a Rayon,
    rng: ChaCha8Rng,
    monotone: bool,
    conservative: bool,
    /// Some closed class leaks nowhere, so 0 is an eigenvalue.
    closed_class: Option<bool>,
}

impl Ctx<'_> {
    fn random_nonneg(&mut self) -> DVector<f64> {
        let n = self.b.op.dim();
        DVector::from_fn(n, |_, _| self.rng.random::<f64>())
    }

    fn resolve(&self, lambda: f64, f: &DVector<f64>, method: ResolventMethod) -> Result<GridVector<f64>, SolveError> {
        let mut req = ResolventRequest::new(lambda, f.clone(), method);
        req.tol = self.b.config.solver.tol;
        req.max_iter = self.b.config.solver.max_iter;
        resolvent(&self.b.op, &req)
    }
}

/// Runs every invariant on a built scenario.
pub fn run_checks(b: &Built, exec: &Rayon) -> Vec<CheckResult> {
    let c0_nonpositive = (0..b.grid.n_interior())
        .all(|k| b.coeffs.eval(&b.grid.interior_point(k)).map(|p| p.c0 <= 0.0).unwrap_or(false));
    let mut ctx = Ctx {
        b,
        exec,
        rng: ChaCha8Rng::seed_from_u64(b.config.mc.seed),
        monotone: b.op.dirichlet().has_monotone_sign_pattern() && c0_nonpositive,
        conservative: b.measure.is_conservative() && c0_zero(b),
        closed_class: has_conservative_closed_class(&b.op),
    };
    let mut out = Vec::new();
    out.extend(grid_checks(&ctx));
    out.extend(expression_checks(&b.config));
    out.extend(coefficient_checks(&ctx));
    out.extend(measure_checks(&ctx));
    out.extend(assembly_checks(&ctx));
    out.extend(solver_checks(&mut ctx));
    out.extend(spectral_checks(&ctx));
    out.extend(mc_checks(&ctx));
    out
}

fn c0_zero(b: &Built) -> bool {
    (0..b.grid.n_interior()).all(|k| b.coeffs.eval(&b.grid.interior_point(k)).map(|p| p.c0 == 0.0).unwrap_or(false))
}

fn grid_checks(ctx: &Ctx) -> Vec<CheckResult> {
    let b = ctx.b;
    let mut out = Vec::new();
    match &b.domain.shape {
        DomainShape::Boxes(boxes) => {
            let h = b.grid.spacing();
            let dim = b.domain.dim;
            let separated = boxes.iter().enumerate().all(|(i, p)| {
                boxes[..i].iter().all(|q| {
                    (0..dim).any(|a| (q.lo[a] - p.hi[a]).max(p.lo[a] - q.hi[a]) >= 2.0 * h - 1e-12)
                })
            });
            if separated {
                let diff = (b.grid.component_count() as f64 - boxes.len() as f64).abs();
                out.push(le(
                    "grid.component_count",
                    diff,
                    0.0,
                    format!("{} components for {} pieces", b.grid.component_count(), boxes.len()),
                ));
            } else {
                out.push(skip("grid.component_count", "pieces closer than 2h"));
            }
        }
        DomainShape::Mask(_) => out.push(skip("grid.component_count", "mask domain")),
    }
    let again = build_grid(&b.domain, b.grid.resolution());
    let same = matches!(&again, Ok(g) if *g == b.grid);
    let sorted = b.grid.interior_nodes().windows(2).all(|w| {
        let (p, q) = (b.grid.coords(w[0]), b.grid.coords(w[1]));
        (p[1], p[0]) < (q[1], q[0])
    });
    out.push(le(
        "grid.deterministic",
        if same && sorted { 0.0 } else { 1.0 },
        0.0,
        "rebuild identical; interior nodes ordered by (y, x)",
    ));
    out
}

fn expression_texts(c: &Config) -> Vec<(String, String)> {
    let mut v = Vec::new();
    for (i, row) in c.coefficients.a.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            v.push((format!("coefficients.a[{i}][{j}]"), s.clone()));
        }
    }
    for (i, s) in c.coefficients.b.iter().enumerate() {
        v.push((format!("coefficients.b[{i}]"), s.clone()));
    }
    v.push(("coefficients.c0".into(), c.coefficients.c0.clone()));
    fn law(prefix: String, l: &LawConfig, v: &mut Vec<(String, String)>) {
        match l {
            LawConfig::Density { density, mass } => {
                v.push((format!("{prefix}.density"), density.clone()));
                v.push((format!("{prefix}.mass"), mass.clone()));
            }
            LawConfig::Mixture(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    law(format!("{prefix}.mixture[{i}]"), &p.law, v);
                }
            }
            _ => {}
        }
    }
    for (i, r) in c.measure.regions.iter().enumerate() {
        law(format!("measure.regions[{i}].law"), &r.law, &mut v);
    }
    v.push(("solver.rhs".into(), c.solver.rhs.clone()));
    v.push(("solver.u0".into(), c.solver.u0.clone()));
    v.push(("spectral.u0".into(), c.spectral.u0.clone()));
    for (i, item) in c.mc.battery.iter().enumerate() {
        v.push((format!("mc.battery[{i}].f"), item.f.clone()));
    }
    if let Some(m) = &c.domain.mask {
        v.push(("domain.mask".into(), m.clone()));
    }
    v
}

fn expression_checks(c: &Config) -> Vec<CheckResult> {
    let mut bad = Vec::new();
    let texts = expression_texts(c);
    for (field, text) in &texts {
        let stable = parse_expr(text)
            .ok()
            .and_then(|e| parse_expr(&e.to_string()).ok().map(|p| (e, p)))
            .map(|(e, p)| parse_expr(&p.to_string()).ok() == Some(p.clone()) && p == e)
            .unwrap_or(false);
        if !stable {
            bad.push(field.clone());
        }
    }
    vec![le("expr.round_trip", bad.len() as f64, 0.0, format!("{} expressions; unstable: {bad:?}", texts.len()))]
}

fn coefficient_checks(ctx: &Ctx) -> Vec<CheckResult> {
    let b = ctx.b;
    let v = &b.validation;
    let mut out = vec![le(
        "coeffs.validation",
        if v.passed() { 0.0 } else { 1.0 },
        0.0,
        format!("min eigenvalue {:.3e}, eta {:.3e}, max c0 {:.3e}", v.min_eigenvalue, v.eta, v.max_c0),
    )];
    let constant = b.coeffs.a.iter().chain(&b.coeffs.b).chain([&b.coeffs.c0]).all(|e| e.constant_value().is_some());
    if constant {
        let finer = build_grid(&b.domain, 2 * b.grid.resolution())
            .ok()
            .and_then(|g| validate_coefficients(&b.coeffs, &g).ok());
        let same = finer.map(|f| f.passed() == v.passed() && f.min_eigenvalue == v.min_eigenvalue).unwrap_or(false);
        out.push(le("coeffs.resolution_independent", if same { 0.0 } else { 1.0 }, 0.0, "validated at n and 2n"));
    } else {
        out.push(skip("coeffs.resolution_independent", "variable coefficients"));
    }
    out
}

/// `(M v)(z)` at a fixed boundary point `z`, for `v = x + y`.
fn measure_at(c: &Config, n: usize, z: &[f64]) -> Option<f64> {
    let domain = c.domain_spec().ok()?;
    let grid = build_grid(&domain, n).ok()?;
    let m = discretize_measures(&c.measure_spec().ok()?, &domain, &grid).ok()?;
    let kb = grid.nearest_boundary(z);
    let v = DVector::from_fn(grid.n_interior(), |k, _| grid.interior_point(k).iter().sum::<f64>());
    Some((m.matrix().row(kb) * v)[0])
}

fn has_density(l: &LawConfig) -> bool {
    match l {
        LawConfig::Density { .. } => true,
        LawConfig::Mixture(parts) => parts.iter().any(|p| has_density(&p.law)),
        _ => false,
    }
}

fn measure_checks(ctx: &Ctx) -> Vec<CheckResult> {
    let b = ctx.b;
    let mut out = Vec::new();
    let ones = DVector::from_element(b.grid.n_interior(), 1.0);
    let mv = b.measure.apply(&ones);
    let mismatch = mv
        .iter()
        .zip(b.measure.row_mass())
        .map(|(x, m)| (x - m).abs())
        .fold(0.0, f64::max);
    let out_of_range = b.measure.row_mass().iter().filter(|&&m| !(0.0..=1.0 + 1e-12).contains(&m)).count();
    out.push(le(
        "measures.row_mass",
        mismatch.max(out_of_range as f64),
        1e-12,
        "M·1 equals row mass in [0, 1]",
    ));

    let mut atoms = Vec::new();
    fn collect(l: &MeasureLaw, atoms: &mut Vec<(Vec<f64>, f64)>) {
        match l {
            MeasureLaw::Atoms(a) => atoms.extend(a.iter().map(|a| (a.point.clone(), a.weight))),
            MeasureLaw::Mixture(parts) => parts.iter().for_each(|(_, l)| collect(l, atoms)),
            _ => {}
        }
    }
    b.measure_spec.regions.iter().for_each(|r| collect(&r.law, &mut atoms));
    if atoms.is_empty() {
        out.push(skip("measures.splat_mass", "no atoms"));
    } else {
        let defect = atoms
            .iter()
            .filter(|(p, _)| b.domain.contains(p))
            .map(|(p, w)| {
                let s: f64 = nbd_core::measures::splat(&b.grid, p, *w).iter().map(|x| x.1).sum();
                (s - w).abs() / w.abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max);
        out.push(le("measures.splat_mass", defect, 4.0 * f64::EPSILON, "relative splat mass defect"));
    }

    if b.config.measure.regions.iter().any(|r| has_density(&r.law)) && b.grid.n_boundary() > 0 {
        let n = b.grid.resolution();
        let z = b.grid.boundary_point(b.grid.n_boundary() / 2);
        let values: Option<Vec<f64>> = [n, 2 * n, 16 * n].iter().map(|&k| measure_at(&b.config, k, &z)).collect();
        match values {
            Some(v) => {
                let (e1, e2) = ((v[0] - v[2]).abs(), (v[1] - v[2]).abs());
                if e1 <= 1e-10 * v[2].abs().max(1.0) {
                    out.push(le("measures.refinement_order", 0.0, 0.0, "quadrature exact to round-off at n"));
                } else {
                    let order = (e1 / e2.max(f64::MIN_POSITIVE)).log2();
                    out.push(ge("measures.refinement_order", order, 1.0, format!("errors {e1:.3e}, {e2:.3e}")));
                }
            }
            None => out.push(fail("measures.refinement_order", "refined grid failed to build".into())),
        }
    } else {
        out.push(skip("measures.refinement_order", "no density law"));
    }
    out
}

fn assembly_checks(ctx: &Ctx) -> Vec<CheckResult> {
    let b = ctx.b;
    let a = b.op.matrix();
    let mut out = Vec::new();
    if ctx.monotone {
        let worst = a.row_iter().map(|r| r.sum()).fold(f64::NEG_INFINITY, f64::max);
        out.push(le("assembly.row_sums", worst, 1e-10 * b.op.norm_inf(), "max row sum of A_nl"));
    } else {
        out.push(skip("assembly.row_sums", "scheme not monotone or c0 > 0"));
    }
    let zero = MeasureMatrix::zero(&b.grid);
    let bare = assemble_nonlocal(b.op.dirichlet(), &zero).expect("shapes agree");
    let diff = a - bare.matrix();
    let touched: Vec<bool> = (0..b.op.dim()).map(|i| b.op.dirichlet().a_ib().row(i).next().is_some()).collect();
    let stray = diff
        .row_iter()
        .enumerate()
        .filter(|(i, r)| !touched[*i] && r.amax() > 0.0)
        .count();
    out.push(le("assembly.measure_rows", stray as f64, 0.0, "rows changed by M outside the A_ib pattern"));
    out
}

fn solver_checks(ctx: &mut Ctx) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let tol = ctx.b.config.solver.tol;
    let fs: Vec<DVector<f64>> = (0..5).map(|_| ctx.random_nonneg()).collect();

    let mut resid = 0.0f64;
    let mut err = None;
    for f in &fs {
        let r = (|| -> Result<f64, SolveError> {
            let r1 = ctx.resolve(1.0, f, ResolventMethod::Direct)?.interior;
            let r2 = ctx.resolve(2.0, f, ResolventMethod::Direct)?.interior;
            let r12 = ctx.resolve(1.0, &r2, ResolventMethod::Direct)?.interior;
            Ok(sup_norm(&(&r1 - &r2 - r12)))
        })();
        match r {
            Ok(v) => resid = resid.max(v),
            Err(e) => err = Some(e),
        }
    }
    out.push(match err {
        Some(e) => fail("solver.resolvent_identity", e.to_string()),
        None => le("solver.resolvent_identity", resid, 1e-8, "R(1) − R(2) − R(1)R(2), 5 random f ≥ 0"),
    });

    let f = &fs[0];
    let fc: DVector<Complex64> = promote(f);
    let mut gap = 0.0f64;
    let mut err = None;
    for lambda in [Complex64::new(0.5, 0.0), Complex64::new(2.0, 0.0), Complex64::new(0.5, 3.0), Complex64::new(1.0, -20.0)] {
        let run = |m| {
            let mut req = ResolventRequest::new(lambda, fc.clone(), m);
            req.tol = tol;
            req.max_iter = ctx.b.config.solver.max_iter;
            resolvent(&ctx.b.op, &req)
        };
        match (run(ResolventMethod::Direct), run(ResolventMethod::Neumann), run(ResolventMethod::BoundaryReduced)) {
            (Ok(d), Ok(n), Ok(r)) => gap = gap.max(d.sub(&n).sup_norm()).max(d.sub(&r).sup_norm()),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => err = Some(e),
        }
    }
    out.push(match err {
        Some(e) => fail("solver.method_agreement", e.to_string()),
        None => le("solver.method_agreement", gap, 10.0 * tol, "direct vs neumann vs boundary_reduced, Re λ ≥ 0.5"),
    });

    if ctx.monotone {
        let mut min = f64::INFINITY;
        let mut excess = f64::NEG_INFINITY;
        let mut err = None;
        for &lambda in &LAMBDAS {
            for f in &fs {
                match ctx.resolve(lambda, f, ResolventMethod::Direct) {
                    Ok(u) => {
                        min = min.min(u.min());
                        excess = excess.max(lambda * u.sup_norm() - f.amax());
                    }
                    Err(e) => err = Some(e),
                }
            }
        }
        if let Some(e) = err {
            out.push(fail("solver.positivity", e.to_string()));
            out.push(fail("solver.contraction", "resolvent failed".into()));
        } else {
            out.push(ge("solver.positivity", min, -1e-12, "min R(λ)f over λ ∈ {0.5, 1, 5, 50}"));
            out.push(le("solver.contraction", excess, 1e-10, "max ‖λR(λ)f‖ − ‖f‖"));
        }
    } else {
        out.push(skip("solver.positivity", "scheme not monotone"));
        out.push(skip("solver.contraction", "scheme not monotone"));
    }

    if ctx.b.measure.is_conservative() {
        match ctx.resolve(1.0, f, ResolventMethod::Direct) {
            Ok(u) => {
                let excess = u.max() - u.interior.max();
                out.push(le("solver.interior_max", excess, 0.0, "max over all nodes minus max over interior"));
            }
            Err(e) => out.push(fail("solver.interior_max", e.to_string())),
        }
    } else {
        out.push(skip("solver.interior_max", "measure not conservative"));
    }

    if ctx.closed_class == Some(false) {
        match (ctx.resolve(0.0, f, ResolventMethod::Neumann), ctx.resolve(0.0, f, ResolventMethod::Direct)) {
            (Ok(n), Ok(d)) => {
                out.push(le("solver.neumann_geometric", n.sub(&d).sup_norm(), 10.0 * tol, "Neumann series at λ = 0"))
            }
            (Err(e), _) | (_, Err(e)) => out.push(fail("solver.neumann_geometric", e.to_string())),
        }
    } else {
        out.push(skip("solver.neumann_geometric", "a closed conservative class exists"));
    }
    out
}

/// Closed conservative components, counted from the grid and measure alone.
fn closed_components(b: &Built) -> usize {
    let labels = b.grid.component_labels();
    let nc = b.grid.component_count();
    let mut closed = vec![true; nc];
    for k in 0..b.grid.n_interior() {
        if b.coeffs.eval(&b.grid.interior_point(k)).map(|p| p.c0 != 0.0).unwrap_or(true) {
            closed[labels[k]] = false;
        }
    }
    for kb in 0..b.grid.n_boundary() {
        let g = b.grid.boundary_nodes()[kb];
        let owners: Vec<usize> = b
            .grid
            .axis_neighbors(g)
            .filter_map(|n| b.grid.interior_index(n))
            .map(|k| labels[k])
            .collect();
        let row = b.measure.matrix().row(kb);
        for &c in &owners {
            let inside: f64 = row.iter().enumerate().filter(|(k, _)| labels[*k] == c).map(|x| *x.1).sum();
            if (inside - 1.0).abs() > 1e-12 {
                closed[c] = false;
            }
        }
    }
    closed.iter().filter(|&&c| c).count()
}

fn spectral_checks(ctx: &Ctx) -> Vec<CheckResult> {
    let b = ctx.b;
    let names = [
        "spectral.bound",
        "spectral.simple_zero",
        "spectral.commutation",
        "spectral.density_fixed_point",
        "spectral.rank",
    ];
    if b.op.dim() > nbd_core::spectral::MAX_DENSE_DIM {
        return names.iter().map(|n| skip(n, "interior dimension too large")).collect();
    }
    let tol = b.config.spectral.tol_zero;
    let spec = match eigen_spectrum(&b.op, tol).and_then(|s| spectral_projection(&b.op, &s)) {
        Ok(s) => s,
        Err(e) => return names.iter().map(|n| fail(n, e.to_string())).collect(),
    };
    let p = spec.projection.clone().expect("projection filled");
    let mut out = vec![le("spectral.bound", spec.spectral_bound, 1e-10, "max Re σ(A_nl)")];
    let connected_conservative = ctx.conservative && b.grid.component_count() == 1;
    if connected_conservative {
        let ok = spec.zero_modes == 1 && spec.gap > 0.0 && spec.gap.is_finite();
        out.push(le(
            "spectral.simple_zero",
            if ok { 0.0 } else { 1.0 },
            0.0,
            format!("zero modes {}, gap {:.6e}", spec.zero_modes, spec.gap),
        ));
    } else {
        out.push(skip("spectral.simple_zero", "not conservative and connected"));
    }
    let dt = match b.config.solver.scheme {
        crate::config::SchemeConfig::BackwardEuler { dt } => dt,
        crate::config::SchemeConfig::PostWidder { .. } => 1e-2,
    };
    let n = b.op.dim();
    let e = ShiftedSolver::new(1.0 / dt, b.op.matrix())
        .and_then(|s| s.solve_matrix(&DMatrix::identity(n, n)))
        .map(|inv| inv / dt);
    match e {
        Ok(e) => {
            let comm = (&e * &p - &p * &e).row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
            out.push(le("spectral.commutation", comm, 1e-8, format!("‖EP − PE‖∞ with dt = {dt}")));
            if connected_conservative {
                match invariant_density(&b.op, b.grid.cell_volume(), tol) {
                    Ok(h) => {
                        let r = (h.h.transpose() * &e - h.h.transpose()).abs().sum();
                        out.push(le("spectral.density_fixed_point", r, 1e-8, "‖hᵀE − hᵀ‖₁"));
                    }
                    Err(err) => out.push(fail("spectral.density_fixed_point", err.to_string())),
                }
            } else {
                out.push(skip("spectral.density_fixed_point", "not conservative and connected"));
            }
        }
        Err(err) => {
            out.push(fail("spectral.commutation", err.to_string()));
            out.push(fail("spectral.density_fixed_point", err.to_string()));
        }
    }
    let expected = closed_components(b);
    out.push(le(
        "spectral.rank",
        (spec.rank_p as f64 - expected as f64).abs(),
        0.0,
        format!("rank P = {}, closed conservative components = {expected}", spec.rank_p),
    ));
    out
}

fn default_item(b: &Built) -> BatteryItem {
    let x0 = match b.config.mc.battery.first() {
        Some(item) => item.x0.clone(),
        None => b.grid.interior_point(b.grid.n_interior() / 2),
    };
    let (t, f) = match b.config.mc.battery.first() {
        Some(item) => (item.t, parse_expr(&item.f).unwrap_or(Expr::Num(1.0))),
        None => (0.1, Expr::Num(1.0)),
    };
    BatteryItem { x0, t, f }
}

fn mc_checks(ctx: &Ctx) -> Vec<CheckResult> {
    let b = ctx.b;
    let mut out = Vec::new();
    let process = ReturnProcess::new(&b.domain, &b.grid, &b.coeffs, &b.measure);
    let base = ProcessConfig { n_paths: b.config.mc.check_paths, ..b.config.mc.process() };
    let item = default_item(b);
    let run = |cfg: &ProcessConfig, item: &BatteryItem| simulate_ensemble(&process, cfg, &item.x0, item.t, &item.f, ctx.exec);

    let small = run(&base, &item);
    let large = run(&ProcessConfig { n_paths: 4 * base.n_paths, ..base }, &item);
    match (&small, &large) {
        (Ok(s), Ok(l)) if s.stderr > 0.0 && l.stderr > 0.0 => {
            let ratio = s.stderr / l.stderr;
            out.push(le("mc.stderr_halving", (ratio - 2.0).abs() / 2.0, 0.2, format!("stderr ratio {ratio:.4}")));
        }
        (Ok(_), Ok(_)) => out.push(skip("mc.stderr_halving", "zero variance")),
        (Err(e), _) | (_, Err(e)) => out.push(fail("mc.stderr_halving", e.to_string())),
    }

    let ones = BatteryItem { f: Expr::Num(1.0), ..item.clone() };
    if ctx.conservative {
        match run(&base, &ones) {
            Ok(e) => out.push(le("mc.conservative_alive", 1.0 - e.alive_fraction, 0.0, "1 − alive fraction")),
            Err(e) => out.push(fail("mc.conservative_alive", e.to_string())),
        }
        out.push(skip("mc.alive_monotone", "conservative"));
    } else {
        out.push(skip("mc.conservative_alive", "not conservative"));
        let alive: Result<Vec<f64>, McError> = [1.0, 2.0, 4.0]
            .iter()
            .map(|k| run(&base, &BatteryItem { t: ones.t * k, ..ones.clone() }).map(|e| e.alive_fraction))
            .collect();
        match alive {
            Ok(a) => {
                let rise = a.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
                out.push(le("mc.alive_monotone", rise, 0.0, format!("alive fractions {a:?} at t, 2t, 4t")));
            }
            Err(e) => out.push(fail("mc.alive_monotone", e.to_string())),
        }
    }

    let items: Vec<BatteryItem> = if b.config.mc.battery.is_empty() {
        vec![item.clone()]
    } else {
        b.config
            .mc
            .battery
            .iter()
            .map(|i| BatteryItem { x0: i.x0.clone(), t: i.t, f: parse_expr(&i.f).unwrap_or(Expr::Num(1.0)) })
            .collect()
    };
    let half = ProcessConfig { dt: base.dt / 2.0, ..base };
    let mut worst = 0.0f64;
    let mut err = None;
    for it in &items {
        match (run(&base, it), run(&half, it)) {
            (Ok(a), Ok(h)) => {
                let se = (a.stderr * a.stderr + h.stderr * h.stderr).sqrt();
                let d = (a.mean - h.mean).abs();
                worst = worst.max(if se > 0.0 { d / se } else if d == 0.0 { 0.0 } else { f64::INFINITY });
            }
            (Err(e), _) | (_, Err(e)) => err = Some(e),
        }
    }
    out.push(match err {
        Some(e) => fail("mc.dt_refinement", e.to_string()),
        None => le("mc.dt_refinement", worst, 2.0, "max |mean(dt) − mean(dt/2)| / stderr of the difference"),
    });

    let seq = simulate_ensemble(&process, &base, &item.x0, item.t, &item.f, &Sequential);
    let par = run(&base, &item);
    out.push(match (seq, par) {
        (Ok(s), Ok(p)) => le(
            "mc.thread_independent",
            if s == p { 0.0 } else { 1.0 },
            0.0,
            format!("sequential vs {} threads", ctx.exec.threads()),
        ),
        (Err(e), _) | (_, Err(e)) => fail("mc.thread_independent", e.to_string()),
    });
    out
}
