//! End-to-end acceptance criteria. Runs without the libtest harness so that
//! one PASS/FAIL line per criterion is always printed.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use nbd::Rayon;
use nbd_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Scenario {
    domain: DomainSpec,
    grid: Grid,
    measure: MeasureMatrix,
    op: NonlocalOperator,
}

fn build(domain: DomainSpec, n: usize, coeffs: &CoefficientSet, spec: &MeasureSpec) -> Scenario {
    let grid = build_grid(&domain, n).unwrap();
    let measure = discretize_measures(spec, &domain, &grid).unwrap();
    let d = assemble_dirichlet(&grid, coeffs, Scheme::Upwinded).unwrap();
    let op = assemble_nonlocal(&d, &measure).unwrap();
    Scenario { domain, grid, measure, op }
}

fn density(mass: f64) -> MeasureSpec {
    MeasureSpec::uniform(MeasureLaw::Density { density: parse_expr("1 + x").unwrap(), mass: Expr::Num(mass) })
}

fn line_1d(n: usize, mass: f64) -> Scenario {
    let coeffs = CoefficientSet::constant(1, 1.0, &[0.75], 0.0);
    let spec = if mass == 0.0 { MeasureSpec::zero() } else { density(mass) };
    build(DomainSpec::intervals(&[(0.0, 1.0)]), n, &coeffs, &spec)
}

fn square_2d(n: usize, mass: f64) -> Scenario {
    let coeffs = CoefficientSet::constant(2, 1.0, &[0.5, -1.0], 0.0);
    let spec = if mass == 0.0 { MeasureSpec::zero() } else { density(mass) };
    build(DomainSpec::rectangles(&[[0.0, 1.0, 0.0, 1.0]]), n, &coeffs, &spec)
}

/// 1D/2D × {Dirichlet, sub-probability, conservative}.
fn six() -> Vec<(&'static str, Scenario)> {
    vec![
        ("1d-dirichlet", line_1d(64, 0.0)),
        ("1d-sub", line_1d(64, 0.7)),
        ("1d-conservative", line_1d(64, 1.0)),
        ("2d-dirichlet", square_2d(16, 0.0)),
        ("2d-sub", square_2d(16, 0.7)),
        ("2d-conservative", square_2d(16, 1.0)),
    ]
}

fn random_nonneg(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random::<f64>())
}

fn resolve<T: nbd_core::solver::Scalar>(op: &NonlocalOperator, lambda: T, f: &DVector<T>, m: ResolventMethod) -> GridVector<T> {
    resolvent(op, &ResolventRequest::new(lambda, f.clone(), m)).unwrap()
}

type Verdict = (bool, String);

fn contraction_positivity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut excess, mut min) = (f64::NEG_INFINITY, f64::INFINITY);
    for (_, s) in six() {
        for lambda in [0.5, 1.0, 5.0, 50.0] {
            for _ in 0..5 {
                let f = random_nonneg(&mut rng, s.op.dim());
                let u = resolve(&s.op, lambda, &f, ResolventMethod::Direct);
                excess = excess.max(lambda * u.sup_norm() - f.amax());
                min = min.min(u.min());
            }
        }
    }
    (excess <= 1e-10 && min >= -1e-12, format!("max ‖λRf‖−‖f‖ = {excess:.2e}, min Rf = {min:.2e}"))
}

fn method_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    let mut scenarios = six();
    scenarios.push(("two-components", two_components(32)));
    scenarios.push(("delta-return", delta_return(64)));
    for (_, s) in &scenarios {
        let f: DVector<Complex64> = promote(&s.op.matrix().column(0).map(|v| v.abs().min(1.0) + 0.5));
        for lambda in [
            Complex64::new(0.5, 0.0),
            Complex64::new(3.0, 0.0),
            Complex64::new(0.5, 7.0),
            Complex64::new(2.0, -60.0),
        ] {
            let d = resolve(&s.op, lambda, &f, ResolventMethod::Direct);
            for m in [ResolventMethod::Neumann, ResolventMethod::BoundaryReduced] {
                worst = worst.max(resolve(&s.op, lambda, &f, m).sub(&d).sup_norm());
            }
        }
    }
    (worst <= 1e-7, format!("max disagreement {worst:.2e} over {} scenarios", scenarios.len()))
}

fn conservation() -> Verdict {
    let mut worst = 0.0f64;
    for s in [line_1d(64, 1.0), square_2d(16, 1.0)] {
        let ones = DVector::from_element(s.op.dim(), 1.0);
        for lambda in [1.0, 10.0] {
            let u = resolve(&s.op, lambda, &ones, ResolventMethod::Direct);
            worst = worst.max((lambda * u.interior - &ones).amax());
        }
        for t in [0.1, 1.0, 10.0] {
            for scheme in [TimeScheme::BackwardEuler { dt: t / 100.0 }, TimeScheme::PostWidder { n: 64 }] {
                let u = evolve(&s.op, &EvolveRequest { u0: ones.clone(), t, scheme }).unwrap();
                worst = worst.max((u - &ones).amax());
            }
        }
    }
    (worst <= 1e-10, format!("max deviation from 1: {worst:.2e}"))
}

const C1: f64 = -0.290_988_353_434_663_2;
const C2: f64 = 0.790_988_353_434_663_2;

fn delta_return(n: usize) -> Scenario {
    let coeffs = CoefficientSet::constant(1, 1.0, &[0.0], 0.0);
    build(DomainSpec::intervals(&[(0.0, 1.0)]), n, &coeffs, &MeasureSpec::atom(&[0.5], 1.0))
}

fn convergence_order() -> Verdict {
    let errs: Vec<f64> = [16, 32, 64, 128]
        .iter()
        .map(|&n| {
            let s = delta_return(n);
            let xs = |k| s.grid.interior_point(k)[0];
            let f = DVector::from_fn(s.op.dim(), |k, _| xs(k));
            let u = resolve(&s.op, 1.0, &f, ResolventMethod::Direct);
            let exact = DVector::from_fn(s.op.dim(), |k, _| {
                let x = xs(k);
                x + C1 * x.exp() + C2 * (-x).exp()
            });
            let boundary = u.boundary.iter().map(|b| (b - 0.5).abs()).fold(0.0, f64::max);
            (u.interior - exact).amax().max(boundary)
        })
        .collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let errs: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    (min >= 1.9, format!("errors [{}], orders {orders:.3?}", errs.join(", ")))
}

fn exponential_convergence() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (label, mass) in [("sub-probability", 0.7), ("conservative", 1.0)] {
        let s = line_1d(64, mass);
        let spec = spectral_projection(&s.op, &eigen_spectrum(&s.op, None).unwrap()).unwrap();
        let p = spec.projection.clone().unwrap();
        let rate = if spec.rank_p > 0 { spec.gap } else { -spec.spectral_bound };
        let times: Vec<f64> = (0..8).map(|k| k as f64 * 1.5 / rate).collect();
        let u0 = DVector::from_fn(s.op.dim(), |k, _| (3.0 * s.grid.interior_point(k)[0]).cos() + 1.0);
        let fit = decay_fit(&s.op, &p, &u0, &times).unwrap();
        let rel = (fit.epsilon - rate).abs() / rate;
        let tail = &fit.distances[fit.distances.len() / 2..];
        let monotone = tail.windows(2).all(|w| w[1] < w[0]);
        ok &= rel < 0.1 && monotone && (spec.rank_p == 0) == (mass < 1.0);
        notes.push(format!("{label}: rank {} ε {:.4} vs {:.4} ({:.2}%), M {:.3}", spec.rank_p, fit.epsilon, rate, 100.0 * rel, fit.m));
    }
    (ok, notes.join("; "))
}

fn asymptotic_profile() -> Verdict {
    let s = line_1d(128, 1.0);
    let spec = eigen_spectrum(&s.op, None).unwrap();
    let h = invariant_density(&s.op, s.grid.cell_volume(), None).unwrap();
    let t = 20.0 / spec.gap;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let f = random_nonneg(&mut rng, s.op.dim()).map(|v| 4.0 * v - 1.0);
        let u = evolve(&s.op, &EvolveRequest { u0: f.clone(), t, scheme: TimeScheme::BackwardEuler { dt: t / 400.0 } })
            .unwrap();
        let mean = h.integrate(&f);
        worst = worst.max(u.map(|v| v - mean).amax());
    }
    (worst < 1e-4, format!("T = {t:.4}, max ‖T(T)f − ∫fh‖ = {worst:.2e}"))
}

fn two_components(n: usize) -> Scenario {
    let coeffs = CoefficientSet::constant(1, 1.0, &[0.5], 0.0);
    let spec = MeasureSpec {
        regions: vec![
            MeasureRegion {
                selector: Selector::Piece(0),
                law: MeasureLaw::Atoms(vec![Atom { point: vec![0.5], weight: 1.0 }]),
            },
            MeasureRegion {
                selector: Selector::Piece(1),
                // zero on piece 0, so paths from piece 1 stay there
                law: MeasureLaw::Density { density: parse_expr("max(x - 1.25, 0)").unwrap(), mass: Expr::Num(1.0) },
            },
        ],
    };
    build(DomainSpec::intervals(&[(0.0, 1.0), (1.5, 2.5)]), n, &coeffs, &spec)
}

fn finite_rank() -> Verdict {
    let s = two_components(32);
    let spec = spectral_projection(&s.op, &eigen_spectrum(&s.op, None).unwrap()).unwrap();
    let p = spec.projection.unwrap();
    let piece = s.grid.piece_of_interior();
    let mut off = 0.0f64;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            if piece[i] != piece[j] {
                off = off.max(p[(i, j)].abs());
            }
        }
    }
    (spec.rank_p == 2 && off < 1e-8, format!("rank P = {}, max off-block |P| = {off:.2e}", spec.rank_p))
}

fn domination() -> Verdict {
    let base = line_1d(64, 1.0);
    let d = base.op.dirichlet();
    let grid = &base.grid;
    let m = |spec: MeasureSpec| discretize_measures(&spec, &base.domain, grid).unwrap();
    let full = base.measure.clone();
    let pairs = [
        (MeasureMatrix::zero(grid), full.scaled(0.3)),
        (full.scaled(0.3), full.scaled(0.9)),
        (m(MeasureSpec::atom(&[0.4], 0.5)), m(MeasureSpec::uniform(MeasureLaw::Mixture(vec![
            (0.5, MeasureLaw::Atoms(vec![Atom { point: vec![0.4], weight: 1.0 }])),
            (0.5, MeasureLaw::Density { density: Expr::Num(1.0), mass: Expr::Num(1.0) }),
        ])))),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut ok = true;
    for (m1, m2) in &pairs {
        for lambda in [0.5, 5.0] {
            let f = random_nonneg(&mut rng, base.op.dim());
            match domination_check(d, m1, m2, lambda, &f, 1e-10) {
                Ok(r) => {
                    ok &= r.holds;
                    worst = worst.max(r.max_violation);
                }
                Err(_) => ok = false,
            }
        }
    }
    (ok, format!("3 nested pairs, max violation {worst:.2e}"))
}

fn mc_bridge(exec: &Rayon) -> Verdict {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/conservative_1d.json");
    let config = nbd::load(&path, &[]).unwrap();
    assert_eq!((config.mc.n_paths, config.mc.dt, config.mc.battery.len()), (100_000, 1e-4, 5));
    let b = config.build().unwrap();
    let process = ReturnProcess::new(&b.domain, &b.grid, &b.coeffs, &b.measure);
    let battery: Vec<BatteryItem> = b
        .config
        .mc
        .battery
        .iter()
        .map(|i| BatteryItem { x0: i.x0.clone(), t: i.t, f: parse_expr(&i.f).unwrap() })
        .collect();
    let cfg = b.config.mc.process();
    let report = mc_vs_pde(&process, &b.grid, &b.op, &cfg, &battery, b.config.mc.pde_rel_tol, exec).unwrap();
    let h = invariant_density(&b.op, b.grid.cell_volume(), None).unwrap();
    let occ = b.config.mc.occupation.as_ref().unwrap();
    let hist = occupation_histogram(&process, &cfg, &occ.x0, occ.t, exec).unwrap();
    let tv = hist.total_variation(&h.h, h.cell_volume);
    let zs: Vec<f64> = report.rows.iter().map(|r| r.z).collect();
    (report.max_abs_z <= 4.0 && tv < 0.05, format!("z = {zs:.2?}, TV = {tv:.4}"))
}

fn holomorphic_scan() -> Verdict {
    let s = line_1d(64, 1.0);
    let mut samples: Vec<Complex64> = [0.5, 1.0, 4.0, 20.0, 100.0].iter().map(|&r| Complex64::new(r, 0.0)).collect();
    for k in 0..15 {
        let re = 0.5 + 0.5 * k as f64;
        let im = -100.0 + 200.0 * k as f64 / 14.0;
        samples.push(Complex64::new(re, im));
    }
    let scan = holomorphic_bound_scan(&s.op, 0.5, &samples).unwrap();
    let real_max = scan.values.iter().filter(|v| v.0.im == 0.0).map(|v| v.1).fold(0.0, f64::max);
    (
        scan.max.is_finite() && real_max <= 1.0 + 1e-10,
        format!("{} samples, max {:.4}, real-axis max {:.12}", samples.len(), scan.max, real_max),
    )
}

fn main() -> ExitCode {
    let exec = Rayon::new(nbd::exec::threads_from_env().unwrap_or(None));
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("contraction and positivity", Box::new(contraction_positivity)),
        ("resolvent method equivalence", Box::new(method_equivalence)),
        ("conservation", Box::new(conservation)),
        ("convergence order", Box::new(convergence_order)),
        ("exponential convergence to P", Box::new(exponential_convergence)),
        ("asymptotic profile", Box::new(asymptotic_profile)),
        ("finite rank across components", Box::new(finite_rank)),
        ("domination", Box::new(domination)),
        ("MC/PDE bridge", Box::new(move || mc_bridge(&exec))),
        ("holomorphic bound scan", Box::new(holomorphic_scan)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = run();
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("{verdict} {:>2} {name} ({:.1}s): {detail}", i + 1, start.elapsed().as_secs_f64());
        failed += usize::from(!ok);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
