mod common;

use common::*;
use nbd_core::*;

fn cfg(n_paths: usize, seed: u64) -> ProcessConfig {
    ProcessConfig { dt: 1e-3, n_paths, seed, chunk_size: 1000 }
}

#[test]
fn conservative_paths_never_die() {
    let s = drift_uniform(32, 1.0, 1.0);
    let p = ReturnProcess::new(&s.domain, &s.grid, &s.coeffs, &s.measure);
    let est = simulate_ensemble(&p, &cfg(4000, 1), &[0.3], 0.5, &Expr::Num(1.0), &Sequential).unwrap();
    assert_eq!(est.kill_count, 0);
    assert_eq!(est.mean, 1.0);
    assert_eq!(est.alive_fraction, 1.0);
    assert!(est.return_count > 0);
}

#[test]
fn same_seed_same_result() {
    let s = drift_uniform(32, -1.0, 0.8);
    let p = ReturnProcess::new(&s.domain, &s.grid, &s.coeffs, &s.measure);
    let f = parse_expr("x*x").unwrap();
    let a = simulate_ensemble(&p, &cfg(3500, 9), &[0.4], 0.3, &f, &Sequential).unwrap();
    let b = simulate_ensemble(&p, &cfg(3500, 9), &[0.4], 0.3, &f, &Sequential).unwrap();
    assert_eq!(a, b);
    let c = simulate_ensemble(&p, &cfg(3500, 10), &[0.4], 0.3, &f, &Sequential).unwrap();
    assert_ne!(a.mean, c.mean);
}

#[test]
fn chunks_are_independent_of_count() {
    let s = drift_uniform(16, 0.0, 0.5);
    let p = ReturnProcess::new(&s.domain, &s.grid, &s.coeffs, &s.measure);
    let f = Expr::Num(1.0);
    let c = cfg(3000, 5);
    let whole = p.simulate_chunk(&c, 1, &[0.5], 0.2, &f, false).unwrap();
    let again = p.simulate_chunk(&ProcessConfig { n_paths: 5000, ..c }, 1, &[0.5], 0.2, &f, false).unwrap();
    assert_eq!(whole.mean, again.mean);
}

#[test]
fn absorbing_survival_matches_pde() {
    let s = dirichlet_only(64);
    let p = ReturnProcess::new(&s.domain, &s.grid, &s.coeffs, &s.measure);
    let battery = vec![
        BatteryItem { x0: vec![0.5], t: 0.05, f: Expr::Num(1.0) },
        BatteryItem { x0: vec![0.3], t: 0.1, f: parse_expr("x").unwrap() },
    ];
    let report = mc_vs_pde(&p, &s.grid, &s.op, &cfg(20_000, 3), &battery, 1e-4, &Sequential).unwrap();
    assert!(report.max_abs_z <= 4.0, "{report:?}");
}

#[test]
fn return_process_matches_pde_in_2d() {
    let s = square(16, 0.7);
    let p = ReturnProcess::new(&s.domain, &s.grid, &s.coeffs, &s.measure);
    let battery = vec![BatteryItem { x0: vec![0.4, 0.6], t: 0.2, f: parse_expr("1 + x").unwrap() }];
    let report = mc_vs_pde(&p, &s.grid, &s.op, &cfg(10_000, 4), &battery, 1e-4, &Sequential).unwrap();
    assert!(report.max_abs_z <= 4.0, "{report:?}");
}

#[test]
fn stderr_halves_with_four_times_the_paths() {
    let s = drift_uniform(32, 0.0, 0.6);
    let p = ReturnProcess::new(&s.domain, &s.grid, &s.coeffs, &s.measure);
    let f = Expr::Num(1.0);
    let small = simulate_ensemble(&p, &cfg(4000, 2), &[0.5], 0.2, &f, &Sequential).unwrap();
    let large = simulate_ensemble(&p, &cfg(16_000, 2), &[0.5], 0.2, &f, &Sequential).unwrap();
    let ratio = small.stderr / large.stderr;
    assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
}

#[test]
fn occupation_approaches_invariant_density() {
    let s = delta_return(16, 1.0);
    let p = ReturnProcess::new(&s.domain, &s.grid, &s.coeffs, &s.measure);
    let h = invariant_density(&s.op, s.grid.cell_volume(), None).unwrap();
    let occ = occupation_histogram(&p, &cfg(20_000, 8), &[0.2], 2.0, &Sequential).unwrap();
    assert_eq!(occ.alive_fraction, 1.0);
    assert!(occ.total_variation(&h.h, h.cell_volume) < 0.05);
}

#[test]
fn rejects_bad_inputs() {
    let s = dirichlet_only(8);
    let p = ReturnProcess::new(&s.domain, &s.grid, &s.coeffs, &s.measure);
    let f = Expr::Num(1.0);
    assert!(matches!(
        simulate_ensemble(&p, &cfg(10, 1), &[1.5], 0.1, &f, &Sequential),
        Err(McError::StartOutsideDomain(_))
    ));
    let bad = ProcessConfig { dt: 0.0, ..cfg(10, 1) };
    assert!(matches!(simulate_ensemble(&p, &bad, &[0.5], 0.1, &f, &Sequential), Err(McError::InvalidConfig(_))));
}
