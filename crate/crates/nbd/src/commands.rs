//! Subcommand runners. Each writes `<name>.<subcommand>.csv` (plus extra
//! tables for `spectrum` and `mc-compare`) and `<name>.manifest.json`.
//!
//! CSV field orders:
//!
//! | subcommand   | columns |
//! |--------------|---------|
//! | `solve`      | `node_x[,node_y],kind,re,im` |
//! | `evolve`     | `t,node_x[,node_y],u` |
//! | `spectrum`   | `index,re,im`; `.density.csv`: `node_x[,node_y],h`; `.projection.csv`: `row,col,value` |
//! | `decay`      | `t,distance,envelope` |
//! | `mc-compare` | `index,x0[,y0],t,f,mc_mean,mc_stderr,pde,z,alive_fraction,kills,returns`; `.occupation.csv`: `node_x[,node_y],fraction,h` |
//! | `check`      | `name,status,value,threshold,detail` |

use std::path::Path;

use nbd_core::*;
use serde_json::{json, Value};

use crate::check::{run_checks, Status};
use crate::config::{Built, Config, ConfigError, SchemeConfig};
use crate::exec::Rayon;
use crate::output::{num, Manifest, Outputs, Table};

/// Largest admissible `|z|` in `mc-compare`.
pub const Z_LIMIT: f64 = 4.0;
/// Largest admissible occupation total variation in `mc-compare`.
pub const TV_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Solve,
    Evolve,
    Spectrum,
    Decay,
    McCompare,
    Check,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Solve => "solve",
            Subcommand::Evolve => "evolve",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Decay => "decay",
            Subcommand::McCompare => "mc-compare",
            Subcommand::Check => "check",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error("invariant failure: {0}")]
    Invariant(String),
}

impl RunError {
    /// 1 for usage and configuration problems, 2 for numerical or invariant failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            _ => 2,
        }
    }
}

pub struct RunOutcome {
    pub manifest: Manifest,
    pub results: Value,
}

/// Builds the scenario, runs the subcommand and writes its outputs.
pub fn run(cmd: Subcommand, config: Config, out_dir: &Path, exec: &Rayon) -> Result<RunOutcome, RunError> {
    let started = chrono::Utc::now().to_rfc3339();
    let parameters = serde_json::to_value(&config).expect("config serializes");
    let b = config.build()?;
    let name = b.config.name.clone();
    let mut out = Outputs::new(out_dir)?;
    let body = |suffix: &str| format!("{name}.{}{suffix}.csv", cmd.name());
    let (results, failure) = match cmd {
        Subcommand::Solve => (solve(&b, &mut out, &body(""))?, None),
        Subcommand::Evolve => (evolve_cmd(&b, &mut out, &body(""))?, None),
        Subcommand::Spectrum => (spectrum(&b, &mut out, &body(""), &body(".density"), &body(".projection"))?, None),
        Subcommand::Decay => (decay(&b, &mut out, &body(""))?, None),
        Subcommand::McCompare => mc_compare(&b, &mut out, &body(""), &body(".occupation"), exec)?,
        Subcommand::Check => check(&b, &mut out, &body(""), exec)?,
    };
    let manifest = Manifest {
        scenario: name.clone(),
        subcommand: cmd.name().into(),
        tool_version: env!("CARGO_PKG_VERSION"),
        resolution: b.grid.resolution(),
        seed: b.config.mc.seed,
        threads: exec.threads(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        parameters,
        results: results.clone(),
        outputs: out.files.clone(),
    };
    out.write_manifest(&name, &manifest)?;
    match failure {
        Some(msg) => Err(RunError::Invariant(msg)),
        None => Ok(RunOutcome { manifest, results }),
    }
}

fn coord_header(dim: usize, x: &str, y: &str) -> Vec<String> {
    if dim == 2 {
        vec![x.into(), y.into()]
    } else {
        vec![x.into()]
    }
}

fn coords(grid: &Grid, g: usize) -> Vec<String> {
    let c = grid.coords(g);
    c[..grid.dim()].iter().map(|&v| num(v)).collect()
}

fn header(parts: Vec<String>) -> Table {
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    Table::new(&refs)
}

fn solve(b: &Built, out: &mut Outputs, file: &str) -> Result<Value, RunError> {
    let s = &b.config.solver;
    let lambda = s.lambda.value();
    let f = b.config.sample(&b.grid, "solver.rhs", &s.rhs)?;
    let u = if lambda.im == 0.0 {
        let mut req = ResolventRequest::new(lambda.re, f, s.method.into());
        req.tol = s.tol;
        req.max_iter = s.max_iter;
        let u = resolvent(&b.op, &req)?;
        GridVector { interior: promote(&u.interior), boundary: promote(&u.boundary) }
    } else {
        let mut req = ResolventRequest::new(lambda, promote::<Complex64>(&f), s.method.into());
        req.tol = s.tol;
        req.max_iter = s.max_iter;
        resolvent(&b.op, &req)?
    };
    let dim = b.grid.dim();
    let mut head = coord_header(dim, "node_x", "node_y");
    head.extend(["kind".into(), "re".into(), "im".into()]);
    let mut t = header(head);
    for g in 0..b.grid.node_count() {
        let (kind, v) = match b.grid.class(g) {
            NodeClass::Interior => ("interior", u.interior[b.grid.interior_index(g).unwrap()]),
            NodeClass::Boundary => ("boundary", u.boundary[b.grid.boundary_index(g).unwrap()]),
            NodeClass::Exterior => continue,
        };
        let mut row = coords(&b.grid, g);
        row.extend([kind.to_string(), num(v.re), num(v.im)]);
        t.row(row);
    }
    out.write(file, &t.into_bytes())?;
    Ok(json!({ "lambda": [lambda.re, lambda.im], "sup_norm": u.sup_norm() }))
}

fn scheme(c: SchemeConfig) -> TimeScheme {
    match c {
        SchemeConfig::BackwardEuler { dt } => TimeScheme::BackwardEuler { dt },
        SchemeConfig::PostWidder { n } => TimeScheme::PostWidder { n },
    }
}

fn evolve_cmd(b: &Built, out: &mut Outputs, file: &str) -> Result<Value, RunError> {
    let s = &b.config.solver;
    let u0 = b.config.sample(&b.grid, "solver.u0", &s.u0)?;
    let mut head = vec!["t".to_string()];
    head.extend(coord_header(b.grid.dim(), "node_x", "node_y"));
    head.push("u".into());
    let mut t = header(head);
    let mut norms = Vec::new();
    for &time in &s.times {
        let u = evolve(&b.op, &EvolveRequest { u0: u0.clone(), t: time, scheme: scheme(s.scheme) })?;
        for (k, &g) in b.grid.interior_nodes().iter().enumerate() {
            let mut row = vec![num(time)];
            row.extend(coords(&b.grid, g));
            row.push(num(u[k]));
            t.row(row);
        }
        norms.push(json!({ "t": time, "sup_norm": u.amax() }));
    }
    out.write(file, &t.into_bytes())?;
    Ok(json!({ "snapshots": norms }))
}

fn spectral_data(b: &Built) -> Result<(SpectralResult, Option<InvariantDensity>), RunError> {
    let tol = b.config.spectral.tol_zero;
    let spec = spectral_projection(&b.op, &eigen_spectrum(&b.op, tol)?)?;
    let density = if spec.zero_modes == 1 {
        Some(invariant_density(&b.op, b.grid.cell_volume(), tol)?)
    } else {
        None
    };
    Ok((spec, density))
}

fn spectrum(b: &Built, out: &mut Outputs, file: &str, density_file: &str, proj_file: &str) -> Result<Value, RunError> {
    let (spec, density) = spectral_data(b)?;
    let mut t = Table::new(&["index", "re", "im"]);
    for (i, l) in spec.eigenvalues.iter().enumerate() {
        t.row([i.to_string(), num(l.re), num(l.im)]);
    }
    out.write(file, &t.into_bytes())?;
    if let Some(h) = &density {
        let mut head = coord_header(b.grid.dim(), "node_x", "node_y");
        head.push("h".into());
        let mut t = header(head);
        for (k, &g) in b.grid.interior_nodes().iter().enumerate() {
            let mut row = coords(&b.grid, g);
            row.push(num(h.h[k]));
            t.row(row);
        }
        out.write(density_file, &t.into_bytes())?;
    }
    let p = spec.projection.as_ref().expect("projection filled");
    let mut t = Table::new(&["row", "col", "value"]);
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            t.row([i.to_string(), j.to_string(), num(p[(i, j)])]);
        }
    }
    out.write(proj_file, &t.into_bytes())?;
    Ok(json!({
        "spectral_bound": spec.spectral_bound,
        "gap": finite(spec.gap),
        "zero_modes": spec.zero_modes,
        "rank_p": spec.rank_p,
        "tol_zero": spec.tol_zero,
        "density_clipped": density.as_ref().map(|d| d.clipped),
    }))
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Decay rate predicted by the spectrum: the gap when `P ≠ 0`, else `−s`.
pub fn predicted_rate(spec: &SpectralResult) -> f64 {
    if spec.rank_p > 0 {
        spec.gap
    } else {
        -spec.spectral_bound
    }
}

fn decay(b: &Built, out: &mut Outputs, file: &str) -> Result<Value, RunError> {
    let (spec, _) = spectral_data(b)?;
    let rate = predicted_rate(&spec);
    let times = match &b.config.spectral.times {
        Some(t) => t.clone(),
        None => (0..8).map(|k| k as f64 * 1.5 / rate).collect(),
    };
    let u0 = b.config.sample(&b.grid, "spectral.u0", &b.config.spectral.u0)?;
    let p = spec.projection.as_ref().expect("projection filled");
    let fit = decay_fit(&b.op, p, &u0, &times)?;
    let d0 = (&u0 - p * &u0).amax();
    let mut t = Table::new(&["t", "distance", "envelope"]);
    for (&time, &d) in fit.times.iter().zip(&fit.distances) {
        t.row([num(time), num(d), num(fit.m * (-fit.epsilon * time).exp() * d0)]);
    }
    out.write(file, &t.into_bytes())?;
    Ok(json!({
        "m": fit.m,
        "epsilon": fit.epsilon,
        "residual": fit.residual,
        "underflow": fit.underflow,
        "predicted_rate": finite(rate),
        "relative_error": finite((fit.epsilon - rate).abs() / rate),
    }))
}

fn battery(b: &Built) -> Result<Vec<BatteryItem>, ConfigError> {
    b.config
        .mc
        .battery
        .iter()
        .enumerate()
        .map(|(i, item)| {
            Ok(BatteryItem {
                x0: item.x0.clone(),
                t: item.t,
                f: crate::config::expr(&format!("mc.battery[{i}].f"), &item.f)?,
            })
        })
        .collect()
}

type Checked = (Value, Option<String>);

fn mc_compare(b: &Built, out: &mut Outputs, file: &str, occ_file: &str, exec: &Rayon) -> Result<Checked, RunError> {
    let items = battery(b)?;
    if items.is_empty() {
        return Err(ConfigError::Invalid("mc.battery is empty".into()).into());
    }
    let process = ReturnProcess::new(&b.domain, &b.grid, &b.coeffs, &b.measure);
    let cfg = b.config.mc.process();
    let report = mc_vs_pde(&process, &b.grid, &b.op, &cfg, &items, b.config.mc.pde_rel_tol, exec)?;
    let mut head = vec!["index".to_string()];
    head.extend(coord_header(b.grid.dim(), "x0", "y0"));
    head.extend(
        ["t", "f", "mc_mean", "mc_stderr", "pde", "z", "alive_fraction", "kills", "returns"].map(String::from),
    );
    let mut t = header(head);
    for (i, r) in report.rows.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(r.item.x0.iter().map(|&v| num(v)));
        row.extend([
            num(r.item.t),
            b.config.mc.battery[i].f.clone(),
            num(r.mc.mean),
            num(r.mc.stderr),
            num(r.pde),
            num(r.z),
            num(r.mc.alive_fraction),
            r.mc.kill_count.to_string(),
            r.mc.return_count.to_string(),
        ]);
        t.row(row);
    }
    out.write(file, &t.into_bytes())?;

    let mut failure = (report.max_abs_z > Z_LIMIT)
        .then(|| format!("mc.z_score: max |z| = {:.3} exceeds {Z_LIMIT}", report.max_abs_z));
    let mut tv = Value::Null;
    if let Some(o) = &b.config.mc.occupation {
        let h = invariant_density(&b.op, b.grid.cell_volume(), b.config.spectral.tol_zero)?;
        let occ = occupation_histogram(&process, &cfg, &o.x0, o.t, exec)?;
        let dist = occ.total_variation(&h.h, h.cell_volume);
        let mut head = coord_header(b.grid.dim(), "node_x", "node_y");
        head.extend(["fraction".into(), "h".into()]);
        let mut t = header(head);
        for (k, &g) in b.grid.interior_nodes().iter().enumerate() {
            let mut row = coords(&b.grid, g);
            row.extend([num(occ.fractions[k]), num(h.h[k])]);
            t.row(row);
        }
        out.write(occ_file, &t.into_bytes())?;
        if dist >= TV_LIMIT && failure.is_none() {
            failure = Some(format!("mc.occupation: total variation {dist:.4} not below {TV_LIMIT}"));
        }
        tv = json!(dist);
    }
    Ok((json!({ "max_abs_z": report.max_abs_z, "occupation_total_variation": tv }), failure))
}

fn check(b: &Built, out: &mut Outputs, file: &str, exec: &Rayon) -> Result<Checked, RunError> {
    let results = run_checks(b, exec);
    let mut t = Table::new(&["name", "status", "value", "threshold", "detail"]);
    for r in &results {
        t.row([r.name.to_string(), r.status.as_str().into(), num(r.value), num(r.threshold), r.detail.clone()]);
    }
    out.write(file, &t.into_bytes())?;
    let first_fail = results.iter().find(|r| r.status == Status::Fail);
    let count = |s: Status| results.iter().filter(|r| r.status == s).count();
    let summary = json!({
        "passed": count(Status::Pass),
        "failed": count(Status::Fail),
        "skipped": count(Status::Skip),
        "first_failure": first_fail.map(|r| r.name),
    });
    Ok((summary, first_fail.map(|r| format!("{}: {} (value {:e}, threshold {:e})", r.name, r.detail, r.value, r.threshold))))
}
