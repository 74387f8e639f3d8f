//! Scenario documents: JSON parsing, `--set` overrides and conversion into
//! the core types.

use std::path::Path;

use nbd_core::expr::ParseError;
use nbd_core::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad override `{0}` (expected key.path=value)")]
    Override(String),
    #[error("{field}: {source}")]
    Expression { field: String, source: ParseError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub name: String,
    pub domain: DomainConfig,
    pub coefficients: CoeffConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub mc: McConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub dim: usize,
    /// Grid resolution `n`, spacing `1/n`.
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<[f64; 2]>>,
    /// `[x0, x1, y0, y1]` per rectangle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rectangles: Option<Vec<[f64; 4]>>,
    /// Indicator expression in `x`, `y`; the domain is where it is positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffConfig {
    pub a: Vec<Vec<String>>,
    pub b: Vec<String>,
    #[serde(default = "zero_text")]
    pub c0: String,
    pub eta: f64,
    #[serde(default)]
    pub scheme: SchemeName,
}

fn zero_text() -> String {
    "0".into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Central,
    #[default]
    Upwind,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default)]
    pub regions: Vec<RegionConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    #[serde(default)]
    pub select: SelectConfig,
    pub law: LawConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectConfig {
    #[default]
    All,
    Piece(usize),
    /// Boundary nodes where the expression is positive.
    Where(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawConfig {
    Zero,
    Atoms(Vec<AtomConfig>),
    Density { density: String, mass: String },
    Mixture(Vec<MixtureConfig>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub at: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub weight: f64,
    pub law: LawConfig,
}

/// `λ` as a number or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaConfig {
    Real(f64),
    Complex([f64; 2]),
}

impl LambdaConfig {
    pub fn value(self) -> Complex64 {
        match self {
            LambdaConfig::Real(r) => Complex64::new(r, 0.0),
            LambdaConfig::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    BackwardEuler { dt: f64 },
    PostWidder { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Direct,
    Neumann,
    BoundaryReduced,
}

impl From<MethodName> for ResolventMethod {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Direct => ResolventMethod::Direct,
            MethodName::Neumann => ResolventMethod::Neumann,
            MethodName::BoundaryReduced => ResolventMethod::BoundaryReduced,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub lambda: LambdaConfig,
    pub rhs: String,
    pub method: MethodName,
    pub tol: f64,
    pub max_iter: usize,
    /// Initial datum for `evolve`.
    pub u0: String,
    /// Snapshot times for `evolve`.
    pub times: Vec<f64>,
    pub scheme: SchemeConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: LambdaConfig::Real(1.0),
            rhs: "1".into(),
            method: MethodName::Direct,
            tol: 1e-12,
            max_iter: 100_000,
            u0: "1".into(),
            times: vec![0.1, 1.0],
            scheme: SchemeConfig::BackwardEuler { dt: 1e-3 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    /// Defaults to `1e-8 · ‖A‖_∞`.
    pub tol_zero: Option<f64>,
    /// Initial datum for `decay`.
    pub u0: String,
    /// Sample times for `decay`; by default eight points spanning
    /// `1.5 / rate` apart, where `rate` is the gap or `|s|`.
    pub times: Option<Vec<f64>>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig { tol_zero: None, u0: "1 + x".into(), times: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    pub x0: Vec<f64>,
    pub t: f64,
    pub f: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationConfig {
    pub x0: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub chunk_size: usize,
    pub battery: Vec<BatteryConfig>,
    /// Relative tolerance of the step-halving PDE reference.
    pub pde_rel_tol: f64,
    pub occupation: Option<OccupationConfig>,
    /// Path count used by the statistical checks of `check`.
    pub check_paths: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            dt: 1e-4,
            n_paths: 100_000,
            seed: 1,
            chunk_size: 4096,
            battery: Vec::new(),
            pde_rel_tol: 1e-4,
            occupation: None,
            check_paths: 20_000,
        }
    }
}

impl McConfig {
    pub fn process(&self) -> ProcessConfig {
        ProcessConfig { dt: self.dt, n_paths: self.n_paths, seed: self.seed, chunk_size: self.chunk_size }
    }
}

/// Reads a config file and applies `key.path=value` overrides.
pub fn load(path: &Path, overrides: &[String]) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_with_overrides(&text, overrides)
}

pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Config, ConfigError> {
    let mut value: Value = serde_json::from_str(text)?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(serde_json::from_value(value)?)
}

/// Sets `key.path` (array elements by index) to `value`. The value is taken
/// verbatim when the current value is a string (expressions), and otherwise
/// parsed as JSON, falling back to a string. Missing object keys are created.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    if path.is_empty() {
        return Err(ConfigError::Override(spec.into()));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut cur = root;
    for key in path.split('.') {
        cur = match cur {
            Value::Array(items) => {
                let i: usize = key.parse().map_err(|_| ConfigError::Override(spec.into()))?;
                items.get_mut(i).ok_or_else(|| ConfigError::Override(spec.into()))?
            }
            Value::Object(map) => map.entry(key).or_insert(Value::Null),
            v @ Value::Null => {
                *v = Value::Object(Default::default());
                v.as_object_mut().unwrap().entry(key).or_insert(Value::Null)
            }
            _ => return Err(ConfigError::Override(spec.into())),
        };
    }
    *cur = match (&cur, parsed) {
        (Value::String(_), Value::String(s)) => Value::String(s),
        (Value::String(_), _) => Value::String(raw.into()),
        (_, v) => v,
    };
    Ok(())
}

pub fn expr(field: &str, text: &str) -> Result<Expr, ConfigError> {
    parse_expr(text).map_err(|source| ConfigError::Expression { field: field.into(), source })
}

/// A scenario with every numeric artifact built.
pub struct Built {
    pub config: Config,
    pub domain: DomainSpec,
    pub grid: Grid,
    pub coeffs: CoefficientSet,
    pub measure_spec: MeasureSpec,
    pub measure: MeasureMatrix,
    pub op: NonlocalOperator,
    pub validation: ValidationReport,
}

impl Config {
    pub fn domain_spec(&self) -> Result<DomainSpec, ConfigError> {
        let d = &self.domain;
        let spec = match (d.dim, &d.intervals, &d.rectangles, &d.mask) {
            (1, Some(iv), None, None) => {
                DomainSpec::intervals(&iv.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>())
            }
            (2, None, Some(r), None) => DomainSpec::rectangles(r),
            (2, None, None, Some(m)) => {
                let b = d.bbox.ok_or_else(|| ConfigError::Invalid("domain.mask needs domain.bbox".into()))?;
                DomainSpec::mask(expr("domain.mask", m)?, AxisBox::rect(b[0], b[1], b[2], b[3]))
            }
            _ => {
                return Err(ConfigError::Invalid(
                    "domain needs exactly one of intervals (dim 1), rectangles or mask (dim 2)".into(),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn coefficient_set(&self) -> Result<CoefficientSet, ConfigError> {
        let c = &self.coefficients;
        let a: Vec<Vec<&str>> = c.a.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
        let b: Vec<&str> = c.b.iter().map(String::as_str).collect();
        CoefficientSet::parse(&a, &b, &c.c0, c.eta).map_err(|e| match e {
            CoeffError::Parse { field, source } => {
                ConfigError::Expression { field: format!("coefficients.{field}"), source }
            }
            other => other.into(),
        })
    }

    pub fn scheme(&self) -> Scheme {
        match self.coefficients.scheme {
            SchemeName::Central => Scheme::Central,
            SchemeName::Upwind => Scheme::Upwinded,
        }
    }

    pub fn measure_spec(&self) -> Result<MeasureSpec, ConfigError> {
        let regions = self
            .measure
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let field = format!("measure.regions[{i}]");
                let selector = match &r.select {
                    SelectConfig::All => Selector::All,
                    SelectConfig::Piece(p) => Selector::Piece(*p),
                    SelectConfig::Where(e) => Selector::Predicate(expr(&format!("{field}.select"), e)?),
                };
                Ok(MeasureRegion { selector, law: law(&format!("{field}.law"), &r.law)? })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        Ok(MeasureSpec { regions })
    }

    /// Interior nodal values of an expression in `x`, `y`.
    pub fn sample(&self, grid: &Grid, field: &str, text: &str) -> Result<nalgebra::DVector<f64>, ConfigError> {
        let e = expr(field, text)?;
        let values = (0..grid.n_interior())
            .map(|k| e.eval_at(&grid.interior_point(k)))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|err| ConfigError::Invalid(format!("{field}: {err}")))?;
        Ok(nalgebra::DVector::from_vec(values))
    }

    pub fn build(self) -> Result<Built, ConfigError> {
        let n = self.domain.resolution;
        self.build_at(n)
    }

    /// Builds the scenario at resolution `n` instead of the configured one.
    pub fn build_at(self, n: usize) -> Result<Built, ConfigError> {
        let domain = self.domain_spec()?;
        let grid = build_grid(&domain, n)?;
        let coeffs = self.coefficient_set()?;
        let validation = validate_coefficients(&coeffs, &grid)?;
        let measure_spec = self.measure_spec()?;
        let measure = discretize_measures(&measure_spec, &domain, &grid)?;
        let d = assemble_dirichlet(&grid, &coeffs, self.scheme())?;
        let op = assemble_nonlocal(&d, &measure)?;
        Ok(Built { config: self, domain, grid, coeffs, measure_spec, measure, op, validation })
    }
}

fn law(field: &str, l: &LawConfig) -> Result<MeasureLaw, ConfigError> {
    Ok(match l {
        LawConfig::Zero => MeasureLaw::Zero,
        LawConfig::Atoms(atoms) => MeasureLaw::Atoms(
            atoms.iter().map(|a| Atom { point: a.at.clone(), weight: a.weight }).collect(),
        ),
        LawConfig::Density { density, mass } => MeasureLaw::Density {
            density: expr(&format!("{field}.density"), density)?,
            mass: expr(&format!("{field}.mass"), mass)?,
        },
        LawConfig::Mixture(parts) => MeasureLaw::Mixture(
            parts
                .iter()
                .enumerate()
                .map(|(i, p)| Ok((p.weight, law(&format!("{field}.mixture[{i}]"), &p.law)?)))
                .collect::<Result<Vec<_>, ConfigError>>()?,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "name": "t",
        "domain": {"dim": 1, "resolution": 8, "intervals": [[0, 1]]},
        "coefficients": {"a": [["1"]], "b": ["0"], "eta": 0.5},
        "measure": {"regions": [{"law": {"atoms": [{"at": [0.5], "weight": 1}]}}]}
    }"#;

    #[test]
    fn overrides_reach_nested_keys() {
        let c = parse_with_overrides(
            BASE,
            &["domain.resolution=16".into(), "solver.rhs=sin(x)".into(), "coefficients.b.0=2".into()],
        )
        .unwrap();
        assert_eq!(c.domain.resolution, 16);
        assert_eq!(c.solver.rhs, "sin(x)");
        assert_eq!(c.coefficients.b[0], "2");
    }

    #[test]
    fn override_without_equals_is_rejected() {
        assert!(matches!(parse_with_overrides(BASE, &["domain".into()]), Err(ConfigError::Override(_))));
    }

    #[test]
    fn bad_expression_reports_offset() {
        let c = parse_with_overrides(BASE, &["coefficients.b.0=x**".into()]).unwrap();
        let err = c.build().err().unwrap();
        let text = err.to_string();
        assert!(text.contains("coefficients.b") && text.contains("at byte 3"), "{text}");
    }

    #[test]
    fn builds_delta_return() {
        let b = parse_with_overrides(BASE, &[]).unwrap().build().unwrap();
        assert_eq!(b.grid.n_interior(), 7);
        assert!(b.measure.is_conservative());
    }
}
