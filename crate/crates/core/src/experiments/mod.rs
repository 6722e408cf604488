//! Named verification scenarios, their JSON configuration and reports.
//!
//! A configuration file is a JSON object:
//!
//! ```json
//! {
//!   "schema": 1,
//!   "scenario": "tau-scan",
//!   "q": 1.25,
//!   "quadrature": "default",
//!   "ladder": [0.1, 0.05, 0.025, 0.0125]
//! }
//! ```
//!
//! `quadrature` is a preset name or a full [`QuadratureSpec`] object.
//! Scenarios that act on a map accept `"map": {"family": ..., "parameters": {...}}`,
//! see [`MapSpec`]. Unknown keys are rejected.

mod scenarios;

use crate::error::{Error, Result};
use crate::functionals::ExponentConfig;
use crate::maps::{
    bump_map, circle_map, hold_map, identity_map, radial_map, DeformationMap, IdentityField, MapField,
    RadialProfile, ShearField, BUMP_MIN_N,
};
use crate::quadrature::{Integral, QuadratureSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

/// Exit status for a run whose checks all passed.
pub const EXIT_PASS: i32 = 0;
/// Exit status for a run with a failed check or unconverged quadrature.
pub const EXIT_FAIL: i32 = 1;
/// Exit status for unusable input.
pub const EXIT_CONFIG: i32 = 2;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_q() -> f64 {
    1.25
}

fn default_n() -> u32 {
    BUMP_MIN_N
}

fn default_stretch() -> f64 {
    ShearField::default().stretch
}

fn default_twist() -> f64 {
    ShearField::default().twist
}

/// Diffeomorphism composed with the radial hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HoldBase {
    Identity,
    Shear {
        #[serde(default = "default_stretch")]
        stretch: f64,
        #[serde(default = "default_twist")]
        twist: f64,
    },
}

/// A map from the built-in catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "parameters", rename_all = "kebab-case")]
pub enum MapSpec {
    Identity,
    /// `r(R) = max(lambda, R)`.
    Cavity { lambda: f64 },
    /// `r(R) = R^p`.
    Power { p: f64 },
    /// `f(rho x / |x|)`.
    Hold { rho: f64, base: HoldBase },
    /// The base map with `{|w| <= tau}` projected onto the sphere of radius `tau`.
    Circle { tau: f64, base: Box<MapSpec> },
    /// The bump-perturbation family with a zero at `tau e1`.
    Bump {
        tau: f64,
        #[serde(default = "default_n")]
        n: u32,
    },
}

impl MapSpec {
    pub fn build(&self) -> Result<DeformationMap> {
        match self {
            MapSpec::Identity => Ok(identity_map()),
            MapSpec::Cavity { lambda } => radial_map(RadialProfile::Cavity { lambda: *lambda }),
            MapSpec::Power { p } => radial_map(RadialProfile::Power { p: *p }),
            MapSpec::Hold { rho, base } => {
                let f: Arc<dyn MapField> = match base {
                    HoldBase::Identity => Arc::new(IdentityField),
                    HoldBase::Shear { stretch, twist } => Arc::new(ShearField::new(*stretch, *twist)?),
                };
                hold_map(f, *rho)
            }
            MapSpec::Circle { tau, base } => circle_map(&base.build()?, *tau),
            MapSpec::Bump { tau, n } => bump_map(*tau, *n),
        }
    }

    fn is_radial(&self) -> bool {
        matches!(self, MapSpec::Identity | MapSpec::Cavity { .. } | MapSpec::Power { .. })
    }
}

/// Preset name or explicit rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuadratureChoice {
    Preset(String),
    Custom(QuadratureSpec),
}

impl Default for QuadratureChoice {
    fn default() -> Self {
        QuadratureChoice::Preset("default".into())
    }
}

impl QuadratureChoice {
    pub fn resolve(&self) -> Result<QuadratureSpec> {
        let spec = match self {
            QuadratureChoice::Preset(name) => QuadratureSpec::preset(name)?,
            QuadratureChoice::Custom(spec) => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub scenario: String,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub quadrature: QuadratureChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    /// Scan values: `tau` for the tau and flux scans, `t` for the path scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<f64>>,
    /// Circle radius for the path and circle scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Random seed for the algebra scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of random instances for the algebra scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

impl ScenarioConfig {
    pub fn new(scenario: impl Into<String>) -> Self {
        ScenarioConfig {
            schema: SCHEMA_VERSION,
            scenario: scenario.into(),
            q: default_q(),
            quadrature: QuadratureChoice::default(),
            map: None,
            ladder: None,
            tau: None,
            seed: None,
            samples: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn with_quadrature(mut self, name: impl Into<String>) -> Self {
        self.quadrature = QuadratureChoice::Preset(name.into());
        self
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = q;
        self
    }

    pub fn with_map(mut self, map: MapSpec) -> Self {
        self.map = Some(map);
        self
    }

    pub fn with_ladder(mut self, ladder: Vec<f64>) -> Self {
        self.ladder = Some(ladder);
        self
    }

    /// Rejects anything the runner would otherwise fail on before computing.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        let info = scenario_info(&self.scenario)?;
        ExponentConfig::new(self.q).map_err(|e| Error::Config(e.to_string()))?;
        self.quadrature.resolve().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(map) = &self.map {
            if !info.accepts_map {
                return Err(Error::Config(format!("scenario {} does not take a map", self.scenario)));
            }
            if self.scenario == "radial-suite" && !map.is_radial() {
                return Err(Error::Config("radial-suite takes identity, cavity or power maps".into()));
            }
            map.build().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(ladder) = &self.ladder {
            if !info.accepts_ladder {
                return Err(Error::Config(format!("scenario {} does not take a ladder", self.scenario)));
            }
            if ladder.len() < 2 || ladder.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config("ladder needs at least two finite non-negative values".into()));
            }
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
            }
        }
        if self.samples == Some(0) {
            return Err(Error::Config("samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub accepts_map: bool,
    pub accepts_ladder: bool,
}

pub const SCENARIOS: &[ScenarioInfo] = &[
    ScenarioInfo {
        name: "identity-suite",
        summary: "adjugate polarisation and bracket identities on random matrices",
        accepts_map: false,
        accepts_ladder: false,
    },
    ScenarioInfo {
        name: "radial-suite",
        summary: "I and K of the identity and of radial maps, polyconvex lower bound",
        accepts_map: true,
        accepts_ladder: false,
    },
    ScenarioInfo {
        name: "circle-suite",
        summary: "G and K unchanged by projecting small values of w onto a sphere",
        accepts_map: true,
        accepts_ladder: false,
    },
    ScenarioInfo {
        name: "stationarity-suite",
        summary: "vanishing first variation of K, finite-difference oracle, integration by parts",
        accepts_map: true,
        accepts_ladder: false,
    },
    ScenarioInfo {
        name: "path-scan",
        summary: "K along the path from a held map to the identity",
        accepts_map: true,
        accepts_ladder: true,
    },
    ScenarioInfo {
        name: "innervar-suite",
        summary: "flux, volume and difference-quotient forms of the inner variation, signs of zero motion",
        accepts_map: true,
        accepts_ladder: false,
    },
    ScenarioInfo {
        name: "tau-scan",
        summary: "K of the bump family against the identity as tau shrinks",
        accepts_map: false,
        accepts_ladder: true,
    },
    ScenarioInfo {
        name: "divergence-probe",
        summary: "divergence-free G and detection of a non-integrable first variation",
        accepts_map: false,
        accepts_ladder: false,
    },
    ScenarioInfo {
        name: "mollifier-suite",
        summary: "shell-mass estimate and gradient convergence of mollified blends",
        accepts_map: true,
        accepts_ladder: false,
    },
    ScenarioInfo {
        name: "zero-motion-scan",
        summary: "flux derivative of the bump family against tau^(2-2q) f(tau)",
        accepts_map: false,
        accepts_ladder: true,
    },
];

pub fn scenario_info(name: &str) -> Result<&'static ScenarioInfo> {
    SCENARIOS.iter().find(|s| s.name == name).ok_or_else(|| {
        let known: Vec<&str> = SCENARIOS.iter().map(|s| s.name).collect();
        Error::Config(format!("unknown scenario {name:?}; known: {}", known.join(", ")))
    })
}

/// How a check compares its value with the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|value - reference| <= tolerance`.
    Abs,
    /// `|value - reference| <= tolerance |reference|`.
    Rel,
    /// `value <= reference + tolerance`.
    AtMost,
    /// `value >= reference - tolerance`.
    AtLeast,
    /// `value < reference`.
    Below,
    /// `value > reference`.
    Above,
}

impl Comparison {
    pub fn holds(self, value: f64, reference: f64, tolerance: f64) -> bool {
        match self {
            Comparison::Abs => (value - reference).abs() <= tolerance,
            Comparison::Rel => (value - reference).abs() <= tolerance * reference.abs(),
            Comparison::AtMost => value <= reference + tolerance,
            Comparison::AtLeast => value >= reference - tolerance,
            Comparison::Below => value < reference,
            Comparison::Above => value > reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub comparison: Comparison,
    /// Absent when the computation itself failed.
    pub value: Option<f64>,
    pub reference: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn evaluate(name: impl Into<String>, comparison: Comparison, value: f64, reference: f64, tolerance: f64) -> Self {
        let passed = value.is_finite() && comparison.holds(value, reference, tolerance);
        Check {
            name: name.into(),
            comparison,
            value: value.is_finite().then_some(value),
            reference,
            tolerance,
            passed,
            detail: (!value.is_finite()).then(|| format!("non-finite value {value}")),
        }
    }

    pub fn failed(name: impl Into<String>, comparison: Comparison, reference: f64, tolerance: f64, err: &Error) -> Self {
        Check {
            name: name.into(),
            comparison,
            value: None,
            reference,
            tolerance,
            passed: false,
            detail: Some(err.to_string()),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub scenario: String,
    pub version: String,
    pub inputs: ScenarioConfig,
    /// The resolved quadrature rule.
    pub quadrature: QuadratureSpec,
    pub checks: Vec<Check>,
    /// Derived numbers that are not checks in themselves.
    pub measurements: BTreeMap<String, f64>,
    pub quadrature_errors: BTreeMap<String, f64>,
    /// Wall-clock seconds per section; the only nondeterministic field.
    pub timings: BTreeMap<String, f64>,
    pub passed: bool,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_PASS
        } else {
            EXIT_FAIL
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per check: `scenario,check,value,reference,tolerance,status`.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        out.write_record(["scenario", "check", "value", "reference", "tolerance", "status"])
            .map_err(csv_err)?;
        for c in &self.checks {
            out.write_record([
                self.scenario.clone(),
                c.name.clone(),
                c.value.map(|v| format!("{v:e}")).unwrap_or_default(),
                format!("{:e}", c.reference),
                format!("{:e}", c.tolerance),
                if c.passed { "pass" } else { "fail" }.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = out.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

/// `<dir>/<scenario>-<unix seconds>.<ext>`.
pub fn default_report_path(dir: &Path, scenario: &str, format: ReportFormat) -> PathBuf {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    dir.join(format!("{scenario}-{secs}.{}", format.extension()))
}

/// Writes the report, creating parent directories as needed.
pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv()?,
    };
    let io = |source| Error::Io { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

/// Accumulates checks and measurements while a scenario runs.
pub(crate) struct Run {
    pub cfg: ExponentConfig,
    pub spec: QuadratureSpec,
    pub checks: Vec<Check>,
    pub measurements: BTreeMap<String, f64>,
    pub quadrature_errors: BTreeMap<String, f64>,
    pub timings: BTreeMap<String, f64>,
}

impl Run {
    /// Records a comparison, or a failed check when `value` is an error.
    pub fn check(&mut self, name: &str, comparison: Comparison, value: Result<f64>, reference: f64, tolerance: f64) -> bool {
        let c = match value {
            Ok(v) => Check::evaluate(name, comparison, v, reference, tolerance),
            Err(e) => Check::failed(name, comparison, reference, tolerance, &e),
        };
        let passed = c.passed;
        self.checks.push(c);
        passed
    }

    /// Records a check that passes when `flag` is true.
    pub fn flag(&mut self, name: &str, flag: Result<bool>) -> bool {
        self.check(name, Comparison::Abs, flag.map(|b| if b { 1.0 } else { 0.0 }), 1.0, 0.0)
    }

    pub fn measure(&mut self, name: &str, value: f64) {
        if value.is_finite() {
            self.measurements.insert(name.into(), value);
        }
    }

    /// Keeps the value and logs its error estimate under `name`.
    pub fn integral(&mut self, name: &str, r: Result<Integral>) -> Result<f64> {
        r.map(|i| {
            self.quadrature_errors.insert(name.into(), i.error);
            i.value
        })
    }

    pub fn timed<T>(&mut self, section: &str, f: impl FnOnce(&mut Run) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        *self.timings.entry(section.into()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }
}

/// Runs a validated configuration.
///
/// Numerical failures inside a scenario become failed checks; only unusable
/// configurations return `Err`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    config.validate()?;
    let spec = config.quadrature.resolve()?;
    let mut run = Run {
        cfg: ExponentConfig::new(config.q)?,
        spec: spec.clone(),
        checks: Vec::new(),
        measurements: BTreeMap::new(),
        quadrature_errors: BTreeMap::new(),
        timings: BTreeMap::new(),
    };
    let start = Instant::now();
    scenarios::dispatch(config, &mut run)?;
    run.timings.insert("total".into(), start.elapsed().as_secs_f64());
    let passed = !run.checks.is_empty() && run.checks.iter().all(|c| c.passed);
    Ok(RunReport {
        schema: SCHEMA_VERSION,
        scenario: config.scenario.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: config.clone(),
        quadrature: spec,
        checks: run.checks,
        measurements: run.measurements,
        quadrature_errors: run.quadrature_errors,
        timings: run.timings,
        passed,
    })
}
