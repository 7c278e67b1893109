//! Run configuration: TOML (or JSON) documents describing a model, a command
//! and its settings. The grammar is documented in `configs/README.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use orlicz_core::model::{OrliczModel, SonTransform};
use orlicz_core::na::CovarianceMethod;
use orlicz_core::quadrature::QuadratureSpec;
use orlicz_core::sampler::SamplerChoice;
use orlicz_core::scalar::{LogConcaveScalar, YoungFunction, YoungPiece, YoungPieceKind};
use orlicz_core::testfn::{Direction, MonotoneTestFunction, TestForm};

use crate::error::ConfigError;

/// Version of the configuration grammar and of the report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CheckNa,
    CheckTheta,
    CheckHereditary,
    Localize,
    Sample,
    RatioLemmas,
    ReportAll,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CheckNa => "check-na",
            Command::CheckTheta => "check-theta",
            Command::CheckHereditary => "check-hereditary",
            Command::Localize => "localize",
            Command::Sample => "sample",
            Command::RatioLemmas => "ratio-lemmas",
            Command::ReportAll => "report-all",
        }
    }

    /// Commands whose output depends on random draws.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Command::ReportAll)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub command: Command,
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    pub na: Option<NaConfig>,
    pub theta: Option<ThetaConfig>,
    pub localize: Option<LocalizeConfig>,
    pub sample: Option<SampleConfig>,
    pub ratio_lemmas: Option<RatioLemmasConfig>,
    pub projection: Option<ProjectionConfig>,
    #[serde(default)]
    pub suite: Vec<SuiteEntry>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Young function of one coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum YoungConfig {
    /// `coeff·t^exponent`.
    Power { coeff: f64, exponent: f64, cutoff: Option<f64> },
    /// `slope·t`.
    Affine { slope: f64, cutoff: Option<f64> },
    /// `0` on `[0, c]`, `∞` beyond.
    Indicator { c: f64 },
    /// `∞` on `(0, ∞)`.
    Infinite,
    /// Consecutive pieces starting at increasing `start` points.
    Pieces { pieces: Vec<YoungPieceConfig>, cutoff: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YoungPieceConfig {
    pub start: f64,
    #[serde(flatten)]
    pub shape: YoungPieceShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YoungPieceShape {
    Power { coeff: f64, exponent: f64 },
    Affine { slope: f64, intercept: Option<f64> },
}

/// Log-concave scalar used for weights and caps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarConfig {
    Unit,
    Indicator { lo: f64, hi: f64 },
    /// `exp(slope·t + intercept)` on `[lo, hi]`.
    LogAffine { slope: f64, intercept: f64, lo: f64, hi: Option<f64> },
    /// `exp(quad·t² + lin·t + constant)` on `[lo, hi]`.
    LogQuadratic { quad: f64, lin: f64, constant: f64, lo: f64, hi: Option<f64> },
}

/// One Young spec for every coordinate, or one per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerCoordinate<T> {
    All(T),
    Each(Vec<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dimension: usize,
    pub young: PerCoordinate<YoungConfig>,
    pub weights: Option<PerCoordinate<ScalarConfig>>,
    pub cap: ScalarConfig,
    /// Son transforms applied in order after construction.
    #[serde(default)]
    pub lineage: Vec<TransformConfig>,
    /// Skip the convexity and log-concavity checks (negative controls).
    #[serde(default)]
    pub unchecked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformConfig {
    MultiplyWeight { index: usize, weight: ScalarConfig },
    HyperplaneRestrict { i: usize, j: usize, a: f64, b: f64 },
    OriginShift { point: Vec<f64> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_depth: Option<usize>,
    pub max_intervals: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionConfig {
    pub indices: Vec<usize>,
    #[serde(default = "increasing")]
    pub direction: DirectionConfig,
    #[serde(flatten)]
    pub form: FormConfig,
}

fn increasing() -> DirectionConfig {
    DirectionConfig::Increasing
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionConfig {
    Increasing,
    Decreasing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormConfig {
    Threshold { thresholds: Vec<f64> },
    ClippedLinear { weights: Vec<f64>, lo: f64, hi: f64 },
    MinOfCoordinates { cap: f64 },
    ProductOfRamps { ramps: Vec<(f64, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub f: TestFunctionConfig,
    pub g: TestFunctionConfig,
    /// Expected covariance, reported with its deviation when given.
    pub expected: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaConfig {
    #[serde(default)]
    pub method: CovarianceMethod,
    #[serde(default)]
    pub pairs: Vec<PairConfig>,
    /// Random increasing pairs drawn in addition to `pairs`.
    #[serde(default)]
    pub sweep_trials: usize,
    pub samples: Option<usize>,
    pub confidence: Option<f64>,
    pub threshold: Option<f64>,
    #[serde(default)]
    pub sampler: SamplerChoice,
    /// Tolerance for `expected` in quadrature mode.
    #[serde(default = "expected_tol")]
    pub expected_tol: f64,
}

fn expected_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    pub z1: f64,
    pub z2: f64,
    /// Weights `u` on the first `n − 1` coordinates; unit when absent.
    pub u: Option<Vec<ScalarConfig>>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_pairs() -> usize {
    orlicz_core::theta::PAIRS_PER_SPLITTING
}

fn default_depth() -> usize {
    4
}

fn default_trials() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampConfig {
    pub weights: [f64; 2],
    pub offset: f64,
    pub width: f64,
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeConfig {
    /// Slice pair of the model; omit together with `h` to draw a synthetic instance.
    pub z1: Option<f64>,
    pub z2: Option<f64>,
    pub u: Option<Vec<ScalarConfig>>,
    pub h: Option<RampConfig>,
    #[serde(default = "default_stop")]
    pub stop_width: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_stop() -> f64 {
    1e-3
}

fn default_max_steps() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub count: usize,
    #[serde(default)]
    pub sampler: SamplerChoice,
    /// Statistics reported with standard errors: means of these coordinates.
    #[serde(default)]
    pub means: Vec<usize>,
}

/// Marginal density grid dumped to `projection.csv` after the command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub keep: Vec<usize>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioLemmasConfig {
    #[serde(default = "default_random_inputs")]
    pub random: usize,
    #[serde(default = "yes")]
    pub hand_cases: bool,
}

fn default_random_inputs() -> usize {
    200
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Exit code 0.
    Pass,
    /// Exit code 1: the run completed and a check failed.
    Fail,
    /// Exit code 2: the config or the run was rejected.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    /// Path relative to the suite file.
    pub config: PathBuf,
    #[serde(default = "expect_pass")]
    pub expect: Expectation,
}

fn expect_pass() -> Expectation {
    Expectation::Pass
}

/// Parses a config; JSON when the name ends in `.json`, TOML otherwise.
pub fn parse(text: &str, name: &Path) -> Result<RunConfig, ConfigError> {
    let json = name.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg: RunConfig = if json {
        serde_json::from_str(text).map_err(|e| ConfigError::at(name, Some(e.line()), e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            ConfigError::at(name, line, e.message().to_string())
        })?
    };
    validate(&cfg, text, name)?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<(RunConfig, String), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::at(path, None, format!("cannot read: {e}")))?;
    let cfg = parse(&text, path)?;
    Ok((cfg, text))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key =` (TOML) or `"key":` (JSON) occurrence.
fn find_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.starts_with(&format!("{key} ")) || t.starts_with(&format!("{key}=")) || t.contains(&format!("\"{key}\""))
            || t == format!("[{key}]")
    }).map(|i| i + 1)
}

fn validate(cfg: &RunConfig, text: &str, name: &Path) -> Result<(), ConfigError> {
    let err = |key: &str, msg: String| Err(ConfigError::at(name, find_key(text, key), msg));
    if cfg.schema != SCHEMA_VERSION {
        return err("schema", format!("unsupported schema {} (this tool reads {SCHEMA_VERSION})", cfg.schema));
    }
    if cfg.command.is_stochastic() && cfg.seed.is_none() {
        return err("command", format!("`seed` is required for {}", cfg.command.name()));
    }
    let needs_model = !matches!(cfg.command, Command::ReportAll | Command::RatioLemmas);
    let synthetic = cfg.command == Command::Localize && cfg.localize.as_ref().is_some_and(|l| l.h.is_none());
    if needs_model && !synthetic && cfg.model.is_none() {
        return err("command", format!("{} needs a [model] section", cfg.command.name()));
    }
    if cfg.projection.is_some() && cfg.model.is_none() {
        return err("projection", "[projection] needs a [model] section".into());
    }
    if let Some(m) = &cfg.model {
        if m.dimension == 0 {
            return err("dimension", "dimension must be at least 1".into());
        }
        if let PerCoordinate::Each(v) = &m.young {
            if v.len() != m.dimension {
                return err("young", format!("{} Young specs for dimension {}", v.len(), m.dimension));
            }
        }
        if let Some(PerCoordinate::Each(v)) = &m.weights {
            if v.len() != m.dimension {
                return err("weights", format!("{} weights for dimension {}", v.len(), m.dimension));
            }
        }
    }
    let section = |present: bool, key: &str| {
        if present {
            Ok(())
        } else {
            Err(ConfigError::at(name, find_key(text, "command"), format!("{} needs a [{key}] section", cfg.command.name())))
        }
    };
    match cfg.command {
        Command::CheckNa => {
            section(cfg.na.is_some(), "na")?;
            let na = cfg.na.as_ref().expect("checked");
            if na.pairs.is_empty() && na.sweep_trials == 0 {
                return err("na", "[na] needs `pairs` or `sweep_trials > 0`".into());
            }
        }
        Command::CheckTheta | Command::CheckHereditary => section(cfg.theta.is_some(), "theta")?,
        Command::Localize => {
            section(cfg.localize.is_some(), "localize")?;
            let l = cfg.localize.as_ref().expect("checked");
            if l.h.is_some() && (l.z1.is_none() || l.z2.is_none()) {
                return err("h", "an explicit `h` needs `z1` and `z2`".into());
            }
            if !(l.stop_width > 0.0) {
                return err("stop_width", "stop_width must be positive".into());
            }
        }
        Command::Sample => section(cfg.sample.is_some(), "sample")?,
        Command::RatioLemmas => {}
        Command::ReportAll => {
            if cfg.suite.is_empty() {
                return err("command", "report-all needs a non-empty `suite`".into());
            }
        }
    }
    Ok(())
}

impl QuadratureConfig {
    /// Fields set in `other` replace those set here.
    pub fn merged(&self, other: &QuadratureConfig) -> QuadratureConfig {
        QuadratureConfig {
            rel_tol: other.rel_tol.or(self.rel_tol),
            abs_tol: other.abs_tol.or(self.abs_tol),
            max_depth: other.max_depth.or(self.max_depth),
            max_intervals: other.max_intervals.or(self.max_intervals),
        }
    }

    pub fn spec(&self) -> QuadratureSpec {
        let d = QuadratureSpec::default();
        QuadratureSpec {
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            max_depth: self.max_depth.unwrap_or(d.max_depth),
            max_intervals: self.max_intervals.unwrap_or(d.max_intervals),
            ..d
        }
    }
}

type Built<T> = Result<T, orlicz_core::Error>;

impl YoungConfig {
    /// `checked = false` keeps non-convex pieces (negative controls).
    pub fn build(&self, checked: bool) -> Built<YoungFunction> {
        let cut = |f: YoungFunction, c: &Option<f64>| match c {
            Some(c) => f.with_cutoff(*c),
            None => Ok(f),
        };
        match self {
            YoungConfig::Power { coeff, exponent, cutoff } => cut(YoungFunction::power(*coeff, *exponent)?, cutoff),
            YoungConfig::Affine { slope, cutoff } => cut(YoungFunction::linear(*slope)?, cutoff),
            YoungConfig::Indicator { c } => YoungFunction::box_indicator(*c),
            YoungConfig::Infinite => Ok(YoungFunction::identically_infinite()),
            YoungConfig::Pieces { pieces, cutoff } => {
                let p: Vec<YoungPiece> = pieces
                    .iter()
                    .map(|p| YoungPiece {
                        start: p.start,
                        kind: match p.shape {
                            YoungPieceShape::Power { coeff, exponent } => YoungPieceKind::Power { coeff, exponent },
                            YoungPieceShape::Affine { slope, intercept } => YoungPieceKind::Affine { slope, intercept },
                        },
                    })
                    .collect();
                if checked {
                    YoungFunction::from_pieces(&p, *cutoff)
                } else {
                    YoungFunction::from_pieces_unchecked(&p, *cutoff)
                }
            }
        }
    }
}

impl ScalarConfig {
    pub fn build(&self) -> Built<LogConcaveScalar> {
        let inf = f64::INFINITY;
        match self {
            ScalarConfig::Unit => Ok(LogConcaveScalar::unit()),
            ScalarConfig::Indicator { lo, hi } => LogConcaveScalar::indicator(*lo, *hi),
            ScalarConfig::LogAffine { slope, intercept, lo, hi } => {
                LogConcaveScalar::log_affine(*slope, *intercept, *lo, hi.unwrap_or(inf))
            }
            ScalarConfig::LogQuadratic { quad, lin, constant, lo, hi } => {
                LogConcaveScalar::log_quadratic(*quad, *lin, *constant, *lo, hi.unwrap_or(inf))
            }
        }
    }
}

fn expand<T: Clone>(p: &PerCoordinate<T>, n: usize) -> Vec<T> {
    match p {
        PerCoordinate::All(t) => vec![t.clone(); n],
        PerCoordinate::Each(v) => v.clone(),
    }
}

impl ModelConfig {
    pub fn build(&self) -> Built<OrliczModel> {
        let n = self.dimension;
        let young = expand(&self.young, n).iter().map(|y| y.build(!self.unchecked)).collect::<Built<Vec<_>>>()?;
        let weights = match &self.weights {
            Some(w) => expand(w, n).iter().map(ScalarConfig::build).collect::<Built<Vec<_>>>()?,
            None => vec![LogConcaveScalar::unit(); n],
        };
        let cap = self.cap.build()?;
        let mut model = if self.unchecked {
            OrliczModel::new_unchecked(young, weights, cap)?
        } else {
            OrliczModel::new(young, weights, cap)?
        };
        for t in &self.lineage {
            model = model.apply_son(&t.build()?)?;
        }
        Ok(model)
    }
}

impl TransformConfig {
    pub fn build(&self) -> Built<SonTransform> {
        Ok(match self {
            TransformConfig::MultiplyWeight { index, weight } => {
                SonTransform::MultiplyWeight { index: *index, weight: weight.build()? }
            }
            TransformConfig::HyperplaneRestrict { i, j, a, b } => {
                SonTransform::HyperplaneRestrict { i: *i, j: *j, a: *a, b: *b }
            }
            TransformConfig::OriginShift { point } => SonTransform::OriginShift { point: point.clone() },
        })
    }
}

impl TestFunctionConfig {
    pub fn build(&self) -> Built<MonotoneTestFunction> {
        let form = match &self.form {
            FormConfig::Threshold { thresholds } => TestForm::Threshold { thresholds: thresholds.clone() },
            FormConfig::ClippedLinear { weights, lo, hi } => {
                TestForm::ClippedLinear { weights: weights.clone(), lo: *lo, hi: *hi }
            }
            FormConfig::MinOfCoordinates { cap } => TestForm::MinOfCoordinates { cap: *cap },
            FormConfig::ProductOfRamps { ramps } => TestForm::ProductOfRamps { ramps: ramps.clone() },
        };
        let direction = match self.direction {
            DirectionConfig::Increasing => Direction::Increasing,
            DirectionConfig::Decreasing => Direction::Decreasing,
        };
        MonotoneTestFunction::new(self.indices.clone(), form, direction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = r#"
command = "check-na"
seed = 1

[model]
dimension = 2
young = { kind = "power", coeff = 1.0, exponent = 1.0 }
cap = { kind = "indicator", lo = 0.0, hi = 2.0 }

[na]
method = "quadrature"
pairs = [
  { f = { indices = [0], kind = "clipped_linear", weights = [1.0], lo = 0.0, hi = 2.0 },
    g = { indices = [1], kind = "clipped_linear", weights = [1.0], lo = 0.0, hi = 2.0 } },
]
"#;

    #[test]
    fn parses_triangle() {
        let cfg = parse(TRIANGLE, Path::new("t.toml")).unwrap();
        assert_eq!(cfg.command, Command::CheckNa);
        let m = cfg.model.unwrap().build().unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(cfg.na.unwrap().pairs.len(), 1);
    }

    #[test]
    fn missing_dimension_names_the_line() {
        let bad = TRIANGLE.replace("dimension = 2\n", "");
        let e = parse(&bad, Path::new("t.toml")).unwrap_err();
        assert!(e.message.contains("dimension"), "{e}");
        assert_eq!(e.line, Some(5));
    }

    #[test]
    fn seed_is_required() {
        let bad = TRIANGLE.replace("seed = 1\n", "");
        let e = parse(&bad, Path::new("t.toml")).unwrap_err();
        assert!(e.message.contains("seed"));
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn json_is_accepted() {
        let cfg = parse(TRIANGLE, Path::new("t.toml")).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = parse(&text, Path::new("t.json")).unwrap();
        assert_eq!(cfg, back);
    }
}
