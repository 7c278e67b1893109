//! Command dispatch, output files and the JSON report.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use orlicz_core::localization::{localize, synthetic_instance, LocalizeSettings, Ramp};
use orlicz_core::model::OrliczModel;
use orlicz_core::na::{covariance, na_sweep, CovarianceSettings};
use orlicz_core::quadrature::{c_constant, projection_density, QuadratureSpec};
use orlicz_core::report::VerificationReport;
use orlicz_core::sampler::sample;
use orlicz_core::scalar::LogConcaveScalar;
use orlicz_core::theta::{
    check_hereditary_theta, check_ratio_lemmas, hand_ratio_input, random_ratio_input, theta_sweep, SlicePair, ThetaSetup,
};

use crate::config::{self, Command, Expectation, QuadratureConfig, RunConfig, ScalarConfig, SCHEMA_VERSION};
use crate::error::{CliError, ConfigError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub command: String,
}

/// Contents of `report.json`. Holds no timestamps or host data, so equal
/// inputs give byte-identical files.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub passed: bool,
    pub reports: Vec<VerificationReport>,
    /// Command-specific values that are not checks (estimates, instances).
    pub context: Value,
    /// Files written next to the report, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_PASS
        } else {
            EXIT_FAIL
        }
    }
}

/// Options given on the command line on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quadrature: QuadratureConfig,
}

/// Loads, runs and writes `report.json`; returns the report.
pub fn run_file(path: &Path, overrides: &Overrides) -> Result<RunReport, CliError> {
    let (mut cfg, text) = config::load(path)?;
    if let Some(s) = overrides.seed {
        cfg.seed = Some(s);
    }
    cfg.quadrature = cfg.quadrature.merged(&overrides.quadrature);
    let out = overrides.output_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let base = path.parent().unwrap_or(Path::new("."));
    let sha = hex::encode(Sha256::digest(text.as_bytes()));
    run_config(&cfg, &sha, base, &out)
}

/// Maps a run outcome to the process exit code, printing a summary to stderr.
pub fn exit_code(outcome: &Result<RunReport, CliError>) -> i32 {
    match outcome {
        Ok(r) => {
            for rep in &r.reports {
                eprintln!("{}", summary_line(rep));
            }
            r.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn summary_line(r: &VerificationReport) -> String {
    let worst = r.worst_margin.map_or("n/a".to_string(), |m| format!("{m:.3e}"));
    format!(
        "{} {}: cases={} violations={} undefined={} worst_margin={} tol={:e}{}",
        if r.passed { "PASS" } else { "FAIL" },
        r.check,
        r.cases,
        r.violations,
        r.undefined,
        worst,
        r.tolerance,
        if r.flags.is_empty() { String::new() } else { format!(" flags=[{}]", r.flags.join("; ")) }
    )
}

pub fn run_config(cfg: &RunConfig, config_sha256: &str, base: &Path, out: &Path) -> Result<RunReport, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let seed = cfg.seed.unwrap_or(0);
    let spec = cfg.quadrature.spec();
    let mut outputs = Vec::new();
    let (reports, mut context) = match cfg.command {
        Command::CheckNa => check_na(cfg, seed, out, &mut outputs)?,
        Command::CheckTheta => {
            let t = cfg.theta.as_ref().expect("validated");
            let setup = ThetaSetup::Slice(slice_pair(model(cfg)?, t.z1, t.z2, &t.u)?);
            let r = theta_sweep(&setup, t.pairs, seed, &spec)?;
            write_cases(&out.join("theta_cases.csv"), r.details.as_array().into_iter().flatten().map(|c| (Vec::new(), c)))?;
            outputs.push("theta_cases.csv".into());
            (vec![r], Value::Null)
        }
        Command::CheckHereditary => {
            let t = cfg.theta.as_ref().expect("validated");
            let setup = ThetaSetup::Slice(slice_pair(model(cfg)?, t.z1, t.z2, &t.u)?);
            let r = check_hereditary_theta(&setup, t.depth, t.trials, seed, &spec)?;
            let rows = r.details.as_array().into_iter().flatten().flat_map(|t| {
                let pre = vec![t["trial"].to_string(), t["depth"].to_string()];
                t["cases"].as_array().into_iter().flatten().map(move |c| (pre.clone(), c))
            });
            write_cases_with(&out.join("hereditary_cases.csv"), &["trial", "depth"], rows)?;
            outputs.push("hereditary_cases.csv".into());
            (vec![r], Value::Null)
        }
        Command::Localize => run_localize(cfg, seed, &spec, out, &mut outputs)?,
        Command::Sample => {
            let s = cfg.sample.as_ref().expect("validated");
            let m = model(cfg)?;
            let batch = sample(&m, s.count, seed, s.sampler)?;
            batch.write_csv(&out.join("samples.csv"))?;
            batch.write_sidecar(&out.join("samples.json"))?;
            outputs.extend(["samples.csv".to_string(), "samples.json".to_string()]);
            let mut r = VerificationReport::new("sample_support", 0.0, "model density");
            for p in &batch.points {
                r.record(Some(if m.density(p) > 0.0 { 0.0 } else { -1.0 }));
            }
            if batch.len() != s.count {
                r.record_failure(format!("drew {} of {} points", batch.len(), s.count));
            }
            let means: Vec<Value> = s
                .means
                .iter()
                .map(|&i| {
                    let e = batch.mean(|x| x.get(i).copied().unwrap_or(f64::NAN));
                    json!({ "coordinate": i, "mean": e.mean, "std_error": e.std_error })
                })
                .collect();
            let ctx = json!({ "method": batch.method, "diagnostics": batch.diagnostics, "means": means });
            (vec![r], ctx)
        }
        Command::RatioLemmas => {
            let c = cfg.ratio_lemmas.clone().unwrap_or(config::RatioLemmasConfig { random: 200, hand_cases: true });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut inputs: Vec<_> = (0..c.random).map(|_| random_ratio_input(&mut rng)).collect();
            if c.hand_cases {
                inputs.push(hand_ratio_input());
            }
            let r = check_ratio_lemmas(&inputs, &spec)?;
            write_ratio_csv(&out.join("ratio_lemmas.csv"), &r.details)?;
            outputs.push("ratio_lemmas.csv".into());
            (vec![r], Value::Null)
        }
        Command::ReportAll => run_suite(cfg, base, out)?,
    };
    if let Some(p) = &cfg.projection {
        let summary = dump_projection(&model(cfg)?, p, &spec, &out.join("projection.csv"))?;
        outputs.push("projection.csv".into());
        if !context.is_object() {
            context = json!({});
        }
        context["projection"] = summary;
    }
    outputs.push("report.json".into());
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance {
            tool: "orlicz".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config_sha256.into(),
            seed: cfg.seed,
            command: cfg.command.name().into(),
        },
        passed: reports.iter().all(|r| r.passed),
        reports,
        context,
        outputs,
    };
    let path = out.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}

fn model(cfg: &RunConfig) -> Result<OrliczModel, CliError> {
    Ok(cfg.model.as_ref().expect("validated").build()?)
}

fn slice_pair(parent: OrliczModel, z1: f64, z2: f64, u: &Option<Vec<ScalarConfig>>) -> Result<SlicePair, CliError> {
    Ok(match u {
        None => SlicePair::new(parent, z1, z2)?,
        Some(u) => {
            let u = u.iter().map(ScalarConfig::build).collect::<Result<Vec<LogConcaveScalar>, _>>()?;
            SlicePair::with_u(parent, z1, z2, u)?
        }
    })
}

fn check_na(
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    outputs: &mut Vec<String>,
) -> Result<(Vec<VerificationReport>, Value), CliError> {
    let na = cfg.na.as_ref().expect("validated");
    let m = model(cfg)?;
    let d = CovarianceSettings::default();
    let settings = CovarianceSettings {
        method: na.method,
        quadrature: cfg.quadrature.spec(),
        samples: na.samples.unwrap_or(d.samples),
        seed,
        sampler: na.sampler,
        confidence: na.confidence.unwrap_or(d.confidence),
        threshold: na.threshold.unwrap_or(d.threshold),
    };
    let mut reports = Vec::new();
    if !na.pairs.is_empty() {
        let mut cov = VerificationReport::new("na_covariance", 0.0, "scaled covariance against the violation threshold");
        let mut exp = VerificationReport::new("na_expected", 0.0, "configured closed form");
        let path = out.join("na_pairs.csv");
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let row_err = |e: csv::Error| CliError::io(&path, e.into());
        w.write_record(["pair", "method", "covariance", "scaled", "std_error_or_tol", "expected", "pass"]).map_err(row_err)?;
        let mut results = Vec::new();
        for (k, p) in na.pairs.iter().enumerate() {
            let f = p.f.build()?;
            let g = p.g.build()?;
            let r = covariance(&m, &f, &g, &settings)?;
            let key = r.interval.map_or(r.scaled, |(lo, _)| lo / r.scale);
            cov.record(Some(settings.threshold - key));
            if let Some(e) = p.expected {
                // Monte Carlo estimates get their confidence interval on top of the tolerance.
                let slack = r.interval.map_or(0.0, |(lo, hi)| 0.5 * (hi - lo));
                exp.record(Some(na.expected_tol + slack - (r.value - e).abs()));
            }
            w.write_record([
                k.to_string(),
                format!("{:?}", r.method).to_lowercase(),
                format!("{:.12e}", r.value),
                format!("{:.12e}", r.scaled),
                format!("{:.6e}", r.std_error.or(r.tolerance).unwrap_or(0.0)),
                p.expected.map(|e| format!("{e:.12e}")).unwrap_or_default(),
                r.pass.to_string(),
            ])
            .map_err(row_err)?;
            results.push(json!({ "pair": k, "expected": p.expected, "result": r }));
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        outputs.push("na_pairs.csv".into());
        reports.push(cov.with_details(&results));
        if exp.cases > 0 {
            reports.push(exp);
        }
    }
    if na.sweep_trials > 0 {
        let sweep_settings = CovarianceSettings {
            quadrature: QuadratureSpec {
                rel_tol: cfg.quadrature.rel_tol.unwrap_or(1e-6),
                joint: true,
                ..settings.quadrature.clone()
            },
            ..settings.clone()
        };
        let s = na_sweep(&m, seed, na.sweep_trials, &sweep_settings)?;
        s.write_csv(&out.join("na_sweep.csv"))?;
        outputs.push("na_sweep.csv".into());
        let mut r = VerificationReport::new("na_sweep", 0.0, "scaled covariance against the violation threshold");
        for t in &s.trials {
            let key = t.result.interval.map_or(t.result.scaled, |(lo, _)| lo / t.result.scale);
            r.record(Some(settings.threshold - key));
        }
        reports.push(r.with_details(&json!({ "violations": s.violations, "worst_scaled": s.worst_scaled })));
    }
    Ok((reports, Value::Null))
}

fn run_localize(
    cfg: &RunConfig,
    seed: u64,
    spec: &QuadratureSpec,
    out: &Path,
    outputs: &mut Vec<String>,
) -> Result<(Vec<VerificationReport>, Value), CliError> {
    let l = cfg.localize.as_ref().expect("validated");
    let settings = LocalizeSettings { stop_width: l.stop_width, max_steps: l.max_steps, spec: spec.clone() };
    let (setup, h, ctx) = match &l.h {
        Some(h) => {
            let pair = slice_pair(model(cfg)?, l.z1.expect("validated"), l.z2.expect("validated"), &l.u)?;
            let ramp = Ramp { weights: h.weights, offset: h.offset, width: h.width, floor: h.floor };
            (ThetaSetup::Slice(pair), ramp, Value::Null)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = synthetic_instance(&mut rng, spec)?;
            let ctx = json!({ "synthetic_instance": { "h": inst.h, "violation_margin": inst.violation_margin,
                "z1": inst.pair.z1(), "z2": inst.pair.z2() } });
            (ThetaSetup::Slice(inst.pair), inst.h, ctx)
        }
    };
    let result = localize(&setup, &h, &settings)?;
    let path = out.join("steps.csv");
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    result.write_steps_csv(BufWriter::new(file))?;
    let path = out.join("steps.json");
    std::fs::write(&path, result.steps_json() + "\n").map_err(|e| CliError::io(&path, e))?;
    outputs.extend(["steps.csv".to_string(), "steps.json".to_string()]);
    Ok((vec![result.report()], ctx))
}

/// Runs every suite entry into its own subdirectory and checks each outcome
/// against the entry's expectation.
fn run_suite(cfg: &RunConfig, base: &Path, out: &Path) -> Result<(Vec<VerificationReport>, Value), CliError> {
    let mut suite = VerificationReport::new("suite", 0.0, "expected outcome per entry");
    let mut entries = Vec::new();
    let mut children = Vec::new();
    for (k, e) in cfg.suite.iter().enumerate() {
        let path = base.join(&e.config);
        let name = e.config.file_name().map_or_else(|| format!("entry{k}"), |s| s.to_string_lossy().into_owned());
        let stem = e.config.file_stem().map_or_else(|| name.clone(), |s| s.to_string_lossy().into_owned());
        let sub = out.join(format!("{k:02}-{stem}"));
        let outcome = run_file(&path, &Overrides { output_dir: Some(sub), ..Default::default() });
        let (status, code) = match &outcome {
            Ok(r) => (if r.passed { "pass" } else { "fail" }.to_string(), r.exit_code()),
            Err(err) => (format!("error: {}", relative_error(err, base)), EXIT_ERROR),
        };
        let ok = match e.expect {
            Expectation::Pass => code == EXIT_PASS,
            Expectation::Fail => code == EXIT_FAIL,
            Expectation::Error => code == EXIT_ERROR,
        };
        suite.record(Some(if ok { 0.0 } else { -1.0 }));
        if let Ok(r) = &outcome {
            children.extend(r.reports.iter().map(|c| {
                let mut c = c.clone();
                c.details = Value::Null;
                c.check = format!("{name}/{}", c.check);
                c
            }));
        }
        entries.push(json!({ "config": e.config, "expect": e.expect, "outcome": status, "exit_code": code, "as_expected": ok }));
    }
    let ctx = json!({ "entries": children });
    Ok((vec![suite.with_details(&entries)], ctx))
}

/// Error text with the suite directory stripped so reports do not depend on
/// where the suite lives.
fn relative_error(err: &CliError, base: &Path) -> String {
    match err {
        CliError::Config(ConfigError { path, line, message }) => {
            let p = path.strip_prefix(base).unwrap_or(path);
            ConfigError { path: p.to_path_buf(), line: *line, message: message.clone() }.to_string()
        }
        other => other.to_string(),
    }
}

/// Writes the marginal density grid (kept coordinates, then `density`) and
/// returns its summary with the bound `1/(c_{n,k}·λ_k(support))`.
fn dump_projection(
    m: &OrliczModel,
    p: &config::ProjectionConfig,
    spec: &QuadratureSpec,
    path: &Path,
) -> Result<Value, CliError> {
    let pd = projection_density(m, &p.keep, p.resolution, spec)?;
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| CliError::io(path, e.into());
    let mut header: Vec<String> = p.keep.iter().map(|k| format!("x{k}")).collect();
    header.push("density".into());
    w.write_record(&header).map_err(err)?;
    let sizes: Vec<usize> = pd.axes.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    for flat in 0..total {
        let mut idx = vec![0; sizes.len()];
        let mut r = flat;
        for d in (0..sizes.len()).rev() {
            idx[d] = r % sizes[d];
            r /= sizes[d];
        }
        let mut rec: Vec<String> = idx.iter().enumerate().map(|(d, &i)| format!("{:.12e}", pd.axes[d][i])).collect();
        rec.push(format!("{:.12e}", pd.value_at(&idx)));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    let c = c_constant(m.dim(), p.keep.len())?;
    Ok(json!({
        "keep": p.keep,
        "resolution": p.resolution,
        "max": pd.max(),
        "grid_mass": pd.grid_mass(),
        "support_measure": pd.support_measure,
        "max_bound": 1.0 / (c * pd.support_measure),
    }))
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Array(a) => a.iter().map(cell).collect::<Vec<_>>().join(" "),
        Value::Number(n) => match n.as_f64() {
            Some(x) if !n.is_u64() && !n.is_i64() => format!("{x:.12e}"),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

const CASE_COLUMNS: [&str; 8] = ["first", "second", "x", "y", "left", "right", "margin", "pass"];

fn write_cases<'a>(path: &Path, rows: impl Iterator<Item = (Vec<String>, &'a Value)>) -> Result<(), CliError> {
    write_cases_with(path, &[], rows)
}

/// One row per Θ case; block indices and points are space-separated.
fn write_cases_with<'a>(
    path: &Path,
    prefix: &[&str],
    rows: impl Iterator<Item = (Vec<String>, &'a Value)>,
) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| CliError::io(path, e.into());
    w.write_record(prefix.iter().chain(CASE_COLUMNS.iter())).map_err(err)?;
    for (pre, c) in rows {
        let mut rec = pre;
        rec.push(cell(&c["splitting"]["first"]));
        rec.push(cell(&c["splitting"]["second"]));
        for k in &CASE_COLUMNS[2..] {
            rec.push(cell(&c[*k]));
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_ratio_csv(path: &Path, details: &Value) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| CliError::io(path, e.into());
    w.write_record(["input", "weighted_lhs", "weighted_rhs", "weighted_margin", "intervals_lhs", "intervals_rhs", "intervals_margin"])
        .map_err(err)?;
    for (k, c) in details.as_array().into_iter().flatten().enumerate() {
        let mut rec = vec![k.to_string()];
        for side in ["weighted", "intervals"] {
            for f in ["lhs", "rhs", "margin"] {
                rec.push(cell(&c[side][f]));
            }
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
