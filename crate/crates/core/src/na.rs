//! Negative association checks: covariances of monotone test functions of
//! disjoint coordinate blocks, randomized sweeps, and the slice-ratio and
//! block-ratio inequalities for decreasing test functions.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::OrliczModel;
use crate::quadrature::{ratio, Problem, QuadratureSpec, MAX_DIM};
use crate::sampler::{sample, SampleBatch, SamplerChoice};
use crate::scalar::LogConcaveScalar;
use crate::testfn::{Direction, MonotoneTestFunction, PointFunction};

/// Scaled covariances above this count as violations.
pub const VIOLATION_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMethod {
    /// Quadrature up to the quadrature dimension limit, Monte Carlo above.
    #[default]
    Auto,
    Quadrature,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedMethod {
    Quadrature,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceSettings {
    pub method: CovarianceMethod,
    pub quadrature: QuadratureSpec,
    pub samples: usize,
    pub seed: u64,
    pub sampler: SamplerChoice,
    /// Two-sided confidence level of the Monte Carlo interval.
    pub confidence: f64,
    /// Violation threshold, multiplied by the product of the test-function ranges.
    pub threshold: f64,
}

impl Default for CovarianceSettings {
    fn default() -> Self {
        CovarianceSettings {
            method: CovarianceMethod::Auto,
            quadrature: QuadratureSpec::default(),
            samples: 100_000,
            seed: 0,
            sampler: SamplerChoice::Auto,
            confidence: 0.99,
            threshold: VIOLATION_THRESHOLD,
        }
    }
}

impl CovarianceSettings {
    /// Quadrature at relative accuracy 1e−6 with the error of every channel
    /// measured against the mass-sized channels; accurate to well below the
    /// violation threshold and several times cheaper than the default.
    pub fn sweep() -> Self {
        let quadrature = QuadratureSpec { rel_tol: 1e-6, joint: true, ..QuadratureSpec::default() };
        CovarianceSettings { quadrature, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceResult {
    pub value: f64,
    pub method: ResolvedMethod,
    /// Monte Carlo standard error.
    pub std_error: Option<f64>,
    /// Propagated quadrature error bound.
    pub tolerance: Option<f64>,
    /// Monte Carlo confidence interval.
    pub interval: Option<(f64, f64)>,
    pub confidence: Option<f64>,
    /// Product of the test-function ranges.
    pub scale: f64,
    /// `value / scale`.
    pub scaled: f64,
    /// Quadrature: `scaled ≤ threshold`. Monte Carlo: the interval's lower
    /// end is not above `threshold·scale`.
    pub pass: bool,
}

fn check_pair(model: &OrliczModel, f: &MonotoneTestFunction, g: &MonotoneTestFunction) -> Result<()> {
    let n = model.dim();
    for i in f.indices().iter().chain(g.indices()) {
        if *i >= n {
            return Err(Error::Domain(format!("test function index {i} out of range for dimension {n}")));
        }
    }
    if let Some(i) = f.indices().iter().find(|i| g.indices().contains(i)) {
        return Err(Error::Precondition(format!("test functions share coordinate {i}; index sets must be disjoint")));
    }
    Ok(())
}

fn range_width(f: &dyn PointFunction) -> f64 {
    let (a, b) = f.range();
    b - a
}

/// `Cov(f(X), g(X))` under the normalized model measure.
pub fn covariance(
    model: &OrliczModel,
    f: &MonotoneTestFunction,
    g: &MonotoneTestFunction,
    settings: &CovarianceSettings,
) -> Result<CovarianceResult> {
    check_pair(model, f, g)?;
    let quadrature = match settings.method {
        CovarianceMethod::Quadrature => true,
        CovarianceMethod::MonteCarlo => false,
        CovarianceMethod::Auto => model.dim() <= MAX_DIM,
    };
    if quadrature {
        quadrature_covariance(model, f, g, settings)
    } else {
        let batch = draw(model, settings)?;
        Ok(batch_covariance(&batch, f, g, settings))
    }
}

fn draw(model: &OrliczModel, settings: &CovarianceSettings) -> Result<SampleBatch> {
    if model.is_degenerate() || model.support_box().is_none() {
        return Err(Error::UndefinedMeasure("the model measure has zero mass".into()));
    }
    sample(model, settings.samples, settings.seed, settings.sampler)
}

fn quadrature_covariance(
    model: &OrliczModel,
    f: &MonotoneTestFunction,
    g: &MonotoneTestFunction,
    settings: &CovarianceSettings,
) -> Result<CovarianceResult> {
    let mut p = Problem::new(model);
    let i = p.add_factor(f);
    let j = p.add_factor(g);
    p.add_channel(0, vec![]);
    p.add_channel(0, vec![i]);
    p.add_channel(0, vec![j]);
    p.add_channel(0, vec![i, j]);
    let e = p.integrate(&settings.quadrature)?;
    let [m, mf, mg, mfg] = [e.values[0], e.values[1], e.values[2], e.values[3]];
    if ratio(1.0, m, p.scale()).is_none() {
        return Err(Error::UndefinedMeasure(format!("the model measure has mass {m:e}")));
    }
    let value = mfg / m - mf * mg / (m * m);
    let partials = [-mfg / (m * m) + 2.0 * mf * mg / (m * m * m), -mg / (m * m), -mf / (m * m), 1.0 / m];
    let tolerance: f64 = partials.iter().zip(&e.errors).map(|(d, err)| d.abs() * err).sum();
    let scale = range_width(f) * range_width(g);
    let scaled = value / scale;
    Ok(CovarianceResult {
        value,
        method: ResolvedMethod::Quadrature,
        std_error: None,
        tolerance: Some(tolerance),
        interval: None,
        confidence: None,
        scale,
        scaled,
        pass: scaled <= settings.threshold,
    })
}

/// Monte Carlo covariance from a batch; the standard error is that of the
/// mean of the centred products (batch means for chains).
pub fn batch_covariance(
    batch: &SampleBatch,
    f: &MonotoneTestFunction,
    g: &MonotoneTestFunction,
    settings: &CovarianceSettings,
) -> CovarianceResult {
    let ef = batch.mean(|x| f.value(x)).mean;
    let eg = batch.mean(|x| g.value(x)).mean;
    let prod = batch.mean(|x| (f.value(x) - ef) * (g.value(x) - eg));
    let z = Normal::standard().inverse_cdf(0.5 + 0.5 * settings.confidence);
    let (lo, hi) = (prod.mean - z * prod.std_error, prod.mean + z * prod.std_error);
    let scale = range_width(f) * range_width(g);
    CovarianceResult {
        value: prod.mean,
        method: ResolvedMethod::MonteCarlo,
        std_error: Some(prod.std_error),
        tolerance: None,
        interval: Some((lo, hi)),
        confidence: Some(settings.confidence),
        scale,
        scaled: prod.mean / scale,
        pass: lo <= settings.threshold * scale,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTrial {
    pub trial: usize,
    pub f: MonotoneTestFunction,
    pub g: MonotoneTestFunction,
    pub result: CovarianceResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub trials: Vec<SweepTrial>,
    pub violations: usize,
    /// Largest scaled covariance (or interval lower end for Monte Carlo).
    pub worst_scaled: f64,
}

impl SweepResult {
    /// Columns: trial, f and g index sets, forms, covariance, std_error or
    /// tolerance, pass.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::Domain(format!("{}: {e}", path.display())))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let io = |e: csv::Error| Error::Domain(e.to_string());
        w.write_record(["trial", "f_indices", "g_indices", "f_form", "g_form", "covariance", "scaled", "std_error_or_tol", "pass"])
            .map_err(io)?;
        let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        for t in &self.trials {
            let r = &t.result;
            w.write_record([
                t.trial.to_string(),
                join(t.f.indices()),
                join(t.g.indices()),
                t.f.form_name().to_string(),
                t.g.form_name().to_string(),
                format!("{:.12e}", r.value),
                format!("{:.12e}", r.scaled),
                format!("{:.6e}", r.std_error.or(r.tolerance).unwrap_or(0.0)),
                r.pass.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(e.to_string()))
    }
}

/// `trials` random pairs of increasing test functions on disjoint random
/// index blocks, drawn from `family_seed`. Monte Carlo sweeps share one
/// sample across trials.
pub fn na_sweep(model: &OrliczModel, family_seed: u64, trials: usize, settings: &CovarianceSettings) -> Result<SweepResult> {
    if trials == 0 {
        return Err(Error::Precondition("a sweep needs at least one trial".into()));
    }
    if model.dim() < 2 {
        return Err(Error::Precondition("negative association needs at least two coordinates".into()));
    }
    let bx = model
        .support_box()
        .filter(|_| !model.is_degenerate())
        .ok_or_else(|| Error::UndefinedMeasure("the model measure has zero mass".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(family_seed);
    let pairs: Vec<(MonotoneTestFunction, MonotoneTestFunction)> =
        (0..trials).map(|_| MonotoneTestFunction::random_pair(&mut rng, model.dim(), &bx)).collect();
    let quadrature = match settings.method {
        CovarianceMethod::Quadrature => true,
        CovarianceMethod::MonteCarlo => false,
        CovarianceMethod::Auto => model.dim() <= MAX_DIM,
    };
    let results: Vec<CovarianceResult> = if quadrature {
        pairs
            .par_iter()
            .map(|(f, g)| quadrature_covariance(model, f, g, settings))
            .collect::<Result<Vec<_>>>()?
    } else {
        let batch = draw(model, settings)?;
        pairs.par_iter().map(|(f, g)| batch_covariance(&batch, f, g, settings)).collect()
    };
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    let trials: Vec<SweepTrial> = pairs
        .into_iter()
        .zip(results)
        .enumerate()
        .map(|(trial, ((f, g), result))| {
            let key = result.interval.map_or(result.scaled, |(lo, _)| lo / result.scale);
            worst = worst.max(key);
            violations += usize::from(!result.pass);
            SweepTrial { trial, f, g, result }
        })
        .collect();
    Ok(SweepResult { trials, violations, worst_scaled: worst })
}

/// One grid point of [`ratio_monotone_in_z`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceRatio {
    pub z: f64,
    /// `None` where the slice has no mass.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceRatioProfile {
    pub axis: usize,
    pub points: Vec<SliceRatio>,
    /// Largest decrease between consecutive defined values (≤ 0 when the
    /// profile is non-decreasing).
    pub worst_decrease: f64,
    /// Undefined grid points were present.
    pub undefined: bool,
}

fn check_decreasing_h(model: &OrliczModel, axis: usize, h: &MonotoneTestFunction) -> Result<()> {
    if axis >= model.dim() {
        return Err(Error::Domain(format!("axis {axis} out of range")));
    }
    if h.direction() != Direction::Decreasing {
        return Err(Error::Precondition("h must be coordinate-wise decreasing".into()));
    }
    if h.indices().iter().any(|&i| i == axis || i >= model.dim()) {
        return Err(Error::Precondition("h must depend only on the coordinates other than the slice axis".into()));
    }
    Ok(())
}

fn slice_integrals(model: &OrliczModel, axis: usize, z: f64, h: &MonotoneTestFunction, spec: &QuadratureSpec) -> Result<Option<f64>> {
    let mut p = Problem::new(model);
    let k = p.add_factor(h);
    p.add_channel(0, vec![]);
    p.add_channel(0, vec![k]);
    p.fix(axis, z);
    let e = p.integrate(spec)?;
    Ok(ratio(e.values[1], e.values[0], p.scale()))
}

/// `r(z) = ∫h(x)s(x, z)dx / ∫s(x, z)dx` over the coordinates other than
/// `axis`, on an increasing grid. For decreasing `h`, `r` is non-decreasing.
pub fn ratio_monotone_in_z(
    model: &OrliczModel,
    axis: usize,
    h: &MonotoneTestFunction,
    z_grid: &[f64],
    spec: &QuadratureSpec,
) -> Result<SliceRatioProfile> {
    check_decreasing_h(model, axis, h)?;
    if z_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("z grid must be strictly increasing".into()));
    }
    if let Some((lo, hi)) = model.support_box().map(|b| b[axis]) {
        if z_grid.iter().any(|&z| z < lo - 1e-12 || z > hi + 1e-12) {
            return Err(Error::Precondition(format!("z grid must lie in the support [{lo}, {hi}] of axis {axis}")));
        }
    }
    let points = z_grid
        .iter()
        .map(|&z| Ok(SliceRatio { z, ratio: slice_integrals(model, axis, z, h, spec)? }))
        .collect::<Result<Vec<_>>>()?;
    let defined: Vec<f64> = points.iter().filter_map(|p| p.ratio).collect();
    let worst_decrease = defined.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    Ok(SliceRatioProfile {
        axis,
        undefined: defined.len() < points.len(),
        points,
        worst_decrease: if defined.len() < 2 { 0.0 } else { worst_decrease },
    })
}

/// Both sides of the two-slice inequality
/// `∫h s(·,z₂)t / ∫h s(·,z₁)t ≥ ∫s(·,z₂)t / ∫s(·,z₁)t`, with
/// `t = 1{s(·,z₁) > 0}·Π uᵢ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoSliceCheck {
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    /// `lhs − rhs`; `None` unless both sides are defined.
    pub margin: Option<f64>,
}

pub fn check_two_slices(
    model: &OrliczModel,
    axis: usize,
    h: &MonotoneTestFunction,
    z1: f64,
    z2: f64,
    u: &[LogConcaveScalar],
    spec: &QuadratureSpec,
) -> Result<TwoSliceCheck> {
    check_decreasing_h(model, axis, h)?;
    if !(z1 < z2) {
        return Err(Error::Precondition("need z₁ < z₂".into()));
    }
    if u.len() != model.dim() - 1 {
        return Err(Error::Domain(format!("expected {} weights u, got {}", model.dim() - 1, u.len())));
    }
    // t's indicator is implied a.e. by s(·, z₂) > 0 (fₙ is non-decreasing)
    // and is the support of s(·, z₁), so only the weights u remain.
    let mut weights = Vec::with_capacity(model.dim());
    let mut rest = u.iter();
    for (i, w) in model.weights().iter().enumerate() {
        weights.push(if i == axis { w.clone() } else { w.multiply(rest.next().expect("length checked")) });
    }
    let weighted = model.with_weights(weights)?;
    let side = |z: f64| -> Result<(f64, f64, f64)> {
        let mut p = Problem::new(&weighted);
        let k = p.add_factor(h);
        p.add_channel(0, vec![]);
        p.add_channel(0, vec![k]);
        p.fix(axis, z);
        let e = p.integrate(spec)?;
        Ok((e.values[0], e.values[1], p.scale()))
    };
    let (s1, hs1, sc1) = side(z1)?;
    let (s2, hs2, sc2) = side(z2)?;
    let lhs = ratio(hs2, hs1, sc1);
    let rhs = ratio(s2, s1, sc1.max(sc2));
    let margin = lhs.zip(rhs).map(|(l, r)| l - r);
    Ok(TwoSliceCheck { lhs, rhs, margin })
}

/// Both sides of `∫h̄·h s / ∫h̄ s ≤ ∫h s / ∫s` for decreasing `h` on one block
/// and decreasing `h̄` on the complementary one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockRatioCheck {
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    /// `rhs − lhs`.
    pub margin: Option<f64>,
}

pub fn check_block_ratio(
    model: &OrliczModel,
    h: &MonotoneTestFunction,
    h_bar: &MonotoneTestFunction,
    spec: &QuadratureSpec,
) -> Result<BlockRatioCheck> {
    check_pair(model, h, h_bar)?;
    if h.direction() != Direction::Decreasing || h_bar.direction() != Direction::Decreasing {
        return Err(Error::Precondition("h and h̄ must be coordinate-wise decreasing".into()));
    }
    let mut p = Problem::new(model);
    let a = p.add_factor(h);
    let b = p.add_factor(h_bar);
    p.add_channel(0, vec![]);
    p.add_channel(0, vec![a]);
    p.add_channel(0, vec![b]);
    p.add_channel(0, vec![a, b]);
    let e = p.integrate(spec)?;
    let sc = p.scale();
    let lhs = ratio(e.values[3], e.values[2], sc);
    let rhs = ratio(e.values[1], e.values[0], sc);
    Ok(BlockRatioCheck { lhs, rhs, margin: lhs.zip(rhs).map(|(l, r)| r - l) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> OrliczModel {
        OrliczModel::simplex(2, 2.0).unwrap()
    }

    #[test]
    fn triangle_coordinates() {
        let f = MonotoneTestFunction::coordinate(0, 0.0, 2.0).unwrap();
        let g = MonotoneTestFunction::coordinate(1, 0.0, 2.0).unwrap();
        let r = covariance(&triangle(), &f, &g, &CovarianceSettings::default()).unwrap();
        assert!((r.value + 1.0 / 9.0).abs() < 1e-9, "{r:?}");
        assert!(r.pass);
    }

    #[test]
    fn triangle_indicators() {
        let f = MonotoneTestFunction::indicator_above(0, 1.0).unwrap();
        let g = MonotoneTestFunction::indicator_above(1, 1.0).unwrap();
        let r = covariance(&triangle(), &f, &g, &CovarianceSettings::default()).unwrap();
        assert!((r.value + 1.0 / 16.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn product_measure_is_uncorrelated() {
        let m = OrliczModel::cube(3, 1.5).unwrap();
        let s = na_sweep(&m, 3, 20, &CovarianceSettings::default()).unwrap();
        for t in &s.trials {
            assert!(t.result.value.abs() <= t.result.tolerance.unwrap() + 1e-12, "{t:?}");
        }
    }

    #[test]
    fn overlapping_indices_are_rejected() {
        let f = MonotoneTestFunction::coordinate(0, 0.0, 2.0).unwrap();
        assert!(matches!(covariance(&triangle(), &f, &f, &CovarianceSettings::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_mass_is_undefined() {
        let m = triangle().with_cap(LogConcaveScalar::zero());
        let f = MonotoneTestFunction::coordinate(0, 0.0, 2.0).unwrap();
        let g = MonotoneTestFunction::coordinate(1, 0.0, 2.0).unwrap();
        assert!(matches!(covariance(&m, &f, &g, &CovarianceSettings::default()), Err(Error::UndefinedMeasure(_))));
    }

    #[test]
    fn slice_ratio_on_triangle() {
        // h = 1{x ≤ 1/2} on the slice [0, 2 − z]: r(z) = 0.5 / (2 − z).
        let h = MonotoneTestFunction::indicator_above(0, 0.5).unwrap().reversed();
        let grid = [0.25, 0.75, 1.25];
        let prof = ratio_monotone_in_z(&triangle(), 1, &h, &grid, &QuadratureSpec::default()).unwrap();
        for p in &prof.points {
            let want = 0.5 / (2.0 - p.z);
            assert!((p.ratio.unwrap() - want).abs() < 1e-10);
        }
        assert!(prof.worst_decrease < 0.0);
    }

    #[test]
    fn slice_ratio_constant_on_cube() {
        let m = OrliczModel::cube(2, 1.0).unwrap();
        let h = MonotoneTestFunction::indicator_above(0, 0.3).unwrap().reversed();
        let prof = ratio_monotone_in_z(&m, 1, &h, &[0.1, 0.5, 0.9], &QuadratureSpec::default()).unwrap();
        for p in &prof.points {
            assert!((p.ratio.unwrap() - 0.3).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_slice_is_flagged() {
        let w = vec![LogConcaveScalar::unit(), LogConcaveScalar::indicator(0.0, 1.0).unwrap()];
        let m = triangle().with_weights(w).unwrap();
        let h = MonotoneTestFunction::indicator_above(1, 0.5).unwrap().reversed();
        let prof = ratio_monotone_in_z(&m, 0, &h, &[0.5, 1.0, 2.0], &QuadratureSpec::default()).unwrap();
        assert!(prof.undefined);
        assert!(prof.points[2].ratio.is_none());
    }
}
