//! Monte Carlo sampling from Orlicz-based densities: rejection sampling on the
//! support box and a hit-and-run walk with exact-in-the-limit chord sampling.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OrliczModel;

/// Acceptance rates below this abort rejection sampling.
pub const MIN_ACCEPTANCE: f64 = 1e-6;
/// Proposals drawn before a low acceptance rate is considered conclusive.
const TRIAL_BUDGET: u64 = 10_000_000;
/// Chord discretization for the inverse-CDF step.
const CHORD_NODES: usize = 256;
const MODE_REFINE: usize = 32;
const START_RESTARTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rejection,
    HitAndRun,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub acceptance_rate: Option<f64>,
    /// Smallest per-coordinate effective sample size (batch means).
    pub effective_sample_size: Option<f64>,
    pub chains: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleBatch {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub seed: u64,
    pub method: Method,
    pub diagnostics: Diagnostics,
    /// Lengths of the chains in `points`, in chain order.
    #[serde(skip)]
    chain_lengths: Vec<usize>,
}

/// Mean of a statistic with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean of `stat` over the batch. Independent draws use the plain
    /// standard error; chains use batch means within each chain.
    pub fn mean<F: Fn(&[f64]) -> f64>(&self, stat: F) -> MeanEstimate {
        let values: Vec<f64> = self.points.iter().map(|p| stat(p)).collect();
        match self.method {
            Method::Rejection => iid_mean(&values),
            Method::HitAndRun => chain_mean(&values, &self.chain_lengths),
        }
    }

    /// Concatenates batches in the given order. Merging is associative; the
    /// seed of the first batch is kept.
    pub fn merge(batches: Vec<SampleBatch>) -> Result<SampleBatch> {
        let mut it = batches.into_iter();
        let Some(mut out) = it.next() else {
            return Err(Error::Sampling("nothing to merge".into()));
        };
        for b in it {
            if b.dim != out.dim || b.method != out.method {
                return Err(Error::Sampling("cannot merge batches of different shape or method".into()));
            }
            let (na, nb) = (out.points.len() as f64, b.points.len() as f64);
            out.diagnostics.acceptance_rate = match (out.diagnostics.acceptance_rate, b.diagnostics.acceptance_rate) {
                (Some(x), Some(y)) if na + nb > 0.0 => Some((x * na + y * nb) / (na + nb)),
                (x, _) => x,
            };
            out.diagnostics.effective_sample_size = match (out.diagnostics.effective_sample_size, b.diagnostics.effective_sample_size) {
                (Some(x), Some(y)) => Some(x + y),
                (x, y) => x.or(y),
            };
            out.diagnostics.chains += b.diagnostics.chains;
            out.points.extend(b.points);
            out.chain_lengths.extend(b.chain_lengths);
        }
        Ok(out)
    }

    /// One row per point, columns `x0..x{n-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::Sampling(format!("{}: {e}", path.display())))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let io = |e: csv::Error| Error::Sampling(e.to_string());
        w.write_record((0..self.dim).map(|i| format!("x{i}"))).map_err(io)?;
        for p in &self.points {
            w.write_record(p.iter().map(|v| format!("{v:.17e}"))).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Sampling(e.to_string()))
    }

    /// Seed, method, size and diagnostics.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            seed: u64,
            method: Method,
            dim: usize,
            count: usize,
            diagnostics: &'a Diagnostics,
        }
        let side = Sidecar { seed: self.seed, method: self.method, dim: self.dim, count: self.len(), diagnostics: &self.diagnostics };
        let text = serde_json::to_string_pretty(&side).map_err(|e| Error::Sampling(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::Sampling(format!("{}: {e}", path.display())))
    }
}

fn iid_mean(values: &[f64]) -> MeanEstimate {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanEstimate { mean: f64::NAN, std_error: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    MeanEstimate { mean, std_error: (var / n).sqrt() }
}

/// Batch means: each chain is cut into about `√len` batches; the variance of
/// the overall mean is estimated from the pooled batch means.
fn chain_mean(values: &[f64], lengths: &[usize]) -> MeanEstimate {
    if values.is_empty() {
        return MeanEstimate { mean: f64::NAN, std_error: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut batch_means = Vec::new();
    let mut batch_size_sum = 0usize;
    let mut start = 0;
    for &len in lengths {
        let chain = &values[start..start + len];
        start += len;
        let size = ((len as f64).sqrt().floor() as usize).max(1);
        for b in chain.chunks_exact(size) {
            batch_means.push(b.iter().sum::<f64>() / size as f64);
            batch_size_sum += size;
        }
    }
    if batch_means.len() < 2 {
        return iid_mean(values);
    }
    let nb = batch_means.len() as f64;
    let size = batch_size_sum as f64 / nb;
    let bm = batch_means.iter().sum::<f64>() / nb;
    let var_b = batch_means.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (nb - 1.0);
    MeanEstimate { mean, std_error: (var_b * size / n).sqrt() }
}

fn effective_sample_size(points: &[Vec<f64>], dim: usize) -> f64 {
    if points.len() < 4 {
        return points.len() as f64;
    }
    let n = points.len() as f64;
    let mut worst = n;
    for i in 0..dim {
        let vals: Vec<f64> = points.iter().map(|p| p[i]).collect();
        let plain = iid_mean(&vals).std_error;
        let batched = chain_mean(&vals, &[vals.len()]).std_error;
        if batched > 0.0 && plain > 0.0 {
            worst = worst.min(n * (plain / batched).powi(2));
        }
    }
    worst
}

/// Upper bound of the density on its support box.
fn density_bound(model: &OrliczModel, bx: &[(f64, f64)]) -> f64 {
    let min_sum: f64 = model.young().iter().zip(bx).map(|(f, &(l, _))| f.value(l)).sum();
    let cap_hi = model.cap().support().map_or(min_sum, |(_, h)| h);
    let mut bound = model.cap().sup_on(min_sum, cap_hi.max(min_sum));
    for (w, &(l, h)) in model.weights().iter().zip(bx) {
        bound *= w.sup_on(l, h);
    }
    bound
}

fn nonempty_box(model: &OrliczModel) -> Result<Vec<(f64, f64)>> {
    if model.is_degenerate() {
        return Err(Error::Sampling("the model has empty support".into()));
    }
    let bx = model.support_box().ok_or_else(|| Error::Sampling("the model has empty support".into()))?;
    if bx.iter().any(|&(l, h)| !(l.is_finite() && h.is_finite())) {
        return Err(Error::Sampling("the support box is unbounded".into()));
    }
    Ok(bx)
}

/// `count` independent draws by uniform proposals on the support box.
pub fn rejection_sample(model: &OrliczModel, count: usize, seed: u64) -> Result<SampleBatch> {
    let bx = nonempty_box(model)?;
    let bound = density_bound(model, &bx);
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Sampling("the density has no finite positive bound on its box".into()));
    }
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut x = vec![0.0; n];
    let mut trials: u64 = 0;
    while points.len() < count {
        for (xi, &(l, h)) in x.iter_mut().zip(&bx) {
            *xi = l + (h - l) * rng.random::<f64>();
        }
        trials += 1;
        let d = model.density(&x);
        if d > 0.0 && rng.random::<f64>() * bound < d {
            points.push(x.clone());
        }
        if trials >= TRIAL_BUDGET && (points.len() as f64) < MIN_ACCEPTANCE * trials as f64 {
            return Err(Error::Sampling(format!(
                "acceptance rate {:.2e} below {MIN_ACCEPTANCE:e} after {trials} proposals; use hit_and_run",
                points.len() as f64 / trials as f64
            )));
        }
    }
    let acceptance = if trials > 0 { points.len() as f64 / trials as f64 } else { acceptance_estimate(model, &bx, bound, seed) };
    Ok(SampleBatch {
        dim: n,
        points,
        seed,
        method: Method::Rejection,
        diagnostics: Diagnostics { acceptance_rate: Some(acceptance), effective_sample_size: Some(count as f64), chains: 1 },
        chain_lengths: vec![count],
    })
}

/// Acceptance rate from a small pilot run, reported for empty requests.
fn acceptance_estimate(model: &OrliczModel, bx: &[(f64, f64)], bound: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; model.dim()];
    let trials = 1000;
    let mut acc = 0.0;
    for _ in 0..trials {
        for (xi, &(l, h)) in x.iter_mut().zip(bx) {
            *xi = l + (h - l) * rng.random::<f64>();
        }
        acc += model.density(&x) / bound;
    }
    acc / trials as f64
}

/// Settings of the hit-and-run walk; `None` picks the defaults `10·n²` and `n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WalkSettings {
    pub burn_in: Option<usize>,
    pub thinning: Option<usize>,
}

/// A density with constant value on its support: indicator cap and weights.
fn is_uniform(model: &OrliczModel) -> bool {
    let flat = |v: &crate::scalar::LogConcaveScalar| v.pieces().iter().all(|p| p.quad == 0.0 && p.lin == 0.0) && v.pieces().len() <= 1;
    flat(model.cap()) && model.weights().iter().all(flat)
}

struct Walker<'m> {
    model: &'m OrliczModel,
    bx: Vec<(f64, f64)>,
    uniform: bool,
    x: Vec<f64>,
    y: Vec<f64>,
    dir: Vec<f64>,
    ts: Vec<f64>,
    dens: Vec<f64>,
}

impl<'m> Walker<'m> {
    fn density_at(&mut self, t: f64) -> f64 {
        for ((yi, &xi), &di) in self.y.iter_mut().zip(&self.x).zip(&self.dir) {
            *yi = xi + t * di;
        }
        self.model.density(&self.y)
    }

    /// End of the positivity interval between `inside` (positive) and
    /// `outside` (the box edge).
    fn chord_end(&mut self, inside: f64, outside: f64) -> f64 {
        if self.density_at(outside) > 0.0 {
            return outside;
        }
        let (mut a, mut b) = (inside, outside);
        let scale = (outside - inside).abs();
        for _ in 0..60 {
            if (b - a).abs() <= 1e-13 * scale {
                break;
            }
            let m = 0.5 * (a + b);
            if self.density_at(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        a
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) {
        let n = self.x.len();
        let mut norm = 0.0;
        for d in self.dir.iter_mut() {
            *d = rng.sample(StandardNormal);
            norm += *d * *d;
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            return;
        }
        for d in self.dir.iter_mut() {
            *d /= norm;
        }
        let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let d = self.dir[i];
            if d.abs() < 1e-300 {
                continue;
            }
            let (l, h) = self.bx[i];
            let (a, b) = ((l - self.x[i]) / d, (h - self.x[i]) / d);
            tmin = tmin.max(a.min(b));
            tmax = tmax.min(a.max(b));
        }
        let tmin = self.chord_end(0.0, tmin.min(0.0));
        let tmax = self.chord_end(0.0, tmax.max(0.0));
        if !(tmax > tmin) {
            return;
        }
        let t = if self.uniform { tmin + (tmax - tmin) * rng.random::<f64>() } else { self.sample_chord(tmin, tmax, rng) };
        for (xi, &di) in self.x.iter_mut().zip(&self.dir) {
            *xi += t * di;
        }
        if self.model.density(&self.x) <= 0.0 {
            // Rounding at a chord end; step back inside.
            for (xi, &di) in self.x.iter_mut().zip(&self.dir) {
                *xi -= t * di;
            }
        }
    }

    /// Inverse CDF of the piecewise-linear interpolant of the density on
    /// `CHORD_NODES` nodes, with extra nodes around the discrete mode.
    fn sample_chord(&mut self, tmin: f64, tmax: f64, rng: &mut ChaCha8Rng) -> f64 {
        let mut ts = std::mem::take(&mut self.ts);
        let mut dens = std::mem::take(&mut self.dens);
        ts.clear();
        dens.clear();
        let h = (tmax - tmin) / (CHORD_NODES - 1) as f64;
        for k in 0..CHORD_NODES {
            ts.push(tmin + h * k as f64);
        }
        for &t in ts.iter() {
            let d = self.density_at(t);
            dens.push(d);
        }
        let mode = (0..CHORD_NODES).max_by(|&a, &b| dens[a].total_cmp(&dens[b])).unwrap_or(0);
        let (ml, mr) = (ts[mode.saturating_sub(1)], ts[(mode + 1).min(CHORD_NODES - 1)]);
        for k in 1..MODE_REFINE {
            let t = ml + (mr - ml) * k as f64 / MODE_REFINE as f64;
            if t != ts[mode] {
                let d = self.density_at(t);
                ts.push(t);
                dens.push(d);
            }
        }
        let mut order: Vec<usize> = (0..ts.len()).collect();
        order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
        let ts_sorted: Vec<f64> = order.iter().map(|&k| ts[k]).collect();
        let ds: Vec<f64> = order.iter().map(|&k| dens[k]).collect();
        let mut cum = Vec::with_capacity(ts_sorted.len());
        cum.push(0.0);
        for k in 1..ts_sorted.len() {
            let area = 0.5 * (ds[k] + ds[k - 1]) * (ts_sorted[k] - ts_sorted[k - 1]);
            cum.push(cum[k - 1] + area);
        }
        let total = *cum.last().unwrap();
        let out = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let k = cum.partition_point(|&c| c < u).clamp(1, ts_sorted.len() - 1);
            let (t0, t1) = (ts_sorted[k - 1], ts_sorted[k]);
            let (d0, d1) = (ds[k - 1], ds[k]);
            let r = u - cum[k - 1];
            let w = t1 - t0;
            let slope = (d1 - d0) / w;
            // Solve d0·s + slope·s²/2 = r for s in [0, w].
            let s = if slope.abs() < 1e-14 * (d0.abs() + d1.abs()).max(1e-300) / w.max(1e-300) {
                if d0 > 0.0 { r / d0 } else { 0.5 * w }
            } else {
                let disc = (d0 * d0 + 2.0 * slope * r).max(0.0);
                2.0 * r / (d0 + disc.sqrt())
            };
            t0 + s.clamp(0.0, w)
        } else {
            tmin + (tmax - tmin) * rng.random::<f64>()
        };
        self.ts = ts;
        self.dens = dens;
        out
    }
}

/// Bisection from the box centre toward the lower corner of the support box
/// (the origin for unweighted models), then random restarts in the box.
pub fn find_start(model: &OrliczModel, bx: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let centre: Vec<f64> = bx.iter().map(|&(l, h)| 0.5 * (l + h)).collect();
    let mut lambda = 1.0;
    for _ in 0..60 {
        let x: Vec<f64> = centre.iter().zip(bx).map(|(&c, &(l, _))| l + lambda * (c - l)).collect();
        if model.density(&x) > 0.0 {
            return Ok(x);
        }
        lambda *= 0.5;
    }
    for _ in 0..START_RESTARTS {
        let x: Vec<f64> = bx.iter().map(|&(l, h)| l + (h - l) * rng.random::<f64>()).collect();
        if model.density(&x) > 0.0 {
            return Ok(x);
        }
    }
    Err(Error::Sampling(format!("no point of positive density found after bisection and {START_RESTARTS} restarts")))
}

/// One hit-and-run chain of `count` thinned draws after burn-in.
pub fn hit_and_run(model: &OrliczModel, count: usize, settings: WalkSettings, seed: u64) -> Result<SampleBatch> {
    run_chain(model, count, settings, seed, 0)
}

fn run_chain(model: &OrliczModel, count: usize, settings: WalkSettings, seed: u64, stream: u64) -> Result<SampleBatch> {
    let n = model.dim();
    let mut batch = SampleBatch {
        dim: n,
        points: Vec::new(),
        seed,
        method: Method::HitAndRun,
        diagnostics: Diagnostics { acceptance_rate: None, effective_sample_size: Some(0.0), chains: 1 },
        chain_lengths: vec![0],
    };
    if count == 0 {
        return Ok(batch);
    }
    let bx = nonempty_box(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let start = find_start(model, &bx, &mut rng)?;
    let burn_in = settings.burn_in.unwrap_or(10 * n * n);
    let thinning = settings.thinning.unwrap_or(n).max(1);
    let mut walker = Walker {
        model,
        bx,
        uniform: is_uniform(model),
        x: start,
        y: vec![0.0; n],
        dir: vec![0.0; n],
        ts: Vec::with_capacity(CHORD_NODES + MODE_REFINE),
        dens: Vec::with_capacity(CHORD_NODES + MODE_REFINE),
    };
    for _ in 0..burn_in {
        walker.step(&mut rng);
    }
    batch.points.reserve(count);
    for _ in 0..count {
        for _ in 0..thinning {
            walker.step(&mut rng);
        }
        batch.points.push(walker.x.clone());
    }
    batch.chain_lengths = vec![count];
    batch.diagnostics.effective_sample_size = Some(effective_sample_size(&batch.points, n));
    Ok(batch)
}

/// Independent chains (distinct RNG streams of one seed) run in parallel and
/// merged in chain order. `count` is split as evenly as possible.
pub fn hit_and_run_chains(model: &OrliczModel, count: usize, chains: usize, settings: WalkSettings, seed: u64) -> Result<SampleBatch> {
    let chains = chains.max(1);
    let batches: Vec<Result<SampleBatch>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let share = count / chains + usize::from(c < count % chains);
            run_chain(model, share, settings, seed, c as u64)
        })
        .collect();
    SampleBatch::merge(batches.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Which sampler [`sample`] uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerChoice {
    /// Rejection when a pilot run accepts at least 1% of proposals, else
    /// hit-and-run.
    #[default]
    Auto,
    Rejection,
    HitAndRun,
}

/// Chains used by [`sample`] for hit-and-run.
pub const DEFAULT_CHAINS: usize = 4;

pub fn sample(model: &OrliczModel, count: usize, seed: u64, choice: SamplerChoice) -> Result<SampleBatch> {
    let use_rejection = match choice {
        SamplerChoice::Rejection => true,
        SamplerChoice::HitAndRun => false,
        SamplerChoice::Auto => {
            let bx = nonempty_box(model)?;
            let bound = density_bound(model, &bx);
            bound > 0.0 && bound.is_finite() && acceptance_estimate(model, &bx, bound, seed) >= 0.01
        }
    };
    if use_rejection {
        rejection_sample(model, count, seed)
    } else {
        hit_and_run_chains(model, count, DEFAULT_CHAINS, WalkSettings::default(), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_acceptance_and_mean() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let b = rejection_sample(&m, 100_000, 5).unwrap();
        let acc = b.diagnostics.acceptance_rate.unwrap();
        assert!((acc - 0.5).abs() < 0.01, "{acc}");
        let e = b.mean(|x| x[0]);
        assert!((e.mean - 2.0 / 3.0).abs() < 4.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn cube_accepts_everything() {
        let m = OrliczModel::cube(3, 1.0).unwrap();
        let b = rejection_sample(&m, 1000, 1).unwrap();
        assert!((b.diagnostics.acceptance_rate.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_support_is_an_error() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let empty = m.with_cap(crate::scalar::LogConcaveScalar::zero());
        assert!(matches!(rejection_sample(&empty, 10, 1), Err(Error::Sampling(_))));
        assert!(hit_and_run(&empty, 10, WalkSettings::default(), 1).is_err());
    }

    #[test]
    fn zero_count_gives_empty_batch() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        assert!(hit_and_run(&m, 0, WalkSettings::default(), 1).unwrap().is_empty());
    }

    #[test]
    fn walk_on_triangle() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let b = hit_and_run(&m, 40_000, WalkSettings::default(), 9).unwrap();
        let e = b.mean(|x| x[0]);
        assert!((e.mean - 2.0 / 3.0).abs() < 3.0 * e.std_error, "{e:?}");
        assert!(b.points.iter().all(|p| m.density(p) > 0.0));
    }

    #[test]
    fn walk_is_reproducible() {
        let m = OrliczModel::simplex(3, 1.0).unwrap();
        let a = hit_and_run_chains(&m, 500, 3, WalkSettings::default(), 4).unwrap();
        let b = hit_and_run_chains(&m, 500, 3, WalkSettings::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
    }
}
