//! The Θ condition and its hereditary form, the product inequality behind it,
//! the monotone profile over a spanned set, and the two 1-D ratio lemmas.
//!
//! The default pair is the slice pair of an Orlicz-based parent on `W × ℝ`:
//! `f(x) = s(x, z₂)`, `g(x) = s(x, z₁)` with `0 < z₁ < z₂`, integrated against
//! `t(x) = 1_{supp g}(x)·Π uᵢ(xᵢ)`. Both weighted integrands are again
//! Orlicz-based on `W`, so the two sides of the condition are ordinary
//! quadrature channels.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{random_model, random_weight, ModelOptions};
use crate::model::{OrliczModel, SonTransform, Splitting};
use crate::quadrature::{integrate_1d, integrate_box, ratio, Problem, QuadratureSpec};
use crate::report::{relative_margin, VerificationReport};
use crate::scalar::{LogConcaveScalar, YoungFunction, YoungPiece, YoungPieceKind};
use crate::spanned::SpannedSet;
use crate::testfn::PointFunction;

/// Relative tolerance for the Θ inequality and the product inequality.
pub const THETA_TOL: f64 = 1e-8;
/// Absolute tolerance for the 1-D ratio lemmas.
pub const RATIO_LEMMA_TOL: f64 = 1e-10;
pub const PAIRS_PER_SPLITTING: usize = 50;
/// Above this many splittings a random subset of this size is checked.
pub const MAX_SPLITTINGS: usize = 20;
pub const PAIRS_PER_TRIAL: usize = 10;
const PAIR_RETRIES: usize = 20;
const DESCENDANT_RETRIES: usize = 200;
const SUPPORT_TRIES: usize = 2000;
const PRECONDITION_GRID: usize = 2001;
const FLAG_CUSTOM: &str = "custom pair: outside the proven class";

// ---------------------------------------------------------------------------
// Pairs
// ---------------------------------------------------------------------------

/// The slice pair of a parent model together with the log-concave factors
/// `uᵢ` of `t`. The last parent coordinate is the sliced one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlicePair {
    parent: OrliczModel,
    z1: f64,
    z2: f64,
    u: Vec<LogConcaveScalar>,
    /// `g·t` as an Orlicz-based model on `W`.
    base: OrliczModel,
    /// Cap turning `base` into `f·t`.
    f_cap: LogConcaveScalar,
    /// Transforms applied since construction.
    history: Vec<SonTransform>,
}

impl SlicePair {
    pub fn new(parent: OrliczModel, z1: f64, z2: f64) -> Result<Self> {
        let n = parent.dim();
        let u = vec![LogConcaveScalar::unit(); n.saturating_sub(1)];
        Self::with_u(parent, z1, z2, u)
    }

    pub fn with_u(parent: OrliczModel, z1: f64, z2: f64, u: Vec<LogConcaveScalar>) -> Result<Self> {
        let n = parent.dim();
        if n < 2 {
            return Err(Error::Domain("a slice pair needs a parent of dimension ≥ 2".into()));
        }
        if !(z1 > 0.0 && z2 > z1 && z2.is_finite()) {
            return Err(Error::Domain(format!("need 0 < z₁ < z₂, got z₁={z1}, z₂={z2}")));
        }
        if u.len() != n - 1 {
            return Err(Error::Domain(format!("{} factors uᵢ for a slice of dimension {}", u.len(), n - 1)));
        }
        for (i, ui) in u.iter().enumerate() {
            ui.validate().map_err(|e| Error::InvalidFunction(format!("u{i}: {e}")))?;
        }
        let pair = Self::build(parent, z1, z2, u)?;
        if pair.base.is_degenerate() {
            return Err(Error::Precondition("supp g is empty".into()));
        }
        Ok(pair)
    }

    fn build(parent: OrliczModel, z1: f64, z2: f64, u: Vec<LogConcaveScalar>) -> Result<Self> {
        let n = parent.dim();
        let last = &parent.young()[n - 1];
        let fz1 = last.value(z1);
        if !fz1.is_finite() {
            return Err(Error::Precondition("supp g is empty: the sliced Young part is infinite at z₁".into()));
        }
        let w_last = &parent.weights()[n - 1];
        let g_cap = parent.cap().shift(fz1).scale(w_last.eval(z1));
        let fz2 = last.value(z2);
        let f_cap = if fz2.is_finite() {
            parent.cap().shift(fz2).scale(w_last.eval(z2)).multiply(&g_cap.positivity_indicator())
        } else {
            LogConcaveScalar::zero()
        };
        let weights = parent.weights()[..n - 1].iter().zip(&u).map(|(w, ui)| w.multiply(ui)).collect();
        let base = OrliczModel::new_unchecked(parent.young()[..n - 1].to_vec(), weights, g_cap)?;
        Ok(SlicePair { parent, z1, z2, u, base, f_cap, history: Vec::new() })
    }

    pub fn parent(&self) -> &OrliczModel {
        &self.parent
    }

    pub fn z1(&self) -> f64 {
        self.z1
    }

    pub fn z2(&self) -> f64 {
        self.z2
    }

    pub fn u(&self) -> &[LogConcaveScalar] {
        &self.u
    }

    /// `g·t` on `W`.
    pub fn base(&self) -> &OrliczModel {
        &self.base
    }

    pub fn f_cap(&self) -> &LogConcaveScalar {
        &self.f_cap
    }

    /// `f(x)·t(x)` evaluated directly from the parent.
    pub fn f_weighted(&self, x: &[f64]) -> f64 {
        self.slice_value(x, self.z2) * self.indicator_g(x) * self.u_product(x)
    }

    /// `g(x)·t(x)` evaluated directly from the parent.
    pub fn g_weighted(&self, x: &[f64]) -> f64 {
        self.slice_value(x, self.z1) * self.u_product(x)
    }

    fn slice_value(&self, x: &[f64], z: f64) -> f64 {
        let mut p = x.to_vec();
        p.push(z);
        self.parent.density(&p)
    }

    fn indicator_g(&self, x: &[f64]) -> f64 {
        if self.slice_value(x, self.z1) > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn u_product(&self, x: &[f64]) -> f64 {
        self.u.iter().zip(x).map(|(u, &t)| u.eval(t)).product()
    }

    /// Carries a son transform of `base` over to the pair: the parent takes
    /// the same restriction or shift (with the sliced coordinate untouched)
    /// and weight multiplications go into the `uᵢ`.
    pub fn apply(&self, t: &SonTransform) -> Result<SlicePair> {
        let d = self.base.dim();
        let (parent, u) = match t {
            SonTransform::MultiplyWeight { index, weight } => {
                if *index >= d {
                    return Err(Error::InvalidTransform(format!("weight index {index} out of range for dimension {d}")));
                }
                weight.validate().map_err(|e| Error::InvalidTransform(e.to_string()))?;
                let mut u = self.u.clone();
                u[*index] = weight.multiply(&u[*index]);
                (self.parent.clone(), u)
            }
            SonTransform::HyperplaneRestrict { i, j, a, b } => {
                if *i >= d || *j >= d {
                    return Err(Error::InvalidTransform(format!("hyperplane indices ({i}, {j}) invalid for dimension {d}")));
                }
                let parent = self.parent.apply_son(t)?;
                let mut u = self.u.clone();
                u[*j] = self.u[*i].affine_substitute(*a, *b).multiply(&self.u[*j]);
                u.remove(*i);
                (parent, u)
            }
            SonTransform::OriginShift { point } => {
                if point.len() != d {
                    return Err(Error::InvalidTransform(format!("shift point has length {}, expected {d}", point.len())));
                }
                let mut full = point.clone();
                full.push(0.0);
                let parent = self.parent.apply_son(&SonTransform::OriginShift { point: full })?;
                let u = self.u.iter().zip(point).map(|(u, &p)| u.shift(p)).collect();
                (parent, u)
            }
        };
        let mut out = Self::build(parent, self.z1, self.z2, u)?;
        out.history = self.history.clone();
        out.history.push(t.clone());
        Ok(out)
    }

    pub fn history(&self) -> &[SonTransform] {
        &self.history
    }

    /// Applies up to `depth` random nondegenerate transforms of the base.
    pub fn random_descendant(&self, depth: usize, rng: &mut ChaCha8Rng) -> SlicePair {
        let mut current = self.clone();
        'outer: for _ in 0..depth {
            for _ in 0..DESCENDANT_RETRIES {
                let Some(t) = current.base.sample_transform(rng) else { continue };
                if let Ok(next) = current.apply(&t) {
                    if !next.base.is_degenerate() {
                        current = next;
                        continue 'outer;
                    }
                }
            }
            break;
        }
        current
    }
}

/// A model with user-supplied `f` and `g`; accepted but flagged.
pub struct CustomPair {
    pub model: OrliczModel,
    pub f: Box<dyn PointFunction>,
    pub g: Box<dyn PointFunction>,
}

/// What the Θ checks integrate.
pub enum ThetaSetup {
    Slice(SlicePair),
    Custom(CustomPair),
}

impl ThetaSetup {
    /// The measure `g` is integrated against (for a slice pair, `g·t` itself).
    pub fn base(&self) -> &OrliczModel {
        match self {
            ThetaSetup::Slice(p) => p.base(),
            ThetaSetup::Custom(c) => &c.model,
        }
    }

    pub fn is_custom(&self) -> bool {
        matches!(self, ThetaSetup::Custom(_))
    }

    /// A problem with channel 0 integrating `f` and channel 1 integrating `g`;
    /// with `h`, channels 2 and 3 integrate `f·h` and `g·h`.
    pub fn problem<'a>(&'a self, h: Option<&'a dyn PointFunction>) -> Problem<'a> {
        match self {
            ThetaSetup::Slice(p) => {
                let mut pr = Problem::new(p.base());
                let fc = pr.add_cap(p.f_cap().clone());
                pr.add_channel(fc, vec![]);
                pr.add_channel(0, vec![]);
                if let Some(h) = h {
                    let kh = pr.add_factor(h);
                    pr.add_channel(fc, vec![kh]);
                    pr.add_channel(0, vec![kh]);
                }
                pr
            }
            ThetaSetup::Custom(c) => {
                let mut pr = Problem::new(&c.model);
                let kf = pr.add_factor(c.f.as_ref());
                let kg = pr.add_factor(c.g.as_ref());
                pr.add_channel(0, vec![kf]);
                pr.add_channel(0, vec![kg]);
                if let Some(h) = h {
                    let kh = pr.add_factor(h);
                    pr.add_channel(0, vec![kf, kh]);
                    pr.add_channel(0, vec![kg, kh]);
                }
                pr
            }
        }
    }

    /// `∫_{W₂} f(x, ·) / ∫_{W₂} g(x, ·)` with the first block held at `x`.
    pub fn block_ratio(&self, splitting: &Splitting, x: &[f64], spec: &QuadratureSpec) -> Result<Option<f64>> {
        let mut pr = self.problem(None);
        for (&axis, &v) in splitting.first.iter().zip(x) {
            pr.fix(axis, v);
        }
        let est = pr.integrate(spec)?;
        Ok(ratio(est.values[0], est.values[1], pr.scale()))
    }
}

// ---------------------------------------------------------------------------
// Θ condition
// ---------------------------------------------------------------------------

/// One instance of the Θ inequality: `x ≤ y` in the first block.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaCase {
    pub splitting: Splitting,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub left: Option<f64>,
    pub right: Option<f64>,
    /// `(left − right)/max(|left|, |right|)`.
    pub margin: Option<f64>,
    pub pass: bool,
}

pub fn check_theta(setup: &ThetaSetup, splitting: &Splitting, x: &[f64], y: &[f64], spec: &QuadratureSpec) -> Result<ThetaCase> {
    let d = setup.base().dim();
    if splitting.first.len() + splitting.second.len() != d {
        return Err(Error::Domain(format!("splitting does not match dimension {d}")));
    }
    if x.len() != splitting.first.len() || y.len() != x.len() {
        return Err(Error::Domain("x and y must have one entry per first-block coordinate".into()));
    }
    if x.iter().zip(y).any(|(a, b)| !(a <= b)) {
        return Err(Error::Domain(format!("need x ≤ y coordinate-wise, got {x:?} and {y:?}")));
    }
    let left = setup.block_ratio(splitting, x, spec)?;
    let right = setup.block_ratio(splitting, y, spec)?;
    let margin = relative_margin(left, right);
    Ok(ThetaCase {
        splitting: splitting.clone(),
        x: x.to_vec(),
        y: y.to_vec(),
        left,
        right,
        margin,
        pass: margin.is_none_or(|m| m >= -THETA_TOL),
    })
}

fn support_point(model: &OrliczModel, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let bx = model.support_box()?;
    for _ in 0..SUPPORT_TRIES {
        let p: Vec<f64> = bx.iter().map(|&(l, h)| rng.random_range(l..h)).collect();
        if model.density(&p) > 0.0 {
            return Some(p);
        }
    }
    None
}

/// Draws `x ≤ y` as the coordinate-wise min and max of two support points,
/// retrying while a side is undefined.
fn sample_case(setup: &ThetaSetup, splitting: &Splitting, rng: &mut ChaCha8Rng, spec: &QuadratureSpec) -> Result<Option<ThetaCase>> {
    let mut last = None;
    for _ in 0..PAIR_RETRIES {
        let (Some(p), Some(q)) = (support_point(setup.base(), rng), support_point(setup.base(), rng)) else {
            return Ok(None);
        };
        let x: Vec<f64> = splitting.first.iter().map(|&i| p[i].min(q[i])).collect();
        let y: Vec<f64> = splitting.first.iter().map(|&i| p[i].max(q[i])).collect();
        let case = check_theta(setup, splitting, &x, &y, spec)?;
        let defined = case.margin.is_some();
        last = Some(case);
        if defined {
            break;
        }
    }
    Ok(last)
}

fn record_cases(report: &mut VerificationReport, cases: &[ThetaCase]) {
    for c in cases {
        report.record(c.margin);
    }
}

fn chosen_splittings(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Splitting> {
    let all = Splitting::all(dim);
    if all.len() <= MAX_SPLITTINGS {
        return all;
    }
    let mut picked: Vec<usize> = sample(rng, all.len(), MAX_SPLITTINGS).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| all[k].clone()).collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The Θ inequality over the splittings of the base (all of them when there
/// are at most [`MAX_SPLITTINGS`]) with `pairs` sampled `x ≤ y` each.
pub fn theta_sweep(setup: &ThetaSetup, pairs: usize, seed: u64, spec: &QuadratureSpec) -> Result<VerificationReport> {
    let d = setup.base().dim();
    if d == 0 {
        return Err(Error::Domain("the Θ condition needs dimension ≥ 1".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let splittings = chosen_splittings(d, &mut rng);
    let per: Vec<Result<Vec<ThetaCase>>> = splittings
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = stream_rng(seed, 1 + k as u64);
            let mut out = Vec::with_capacity(pairs);
            for _ in 0..pairs {
                if let Some(c) = sample_case(setup, s, &mut rng, spec)? {
                    out.push(c);
                }
            }
            Ok(out)
        })
        .collect();
    let mut report = VerificationReport::new("theta", THETA_TOL, "quadrature");
    if setup.is_custom() {
        report.flag(FLAG_CUSTOM);
    }
    let mut cases = Vec::new();
    for r in per {
        cases.extend(r?);
    }
    record_cases(&mut report, &cases);
    Ok(report.with_details(&cases))
}

#[derive(Serialize)]
struct HereditaryTrial {
    trial: usize,
    depth: usize,
    lineage: Vec<SonTransform>,
    cases: Vec<ThetaCase>,
}

/// The Θ inequality on random descendants: each trial draws a depth in
/// `0..=depth`, a descendant of the base carried over to the pair, one
/// splitting and [`PAIRS_PER_TRIAL`] cases.
pub fn check_hereditary_theta(setup: &ThetaSetup, depth: usize, trials: usize, seed: u64, spec: &QuadratureSpec) -> Result<VerificationReport> {
    let ThetaSetup::Slice(pair) = setup else {
        return Err(Error::Precondition(
            "hereditary checks need the slice pair; descendants of a custom pair are undefined".into(),
        ));
    };
    let results: Vec<Result<HereditaryTrial>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial as u64);
            let k = rng.random_range(0..=depth);
            let desc = pair.random_descendant(k, &mut rng);
            let lineage = desc.history().to_vec();
            let d = desc.base().dim();
            let all = Splitting::all(d);
            let splitting = all[rng.random_range(0..all.len())].clone();
            let sub = ThetaSetup::Slice(desc);
            let mut cases = Vec::with_capacity(PAIRS_PER_TRIAL);
            for _ in 0..PAIRS_PER_TRIAL {
                if let Some(c) = sample_case(&sub, &splitting, &mut rng, spec)? {
                    cases.push(c);
                }
            }
            Ok(HereditaryTrial { trial, depth: k, lineage, cases })
        })
        .collect();
    let mut report = VerificationReport::new("hereditary_theta", THETA_TOL, "quadrature");
    let mut trials_out = Vec::with_capacity(trials);
    for r in results {
        let t = r?;
        record_cases(&mut report, &t.cases);
        trials_out.push(t);
    }
    Ok(report.with_details(&trials_out))
}

/// A parent whose second Young part is concave (slope 2 on `[0, 1]`, then
/// 0.1), built with the invariant checks disabled. With `z₁ = 0.2`, `z₂ = 1`
/// and the splitting `{0} | {1}` the slice ratio is
/// `f₂⁻¹(3 − x)/f₂⁻¹(3.8 − x)`, which increases for `x ∈ (1, 1.8)`.
pub fn corrupted_pair() -> SlicePair {
    let kinked = YoungFunction::from_pieces_unchecked(
        &[
            YoungPiece { start: 0.0, kind: YoungPieceKind::Affine { slope: 2.0, intercept: None } },
            YoungPiece { start: 1.0, kind: YoungPieceKind::Affine { slope: 0.1, intercept: None } },
        ],
        None,
    )
    .expect("pieces are well formed");
    let lin = YoungFunction::linear(1.0).expect("valid");
    let parent = OrliczModel::new_unchecked(
        vec![lin.clone(), kinked, lin],
        vec![LogConcaveScalar::unit(); 3],
        LogConcaveScalar::indicator(0.0, 4.0).expect("valid"),
    )
    .expect("shapes agree");
    SlicePair::new(parent, 0.2, 1.0).expect("supp g is nonempty")
}

/// Random pair per the slice construction: parent of dimension `dim` with
/// random `uᵢ` and `z₁ < z₂` inside the last coordinate's support.
pub fn random_slice_pair(rng: &mut ChaCha8Rng, dim: usize) -> SlicePair {
    loop {
        let parent = random_model(rng, dim, ModelOptions::default());
        let Some(bx) = parent.support_box() else { continue };
        let (lo, hi) = bx[dim - 1];
        let lo = lo.max(1e-3);
        if !(hi > lo) {
            continue;
        }
        let a = rng.random_range(lo..hi);
        let b = rng.random_range(lo..hi);
        if a == b {
            continue;
        }
        let u = (0..dim - 1).map(|_| random_weight(rng, false)).collect();
        if let Ok(p) = SlicePair::with_u(parent, a.min(b), a.max(b), u) {
            return p;
        }
    }
}

// ---------------------------------------------------------------------------
// Product inequality
// ---------------------------------------------------------------------------

/// The four integrals `P_t = ∫ r(t, v) dv` of the product inequality
/// `P_a·P_{a+b+c} ≤ P_{a+b}·P_{a+c}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductCheck {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub p_a: f64,
    pub p_ab: f64,
    pub p_ac: f64,
    pub p_abc: f64,
    /// `(P_{a+b}P_{a+c} − P_a P_{a+b+c}) / (P_{a+b}P_{a+c})`; `None` when all
    /// four vanish.
    pub margin: Option<f64>,
}

impl ProductCheck {
    fn from_values(a: f64, b: f64, c: f64, p: [f64; 4]) -> Self {
        let [p_a, p_ab, p_ac, p_abc] = p;
        let rhs = p_ab * p_ac;
        let lhs = p_a * p_abc;
        let margin = if p.iter().all(|&v| v == 0.0) {
            None
        } else if rhs > 0.0 {
            Some((rhs - lhs) / rhs)
        } else if lhs > 0.0 {
            Some(f64::NEG_INFINITY)
        } else {
            Some(0.0)
        };
        ProductCheck { a, b, c, p_a, p_ab, p_ac, p_abc, margin }
    }
}

fn check_abc(a: f64, b: f64, c: f64) -> Result<()> {
    if !(a.is_finite() && b >= 0.0 && c >= 0.0 && b.is_finite() && c.is_finite()) {
        return Err(Error::Domain(format!("need finite a and b, c ≥ 0, got a={a}, b={b}, c={c}")));
    }
    Ok(())
}

/// Product inequality for `r(y₀, v) = m(y₀ + Σ fᵢ(vᵢ))·Π wᵢ(vᵢ)` where `r`
/// is the model on `v` and `m` its cap.
pub fn pl_product(r: &OrliczModel, a: f64, b: f64, c: f64, spec: &QuadratureSpec) -> Result<ProductCheck> {
    check_abc(a, b, c)?;
    let args = [a, a + b, a + c, a + b + c];
    let mut values = [0.0; 4];
    if r.dim() == 0 {
        for (v, &t) in values.iter_mut().zip(&args) {
            *v = r.cap().eval(t);
        }
    } else {
        let mut pr = Problem::new(r);
        for &t in &args {
            let k = pr.add_cap(r.cap().shift(t));
            pr.add_channel(k, vec![]);
        }
        let est = pr.integrate(spec)?;
        values.copy_from_slice(&est.values);
    }
    Ok(ProductCheck::from_values(a, b, c, values))
}

/// Product inequality for an arbitrary `r` on `ℝ × [0, extent]ᵏ`.
pub fn pl_product_fn<F: Fn(f64, &[f64]) -> f64>(r: F, k: usize, extent: f64, a: f64, b: f64, c: f64, spec: &QuadratureSpec) -> Result<ProductCheck> {
    check_abc(a, b, c)?;
    let lo = vec![0.0; k];
    let hi = vec![extent; k];
    let p = |t: f64| if k == 0 { r(t, &[]) } else { integrate_box(|v| r(t, v), &lo, &hi, spec) };
    Ok(ProductCheck::from_values(a, b, c, [p(a), p(a + b), p(a + c), p(a + b + c)]))
}

pub fn check_pl_product(r: &OrliczModel, a: f64, b: f64, c: f64, spec: &QuadratureSpec) -> Result<VerificationReport> {
    let check = pl_product(r, a, b, c, spec)?;
    let mut report = VerificationReport::new("pl_product", THETA_TOL, "quadrature");
    report.record(check.margin);
    Ok(report.with_details(&check))
}

/// `P_t = e^{−t²}(√π/2)ᵏ` for `r(t, v) = exp(−t² − |v|²)` on `ℝ × [0, ∞)ᵏ`.
pub fn gaussian_p(t: f64, k: usize) -> f64 {
    (-t * t).exp() * (std::f64::consts::PI.sqrt() / 2.0).powi(k as i32)
}

/// A random `r` per the slice construction: the parent's Young parts and
/// weights on `v` times random `uᵢ`, under the parent's cap; `a, b, c` are
/// drawn inside the cap's support.
pub fn random_pl_instance(rng: &mut ChaCha8Rng) -> (OrliczModel, f64, f64, f64) {
    let k = rng.random_range(1..=3);
    let m = random_model(rng, k, ModelOptions::default());
    let weights = m.weights().iter().map(|w| w.multiply(&random_weight(rng, false))).collect();
    let r = m.with_weights(weights).expect("same dimension");
    let level = r.cap().support().map_or(1.0, |(_, hi)| hi);
    let a = rng.random_range(0.0..level);
    let b = rng.random_range(0.0..level);
    let c = rng.random_range(0.0..level);
    (r, a, b, c)
}

// ---------------------------------------------------------------------------
// Θ profile over a spanned set
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub x: f64,
    pub theta: Option<f64>,
}

/// `Θ(x)` on a grid; consecutive defined values must not increase.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaProfile {
    pub points: Vec<ProfilePoint>,
    /// Relative drops `(Θ(xₖ) − Θ(xₖ₊₁))/max` between consecutive defined points.
    pub margins: Vec<f64>,
}

impl ThetaProfile {
    pub fn undefined(&self) -> usize {
        self.points.iter().filter(|p| p.theta.is_none()).count()
    }

    pub fn report(&self) -> VerificationReport {
        let mut r = VerificationReport::new("theta_profile", THETA_TOL, "quadrature");
        for &m in &self.margins {
            r.record(Some(m));
        }
        if self.undefined() > 0 {
            r.flag("undefined grid points omitted");
            r.undefined += self.undefined();
        }
        r.with_details(self)
    }
}

/// `Θ(x) = ∫_{K_x × ℝ₊ⁿ⁻²} f / ∫_{K_x × ℝ₊ⁿ⁻²} g` where `K_x` is the vertical
/// chord of the spanned set in the plane of the first two coordinates.
pub fn theta_profile(setup: &ThetaSetup, spanned: &SpannedSet, x_grid: &[f64], spec: &QuadratureSpec) -> Result<ThetaProfile> {
    if setup.base().dim() < 2 {
        return Err(Error::Domain("the Θ profile needs dimension ≥ 2".into()));
    }
    let poly = spanned.polygon();
    let values: Vec<Result<ProfilePoint>> = x_grid
        .par_iter()
        .map(|&x| {
            if poly.chord_at_x(x).is_none() {
                return Ok(ProfilePoint { x, theta: None });
            }
            let mut pr = setup.problem(None);
            pr.restrict_to(poly).fix(0, x);
            let est = pr.integrate(spec)?;
            Ok(ProfilePoint { x, theta: ratio(est.values[0], est.values[1], pr.scale()) })
        })
        .collect();
    let points = values.into_iter().collect::<Result<Vec<_>>>()?;
    let defined: Vec<f64> = points.iter().filter_map(|p| p.theta).collect();
    let margins = defined.windows(2).filter_map(|w| relative_margin(Some(w[0]), Some(w[1]))).collect();
    Ok(ThetaProfile { points, margins })
}

// ---------------------------------------------------------------------------
// 1-D ratio lemmas
// ---------------------------------------------------------------------------

/// Continuous piecewise-linear interpolant of `knots`, zero outside them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct PiecewiseLinear {
    knots: Vec<[f64; 2]>,
}

impl TryFrom<Vec<[f64; 2]>> for PiecewiseLinear {
    type Error = Error;
    fn try_from(knots: Vec<[f64; 2]>) -> Result<Self> {
        PiecewiseLinear::new(knots)
    }
}

impl From<PiecewiseLinear> for Vec<[f64; 2]> {
    fn from(p: PiecewiseLinear) -> Self {
        p.knots
    }
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidFunction("piecewise-linear function needs a knot".into()));
        }
        if knots.iter().any(|k| !k[0].is_finite() || !k[1].is_finite()) {
            return Err(Error::InvalidFunction("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::InvalidFunction("knot abscissae must increase".into()));
        }
        Ok(PiecewiseLinear { knots })
    }

    /// `value` on `[lo, hi]`.
    pub fn constant(lo: f64, hi: f64, value: f64) -> Result<Self> {
        Self::new(vec![[lo, value], [hi, value]])
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t < k[0][0] || t > k[k.len() - 1][0] {
            return 0.0;
        }
        let idx = k.partition_point(|p| p[0] <= t);
        if idx == 0 {
            return k[0][1];
        }
        if idx == k.len() {
            return k[k.len() - 1][1];
        }
        let ([x0, y0], [x1, y1]) = (k[idx - 1], k[idx]);
        y0 + (y1 - y0) * (t - x0) / (x1 - x0)
    }
}

/// Product of piecewise-linear factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Function1d(pub Vec<PiecewiseLinear>);

impl Function1d {
    pub fn single(p: PiecewiseLinear) -> Self {
        Function1d(vec![p])
    }

    pub fn value(&self, t: f64) -> f64 {
        self.0.iter().map(|p| p.value(t)).product()
    }

    fn push_breaks(&self, out: &mut Vec<f64>) {
        for p in &self.0 {
            out.extend(p.knots.iter().map(|k| k[0]));
        }
    }
}

/// Inputs of the two ratio lemmas: measure density `μ` on `interval`, the
/// functions `f, g, h`, and the subintervals `[a, b]`, `[c, d]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioLemmaInput {
    pub mu: LogConcaveScalar,
    pub f: Function1d,
    pub g: Function1d,
    pub h: Function1d,
    pub interval: (f64, f64),
    pub sub: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioSides {
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    /// Oriented so that the lemma asserts `margin ≥ 0`.
    pub margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioLemmaCheck {
    /// `∫f/∫g ≤ ∫fh/∫gh`.
    pub weighted: RatioSides,
    /// `∫_a^b f/∫_a^b g ≥ ∫_c^d f/∫_c^d g`.
    pub intervals: RatioSides,
}

impl RatioLemmaInput {
    fn breaks(&self) -> Vec<f64> {
        let mut b = self.mu.breakpoints();
        self.f.push_breaks(&mut b);
        self.g.push_breaks(&mut b);
        self.h.push_breaks(&mut b);
        b.extend_from_slice(&self.sub);
        b
    }

    fn integral(&self, v: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], spec: &QuadratureSpec) -> f64 {
        integrate_1d(|t| v(t) * self.mu.eval(t), a, b, breaks, spec).0
    }

    /// Sampled preconditions: nonnegativity, `supp f ⊆ supp g`, and `f/g`
    /// and `h` non-increasing.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.interval;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Domain(format!("bad interval [{lo}, {hi}]")));
        }
        let [a, b, c, d] = self.sub;
        if !(a < b && b <= d && a <= c && c < d && a >= lo && d <= hi) {
            return Err(Error::Domain(format!("need a < b ≤ d and a ≤ c < d inside the interval, got {:?}", self.sub)));
        }
        let mut prev_ratio: Option<f64> = None;
        let mut prev_h = f64::INFINITY;
        for k in 0..PRECONDITION_GRID {
            let t = lo + (hi - lo) * k as f64 / (PRECONDITION_GRID - 1) as f64;
            let (fv, gv, hv) = (self.f.value(t), self.g.value(t), self.h.value(t));
            if fv < 0.0 || gv < 0.0 || hv < 0.0 {
                return Err(Error::Precondition(format!("negative value at t={t}")));
            }
            if fv > 0.0 && gv <= 0.0 {
                return Err(Error::Precondition(format!("supp f ⊄ supp g at t={t}")));
            }
            if hv > prev_h + 1e-12 * prev_h.abs().max(1.0) {
                return Err(Error::Precondition(format!("h increases at t={t}")));
            }
            prev_h = hv;
            if gv > 0.0 {
                let r = fv / gv;
                if let Some(p) = prev_ratio {
                    if r > p + 1e-12 * p.abs().max(1.0) {
                        return Err(Error::Precondition(format!("f/g increases at t={t}")));
                    }
                }
                prev_ratio = Some(r);
            }
        }
        Ok(())
    }

    /// Both inequalities after [`validate`](Self::validate).
    pub fn check(&self, spec: &QuadratureSpec) -> Result<RatioLemmaCheck> {
        self.validate()?;
        Ok(self.check_unchecked(spec))
    }

    /// Both inequalities without precondition checks; used for negative controls.
    pub fn check_unchecked(&self, spec: &QuadratureSpec) -> RatioLemmaCheck {
        let br = self.breaks();
        let (lo, hi) = self.interval;
        let f = |t: f64| self.f.value(t);
        let g = |t: f64| self.g.value(t);
        let fh = |t: f64| self.f.value(t) * self.h.value(t);
        let gh = |t: f64| self.g.value(t) * self.h.value(t);
        let g_total = self.integral(g, lo, hi, &br, spec);
        let gh_total = self.integral(gh, lo, hi, &br, spec);
        let lhs = ratio(self.integral(f, lo, hi, &br, spec), g_total, g_total);
        let rhs = ratio(self.integral(fh, lo, hi, &br, spec), gh_total, gh_total);
        let weighted = RatioSides { lhs, rhs, margin: lhs.zip(rhs).map(|(l, r)| r - l) };
        let [a, b, c, d] = self.sub;
        let left = ratio(self.integral(f, a, b, &br, spec), self.integral(g, a, b, &br, spec), g_total);
        let right = ratio(self.integral(f, c, d, &br, spec), self.integral(g, c, d, &br, spec), g_total);
        let intervals = RatioSides { lhs: left, rhs: right, margin: left.zip(right).map(|(l, r)| l - r) };
        RatioLemmaCheck { weighted, intervals }
    }
}

fn decreasing_pl(rng: &mut ChaCha8Rng, lo: f64, hi: f64, min: f64, max: f64) -> PiecewiseLinear {
    let knots = rng.random_range(2..=5);
    let mut xs: Vec<f64> = (0..knots - 2).map(|_| rng.random_range(lo..hi)).collect();
    xs.push(lo);
    xs.push(hi);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut ys: Vec<f64> = (0..xs.len()).map(|_| rng.random_range(min..max)).collect();
    ys.sort_by(|a, b| b.total_cmp(a));
    PiecewiseLinear::new(xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect()).expect("sorted knots")
}

/// Random admissible input: positive piecewise-linear `g`, `f = q·g` with
/// `q` non-increasing, `h` non-increasing and positive, `μ` a log-concave
/// density on the interval.
pub fn random_ratio_input(rng: &mut ChaCha8Rng) -> RatioLemmaInput {
    let hi = rng.random_range(1.0..3.0);
    let knots = rng.random_range(2..=6);
    let mut xs: Vec<f64> = (0..knots - 2).map(|_| rng.random_range(0.0..hi)).collect();
    xs.push(0.0);
    xs.push(hi);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let g = PiecewiseLinear::new(xs.into_iter().map(|x| [x, rng.random_range(0.2..2.0)]).collect()).expect("sorted knots");
    let q = decreasing_pl(rng, 0.0, hi, 0.0, 1.0);
    let h = decreasing_pl(rng, 0.0, hi, 0.05, 2.0);
    let mu = match rng.random_range(0..3) {
        0 => LogConcaveScalar::indicator(0.0, hi),
        1 => LogConcaveScalar::log_affine(rng.random_range(-2.0..2.0), 0.0, 0.0, hi),
        _ => LogConcaveScalar::log_quadratic(-rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0), 0.0, 0.0, hi),
    }
    .expect("valid density");
    let mut p: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..hi)).collect();
    p.sort_by(f64::total_cmp);
    let (a, d) = (p[0], p[1].max(p[0] + 1e-3 * hi));
    let b = rng.random_range(a..d) + (d - a) * 1e-6;
    let c = rng.random_range(a..d);
    RatioLemmaInput {
        mu,
        f: Function1d(vec![g.clone(), q]),
        g: Function1d::single(g),
        h: Function1d::single(h),
        interval: (0.0, hi),
        sub: [a, b.min(d), c, d],
    }
}

/// `f = 1 − x`, `g ≡ 1`, `h = 1 − x` on `[0, 1]` with Lebesgue `μ` and
/// subintervals `[0, 1/2]`, `[1/2, 1]`: sides `1/2 ≤ 2/3` and `3/4 ≥ 1/4`.
pub fn hand_ratio_input() -> RatioLemmaInput {
    let down = PiecewiseLinear::new(vec![[0.0, 1.0], [1.0, 0.0]]).expect("valid");
    RatioLemmaInput {
        mu: LogConcaveScalar::indicator(0.0, 1.0).expect("valid"),
        f: Function1d::single(down.clone()),
        g: Function1d::single(PiecewiseLinear::constant(0.0, 1.0, 1.0).expect("valid")),
        h: Function1d::single(down),
        interval: (0.0, 1.0),
        sub: [0.0, 0.5, 0.5, 1.0],
    }
}

/// Input violating the hypotheses: `f/g = x` increases (with `h = 1.1 − x`
/// decreasing). Run through [`RatioLemmaInput::check_unchecked`]; both
/// inequalities fail.
pub fn ratio_negative_control() -> RatioLemmaInput {
    let up = PiecewiseLinear::new(vec![[0.0, 0.0], [1.0, 1.0]]).expect("valid");
    RatioLemmaInput {
        mu: LogConcaveScalar::indicator(0.0, 1.0).expect("valid"),
        f: Function1d::single(up),
        g: Function1d::single(PiecewiseLinear::constant(0.0, 1.0, 1.0).expect("valid")),
        h: Function1d::single(PiecewiseLinear::new(vec![[0.0, 1.1], [1.0, 0.1]]).expect("valid")),
        interval: (0.0, 1.0),
        sub: [0.0, 0.5, 0.5, 1.0],
    }
}

/// Runs the ratio lemmas over inputs and aggregates both inequalities.
pub fn check_ratio_lemmas(inputs: &[RatioLemmaInput], spec: &QuadratureSpec) -> Result<VerificationReport> {
    let checks = inputs.par_iter().map(|i| i.check(spec)).collect::<Result<Vec<_>>>()?;
    let mut report = VerificationReport::new("ratio_lemmas", RATIO_LEMMA_TOL, "quadrature");
    for c in &checks {
        report.record(c.weighted.margin);
        report.record(c.intervals.margin);
    }
    Ok(report.with_details(&checks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spanned::SpannedSet;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn simplex_pair() -> SlicePair {
        SlicePair::new(OrliczModel::simplex(3, 3.0).unwrap(), 0.2, 0.8).unwrap()
    }

    #[test]
    fn simplex_slice_ratio_matches_oracle() {
        // g = 1{x+y ≤ 2.8}, f = 1{x+y ≤ 2.2}: L(x) = (2.2 − x)/(2.8 − x).
        let setup = ThetaSetup::Slice(simplex_pair());
        let s = Splitting::new(2, vec![0]).unwrap();
        let case = check_theta(&setup, &s, &[0.1], &[0.5], &spec()).unwrap();
        let oracle = |x: f64| (2.2 - x) / (2.8 - x);
        assert!((case.left.unwrap() - oracle(0.1)).abs() < 1e-12);
        assert!((case.right.unwrap() - oracle(0.5)).abs() < 1e-12);
        assert!(case.pass);
    }

    #[test]
    fn cube_ratio_is_constant() {
        let pair = SlicePair::new(OrliczModel::cube(3, 1.0).unwrap(), 0.2, 0.7).unwrap();
        let setup = ThetaSetup::Slice(pair);
        let s = Splitting::new(2, vec![1]).unwrap();
        let c = check_theta(&setup, &s, &[0.1], &[0.9], &spec()).unwrap();
        assert!(c.margin.unwrap().abs() < 1e-12);
    }

    #[test]
    fn empty_slice_is_undefined() {
        let setup = ThetaSetup::Slice(simplex_pair());
        let s = Splitting::new(2, vec![0]).unwrap();
        let c = check_theta(&setup, &s, &[0.1], &[2.9], &spec()).unwrap();
        assert!(c.right.is_none() && c.pass);
    }

    #[test]
    fn weighted_channels_match_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let pair = random_slice_pair(&mut rng, 3);
            let bx = pair.base().support_box().unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = bx.iter().map(|&(l, h)| rng.random_range(l..h)).collect();
                let g = pair.base().density(&x);
                assert!((g - pair.g_weighted(&x)).abs() <= 1e-12 * g.abs().max(1.0));
                let f = pair.base().with_cap(pair.f_cap().clone()).density(&x);
                assert!((f - pair.f_weighted(&x)).abs() <= 1e-12 * f.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pair_transforms_commute_with_base_sons() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        for _ in 0..40 {
            let pair = random_slice_pair(&mut rng, 4);
            let Some(t) = pair.base().sample_transform(&mut rng) else { continue };
            let (Ok(son), Ok(next)) = (pair.base().apply_son(&t), pair.apply(&t)) else { continue };
            let Some(bx) = son.support_box() else { continue };
            for _ in 0..20 {
                let x: Vec<f64> = bx.iter().map(|&(l, h)| rng.random_range(l..h)).collect();
                let (a, b) = (son.density(&x), next.base().density(&x));
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{t:?}: {a} vs {b}");
                assert!((next.g_weighted(&x) - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn corrupted_pair_is_detected() {
        let setup = ThetaSetup::Slice(corrupted_pair());
        let s = Splitting::new(2, vec![0]).unwrap();
        let c = check_theta(&setup, &s, &[1.1], &[1.7], &spec()).unwrap();
        let oracle = |x: f64| {
            let inv = |v: f64| if v <= 2.0 { v / 2.0 } else { 1.0 + (v - 2.0) / 0.1 };
            inv(3.0 - x) / inv(3.8 - x)
        };
        assert!((c.left.unwrap() - oracle(1.1)).abs() < 1e-10);
        assert!((c.right.unwrap() - oracle(1.7)).abs() < 1e-10);
        assert!(!c.pass);
        let sweep = theta_sweep(&setup, 20, 1, &spec()).unwrap();
        assert!(sweep.violations > 0);
    }

    #[test]
    fn theta_sweep_passes_on_simplex() {
        let setup = ThetaSetup::Slice(simplex_pair());
        let r = theta_sweep(&setup, 10, 3, &spec()).unwrap();
        assert!(r.passed, "{:?}", r.worst_margin);
        assert_eq!(r.cases, 30);
    }

    #[test]
    fn hereditary_rejects_custom_pairs() {
        let m = OrliczModel::simplex(2, 1.0).unwrap();
        let f = crate::testfn::MonotoneTestFunction::coordinate(0, 0.0, 1.0).unwrap();
        let g = crate::testfn::MonotoneTestFunction::coordinate(1, 0.0, 1.0).unwrap();
        let setup = ThetaSetup::Custom(CustomPair { model: m, f: Box::new(f), g: Box::new(g) });
        assert!(matches!(check_hereditary_theta(&setup, 2, 2, 0, &spec()), Err(Error::Precondition(_))));
        let r = theta_sweep(&setup, 2, 0, &spec()).unwrap();
        assert!(r.flags.iter().any(|f| f.contains("outside")));
    }

    #[test]
    fn gaussian_product_matches_oracle() {
        let r = |t: f64, v: &[f64]| (-t * t - v.iter().map(|x| x * x).sum::<f64>()).exp();
        let c = pl_product_fn(r, 1, 8.0, 0.0, 1.0, 1.0, &spec()).unwrap();
        for (got, t) in [(c.p_a, 0.0), (c.p_ab, 1.0), (c.p_abc, 2.0)] {
            assert!((got - gaussian_p(t, 1)).abs() < 1e-10, "{got} vs {}", gaussian_p(t, 1));
        }
        assert!(c.margin.unwrap() > 0.0);
    }

    #[test]
    fn product_equality_when_b_is_zero() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let c = pl_product(&m, 0.3, 0.0, 0.7, &spec()).unwrap();
        assert!(c.margin.unwrap().abs() < 1e-12);
        // ∫ 1{v₁+v₂ ≤ 2 − t} = (2 − t)²/2.
        assert!((c.p_ac - 0.5).abs() < 1e-12);
        let none = pl_product(&m, 3.0, 1.0, 1.0, &spec()).unwrap();
        assert!(none.margin.is_none());
    }

    #[test]
    fn theta_profile_on_square() {
        // Θ(x) = min(2, 2.2 − x)/min(2, 2.8 − x) on [0, 2]².
        let setup = ThetaSetup::Slice(simplex_pair());
        let sq = SpannedSet::rectangle([0.0, 0.0], [2.0, 2.0]).unwrap();
        let grid: Vec<f64> = (0..=8).map(|k| k as f64 * 0.25).collect();
        let p = theta_profile(&setup, &sq, &grid, &spec()).unwrap();
        for pt in &p.points {
            let want = (2.2 - pt.x).min(2.0) / (2.8 - pt.x).min(2.0);
            assert!((pt.theta.unwrap() - want).abs() < 1e-10, "{pt:?}");
        }
        assert!(p.report().passed);
        let out = theta_profile(&setup, &sq, &[3.0], &spec()).unwrap();
        assert_eq!(out.undefined(), 1);
    }

    #[test]
    fn ratio_lemma_hand_cases() {
        let c = hand_ratio_input().check(&spec()).unwrap();
        assert!((c.weighted.lhs.unwrap() - 0.5).abs() < 1e-14);
        assert!((c.weighted.rhs.unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert!((c.intervals.lhs.unwrap() - 0.75).abs() < 1e-14);
        assert!((c.intervals.rhs.unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn ratio_lemma_controls() {
        let bad = ratio_negative_control();
        assert!(matches!(bad.check(&spec()), Err(Error::Precondition(_))));
        let c = bad.check_unchecked(&spec());
        assert!(c.weighted.margin.unwrap() < -1e-3);
        assert!(c.intervals.margin.unwrap() < -1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs: Vec<_> = (0..30).map(|_| random_ratio_input(&mut rng)).collect();
        let r = check_ratio_lemmas(&inputs, &spec()).unwrap();
        assert!(r.passed, "{:?}", r.worst_margin);
    }

    #[test]
    fn equal_f_and_g_give_unit_ratios() {
        let mut input = hand_ratio_input();
        input.f = input.g.clone();
        let c = input.check(&spec()).unwrap();
        assert!((c.weighted.lhs.unwrap() - 1.0).abs() < 1e-14 && (c.weighted.rhs.unwrap() - 1.0).abs() < 1e-14);
    }
}
