//! Planar localization: bisect a spanned set in the plane of the first two
//! coordinates while keeping the `f/g` ratio at its global value and the
//! `h`-weighted ratio below its global bound, until the set is thin.
//!
//! Each step takes the first dyadic point interior to the current set as the
//! pivot, finds by bisection the angle at which both halves have the same
//! `f/g` ratio, and keeps a half whose `h`-weighted ratio does not exceed the
//! bound (the larger-mass half when both qualify). "Mass" is the `g`-weighted
//! mass, which is positive exactly where the plain mass is since
//! `supp s ⊆ supp g`.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generate::random_weight;
use crate::model::OrliczModel;
use crate::quadrature::{ratio, QuadratureSpec};
use crate::report::{relative_margin, VerificationReport};
use crate::scalar::LogConcaveScalar;
use crate::spanned::{Point, Polygon, SpannedSet};
use crate::testfn::PointFunction;
use crate::theta::{SlicePair, ThetaSetup};

/// Minimal mass of the current set relative to the initial one.
pub const MASS_FLOOR: f64 = 1e-9;
pub const ANGLE_ITERATIONS: usize = 60;
/// Per-step ratio tolerance as a multiple of the quadrature tolerance.
pub const DRIFT_FACTOR: f64 = 10.0;
pub const MAX_DYADIC_LEVEL: i32 = 50;
pub const PROFILE_POINTS: usize = 33;
/// Tolerance of the midpoint log-concavity test on the terminal profile.
pub const PROFILE_LOG_TOL: f64 = 1e-6;
const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizeSettings {
    /// Stop once the width of the current set drops below this.
    pub stop_width: f64,
    pub max_steps: usize,
    pub spec: QuadratureSpec,
}

impl Default for LocalizeSettings {
    fn default() -> Self {
        LocalizeSettings { stop_width: 1e-3, max_steps: 200, spec: QuadratureSpec::default() }
    }
}

/// Which side of the dividing line was kept: `Clockwise` is the east part of
/// a vertical line and the south part of a horizontal one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    Clockwise,
    Counterclockwise,
}

/// How the angle was determined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Bisection on the ratio difference.
    Darboux,
    /// The ratio difference vanished at an end of the angle range.
    Endpoint,
    /// One half carries no mass; the other keeps every ratio.
    PositiveMass,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub pivot: Point,
    pub angle: f64,
    pub half: Half,
    pub rule: SplitRule,
    pub mass: f64,
    pub ratio: f64,
    /// `|ratio − target| / |target|`.
    pub drift: f64,
    pub h_ratio: f64,
    /// `(bound − h_ratio) / |bound|`.
    pub kwar2_margin: f64,
    pub width: f64,
    pub diameter: f64,
}

/// The four integrals over a region: `∫f`, `∫g`, `∫fh`, `∫gh`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RegionIntegrals {
    pub f: f64,
    pub g: f64,
    pub fh: f64,
    pub gh: f64,
}

/// Loop state: the current set `K_m` with its integrals and the invariant targets.
#[derive(Clone, Debug, Serialize)]
pub struct LocalizationState {
    pub step: usize,
    pub current: SpannedSet,
    pub integrals: RegionIntegrals,
    pub pivot: Option<Point>,
    /// Global `∫f/∫g`.
    pub ratio_target: f64,
    /// Global `∫fh/∫gh`.
    pub h_ratio_bound: f64,
    pub initial_mass: f64,
    pub history: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileSample {
    pub t: f64,
    /// Mass density of the slice at `t`.
    pub density: f64,
    /// `∫f/∫g` over the slice.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalRatios {
    pub ratio: f64,
    pub ratio_target: f64,
    pub drift: f64,
    pub h_ratio: f64,
    /// `(target − h_ratio)/|target|`; the conclusion asks for `> 0`.
    pub strict_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationResult {
    /// `None` in dimension 1, where the support itself is returned.
    pub terminal_set: Option<SpannedSet>,
    /// Endpoints `a ≤ b` of the approximating segment.
    pub approx_interval: (Vec<f64>, Vec<f64>),
    /// Axis the profile is parametrized by.
    pub profile_axis: usize,
    pub measure_profile: Vec<ProfileSample>,
    pub final_ratios: Option<FinalRatios>,
    pub steps: Vec<StepRecord>,
    pub converged: bool,
    pub max_drift: f64,
    pub step_tolerance: f64,
}

impl LocalizationResult {
    /// Worst `(ratio(tₖ) − ratio(tₖ₊₁))/max` along the profile.
    pub fn ratio_monotonicity_margin(&self) -> Option<f64> {
        let r: Vec<f64> = self.measure_profile.iter().filter_map(|p| p.ratio).collect();
        r.windows(2).filter_map(|w| relative_margin(Some(w[0]), Some(w[1]))).reduce(f64::min)
    }

    /// Largest midpoint deficit `avg(log ν(t±δ)) − log ν(t)` over interior samples.
    pub fn profile_log_concavity_deficit(&self) -> f64 {
        let d: Vec<f64> = self.measure_profile.iter().map(|p| p.density).collect();
        d.windows(3)
            .filter(|w| w.iter().all(|&v| v > 0.0))
            .map(|w| 0.5 * (w[0].ln() + w[2].ln()) - w[1].ln())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Terminal checks: convergence, drift, strict inequality, monotone `f/g`
    /// along the segment and a log-concave profile.
    pub fn report(&self) -> VerificationReport {
        let mut r = VerificationReport::new("localization", 0.0, "quadrature");
        if !self.converged {
            r.record_failure(format!("width threshold not reached in {} steps", self.steps.len()));
        }
        r.record(Some(self.step_tolerance - self.max_drift));
        if let Some(f) = &self.final_ratios {
            r.record(Some(self.step_tolerance - f.drift));
            if f.strict_margin > 0.0 {
                r.record(Some(f.strict_margin));
            } else {
                r.record_failure(format!("h-weighted ratio not strictly smaller (margin {:e})", f.strict_margin));
            }
        }
        r.record(self.ratio_monotonicity_margin().map(|m| m + self.step_tolerance));
        let deficit = self.profile_log_concavity_deficit();
        if deficit.is_finite() {
            r.record(Some(PROFILE_LOG_TOL - deficit));
        }
        r.with_details(self)
    }

    /// Step log as CSV.
    pub fn write_steps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Domain(format!("csv: {e}"));
        w.write_record([
            "step", "pivot_x", "pivot_y", "angle", "half", "rule", "mass", "ratio", "kwar2_margin", "width",
        ])
        .map_err(io)?;
        for s in &self.steps {
            let half = match s.half {
                Half::Clockwise => "clockwise",
                Half::Counterclockwise => "counterclockwise",
            };
            let rule = match s.rule {
                SplitRule::Darboux => "darboux",
                SplitRule::Endpoint => "endpoint",
                SplitRule::PositiveMass => "positive_mass",
            };
            w.write_record([
                s.step.to_string(),
                format!("{:.17e}", s.pivot[0]),
                format!("{:.17e}", s.pivot[1]),
                format!("{:.17e}", s.angle),
                half.to_string(),
                rule.to_string(),
                format!("{:.17e}", s.mass),
                format!("{:.17e}", s.ratio),
                format!("{:.17e}", s.kwar2_margin),
                format!("{:.17e}", s.width),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(format!("csv: {e}")))
    }

    /// Step log as a JSON trace.
    pub fn steps_json(&self) -> String {
        serde_json::to_string_pretty(&self.steps).expect("steps serialize")
    }
}

struct Engine<'a> {
    setup: &'a ThetaSetup,
    h: &'a dyn PointFunction,
    spec: &'a QuadratureSpec,
}

impl Engine<'_> {
    fn region(&self, poly: &Polygon, with_h: bool) -> Result<RegionIntegrals> {
        let mut pr = self.setup.problem(if with_h { Some(self.h) } else { None });
        pr.restrict_to(poly);
        let v = pr.integrate(self.spec)?.values;
        Ok(if with_h {
            RegionIntegrals { f: v[0], g: v[1], fh: v[2], gh: v[3] }
        } else {
            RegionIntegrals { f: v[0], g: v[1], ..Default::default() }
        })
    }

    fn slice(&self, poly: &Polygon, axis: usize, t: f64) -> Result<(f64, f64)> {
        let mut pr = self.setup.problem(None);
        pr.restrict_to(poly).fix(axis, t);
        let v = pr.integrate(self.spec)?.values;
        Ok((v[0], v[1]))
    }
}

/// First dyadic point `(k/2ᵈ, j/2ᵈ)` interior to the set, by increasing `d`
/// and then lexicographically.
pub fn dyadic_pivot(set: &SpannedSet) -> Option<Point> {
    let poly = set.polygon();
    let (lo, hi) = poly.bounds();
    for d in 0..=MAX_DYADIC_LEVEL {
        let step = 2f64.powi(-d);
        let k0 = (lo[0] / step).ceil() as i64;
        let k1 = (hi[0] / step).floor() as i64;
        for k in k0..=k1 {
            let x = k as f64 * step;
            let Some((yl, yh)) = poly.chord_at_x(x) else { continue };
            let j0 = (yl / step).ceil() as i64;
            let j1 = (yh / step).floor() as i64;
            for j in j0..=j1 {
                let p = [x, j as f64 * step];
                if set.contains_interior(p) {
                    return Some(p);
                }
            }
        }
    }
    None
}

enum Probe {
    Value(f64),
    /// This half has all the mass.
    Only(Half),
}

impl LocalizationState {
    fn step_tolerance(spec: &QuadratureSpec) -> f64 {
        DRIFT_FACTOR * spec.rel_tol
    }

    fn probe(&self, eng: &Engine, pivot: Point, angle: f64) -> Result<Probe> {
        let (plus, minus) = self.current.split(pivot, angle)?;
        let (Some(plus), Some(minus)) = (plus, minus) else {
            return Err(Error::Geometry("interior pivot produced an empty half".into()));
        };
        let p = eng.region(plus.polygon(), false)?;
        let m = eng.region(minus.polygon(), false)?;
        let rp = ratio(p.f, p.g, self.initial_mass);
        let rm = ratio(m.f, m.g, self.initial_mass);
        Ok(match (rp, rm) {
            (Some(a), Some(b)) => Probe::Value(a - b),
            (None, _) => Probe::Only(Half::Counterclockwise),
            (_, None) => Probe::Only(Half::Clockwise),
        })
    }

    /// The equalizing angle leaves the kept half at the current set's ratio,
    /// which carries the quadrature error of earlier steps. Moving the angle
    /// so that the kept half meets the global target stops that error from
    /// accumulating; returns `None` when no nearby angle brackets the target.
    fn retarget(
        &self,
        eng: &Engine,
        pivot: Point,
        angle: f64,
        half: Half,
    ) -> Result<Option<(f64, SpannedSet, RegionIntegrals)>> {
        let target = self.ratio_target;
        let side = |theta: f64| -> Result<Option<(SpannedSet, f64)>> {
            let (plus, minus) = self.current.split(pivot, theta)?;
            let Some(k) = (match half {
                Half::Clockwise => plus,
                Half::Counterclockwise => minus,
            }) else {
                return Ok(None);
            };
            let i = eng.region(k.polygon(), false)?;
            Ok(ratio(i.f, i.g, self.initial_mass).map(|r| (k, r - target)))
        };
        let Some((_, c0)) = side(angle)? else { return Ok(None) };
        if c0.abs() <= 0.1 * eng.spec.rel_tol * target.abs() {
            return Ok(None);
        }
        let mut bracket = None;
        let mut delta = 1e-9;
        'expand: while delta < HALF_PI {
            for theta in [angle - delta, angle + delta] {
                if !(0.0..=HALF_PI).contains(&theta) {
                    continue;
                }
                if let Some((_, c)) = side(theta)? {
                    if c.signum() != c0.signum() {
                        bracket = Some((angle, theta));
                        break 'expand;
                    }
                }
            }
            delta *= 4.0;
        }
        let Some((mut a, mut b)) = bracket else { return Ok(None) };
        for _ in 0..ANGLE_ITERATIONS {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            match side(m)? {
                Some((_, c)) if c.signum() == c0.signum() => a = m,
                Some(_) => b = m,
                None => return Ok(None),
            }
        }
        let theta = 0.5 * (a + b);
        let (plus, minus) = self.current.split(pivot, theta)?;
        let Some(k) = (match half {
            Half::Clockwise => plus,
            Half::Counterclockwise => minus,
        }) else {
            return Ok(None);
        };
        let i = eng.region(k.polygon(), true)?;
        Ok(Some((theta, k, i)))
    }

    /// One bisection step.
    fn advance(&mut self, eng: &Engine) -> Result<()> {
        let pivot = dyadic_pivot(&self.current)
            .ok_or_else(|| Error::Invariant(format!("step {}: no dyadic pivot interior to the set", self.step)))?;
        self.pivot = Some(pivot);
        let tol = Self::step_tolerance(eng.spec) * self.ratio_target.abs();
        let (angle, rule, forced) = match (self.probe(eng, pivot, 0.0)?, self.probe(eng, pivot, HALF_PI)?) {
            (Probe::Only(h), _) => (0.0, SplitRule::PositiveMass, Some(h)),
            (_, Probe::Only(h)) => (HALF_PI, SplitRule::PositiveMass, Some(h)),
            (Probe::Value(v0), _) if v0.abs() <= tol => (0.0, SplitRule::Endpoint, None),
            (_, Probe::Value(v1)) if v1.abs() <= tol => (HALF_PI, SplitRule::Endpoint, None),
            (Probe::Value(v0), Probe::Value(v1)) => {
                if v0.signum() == v1.signum() {
                    return Err(Error::Invariant(format!(
                        "step {}: ratio difference has no sign change on [0, π/2] ({v0:e}, {v1:e})",
                        self.step
                    )));
                }
                let (mut lo, mut hi) = (0.0, HALF_PI);
                let lo_sign = v0.signum();
                let mut found = None;
                for _ in 0..ANGLE_ITERATIONS {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    match self.probe(eng, pivot, mid)? {
                        Probe::Only(h) => {
                            found = Some((mid, SplitRule::PositiveMass, Some(h)));
                            break;
                        }
                        Probe::Value(v) if v.signum() == lo_sign => lo = mid,
                        Probe::Value(_) => hi = mid,
                    }
                }
                found.unwrap_or((0.5 * (lo + hi), SplitRule::Darboux, None))
            }
        };
        let (plus, minus) = self.current.split(pivot, angle)?;
        let (Some(plus), Some(minus)) = (plus, minus) else {
            return Err(Error::Geometry("interior pivot produced an empty half".into()));
        };
        let ip = eng.region(plus.polygon(), true)?;
        let im = eng.region(minus.polygon(), true)?;
        let bound = self.h_ratio_bound;
        let kwar2 = |i: &RegionIntegrals| ratio(i.fh, i.gh, self.initial_mass).map(|r| (bound - r) / bound.abs());
        let candidates = [(Half::Clockwise, plus, ip), (Half::Counterclockwise, minus, im)];
        let floor = -Self::step_tolerance(eng.spec);
        let pick = match forced {
            Some(h) => candidates.into_iter().find(|c| c.0 == h),
            None => candidates
                .into_iter()
                .filter(|c| kwar2(&c.2).is_some_and(|m| m >= floor))
                .max_by(|a, b| a.2.g.total_cmp(&b.2.g)),
        };
        let Some((half, mut set, mut integrals)) = pick else {
            return Err(Error::Invariant(format!("step {}: neither half keeps the h-weighted ratio bound", self.step)));
        };
        let mut angle = angle;
        if forced.is_none() {
            if let Some((a, k, i)) = self.retarget(eng, pivot, angle, half)? {
                if kwar2(&i).is_some_and(|m| m >= floor) {
                    (angle, set, integrals) = (a, k, i);
                }
            }
        }
        if integrals.g < MASS_FLOOR * self.initial_mass {
            return Err(Error::Invariant(format!(
                "step {}: mass {:e} fell below the floor {:e}",
                self.step,
                integrals.g,
                MASS_FLOOR * self.initial_mass
            )));
        }
        let r = integrals.f / integrals.g;
        let drift = (r - self.ratio_target).abs() / self.ratio_target.abs();
        if drift > Self::step_tolerance(eng.spec) {
            return Err(Error::Invariant(format!(
                "step {}: ratio drift {drift:e} exceeds {:e} (pivot {pivot:?}, angle {angle}, {rule:?})",
                self.step,
                Self::step_tolerance(eng.spec)
            )));
        }
        let h_ratio = integrals.fh / integrals.gh;
        self.step += 1;
        self.history.push(StepRecord {
            step: self.step,
            pivot,
            angle,
            half,
            rule,
            mass: integrals.g,
            ratio: r,
            drift,
            h_ratio,
            kwar2_margin: (bound - h_ratio) / bound.abs(),
            width: set.width(),
            diameter: set.diameter(),
        });
        self.current = set;
        self.integrals = integrals;
        Ok(())
    }
}

fn one_dimensional(setup: &ThetaSetup) -> Result<LocalizationResult> {
    let bx = setup
        .base()
        .support_box()
        .ok_or_else(|| Error::UndefinedMeasure("empty support".into()))?;
    let (lo, hi) = bx[0];
    let n = PROFILE_POINTS;
    let profile = (0..n)
        .map(|k| ProfileSample { t: lo + (hi - lo) * (k as f64 + 0.5) / n as f64, density: 1.0 / (hi - lo), ratio: None })
        .collect();
    Ok(LocalizationResult {
        terminal_set: None,
        approx_interval: (vec![lo], vec![hi]),
        profile_axis: 0,
        measure_profile: profile,
        final_ratios: None,
        steps: Vec::new(),
        converged: true,
        max_drift: 0.0,
        step_tolerance: 0.0,
    })
}

/// Runs the localization loop for `f, g` from `setup` and the weight `h`.
///
/// Requires `h` bounded below by a positive constant and the strict
/// inequality `∫fh/∫gh < ∫f/∫g`; otherwise there is no violation to localize.
pub fn localize(setup: &ThetaSetup, h: &dyn PointFunction, settings: &LocalizeSettings) -> Result<LocalizationResult> {
    let d = setup.base().dim();
    if d == 1 {
        return one_dimensional(setup);
    }
    if !(2..=4).contains(&d) {
        return Err(Error::Domain(format!("localization needs dimension 1 to 4, got {d}")));
    }
    let (h_lo, h_hi) = h.range();
    if !(h_lo > 0.0 && h_hi.is_finite()) {
        return Err(Error::Precondition(format!("h must be bounded in [ε, M] with ε > 0, got range [{h_lo}, {h_hi}]")));
    }
    let spec = &settings.spec;
    let eng = Engine { setup, h, spec };
    let bx = setup
        .base()
        .support_box()
        .ok_or_else(|| Error::UndefinedMeasure("empty support".into()))?;
    let start = SpannedSet::rectangle([bx[0].0, bx[1].0], [bx[0].1, bx[1].1])?;
    let total = eng.region(start.polygon(), true)?;
    if !(total.g > 0.0 && total.gh > 0.0) {
        return Err(Error::UndefinedMeasure("g has no mass".into()));
    }
    let target = total.f / total.g;
    let bound = total.fh / total.gh;
    let step_tol = LocalizationState::step_tolerance(spec);
    if !(target - bound > step_tol * target.abs()) {
        return Err(Error::Precondition(format!(
            "no violation to localize: ∫fh/∫gh = {bound} is not below ∫f/∫g = {target}"
        )));
    }
    let mut state = LocalizationState {
        step: 0,
        current: start,
        integrals: total,
        pivot: None,
        ratio_target: target,
        h_ratio_bound: bound,
        initial_mass: total.g,
        history: Vec::new(),
    };
    while state.current.width() >= settings.stop_width && state.step < settings.max_steps {
        state.advance(&eng)?;
    }
    let set = state.current.clone();
    let (a, b) = (set.lo(), set.hi());
    let axis = usize::from(b[1] - a[1] > b[0] - a[0]);
    let (blo, bhi) = set.polygon().bounds();
    let n = PROFILE_POINTS;
    let mut profile = Vec::with_capacity(n);
    for k in 0..n {
        let t = blo[axis] + (bhi[axis] - blo[axis]) * (k as f64 + 0.5) / n as f64;
        let (f, g) = eng.slice(set.polygon(), axis, t)?;
        profile.push(ProfileSample { t, density: g, ratio: ratio(f, g, state.initial_mass) });
    }
    let fin = &state.integrals;
    let r = fin.f / fin.g;
    let hr = fin.fh / fin.gh;
    let final_ratios = FinalRatios {
        ratio: r,
        ratio_target: target,
        drift: (r - target).abs() / target.abs(),
        h_ratio: hr,
        strict_margin: (target - hr) / target.abs(),
    };
    let max_drift = state.history.iter().map(|s| s.drift).fold(0.0, f64::max);
    Ok(LocalizationResult {
        converged: set.width() < settings.stop_width,
        terminal_set: Some(set),
        approx_interval: (a.to_vec(), b.to_vec()),
        profile_axis: axis,
        measure_profile: profile,
        final_ratios: Some(final_ratios),
        steps: state.history,
        max_drift,
        step_tolerance: step_tol,
    })
}

/// Ratios on the two parts of a spanned set cut by the vertical line
/// `x = x0`: the left part's `f/g` ratio must not be below the right part's.
pub fn check_horline(setup: &ThetaSetup, spanned: &SpannedSet, x0: f64, spec: &QuadratureSpec) -> Result<VerificationReport> {
    if setup.base().dim() < 2 {
        return Err(Error::Domain("the dividing line needs dimension ≥ 2".into()));
    }
    let poly = spanned.polygon();
    let (yl, yh) = poly
        .chord_at_x(x0)
        .ok_or_else(|| Error::Precondition(format!("the line x = {x0} misses the set")))?;
    let mid = [x0, 0.5 * (yl + yh)];
    if !spanned.contains_interior(mid) {
        return Err(Error::Precondition(format!("the line x = {x0} does not meet the interior of the set")));
    }
    let (right, left) = spanned.split_spanned(mid, 0.0)?;
    let h = Constant(1.0);
    let eng = Engine { setup, h: &h, spec };
    let total = eng.region(poly, false)?;
    let l = eng.region(left.polygon(), false)?;
    let r = eng.region(right.polygon(), false)?;
    let lr = ratio(l.f, l.g, total.g);
    let rr = ratio(r.f, r.g, total.g);
    let mut rep = VerificationReport::new("horline", crate::theta::THETA_TOL, "quadrature");
    rep.record(relative_margin(lr, rr));
    if setup.is_custom() {
        rep.flag("custom pair: outside the proven class");
    }
    #[derive(Serialize)]
    struct Sides {
        x0: f64,
        left: Option<f64>,
        right: Option<f64>,
    }
    Ok(rep.with_details(&Sides { x0, left: lr, right: rr }))
}

struct Constant(f64);

impl PointFunction for Constant {
    fn value(&self, _: &[f64]) -> f64 {
        self.0
    }
    fn range(&self) -> (f64, f64) {
        (self.0, self.0)
    }
}

/// `h(x) = floor + clamp((w·(x₀, x₁) − offset)/width, 0, 1)` with `w ≥ 0`:
/// a continuous coordinate-wise increasing ramp in the plane.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ramp {
    pub weights: [f64; 2],
    pub offset: f64,
    pub width: f64,
    pub floor: f64,
}

impl PointFunction for Ramp {
    fn value(&self, x: &[f64]) -> f64 {
        let s = self.weights[0] * x[0] + self.weights[1] * x[1];
        self.floor + ((s - self.offset) / self.width).clamp(0.0, 1.0)
    }

    fn breaks(&self, axis: usize, x: &[f64], known: &[bool], out: &mut Vec<f64>) {
        if axis > 1 || self.weights[axis] == 0.0 {
            return;
        }
        let other = 1 - axis;
        let rest = if self.weights[other] == 0.0 {
            0.0
        } else if known[other] {
            self.weights[other] * x[other]
        } else {
            return;
        };
        for level in [self.offset, self.offset + self.width] {
            out.push((level - rest) / self.weights[axis]);
        }
    }

    fn range(&self) -> (f64, f64) {
        (self.floor, self.floor + 1.0)
    }
}

/// A slice pair on a triangle parent with an increasing ramp `h` for which
/// the strict inequality was verified by quadrature.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticInstance {
    pub pair: SlicePair,
    pub h: Ramp,
    /// `(∫f/∫g − ∫fh/∫gh)/(∫f/∫g)`.
    pub violation_margin: f64,
}

/// Parent `{x ∈ ℝ₊³ : Σ xᵢ ≤ L}` with random `L`, `z₁ < z₂` and `uᵢ`; `h`
/// found by a grid search over increasing ramps.
pub fn synthetic_instance(rng: &mut ChaCha8Rng, spec: &QuadratureSpec) -> Result<SyntheticInstance> {
    for _ in 0..100 {
        let level = rng.random_range(2.0..4.0);
        let parent = OrliczModel::simplex(3, level)?;
        let z1 = rng.random_range(0.05..0.4) * level;
        let z2 = z1 + rng.random_range(0.1..0.4) * level;
        let u: Vec<LogConcaveScalar> = (0..2)
            .map(|_| if rng.random_bool(0.5) { random_weight(rng, false) } else { LogConcaveScalar::unit() })
            .collect();
        let Ok(pair) = SlicePair::with_u(parent, z1, z2, u) else { continue };
        let reach = level - z1;
        let phi0 = rng.random_range(0.0..HALF_PI);
        let setup = ThetaSetup::Slice(pair);
        for k in 0..8 {
            let phi = (phi0 + k as f64 * HALF_PI / 8.0) % HALF_PI;
            let weights = [phi.cos(), phi.sin()];
            for frac in [0.2, 0.4, 0.6, 0.1, 0.8] {
                let h = Ramp { weights, offset: frac * reach, width: 0.3 * reach, floor: 0.1 };
                let eng = Engine { setup: &setup, h: &h, spec };
                let bx = setup.base().support_box().expect("nondegenerate");
                let rect = Polygon::rectangle([bx[0].0, bx[1].0], [bx[0].1, bx[1].1])?;
                let t = eng.region(&rect, true)?;
                let target = t.f / t.g;
                let margin = (target - t.fh / t.gh) / target;
                if margin > 1e-6 {
                    let ThetaSetup::Slice(pair) = setup else { unreachable!() };
                    return Ok(SyntheticInstance { pair, h, violation_margin: margin });
                }
            }
        }
    }
    Err(Error::Precondition("no increasing ramp produced a violation".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn simplex_setup() -> ThetaSetup {
        ThetaSetup::Slice(SlicePair::new(OrliczModel::simplex(3, 3.0).unwrap(), 0.2, 0.8).unwrap())
    }

    #[test]
    fn dyadic_pivot_order() {
        let sq = SpannedSet::rectangle([0.0, 0.0], [2.0, 2.0]).unwrap();
        assert_eq!(dyadic_pivot(&sq), Some([1.0, 1.0]));
        let thin = SpannedSet::rectangle([0.3, 0.3], [0.35, 0.9]).unwrap();
        let p = dyadic_pivot(&thin).unwrap();
        assert!(thin.contains_interior(p));
        assert_eq!(p, [0.3125, 0.3125]);
    }

    #[test]
    fn horline_triangle_oracle() {
        // K = [0, 2.8]², x0 = 1: left 1.7/2.3, right 0.72/1.62.
        let setup = simplex_setup();
        let k = SpannedSet::rectangle([0.0, 0.0], [2.8, 2.8]).unwrap();
        let r = check_horline(&setup, &k, 1.0, &QuadratureSpec::default()).unwrap();
        #[derive(serde::Deserialize)]
        struct Sides {
            left: f64,
            right: f64,
        }
        let s: Sides = serde_json::from_value(r.details.clone()).unwrap();
        assert!((s.left - 1.7 / 2.3).abs() < 1e-12);
        assert!((s.right - 0.72 / 1.62).abs() < 1e-12);
        assert!(r.passed);
        assert!(matches!(check_horline(&setup, &k, 3.5, &QuadratureSpec::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn horline_cube_is_equality() {
        let setup = ThetaSetup::Slice(SlicePair::new(OrliczModel::cube(3, 1.0).unwrap(), 0.2, 0.6).unwrap());
        let k = SpannedSet::rectangle([0.0, 0.0], [1.0, 1.0]).unwrap();
        let r = check_horline(&setup, &k, 0.4, &QuadratureSpec::default()).unwrap();
        assert!(r.worst_margin.unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_h_has_nothing_to_localize() {
        let setup = simplex_setup();
        let e = localize(&setup, &Constant(1.0), &LocalizeSettings::default());
        assert!(matches!(e, Err(Error::Precondition(m)) if m.contains("no violation")));
    }

    #[test]
    fn one_dimensional_returns_support() {
        let setup = ThetaSetup::Slice(SlicePair::new(OrliczModel::simplex(2, 2.0).unwrap(), 0.5, 1.0).unwrap());
        let r = localize(&setup, &Constant(1.0), &LocalizeSettings::default()).unwrap();
        assert_eq!(r.approx_interval, (vec![0.0], vec![1.5]));
        assert!(r.steps.is_empty());
        assert!(r.measure_profile.iter().all(|p| (p.density - 1.0 / 1.5).abs() < 1e-15));
    }

    #[test]
    fn synthetic_instance_localizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = QuadratureSpec::default();
        let inst = synthetic_instance(&mut rng, &spec).unwrap();
        let setup = ThetaSetup::Slice(inst.pair.clone());
        let res = localize(&setup, &inst.h, &LocalizeSettings::default()).unwrap();
        let rep = res.report();
        assert!(res.converged, "{} steps", res.steps.len());
        assert!(rep.passed, "{:?} {:?}", rep.flags, res.final_ratios);
        let a = &res.approx_interval;
        assert!(a.0[0] <= a.1[0] && a.0[1] <= a.1[1]);
        let mut buf = Vec::new();
        res.write_steps_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), res.steps.len() + 1);
    }

    #[test]
    fn homogeneous_instance_keeps_invariants() {
        // Unit weights: every cone from the origin has the same ratio, so the
        // split lines pass through the apex and the width shrinks slowly.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = QuadratureSpec::default();
        let inst = synthetic_instance(&mut rng, &spec).unwrap();
        let setup = ThetaSetup::Slice(inst.pair.clone());
        let settings = LocalizeSettings { max_steps: 30, ..Default::default() };
        let res = localize(&setup, &inst.h, &settings).unwrap();
        assert!(!res.converged);
        assert!(res.max_drift <= res.step_tolerance);
        let fin = res.final_ratios.unwrap();
        assert!(fin.strict_margin > 0.0);
        assert!(res.steps.windows(2).all(|w| w[1].mass <= w[0].mass * (1.0 + 1e-9)));
    }
}
