//! Deterministic integration of Orlicz-based densities in dimension ≤ 4.
//!
//! Integrals are computed as iterated one-dimensional adaptive Gauss–Kronrod
//! (7/15) rules over the free axes, outermost axis first. Every level works on
//! the exact support of the slice it integrates: the upper end of axis `k` is
//! `f_k⁻¹(cap_hi − S − tail)` where `S` is the Young sum of the coordinates
//! already fixed and `tail` the smallest possible contribution of the inner
//! axes. Discontinuities are placed on panel boundaries: Young and weight
//! breakpoints, test-function breakpoints and, on the innermost axis, the
//! preimages of the cap breakpoints. With the discontinuities resolved the
//! integrands are piecewise smooth and the rules converge quickly.
//!
//! Several integrands that share Young parts and weights are integrated in one
//! pass as *channels*; each channel picks a cap and a product of point
//! functions.

use std::cell::Cell;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::OrliczModel;
use crate::scalar::{LogConcaveScalar, YoungFunction};
use crate::spanned::Polygon;
use crate::testfn::PointFunction;

pub const MAX_DIM: usize = 4;
pub const MAX_CHANNELS: usize = 8;
const MAX_CAPS: usize = 8;
const MAX_FACTORS: usize = 8;

type Vals = [f64; MAX_CHANNELS];
const ZERO: Vals = [0.0; MAX_CHANNELS];

/// Ratios whose denominator falls below this fraction of the integrand scale
/// are reported as undefined.
pub const UNDEFINED_RATIO: f64 = 1e-12;

/// Accuracy and budget of the adaptive rules.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadratureSpec {
    /// Relative tolerance per channel and level.
    pub rel_tol: f64,
    /// Absolute tolerance per channel and level.
    pub abs_tol: f64,
    /// Maximal bisection depth of a panel.
    pub max_depth: usize,
    /// Maximal number of panels per one-dimensional integral.
    pub max_intervals: usize,
    /// Initial number of equal panels per piece on the outer levels.
    pub panels: usize,
    /// Optional per-axis box intersected with the support.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Measure every channel's error against the largest channel value
    /// instead of its own (suits combinations like covariances, whose
    /// accuracy is judged relative to the mass times the factor ranges).
    pub joint: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-15,
            max_depth: 40,
            max_intervals: 400,
            panels: 1,
            bounds: None,
            joint: false,
        }
    }
}

impl QuadratureSpec {
    pub fn with_tolerance(rel_tol: f64, abs_tol: f64) -> Self {
        QuadratureSpec { rel_tol, abs_tol, ..Self::default() }
    }

    /// When a bounding box is given it must contain the model's support box.
    pub fn check_bounds(&self, model: &OrliczModel) -> Result<()> {
        let (Some(b), Some(support)) = (&self.bounds, model.support_box()) else { return Ok(()) };
        if b.len() != model.dim() {
            return Err(Error::Domain("bounding box dimension differs from the model".into()));
        }
        for (k, (&(l, h), &(sl, sh))) in b.iter().zip(&support).enumerate() {
            if l > sl + 1e-12 || h < sh - 1e-12 {
                return Err(Error::Domain(format!(
                    "bounding box [{l}, {h}] on axis {k} does not cover the support [{sl}, {sh}]"
                )));
            }
        }
        Ok(())
    }
}

/// Channel `k` integrates `caps[cap](Σf)·Πw·Π factors[j]`.
#[derive(Clone, Debug)]
pub struct Channel {
    pub cap: usize,
    pub factors: Vec<usize>,
}

/// Result of a multi-channel integration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
}

/// An integration problem over the free axes of a model.
pub struct Problem<'a> {
    young: &'a [YoungFunction],
    weights: &'a [LogConcaveScalar],
    caps: Vec<LogConcaveScalar>,
    factors: Vec<&'a dyn PointFunction>,
    channels: Vec<Channel>,
    fixed: Vec<Option<f64>>,
    region: Option<&'a Polygon>,
}

impl<'a> Problem<'a> {
    /// Problem with the model's cap as cap 0 and no channels yet.
    pub fn new(model: &'a OrliczModel) -> Self {
        Problem {
            young: model.young(),
            weights: model.weights(),
            caps: vec![model.cap().clone()],
            factors: Vec::new(),
            channels: Vec::new(),
            fixed: vec![None; model.dim()],
            region: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.young.len()
    }

    pub fn add_cap(&mut self, cap: LogConcaveScalar) -> usize {
        self.caps.push(cap);
        self.caps.len() - 1
    }

    pub fn add_factor(&mut self, f: &'a dyn PointFunction) -> usize {
        self.factors.push(f);
        self.factors.len() - 1
    }

    pub fn add_channel(&mut self, cap: usize, factors: Vec<usize>) -> usize {
        self.channels.push(Channel { cap, factors });
        self.channels.len() - 1
    }

    /// Holds `axis` at `value` (the integral becomes a slice integral).
    pub fn fix(&mut self, axis: usize, value: f64) -> &mut Self {
        self.fixed[axis] = Some(value);
        self
    }

    /// Restricts axes `(0, 1)` to a convex polygon.
    pub fn restrict_to(&mut self, region: &'a Polygon) -> &mut Self {
        self.region = Some(region);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.dim() > MAX_DIM {
            return Err(Error::DimensionTooLarge { dim: self.dim(), max: MAX_DIM });
        }
        if self.channels.is_empty() || self.channels.len() > MAX_CHANNELS {
            return Err(Error::Domain(format!("need 1..={MAX_CHANNELS} channels, got {}", self.channels.len())));
        }
        if self.caps.len() > MAX_CAPS || self.factors.len() > MAX_FACTORS {
            return Err(Error::Domain("too many caps or factors".into()));
        }
        for ch in &self.channels {
            if ch.cap >= self.caps.len() || ch.factors.iter().any(|&f| f >= self.factors.len()) {
                return Err(Error::Domain("channel refers to a missing cap or factor".into()));
            }
        }
        if self.region.is_some() && self.dim() < 2 {
            return Err(Error::Domain("a planar region needs dimension ≥ 2".into()));
        }
        for f in &self.factors {
            let (lo, hi) = f.range();
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite("point function with unbounded range".into()));
            }
        }
        Ok(())
    }

    /// Upper bound of the density times the volume of the free box; the
    /// reference scale for the undefined-ratio convention (point functions
    /// are not included).
    pub fn scale(&self) -> f64 {
        let spec = QuadratureSpec::default();
        let Some(engine) = Engine::build(self, &spec) else { return 0.0 };
        let cap_sup = self.caps.iter().map(|c| c.sup_on(0.0, f64::INFINITY)).fold(0.0, f64::max);
        let mut s = cap_sup.min(f64::MAX);
        for (a, w) in self.weights.iter().enumerate() {
            s *= w.sup_on(engine.lo[a], engine.hi[a]).min(f64::MAX);
        }
        for &a in &engine.free {
            s *= engine.hi[a] - engine.lo[a];
        }
        s
    }

    /// Integrates every channel.
    pub fn integrate(&self, spec: &QuadratureSpec) -> Result<Estimate> {
        self.validate()?;
        let nc = self.channels.len();
        let Some(engine) = Engine::build(self, spec) else {
            return Ok(Estimate { values: vec![0.0; nc], errors: vec![0.0; nc], evaluations: 0, converged: true });
        };
        let mut x = [0.0; MAX_DIM];
        let mut known = [false; MAX_DIM];
        let mut s = 0.0;
        let mut wp = 1.0;
        for (a, v) in self.fixed.iter().enumerate() {
            if let Some(v) = *v {
                x[a] = v;
                known[a] = true;
                if !(v >= engine.lo[a] && v <= engine.hi[a]) {
                    wp = 0.0;
                    continue;
                }
                let fv = self.young[a].value(v);
                s += fv;
                wp *= self.weights[a].eval(v);
            }
        }
        if let Some(r) = self.region {
            if known[0] && known[1] && !r.contains([x[0], x[1]]) {
                wp = 0.0;
            }
        }
        let (vals, errs) = if wp == 0.0 || !s.is_finite() {
            (ZERO, ZERO)
        } else if engine.free.is_empty() {
            (engine.point(&x, s, wp), ZERO)
        } else {
            engine.level(0, &mut x, &mut known, s, wp)
        };
        if engine.nonfinite.get() {
            return Err(Error::NonFinite("point function returned a non-finite value".into()));
        }
        Ok(Estimate {
            values: vals[..nc].to_vec(),
            errors: errs[..nc].to_vec(),
            evaluations: engine.evals.get(),
            converged: !engine.truncated.get(),
        })
    }
}

struct Engine<'p, 'a> {
    p: &'p Problem<'a>,
    spec: &'p QuadratureSpec,
    free: Vec<usize>,
    lo: [f64; MAX_DIM],
    hi: [f64; MAX_DIM],
    /// `tail[k]`: Young sum of the free axes after level `k` at their lower ends.
    tail: Vec<f64>,
    cap_hi: f64,
    cap_breaks: Vec<f64>,
    static_breaks: Vec<Vec<f64>>,
    evals: Cell<usize>,
    nonfinite: Cell<bool>,
    truncated: Cell<bool>,
}

impl<'p, 'a> Engine<'p, 'a> {
    fn build(p: &'p Problem<'a>, spec: &'p QuadratureSpec) -> Option<Self> {
        let n = p.dim();
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        let mut static_breaks = Vec::with_capacity(n);
        for a in 0..n {
            let f = &p.young[a];
            if f.is_identically_infinite() {
                return None;
            }
            let (wl, wh) = p.weights[a].support()?;
            let mut l = wl.max(0.0);
            let mut h = wh.min(f.cutoff().unwrap_or(f64::INFINITY));
            if let Some(b) = &spec.bounds {
                l = l.max(b[a].0);
                h = h.min(b[a].1);
            }
            lo[a] = l;
            hi[a] = h;
            let mut br = f.breakpoints();
            br.extend(p.weights[a].breakpoints());
            static_breaks.push(br);
        }
        let mut cap_hi = f64::NEG_INFINITY;
        let mut cap_breaks = Vec::new();
        for c in &p.caps {
            if let Some((_, h)) = c.support() {
                cap_hi = cap_hi.max(h);
                cap_breaks.extend(c.breakpoints());
            }
        }
        if !cap_hi.is_finite() {
            return None;
        }
        cap_breaks.sort_by(f64::total_cmp);
        cap_breaks.dedup();
        let free: Vec<usize> = (0..n).filter(|&a| p.fixed[a].is_none()).collect();
        let mut tail = vec![0.0; free.len()];
        for k in (0..free.len()).rev() {
            if k + 1 < free.len() {
                let a = free[k + 1];
                tail[k] = tail[k + 1] + p.young[a].value(lo[a]);
            }
        }
        // Finite upper ends for the free axes from the cap.
        let fixed_sum: f64 = (0..n).filter_map(|a| p.fixed[a].map(|v| p.young[a].value(v.max(0.0)))).sum();
        let lo_sum: f64 = free.iter().map(|&a| p.young[a].value(lo[a])).sum();
        for &a in &free {
            let budget = cap_hi - fixed_sum - (lo_sum - p.young[a].value(lo[a]));
            let reach = p.young[a].inverse(budget).unwrap_or(lo[a]);
            hi[a] = hi[a].min(reach);
            if !hi[a].is_finite() {
                return None;
            }
        }
        Some(Engine {
            p,
            spec,
            free,
            lo,
            hi,
            tail,
            cap_hi,
            cap_breaks,
            static_breaks,
            evals: Cell::new(0),
            nonfinite: Cell::new(false),
            truncated: Cell::new(false),
        })
    }

    /// Kinks of the outer integrand over a polygon: abscissae where an edge
    /// (a moving end of the inner chord) crosses a breakpoint of the inner
    /// axis or a cap level set shifted by the deeper axes' corner sums.
    fn edge_kinks(&self, r: &Polygon, k: usize, s: f64, pts: &mut Vec<f64>) {
        let p = self.p;
        let (f0, f1) = (&p.young[0], &p.young[1]);
        let mut ys: Vec<f64> = vec![self.lo[1], self.hi[1]];
        ys.extend_from_slice(&self.static_breaks[1]);
        let mut sums = vec![0.0f64];
        for &j in &self.free[k + 2..] {
            let (lj, hj) = (self.lo[j], self.hi[j]);
            let mut vals: Vec<f64> = [lj, hj]
                .iter()
                .chain(&self.static_breaks[j])
                .filter(|&&t| t >= lj && t <= hj)
                .map(|&t| p.young[j].value(t))
                .filter(|v| v.is_finite())
                .collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let mut next: Vec<f64> = sums.iter().flat_map(|&a0| vals.iter().map(move |&v| a0 + v)).collect();
            next.sort_by(f64::total_cmp);
            next.dedup_by(|u, v| (*u - *v).abs() <= 1e-14 * (1.0 + v.abs()));
            sums = next;
        }
        let mut targets: Vec<f64> = Vec::new();
        for &b in &self.cap_breaks {
            for &sm in &sums {
                targets.push(b - s - sm);
            }
        }
        let vs = r.vertices();
        for i in 0..vs.len() {
            let (u, v) = (vs[i], vs[(i + 1) % vs.len()]);
            let (xa, xb) = if u[0] < v[0] { (u, v) } else { (v, u) };
            let dx = xb[0] - xa[0];
            if !(dx > 0.0) {
                continue;
            }
            let slope = (xb[1] - xa[1]) / dx;
            let y_at = |x: f64| xa[1] + slope * (x - xa[0]);
            if slope != 0.0 {
                for &y in &ys {
                    let x = xa[0] + (y - xa[1]) / slope;
                    if x > xa[0] && x < xb[0] {
                        pts.push(x);
                    }
                }
            }
            // The Young sum along an edge is convex in x: sample it and
            // bisect every sign change against each level.
            const SAMPLES: usize = 32;
            let phi = |x: f64| {
                let y = y_at(x);
                if y < 0.0 {
                    return f64::INFINITY;
                }
                f0.value(x.max(0.0)) + f1.value(y)
            };
            let grid: Vec<(f64, f64)> = (0..=SAMPLES)
                .map(|i| {
                    let x = xa[0] + dx * i as f64 / SAMPLES as f64;
                    (x, phi(x))
                })
                .collect();
            for &t in &targets {
                for w in grid.windows(2) {
                    let ((mut a, fa), (mut b, fb)) = (w[0], w[1]);
                    if (fa - t).signum() == (fb - t).signum() || fa.is_nan() || fb.is_nan() {
                        continue;
                    }
                    let left_above = fa > t;
                    for _ in 0..200 {
                        let m = 0.5 * (a + b);
                        if !(m > a && m < b) {
                            break;
                        }
                        if (phi(m) > t) != left_above {
                            b = m;
                        } else {
                            a = m;
                        }
                    }
                    pts.push(0.5 * (a + b));
                }
            }
        }
    }

    #[inline]
    fn point(&self, x: &[f64; MAX_DIM], s: f64, wp: f64) -> Vals {
        self.evals.set(self.evals.get() + 1);
        let p = self.p;
        let mut capv = [0.0; MAX_CAPS];
        let mut any = false;
        for (j, c) in p.caps.iter().enumerate() {
            capv[j] = c.eval(s);
            any |= capv[j] != 0.0;
        }
        if !any {
            return ZERO;
        }
        let xs = &x[..p.dim()];
        let mut fv = [0.0; MAX_FACTORS];
        for (j, f) in p.factors.iter().enumerate() {
            let v = f.value(xs);
            if !v.is_finite() {
                self.nonfinite.set(true);
            }
            fv[j] = v;
        }
        let mut out = ZERO;
        for (k, ch) in p.channels.iter().enumerate() {
            let mut v = capv[ch.cap] * wp;
            for &j in &ch.factors {
                v *= fv[j];
            }
            out[k] = v;
        }
        out
    }

    fn level(&self, k: usize, x: &mut [f64; MAX_DIM], known: &mut [bool; MAX_DIM], s: f64, wp: f64) -> (Vals, Vals) {
        let p = self.p;
        let a = self.free[k];
        let innermost = k + 1 == self.free.len();
        let f = &p.young[a];
        let w = &p.weights[a];

        let mut lo = self.lo[a];
        let mut hi = self.hi[a];
        let Some(reach) = f.inverse(self.cap_hi - s - self.tail[k]) else { return (ZERO, ZERO) };
        hi = hi.min(reach);

        let mut pts: Vec<f64> = Vec::with_capacity(16);
        if let Some(r) = p.region {
            let range = match a {
                0 if known[1] => r.chord_at_y(x[1]),
                0 => {
                    let (blo, bhi) = r.bounds();
                    pts.extend(r.vertices().iter().map(|v| v[0]));
                    if !innermost && self.free[k + 1] == 1 {
                        self.edge_kinks(r, k, s, &mut pts);
                    }
                    Some((blo[0], bhi[0]))
                }
                1 => r.chord_at_x(x[0]),
                _ => Some((f64::NEG_INFINITY, f64::INFINITY)),
            };
            let Some((rl, rh)) = range else { return (ZERO, ZERO) };
            lo = lo.max(rl);
            hi = hi.min(rh);
        }
        if !(hi > lo) {
            return (ZERO, ZERO);
        }

        pts.extend_from_slice(&self.static_breaks[a]);
        for fac in &p.factors {
            fac.breaks(a, &x[..p.dim()], &known[..p.dim()], &mut pts);
        }
        let base = f.value(lo);
        let push_level = |pts: &mut Vec<f64>, u: f64| {
            if u >= base {
                if let Some(t) = f.inverse(u) {
                    pts.push(t);
                }
            }
        };
        if innermost {
            for &b in &self.cap_breaks {
                push_level(&mut pts, b - s);
            }
        } else {
            // The inner integral is kinked where a cap level set passes a
            // corner of the inner axes' static breakpoints.
            let mut sums = vec![0.0f64];
            let mut cand: Vec<f64> = Vec::new();
            for &j in &self.free[k + 1..] {
                let (lj, hj) = (self.lo[j], self.hi[j]);
                cand.clear();
                cand.push(lj);
                cand.push(hj);
                cand.extend_from_slice(&self.static_breaks[j]);
                for fac in &p.factors {
                    fac.breaks(j, &x[..p.dim()], &known[..p.dim()], &mut cand);
                }
                let fj = &p.young[j];
                let mut vals: Vec<f64> =
                    cand.iter().filter(|&&t| t >= lj && t <= hj).map(|&t| fj.value(t)).filter(|v| v.is_finite()).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                let mut next = Vec::with_capacity(sums.len() * vals.len());
                for &a0 in &sums {
                    for &v in &vals {
                        next.push(a0 + v);
                    }
                }
                next.sort_by(f64::total_cmp);
                next.dedup_by(|u, v| (*u - *v).abs() <= 1e-14 * (1.0 + v.abs()));
                sums = next;
            }
            for &b in &self.cap_breaks {
                for &sm in &sums {
                    push_level(&mut pts, b - s - sm);
                }
            }
        }
        pts.retain(|&t| t > lo && t < hi);
        pts.push(lo);
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|u, v| (*u - *v).abs() <= 1e-15 * (1.0 + v.abs()));
        if !innermost && self.spec.panels > 1 {
            let m = self.spec.panels;
            let mut refined = Vec::with_capacity(pts.len() * m);
            for win in pts.windows(2) {
                for j in 0..m {
                    refined.push(win[0] + (win[1] - win[0]) * j as f64 / m as f64);
                }
            }
            refined.push(*pts.last().unwrap());
            pts = refined;
        }

        let nc = p.channels.len();
        let mut g = |t: f64| -> Vals {
            let fv = f.value(t);
            if fv == f64::INFINITY {
                return ZERO;
            }
            let wv = w.eval(t);
            if wv == 0.0 {
                return ZERO;
            }
            x[a] = t;
            let s2 = s + fv;
            if innermost {
                self.point(x, s2, wp * wv)
            } else {
                known[a] = true;
                let (v, _) = self.level(k + 1, x, known, s2, wp * wv);
                known[a] = false;
                v
            }
        };
        let (v, e, ok) = if innermost {
            adaptive(&mut g, &pts, nc, self.spec)
        } else {
            // Outer integrands behave like powers of the distance to the
            // piece ends (support ends, kinks of the inner domain); the
            // quintic smoothstep substitution flattens such endpoint
            // singularities.
            let mut h = |u: f64| -> Vals {
                let i = (u.floor() as usize).min(pts.len() - 2);
                let r = u - i as f64;
                let len = pts[i + 1] - pts[i];
                let phi = r * r * r * (10.0 + r * (-15.0 + 6.0 * r));
                let jac = 30.0 * r * r * (1.0 - r) * (1.0 - r) * len;
                if jac == 0.0 {
                    return ZERO;
                }
                let mut v = g(pts[i] + len * phi);
                for c in v.iter_mut().take(nc) {
                    *c *= jac;
                }
                v
            };
            let upts: Vec<f64> = (0..pts.len()).map(|i| i as f64).collect();
            adaptive(&mut h, &upts, nc, self.spec)
        };
        if !ok {
            self.truncated.set(true);
        }
        (v, e)
    }
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> Vals>(f: &mut F, a: f64, b: f64, nc: usize) -> (Vals, Vals) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = ZERO;
    let mut g = ZERO;
    let mut asc = ZERO;
    let mut fvals = [ZERO; 15];
    fvals[7] = fc;
    for ch in 0..nc {
        k[ch] = WGK[7] * fc[ch];
        g[ch] = WG[3] * fc[ch];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fvals[j] = f1;
        fvals[14 - j] = f2;
        for ch in 0..nc {
            let s = f1[ch] + f2[ch];
            k[ch] += WGK[j] * s;
            if j % 2 == 1 {
                g[ch] += WG[j / 2] * s;
            }
        }
    }
    let mut val = ZERO;
    let mut err = ZERO;
    for ch in 0..nc {
        let mean = 0.5 * k[ch];
        for (j, fv) in fvals.iter().enumerate() {
            let wj = WGK[if j < 8 { j } else { 14 - j }];
            asc[ch] += wj * (fv[ch] - mean).abs();
        }
        val[ch] = k[ch] * h;
        let resasc = asc[ch] * h.abs();
        let mut e = ((k[ch] - g[ch]) * h).abs();
        if resasc != 0.0 && e != 0.0 {
            e = resasc * (200.0 * e / resasc).powf(1.5).min(1.0);
        }
        // Round-off floor.
        let floor = 50.0 * f64::EPSILON * val[ch].abs();
        err[ch] = e.max(floor);
    }
    (val, err)
}

struct Panel {
    a: f64,
    b: f64,
    val: Vals,
    err: Vals,
    depth: usize,
}

/// Globally adaptive integration over the pieces delimited by `pts`
/// (sorted, first and last are the ends). Returns value, error and whether
/// the tolerance was met.
fn adaptive<F: FnMut(f64) -> Vals>(f: &mut F, pts: &[f64], nc: usize, spec: &QuadratureSpec) -> (Vals, Vals, bool) {
    let mut panels: Vec<Panel> = Vec::with_capacity(pts.len() + 16);
    for win in pts.windows(2) {
        if win[1] > win[0] {
            let (val, err) = gk15(f, win[0], win[1], nc);
            panels.push(Panel { a: win[0], b: win[1], val, err, depth: 0 });
        }
    }
    loop {
        let mut tv = ZERO;
        let mut te = ZERO;
        for p in &panels {
            for ch in 0..nc {
                tv[ch] += p.val[ch];
                te[ch] += p.err[ch];
            }
        }
        let mut tol = ZERO;
        let mut done = true;
        let largest = (0..nc).map(|ch| tv[ch].abs()).fold(0.0, f64::max);
        for ch in 0..nc {
            let reference = if spec.joint { largest } else { tv[ch].abs() };
            tol[ch] = spec.abs_tol.max(spec.rel_tol * reference).max(f64::MIN_POSITIVE);
            if te[ch] > tol[ch] {
                done = false;
            }
        }
        if done {
            return (tv, te, true);
        }
        if panels.len() >= spec.max_intervals {
            return (tv, te, false);
        }
        let mut best = None;
        let mut best_score = 0.0;
        for (idx, p) in panels.iter().enumerate() {
            if p.depth >= spec.max_depth {
                continue;
            }
            let score = (0..nc).map(|ch| p.err[ch] / tol[ch]).fold(0.0, f64::max);
            if score > best_score {
                best_score = score;
                best = Some(idx);
            }
        }
        let Some(idx) = best else { return (tv, te, false) };
        let p = panels.swap_remove(idx);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            let mut p = p;
            p.depth = spec.max_depth;
            panels.push(p);
            continue;
        }
        let (v1, e1) = gk15(f, p.a, mid, nc);
        let (v2, e2) = gk15(f, mid, p.b, nc);
        panels.push(Panel { a: p.a, b: mid, val: v1, err: e1, depth: p.depth + 1 });
        panels.push(Panel { a: mid, b: p.b, val: v2, err: e2, depth: p.depth + 1 });
    }
}

/// Adaptive integral of a scalar function over `[a, b]` with extra breakpoints.
pub fn integrate_1d<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, breaks: &[f64], spec: &QuadratureSpec) -> (f64, f64) {
    if !(b > a) {
        return (0.0, 0.0);
    }
    let mut pts: Vec<f64> = breaks.iter().cloned().filter(|&t| t > a && t < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut g = |t: f64| {
        let mut v = ZERO;
        v[0] = f(t);
        v
    };
    let (v, e, _) = adaptive(&mut g, &pts, 1, spec);
    (v[0], e[0])
}

/// Iterated adaptive integral of `f` over a box (`lo[k] < hi[k]`), dimension ≤ 4.
pub fn integrate_box<F: Fn(&[f64]) -> f64>(f: F, lo: &[f64], hi: &[f64], spec: &QuadratureSpec) -> f64 {
    fn rec<F: Fn(&[f64]) -> f64>(f: &F, x: &mut Vec<f64>, k: usize, lo: &[f64], hi: &[f64], spec: &QuadratureSpec) -> f64 {
        if k == lo.len() {
            return f(x);
        }
        let mut g = |t: f64| {
            x[k] = t;
            rec(f, x, k + 1, lo, hi, spec)
        };
        integrate_1d(&mut g, lo[k], hi[k], &[], spec).0
    }
    let mut x = lo.to_vec();
    rec(&f, &mut x, 0, lo, hi, spec)
}

/// `∫ weight·s` over the orthant.
pub fn integrate(model: &OrliczModel, weight: Option<&dyn PointFunction>, spec: &QuadratureSpec) -> Result<f64> {
    spec.check_bounds(model)?;
    let mut p = Problem::new(model);
    let factors = weight.map(|w| vec![p.add_factor(w)]).unwrap_or_default();
    p.add_channel(0, factors);
    Ok(p.integrate(spec)?.values[0])
}

/// `∫ s` over the orthant.
pub fn mass(model: &OrliczModel, spec: &QuadratureSpec) -> Result<f64> {
    integrate(model, None, spec)
}

/// A ratio of integrals, or `None` when the denominator is below the
/// undefined-ratio threshold relative to `scale`.
pub fn ratio(num: f64, den: f64, scale: f64) -> Option<f64> {
    if den > UNDEFINED_RATIO * scale && den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// `c_{n,k} = ∫₀¹ (1 − s^{1/(n−k)})^k ds`.
pub fn c_constant(n: usize, k: usize) -> Result<f64> {
    if !(1 <= k && k < n) {
        return Err(Error::Domain(format!("c_constant needs 1 ≤ k < n, got n={n}, k={k}")));
    }
    let p = 1.0 / (n - k) as f64;
    let spec = QuadratureSpec { rel_tol: 1e-14, abs_tol: 1e-16, max_depth: 60, max_intervals: 2000, ..Default::default() };
    let (v, _) = integrate_1d(|s| (1.0 - s.powf(p)).powi(k as i32), 0.0, 1.0, &[], &spec);
    Ok(v)
}

/// Marginal density of the normalized model measure on one or two kept axes,
/// tabulated at cell centres of a regular grid over the projected support box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionDensity {
    pub keep: Vec<usize>,
    /// Grid coordinates per kept axis.
    pub axes: Vec<Vec<f64>>,
    /// Values in row-major order (first kept axis slowest).
    pub values: Vec<f64>,
    /// Total mass of the model used for normalization.
    pub normalization: f64,
    /// Extent of the projected support box per kept axis.
    pub box_bounds: Vec<(f64, f64)>,
    /// `λ_k` of the support of the projection.
    pub support_measure: f64,
}

impl ProjectionDensity {
    pub fn value_at(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (d, &i) in idx.iter().enumerate() {
            flat = flat * self.axes[d].len() + i;
        }
        self.values[flat]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Riemann-sum mass of the tabulated density.
    pub fn grid_mass(&self) -> f64 {
        let cell: f64 = self.box_bounds.iter().zip(&self.axes).map(|(&(l, h), ax)| (h - l) / ax.len() as f64).product();
        self.values.iter().sum::<f64>() * cell
    }

    /// Largest violation of midpoint concavity of `g^{1/root}` over grid
    /// triples with positive values; `≤ tol` means the test passes.
    pub fn root_concavity_deficit(&self, root: f64) -> f64 {
        let r = |v: f64| v.powf(1.0 / root);
        let mut worst = f64::NEG_INFINITY;
        match self.axes.len() {
            1 => {
                let m = self.values.len();
                for i in 0..m {
                    for j in (i + 2..m).step_by(2) {
                        let (a, b, c) = (self.values[i], self.values[j], self.values[(i + j) / 2]);
                        if a > 0.0 && b > 0.0 {
                            worst = worst.max(0.5 * (r(a) + r(b)) - r(c));
                        }
                    }
                }
            }
            _ => {
                let (m0, m1) = (self.axes[0].len(), self.axes[1].len());
                let step = (m0.max(m1) / 12).max(1);
                for i0 in (0..m0).step_by(step) {
                    for j0 in (0..m1).step_by(step) {
                        for i1 in (i0 % 2..m0).step_by(2 * step) {
                            for j1 in (j0 % 2..m1).step_by(2) {
                                let (a, b) = (self.value_at(&[i0, j0]), self.value_at(&[i1, j1]));
                                if a > 0.0 && b > 0.0 {
                                    let c = self.value_at(&[(i0 + i1) / 2, (j0 + j1) / 2]);
                                    worst = worst.max(0.5 * (r(a) + r(b)) - r(c));
                                }
                            }
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Marginal density on `keep` (one or two axes) at `resolution` cell centres
/// per kept axis.
pub fn projection_density(model: &OrliczModel, keep: &[usize], resolution: usize, spec: &QuadratureSpec) -> Result<ProjectionDensity> {
    let n = model.dim();
    if n > MAX_DIM {
        return Err(Error::DimensionTooLarge { dim: n, max: MAX_DIM });
    }
    if keep.is_empty() || keep.len() >= n || keep.len() > 2 || keep.iter().any(|&k| k >= n) {
        return Err(Error::Domain(format!("keep must be a proper subset of one or two axes, got {keep:?}")));
    }
    if keep.len() == 2 && keep[0] == keep[1] {
        return Err(Error::Domain("kept axes must differ".into()));
    }
    let total = mass(model, spec)?;
    let bx = model.support_box();
    let Some(bx) = bx.filter(|_| total > 0.0) else {
        return Err(Error::UndefinedMeasure("model has zero total mass".into()));
    };
    let axes: Vec<Vec<f64>> = keep
        .iter()
        .map(|&k| {
            let (l, h) = bx[k];
            (0..resolution).map(|i| l + (h - l) * (i as f64 + 0.5) / resolution as f64).collect()
        })
        .collect();
    let slice = |pt: &[f64]| -> Result<f64> {
        let mut p = Problem::new(model);
        for (&k, &v) in keep.iter().zip(pt) {
            p.fix(k, v);
        }
        p.add_channel(0, vec![]);
        Ok(p.integrate(spec)?.values[0] / total)
    };
    let mut values = Vec::new();
    if keep.len() == 1 {
        for &v in &axes[0] {
            values.push(slice(&[v])?);
        }
    } else {
        for &u in &axes[0] {
            for &v in &axes[1] {
                values.push(slice(&[u, v])?);
            }
        }
    }
    let support_measure = projected_support_measure(model, keep, &bx, spec);
    Ok(ProjectionDensity {
        keep: keep.to_vec(),
        axes,
        values,
        normalization: total,
        box_bounds: keep.iter().map(|&k| bx[k]).collect(),
        support_measure,
    })
}

/// `λ_k` of the projection of the support onto `keep`: the projection is
/// `{y : Σ_{kept} f(y) ≤ cap_hi − Σ_{others} f(lo)}` inside the box.
fn projected_support_measure(model: &OrliczModel, keep: &[usize], bx: &[(f64, f64)], spec: &QuadratureSpec) -> f64 {
    let (_, cap_hi) = model.cap().support().unwrap_or((0.0, 0.0));
    let others: f64 = (0..model.dim())
        .filter(|a| !keep.contains(a))
        .map(|a| model.young()[a].value(bx[a].0))
        .sum();
    let budget = cap_hi - others;
    if keep.len() == 1 {
        let (l, h) = bx[keep[0]];
        return h - l;
    }
    let (a, b) = (keep[0], keep[1]);
    let (fa, fb) = (&model.young()[a], &model.young()[b]);
    let (la, ha) = bx[a];
    let (lb, hb) = bx[b];
    let mut brk = fa.breakpoints();
    if let Some(t) = fa.inverse(budget - fb.value(hb)) {
        brk.push(t);
    }
    integrate_1d(
        |t| {
            let rem = budget - fa.value(t);
            match fb.inverse(rem) {
                Some(r) => (r.min(hb) - lb).max(0.0),
                None => 0.0,
            }
        },
        la,
        ha,
        &brk,
        spec,
    )
    .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::MonotoneTestFunction;

    #[test]
    fn triangle_area_and_moment() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let spec = QuadratureSpec::default();
        assert!((mass(&m, &spec).unwrap() - 2.0).abs() < 1e-12);
        struct Prod;
        impl PointFunction for Prod {
            fn value(&self, x: &[f64]) -> f64 {
                x[0] * x[1]
            }
            fn range(&self) -> (f64, f64) {
                (0.0, 4.0)
            }
        }
        let v = integrate(&m, Some(&Prod), &spec).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cube_volume() {
        let m = OrliczModel::cube(3, 1.0).unwrap();
        assert!((mass(&m, &QuadratureSpec::default()).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn fixed_axis_slice() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let mut p = Problem::new(&m);
        p.fix(0, 0.5).add_channel(0, vec![]);
        let v = p.integrate(&QuadratureSpec::default()).unwrap().values[0];
        assert!((v - 1.5).abs() < 1e-13);
    }

    #[test]
    fn region_restriction() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let sq = Polygon::rectangle([0.0, 0.0], [1.0, 1.0]).unwrap();
        let mut p = Problem::new(&m);
        p.restrict_to(&sq).add_channel(0, vec![]);
        let v = p.integrate(&QuadratureSpec::default()).unwrap().values[0];
        assert!((v - 1.0).abs() < 1e-13);
    }

    #[test]
    fn slanted_edge_meets_cap_boundary() {
        // Uniform triangle x + y ≤ c cut by a steep edge; the outer integrand
        // has a kink close to a panel end that the rule alone cannot see.
        let c = 3.195575873756904;
        let e = 4.1545765494532816e-8;
        let x1 = 1.0651919588217846;
        let m = OrliczModel::simplex(2, c).unwrap();
        let tri = Polygon::new(vec![[x1, c], [0.0, c], [0.0, e]]).unwrap();
        let mut p = Problem::new(&m);
        p.restrict_to(&tri).add_channel(0, vec![]);
        let v = p.integrate(&QuadratureSpec::default()).unwrap().values[0];
        let slope = (c - e) / x1;
        let xs = (c - e) / (1.0 + slope);
        let exact = 0.5 * (c - e) * xs;
        assert!((v - exact).abs() < 1e-10 * exact, "{v} vs {exact}");
    }

    #[test]
    fn threshold_channels() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let f = MonotoneTestFunction::indicator_above(0, 1.0).unwrap();
        let mut p = Problem::new(&m);
        let i = p.add_factor(&f);
        p.add_channel(0, vec![]);
        p.add_channel(0, vec![i]);
        let e = p.integrate(&QuadratureSpec::default()).unwrap();
        assert!((e.values[1] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn c_constant_small_cases() {
        assert!((c_constant(2, 1).unwrap() - 0.5).abs() < 1e-12);
        assert!((c_constant(3, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((c_constant(4, 2).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert!(c_constant(3, 3).is_err());
    }

    #[test]
    fn triangle_marginal() {
        let m = OrliczModel::simplex(2, 2.0).unwrap();
        let pd = projection_density(&m, &[0], 20, &QuadratureSpec::default()).unwrap();
        for (x, v) in pd.axes[0].iter().zip(&pd.values) {
            assert!((v - (2.0 - x) / 2.0).abs() < 1e-12);
        }
        assert!(pd.root_concavity_deficit(1.0) < 1e-12);
        assert!((pd.grid_mass() - 1.0).abs() < 1e-12);
        assert_eq!(pd.support_measure, 2.0);
    }

    #[test]
    fn dimension_limit() {
        let m = OrliczModel::simplex(5, 5.0).unwrap();
        assert!(matches!(mass(&m, &QuadratureSpec::default()), Err(Error::DimensionTooLarge { .. })));
    }
}
