//! One-dimensional building blocks of Orlicz-based densities.
//!
//! * [`YoungFunction`]: convex nondecreasing functions on `[0, ∞)` vanishing at
//!   zero, stored as finitely many segments. Each segment is a constant plus a
//!   sum of shifted power terms `c·(t − anchor)^p`, which keeps the family closed
//!   under the affine substitutions and sums performed by son transforms. An
//!   optional cutoff makes the function `+∞` beyond it.
//! * [`LogConcaveScalar`]: nonnegative functions whose logarithm is concave and
//!   piecewise quadratic on a closed support interval. These model the weights
//!   `wᵢ` and the cap `m`.
//!
//! `+∞` is carried explicitly (see [`Extended`]); the convention `∞ − ∞ = ∞`
//! used by the hyperplane transform is applied by hand, never through IEEE
//! arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

const CHECK_SEED: u64 = 0x5eed_0f_1a_2b;
const CHECK_TRIPLES: usize = 100;
const CHECK_TOL: f64 = 1e-10;

/// A value in `[0, +∞]` (or any extended real in intermediate computations).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    /// Maps `+∞` to `f64::INFINITY`; for use where the value only feeds comparisons.
    pub fn to_f64(self) -> f64 {
        match self {
            Extended::Finite(v) => v,
            Extended::Infinite => f64::INFINITY,
        }
    }

    fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            Extended::Infinite
        } else {
            Extended::Finite(v)
        }
    }
}

impl std::ops::Add for Extended {
    type Output = Extended;

    fn add(self, rhs: Extended) -> Extended {
        match (self, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            _ => Extended::Infinite,
        }
    }
}

impl std::ops::Sub for Extended {
    type Output = Extended;

    /// Subtraction with `∞ − x = ∞` for every `x`, including `x = ∞`.
    fn sub(self, rhs: Extended) -> Extended {
        match (self, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a - b),
            (Extended::Infinite, _) => Extended::Infinite,
            (Extended::Finite(_), Extended::Infinite) => {
                // Never produced by the closure constructions: the subtrahend is
                // always a value the minuend dominates.
                Extended::Finite(f64::NEG_INFINITY)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Young functions
// ---------------------------------------------------------------------------

/// `coeff · (t − anchor)^exponent` for `t ≥ anchor`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerTerm {
    pub coeff: f64,
    pub anchor: f64,
    pub exponent: f64,
}

impl PowerTerm {
    #[inline]
    fn eval(&self, t: f64) -> f64 {
        let d = (t - self.anchor).max(0.0);
        let p = self.exponent;
        if p == 1.0 {
            self.coeff * d
        } else if p == 2.0 {
            self.coeff * d * d
        } else if p.fract() == 0.0 && p <= 32.0 {
            self.coeff * d.powi(p as i32)
        } else {
            self.coeff * d.powf(p)
        }
    }
}

/// Formula valid on `[start, next start)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub start: f64,
    pub constant: f64,
    pub terms: Vec<PowerTerm>,
}

impl Segment {
    #[inline]
    fn eval(&self, t: f64) -> f64 {
        self.terms.iter().fold(self.constant, |acc, term| acc + term.eval(t))
    }

    fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }

    fn simplify(&mut self) {
        let mut merged: Vec<PowerTerm> = Vec::with_capacity(self.terms.len());
        for term in self.terms.drain(..) {
            if term.coeff == 0.0 {
                continue;
            }
            if term.exponent == 0.0 {
                self.constant += term.coeff;
                continue;
            }
            match merged
                .iter_mut()
                .find(|m| m.anchor == term.anchor && m.exponent == term.exponent)
            {
                Some(m) => m.coeff += term.coeff,
                None => merged.push(term),
            }
        }
        self.terms = merged;
    }
}

/// Shape of one configured piece of a Young function; values are carried over
/// from the previous piece so that the function is continuous unless an
/// explicit intercept says otherwise.
#[derive(Clone, Debug, PartialEq)]
pub enum YoungPieceKind {
    /// `f(start) + coeff·(t − start)^exponent`
    Power { coeff: f64, exponent: f64 },
    /// `intercept + slope·(t − start)`, intercept defaulting to `f(start)`.
    Affine { slope: f64, intercept: Option<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct YoungPiece {
    pub start: f64,
    pub kind: YoungPieceKind,
}

/// Convex nondecreasing `f: [0, ∞) → [0, ∞]` with `f(0) = 0`, or `f ≡ ∞`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YoungFunction {
    segments: Vec<Segment>,
    cutoff: Option<f64>,
    infinite: bool,
}

impl YoungFunction {
    /// `coeff · t^exponent`.
    pub fn power(coeff: f64, exponent: f64) -> Result<Self> {
        Self::from_pieces(
            &[YoungPiece {
                start: 0.0,
                kind: YoungPieceKind::Power { coeff, exponent },
            }],
            None,
        )
    }

    /// `slope · t`.
    pub fn linear(slope: f64) -> Result<Self> {
        Self::power(slope, 1.0)
    }

    /// `0` on `[0, c]` and `+∞` beyond: the Young function of a coordinate box.
    pub fn box_indicator(c: f64) -> Result<Self> {
        Self::from_pieces(
            &[YoungPiece { start: 0.0, kind: YoungPieceKind::Affine { slope: 0.0, intercept: None } }],
            Some(c),
        )
    }

    /// `g ≡ 0`. Not itself a Young function; useful as an operand of
    /// [`compose_shift_young`].
    pub fn zero() -> Self {
        YoungFunction {
            segments: vec![Segment { start: 0.0, constant: 0.0, terms: Vec::new() }],
            cutoff: None,
            infinite: false,
        }
    }

    /// The `f ≡ ∞` alternative allowed for Orlicz-based functions.
    pub fn identically_infinite() -> Self {
        YoungFunction {
            segments: vec![Segment {
                start: 0.0,
                constant: 0.0,
                terms: Vec::new(),
            }],
            cutoff: None,
            infinite: true,
        }
    }

    pub fn from_pieces(pieces: &[YoungPiece], cutoff: Option<f64>) -> Result<Self> {
        let f = Self::from_pieces_unchecked(pieces, cutoff)?;
        f.validate()?;
        Ok(f)
    }

    /// Builds the function without the convexity/monotonicity checks. Used for
    /// negative controls; structural errors (unordered breakpoints, bad
    /// parameters) are still rejected.
    pub fn from_pieces_unchecked(pieces: &[YoungPiece], cutoff: Option<f64>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidFunction("Young function needs at least one piece".into()));
        }
        if pieces[0].start != 0.0 {
            return Err(Error::InvalidFunction("first Young piece must start at 0".into()));
        }
        if let Some(c) = cutoff {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::InvalidFunction(format!("cutoff must be finite and ≥ 0, got {c}")));
            }
        }
        let mut segments: Vec<Segment> = Vec::with_capacity(pieces.len());
        for (k, piece) in pieces.iter().enumerate() {
            if !piece.start.is_finite() {
                return Err(Error::InvalidFunction("non-finite breakpoint".into()));
            }
            if k > 0 && piece.start <= pieces[k - 1].start {
                return Err(Error::InvalidFunction("breakpoints must be strictly increasing".into()));
            }
            let carried = segments.last().map_or(0.0, |s| s.eval(piece.start));
            let seg = match piece.kind {
                YoungPieceKind::Power { coeff, exponent } => {
                    if !coeff.is_finite() || !exponent.is_finite() || exponent < 0.0 {
                        return Err(Error::InvalidFunction(format!(
                            "bad power piece coeff={coeff} exponent={exponent}"
                        )));
                    }
                    Segment {
                        start: piece.start,
                        constant: carried,
                        terms: vec![PowerTerm { coeff, anchor: piece.start, exponent }],
                    }
                }
                YoungPieceKind::Affine { slope, intercept } => {
                    if !slope.is_finite() {
                        return Err(Error::InvalidFunction("non-finite slope".into()));
                    }
                    Segment {
                        start: piece.start,
                        constant: intercept.unwrap_or(carried),
                        terms: vec![PowerTerm { coeff: slope, anchor: piece.start, exponent: 1.0 }],
                    }
                }
            };
            segments.push(seg);
        }
        let mut f = YoungFunction { segments, cutoff, infinite: false };
        f.normalize();
        Ok(f)
    }

    pub fn with_cutoff(mut self, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidFunction(format!("cutoff must be finite and ≥ 0, got {c}")));
        }
        self.cutoff = Some(self.cutoff.map_or(c, |old| old.min(c)));
        self.normalize();
        self.validate()?;
        Ok(self)
    }

    pub fn is_identically_infinite(&self) -> bool {
        self.infinite
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn normalize(&mut self) {
        if let Some(c) = self.cutoff {
            self.segments.retain(|s| s.start == 0.0 || s.start < c);
        }
        for s in &mut self.segments {
            s.simplify();
        }
        if self.infinite {
            self.segments = vec![Segment { start: 0.0, constant: 0.0, terms: Vec::new() }];
            self.cutoff = None;
        }
    }

    /// Checks the Young-function invariants: `f(0) = 0`, continuity below the
    /// cutoff, monotonicity and convexity on sampled points, and nontriviality.
    pub fn validate(&self) -> Result<()> {
        if self.infinite {
            return Ok(());
        }
        let f0 = self.value(0.0);
        if f0.abs() > CHECK_TOL {
            return Err(Error::InvalidFunction(format!("Young function must vanish at 0, f(0)={f0}")));
        }
        if self.cutoff == Some(0.0) {
            return Err(Error::InvalidFunction(
                "cutoff 0 leaves no point y > 0 with f(y) < ∞".into(),
            ));
        }
        if self.cutoff.is_none() && self.segments.iter().all(Segment::is_constant) {
            return Err(Error::InvalidFunction("Young function is identically zero".into()));
        }
        for w in self.segments.windows(2) {
            let left = w[0].eval(w[1].start);
            let right = w[1].eval(w[1].start);
            if (left - right).abs() > 1e-9 * (1.0 + left.abs()) {
                return Err(Error::InvalidFunction(format!(
                    "Young function jumps at t={} ({left} → {right})",
                    w[1].start
                )));
            }
        }
        let horizon = self.check_horizon();
        let grid: Vec<f64> = (0..=400).map(|k| horizon * k as f64 / 400.0).collect();
        let mut prev = 0.0_f64;
        for &t in &grid {
            let v = self.value(t);
            if v.is_finite() {
                if v < prev - CHECK_TOL * (1.0 + prev.abs()) {
                    return Err(Error::InvalidFunction(format!("Young function decreases near t={t}")));
                }
                prev = v;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED);
        for _ in 0..CHECK_TRIPLES {
            let mut xs = [
                rng.random::<f64>() * horizon,
                rng.random::<f64>() * horizon,
                rng.random::<f64>() * horizon,
            ];
            xs.sort_by(f64::total_cmp);
            let [a, b, c] = xs;
            if c - a <= 1e-12 {
                continue;
            }
            let (fa, fb, fc) = (self.value(a), self.value(b), self.value(c));
            if !(fa.is_finite() && fb.is_finite() && fc.is_finite()) {
                continue;
            }
            let chord = ((c - b) * fa + (b - a) * fc) / (c - a);
            if fb > chord + CHECK_TOL * (1.0 + chord.abs()) {
                return Err(Error::InvalidFunction(format!(
                    "Young function is not convex on ({a}, {b}, {c})"
                )));
            }
        }
        Ok(())
    }

    fn check_horizon(&self) -> f64 {
        match self.cutoff {
            Some(c) => c * 1.25,
            None => {
                let last = self.segments.last().map_or(0.0, |s| s.start);
                (2.0 * last).max(4.0)
            }
        }
    }

    /// `f(t)`; negative arguments are a domain error.
    pub fn eval(&self, t: f64) -> Result<Extended> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("Young functions are defined on [0, ∞), got t={t}")));
        }
        Ok(Extended::from_f64(self.value(t)))
    }

    /// Hot-path evaluation for `t ≥ 0`; `+∞` is returned as `f64::INFINITY`.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        if self.infinite {
            return f64::INFINITY;
        }
        if let Some(c) = self.cutoff {
            if t > c {
                return f64::INFINITY;
            }
        }
        let idx = if self.segments.len() == 1 {
            0
        } else {
            self.segments.partition_point(|s| s.start <= t).saturating_sub(1)
        };
        self.segments[idx].eval(t)
    }

    /// Interior breakpoints and the cutoff.
    pub fn breakpoints(&self) -> Vec<f64> {
        if self.infinite {
            return Vec::new();
        }
        let mut out: Vec<f64> = self.segments.iter().skip(1).map(|s| s.start).collect();
        if let Some(c) = self.cutoff {
            out.push(c);
        }
        out
    }

    /// `sup{t ≥ 0 : f(t) ≤ u}`; `None` when the sublevel set is empty and
    /// `Some(∞)` when `f` never exceeds `u`. Assumes `f` nondecreasing.
    pub fn inverse(&self, u: f64) -> Option<f64> {
        if self.infinite || u.is_nan() {
            return None;
        }
        if u == f64::INFINITY {
            return Some(self.cutoff.unwrap_or(f64::INFINITY));
        }
        if self.value(0.0) > u {
            return None;
        }
        let n = self.segments.len();
        for (k, seg) in self.segments.iter().enumerate() {
            let mut end = if k + 1 < n { self.segments[k + 1].start } else { f64::INFINITY };
            if let Some(c) = self.cutoff {
                end = end.min(c);
            }
            let at_end = if end.is_finite() { seg.eval(end) } else { f64::INFINITY };
            if end.is_finite() && at_end <= u {
                if self.cutoff == Some(end) {
                    return Some(end);
                }
                continue;
            }
            if !end.is_finite() && seg.is_constant() {
                return Some(f64::INFINITY);
            }
            return Some(solve_segment(seg, u, end));
        }
        Some(self.cutoff.unwrap_or(f64::INFINITY))
    }

    /// `t ↦ f(a·t + b)` for `a, b ≥ 0`; the result need not vanish at 0.
    pub(crate) fn affine_substitute(&self, a: f64, b: f64) -> YoungFunction {
        if self.infinite {
            return YoungFunction::identically_infinite();
        }
        if a == 0.0 {
            let v = self.value(b);
            if v == f64::INFINITY {
                return YoungFunction::identically_infinite();
            }
            return YoungFunction {
                segments: vec![Segment { start: 0.0, constant: v, terms: Vec::new() }],
                cutoff: None,
                infinite: false,
            };
        }
        if let Some(c) = self.cutoff {
            if b > c {
                return YoungFunction::identically_infinite();
            }
        }
        let n = self.segments.len();
        let mut segments = Vec::with_capacity(n);
        for (k, seg) in self.segments.iter().enumerate() {
            let end = if k + 1 < n { self.segments[k + 1].start } else { f64::INFINITY };
            let mapped_end = (end - b) / a;
            if mapped_end <= 0.0 {
                continue;
            }
            let start = ((seg.start - b) / a).max(0.0);
            let terms = seg
                .terms
                .iter()
                .map(|t| PowerTerm {
                    coeff: t.coeff * a.powf(t.exponent),
                    anchor: (t.anchor - b) / a,
                    exponent: t.exponent,
                })
                .collect();
            segments.push(Segment { start, constant: seg.constant, terms });
        }
        if let Some(first) = segments.first_mut() {
            first.start = 0.0;
        }
        let mut out = YoungFunction {
            segments,
            cutoff: self.cutoff.map(|c| (c - b) / a),
            infinite: false,
        };
        out.normalize();
        out
    }

    /// Pointwise sum; cutoffs combine by minimum.
    pub(crate) fn add(&self, other: &YoungFunction) -> YoungFunction {
        if self.infinite || other.infinite {
            return YoungFunction::identically_infinite();
        }
        let cutoff = match (self.cutoff, other.cutoff) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let mut starts: Vec<f64> = self
            .segments
            .iter()
            .chain(other.segments.iter())
            .map(|s| s.start)
            .collect();
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        let segments = starts
            .into_iter()
            .map(|s| {
                let a = self.segment_at(s);
                let b = other.segment_at(s);
                Segment {
                    start: s,
                    constant: a.constant + b.constant,
                    terms: a.terms.iter().chain(b.terms.iter()).cloned().collect(),
                }
            })
            .collect();
        let mut out = YoungFunction { segments, cutoff, infinite: false };
        out.normalize();
        out
    }

    fn sub_constant(&self, c: f64) -> YoungFunction {
        let mut out = self.clone();
        if !out.infinite {
            for s in &mut out.segments {
                s.constant -= c;
            }
        }
        out
    }

    fn segment_at(&self, t: f64) -> &Segment {
        let idx = self.segments.partition_point(|s| s.start <= t).saturating_sub(1);
        &self.segments[idx]
    }

    /// `t ↦ f(t + x) − f(x)`, the Young part after moving the origin to `x`.
    /// Fails when `f(x) = ∞`.
    pub fn shift(&self, x: f64) -> Result<YoungFunction> {
        let fx = self.eval(x)?;
        let Extended::Finite(fx) = fx else {
            return Err(Error::InvalidTransform(format!("cannot shift a Young function to a point where it is ∞ (x={x})")));
        };
        Ok(self.affine_substitute(1.0, x).sub_constant(fx).collapse_zero_cutoff())
    }

    /// A cutoff at exactly 0 leaves only the point `t = 0`, a null set; such a
    /// function is replaced by `f ≡ ∞`.
    fn collapse_zero_cutoff(self) -> YoungFunction {
        if self.cutoff == Some(0.0) {
            YoungFunction::identically_infinite()
        } else {
            self
        }
    }
}

fn solve_segment(seg: &Segment, u: f64, end: f64) -> f64 {
    let target = u - seg.constant;
    let active: Vec<&PowerTerm> = seg.terms.iter().filter(|t| t.coeff != 0.0).collect();
    if active.len() == 1 && active[0].exponent > 0.0 {
        let t = active[0];
        let r = if target <= 0.0 { 0.0 } else { (target / t.coeff).powf(1.0 / t.exponent) };
        return (t.anchor + r).clamp(seg.start, end);
    }
    let mut lo = seg.start;
    let mut hi = if end.is_finite() {
        end
    } else {
        let mut h = seg.start + 1.0;
        while seg.eval(h) <= u && h < 1e300 {
            h = seg.start + 2.0 * (h - seg.start);
        }
        h
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if seg.eval(mid) <= u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `t ↦ f(a·t + b) + g(t) − f(b)` with `∞ − ∞ = ∞`: the Young part of the
/// merged coordinate after restricting to the hyperplane `xᵢ = a·xⱼ + b`.
pub fn compose_shift_young(
    f: &YoungFunction,
    a: f64,
    b: f64,
    g: &YoungFunction,
) -> Result<YoungFunction> {
    if !(a >= 0.0) || !(b >= 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("compose_shift_young needs a, b ≥ 0, got a={a}, b={b}")));
    }
    let fb = f.value(b);
    if fb == f64::INFINITY {
        return Ok(YoungFunction::identically_infinite());
    }
    Ok(f
        .affine_substitute(a, b)
        .add(g)
        .sub_constant(fb)
        .collapse_zero_cutoff())
}

// ---------------------------------------------------------------------------
// Log-concave scalars
// ---------------------------------------------------------------------------

/// `log v(t) = constant + lin·t + quad·t²` from `start` to the next piece.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogPiece {
    pub start: f64,
    pub quad: f64,
    pub lin: f64,
    pub constant: f64,
}

impl LogPiece {
    #[inline]
    fn log_value(&self, t: f64) -> f64 {
        self.constant + t * (self.lin + t * self.quad)
    }

    fn flat(start: f64) -> Self {
        LogPiece { start, quad: 0.0, lin: 0.0, constant: 0.0 }
    }
}

/// A nonnegative function with concave piecewise-quadratic logarithm on the
/// closed support `[lo, hi]` (either end may be infinite) and zero elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogConcaveScalar {
    lo: f64,
    hi: f64,
    pieces: Vec<LogPiece>,
}

impl LogConcaveScalar {
    /// The zero function.
    pub fn zero() -> Self {
        LogConcaveScalar { lo: 1.0, hi: 0.0, pieces: Vec::new() }
    }

    /// `1` on `[lo, hi]`.
    pub fn indicator(lo: f64, hi: f64) -> Result<Self> {
        Self::from_pieces(lo, hi, vec![LogPiece::flat(lo)])
    }

    /// `1` on `[0, ∞)`: the neutral weight.
    pub fn unit() -> Self {
        LogConcaveScalar { lo: 0.0, hi: f64::INFINITY, pieces: vec![LogPiece::flat(0.0)] }
    }

    /// `exp(intercept + slope·t)` on `[lo, hi]`.
    pub fn log_affine(slope: f64, intercept: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::from_pieces(lo, hi, vec![LogPiece { start: lo, quad: 0.0, lin: slope, constant: intercept }])
    }

    /// `exp(constant + lin·t + quad·t²)` on `[lo, hi]`, `quad ≤ 0`.
    pub fn log_quadratic(quad: f64, lin: f64, constant: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::from_pieces(lo, hi, vec![LogPiece { start: lo, quad, lin, constant }])
    }

    pub fn from_pieces(lo: f64, hi: f64, pieces: Vec<LogPiece>) -> Result<Self> {
        let f = Self::from_pieces_unchecked(lo, hi, pieces)?;
        f.validate()?;
        Ok(f)
    }

    /// Structural checks only; log-concavity is not enforced.
    pub fn from_pieces_unchecked(lo: f64, hi: f64, pieces: Vec<LogPiece>) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(Error::InvalidFunction(format!("bad support [{lo}, {hi}]")));
        }
        if lo > hi {
            return Ok(Self::zero());
        }
        if pieces.is_empty() {
            return Err(Error::InvalidFunction("log-concave function needs at least one piece".into()));
        }
        for w in pieces.windows(2) {
            if !(w[1].start > w[0].start) {
                return Err(Error::InvalidFunction("log pieces must have increasing starts".into()));
            }
        }
        for p in &pieces {
            if !(p.quad.is_finite() && p.lin.is_finite() && p.constant.is_finite()) {
                return Err(Error::InvalidFunction("non-finite log-piece coefficient".into()));
            }
        }
        let mut out = LogConcaveScalar { lo, hi, pieces };
        out.trim();
        if out.pieces.is_empty() {
            return Err(Error::InvalidFunction("no log piece covers the support".into()));
        }
        Ok(out)
    }

    fn trim(&mut self) {
        // Keep the last piece starting at or before lo, and those inside (lo, hi).
        let lo = self.lo;
        let hi = self.hi;
        let first = self.pieces.iter().rposition(|p| p.start <= lo).unwrap_or(0);
        let mut kept: Vec<LogPiece> = self.pieces[first..]
            .iter()
            .filter(|p| p.start < hi || p.start <= lo)
            .cloned()
            .collect();
        if let Some(p) = kept.first_mut() {
            p.start = lo;
        }
        self.pieces = kept;
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || self.pieces.is_empty()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        if self.is_empty() {
            None
        } else {
            Some((self.lo, self.hi))
        }
    }

    pub fn pieces(&self) -> &[LogPiece] {
        &self.pieces
    }

    /// Value at `t`; zero off the support.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if t < self.lo || t > self.hi || self.pieces.is_empty() {
            return 0.0;
        }
        self.piece_at(t).log_value(t).exp()
    }

    /// `log v(t)`, `-∞` off the support.
    pub fn log_eval(&self, t: f64) -> f64 {
        if t < self.lo || t > self.hi || self.pieces.is_empty() {
            return f64::NEG_INFINITY;
        }
        self.piece_at(t).log_value(t)
    }

    #[inline]
    fn piece_at(&self, t: f64) -> &LogPiece {
        if self.pieces.len() == 1 {
            &self.pieces[0]
        } else {
            let idx = self.pieces.partition_point(|p| p.start <= t).saturating_sub(1);
            &self.pieces[idx]
        }
    }

    /// Support ends (finite ones) and interior piece boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut out: Vec<f64> = Vec::with_capacity(self.pieces.len() + 1);
        if self.lo.is_finite() {
            out.push(self.lo);
        }
        out.extend(self.pieces.iter().skip(1).map(|p| p.start));
        if self.hi.is_finite() {
            out.push(self.hi);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        for p in &self.pieces {
            if p.quad > 0.0 {
                return Err(Error::InvalidFunction(format!(
                    "log piece at {} has positive quadratic coefficient {}",
                    p.start, p.quad
                )));
            }
        }
        for w in self.pieces.windows(2) {
            let t = w[1].start;
            let (l, r) = (w[0].log_value(t), w[1].log_value(t));
            if (l - r).abs() > 1e-9 * (1.0 + l.abs()) {
                return Err(Error::InvalidFunction(format!("log value jumps at t={t} ({l} → {r})")));
            }
        }
        let (a, b) = self.check_window();
        let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED ^ 0x10c);
        for _ in 0..CHECK_TRIPLES {
            let x = a + (b - a) * rng.random::<f64>();
            let y = a + (b - a) * rng.random::<f64>();
            let lx = self.log_eval(x);
            let ly = self.log_eval(y);
            if !(lx.is_finite() && ly.is_finite()) {
                continue;
            }
            let lm = self.log_eval(0.5 * (x + y));
            let avg = 0.5 * (lx + ly);
            if lm < avg - CHECK_TOL * (1.0 + avg.abs()) {
                return Err(Error::InvalidFunction(format!("log-concavity fails between {x} and {y}")));
            }
        }
        Ok(())
    }

    fn check_window(&self) -> (f64, f64) {
        let lo = if self.lo.is_finite() { self.lo } else { self.pieces.get(1).map_or(0.0, |p| p.start) - 10.0 };
        let hi = if self.hi.is_finite() {
            self.hi
        } else {
            self.pieces.last().map_or(0.0, |p| p.start.max(lo)) + 10.0
        };
        (lo, hi.max(lo))
    }

    /// Pointwise product; the support is the intersection of supports.
    pub fn multiply(&self, other: &LogConcaveScalar) -> LogConcaveScalar {
        if self.is_empty() || other.is_empty() {
            return Self::zero();
        }
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo > hi {
            return Self::zero();
        }
        let mut starts: Vec<f64> = self
            .pieces
            .iter()
            .chain(other.pieces.iter())
            .map(|p| p.start)
            .filter(|&s| s > lo && s < hi)
            .collect();
        starts.push(lo);
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        let pieces = starts
            .into_iter()
            .map(|s| {
                let a = self.piece_at(s);
                let b = other.piece_at(s);
                LogPiece {
                    start: s,
                    quad: a.quad + b.quad,
                    lin: a.lin + b.lin,
                    constant: a.constant + b.constant,
                }
            })
            .collect();
        LogConcaveScalar { lo, hi, pieces }
    }

    /// `t ↦ v(a·t + b)` for `a ≥ 0`.
    pub fn affine_substitute(&self, a: f64, b: f64) -> LogConcaveScalar {
        if self.is_empty() {
            return Self::zero();
        }
        if a == 0.0 {
            let lv = self.log_eval(b);
            if lv == f64::NEG_INFINITY {
                return Self::zero();
            }
            return LogConcaveScalar {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
                pieces: vec![LogPiece { start: f64::NEG_INFINITY, quad: 0.0, lin: 0.0, constant: lv }],
            };
        }
        let map = |x: f64| (x - b) / a;
        let pieces = self
            .pieces
            .iter()
            .map(|p| LogPiece {
                start: map(p.start),
                quad: p.quad * a * a,
                lin: 2.0 * p.quad * a * b + p.lin * a,
                constant: p.quad * b * b + p.lin * b + p.constant,
            })
            .collect();
        LogConcaveScalar { lo: map(self.lo), hi: map(self.hi), pieces }
    }

    /// `t ↦ v(t + c)`.
    pub fn shift(&self, c: f64) -> LogConcaveScalar {
        self.affine_substitute(1.0, c)
    }

    /// `factor · v`; a zero factor gives the zero function.
    pub fn scale(&self, factor: f64) -> LogConcaveScalar {
        if factor <= 0.0 || self.is_empty() {
            return Self::zero();
        }
        let l = factor.ln();
        let mut out = self.clone();
        for p in &mut out.pieces {
            p.constant += l;
        }
        out
    }

    /// `1_{v > 0}`.
    pub fn positivity_indicator(&self) -> LogConcaveScalar {
        if self.is_empty() {
            return Self::zero();
        }
        LogConcaveScalar { lo: self.lo, hi: self.hi, pieces: vec![LogPiece::flat(self.lo)] }
    }

    /// Restriction to `[a, b]`.
    pub fn restrict(&self, a: f64, b: f64) -> LogConcaveScalar {
        match Self::indicator(a, b) {
            Ok(ind) => self.multiply(&ind),
            Err(_) => Self::zero(),
        }
    }

    /// `sup` of the function over `[a, b]`; may be `∞` for unbounded pieces.
    pub fn sup_on(&self, a: f64, b: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let lo = a.max(self.lo);
        let hi = b.min(self.hi);
        if lo > hi {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        let n = self.pieces.len();
        for (k, p) in self.pieces.iter().enumerate() {
            let end = if k + 1 < n { self.pieces[k + 1].start } else { f64::INFINITY };
            let s = p.start.max(lo);
            let e = end.min(hi);
            if s > e {
                continue;
            }
            let mut cand = vec![s, e];
            if p.quad < 0.0 {
                let v = -p.lin / (2.0 * p.quad);
                if v > s && v < e {
                    cand.push(v);
                }
            }
            for t in cand {
                let lv = if t.is_infinite() {
                    if p.quad < 0.0 || (p.quad == 0.0 && p.lin * t.signum() < 0.0) {
                        f64::NEG_INFINITY
                    } else if p.quad == 0.0 && p.lin == 0.0 {
                        p.constant
                    } else {
                        f64::INFINITY
                    }
                } else {
                    p.log_value(t)
                };
                best = best.max(lv);
            }
        }
        best.exp()
    }
}

/// Sampled midpoint log-concavity deficit of `v` over random triples in `[a, b]`:
/// the largest `avg(log v(x), log v(y)) − log v((x+y)/2)` seen.
pub fn log_concavity_deficit(v: &LogConcaveScalar, a: f64, b: f64, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = a + (b - a) * rng.random::<f64>();
        let y = a + (b - a) * rng.random::<f64>();
        let (lx, ly) = (v.log_eval(x), v.log_eval(y));
        if !(lx.is_finite() && ly.is_finite()) {
            continue;
        }
        worst = worst.max(0.5 * (lx + ly) - v.log_eval(0.5 * (x + y)));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn young_vanishes_at_zero() {
        let f = YoungFunction::power(1.0, 1.0).unwrap();
        assert_eq!(f.eval(0.0).unwrap(), Extended::Finite(0.0));
    }

    #[test]
    fn young_square_at_three() {
        let f = YoungFunction::power(1.0, 2.0).unwrap();
        assert_eq!(f.eval(3.0).unwrap(), Extended::Finite(9.0));
    }

    #[test]
    fn young_beyond_cutoff_is_infinite() {
        let f = YoungFunction::linear(1.0).unwrap().with_cutoff(1.0).unwrap();
        assert_eq!(f.eval(1.5).unwrap(), Extended::Infinite);
        assert_eq!(f.eval(1.0).unwrap(), Extended::Finite(1.0));
    }

    #[test]
    fn young_negative_argument_is_domain_error() {
        let f = YoungFunction::linear(1.0).unwrap();
        assert!(matches!(f.eval(-0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn identically_infinite_everywhere() {
        let f = YoungFunction::identically_infinite();
        assert_eq!(f.eval(0.0).unwrap(), Extended::Infinite);
        assert!(f.validate().is_ok());
    }

    #[test]
    fn rejects_non_convex_pieces() {
        let pieces = [
            YoungPiece { start: 0.0, kind: YoungPieceKind::Affine { slope: 2.0, intercept: None } },
            YoungPiece { start: 1.0, kind: YoungPieceKind::Affine { slope: 0.5, intercept: None } },
        ];
        assert!(YoungFunction::from_pieces(&pieces, None).is_err());
        let f = YoungFunction::from_pieces_unchecked(&pieces, None).unwrap();
        assert!(close(f.value(3.0), 3.0, 1e-14));
    }

    #[test]
    fn rejects_zero_function_and_jumps() {
        assert!(YoungFunction::power(0.0, 1.0).is_err());
        let jump = [
            YoungPiece { start: 0.0, kind: YoungPieceKind::Affine { slope: 1.0, intercept: None } },
            YoungPiece { start: 1.0, kind: YoungPieceKind::Affine { slope: 1.0, intercept: Some(3.0) } },
        ];
        assert!(YoungFunction::from_pieces(&jump, None).is_err());
    }

    #[test]
    fn piecewise_power_then_affine() {
        // t² on [0,1], then tangent continuation 1 + 2(t-1)
        let pieces = [
            YoungPiece { start: 0.0, kind: YoungPieceKind::Power { coeff: 1.0, exponent: 2.0 } },
            YoungPiece { start: 1.0, kind: YoungPieceKind::Affine { slope: 2.0, intercept: None } },
        ];
        let f = YoungFunction::from_pieces(&pieces, None).unwrap();
        assert!(close(f.value(0.5), 0.25, 1e-15));
        assert!(close(f.value(3.0), 5.0, 1e-15));
        assert!(close(f.inverse(5.0).unwrap(), 3.0, 1e-12));
        assert!(close(f.inverse(0.25).unwrap(), 0.5, 1e-12));
    }

    #[test]
    fn inverse_handles_flat_and_cutoff() {
        let cube = YoungFunction::box_indicator(1.0).unwrap();
        assert_eq!(cube.inverse(0.0), Some(1.0));
        assert_eq!(cube.inverse(5.0), Some(1.0));
        assert_eq!(cube.inverse(-1.0), None);
        let lin = YoungFunction::linear(2.0).unwrap();
        assert!(close(lin.inverse(3.0).unwrap(), 1.5, 1e-15));
    }

    #[test]
    fn compose_linear_case() {
        let f = YoungFunction::linear(1.0).unwrap();
        let h = compose_shift_young(&f, 1.0, 0.0, &f).unwrap();
        for t in [0.0, 0.3, 1.0, 7.5] {
            assert!(close(h.value(t), 2.0 * t, 1e-14));
        }
    }

    #[test]
    fn compose_square_shift_matches_expansion() {
        // (t+1)² − 1 = t² + 2t, spot-checked against direct evaluation.
        let f = YoungFunction::power(1.0, 2.0).unwrap();
        let h = compose_shift_young(&f, 1.0, 1.0, &YoungFunction::zero()).unwrap();
        for t in [0.0, 1.0, 2.0] {
            let direct = (t + 1.0) * (t + 1.0) - 1.0;
            assert!(close(h.value(t), t * t + 2.0 * t, 1e-14));
            assert!(close(h.value(t), direct, 1e-14));
        }
        assert!(h.validate().is_ok());
    }

    #[test]
    fn compose_beyond_cutoff_is_identically_infinite() {
        let f = YoungFunction::linear(1.0).unwrap().with_cutoff(1.0).unwrap();
        let g = YoungFunction::power(1.0, 2.0).unwrap();
        let h = compose_shift_young(&f, 1.0, 2.0, &g).unwrap();
        assert!(h.is_identically_infinite());
    }

    #[test]
    fn indicator_and_log_affine_eval() {
        let ind = LogConcaveScalar::indicator(0.0, 1.0).unwrap();
        assert_eq!(ind.eval(0.5), 1.0);
        assert_eq!(ind.eval(2.0), 0.0);
        let e = LogConcaveScalar::log_affine(-1.0, 0.0, 0.0, f64::INFINITY).unwrap();
        assert!(close(e.eval(1.0), (-1.0f64).exp(), 1e-15));
        assert!(close(e.eval(1.0), 0.367879, 1e-6));
    }

    #[test]
    fn products_of_log_concave() {
        let a = LogConcaveScalar::indicator(0.0, 1.0).unwrap();
        let b = LogConcaveScalar::indicator(0.0, 2.0).unwrap();
        assert_eq!(a.multiply(&b).support(), Some((0.0, 1.0)));
        let c = LogConcaveScalar::indicator(2.0, 3.0).unwrap();
        assert!(a.multiply(&c).is_empty());
        let e1 = LogConcaveScalar::log_affine(-1.0, 0.0, 0.0, f64::INFINITY).unwrap();
        let e2 = LogConcaveScalar::log_affine(-2.0, 0.0, 0.0, f64::INFINITY).unwrap();
        let p = e1.multiply(&e2);
        for t in [0.0, 0.5, 2.0] {
            assert!(close(p.eval(t), (-3.0 * t).exp(), 1e-14));
        }
    }

    #[test]
    fn rejects_log_convex() {
        assert!(LogConcaveScalar::log_quadratic(1.0, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn affine_substitution_and_sup() {
        let w = LogConcaveScalar::log_quadratic(-1.0, 0.0, 0.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let s = w.affine_substitute(2.0, 1.0);
        for t in [-1.0, 0.0, 0.7] {
            let x: f64 = 2.0 * t + 1.0;
            assert!(close(s.eval(t), (-x * x).exp(), 1e-13));
        }
        assert!(close(w.sup_on(-1.0, 1.0), 1.0, 1e-15));
        assert!(close(w.sup_on(1.0, 2.0), (-1.0f64).exp(), 1e-15));
        let shifted = LogConcaveScalar::indicator(0.0, 2.0).unwrap().shift(0.5);
        assert_eq!(shifted.support(), Some((-0.5, 1.5)));
    }
}
