//! Orlicz-based densities `s(x) = m(Σ fᵢ(xᵢ))·Π wᵢ(xᵢ)` on the nonnegative
//! orthant, the three son transforms and random descendant chains.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{compose_shift_young, LogConcaveScalar, YoungFunction};

/// One of the three elementary transformations producing a son.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SonTransform {
    /// `wᵢ ← w·wᵢ`.
    MultiplyWeight { index: usize, weight: LogConcaveScalar },
    /// Restriction to the hyperplane `xᵢ = a·xⱼ + b`; slot `i` is removed and
    /// its contribution merged into slot `j`.
    HyperplaneRestrict { i: usize, j: usize, a: f64, b: f64 },
    /// Moves the origin to `point`.
    OriginShift { point: Vec<f64> },
}

/// Record of an applied transform.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineageEntry {
    pub transform: SonTransform,
    /// The son's density vanishes almost everywhere.
    pub degenerate: bool,
}

/// Affine map from the model's coordinates to the root model's coordinates:
/// `root = origin + Σₖ yₖ·columns[k]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffineEmbedding {
    pub origin: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
}

impl AffineEmbedding {
    pub fn identity(n: usize) -> Self {
        let columns = (0..n)
            .map(|k| {
                let mut c = vec![0.0; n];
                c[k] = 1.0;
                c
            })
            .collect();
        AffineEmbedding { origin: vec![0.0; n], columns }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.origin.clone();
        for (col, &yk) in self.columns.iter().zip(y) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += yk * c;
            }
        }
        out
    }
}

/// An Orlicz-based density together with its descendant metadata.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrliczModel {
    young: Vec<YoungFunction>,
    weights: Vec<LogConcaveScalar>,
    cap: LogConcaveScalar,
    lineage: Vec<LineageEntry>,
    embedding: AffineEmbedding,
    degenerate: bool,
}

/// Partition of the coordinates into two complementary ordered blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Splitting {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl Splitting {
    pub fn new(dim: usize, first: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; dim];
        for &i in &first {
            if i >= dim || seen[i] {
                return Err(Error::Domain(format!("bad splitting block {first:?} for dimension {dim}")));
            }
            seen[i] = true;
        }
        let mut first = first;
        first.sort_unstable();
        let second = (0..dim).filter(|&i| !seen[i]).collect();
        Ok(Splitting { first, second })
    }

    /// Every splitting with a nonempty first block.
    pub fn all(dim: usize) -> Vec<Splitting> {
        (1u32..(1u32 << dim))
            .map(|mask| {
                let first = (0..dim).filter(|&i| mask & (1 << i) != 0).collect();
                Splitting::new(dim, first).expect("mask enumerates valid blocks")
            })
            .collect()
    }
}

const CAP_TOL: f64 = 1e-12;

impl OrliczModel {
    /// Validated constructor: Young and weight invariants, compact cap with
    /// its maximum over `[0, ∞)` attained at 0.
    pub fn new(young: Vec<YoungFunction>, weights: Vec<LogConcaveScalar>, cap: LogConcaveScalar) -> Result<Self> {
        for (i, f) in young.iter().enumerate() {
            f.validate().map_err(|e| Error::InvalidModel(format!("Young part {i}: {e}")))?;
        }
        for (i, w) in weights.iter().enumerate() {
            w.validate().map_err(|e| Error::InvalidModel(format!("weight {i}: {e}")))?;
        }
        validate_cap(&cap)?;
        Self::new_unchecked(young, weights, cap)
    }

    /// Skips the convexity and log-concavity checks; used to build corrupted
    /// negative-control models. Shapes must still agree.
    pub fn new_unchecked(young: Vec<YoungFunction>, weights: Vec<LogConcaveScalar>, cap: LogConcaveScalar) -> Result<Self> {
        if young.len() != weights.len() {
            return Err(Error::InvalidModel(format!(
                "{} Young parts but {} weights",
                young.len(),
                weights.len()
            )));
        }
        let n = young.len();
        let mut model = OrliczModel {
            young,
            weights,
            cap,
            lineage: Vec::new(),
            embedding: AffineEmbedding::identity(n),
            degenerate: false,
        };
        model.degenerate = model.is_null();
        Ok(model)
    }

    /// All weights `1_{[0,∞)}`.
    pub fn unweighted(young: Vec<YoungFunction>, cap: LogConcaveScalar) -> Result<Self> {
        let weights = vec![LogConcaveScalar::unit(); young.len()];
        Self::new(young, weights, cap)
    }

    /// `{x ≥ 0 : Σ xᵢ ≤ level}` with uniform density.
    pub fn simplex(dim: usize, level: f64) -> Result<Self> {
        let young = (0..dim).map(|_| YoungFunction::linear(1.0)).collect::<Result<Vec<_>>>()?;
        Self::unweighted(young, LogConcaveScalar::indicator(0.0, level)?)
    }

    /// Uniform density on `[0, side]ⁿ`.
    pub fn cube(dim: usize, side: f64) -> Result<Self> {
        let young = (0..dim).map(|_| YoungFunction::box_indicator(side)).collect::<Result<Vec<_>>>()?;
        Self::unweighted(young, LogConcaveScalar::indicator(0.0, 1.0)?)
    }

    pub fn dim(&self) -> usize {
        self.young.len()
    }

    pub fn young(&self) -> &[YoungFunction] {
        &self.young
    }

    pub fn weights(&self) -> &[LogConcaveScalar] {
        &self.weights
    }

    pub fn cap(&self) -> &LogConcaveScalar {
        &self.cap
    }

    pub fn lineage(&self) -> &[LineageEntry] {
        &self.lineage
    }

    pub fn embedding(&self) -> &AffineEmbedding {
        &self.embedding
    }

    /// The density vanishes almost everywhere.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Replaces the cap, keeping everything else.
    pub fn with_cap(&self, cap: LogConcaveScalar) -> OrliczModel {
        let mut out = self.clone();
        out.cap = cap;
        out.degenerate = out.is_null();
        out
    }

    /// Replaces the weights, keeping everything else.
    pub fn with_weights(&self, weights: Vec<LogConcaveScalar>) -> Result<OrliczModel> {
        if weights.len() != self.dim() {
            return Err(Error::InvalidModel("weight count must equal the dimension".into()));
        }
        let mut out = self.clone();
        out.weights = weights;
        out.degenerate = out.is_null();
        Ok(out)
    }

    /// `s(x)`; zero outside the orthant or where some `fᵢ(xᵢ) = ∞`.
    #[inline]
    pub fn density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut sum = 0.0;
        let mut w = 1.0;
        for ((f, wi), &xi) in self.young.iter().zip(&self.weights).zip(x) {
            if !(xi >= 0.0) {
                return 0.0;
            }
            let fi = f.value(xi);
            if fi == f64::INFINITY {
                return 0.0;
            }
            sum += fi;
            w *= wi.eval(xi);
            if w == 0.0 {
                return 0.0;
            }
        }
        self.cap.eval(sum) * w
    }

    /// `Σ fᵢ(xᵢ)`, `∞` if any term is.
    pub fn young_sum(&self, x: &[f64]) -> f64 {
        self.young.iter().zip(x).map(|(f, &xi)| f.value(xi.max(0.0))).sum()
    }

    /// Per-axis box containing the support, or `None` when the support is
    /// (almost) empty.
    pub fn support_box(&self) -> Option<Vec<(f64, f64)>> {
        let (_, cap_hi) = self.cap.support()?;
        let n = self.dim();
        let mut lo = Vec::with_capacity(n);
        for (f, w) in self.young.iter().zip(&self.weights) {
            if f.is_identically_infinite() {
                return None;
            }
            let (wl, _) = w.support()?;
            lo.push(wl.max(0.0));
        }
        let lo_vals: Vec<f64> = self.young.iter().zip(&lo).map(|(f, &l)| f.value(l)).collect();
        let total: f64 = lo_vals.iter().sum();
        if !(total < cap_hi) {
            return None;
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (_, wh) = self.weights[i].support()?;
            let budget = cap_hi - (total - lo_vals[i]);
            let reach = self.young[i].inverse(budget)?;
            let hi = wh.min(reach);
            if !(hi > lo[i]) {
                return None;
            }
            out.push((lo[i], hi));
        }
        Some(out)
    }

    fn is_null(&self) -> bool {
        match self.cap.support() {
            None => true,
            Some((_, hi)) => hi < 0.0 || self.cap.sup_on(0.0, hi) <= 0.0 || self.support_box().is_none(),
        }
    }

    /// Structural invariants: the cap is compact with its maximum over
    /// `[0, ∞)` at 0, and every constituent passes its own checks.
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.young.iter().enumerate() {
            f.validate().map_err(|e| Error::InvalidModel(format!("Young part {i}: {e}")))?;
        }
        for (i, w) in self.weights.iter().enumerate() {
            w.validate().map_err(|e| Error::InvalidModel(format!("weight {i}: {e}")))?;
        }
        if self.degenerate {
            return Ok(());
        }
        validate_cap(&self.cap)
    }

    /// Spot-checks convexity of the support: midpoints of random support
    /// points must lie in the support. Returns the number of failures.
    pub fn support_convexity_failures(&self, pairs: usize, seed: u64) -> usize {
        let Some(bx) = self.support_box() else { return 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<Vec<f64>> = Vec::new();
        for _ in 0..pairs * 200 {
            if pts.len() >= 2 * pairs {
                break;
            }
            let x: Vec<f64> = bx.iter().map(|&(l, h)| rng.random_range(l..h)).collect();
            if self.density(&x) > 0.0 {
                pts.push(x);
            }
        }
        pts.chunks_exact(2)
            .filter(|p| {
                let mid: Vec<f64> = p[0].iter().zip(&p[1]).map(|(a, b)| 0.5 * (a + b)).collect();
                self.density(&mid) <= 0.0
            })
            .count()
    }

    /// Applies a son transform.
    pub fn apply_son(&self, t: &SonTransform) -> Result<OrliczModel> {
        let n = self.dim();
        let mut out = match t {
            SonTransform::MultiplyWeight { index, weight } => {
                if *index >= n {
                    return Err(Error::InvalidTransform(format!("weight index {index} out of range for dimension {n}")));
                }
                weight.validate().map_err(|e| Error::InvalidTransform(e.to_string()))?;
                let mut out = self.clone();
                out.weights[*index] = weight.multiply(&self.weights[*index]);
                out
            }
            SonTransform::HyperplaneRestrict { i, j, a, b } => self.restrict(*i, *j, *a, *b)?,
            SonTransform::OriginShift { point } => self.shift(point)?,
        };
        out.degenerate = out.is_null();
        out.lineage.push(LineageEntry { transform: t.clone(), degenerate: out.degenerate });
        Ok(out)
    }

    fn restrict(&self, i: usize, j: usize, a: f64, b: f64) -> Result<OrliczModel> {
        let n = self.dim();
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidTransform(format!("hyperplane indices ({i}, {j}) invalid for dimension {n}")));
        }
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidTransform(format!("hyperplane needs a, b ≥ 0, got a={a}, b={b}")));
        }
        let merged = compose_shift_young(&self.young[i], a, b, &self.young[j])?;
        let fib = self.young[i].value(b);
        let cap = if fib.is_finite() { self.cap.shift(fib) } else { LogConcaveScalar::zero() };
        let weight = self.weights[i].affine_substitute(a, b).multiply(&self.weights[j]);

        let mut young = self.young.clone();
        let mut weights = self.weights.clone();
        young[j] = merged;
        weights[j] = weight;
        young.remove(i);
        weights.remove(i);

        let mut emb = self.embedding.clone();
        let col_i = emb.columns[i].clone();
        for (c, ci) in emb.columns[j].iter_mut().zip(&col_i) {
            *c += a * ci;
        }
        for (o, ci) in emb.origin.iter_mut().zip(&col_i) {
            *o += b * ci;
        }
        emb.columns.remove(i);

        Ok(OrliczModel {
            young,
            weights,
            cap,
            lineage: self.lineage.clone(),
            embedding: emb,
            degenerate: false,
        })
    }

    fn shift(&self, point: &[f64]) -> Result<OrliczModel> {
        let n = self.dim();
        if point.len() != n {
            return Err(Error::InvalidTransform(format!("shift point has length {}, expected {n}", point.len())));
        }
        if point.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidTransform("shift point must lie in the nonnegative orthant".into()));
        }
        let total = self.young_sum(point);
        if !total.is_finite() {
            return Err(Error::InvalidTransform(
                "origin shift to a point where Σ fᵢ(xᵢ) = ∞ (outside the support)".into(),
            ));
        }
        let young = self
            .young
            .iter()
            .zip(point)
            .map(|(f, &p)| f.shift(p))
            .collect::<Result<Vec<_>>>()?;
        let weights = self.weights.iter().zip(point).map(|(w, &p)| w.shift(p)).collect();
        let mut emb = self.embedding.clone();
        let origin = emb.apply(point);
        emb.origin = origin;
        Ok(OrliczModel {
            young,
            weights,
            cap: self.cap.shift(total),
            lineage: self.lineage.clone(),
            embedding: emb,
            degenerate: false,
        })
    }

    /// Applies `depth` random nondegenerate son transforms; deterministic in
    /// `seed`. A model of dimension 0 has no sons and is returned unchanged.
    pub fn random_descendant(&self, depth: usize, seed: u64) -> OrliczModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut current = self.clone();
        for _ in 0..depth {
            match current.sample_son(&mut rng) {
                Some(next) => current = next,
                None => break,
            }
        }
        current
    }

    /// Draws one nondegenerate son, resampling degenerate transforms.
    pub fn sample_son(&self, rng: &mut ChaCha8Rng) -> Option<OrliczModel> {
        if self.dim() == 0 {
            return None;
        }
        for _ in 0..200 {
            let Some(t) = self.sample_transform(rng) else { continue };
            if let Ok(son) = self.apply_son(&t) {
                if !son.degenerate {
                    return Some(son);
                }
            }
        }
        None
    }

    /// Draws a transform: kind uniform, `a, b ∈ [0, 2]`, shift points and
    /// weight parameters inside the support box.
    pub fn sample_transform(&self, rng: &mut ChaCha8Rng) -> Option<SonTransform> {
        let n = self.dim();
        let bx = self.support_box()?;
        let kind = rng.random_range(0..3);
        match kind {
            0 => {
                let index = rng.random_range(0..n);
                let (lo, hi) = bx[index];
                let span = hi - lo;
                let weight = match rng.random_range(0..4) {
                    0 => LogConcaveScalar::indicator(0.0, lo + span * rng.random_range(0.3..1.0)),
                    1 => LogConcaveScalar::indicator(lo + span * rng.random_range(0.0..0.6), f64::INFINITY),
                    2 => LogConcaveScalar::log_affine(-rng.random_range(0.0..2.0) / span, 0.0, 0.0, f64::INFINITY),
                    _ => LogConcaveScalar::log_affine(rng.random_range(0.0..1.0) / span, 0.0, 0.0, f64::INFINITY),
                }
                .ok()?;
                Some(SonTransform::MultiplyWeight { index, weight })
            }
            1 => {
                if n < 2 {
                    return None;
                }
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(rng);
                Some(SonTransform::HyperplaneRestrict {
                    i: idx[0],
                    j: idx[1],
                    a: rng.random_range(0.0..2.0),
                    b: rng.random_range(0.0..2.0),
                })
            }
            _ => {
                for _ in 0..1000 {
                    let p: Vec<f64> = bx.iter().map(|&(l, h)| rng.random_range(l..h)).collect();
                    if self.density(&p) > 0.0 {
                        // Keep some room so the son is not a sliver.
                        let p: Vec<f64> = p.iter().zip(&bx).map(|(&x, &(l, _))| l + 0.7 * (x - l)).collect();
                        return Some(SonTransform::OriginShift { point: p });
                    }
                }
                None
            }
        }
    }

    /// Moves `axis` to the last slot, keeping the order of the others.
    pub fn move_axis_last(&self, axis: usize) -> Result<OrliczModel> {
        let n = self.dim();
        if axis >= n {
            return Err(Error::Domain(format!("axis {axis} out of range for dimension {n}")));
        }
        let mut out = self.clone();
        let f = out.young.remove(axis);
        out.young.push(f);
        let w = out.weights.remove(axis);
        out.weights.push(w);
        let c = out.embedding.columns.remove(axis);
        out.embedding.columns.push(c);
        Ok(out)
    }

    /// Reorders coordinates: new slot `k` holds old axis `order[k]`.
    pub fn permute(&self, order: &[usize]) -> Result<OrliczModel> {
        let n = self.dim();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::Domain(format!("{order:?} is not a permutation of 0..{n}")));
        }
        let mut out = self.clone();
        out.young = order.iter().map(|&o| self.young[o].clone()).collect();
        out.weights = order.iter().map(|&o| self.weights[o].clone()).collect();
        out.embedding.columns = order.iter().map(|&o| self.embedding.columns[o].clone()).collect();
        Ok(out)
    }
}

fn validate_cap(cap: &LogConcaveScalar) -> Result<()> {
    cap.validate().map_err(|e| Error::InvalidModel(format!("cap: {e}")))?;
    let Some((lo, hi)) = cap.support() else {
        return Err(Error::InvalidModel("cap has empty support".into()));
    };
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidModel(format!("cap support [{lo}, {hi}] is not compact")));
    }
    let at0 = cap.eval(0.0);
    if at0 <= 0.0 {
        return Err(Error::InvalidModel("cap vanishes at 0".into()));
    }
    if cap.sup_on(0.0, hi) > at0 * (1.0 + CAP_TOL) {
        return Err(Error::InvalidModel("cap does not attain its maximum over [0, ∞) at 0".into()));
    }
    Ok(())
}
