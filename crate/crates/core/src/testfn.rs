//! Bounded coordinate-wise monotone test functions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// A real function on the orthant that the quadrature engine can multiply into
/// an integrand.
pub trait PointFunction: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// Pushes the points where `t ↦ value(x with x[axis] = t)` may be
    /// discontinuous or kinked. Only coordinates with `known[i]` set may be read.
    fn breaks(&self, _axis: usize, _x: &[f64], _known: &[bool], _out: &mut Vec<f64>) {}

    /// Closed interval containing every value.
    fn range(&self) -> (f64, f64);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestForm {
    /// `Π 1{xᵢ > θᵢ}`.
    Threshold { thresholds: Vec<f64> },
    /// `clamp(Σ wᵢxᵢ, lo, hi)` with `wᵢ ≥ 0`.
    ClippedLinear { weights: Vec<f64>, lo: f64, hi: f64 },
    /// `min(minᵢ xᵢ, cap)`.
    MinOfCoordinates { cap: f64 },
    /// `Π clamp((xᵢ − aᵢ)/(bᵢ − aᵢ), 0, 1)`.
    ProductOfRamps { ramps: Vec<(f64, f64)> },
}

/// A monotone test function of the coordinates listed in `indices`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotoneTestFunction {
    indices: Vec<usize>,
    form: TestForm,
    direction: Direction,
}

impl MonotoneTestFunction {
    pub fn new(indices: Vec<usize>, form: TestForm, direction: Direction) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Domain("test function needs at least one index".into()));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(Error::Domain("test function indices must be distinct".into()));
        }
        let k = indices.len();
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        match &form {
            TestForm::Threshold { thresholds } => {
                if thresholds.len() != k || thresholds.iter().any(|t| !t.is_finite()) {
                    return bad("threshold count must match indices");
                }
            }
            TestForm::ClippedLinear { weights, lo, hi } => {
                if weights.len() != k || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                    return bad("clipped_linear needs one nonnegative weight per index");
                }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad("clipped_linear needs finite lo < hi");
                }
            }
            TestForm::MinOfCoordinates { cap } => {
                if !(*cap > 0.0) || !cap.is_finite() {
                    return bad("min_of_coordinates needs a positive finite cap");
                }
            }
            TestForm::ProductOfRamps { ramps } => {
                if ramps.len() != k || ramps.iter().any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return bad("product_of_ramps needs one ramp a < b per index");
                }
            }
        }
        Ok(MonotoneTestFunction { indices, form, direction })
    }

    /// `clamp(xᵢ, lo, hi)`.
    pub fn coordinate(index: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![index], TestForm::ClippedLinear { weights: vec![1.0], lo, hi }, Direction::Increasing)
    }

    /// `1{xᵢ > θ}`.
    pub fn indicator_above(index: usize, theta: f64) -> Result<Self> {
        Self::new(vec![index], TestForm::Threshold { thresholds: vec![theta] }, Direction::Increasing)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn form(&self) -> &TestForm {
        &self.form
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn form_name(&self) -> &'static str {
        match self.form {
            TestForm::Threshold { .. } => "threshold",
            TestForm::ClippedLinear { .. } => "clipped_linear",
            TestForm::MinOfCoordinates { .. } => "min_of_coordinates",
            TestForm::ProductOfRamps { .. } => "product_of_ramps",
        }
    }

    /// The same function with the opposite direction.
    pub fn reversed(&self) -> Self {
        let direction = match self.direction {
            Direction::Increasing => Direction::Decreasing,
            Direction::Decreasing => Direction::Increasing,
        };
        MonotoneTestFunction { direction, ..self.clone() }
    }

    /// Re-targets the function at other coordinates (same count).
    pub fn with_indices(&self, indices: Vec<usize>) -> Result<Self> {
        Self::new(indices, self.form.clone(), self.direction)
    }

    fn increasing_value(&self, x: &[f64]) -> f64 {
        match &self.form {
            TestForm::Threshold { thresholds } => {
                let all = self.indices.iter().zip(thresholds).all(|(&i, &t)| x[i] > t);
                if all {
                    1.0
                } else {
                    0.0
                }
            }
            TestForm::ClippedLinear { weights, lo, hi } => {
                let s: f64 = self.indices.iter().zip(weights).map(|(&i, &w)| w * x[i]).sum();
                s.clamp(*lo, *hi)
            }
            TestForm::MinOfCoordinates { cap } => self.indices.iter().map(|&i| x[i]).fold(*cap, f64::min),
            TestForm::ProductOfRamps { ramps } => self
                .indices
                .iter()
                .zip(ramps)
                .map(|(&i, &(a, b))| ((x[i] - a) / (b - a)).clamp(0.0, 1.0))
                .product(),
        }
    }

    /// Random function of the given direction on `indices`, with parameters
    /// drawn inside `bounds` (the per-coordinate support box of the model).
    pub fn random(rng: &mut ChaCha8Rng, indices: Vec<usize>, bounds: &[(f64, f64)], direction: Direction) -> Self {
        let pick = |rng: &mut ChaCha8Rng, i: usize, lo_frac: f64, hi_frac: f64| {
            let (l, h) = bounds[i];
            l + (h - l) * rng.random_range(lo_frac..hi_frac)
        };
        let form = match rng.random_range(0..4) {
            0 => TestForm::Threshold {
                thresholds: indices.iter().map(|&i| pick(rng, i, 0.05, 0.7)).collect(),
            },
            1 => {
                let weights: Vec<f64> = indices.iter().map(|_| rng.random_range(0.1..1.0)).collect();
                let top: f64 = indices.iter().zip(&weights).map(|(&i, w)| w * bounds[i].1).sum();
                let lo = top * rng.random_range(0.0..0.3);
                let hi = lo + (top - lo) * rng.random_range(0.2..1.0);
                TestForm::ClippedLinear { weights, lo, hi }
            }
            2 => {
                let cap = indices.iter().map(|&i| bounds[i].1).fold(f64::INFINITY, f64::min);
                TestForm::MinOfCoordinates { cap: cap * rng.random_range(0.2..1.0) }
            }
            _ => TestForm::ProductOfRamps {
                ramps: indices
                    .iter()
                    .map(|&i| {
                        let a = pick(rng, i, 0.0, 0.5);
                        let b = a + (bounds[i].1 - a) * rng.random_range(0.1..1.0);
                        (a, b.max(a + 1e-6))
                    })
                    .collect(),
            },
        };
        MonotoneTestFunction::new(indices, form, direction).expect("random parameters are valid")
    }

    /// Random pair of increasing functions on disjoint nonempty random index
    /// subsets of `0..dim` (`dim ≥ 2`).
    pub fn random_pair(rng: &mut ChaCha8Rng, dim: usize, bounds: &[(f64, f64)]) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..dim).collect();
        idx.shuffle(rng);
        let k = rng.random_range(1..dim);
        let l = rng.random_range(1..=dim - k);
        let mut a = idx[..k].to_vec();
        let mut b = idx[k..k + l].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        (
            Self::random(rng, a, bounds, Direction::Increasing),
            Self::random(rng, b, bounds, Direction::Increasing),
        )
    }

    /// Counts sampled pairs `x ≤ y` violating the declared monotonicity.
    pub fn monotonicity_violations(&self, bounds: &[(f64, f64)], pairs: usize, seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sign = match self.direction {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        };
        (0..pairs)
            .filter(|_| {
                let x: Vec<f64> = bounds.iter().map(|&(l, h)| rng.random_range(l..=h)).collect();
                let y: Vec<f64> = x
                    .iter()
                    .zip(bounds)
                    .map(|(&xi, &(_, h))| xi + (h - xi) * rng.random::<f64>())
                    .collect();
                sign * (self.value(&y) - self.value(&x)) < -1e-12
            })
            .count()
    }
}

impl PointFunction for MonotoneTestFunction {
    #[inline]
    fn value(&self, x: &[f64]) -> f64 {
        let v = self.increasing_value(x);
        match self.direction {
            Direction::Increasing => v,
            Direction::Decreasing => {
                let (lo, hi) = self.range();
                lo + hi - v
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match &self.form {
            TestForm::Threshold { .. } | TestForm::ProductOfRamps { .. } => (0.0, 1.0),
            TestForm::ClippedLinear { lo, hi, .. } => (*lo, *hi),
            TestForm::MinOfCoordinates { cap } => (0.0, *cap),
        }
    }

    fn breaks(&self, axis: usize, x: &[f64], known: &[bool], out: &mut Vec<f64>) {
        let Some(pos) = self.indices.iter().position(|&i| i == axis) else { return };
        let others_known = self.indices.iter().all(|&i| i == axis || known[i]);
        match &self.form {
            TestForm::Threshold { thresholds } => out.push(thresholds[pos]),
            TestForm::ClippedLinear { weights, lo, hi } => {
                if others_known && weights[pos] > 0.0 {
                    let rest: f64 = self
                        .indices
                        .iter()
                        .zip(weights)
                        .filter(|(&i, _)| i != axis)
                        .map(|(&i, &w)| w * x[i])
                        .sum();
                    out.push((lo - rest) / weights[pos]);
                    out.push((hi - rest) / weights[pos]);
                }
            }
            TestForm::MinOfCoordinates { cap } => {
                out.push(*cap);
                if others_known {
                    let m = self.indices.iter().filter(|&&i| i != axis).map(|&i| x[i]).fold(*cap, f64::min);
                    out.push(m);
                }
            }
            TestForm::ProductOfRamps { ramps } => {
                out.push(ramps[pos].0);
                out.push(ramps[pos].1);
            }
        }
    }
}

/// Product of a list of point functions.
pub struct Product<'a>(pub Vec<&'a dyn PointFunction>);

impl PointFunction for Product<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|f| f.value(x)).product()
    }

    fn breaks(&self, axis: usize, x: &[f64], known: &[bool], out: &mut Vec<f64>) {
        for f in &self.0 {
            f.breaks(axis, x, known, out);
        }
    }

    fn range(&self) -> (f64, f64) {
        self.0.iter().fold((1.0, 1.0), |(lo, hi), f| {
            let (a, b) = f.range();
            let c = [lo * a, lo * b, hi * a, hi * b];
            (c.iter().cloned().fold(f64::INFINITY, f64::min), c.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms_evaluate() {
        let t = MonotoneTestFunction::indicator_above(0, 1.0).unwrap();
        assert_eq!(t.value(&[1.5, 0.0]), 1.0);
        assert_eq!(t.value(&[1.0, 0.0]), 0.0);
        let c = MonotoneTestFunction::coordinate(1, 0.0, 2.0).unwrap();
        assert_eq!(c.value(&[9.0, 0.7]), 0.7);
        let m = MonotoneTestFunction::new(vec![0, 1], TestForm::MinOfCoordinates { cap: 1.0 }, Direction::Increasing).unwrap();
        assert_eq!(m.value(&[0.4, 3.0]), 0.4);
        let r = MonotoneTestFunction::new(
            vec![0],
            TestForm::ProductOfRamps { ramps: vec![(0.0, 2.0)] },
            Direction::Decreasing,
        )
        .unwrap();
        assert_eq!(r.value(&[0.5]), 0.75);
    }

    #[test]
    fn rejects_malformed() {
        assert!(MonotoneTestFunction::new(vec![], TestForm::MinOfCoordinates { cap: 1.0 }, Direction::Increasing).is_err());
        assert!(MonotoneTestFunction::new(
            vec![0],
            TestForm::ClippedLinear { weights: vec![-1.0], lo: 0.0, hi: 1.0 },
            Direction::Increasing
        )
        .is_err());
    }

    #[test]
    fn random_functions_are_monotone() {
        let bounds = vec![(0.0, 2.0); 3];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in 0..40 {
            let dir = if k % 2 == 0 { Direction::Increasing } else { Direction::Decreasing };
            let f = MonotoneTestFunction::random(&mut rng, vec![0, 2], &bounds, dir);
            assert_eq!(f.monotonicity_violations(&bounds, 200, k), 0, "{f:?}");
            let (lo, hi) = f.range();
            let v = f.value(&[1.0, 1.0, 1.0]);
            assert!(v >= lo && v <= hi);
        }
    }
}
