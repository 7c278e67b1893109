//! Seeded generators of random Young functions, log-concave weights, caps and
//! Orlicz-based models for the verification suites.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::OrliczModel;
use crate::scalar::{LogConcaveScalar, LogPiece, YoungFunction, YoungPiece, YoungPieceKind};

/// Which ingredients a random model may use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelOptions {
    /// Indicator cap and indicator (or unit) weights: uniform measure on a convex body.
    pub uniform: bool,
    /// Allow non-trivial weights.
    pub weights: bool,
    /// Allow `∞`-cutoffs and box Young functions.
    pub cutoffs: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions { uniform: false, weights: true, cutoffs: true }
    }
}

const EXPONENTS: [f64; 4] = [1.0, 1.5, 2.0, 3.0];

pub fn random_young(rng: &mut ChaCha8Rng, cutoffs: bool) -> YoungFunction {
    let kinds = if cutoffs { 4 } else { 3 };
    let c = rng.random_range(0.5..2.0);
    let p = EXPONENTS[rng.random_range(0..EXPONENTS.len())];
    let f = match rng.random_range(0..kinds) {
        0 => YoungFunction::power(c, p),
        1 => {
            let t1: f64 = rng.random_range(0.3..1.0);
            let slope = c * p * t1.powf(p - 1.0) * rng.random_range(1.0..2.0);
            YoungFunction::from_pieces(
                &[
                    YoungPiece { start: 0.0, kind: YoungPieceKind::Power { coeff: c, exponent: p } },
                    YoungPiece { start: t1, kind: YoungPieceKind::Affine { slope, intercept: None } },
                ],
                None,
            )
        }
        2 => {
            let t0 = rng.random_range(0.1..0.6);
            YoungFunction::from_pieces(
                &[
                    YoungPiece { start: 0.0, kind: YoungPieceKind::Affine { slope: 0.0, intercept: None } },
                    YoungPiece { start: t0, kind: YoungPieceKind::Power { coeff: c, exponent: p } },
                ],
                None,
            )
        }
        _ => YoungFunction::box_indicator(rng.random_range(0.5..1.5)),
    }
    .expect("generated Young function is valid");
    if cutoffs && f.cutoff().is_none() && rng.random_bool(0.25) {
        f.with_cutoff(rng.random_range(0.6..2.0)).expect("cutoff is positive")
    } else {
        f
    }
}

pub fn random_weight(rng: &mut ChaCha8Rng, uniform: bool) -> LogConcaveScalar {
    let inf = f64::INFINITY;
    let w = if uniform {
        match rng.random_range(0..3) {
            0 => Ok(LogConcaveScalar::unit()),
            1 => LogConcaveScalar::indicator(0.0, rng.random_range(0.5..2.0)),
            _ => LogConcaveScalar::indicator(rng.random_range(0.0..0.3), inf),
        }
    } else {
        match rng.random_range(0..5) {
            0 => Ok(LogConcaveScalar::unit()),
            1 => LogConcaveScalar::indicator(0.0, rng.random_range(0.5..2.0)),
            2 => LogConcaveScalar::log_affine(-rng.random_range(0.0..1.5), 0.0, 0.0, inf),
            3 => LogConcaveScalar::log_quadratic(
                -rng.random_range(0.0..1.0),
                rng.random_range(-0.5..0.5),
                0.0,
                0.0,
                inf,
            ),
            _ => LogConcaveScalar::log_affine(rng.random_range(0.0..0.5), 0.0, rng.random_range(0.0..0.3), inf),
        }
    };
    w.expect("generated weight is valid")
}

/// A cap on `[0, L]`, maximal (hence non-increasing) from 0.
pub fn random_cap(rng: &mut ChaCha8Rng, uniform: bool) -> LogConcaveScalar {
    let level = rng.random_range(1.0..3.0);
    let cap = if uniform {
        LogConcaveScalar::indicator(0.0, level)
    } else {
        match rng.random_range(0..4) {
            0 => LogConcaveScalar::indicator(0.0, level),
            1 => LogConcaveScalar::log_affine(-rng.random_range(0.2..2.0), 0.0, 0.0, level),
            2 => {
                let u0 = level * rng.random_range(0.2..0.8);
                let beta = rng.random_range(0.2..2.0);
                LogConcaveScalar::from_pieces(
                    0.0,
                    level,
                    vec![
                        LogPiece { start: 0.0, quad: 0.0, lin: 0.0, constant: 0.0 },
                        LogPiece { start: u0, quad: 0.0, lin: -beta, constant: beta * u0 },
                    ],
                )
            }
            _ => LogConcaveScalar::log_quadratic(-rng.random_range(0.1..1.0), 0.0, 0.0, 0.0, level),
        }
    };
    cap.expect("generated cap is valid")
}

/// Random nondegenerate Orlicz-based model of dimension `dim`.
pub fn random_model(rng: &mut ChaCha8Rng, dim: usize, opts: ModelOptions) -> OrliczModel {
    loop {
        let young = (0..dim).map(|_| random_young(rng, opts.cutoffs)).collect();
        let weights = (0..dim)
            .map(|_| {
                if opts.weights {
                    random_weight(rng, opts.uniform)
                } else {
                    LogConcaveScalar::unit()
                }
            })
            .collect();
        let cap = random_cap(rng, opts.uniform);
        if let Ok(m) = OrliczModel::new(young, weights, cap) {
            if !m.is_degenerate() {
                return m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn generated_models_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..50 {
            let opts = ModelOptions { uniform: k % 3 == 0, ..Default::default() };
            let m = random_model(&mut rng, 1 + k % 4, opts);
            assert!(m.validate().is_ok());
            assert!(m.support_box().is_some());
            assert_eq!(m.support_convexity_failures(20, k as u64), 0);
        }
    }
}
