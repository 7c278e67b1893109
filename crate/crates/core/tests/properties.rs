//! Property tests for the model, geometry and inequality invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orlicz_core::generate::{random_cap, random_model, random_weight, random_young, ModelOptions};
use orlicz_core::model::{OrliczModel, SonTransform};
use orlicz_core::na::{check_block_ratio, check_two_slices};
use orlicz_core::quadrature::QuadratureSpec;
use orlicz_core::scalar::compose_shift_young;
use orlicz_core::spanned::{Point, SpannedSet};
use orlicz_core::testfn::{Direction, MonotoneTestFunction};
use orlicz_core::theta::{random_slice_pair, theta_profile, ThetaSetup};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn midpoint_gap(f: impl Fn(f64) -> f64, s: f64, t: f64) -> Option<f64> {
    let (a, b, m) = (f(s), f(t), f(0.5 * (s + t)));
    (a.is_finite() && b.is_finite()).then(|| m - 0.5 * (a + b))
}

/// Density of a descendant evaluated by walking its lineage back to the root:
/// weight products are applied pointwise, restrictions re-insert the removed
/// coordinate and shifts translate.
fn lineage_density(root: &OrliczModel, lineage: &[SonTransform], y: &[f64]) -> f64 {
    let mut x = y.to_vec();
    let mut factor = 1.0;
    for t in lineage.iter().rev() {
        match t {
            SonTransform::MultiplyWeight { index, weight } => factor *= weight.eval(x[*index]),
            SonTransform::HyperplaneRestrict { i, j, a, b } => {
                let jc = if j > i { j - 1 } else { *j };
                let xi = a * x[jc] + b;
                x.insert(*i, xi);
            }
            SonTransform::OriginShift { point } => {
                for (v, p) in x.iter_mut().zip(point) {
                    *v += p;
                }
            }
        }
    }
    if factor == 0.0 {
        return 0.0;
    }
    factor * root.density(&x)
}

fn hull(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let cross = |o: Point, a: Point, b: Point| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Hull of random points together with their bounding-box corners, so the
/// minimum and maximum corners are vertices.
fn random_spanned(r: &mut ChaCha8Rng) -> Option<SpannedSet> {
    let k = r.random_range(1..12);
    let mut pts: Vec<Point> = (0..k).map(|_| [r.random_range(0.0..3.0), r.random_range(0.0..3.0)]).collect();
    let lo = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
    let hi = [r.random_range(3.0..4.0), r.random_range(3.0..4.0)];
    pts.push(lo);
    pts.push(hi);
    SpannedSet::from_vertices(hull(pts)).ok()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn descendants_keep_invariants_and_density(seed in any::<u64>(), dim in 1usize..=4, depth in 0usize..=4) {
        let mut r = rng(seed);
        let root = random_model(&mut r, dim, ModelOptions::default());
        let child = root.random_descendant(depth, seed ^ 0x5eed);
        prop_assert!(child.validate().is_ok());
        let lineage: Vec<SonTransform> = child.lineage().iter().map(|e| e.transform.clone()).collect();
        let Some(bx) = child.support_box() else { return Ok(()) };
        for _ in 0..50 {
            let y: Vec<f64> = bx.iter().map(|&(lo, hi)| r.random_range(lo..=hi.max(lo))).collect();
            let got = child.density(&y);
            let want = lineage_density(&root, &lineage, &y);
            prop_assert!(
                (got - want).abs() <= 1e-10 * got.abs().max(want.abs()),
                "density {got} vs lineage {want} at {y:?}"
            );
        }
    }

    #[test]
    fn split_parts_are_spanned(seed in any::<u64>(), angle in 0.0f64..=std::f64::consts::FRAC_PI_2) {
        let mut r = rng(seed);
        let Some(set) = random_spanned(&mut r) else { return Ok(()) };
        let v = set.polygon().vertices().to_vec();
        let w: Vec<f64> = v.iter().map(|_| r.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let p = [
            v.iter().zip(&w).map(|(p, w)| p[0] * w).sum::<f64>() / total,
            v.iter().zip(&w).map(|(p, w)| p[1] * w).sum::<f64>() / total,
        ];
        prop_assume!(set.contains_interior(p));
        let (plus, minus) = set.split(p, angle).unwrap();
        let mut area = 0.0;
        for part in [plus, minus].into_iter().flatten() {
            prop_assert!(part.validate().is_ok());
            area += part.area();
        }
        prop_assert!((area - set.area()).abs() <= 1e-9 * set.area());
    }

    #[test]
    fn density_is_log_concave_on_axis_segments(seed in any::<u64>(), dim in 1usize..=4) {
        let mut r = rng(seed);
        let m = random_model(&mut r, dim, ModelOptions::default());
        let bx = m.support_box().unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = bx.iter().map(|&(lo, hi)| r.random_range(lo..=hi)).collect();
            let axis = r.random_range(0..dim);
            let (lo, hi) = bx[axis];
            let (s, t) = (r.random_range(lo..=hi), r.random_range(lo..=hi));
            let at = |v: f64| {
                let mut p = x.clone();
                p[axis] = v;
                m.density(&p).ln()
            };
            if let Some(gap) = midpoint_gap(at, s, t) {
                prop_assert!(gap >= -1e-8, "log-density midpoint gap {gap}");
            }
        }
    }

    #[test]
    fn young_functions_are_monotone_and_compose_convexly(seed in any::<u64>(), a in 0.0f64..3.0, b in 0.0f64..1.0) {
        let mut r = rng(seed);
        let f = random_young(&mut r, true);
        let g = random_young(&mut r, true);
        let grid: Vec<f64> = (0..200).map(|k| k as f64 * 0.02).collect();
        for w in grid.windows(2) {
            prop_assert!(f.value(w[1]) >= f.value(w[0]));
        }
        let h = compose_shift_young(&f, a, b, &g).unwrap();
        prop_assert!(h.validate().is_ok());
        for _ in 0..100 {
            let (s, t) = (r.random_range(0.0..4.0), r.random_range(0.0..4.0));
            if let Some(gap) = midpoint_gap(|v| h.value(v), s, t) {
                let scale = h.value(s).abs().max(h.value(t).abs()).max(1.0);
                prop_assert!(gap <= 1e-10 * scale, "convexity gap {gap}");
            }
        }
    }

    #[test]
    fn log_concavity_is_closed_under_products(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_weight(&mut r, false).multiply(&random_cap(&mut r, false));
        prop_assert!(p.validate().is_ok());
        for _ in 0..100 {
            let (s, t) = (r.random_range(0.0..4.0), r.random_range(0.0..4.0));
            if let Some(gap) = midpoint_gap(|v| p.log_eval(v), s, t) {
                prop_assert!(gap >= -1e-10 * gap.abs().max(1.0));
            }
        }
    }
}

fn decreasing(f: MonotoneTestFunction) -> MonotoneTestFunction {
    match f.direction() {
        Direction::Decreasing => f,
        Direction::Increasing => f.reversed(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn block_ratio_inequality(seed in any::<u64>(), dim in 2usize..=3) {
        let mut r = rng(seed);
        let m = random_model(&mut r, dim, ModelOptions::default());
        let bx = m.support_box().unwrap();
        let (h, h_bar) = MonotoneTestFunction::random_pair(&mut r, dim, &bx);
        let c = check_block_ratio(&m, &decreasing(h), &decreasing(h_bar), &QuadratureSpec::default()).unwrap();
        if let Some(margin) = c.margin {
            prop_assert!(margin >= -1e-8, "{c:?}");
        }
    }

    #[test]
    fn two_slice_inequality(seed in any::<u64>(), dim in 2usize..=3) {
        let mut r = rng(seed);
        let m = random_model(&mut r, dim, ModelOptions::default());
        let bx = m.support_box().unwrap();
        let axis = dim - 1;
        let h = MonotoneTestFunction::random(&mut r, (0..dim - 1).collect(), &bx[..dim - 1], Direction::Decreasing);
        let (lo, hi) = bx[axis];
        let z1 = r.random_range(lo..hi);
        let z2 = r.random_range(z1..=hi);
        prop_assume!(z1 < z2);
        let u: Vec<_> = (0..dim - 1).map(|_| random_weight(&mut r, false)).collect();
        let c = check_two_slices(&m, axis, &h, z1, z2, &u, &QuadratureSpec::default()).unwrap();
        if let Some(margin) = c.margin {
            let scale = c.lhs.unwrap().abs().max(c.rhs.unwrap().abs()).max(1.0);
            prop_assert!(margin >= -1e-8 * scale, "{c:?}");
        }
    }

    #[test]
    fn theta_profile_is_non_increasing_on_spanned_sets(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pair = random_slice_pair(&mut r, 3);
        let bx = pair.base().support_box().unwrap();
        let Some(shape) = random_spanned(&mut r) else { return Ok(()) };
        // Map the random shape into the base support box.
        let v: Vec<Point> = shape
            .polygon()
            .vertices()
            .iter()
            .map(|p| {
                let (l, h) = (shape.lo(), shape.hi());
                [
                    bx[0].0 + (p[0] - l[0]) / (h[0] - l[0]) * (bx[0].1 - bx[0].0),
                    bx[1].0 + (p[1] - l[1]) / (h[1] - l[1]) * (bx[1].1 - bx[1].0),
                ]
            })
            .collect();
        let Ok(set) = SpannedSet::from_vertices(v) else { return Ok(()) };
        let grid: Vec<f64> = (0..9).map(|k| bx[0].0 + (k as f64 + 0.5) / 9.0 * (bx[0].1 - bx[0].0)).collect();
        let setup = ThetaSetup::Slice(pair);
        let p = theta_profile(&setup, &set, &grid, &QuadratureSpec::default()).unwrap();
        prop_assert!(p.report().passed, "{:?}", p.margins);
    }
}
