//! Randomized algebraic properties: norm axioms, duality inequalities, and
//! the distance axioms of the sup-formula metric, checked on flat fields
//! where closed forms exist and on a small recovered torus where they don't.

use finsler::envelope::EnvelopeField;
use finsler::geodesics::FinslerChart;
use finsler::geom::{vec2, Covector, Mat2, Vec2};
use finsler::glue::{run_pipeline, PipelineConfig, RecoveredMetric};
use finsler::norms::MinkowskiNorm;
use once_cell::sync::Lazy;
use proptest::prelude::*;

fn norms_under_test() -> Vec<MinkowskiNorm> {
    let randers = MinkowskiNorm::randers(Mat2::IDENTITY, vec2(0.3, 0.0)).unwrap();
    vec![
        MinkowskiNorm::euclidean(),
        randers.clone(),
        MinkowskiNorm::tabulated(randers.support_samples(256)).unwrap(),
    ]
}

static FLAT_EUCLID: Lazy<EnvelopeField> =
    Lazy::new(|| EnvelopeField::flat_with(MinkowskiNorm::euclidean(), 128));

static FLAT_RANDERS: Lazy<EnvelopeField> = Lazy::new(|| {
    EnvelopeField::flat_with(
        MinkowskiNorm::randers(Mat2::IDENTITY, vec2(0.3, 0.0)).unwrap(),
        128,
    )
});

static SMALL_TORUS: Lazy<RecoveredMetric> = Lazy::new(|| {
    let chart = FinslerChart::conformal(MinkowskiNorm::euclidean(), |p: Vec2| 0.1 * p.x, 2.0);
    let cfg = PipelineConfig {
        eps: Some(0.2),
        r: Some(2.0),
        l: Some(3),
        n_theta: 64,
        n_corr: 49,
        ..PipelineConfig::default()
    };
    run_pipeline(&chart, &cfg, false).expect("pipeline").metric
});

fn vec_in(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| vec2(x, y))
}

fn nonzero_vec() -> impl Strategy<Value = Vec2> {
    vec_in(3.0).prop_filter("away from origin", |v| v.norm() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn norms_are_homogeneous_and_subadditive(u in nonzero_vec(), v in nonzero_vec(), s in 1e-3..50.0f64) {
        for n in norms_under_test() {
            let pu = n.evaluate(u);
            prop_assert!(pu > 0.0);
            prop_assert!((n.evaluate(u * s) - s * pu).abs() <= 1e-9 * (1.0 + s * pu));
            let lhs = n.evaluate(u + v);
            prop_assert!(lhs <= pu + n.evaluate(v) + 1e-9);
        }
    }

    #[test]
    fn duality_bounds_every_pairing(v in nonzero_vec(), a in nonzero_vec()) {
        for n in norms_under_test() {
            let alpha = Covector::from_vec(a);
            let bound = n.dual_norm(alpha) * n.evaluate(v);
            prop_assert!(alpha.apply(v) <= bound * (1.0 + 1e-8) + 1e-12);
        }
    }

    #[test]
    fn flat_euclid_distance_is_the_chord(x in vec_in(5.0), y in vec_in(5.0)) {
        let d = FLAT_EUCLID.recover_distance(x, y);
        prop_assert!((d - (y - x).norm()).abs() <= 1e-9 * (1.0 + d));
    }

    #[test]
    fn flat_randers_distance_matches_its_norm(x in vec_in(5.0), y in vec_in(5.0)) {
        // Straight lines are geodesics of a constant field, so the distance
        // is the norm of the displacement.
        let d = FLAT_RANDERS.recover_distance(x, y);
        let want = FLAT_RANDERS.base().evaluate(y - x);
        prop_assert!((d - want).abs() <= 1e-9 * (1.0 + d));
    }

    #[test]
    fn distance_axioms_on_the_flat_field(x in vec_in(5.0), y in vec_in(5.0), z in vec_in(5.0)) {
        let f = &*FLAT_RANDERS;
        prop_assert!(f.recover_distance(x, x).abs() <= 1e-12);
        let dxy = f.recover_distance(x, y);
        prop_assert!(dxy >= -1e-12);
        prop_assert!(f.recover_distance(x, z) <= dxy + f.recover_distance(y, z) + 1e-6);
    }

    #[test]
    fn torus_metric_is_lattice_periodic(x in vec_in(3.0), y in vec_in(3.0), v in nonzero_vec(),
                                        kx in -2i32..3, ky in -2i32..3) {
        let m = &*SMALL_TORUS;
        let shift = vec2(kx as f64 * 2.0 * m.l, ky as f64 * 2.0 * m.l);
        // x + shift rounds before wrapping, so congruent points only agree to
        // a few ulps of the shift magnitude.
        let p = m.norm(x, v);
        prop_assert!((m.norm(x + shift, v) - p).abs() <= 1e-10 * (1.0 + p.abs()));
        let d = m.distance(x, y);
        let ds = m.distance(x + shift, y + shift);
        prop_assert!((d - ds).abs() <= 1e-10 * (1.0 + d));
    }

    #[test]
    fn torus_distance_axioms(x in vec_in(3.0), y in vec_in(3.0), z in vec_in(3.0)) {
        let m = &*SMALL_TORUS;
        prop_assert!(m.distance(x, x) <= 1e-12);
        let dxy = m.distance(x, y);
        prop_assert!(dxy >= 0.0);
        if m.wrap(y - x).norm() > 1e-3 {
            prop_assert!(dxy > 0.0);
        }
        prop_assert!(m.distance(x, z) <= dxy + m.distance(y, z) + 1e-6);
    }
}
