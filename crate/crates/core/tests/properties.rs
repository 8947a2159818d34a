//! Property suites over the test atlas.

mod common;

use std::sync::Arc;

use leafdecomp::cdcheck::{self, leaf_derivatives, LeafCdOptions};
use leafdecomp::chart::{build_chart, Chart, ChartConfig};
use leafdecomp::disintegrate::{conditional_density, mixture_check, sample_leaf_measure, MixtureConfig, Region};
use leafdecomp::leafdetect::{classify_point, estimate_alpha, estimate_beta, trace_leaf, DetectConfig};
use leafdecomp::linalg::{random_unit, Point};
use leafdecomp::lipmap::{
    isometry_defect, jacobian_of, test_atlas, verify_lipschitz, CdParams, Cylindrical, Gaussian, Lebesgue,
    LipschitzMap, Projection, ScaledMeasure, WeightedMeasure,
};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

use common::{cylinder_seeds, rng, sample};

fn p(v: &[f64]) -> Point {
    DVector::from_column_slice(v)
}

fn cylinder_chart(level: [f64; 2], radius: f64, z: f64) -> Chart {
    build_chart(
        Arc::new(Cylindrical),
        &p(&level),
        &cylinder_seeds(64, radius, z),
        &ChartConfig::default(),
    )
    .unwrap()
}

fn projection_chart() -> Chart {
    let seeds: Vec<Point> = (0..25).map(|i| p(&[0.0, 0.0, -3.0 + 0.25 * i as f64])).collect();
    build_chart(Arc::new(Projection::new(3, 2)), &DVector::zeros(2), &seeds, &ChartConfig::default()).unwrap()
}

#[test]
fn atlas_maps_are_one_lipschitz() {
    for (i, e) in test_atlas().iter().enumerate() {
        let mut r = rng(10 + i as u64);
        let pts: Vec<Point> = (0..1000).map(|_| sample(e, &mut r)).collect();
        let rep = verify_lipschitz(e.map.as_ref(), &pts, 1e-6).unwrap();
        assert!(rep.pass, "{}: {}", e.key, rep.max_operator_norm);
    }
}

#[test]
fn alpha_and_beta_are_non_increasing_in_k() {
    let cfg = DetectConfig::default();
    for (i, e) in test_atlas().iter().enumerate() {
        let mut r = rng(20 + i as u64);
        for _ in 0..1000 / test_atlas().len() {
            let x = sample(e, &mut r);
            let cls = classify_point(e.map.as_ref(), &x, &cfg);
            for k in 1..cls.alpha.len() {
                assert!(cls.alpha[k] <= cls.alpha[k - 1] * (1.0 + cfg.rel_precision), "{} alpha at {x}", e.key);
                assert!(cls.beta[k] <= cls.beta[k - 1] * (1.0 + cfg.rel_precision), "{} beta at {x}", e.key);
            }
        }
    }
}

#[test]
fn alpha_is_upper_semicontinuous_along_a_sequence() {
    // α₂ on the cylinder is the distance to the axis; approach x₀ = (1,0,0)
    // from outside, where α₂ is larger
    let cfg = DetectConfig::default();
    let a0 = estimate_alpha(&Cylindrical, &p(&[1.0, 0.0, 0.0]), 2, &cfg).unwrap();
    let tail: Vec<f64> = (1..=6)
        .map(|l| {
            let x = p(&[1.0 + 10f64.powi(-l), 0.0, 0.0]);
            estimate_alpha(&Cylindrical, &x, 2, &cfg).unwrap()
        })
        .collect();
    let limsup = tail[3..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(limsup <= a0 * (1.0 + 2.0 * cfg.rel_precision), "{limsup} vs {a0}");
}

#[test]
fn beta_positive_exactly_on_leaf_dimension() {
    let cfg = DetectConfig::default();
    let x = p(&[0.3, 1.2, -0.4]);
    assert!(estimate_beta(&Cylindrical, &x, 2, &cfg).unwrap() > 0.0);
    assert_eq!(estimate_beta(&Cylindrical, &x, 3, &cfg).unwrap_or(0.0), 0.0);
}

#[test]
fn cylinder_leaves_share_no_interior_points() {
    let cfg = DetectConfig::default();
    let mut r = rng(30);
    let leaves: Vec<_> = (0..40)
        .map(|_| {
            let th = r.gen_range(0.0..std::f64::consts::TAU);
            let rad = r.gen_range(0.3..2.0);
            trace_leaf(&Cylindrical, &p(&[rad * th.cos(), rad * th.sin(), r.gen_range(-1.0..1.0)]), &cfg).unwrap()
        })
        .collect();
    for (i, l1) in leaves.iter().enumerate() {
        let angle1 = l1.base[1].atan2(l1.base[0]);
        for l2 in leaves.iter().skip(i + 1) {
            let angle2 = l2.base[1].atan2(l2.base[0]);
            if (angle1 - angle2).abs() < 1e-9 {
                continue;
            }
            // interior points of leaf 1 are not isometric to the base of leaf 2
            for _ in 0..25 {
                let b = DVector::from_vec(vec![r.gen_range(-0.25..1.0), r.gen_range(-1.0..1.0)]);
                let y = l1.point_at(&b);
                if y[0].hypot(y[1]) < 1e-3 {
                    continue;
                }
                assert!(isometry_defect(&Cylindrical, &y, &l2.base) > 1e-10);
            }
        }
    }
}

/// Empirical Lipschitz ratio of x ↦ z(x) = x + Du(x)ᵀ(s − u(x)) over close
/// pairs in T^λ of the cylinder chart at level (1, 0).
fn z_lipschitz_ratio(lambda: f64) -> f64 {
    let chart = cylinder_chart([1.0, 0.0], 1.5, 0.0);
    let s = p(&[1.0, 0.0]);
    let z_of = |x: &Point| x + jacobian_of(&Cylindrical, x).transpose() * (&s - Cylindrical.eval(x));
    let mut r = rng(40);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let rad = lambda * (1.0 + r.gen_range(0.001..0.5));
        let th = r.gen_range(0.0..std::f64::consts::TAU);
        let x = p(&[rad * th.cos(), rad * th.sin(), r.gen_range(-1.0..1.0)]);
        let y = &x + random_unit(&mut r, 3) * 1e-4;
        if !(chart.in_t_lambda(&x, lambda) && chart.in_t_lambda(&y, lambda)) {
            continue;
        }
        worst = worst.max((z_of(&x) - z_of(&y)).norm() / (&x - &y).norm());
    }
    worst
}

fn g_bound(lambda: f64) -> f64 {
    1.0 + (1.0 + 1.0 / (2.0 * lambda * lambda)).sqrt()
}

#[test]
fn g_is_lipschitz_on_t_lambda_at_half() {
    let ratio = z_lipschitz_ratio(0.5);
    assert!(ratio > 1.5, "sampling missed the tight region: {ratio}");
    assert!(ratio <= g_bound(0.5) * 1.05, "{ratio} vs {}", g_bound(0.5));
}

#[test]
fn g_lipschitz_bound_breaks_for_small_lambda() {
    // the true constant on the cylinder is about 1/λ, above the bound once λ < 0.29
    let ratio = z_lipschitz_ratio(0.1);
    assert!(ratio > g_bound(0.1) * 1.05, "{ratio} vs {}", g_bound(0.1));
    assert!(ratio <= 1.0 / 0.1 * 1.01);
}

#[test]
fn leaf_samples_are_concentrated_on_the_leaf() {
    let chart = cylinder_chart([1.0, 0.0], 1.5, 0.0);
    let measure: Arc<dyn WeightedMeasure> = Arc::new(Gaussian::standard(3));
    for piece in [0, 17, 40] {
        let a = DVector::from_element(1, 0.0);
        let cond = conditional_density(&chart, piece, &a, measure.clone()).unwrap();
        let pts = sample_leaf_measure(&cond, &[-0.9, -2.0], &[2.0, 2.0], 500, 3).unwrap();
        for x in &pts {
            assert!(isometry_defect(&Cylindrical, x, &cond.base).abs() <= 1e-6);
            let b = Cylindrical.eval(x) - Cylindrical.eval(&cond.base);
            assert!(cond.in_support(&b));
        }
    }
}

#[test]
fn densities_are_finite_and_non_negative() {
    let measure: Arc<dyn WeightedMeasure> = Arc::new(Gaussian::standard(3));
    let mut r = rng(50);
    for chart in [cylinder_chart([1.0, 0.0], 1.5, 0.0), projection_chart()] {
        let mut checked = 0;
        while checked < 20_000 {
            let piece = r.gen_range(0..chart.bases.len());
            let a = DVector::from_element(1, r.gen_range(-0.05..0.05));
            let Ok(cond) = conditional_density(&chart, piece, &a, measure.clone()) else { continue };
            for _ in 0..100 {
                let b = DVector::from_vec(vec![r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)]);
                if !cond.in_support(&b) {
                    continue;
                }
                let d = cond.density_raw(&b);
                assert!(d.is_finite() && d >= 0.0, "{d}");
                checked += 1;
            }
        }
    }
}

#[test]
fn overlapping_charts_agree_up_to_a_leaf_constant() {
    // two cylinder charts at different levels cover the same half-planes
    let measure: Arc<dyn WeightedMeasure> = Arc::new(Gaussian::standard(3));
    let c1 = cylinder_chart([1.0, 0.0], 1.5, 0.0);
    let c2 = cylinder_chart([1.5, 0.5], 1.5, 0.5);
    let mut r = rng(60);
    for _ in 0..10 {
        let th = r.gen_range(0.0..std::f64::consts::TAU);
        let x0 = p(&[th.cos(), th.sin(), 0.0]);
        let (p1, a1, _) = c1.g_coords(&x0).unwrap();
        let (p2, a2, _) = c2.g_coords(&x0).unwrap();
        let d1 = conditional_density(&c1, p1, &a1, measure.clone()).unwrap();
        let d2 = conditional_density(&c2, p2, &a2, measure.clone()).unwrap();
        let mut ratios = Vec::new();
        for _ in 0..50 {
            let rad = r.gen_range(0.2..2.5);
            let x = p(&[rad * th.cos(), rad * th.sin(), r.gen_range(-1.5..1.5)]);
            let b1 = Cylindrical.eval(&x) - Cylindrical.eval(&d1.base);
            let b2 = Cylindrical.eval(&x) - Cylindrical.eval(&d2.base);
            assert!((d1.point(&b1) - &x).norm() < 1e-9 && (d2.point(&b2) - &x).norm() < 1e-9);
            ratios.push(d1.density_raw(&b1) / d2.density_raw(&b2));
        }
        let r0 = ratios[0];
        assert!(ratios.iter().all(|q| ((q - r0) / r0).abs() <= 1e-4), "{ratios:?}");
    }
}

#[test]
fn mixture_identity_on_the_plane_distance_map() {
    let entry = test_atlas().into_iter().find(|e| e.key == "distance" && e.n() == 2).unwrap();
    let chart = build_chart(
        entry.map.clone(),
        &DVector::from_column_slice(&entry.chart_level),
        &entry.chart_seeds,
        &ChartConfig::default(),
    )
    .unwrap();
    let region = Region::Box {
        lo: vec![0.3, -0.5],
        hi: vec![1.6, 1.2],
    };
    let cfg = MixtureConfig {
        n_direct: 1 << 16,
        ..MixtureConfig::default()
    };
    for measure in [Arc::new(Lebesgue { n: 2 }) as Arc<dyn WeightedMeasure>, Arc::new(Gaussian::standard(2))] {
        let rep = mixture_check(entry.map.as_ref(), measure, &[chart.clone()], &region, &cfg).unwrap();
        assert!(rep.rel_err <= 0.02, "{rep:?}");
    }
    // Lebesgue volume of the box is exact
    let rep = mixture_check(entry.map.as_ref(), Arc::new(Lebesgue { n: 2 }), &[chart], &region, &cfg).unwrap();
    assert!((rep.mu_direct - 1.3 * 1.7).abs() < 1e-9);
}

#[test]
fn ambient_cd_implies_leaf_cd() {
    let mut r = rng(70);
    let samples: Vec<Point> = (0..100)
        .map(|_| {
            let rad = r.gen_range(0.4..2.5);
            let th = r.gen_range(0.0..std::f64::consts::TAU);
            p(&[rad * th.cos(), rad * th.sin(), r.gen_range(-2.0..2.0)])
        })
        .collect();
    let opts = LeafCdOptions::default();
    let cases: Vec<(Arc<dyn WeightedMeasure>, CdParams)> = vec![
        (Arc::new(Gaussian::standard(3)), CdParams::new(1.0, 3, f64::INFINITY)),
        (Arc::new(Gaussian::standard(3)), CdParams::new(0.5, 3, 10.0)),
        (Arc::new(Lebesgue { n: 3 }), CdParams::new(0.0, 3, 3.0)),
        (Arc::new(Lebesgue { n: 3 }), CdParams::new(0.0, 3, f64::INFINITY)),
    ];
    for (measure, params) in cases {
        let amb = cdcheck::check_ambient_cd(measure.as_ref(), &params, &samples, 8, 1).unwrap();
        if !amb.pass {
            continue;
        }
        for chart in [cylinder_chart([1.0, 0.0], 1.5, 0.0), projection_chart()] {
            let rep = cdcheck::check_leaf_cd(&chart, measure.clone(), &params, &samples, &opts).unwrap();
            assert!(rep.pass, "{} {params:?}: {}", measure.name(), rep.worst_margin);
        }
    }
}

#[test]
fn scaling_the_measure_leaves_margins_unchanged() {
    let chart = cylinder_chart([1.0, 0.0], 1.5, 0.0);
    let samples: Vec<Point> = (0..30).map(|i| p(&[0.5 + 0.05 * i as f64, 0.3, 0.1 * i as f64 - 1.0])).collect();
    let base: Arc<dyn WeightedMeasure> = Arc::new(Gaussian::standard(3));
    let scaled: Arc<dyn WeightedMeasure> = Arc::new(ScaledMeasure {
        inner: base.clone(),
        factor: 17.5,
    });
    let params = CdParams::new(0.5, 3, 7.0);
    let opts = LeafCdOptions::default();
    let a = cdcheck::check_leaf_cd(&chart, base.clone(), &params, &samples, &opts).unwrap();
    let b = cdcheck::check_leaf_cd(&chart, scaled.clone(), &params, &samples, &opts).unwrap();
    assert!((a.worst_margin - b.worst_margin).abs() <= 1e-6, "{} vs {}", a.worst_margin, b.worst_margin);
    let a = cdcheck::check_ambient_cd(base.as_ref(), &params, &samples, 8, 2).unwrap();
    let b = cdcheck::check_ambient_cd(scaled.as_ref(), &params, &samples, 8, 2).unwrap();
    assert_eq!(a.worst_margin, b.worst_margin);
}

#[test]
fn leaf_hessian_converges_at_second_order() {
    // projection + Gaussian: ρ_S(b) = ‖x‖²/2 on the slice, so D²ρ_S(q,q) = 1
    let chart = projection_chart();
    let cond = conditional_density(&chart, 12, &DVector::from_element(1, 0.0), Arc::new(Gaussian::standard(3))).unwrap();
    let b = p(&[0.7, -0.4]);
    let q = p(&[0.6, 0.8]);
    let first_exact = 0.7 * 0.6 - 0.4 * 0.8;
    let errs: Vec<f64> = [1e-1, 1e-2]
        .iter()
        .map(|&h| {
            let (d1, d2) = leaf_derivatives(&cond, &b, &q, h).unwrap();
            (d1 - first_exact).abs().max((d2 - 1.0).abs())
        })
        .collect();
    // exact up to rounding for a quadratic; otherwise the error drops by ~100
    assert!(errs[1] <= 1e-6 || errs[1] <= errs[0] / 50.0, "{errs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cylinder_round_trip(rad in 0.2f64..3.0, th in 0.0f64..std::f64::consts::TAU, z in -2.0f64..2.0) {
        thread_local! {
            static CHART: Chart = cylinder_chart([1.0, 0.0], 1.5, 0.0);
        }
        let x = p(&[rad * th.cos(), rad * th.sin(), z]);
        CHART.with(|chart| {
            let (piece, a, b) = chart.g_coords(&x).unwrap();
            let y = chart.map_f(piece, &a, &b).unwrap();
            prop_assert!((y - &x).norm() <= 1e-9);
            Ok(())
        })?;
    }

    #[test]
    fn defect_is_symmetric_and_non_negative(
        x in prop::collection::vec(-3.0f64..3.0, 3),
        y in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let (x, y) = (p(&x), p(&y));
        let d1 = isometry_defect(&Cylindrical, &x, &y);
        let d2 = isometry_defect(&Cylindrical, &y, &x);
        prop_assert!(d1 >= -1e-9);
        prop_assert!((d1 - d2).abs() <= 1e-12 * (1.0 + d1.abs()));
    }
}
