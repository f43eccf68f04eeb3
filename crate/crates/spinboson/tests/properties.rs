//! Property tests for the structural invariants: kernel symmetries, stretch
//! invariance of the influence functionals, region geometry, and the
//! reversal identity of the system factor.

use proptest::prelude::*;
use spinboson::bath::{build_bath, BathSpec};
use spinboson::diagrams::{enumerate_pairings, is_linked, lb_connected, lb_full};
use spinboson::sampling::{
    in_fresh_dyson, in_region_inch, region_volume_dyson, region_volume_dyson_fresh,
    region_volume_inch, region_volume_inch_fresh, sample_fresh_dyson, sample_fresh_inch,
    SamplingConfig,
};
use spinboson::spinsys::{bare_propagator, u0_functional, ModelConfig};
use spinboson::time::{TimePoint, TimeSequence};

fn test_bath() -> spinboson::bath::BathCorrelation {
    build_bath(&BathSpec::with_default_cutoff(0.3, 2.0, 4.0, 48)).unwrap()
}

fn sorted_distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.retain(|x| *x != 0.0);
    v.sort_unstable_by(f64::total_cmp);
    v.dedup();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_reflection_conjugation(x in -4.0f64..4.0) {
        let bath = test_bath();
        let plus = bath.b_star(x);
        let minus = bath.b_star(-x);
        prop_assert_eq!(plus.re.to_bits(), minus.re.to_bits());
        prop_assert_eq!(plus.im.to_bits(), (-minus.im).to_bits());
    }

    #[test]
    fn kernel_peaks_at_zero(x in -6.0f64..6.0) {
        let bath = test_bath();
        prop_assert!(bath.b_star(x).norm() <= bath.b_star(0.0).re + 1e-12);
    }

    #[test]
    fn two_point_translation_invariance(
        a in -2.0f64..-0.02,
        gap in 0.01f64..1.0,
        dt in 0.0f64..1.5,
    ) {
        let bath = test_bath();
        let b = (a + gap).min(-0.01);
        let before = bath.two_point(a, b);
        let after = bath.two_point(a - dt, b - dt);
        prop_assert!((before - after).norm() <= 1e-12);
    }

    #[test]
    fn functionals_invariant_under_stretch(
        raw in proptest::collection::vec(-0.45f64..0.45, 3),
        j in 0i32..6,
    ) {
        let vals = sorted_distinct(raw);
        prop_assume!(vals.len() == 3);
        let bath = test_bath();
        let h = 0.05;
        let seq = TimeSequence::from_values(&vals, h);
        let mut pts = seq.points().to_vec();
        pts.push(TimePoint::node(10));
        let stretched: Vec<TimePoint> = pts.iter().map(|p| p.stretched(j, h)).collect();
        let (f0, f1) = (lb_full(&bath, &pts, h), lb_full(&bath, &stretched, h));
        prop_assert_eq!(f0.re.to_bits(), f1.re.to_bits());
        prop_assert_eq!(f0.im.to_bits(), f1.im.to_bits());
        let (c0, c1) = (lb_connected(&bath, &pts, h), lb_connected(&bath, &stretched, h));
        prop_assert_eq!(c0.re.to_bits(), c1.re.to_bits());
        prop_assert_eq!(c0.im.to_bits(), c1.im.to_bits());
    }

    #[test]
    fn linked_filter_is_a_partition(raw in proptest::collection::vec(-0.9f64..0.9, 6)) {
        // Full functional = linked + unlinked parts over all pairings.
        let vals = sorted_distinct(raw);
        prop_assume!(vals.len() == 6);
        let bath = test_bath();
        let h = 0.05;
        let seq = TimeSequence::from_values(&vals, h);
        let pts = seq.points();
        let full = lb_full(&bath, pts, h);
        let linked = lb_connected(&bath, pts, h);
        let mut unlinked = num_complex::Complex64::new(0.0, 0.0);
        for pairing in enumerate_pairings(6).unwrap() {
            if is_linked(&pairing) {
                continue;
            }
            let mut prod = num_complex::Complex64::new(1.0, 0.0);
            for &(a, b) in &pairing.pairs {
                prod *= bath.two_point_pts(&pts[a as usize - 1], &pts[b as usize - 1], h);
            }
            unlinked += prod;
        }
        prop_assert!((full - (linked + unlinked)).norm() <= 1e-12 * full.norm().max(1.0));
    }

    #[test]
    fn stretch_maps_fresh_regions_forward(i in 1u32..6, j in 0u32..5) {
        // seq in fresh region i implies stretch(seq, j) in region i + j.
        let cfg = SamplingConfig::new(0.25, 3, 25, 0.1, 12, 99).unwrap();
        let batch = sample_fresh_dyson(&cfg, i);
        for group in &batch.groups {
            for seq in &group.sequences {
                prop_assert!(in_fresh_dyson(seq, i, &cfg));
                let stretched = seq.stretch(j as i32);
                let target = i + j;
                let t_target = cfg.t(target as i64);
               prop_assert!(stretched.values().iter().all(|v| v.abs() <= t_target));
                // Strictly outside the fresh core once stretched.
                if j > 0 {
                    prop_assert!(stretched.min_abs_value() >= cfg.h);
                }
            }
        }
    }

    #[test]
    fn inch_samples_sit_in_their_regions(p in -6i32..0, k in 0i32..6) {
        let cfg = SamplingConfig::new(0.25, 3, 25, 0.1, 6, 7).unwrap();
        let batch = sample_fresh_inch(&cfg, p, k);
        for group in &batch.groups {
            for seq in &group.sequences {
                prop_assert!(in_region_inch(seq, p, k, &cfg));
            }
        }
    }

    #[test]
    fn dyson_fresh_volumes_tile_the_simplex(m in prop_oneof![Just(1u32), Just(3), Just(5)], i in 1u32..30) {
        let h = 0.05;
        let total: f64 = (1..=i).map(|j| region_volume_dyson_fresh(m, j, h)).sum();
        let full = region_volume_dyson(m, i, h);
        prop_assert!((total - full).abs() <= 1e-12 * full.max(1.0));
    }

    #[test]
    fn inch_fresh_volumes_tile_along_arrows(
        m in prop_oneof![Just(1u32), Just(3), Just(5)],
        p in -10i32..-1,
        k in 1i32..10,
    ) {
        let h = 0.05;
        // Walk the anti-diagonal ancestry of (p, k) back to its head.
        let head_k = (p + k + 1).max(0);
        let mut total = 0.0;
        for kp in head_k..=k {
            total += region_volume_inch_fresh(m, p + k - kp, kp, h);
        }
        let full = region_volume_inch(m, p, k, h);
        prop_assert!((total - full).abs() <= 1e-12 * full.max(1.0));
    }

    #[test]
    fn u0_reversal_identity(raw in proptest::collection::vec(-0.95f64..0.95, 1..6)) {
        let vals = sorted_distinct(raw);
        prop_assume!(!vals.is_empty());
        let model = ModelConfig::new(0.8, 1.3).unwrap();
        let t = 1.0;
        let seq = TimeSequence::from_values(&vals, 0.05);
        let rev: Vec<f64> = vals.iter().rev().map(|v| -v).collect();
        let seq_rev = TimeSequence::from_values(&rev, 0.05);
        let fwd = u0_functional(&model, -t, &seq, t);
        let bwd = u0_functional(&model, -t, &seq_rev, t);
        prop_assert!(bwd.max_abs_diff(&fwd.adjoint()) <= 1e-12);
    }

    #[test]
    fn bare_propagator_is_unitary_off_the_jump(
        a in -1.5f64..1.5,
        b in -1.5f64..1.5,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assume!(hi < 0.0 || lo >= 0.0);
        let model = ModelConfig::new(1.0, 1.0).unwrap();
        let g = bare_propagator(&model, lo, hi);
        let gg = g * g.adjoint();
        prop_assert!(gg.max_abs_diff(&spinboson::matrix::Matrix2::identity()) <= 1e-12);
    }
}
