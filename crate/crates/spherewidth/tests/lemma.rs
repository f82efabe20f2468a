use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spherewidth::lemma::*;

/// Independent membership test for unit vectors: the origin lies in the
/// closed triangle iff no circular gap between the three directions exceeds pi.
fn gap_test(a: Vec2, b: Vec2, c: Vec2) -> bool {
    let mut t: Vec<f64> = [a, b, c].iter().map(|p| p[1].atan2(p[0]).rem_euclid(2.0 * PI)).collect();
    t.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let gaps = [t[1] - t[0], t[2] - t[1], t[0] + 2.0 * PI - t[2]];
    gaps.iter().all(|g| *g <= PI + 1e-9)
}

/// The squared equation evaluated term by term, without expansion, with the
/// magnitude of the cancelling pieces for scaling.
fn unexpanded(l: [f64; 4], x: f64) -> (f64, f64) {
    let [a, b, c, d] = l;
    let q = a * a + d * d - b * b - c * c + 2.0 * a * d * x;
    let p = a * a + d * d + b * b - c * c + 2.0 * a * d * x;
    let left = (d + a * x).powi(2) * (4.0 * b * b * c * c - q * q);
    let right = a * a * (1.0 - x * x) * p * p;
    let scale = (d + a * x).powi(2) * (4.0 * b * b * c * c + q * q) + right.abs();
    (left - right, scale)
}

fn check_roots(l: [f64; 4]) -> RootReport {
    let r = verify_roots(l).unwrap();
    assert!(r.max_residual < 1e-9, "{l:?}: {}", r.max_residual);
    assert!(r.x1_le_minus_one && r.x1 <= -1.0, "{l:?}: x1 = {}", r.x1);
    for rc in &r.roots {
        let (v, s) = unexpanded(l, rc.root);
        assert!(v.abs() <= 1e-9 * s.max(1e-300) || r.identically_zero, "{l:?}: root {} gives {v:e} of {s:e}", rc.root);
    }
    r
}

#[test]
fn triangle_membership_examples() {
    assert!(origin_in_triangle([1.0, 0.0], [-1.0, 0.5], [-1.0, -0.5]));
    assert!(origin_in_triangle([1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]));
    assert!(!origin_in_triangle([1.0, 0.0], [0.9, 0.1], [0.8, 0.3]));
}

#[test]
fn symmetric_cross_uses_the_first_three_indices() {
    let v = [[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]];
    let w = v.map(|p| [p[0], -p[1]]);
    let cfg = VectorConfig::new(v, w, [0.25; 4]).unwrap();
    assert_eq!(check_lemma(&cfg).unwrap(), [0, 1, 2]);
    let (th, thp) = cfg.central_angles();
    for k in 0..4 {
        assert_abs_diff_eq!(th[k], 0.5 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(thp[k], 0.5 * PI, epsilon = 1e-12);
    }
}

#[test]
fn seven_gives_a_triple_confirmed_by_the_gap_test() {
    let cfg = sample_config(7);
    let t = check_lemma(&cfg).unwrap();
    assert!(gap_test(cfg.v[t[0]], cfg.v[t[1]], cfg.v[t[2]]));
    assert!(gap_test(cfg.w[t[0]], cfg.w[t[1]], cfg.w[t[2]]));
    // Earlier triples fail at least one of the two tests.
    for e in TRIPLES.iter().take_while(|e| **e != t) {
        assert!(!(gap_test(cfg.v[e[0]], cfg.v[e[1]], cfg.v[e[2]]) && gap_test(cfg.w[e[0]], cfg.w[e[1]], cfg.w[e[2]])));
    }
}

#[test]
fn vectors_in_a_half_plane_are_rejected() {
    let a = [0.1f64, 0.5, 1.0, 1.5];
    let v = a.map(|t| [(-t).cos(), (-t).sin()]);
    let w = a.map(|t| [t.cos(), t.sin()]);
    assert!(matches!(VectorConfig::new(v, w, [0.25; 4]), Err(LemmaError::InvalidConfig(_))));
    let cross = [[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]];
    assert!(matches!(VectorConfig::new(cross, cross, [0.25; 4]), Err(LemmaError::InvalidConfig(_))));
    assert!(matches!(
        VectorConfig::new(cross, cross.map(|p| [p[0], -p[1]]), [0.5, 0.5, 0.1, -0.1]),
        Err(LemmaError::InvalidLambda(_))
    ));
}

#[test]
fn sampler_is_valid_and_deterministic() {
    for seed in [0, 1, 7, 123_456] {
        let c = sample_config(seed);
        assert_eq!(c, sample_config(seed));
        assert!(VectorConfig::new(c.v, c.w, c.lambda).is_ok());
        let sx: f64 = (0..4).map(|i| c.lambda[i] * c.w[i][0]).sum();
        let sy: f64 = (0..4).map(|i| c.lambda[i] * c.w[i][1]).sum();
        assert!(sx.hypot(sy) <= 1e-10);
    }
}

#[test]
fn roots_of_the_generic_cubic() {
    let r = check_roots([0.3, 0.25, 0.25, 0.2]);
    assert_eq!(r.branch, "cubic");
    assert_eq!(r.roots.len(), 3);
    assert!(r.roots.iter().all(|c| c.residual < 1e-10));
    assert_abs_diff_eq!(r.x1, -0.13 / 0.12, epsilon = 1e-12);
    assert!(r.quartic_coefficient.abs() < QUARTIC_TOL);
    assert_eq!(r.x2_eq_x3, Some(false));
}

#[test]
fn roots_when_b_equals_d() {
    let r = check_roots([0.3, 0.25, 0.2, 0.25]);
    assert_eq!(r.branch, "quadratic");
    assert_eq!(r.roots.len(), 2);
    assert!(r.roots.iter().all(|c| c.residual < 1e-10));
    assert!(!r.identically_zero);
}

#[test]
fn pythagorean_weights_merge_the_last_two_roots() {
    // b != d with a^2 + b^2 = c^2 + d^2.
    let r = check_roots([0.4, 0.1, 0.1, 0.4]);
    assert!(r.pythagorean);
    assert_eq!(r.x2_eq_x3, Some(true));
    assert_abs_diff_eq!(r.roots[1].root, -1.0, epsilon = 1e-12);
    // With b = d as well, a = c and every coefficient vanishes.
    let r = check_roots([0.3, 0.2, 0.3, 0.2]);
    assert!(r.pythagorean);
    assert_eq!(r.branch, "quadratic");
    assert!(r.identically_zero);
}

#[test]
fn angle_systems_are_infeasible() {
    for l in [[0.3, 0.25, 0.25, 0.2], [0.25; 4]] {
        let r = angle_infeasibility(l, 400).unwrap();
        assert!(r.infeasible, "{l:?}: margin {}", r.max_joint_margin);
        assert!(r.max_joint_margin <= 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for _ in 0..50 {
        let l = random_lambda(&mut rng);
        assert!(angle_infeasibility(l, 300).unwrap().infeasible, "{l:?}");
    }
}

#[test]
fn ten_thousand_configs_satisfy_the_lemma() {
    let r = fuzz(10_000, 0);
    assert_eq!(r.violations, 0, "{:?}", r.first_violation);
    assert_eq!(r.triple_histogram.iter().sum::<usize>(), 10_000);
}

#[test]
fn a_thousand_weight_vectors_in_both_branches() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut quadratic = 0;
    for i in 0..1000 {
        let mut l = random_lambda(&mut rng);
        if i % 2 == 1 {
            // Force b = d, keeping the sum at one.
            l[3] = l[1];
            let s: f64 = l.iter().sum();
            l = l.map(|x| x / s);
            l[3] = l[1];
            l[0] = 1.0 - l[1] - l[2] - l[3];
        }
        let r = check_roots(l);
        if r.branch == "quadratic" {
            quadratic += 1;
        } else {
            assert_eq!(r.x2_eq_x3, Some(r.pythagorean), "{l:?}");
        }
    }
    assert_eq!(quadratic, 500);
}

proptest! {
    #[test]
    fn membership_agrees_with_the_gap_test(t in prop::array::uniform3(0.0f64..2.0 * PI)) {
        let p = t.map(|x| [x.cos(), x.sin()]);
        // Stay clear of the boundary where both tests hinge on tolerances.
        let mut s = t;
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gaps = [s[1] - s[0], s[2] - s[1], s[0] + 2.0 * PI - s[2]];
        prop_assume!(gaps.iter().all(|g| (g - PI).abs() > 1e-6));
        prop_assert_eq!(origin_in_triangle(p[0], p[1], p[2]), gap_test(p[0], p[1], p[2]));
    }

    #[test]
    fn sampled_configs_hold_their_invariants(seed in any::<u64>()) {
        let c = sample_config(seed);
        let lsum: f64 = c.lambda.iter().sum();
        prop_assert!((lsum - 1.0).abs() < 1e-12);
        for set in [&c.v, &c.w] {
            let sx: f64 = (0..4).map(|i| c.lambda[i] * set[i][0]).sum();
            let sy: f64 = (0..4).map(|i| c.lambda[i] * set[i][1]).sum();
            prop_assert!(sx.hypot(sy) <= 1e-10);
        }
        let (th, thp) = c.central_angles();
        prop_assert!((th.iter().sum::<f64>() - 2.0 * PI).abs() < 1e-9);
        prop_assert!((thp.iter().sum::<f64>() - 2.0 * PI).abs() < 1e-9);
        let t = check_lemma(&c).unwrap();
        prop_assert!(gap_test(c.v[t[0]], c.v[t[1]], c.v[t[2]]) && gap_test(c.w[t[0]], c.w[t[1]], c.w[t[2]]));
    }

    #[test]
    fn quartic_term_always_cancels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = random_lambda(&mut rng);
        prop_assert!(squared_polynomial(l)[4].abs() < QUARTIC_TOL);
    }
}
