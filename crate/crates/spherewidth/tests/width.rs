use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spherewidth::critical::{Verdict, ETA};
use spherewidth::geodesic::{distance, DEFAULT_REL_TOL};
use spherewidth::surface::*;
use spherewidth::width::*;

const ROOT3: f64 = 1.7320508075688772;

fn opts(grid: usize) -> EstimateOptions {
    EstimateOptions { grid, ..Default::default() }
}

fn check_interval(e: &WidthEstimate) {
    assert!(e.lower.value <= e.upper.value + 1e-6, "[{}, {}]", e.lower.value, e.upper.value);
    if let Some(cu) = &e.critical {
        assert_eq!(cu.classification.verdict, Verdict::Critical);
        let cert = cu.classification.certificate.as_ref().unwrap();
        let mut sum = [0.0; 4];
        for (&i, &w) in cert.indices.iter().zip(&cert.weights) {
            for k in 0..4 {
                sum[k] += w * cu.classification.conormals[i].c[k];
            }
        }
        assert!(sum.iter().map(|v| v * v).sum::<f64>().sqrt() <= 2.0 * ETA);
    }
}

#[test]
fn round_width_is_pi_with_an_antipodal_witness() {
    let s = Surface::round(1.0);
    let e = estimate_width(&s, &opts(16)).unwrap();
    check_interval(&e);
    assert_abs_diff_eq!(e.lower.value, PI, epsilon = 1e-3);
    assert_abs_diff_eq!(e.upper.value, PI, epsilon = 1e-3);
    assert!(e.certified);
    assert!(s.same_point(&e.witness.y, &s.antipode(&e.witness.x), 1e-4));
}

#[test]
fn cone_surface_width_is_attained_at_the_barycenters() {
    let s = Surface::calabi_croke(1.0);
    let e = estimate_width(&s, &opts(16)).unwrap();
    check_interval(&e);
    assert_abs_diff_eq!(e.upper.value, ROOT3 / 3.0, epsilon = 1e-6);
    assert_eq!(e.upper.label, BoundLabel::Certified);
    let (a, b) = (s.anchor("bary_A").unwrap(), s.anchor("bary_B").unwrap());
    let w = &e.witness;
    assert!(
        (s.same_point(&w.x, &a, 1e-6) && s.same_point(&w.y, &b, 1e-6))
            || (s.same_point(&w.x, &b, 1e-6) && s.same_point(&w.y, &a, 1e-6)),
        "witness {} {}",
        w.x,
        w.y
    );
}

#[test]
fn baseline_values() {
    let round = baseline_upper(&Surface::round(1.0), 16);
    assert_abs_diff_eq!(round.value, PI, epsilon = 1e-6);
    let cc = Surface::calabi_croke(1.0);
    let b = baseline_upper(&cc, 16);
    assert_abs_diff_eq!(b.value, ROOT3 / 3.0, epsilon = 1e-9);
    assert!(cc.same_point(&b.x0, &cc.anchor("bary_A").unwrap(), 1e-12)
        || cc.same_point(&b.x0, &cc.anchor("bary_B").unwrap(), 1e-12));
}

#[test]
fn critical_pairs_give_upper_bounds() {
    let cc = Surface::calabi_croke(1.0);
    let cu = critical_upper(&cc, &cc.anchor("bary_A").unwrap(), &cc.anchor("bary_B").unwrap()).unwrap();
    assert_abs_diff_eq!(cu.value, ROOT3 / 3.0, epsilon = 1e-9);
    assert_eq!(cu.certificates.len(), 3);
    assert!(cu.certificates.iter().all(|c| matches!(c.termination, Termination::Point { .. })));

    let round = Surface::round(1.0);
    let x = round.from_polar(0.6, 1.1);
    let cu = critical_upper(&round, &x, &round.antipode(&x)).unwrap();
    assert_abs_diff_eq!(cu.value, PI, epsilon = 1e-6);

    // A regular pair is turned away.
    let y = round.from_polar(1.6, 1.1);
    assert!(matches!(critical_upper(&round, &x, &y), Err(WidthError::NotCritical(_))));
}

#[test]
fn stable_neck_pair_is_refused() {
    let s = Surface::dumbbell();
    let (x, y) = (s.anchor("neck:0").unwrap(), s.anchor("neck:3.14159265358979").unwrap());
    match critical_upper(&s, &x, &y) {
        Err(WidthError::ComponentFlowHitGeodesic { .. }) => {}
        Ok(cu) => panic!("neck pair accepted with bound {}", cu.value),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn antipodal_pairing_bounds() {
    let round = pairing_lower(&Surface::round(1.0), &PairingMap::Antipodal, 16).unwrap();
    assert_abs_diff_eq!(round.value, PI, epsilon = 1e-6);

    let s = Surface::ellipsoid(1.2);
    let lower = pairing_lower(&s, &PairingMap::Antipodal, 16).unwrap();
    let upper = baseline_upper(&s, 16);
    assert!(lower.value <= upper.value + 1e-6);
}

#[test]
fn dumbbell_pairing_clears_the_neck() {
    let s = Surface::dumbbell();
    let neck = distance(&s, &s.anchor("neck:0").unwrap(), &s.anchor("neck:3.14159265358979").unwrap(), DEFAULT_REL_TOL)
        .unwrap()
        .d;
    let p = pairing_lower(&s, &PairingMap::Antipodal, 16).unwrap();
    assert!(p.value > neck + 0.5, "pairing {} neck {neck}", p.value);
}

#[test]
fn tabulated_pairing_with_a_fixed_point_is_rejected() {
    let s = Surface::round(1.0);
    let p = s.from_polar(1.0, 0.5);
    let map = PairingMap::Tabulated { pairs: vec![(p, p), (s.from_polar(0.4, 0.0), s.from_polar(2.0, 1.0))] };
    assert!(matches!(pairing_lower(&s, &map, 16), Err(WidthError::FixedPointDetected { .. })));
}

#[test]
fn diameters() {
    let round = diameter(&Surface::round(1.0), 16);
    assert_abs_diff_eq!(round.value, PI, epsilon = 1e-6);
    let s = Surface::ellipsoid(1.2);
    let d = diameter(&s, 16);
    assert_abs_diff_eq!(d.value, s.meridian_length(s.polar_span()), epsilon = 1e-4);
    let cc = diameter(&Surface::calabi_croke(1.0), 16);
    assert!(cc.value >= ROOT3 / 3.0 - 1e-9);
}

#[test]
fn constant_width_scans() {
    let round = reidemeister_scan(&Surface::round(1.0), 16).unwrap();
    assert!(round.m_constant && round.constant_width);
    assert_abs_diff_eq!(round.min_m, PI, epsilon = 1e-6);
    let prolate = reidemeister_scan(&Surface::ellipsoid(1.2), 16).unwrap();
    assert!(!prolate.m_constant && !prolate.constant_width);
}

#[test]
fn dumbbell_is_not_of_constant_width() {
    let r = reidemeister_scan(&Surface::dumbbell(), 16).unwrap();
    assert!(!r.constant_width);
}

#[test]
fn half_shortest_closed_geodesic_bounds_the_width() {
    for (s, equality) in [(Surface::round(1.0), true), (Surface::ellipsoid(1.2), true), (Surface::calabi_croke(1.0), false)] {
        let e = estimate_width(&s, &opts(16)).unwrap();
        let c = compare_omega1(&s, &e, 8).unwrap();
        assert!(c.holds, "{}", s.name);
        assert_eq!(c.equality, equality, "{}", s.name);
        if equality {
            let ic = c.index_check.unwrap();
            assert!(ic.passed);
            assert_eq!(ic.index, 1);
        } else {
            assert_abs_diff_eq!(c.omega1, ROOT3, epsilon = 1e-6);
        }
    }
}

#[test]
fn refinement_is_monotone_in_the_grid() {
    for s in [Surface::ellipsoid(1.2), Surface::ellipsoid(0.4), Surface::calabi_croke(1.0)] {
        let mut last: Option<(f64, f64)> = None;
        for r in [16, 32, 64] {
            let lo = pairing_lower(&s, &PairingMap::Antipodal, r).unwrap().value;
            let up = baseline_upper(&s, r).value;
            if let Some((l0, u0)) = last {
                assert!(lo >= l0 - 1e-6, "{}: pairing fell from {l0} to {lo} at R = {r}", s.name);
                assert!(up <= u0 + 1e-6, "{}: baseline rose from {u0} to {up} at R = {r}", s.name);
            }
            last = Some((lo, up));
        }
    }
}

/// Round profile times `1 + c1 (1 - cos 2t) + c2 (1 - cos 4t)`, which keeps
/// the poles smooth.
fn random_profile(rng: &mut ChaCha8Rng) -> Surface {
    let (c1, c2) = (rng.random_range(-0.1..0.1), rng.random_range(-0.05..0.05));
    let m = 200;
    let t: Vec<f64> = (0..=m).map(|i| PI * i as f64 / m as f64).collect();
    let mut f: Vec<f64> =
        t.iter().map(|x| x.sin() * (1.0 + c1 * (1.0 - (2.0 * x).cos()) + c2 * (1.0 - (4.0 * x).cos()))).collect();
    f[0] = 0.0;
    f[m] = 0.0;
    Surface::rotationally_symmetric(Profile::new(t, f).unwrap(), 0.5)
}

#[test]
fn bounds_are_ordered_on_builtins_and_random_profiles() {
    for name in ["prolate", "oblate"] {
        check_interval(&estimate_width(&Surface::builtin(name).unwrap(), &opts(16)).unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let s = random_profile(&mut rng);
        let lo = pairing_lower(&s, &PairingMap::Antipodal, 16).unwrap().value;
        let up = baseline_upper(&s, 16).value;
        assert!(lo <= up + 1e-6, "[{lo}, {up}]");
    }
}
