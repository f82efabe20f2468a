use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spherewidth::geodesic::*;
use spherewidth::surface::*;

const ROOT3: f64 = 1.7320508075688772;

fn polar(s: &Surface, p: &ChartPoint) -> (f64, f64) {
    s.to_polar(p)
}

#[test]
fn half_equator_reaches_the_antipode() {
    let s = Surface::round(1.0);
    let p = s.anchor("equator:0").unwrap();
    let (u0, phi0) = polar(&s, &p);
    // Eastward: increasing longitude.
    let east = unit(&s, &p, [-phi0.sin(), phi0.cos()]);
    let g = integrate(&s, &p, east, PI).unwrap();
    assert!(s.same_point(&g.end(), &s.antipode(&p), 1e-7));
    let (u1, phi1) = polar(&s, &g.end());
    assert_abs_diff_eq!(u1, u0, epsilon = 1e-7);
    assert_abs_diff_eq!((phi1 - phi0).rem_euclid(2.0 * PI), PI, epsilon = 1e-7);
    // Still heading east at the far end: the tangent is the parallel
    // transport of the initial one, which there points opposite in R^3.
    let t = g.final_tangent();
    let (_, phi_t) = polar(&s, &t.base);
    let east_there = unit(&s, &t.base, [-phi_t.sin(), phi_t.cos()]);
    assert_abs_diff_eq!(t.du, east_there[0], epsilon = 1e-6);
    assert_abs_diff_eq!(t.dv, east_there[1], epsilon = 1e-6);
}

fn unit(s: &Surface, p: &ChartPoint, v: [f64; 2]) -> [f64; 2] {
    let n = g_norm(s, p, v);
    [v[0] / n, v[1] / n]
}

#[test]
fn barycenter_toward_edge_midpoint_reaches_other_barycenter() {
    let s = Surface::calabi_croke(1.0);
    let tri = s.triangle().unwrap();
    let c = tri.centroid();
    let v = tri.vertices();
    let mid = [0.5 * (v[0][0] + v[1][0]), 0.5 * (v[0][1] + v[1][1])];
    let d = [mid[0] - c[0], mid[1] - c[1]];
    let n = d[0].hypot(d[1]);
    let g = integrate(&s, &s.anchor("bary_A").unwrap(), [d[0] / n, d[1] / n], ROOT3 / 3.0).unwrap();
    assert!(s.same_point(&g.end(), &s.anchor("bary_B").unwrap(), 1e-12));
}

#[test]
fn great_circles_close_after_two_pi() {
    let s = Surface::round(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..20 {
        let p = s.random_point(&mut rng);
        let g = integrate_angle(&s, &p, 0.3 * k as f64, 2.0 * PI).unwrap();
        assert!(s.same_point(&g.end(), &p, 1e-6), "start {p} end {}", g.end());
    }
}

#[test]
fn equator_points_one_radian_apart_have_two_connections() {
    let s = Surface::round(1.0);
    let x = s.anchor("equator:0").unwrap();
    let y = s.anchor("equator:1").unwrap();
    let c = connect(&s, &x, &y, 48).unwrap();
    assert_eq!(c.geodesics.len(), 2);
    assert_abs_diff_eq!(c.geodesics[0].length, 1.0, epsilon = 1e-7);
    assert_abs_diff_eq!(c.geodesics[1].length, 2.0 * PI - 1.0, epsilon = 1e-7);
    assert!(!c.degenerate_family);
}

#[test]
fn barycenters_have_three_shortest_connections() {
    let s = Surface::calabi_croke(1.0);
    let (x, y) = (s.anchor("bary_A").unwrap(), s.anchor("bary_B").unwrap());
    let c = connect(&s, &x, &y, 48).unwrap();
    let short: Vec<_> = c.geodesics.iter().filter(|g| (g.length - ROOT3 / 3.0).abs() < 1e-9).collect();
    assert!(short.len() >= 3);
    let r = distance(&s, &x, &y, DEFAULT_REL_TOL).unwrap();
    assert_abs_diff_eq!(r.d, ROOT3 / 3.0, epsilon = 1e-12);
    assert_eq!(r.minimizers.len(), 3);
}

#[test]
fn antipodes_are_joined_by_a_meridian_family() {
    let s = Surface::round(1.0);
    let x = s.from_polar(0.7, 0.2);
    let y = s.antipode(&x);
    let c = connect(&s, &x, &y, 48).unwrap();
    assert!(c.degenerate_family);
    let members: Vec<_> = c.geodesics.iter().filter(|g| g.length < PI + 1e-3).collect();
    assert!(members.len() >= 8);
    for g in members {
        assert_abs_diff_eq!(g.length, PI, epsilon = 1e-6);
    }
    let r = distance(&s, &x, &y, DEFAULT_REL_TOL).unwrap();
    assert_abs_diff_eq!(r.d, PI, epsilon = 1e-9);
    assert!(r.degenerate_family);
}

#[test]
fn prolate_latitude_pair_has_two_mirror_minimizers() {
    let a = 1.2;
    let delta: f64 = 0.05;
    let s = Surface::ellipsoid(a);
    // w = a cos(theta) = a delta on the meridians phi = 0 and phi = pi.
    let theta = delta.acos();
    let (x, y) = (s.from_polar(theta, 0.0), s.from_polar(theta, PI));
    let r = distance(&s, &x, &y, DEFAULT_REL_TOL).unwrap();
    assert_eq!(r.minimizers.len(), 2);
    assert!(!r.degenerate_family);
    // Mirror images under phi -> -phi: same length, opposite longitude sweep,
    // same colatitude profile.
    let profile = |g: &Geodesic| -> Vec<(f64, f64)> {
        (0..=8).map(|k| polar(&s, &g.point_at(&s, g.length * k as f64 / 8.0).0)).collect()
    };
    let (p0, p1) = (profile(&r.minimizers[0]), profile(&r.minimizers[1]));
    assert_abs_diff_eq!(r.minimizers[0].length, r.minimizers[1].length, epsilon = 1e-8);
    for ((u0, f0), (u1, f1)) in p0.iter().zip(&p1).skip(1).take(7) {
        assert_abs_diff_eq!(*u0, *u1, epsilon = 1e-6);
        assert_abs_diff_eq!(f0.sin(), -f1.sin(), epsilon = 1e-6);
        // Both stay on the side of the pair, away from the equator.
        assert!(*u0 < PI / 2.0);
    }
    // Neither minimizer leaves x along the meridian, so neither meets the
    // latitude circle orthogonally.
    for g in &r.minimizers {
        let t = g.initial_tangent();
        let (u, phi) = polar(&s, &t.base);
        let radial = [phi.cos(), phi.sin()];
        let along = (t.du * radial[0] + t.dv * radial[1]) / t.du.hypot(t.dv);
        assert!(along.abs() < 0.999, "u = {u}, cos = {along}");
    }
}

#[test]
fn mesh_oracle_examples() {
    let s = Surface::round(1.0);
    let x = s.from_polar(0.4, 1.0);
    assert_abs_diff_eq!(mesh_distance_oracle(&s, &x, &s.antipode(&x), 64), PI, epsilon = 0.05);
    assert_eq!(mesh_distance_oracle(&s, &x, &x, 64), 0.0);
    let cc = Surface::calabi_croke(1.0);
    let (a, b) = (cc.anchor("bary_A").unwrap(), cc.anchor("bary_B").unwrap());
    assert_abs_diff_eq!(mesh_distance_oracle(&cc, &a, &b, 64), ROOT3 / 3.0, epsilon = 0.02);
}

fn surfaces() -> Vec<Surface> {
    BUILTINS.iter().map(|n| Surface::builtin(n).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn distance_layer_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in surfaces() {
            let (x, y, z) = (s.random_point(&mut rng), s.random_point(&mut rng), s.random_point(&mut rng));
            let dxy = distance(&s, &x, &y, DEFAULT_REL_TOL).unwrap();
            let dyx = distance(&s, &y, &x, DEFAULT_REL_TOL).unwrap();
            prop_assert!((dxy.d - dyx.d).abs() < 1e-8, "{}: {} vs {}", s.name, dxy.d, dyx.d);
            let dyz = distance(&s, &y, &z, DEFAULT_REL_TOL).unwrap().d;
            let dxz = distance(&s, &x, &z, DEFAULT_REL_TOL).unwrap().d;
            prop_assert!(dxz <= dxy.d + dyz + 1e-6);
            for g in &dxy.minimizers {
                for smp in g.samples.iter().step_by(7) {
                    prop_assert!((g_norm(&s, &smp.p, smp.t) - 1.0).abs() < 1e-6);
                }
            }
            let g = &dxy.minimizers[0];
            let m = g.midpoint(&s);
            let dm1 = distance(&s, &x, &m, DEFAULT_REL_TOL).unwrap().d;
            let dm2 = distance(&s, &m, &y, DEFAULT_REL_TOL).unwrap().d;
            prop_assert!((dm1 - 0.5 * dxy.d).abs() < 1e-6 && (dm2 - 0.5 * dxy.d).abs() < 1e-6);
            let mesh = surface_mesh(&s);
            prop_assert!((mesh.distance(&s, &x, &y) - dxy.d).abs() < 3.0 * mesh.h);
        }
    }
}
