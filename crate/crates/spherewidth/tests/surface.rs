use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use spherewidth::surface::*;

fn smooth_builtins() -> Vec<Surface> {
    ["round", "prolate", "oblate", "dumbbell"].iter().map(|n| Surface::builtin(n).unwrap()).collect()
}

/// Christoffel symbols of a diagonal polar metric diag(E(u), G(u)) in
/// closed form, with derivatives by central differences of the evaluator.
fn polar_christoffels(s: &Surface, u: f64) -> [[[f64; 2]; 2]; 2] {
    let h = 1e-6;
    let e = |u: f64| s.polar_metric_tensor(u, 0.0)[0][0];
    let g = |u: f64| s.polar_metric_tensor(u, 0.0)[1][1];
    let (e0, g0) = (e(u), g(u));
    let (de, dg) = ((e(u + h) - e(u - h)) / (2.0 * h), (g(u + h) - g(u - h)) / (2.0 * h));
    let mut out = [[[0.0; 2]; 2]; 2];
    out[0][0][0] = de / (2.0 * e0);
    out[0][1][1] = -dg / (2.0 * e0);
    out[1][0][1] = dg / (2.0 * g0);
    out[1][1][0] = dg / (2.0 * g0);
    out
}

#[test]
fn round_equator_metric_is_flat_frame() {
    let s = Surface::round(1.0);
    let g = s.polar_metric_tensor(PI / 2.0, 0.0);
    assert_abs_diff_eq!(g[0][0], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g[1][1], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g[0][1], 0.0);
    let gam = polar_christoffels(&s, PI / 2.0);
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(gam[k][i][j], 0.0, epsilon = 1e-9);
            }
        }
    }
    assert_abs_diff_eq!(s.curvature(&s.anchor("equator").unwrap()), 1.0, epsilon = 1e-12);
}

#[test]
fn round_quarter_colatitude_christoffels() {
    let s = Surface::round(1.0);
    let u = PI / 4.0;
    let g = s.polar_metric_tensor(u, 0.3);
    assert_abs_diff_eq!(g[0][0], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g[1][1], 0.5, epsilon = 1e-15);
    // -sin cos and cot at pi/4.
    let gam = polar_christoffels(&s, u);
    assert_abs_diff_eq!(gam[0][1][1], -0.5, epsilon = 1e-8);
    assert_abs_diff_eq!(gam[1][0][1], 1.0, epsilon = 1e-8);
    // The library's closed forms agree with the finite-difference oracle.
    // dg[k] is the derivative along coordinate k.
    let dg = [[[0.0, 0.0], [0.0, 2.0 * u.sin() * u.cos()]], [[0.0, 0.0], [0.0, 0.0]]];
    let lib = christoffel(&g, &dg);
    assert_abs_diff_eq!(lib[0][1][1], -0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(lib[1][0][1], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s.curvature(&s.from_polar(u, 0.3)), 1.0, epsilon = 1e-9);
}

#[test]
fn prolate_equator_curvature() {
    let a = 1.2;
    let s = Surface::ellipsoid(a);
    // Principal curvatures at the equator of x = sin t, z = a cos t: 1 and 1/a^2.
    let k = s.curvature(&s.anchor("equator:0.7").unwrap());
    assert_abs_diff_eq!(k, 1.0 / (a * a), epsilon = 1e-9);
    assert_abs_diff_eq!(k, 0.69444, epsilon = 1e-5);
}

#[test]
fn metric_is_positive_definite_on_chart_grids() {
    for s in smooth_builtins() {
        let r = 0.5 * s.polar_span() * 1.02;
        for chart in 0..2u8 {
            for i in 0..100 {
                for j in 0..100 {
                    let x = -r + 2.0 * r * (i as f64 + 0.5) / 100.0;
                    let y = -r + 2.0 * r * (j as f64 + 0.5) / 100.0;
                    if x.hypot(y) > r {
                        continue;
                    }
                    let m = s.metric_eval(&ChartPoint::new(chart, x, y)).unwrap();
                    let g = m.g;
                    assert_eq!(g[0][1], g[1][0], "{} asymmetric", s.name);
                    let tr = g[0][0] + g[1][1];
                    let det = g[0][0] * g[1][1] - g[0][1] * g[0][1];
                    assert!(det > 0.0 && tr > 0.0, "{} at ({x},{y}) chart {chart}: {g:?}", s.name);
                    for k in 0..2 {
                        assert!((m.gamma[k][0][1] - m.gamma[k][1][0]).abs() <= 1e-10);
                    }
                }
            }
        }
    }
}

#[test]
fn cone_surface_has_no_smooth_metric() {
    let s = Surface::calabi_croke(1.0);
    assert_eq!(s.metric_eval(&s.anchor("bary_A").unwrap()), Err(SurfaceError::NotSmoothSurface));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_curvature_is_inverse_square_radius(r in 0.2f64..5.0, t in 0.0f64..1.0, phi in -PI..PI, chart in 0u8..2) {
        let s = Surface::round(r);
        let p = s.from_polar(t * PI, phi);
        let p = ChartPoint::new(chart, p.u, p.v);
        if let Ok(m) = s.metric_eval(&p) {
            prop_assert!((m.k - 1.0 / (r * r)).abs() <= 1e-9 / (r * r).min(1.0));
        }
    }

    #[test]
    fn chart_transition_round_trips(t in 0.2f64..0.8, phi in -PI..PI, which in 0usize..4) {
        let s = smooth_builtins().swap_remove(which);
        let p = s.from_polar(t * s.polar_span(), phi);
        let q = s.chart_transition(&p, 1 - p.chart).unwrap();
        let back = s.chart_transition(&q, p.chart).unwrap();
        prop_assert!((back.u - p.u).abs() < 1e-12 && (back.v - p.v).abs() < 1e-12);
        let (u0, f0) = s.to_polar(&p);
        let (u1, f1) = s.to_polar(&q);
        prop_assert!((u0 - u1).abs() < 1e-12);
        prop_assert!(((f0 - f1 + PI).rem_euclid(2.0 * PI) - PI).abs() < 1e-9);
    }
}

#[test]
fn north_to_south_chart_reflects_colatitude() {
    let s = Surface::round(1.0);
    for theta in [PI / 2.0, 1.2, 1.9] {
        let p = ChartPoint::new(0, theta * 0.4f64.cos(), theta * 0.4f64.sin());
        let q = s.chart_transition(&p, 1).unwrap();
        assert_abs_diff_eq!(q.u.hypot(q.v), PI - theta, epsilon = 1e-13);
        assert_eq!(s.chart_transition(&p, 0).unwrap(), p);
    }
}

#[test]
fn cone_chart_transition_is_edge_reflection() {
    let s = Surface::calabi_croke(1.0);
    let tri = s.triangle().unwrap();
    let v = tri.vertices();
    // A point just inside face A next to the edge v0-v1 (the x axis).
    let p = ChartPoint::new(0, 0.4, 0.01);
    let q = s.chart_transition(&p, 1).unwrap();
    assert_eq!(q.chart, 1);
    // The two faces are glued by the identity on edges, so across the edge
    // the other face's coordinates continue by the mirror image.
    let along = [v[1][0] - v[0][0], v[1][1] - v[0][1]];
    let n = [-along[1], along[0]];
    let d = (p.u - v[0][0]) * n[0] + (p.v - v[0][1]) * n[1];
    let mirror = [p.u - 2.0 * d * n[0], p.v - 2.0 * d * n[1]];
    assert_abs_diff_eq!(q.u, mirror[0], epsilon = 1e-13);
    assert_abs_diff_eq!(q.v, mirror[1], epsilon = 1e-13);
    assert!(s.same_point(&p, &q, 1e-12));
    assert_eq!(s.chart_transition(&p, 0).unwrap(), p);
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[test]
fn one_reflection_gives_a_rhombus() {
    let d = flat_unfold(1.0, 0, &[1]).unwrap();
    assert_eq!(d.faces, vec![0, 1]);
    let mut pts: Vec<[f64; 2]> = d.triangles.iter().flatten().copied().collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| dist2(*a, *b) < 1e-12);
    assert_eq!(pts.len(), 4);
    // Four sides of length one, diagonals 1 and sqrt 3.
    let mut ds: Vec<f64> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).map(|(i, j)| dist2(pts[i], pts[j])).collect();
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for x in &ds[..5] {
        assert_abs_diff_eq!(*x, 1.0, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(ds[5], 3f64.sqrt(), epsilon = 1e-12);
}

#[test]
fn two_face_chain_joins_barycenters_at_root_three_over_three() {
    let d = flat_unfold(1.0, 0, &[0, 2]).unwrap();
    assert_eq!(d.triangles.len(), 3);
    let centroid = |t: &[[f64; 2]; 3]| [(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0];
    let (a, b) = (centroid(&d.triangles[0]), centroid(&d.triangles[1]));
    assert_abs_diff_eq!(dist2(a, b), 3f64.sqrt() / 3.0, epsilon = 1e-12);
    d.check_segment(a, b).unwrap();
}

#[test]
fn unfoldings_are_isometries() {
    for chain in [vec![0usize], vec![0, 1], vec![1, 2, 0], vec![2, 0, 2, 1, 0], vec![0, 1, 2, 1]] {
        let d = flat_unfold(1.0, 0, &chain).unwrap();
        for t in &d.triangles {
            for i in 0..3 {
                assert_abs_diff_eq!(dist2(t[i], t[(i + 1) % 3]), 1.0, epsilon = 1e-12);
            }
        }
    }
    assert!(flat_unfold(1.0, 0, &[1, 1]).is_err());
}

#[test]
fn four_crossing_strip_carries_a_closed_geodesic_of_length_root_three() {
    let d = flat_unfold(1.0, 0, &[0, 1, 2, 1]).unwrap();
    let m = d.maps.last().unwrap();
    // Orientation-preserving with identity linear part: a translation.
    assert!(!m.odd);
    assert_abs_diff_eq!(m.m[0][0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(m.m[0][1], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(m.m[1][0], 0.0, epsilon = 1e-12);
    let len = m.t[0].hypot(m.t[1]);
    assert_abs_diff_eq!(len, 3f64.sqrt(), epsilon = 1e-12);
    // Some straight segment P -> P + t stays in the strip and misses cone points.
    let s = Surface::calabi_croke(1.0);
    let mut found = 0;
    for i in 1..40 {
        for j in 1..40 {
            let p = [i as f64 / 40.0, j as f64 / 40.0 * 0.866];
            if !s.triangle().unwrap().contains(p, 0.0) {
                continue;
            }
            let q = [p[0] + m.t[0], p[1] + m.t[1]];
            if d.check_segment(p, q).is_ok() {
                found += 1;
                let a = s.from_development(p).unwrap();
                let b = s.from_development(q).unwrap();
                assert!(s.same_point(&a, &b, 1e-12));
            }
        }
    }
    assert!(found > 0);
}

#[test]
fn antipode_has_no_fixed_points() {
    for name in BUILTINS {
        let s = Surface::builtin(name).unwrap();
        for p in s.grid_points(200) {
            let q = s.antipode(&p);
            assert!(!s.same_point(&p, &q, 1e-6), "{name}: fixed point {p}");
            if s.is_smooth() {
                assert!(s.same_point(&s.antipode(&q), &p, 1e-12), "{name}: not an involution at {p}");
            }
        }
    }
    // On the cone surface the map swaps faces and turns by a third: order six.
    let cc = Surface::calabi_croke(1.0);
    let p = ChartPoint::new(0, 0.3, 0.2);
    let mut q = p;
    for k in 1..=6 {
        q = cc.antipode(&q);
        assert_eq!(cc.same_point(&p, &q, 1e-12), k == 6, "power {k}");
    }
}

#[test]
fn injectivity_bounds() {
    assert_abs_diff_eq!(Surface::round(2.0).inj_lower, 2.0 * PI);
    let cc = Surface::calabi_croke(1.0);
    let b = cc.anchor("bary_A").unwrap();
    // Barycenter to vertex is 1/sqrt 3.
    assert_abs_diff_eq!(cc.inj_lower_at(&b), 0.5 * 3f64.sqrt() / 3f64.sqrt(), epsilon = 1e-12);
    let near = ChartPoint::new(0, 1e-3, 1e-3);
    assert!(cc.inj_lower_at(&near) < 2e-3);
}

#[test]
fn configs_round_trip() {
    for name in BUILTINS {
        let s = Surface::builtin(name).unwrap();
        let cfg = s.to_config().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = Surface::from_config(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.inj_lower, s.inj_lower);
        let p = s.grid_points(7)[3];
        if s.is_smooth() {
            assert_abs_diff_eq!(back.curvature(&p), s.curvature(&p), epsilon = 1e-12);
        }
    }
    let bad: SurfaceConfig = serde_json::from_str(r#"{"kind": "torus", "params": {}}"#).unwrap();
    assert!(Surface::from_config(&bad).is_err());
}

#[test]
fn anchors_resolve_per_kind() {
    let cc = Surface::calabi_croke(1.0);
    assert!(cc.anchor("bary_B").is_ok());
    assert!(cc.anchor("north").is_err());
    let r = Surface::round(1.0);
    let e = r.anchor("equator:1.0").unwrap();
    assert_abs_diff_eq!(r.to_polar(&e).0, PI / 2.0, epsilon = 1e-15);
    assert!(r.anchor("bary_A").is_err());
    assert!(r.anchor("neck").is_err());
    let db = Surface::dumbbell();
    assert!(db.anchor("neck:0").is_ok());
}
