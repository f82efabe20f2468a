use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use spherewidth::geodesic::*;
use spherewidth::shortening::*;
use spherewidth::surface::*;

const ROOT3: f64 = 1.7320508075688772;

fn latitude(s: &Surface, m: usize, u: impl Fn(f64) -> f64) -> Vec<ChartPoint> {
    (0..m)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / m as f64;
            s.from_polar(u(phi), phi)
        })
        .collect()
}

fn equator_geodesic(s: &Surface) -> Geodesic {
    let p = s.anchor("equator:0").unwrap();
    let g = integrate_angle(s, &p, 0.5 * PI, 2.0 * PI).unwrap();
    assert!(closure_defect(s, &g) < 1e-8);
    g
}

fn closed_outcome(out: &FlowOutcome) -> Option<&Geodesic> {
    match &out.kind {
        FlowKind::ConvergedToClosedGeodesic { geodesic, closure_defect } => {
            assert!(*closure_defect < CLOSURE_TOL);
            Some(geodesic)
        }
        _ => None,
    }
}

fn assert_monotone(out: &FlowOutcome) {
    for w in out.track.windows(2) {
        assert!(w[1].1 <= w[0].1 + MONOTONE_SLACK, "length rose from {} to {}", w[0].1, w[1].1);
    }
}

#[test]
fn equator_discretization_keeps_its_length() {
    let s = Surface::round(1.0);
    let lp = discretize_loop(&s, &latitude(&s, 64, |_| 0.5 * PI), 16).unwrap();
    assert_eq!(lp.len(), 16);
    assert_abs_diff_eq!(lp.total_length, 2.0 * PI, epsilon = 1e-6);
    let sum: f64 = lp.arcs.iter().map(|a| a.length).sum();
    assert_abs_diff_eq!(sum, lp.total_length, epsilon = 1e-12);
}

#[test]
fn latitude_discretization_uses_great_circle_chords() {
    let s = Surface::round(1.0);
    let theta = PI / 3.0;
    let lp = discretize_loop(&s, &latitude(&s, 64, |_| theta), 16).unwrap();
    // Spherical law of cosines between neighbours 2 pi / 16 apart in longitude.
    let chord = (theta.cos().powi(2) + theta.sin().powi(2) * (2.0 * PI / 16.0).cos()).acos();
    for a in &lp.arcs {
        assert_abs_diff_eq!(a.length, chord, epsilon = 1e-7);
    }
    assert!(lp.total_length <= 2.0 * PI * theta.sin());
}

#[test]
fn too_few_vertices_are_rejected() {
    let s = Surface::round(1.0);
    let eq = latitude(&s, 64, |_| 0.5 * PI);
    assert!(discretize_loop(&s, &eq, 3).is_ok());
    assert!(matches!(discretize_loop(&s, &eq, 2), Err(ShorteningError::SegmentTooLong { .. })));
}

#[test]
fn prolate_equator_is_a_fixed_point() {
    let s = Surface::ellipsoid(1.2);
    let lp = discretize_loop(&s, &latitude(&s, 64, |_| 0.5 * PI), 16).unwrap();
    let once = birkhoff_step(&s, &lp).unwrap();
    assert_abs_diff_eq!(once.total_length, lp.total_length, epsilon = 1e-9);
    // Two midpoint steps shift the vertices by one arc.
    let twice = birkhoff_step(&s, &once).unwrap();
    for i in 0..16 {
        assert!(s.same_point(&twice.vertices[i], &lp.vertices[(i + 1) % 16], 1e-7), "vertex {i}");
    }
}

#[test]
fn latitude_loop_gets_strictly_shorter() {
    let s = Surface::round(1.0);
    let lp = discretize_loop(&s, &latitude(&s, 64, |_| PI / 3.0), 16).unwrap();
    let next = birkhoff_step(&s, &lp).unwrap();
    assert!(next.total_length < lp.total_length - 1e-6);
}

#[test]
fn tiny_loop_contracts() {
    let s = Surface::round(1.0);
    let c = s.from_polar(1.0, 0.4);
    let pts: Vec<ChartPoint> =
        (0..32).map(|i| integrate_angle(&s, &c, 2.0 * PI * i as f64 / 32.0, 0.005).unwrap().end()).collect();
    let diameter = |v: &[ChartPoint]| {
        let mut best: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                best = best.max(connect_short(&s, &v[i], &v[j], 0.1).unwrap().length);
            }
        }
        best
    };
    let lp = discretize_loop(&s, &pts, 16).unwrap();
    let d0 = diameter(&lp.vertices);
    assert_abs_diff_eq!(d0, 0.01, epsilon = 1e-6);
    let next = birkhoff_step(&s, &lp).unwrap();
    assert!(diameter(&next.vertices) < 0.01);
}

#[test]
fn small_geodesic_circle_flows_to_a_point() {
    let s = Surface::round(1.0);
    let lp = discretize_loop(&s, &latitude(&s, 64, |_| 0.3), 16).unwrap();
    let out = birkhoff_flow(&s, &lp, 2000, point_tolerance(&s)).unwrap();
    assert!(matches!(out.kind, FlowKind::ConvergedToPoint(_)), "{:?}", out.kind);
    assert_monotone(&out);
}

#[test]
fn perturbed_prolate_equator_flows_to_the_equator() {
    let s = Surface::ellipsoid(1.2);
    let pts = latitude(&s, 128, |phi| 0.5 * PI + 0.05 * (3.0 * phi).sin());
    let lp = discretize_loop(&s, &pts, default_vertex_count(&s, &pts)).unwrap();
    let out = birkhoff_flow(&s, &lp, 2000, point_tolerance(&s)).unwrap();
    let g = closed_outcome(&out).expect("closed geodesic");
    assert_abs_diff_eq!(g.length, 2.0 * PI, epsilon = 1e-3);
    assert_monotone(&out);
    assert!(closed_geodesic_index(&s, g, INDEX_GRID).is_ok());
}

#[test]
fn component_boundary_on_the_cone_surface_flows_to_a_point() {
    let s = Surface::calabi_croke(1.0);
    let (a, b) = (s.anchor("bary_A").unwrap(), s.anchor("bary_B").unwrap());
    let r = distance(&s, &a, &b, DEFAULT_REL_TOL).unwrap();
    assert_eq!(r.minimizers.len(), 3);
    let (g0, g1) = (&r.minimizers[0], &r.minimizers[1]);
    let m = 64;
    let mut pts: Vec<ChartPoint> = (0..m).map(|i| g0.point_at(&s, g0.length * i as f64 / m as f64).0).collect();
    pts.extend((0..m).map(|i| g1.point_at(&s, g1.length * (1.0 - i as f64 / m as f64)).0));
    let lp = discretize_loop(&s, &pts, default_vertex_count(&s, &pts)).unwrap();
    assert_abs_diff_eq!(lp.total_length, 2.0 * ROOT3 / 3.0, epsilon = 1e-9);
    let out = birkhoff_flow(&s, &lp, 2000, point_tolerance(&s)).unwrap();
    assert!(matches!(out.kind, FlowKind::ConvergedToPoint(_)), "{:?}", out.kind);
    assert_monotone(&out);
}

#[test]
fn great_circle_has_index_one_and_nullity_two() {
    let s = Surface::round(1.0);
    let g = equator_geodesic(&s);
    let a = closed_geodesic_index(&s, &g, 128).unwrap();
    let b = closed_geodesic_index(&s, &g, 256).unwrap();
    assert_eq!((a.index, a.nullity), (1, 2));
    assert_eq!((b.index, b.nullity), (1, 2));
    // Exact spectrum k^2 - 1.
    for (e, k) in a.eigenvalues.iter().zip([0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]) {
        assert_abs_diff_eq!(*e, k * k - 1.0, epsilon = 1e-4);
    }
    // The three-point scheme is second order: the zero mode's error drops by four.
    let zero = |sp: &JacobiSpectrum| sp.raw_eigenvalues[1];
    let ratio = zero(&a) / zero(&b);
    assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
}

#[test]
fn prolate_equator_has_index_one() {
    let s = Surface::ellipsoid(1.2);
    let g = equator_geodesic(&s);
    for m in [128, 256] {
        let sp = closed_geodesic_index(&s, &g, m).unwrap();
        assert_eq!((sp.index, sp.nullity), (1, 0));
        assert_abs_diff_eq!(sp.eigenvalues[0], -1.0 / 1.44, epsilon = 1e-4);
    }
}

#[test]
fn oblate_equator_has_index_five() {
    let s = Surface::ellipsoid(0.4);
    let g = equator_geodesic(&s);
    assert_abs_diff_eq!(s.curvature(&g.samples[0].p), 6.25, epsilon = 1e-9);
    for m in [128, 256] {
        let sp = closed_geodesic_index(&s, &g, m).unwrap();
        assert_eq!((sp.index, sp.nullity), (5, 0));
    }
}

#[test]
fn open_curves_and_coarse_grids_are_rejected() {
    let s = Surface::round(1.0);
    let g = integrate_angle(&s, &s.anchor("equator:0").unwrap(), 0.5 * PI, 3.0).unwrap();
    assert!(matches!(closed_geodesic_index(&s, &g, 128), Err(ShorteningError::NotClosed(_))));
    assert!(closed_geodesic_index(&s, &equator_geodesic(&s), 32).is_err());
}

fn check_search(s: &Surface, expected: f64, tol: f64) {
    let r = shortest_closed_geodesic(s, 8).unwrap();
    assert_abs_diff_eq!(r.length, expected, epsilon = tol);
    for out in &r.outcomes {
        assert_monotone(out);
        if let Some(g) = closed_outcome(out) {
            if s.is_smooth() {
                assert!(closed_geodesic_index(s, g, INDEX_GRID).is_ok());
            }
        }
    }
}

#[test]
fn shortest_closed_geodesic_on_the_round_sphere() {
    check_search(&Surface::round(1.0), 2.0 * PI, 1e-3);
}

#[test]
fn shortest_closed_geodesic_on_the_prolate_ellipsoid() {
    check_search(&Surface::ellipsoid(1.2), 2.0 * PI, 1e-3);
}

#[test]
fn shortest_closed_geodesic_on_the_cone_surface() {
    check_search(&Surface::calabi_croke(1.0), ROOT3, 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn flows_never_lengthen(amp in 0.01f64..0.3, freq in 1u32..4, u0 in 0.4f64..2.7) {
        let s = Surface::ellipsoid(1.2);
        let pts = latitude(&s, 128, |phi| u0 + amp * (freq as f64 * phi).sin());
        let lp = discretize_loop(&s, &pts, default_vertex_count(&s, &pts)).unwrap();
        let out = birkhoff_flow(&s, &lp, 300, point_tolerance(&s)).unwrap();
        prop_assert!(out.max_increase() <= MONOTONE_SLACK);
    }
}
