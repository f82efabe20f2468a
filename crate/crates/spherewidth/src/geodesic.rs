//! Geodesics: integration, two-point connection by shooting, distance and
//! an independent graph-distance oracle.

use crate::surface::{ChartPoint, Surface, SurfaceError, SurfaceKind, Tile, Triangle, EPS_CONE};
use petgraph::graph::{NodeIndex, UnGraph};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesicError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("geodesic passes within the cone tolerance of a cone point")]
    StepThroughConePoint,
    #[error("no connecting geodesic found: {0}")]
    NoConnectionFound(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Target integration step.
pub const STEP: f64 = 0.005;
/// Minimum number of integration steps.
pub const MIN_STEPS: usize = 200;
/// Charts are switched once the chart radius exceeds this fraction of the span.
pub const CHART_SWITCH: f64 = 0.65;
/// Default relative tolerance for the minimizer set.
pub const DEFAULT_REL_TOL: f64 = 1e-5;
/// Default number of shooting directions for distance queries.
pub const DISTANCE_STARTS: usize = 48;
/// Angular gap under which two connecting geodesics are merged.
pub const DEDUP_ANGLE: f64 = 1e-4;
/// Size of a sampled degenerate family.
pub const FAMILY_SAMPLES: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangentVector {
    pub base: ChartPoint,
    pub du: f64,
    pub dv: f64,
}

impl TangentVector {
    pub fn norm(&self, s: &Surface) -> f64 {
        g_norm(s, &self.base, [self.du, self.dv])
    }
}

pub fn g_norm(s: &Surface, p: &ChartPoint, v: [f64; 2]) -> f64 {
    if !s.is_smooth() {
        return v[0].hypot(v[1]);
    }
    let g = s.metric_tensor(p.chart, p.xy());
    (g[0][0] * v[0] * v[0] + 2.0 * g[0][1] * v[0] * v[1] + g[1][1] * v[1] * v[1]).sqrt()
}

/// One sample of a geodesic; `t` is the unit tangent in the chart of `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub s: f64,
    pub p: ChartPoint,
    pub t: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct Geodesic {
    pub samples: Vec<Sample>,
    pub length: f64,
    /// Initial angle in the orthonormal frame at the start point.
    pub start_angle: f64,
}

impl Geodesic {
    pub fn start(&self) -> ChartPoint {
        self.samples[0].p
    }
    pub fn end(&self) -> ChartPoint {
        self.samples.last().unwrap().p
    }
    pub fn initial_tangent(&self) -> TangentVector {
        let s = &self.samples[0];
        TangentVector { base: s.p, du: s.t[0], dv: s.t[1] }
    }
    pub fn final_tangent(&self) -> TangentVector {
        let s = self.samples.last().unwrap();
        TangentVector { base: s.p, du: s.t[0], dv: s.t[1] }
    }

    /// Point and tangent at arc length `s`, re-integrated from the nearest
    /// sample below it.
    pub fn point_at(&self, surf: &Surface, s: f64) -> (ChartPoint, [f64; 2]) {
        let s = s.clamp(0.0, self.length);
        let i = match self.samples.binary_search_by(|x| x.s.partial_cmp(&s).unwrap()) {
            Ok(i) => return (self.samples[i].p, self.samples[i].t),
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let a = &self.samples[i];
        let ds = s - a.s;
        if surf.is_smooth() {
            let (x, v) = rk4_step(surf, a.p.chart, a.p.xy(), a.t, ds);
            (ChartPoint::new(a.p.chart, x[0], x[1]), v)
        } else {
            let tri = surf.triangle().unwrap();
            match cc_walk(&tri, a.p.chart, a.p.xy(), a.t, ds) {
                Ok((f, x, d)) => (ChartPoint::new(f, x[0], x[1]), d),
                Err(_) => (a.p, a.t),
            }
        }
    }

    pub fn midpoint(&self, surf: &Surface) -> ChartPoint {
        self.point_at(surf, 0.5 * self.length).0
    }

    /// The same curve traversed backwards.
    pub fn reversed(&self) -> Geodesic {
        let samples = self
            .samples
            .iter()
            .rev()
            .map(|x| Sample { s: self.length - x.s, p: x.p, t: [-x.t[0], -x.t[1]] })
            .collect();
        Geodesic { samples, length: self.length, start_angle: f64::NAN }
    }
}

/// Target step on `s`. Ellipsoids shrink it by the square root of their peak
/// curvature: at `a = 0.4` the plain step leaves 1e-8 length errors.
pub fn target_step(s: &Surface) -> f64 {
    match s.kind {
        SurfaceKind::EllipsoidOfRevolution { a } => STEP / (a * a).max(1.0 / (a * a)).sqrt(),
        _ => STEP,
    }
}

/// Number of steps used for a geodesic of the given length.
pub fn step_count(s: &Surface, length: f64) -> usize {
    MIN_STEPS.max((length / target_step(s)).ceil() as usize)
}

/// One classical RK4 step of the geodesic equation in a fixed chart.
pub(crate) fn rk4_step(s: &Surface, chart: u8, x: [f64; 2], v: [f64; 2], h: f64) -> ([f64; 2], [f64; 2]) {
    let acc = |x: [f64; 2], v: [f64; 2]| s.geodesic_accel(chart, x, v);
    let a1 = acc(x, v);
    let x2 = [x[0] + 0.5 * h * v[0], x[1] + 0.5 * h * v[1]];
    let v2 = [v[0] + 0.5 * h * a1[0], v[1] + 0.5 * h * a1[1]];
    let a2 = acc(x2, v2);
    let x3 = [x[0] + 0.5 * h * v2[0], x[1] + 0.5 * h * v2[1]];
    let v3 = [v[0] + 0.5 * h * a2[0], v[1] + 0.5 * h * a2[1]];
    let a3 = acc(x3, v3);
    let x4 = [x[0] + h * v3[0], x[1] + h * v3[1]];
    let v4 = [v[0] + h * a3[0], v[1] + h * a3[1]];
    let a4 = acc(x4, v4);
    (
        [
            x[0] + h / 6.0 * (v[0] + 2.0 * v2[0] + 2.0 * v3[0] + v4[0]),
            x[1] + h / 6.0 * (v[1] + 2.0 * v2[1] + 2.0 * v3[1] + v4[1]),
        ],
        [
            v[0] + h / 6.0 * (a1[0] + 2.0 * a2[0] + 2.0 * a3[0] + a4[0]),
            v[1] + h / 6.0 * (a1[1] + 2.0 * a2[1] + 2.0 * a3[1] + a4[1]),
        ],
    )
}

/// Chart radii beyond which revolution kinds switch from the pole charts to
/// polar coordinates: where the azimuthal chart stops being nearly conformal
/// (`sqrt(G / E) / rho < 0.7`), capped at a third of the span.
fn polar_zone(s: &Surface) -> (f64, f64) {
    let span = s.polar_span();
    let cap = span / 3.0;
    let ratio = |u: f64, rho: f64| {
        let pd = s.polar_data(u);
        (pd.g / pd.e).sqrt() / rho
    };
    let n = 90;
    let mut north = cap;
    let mut south = cap;
    for i in 1..=n {
        let r = cap * i as f64 / n as f64;
        if north == cap && ratio(r, r) < 0.7 {
            north = r;
        }
        if south == cap && ratio(span - r, r) < 0.7 {
            south = r;
        }
    }
    (north, south)
}

/// Integrator state: an azimuthal chart or polar coordinates `(u, phi)`.
#[derive(Clone, Copy)]
enum State {
    Chart(u8, [f64; 2], [f64; 2]),
    Polar([f64; 2], [f64; 2]),
}

fn chart_to_polar(span: f64, c: u8, x: [f64; 2], v: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let rho2 = x[0] * x[0] + x[1] * x[1];
    let rho = rho2.sqrt();
    let radial = (x[0] * v[0] + x[1] * v[1]) / rho;
    let dphi = (x[0] * v[1] - x[1] * v[0]) / rho2;
    let phi = x[1].atan2(x[0]);
    if c == 0 {
        ([rho, phi], [radial, dphi])
    } else {
        ([span - rho, phi], [-radial, dphi])
    }
}

fn polar_to_chart(span: f64, q: [f64; 2], w: [f64; 2]) -> (u8, [f64; 2], [f64; 2]) {
    let (sn, cs) = q[1].sin_cos();
    let (c, rho, drho) = if q[0] <= 0.5 * span { (0, q[0], w[0]) } else { (1, span - q[0], -w[0]) };
    (
        c,
        [rho * cs, rho * sn],
        [drho * cs - rho * w[1] * sn, drho * sn + rho * w[1] * cs],
    )
}

fn polar_rk4(s: &Surface, q: [f64; 2], w: [f64; 2], h: f64) -> ([f64; 2], [f64; 2]) {
    let acc = |q: [f64; 2], w: [f64; 2]| {
        let pd = s.polar_data(q[0]);
        [
            -pd.de / (2.0 * pd.e) * w[0] * w[0] + pd.dg / (2.0 * pd.e) * w[1] * w[1],
            -pd.dg / pd.g * w[0] * w[1],
        ]
    };
    let a1 = acc(q, w);
    let q2 = [q[0] + 0.5 * h * w[0], q[1] + 0.5 * h * w[1]];
    let w2 = [w[0] + 0.5 * h * a1[0], w[1] + 0.5 * h * a1[1]];
    let a2 = acc(q2, w2);
    let q3 = [q[0] + 0.5 * h * w2[0], q[1] + 0.5 * h * w2[1]];
    let w3 = [w[0] + 0.5 * h * a2[0], w[1] + 0.5 * h * a2[1]];
    let a3 = acc(q3, w3);
    let q4 = [q[0] + h * w3[0], q[1] + h * w3[1]];
    let w4 = [w[0] + h * a3[0], w[1] + h * a3[1]];
    let a4 = acc(q4, w4);
    (
        [
            q[0] + h / 6.0 * (w[0] + 2.0 * w2[0] + 2.0 * w3[0] + w4[0]),
            q[1] + h / 6.0 * (w[1] + 2.0 * w2[1] + 2.0 * w3[1] + w4[1]),
        ],
        [
            w[0] + h / 6.0 * (a1[0] + 2.0 * a2[0] + 2.0 * a3[0] + a4[0]),
            w[1] + h / 6.0 * (a1[1] + 2.0 * a2[1] + 2.0 * a3[1] + a4[1]),
        ],
    )
}

/// Integrates a smooth-kind geodesic, calling `visit(s, chart, x, v)` after
/// the start and after every step. Stops early when `visit` returns false.
///
/// Revolution kinds integrate in polar coordinates away from the poles; the
/// azimuthal charts get badly anisotropic on thin necks.
pub(crate) fn shoot_smooth<F: FnMut(f64, u8, [f64; 2], [f64; 2]) -> bool>(
    s: &Surface,
    p: &ChartPoint,
    v0: [f64; 2],
    length: f64,
    mut visit: F,
) -> (u8, [f64; 2], [f64; 2]) {
    let n = step_count(s, length);
    let h = length / n as f64;
    let span = s.polar_span();
    let zone = s.is_revolution().then(|| polar_zone(s));
    let rebase = |st: State| -> State {
        match (st, zone) {
            (State::Chart(c, x, v), None) => {
                if x[0].hypot(x[1]) > CHART_SWITCH * span {
                    let (c, x, v) = s.transition_with_velocity(c, x, v);
                    State::Chart(c, x, v)
                } else {
                    st
                }
            }
            (State::Chart(c, x, v), Some((zn, zs))) => {
                let lim = if c == 0 { zn } else { zs };
                if x[0].hypot(x[1]) > lim {
                    let (q, w) = chart_to_polar(span, c, x, v);
                    State::Polar(q, w)
                } else {
                    st
                }
            }
            (State::Polar(q, w), Some((zn, zs))) => {
                if q[0] < 0.8 * zn || q[0] > span - 0.8 * zs {
                    let (c, x, v) = polar_to_chart(span, q, w);
                    State::Chart(c, x, v)
                } else {
                    st
                }
            }
            (State::Polar(..), None) => unreachable!(),
        }
    };
    let as_chart = |st: State| match st {
        State::Chart(c, x, v) => (c, x, v),
        State::Polar(q, w) => polar_to_chart(span, q, w),
    };
    let mut st = rebase(State::Chart(p.chart, p.xy(), v0));
    let (c, x, v) = as_chart(st);
    if !visit(0.0, c, x, v) {
        return (c, x, v);
    }
    for i in 0..n {
        st = rebase(st);
        st = match st {
            State::Chart(c, x, v) => {
                let (x, v) = rk4_step(s, c, x, v, h);
                State::Chart(c, x, v)
            }
            State::Polar(q, w) => {
                let (q, w) = polar_rk4(s, q, w, h);
                State::Polar(q, w)
            }
        };
        let (c, x, v) = as_chart(st);
        if !visit((i + 1) as f64 * h, c, x, v) {
            break;
        }
    }
    as_chart(st)
}

/// Straight walk on the cone surface from `p` along unit `d` for `len`,
/// reflecting across edges. Returns the final face, point and direction.
pub(crate) fn cc_walk(
    tri: &Triangle,
    face: u8,
    p: [f64; 2],
    d: [f64; 2],
    len: f64,
) -> Result<(u8, [f64; 2], [f64; 2]), GeodesicError> {
    let (mut f, mut x, mut dir) = (face, p, d);
    let mut left = len;
    let mut last: Option<usize> = None;
    for _ in 0..100_000 {
        let mut best: Option<(usize, f64)> = None;
        for e in 0..3 {
            if Some(e) == last {
                continue;
            }
            let (n, _) = tri.edge(e);
            let nd = n[0] * dir[0] + n[1] * dir[1];
            if nd < -1e-15 {
                let t = tri.edge_distance(e, x).max(0.0) / -nd;
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((e, t));
                }
            }
        }
        let Some((e, t)) = best else {
            // Degenerate direction along an edge line; move straight.
            x = [x[0] + left * dir[0], x[1] + left * dir[1]];
            return Ok((f, x, dir));
        };
        if t >= left {
            x = [x[0] + left * dir[0], x[1] + left * dir[1]];
            return Ok((f, x, dir));
        }
        x = [x[0] + t * dir[0], x[1] + t * dir[1]];
        if tri.nearest_vertex_distance(x) <= EPS_CONE * tri.side {
            return Err(GeodesicError::StepThroughConePoint);
        }
        left -= t;
        dir = tri.reflect_dir(e, dir);
        f = 1 - f;
        last = Some(e);
    }
    Err(GeodesicError::InvalidInput("walk did not terminate".into()))
}

/// Angle of a chart direction in the orthonormal frame at `p`.
pub fn frame_angle(s: &Surface, p: &ChartPoint, d: [f64; 2]) -> f64 {
    let [e1, e2] = s.frame(p);
    // Solve d = a e1 + b e2 (e1 = (e1x, 0)).
    let b = d[1] / e2[1];
    let a = (d[0] - b * e2[0]) / e1[0];
    b.atan2(a)
}

/// Chart direction with the given frame angle at `p`.
pub fn frame_direction(s: &Surface, p: &ChartPoint, angle: f64) -> [f64; 2] {
    let [e1, e2] = s.frame(p);
    let (sn, cs) = angle.sin_cos();
    [cs * e1[0] + sn * e2[0], cs * e1[1] + sn * e2[1]]
}

/// Integrates the geodesic from `p` with unit initial direction `dir`.
pub fn integrate(s: &Surface, p: &ChartPoint, dir: [f64; 2], length: f64) -> Result<Geodesic, GeodesicError> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(GeodesicError::InvalidInput(format!("length must be positive, got {length}")));
    }
    let (p, dir) = if s.is_smooth() && p.u.hypot(p.v) > 0.5 * s.polar_span() {
        let (c, x, v) = s.transition_with_velocity(p.chart, p.xy(), dir);
        (ChartPoint::new(c, x[0], x[1]), v)
    } else {
        (s.normalize(p), dir)
    };
    let speed = g_norm(s, &p, dir);
    if (speed - 1.0).abs() > 1e-9 {
        return Err(GeodesicError::InvalidInput(format!("direction is not unit: |w| = {speed}")));
    }
    let start_angle = frame_angle(s, &p, dir);
    let n = step_count(s, length);
    let h = length / n as f64;
    let mut samples = Vec::with_capacity(n + 1);
    if s.is_smooth() {
        shoot_smooth(s, &p, dir, length, |sv, c, x, v| {
            samples.push(Sample { s: sv, p: ChartPoint::new(c, x[0], x[1]), t: v });
            true
        });
    } else {
        let tri = s.triangle().unwrap();
        if tri.nearest_vertex_distance(p.xy()) <= EPS_CONE * tri.side {
            return Err(GeodesicError::StepThroughConePoint);
        }
        let (mut f, mut x, mut d) = (p.chart, p.xy(), dir);
        samples.push(Sample { s: 0.0, p, t: d });
        for i in 0..n {
            (f, x, d) = cc_walk(&tri, f, x, d, h)?;
            samples.push(Sample { s: (i + 1) as f64 * h, p: ChartPoint::new(f, x[0], x[1]), t: d });
        }
    }
    Ok(Geodesic { samples, length, start_angle })
}

/// Integrates from a frame angle rather than a chart direction.
pub fn integrate_angle(s: &Surface, p: &ChartPoint, angle: f64, length: f64) -> Result<Geodesic, GeodesicError> {
    let p = s.normalize(p);
    let d = frame_direction(s, &p, angle);
    integrate(s, &p, d, length)
}

/// Connecting geodesics between two points.
#[derive(Debug, Clone, Serialize)]
pub struct Connection {
    /// Sorted by length.
    pub geodesics: Vec<Geodesic>,
    /// A continuum of connecting geodesics was detected and sampled.
    pub degenerate_family: bool,
}

/// Target point data in both charts for fast squared-distance evaluation.
struct Target {
    y: ChartPoint,
    /// Coordinates and metric of the target in chart 0 and 1 (if representable).
    rep: [Option<([f64; 2], [[f64; 2]; 2])>; 2],
}

impl Target {
    fn new(s: &Surface, y: &ChartPoint) -> Target {
        let y = s.normalize(y);
        let mut rep = [None, None];
        for c in 0..2u8 {
            if let Ok(q) = s.chart_transition(&y, c) {
                if q.u.hypot(q.v) < CHART_SWITCH * s.polar_span() + 0.1 * s.polar_span() {
                    rep[c as usize] = Some((q.xy(), s.metric_tensor(c, q.xy())));
                }
            }
        }
        Target { y, rep }
    }

    fn q(&self, c: u8, x: [f64; 2]) -> f64 {
        match &self.rep[c as usize] {
            Some((y, g)) => {
                let d = [x[0] - y[0], x[1] - y[1]];
                g[0][0] * d[0] * d[0] + 2.0 * g[0][1] * d[0] * d[1] + g[1][1] * d[1] * d[1]
            }
            None => f64::INFINITY,
        }
    }

    /// Signed perpendicular offset of the line through `x` along `v` from the target.
    fn miss(&self, c: u8, x: [f64; 2], v: [f64; 2]) -> f64 {
        match &self.rep[c as usize] {
            Some((y, g)) => {
                let d = [x[0] - y[0], x[1] - y[1]];
                let det = (g[0][0] * g[1][1] - g[0][1] * g[0][1]).sqrt();
                let vn = (g[0][0] * v[0] * v[0] + 2.0 * g[0][1] * v[0] * v[1] + g[1][1] * v[1] * v[1]).sqrt();
                det * (v[0] * d[1] - v[1] * d[0]) / vn
            }
            None => f64::INFINITY,
        }
    }

    /// Tangential offset `<x - y, v>_G / |v|_G^2` (time to closest approach is its negative).
    fn along(&self, c: u8, x: [f64; 2], v: [f64; 2]) -> f64 {
        match &self.rep[c as usize] {
            Some((y, g)) => {
                let d = [x[0] - y[0], x[1] - y[1]];
                let dv = g[0][0] * d[0] * v[0] + g[0][1] * (d[0] * v[1] + d[1] * v[0]) + g[1][1] * d[1] * v[1];
                let vv = g[0][0] * v[0] * v[0] + 2.0 * g[0][1] * v[0] * v[1] + g[1][1] * v[1] * v[1];
                dv / vv
            }
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    s: f64,
    miss: f64,
}

/// Closest approaches to the target along a shot.
fn shoot_events(s: &Surface, x: &ChartPoint, dir: [f64; 2], length: f64, tgt: &Target, reach: f64) -> Vec<Event> {
    let mut prev: Option<(f64, u8, [f64; 2], [f64; 2], f64)> = None;
    let mut prev2_q = f64::INFINITY;
    let mut out = vec![];
    let mut first = true;
    shoot_smooth(s, x, dir, length, |sv, c, xv, v| {
        let q = tgt.q(c, xv);
        if let Some((ps, pc, px, pv, pq)) = prev {
            // Local minimum at the previous sample (or at the start).
            if pq <= q && (pq < prev2_q || first) && pq < reach * reach {
                if let Some(e) = refine_event(s, ps, pc, px, pv, tgt) {
                    out.push(e);
                }
            }
            first = false;
            prev2_q = pq;
        }
        prev = Some((sv, c, xv, v, q));
        true
    });
    out
}

/// Moves to the closest approach near a sample with two short RK4 steps.
fn refine_event(s: &Surface, s0: f64, c: u8, x0: [f64; 2], v0: [f64; 2], tgt: &Target) -> Option<Event> {
    let (mut x, mut v, mut sv) = (x0, v0, s0);
    for _ in 0..2 {
        let tau = -tgt.along(c, x, v);
        if tau.abs() > 4.0 * STEP {
            break;
        }
        (x, v) = rk4_step(s, c, x, v, tau);
        sv += tau;
    }
    if sv < -1e-12 {
        return None;
    }
    Some(Event { s: sv.max(0.0), miss: tgt.miss(c, x, v) })
}

/// Final point and velocity of a shot, expressed in the target's chart.
fn endpoint_in(s: &Surface, x: &ChartPoint, dir: [f64; 2], length: f64, chart: u8) -> Option<([f64; 2], [f64; 2])> {
    let (c, xe, ve) = shoot_smooth(s, x, dir, length, |_, _, _, _| true);
    if c == chart {
        Some((xe, ve))
    } else {
        if xe[0].hypot(xe[1]) < 1e-12 {
            return None;
        }
        let (_, x2, v2) = s.transition_with_velocity(c, xe, ve);
        Some((x2, v2))
    }
}

/// Newton polish of `(angle, length)` so the geodesic ends exactly at the target.
fn newton_polish(s: &Surface, x: &ChartPoint, tgt: &Target, angle: f64, length: f64) -> Option<(f64, f64, f64)> {
    let yc = tgt.y.chart;
    let y = tgt.y.xy();
    let g = tgt.rep[yc as usize].as_ref()?.1;
    let scale = s.scale();
    let gnorm = |d: [f64; 2]| (g[0][0] * d[0] * d[0] + 2.0 * g[0][1] * d[0] * d[1] + g[1][1] * d[1] * d[1]).sqrt();
    let (mut a, mut l) = (angle, length);
    let mut best: Option<(f64, f64, f64)> = None;
    for _ in 0..12 {
        if l <= 0.0 {
            return None;
        }
        let (p, v) = endpoint_in(s, x, frame_direction(s, x, a), l, yc)?;
        let f = [p[0] - y[0], p[1] - y[1]];
        let r = gnorm(f);
        if best.is_none_or(|b| r < b.2) {
            best = Some((a, l, r));
        }
        if r < 1e-13 * scale {
            break;
        }
        let da = 1e-7;
        let (p2, _) = endpoint_in(s, x, frame_direction(s, x, a + da), l, yc)?;
        let ja = [(p2[0] - p[0]) / da, (p2[1] - p[1]) / da];
        let det = ja[0] * v[1] - ja[1] * v[0];
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = -(f[0] * v[1] - f[1] * v[0]) / det;
        let step_l = -(ja[0] * f[1] - ja[1] * f[0]) / det;
        let damp = if step_a.abs() > 0.2 { 0.2 / step_a.abs() } else { 1.0 };
        a += damp * step_a;
        l += damp * step_l;
    }
    let (a, l, r) = best?;
    (r < 1e-9 * scale).then_some((a.rem_euclid(2.0 * PI), l, r))
}

fn nearest_event(events: &[Event], s0: f64, window: f64) -> Option<Event> {
    events
        .iter()
        .filter(|e| (e.s - s0).abs() <= window)
        .min_by(|a, b| (a.s - s0).abs().partial_cmp(&(b.s - s0).abs()).unwrap())
        .copied()
}

/// Regula falsi (Illinois) on the signed miss of a tracked approach event.
fn bracket_root(
    s: &Surface,
    x: &ChartPoint,
    tgt: &Target,
    (mut a, mut ma): (f64, f64),
    (mut b, mut mb): (f64, f64),
    s_guess: f64,
    window: f64,
) -> Option<(f64, f64)> {
    let mut s_cur = s_guess;
    let mut side = 0;
    for _ in 0..60 {
        let c = (a * mb - b * ma) / (mb - ma);
        let c = if c.is_finite() && c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let ev = shoot_events(s, x, frame_direction(s, x, c), s_cur + window, tgt, f64::INFINITY);
        let e = nearest_event(&ev, s_cur, window)?;
        s_cur = e.s;
        if e.miss.abs() < 1e-12 * s.scale() || (b - a).abs() < 1e-13 {
            return Some((c, e.s));
        }
        if (e.miss > 0.0) == (ma > 0.0) {
            a = c;
            ma = e.miss;
            if side == -1 {
                mb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            mb = e.miss;
            if side == 1 {
                ma *= 0.5;
            }
            side = 1;
        }
    }
    Some((0.5 * (a + b), s_cur))
}

/// Upper bound on the distance via meridian paths through either pole.
pub fn pole_path_bound(s: &Surface, x: &ChartPoint, y: &ChartPoint) -> f64 {
    let (ux, _) = s.to_polar(&s.normalize(x));
    let (uy, _) = s.to_polar(&s.normalize(y));
    let span = s.polar_span();
    let total = meridian_metric_length(s, span);
    let mx = meridian_metric_length(s, ux);
    let my = meridian_metric_length(s, uy);
    (mx + my).min(2.0 * total - mx - my)
}

fn meridian_metric_length(s: &Surface, u: f64) -> f64 {
    if s.is_revolution() {
        return s.meridian_length(u);
    }
    // Generic: the worse of two meridians is still a path length; use the
    // longer of phi = 0 and phi = pi so the pole paths stay upper bounds.
    let n = 2 * ((u / 0.01).ceil() as usize).max(8);
    let h = u / n as f64;
    let mut best: f64 = 0.0;
    for phi in [0.0, PI] {
        let f = |t: f64| s.polar_metric_tensor(t, phi)[0][0].sqrt();
        let mut acc = f(1e-9) + f(u - 1e-9);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        best = best.max(acc * h / 3.0);
    }
    best
}

/// Longest useful connecting length: twice the pole-to-pole meridian.
pub fn connect_length_bound(s: &Surface) -> f64 {
    match s.side() {
        Some(side) => 4.0 * side,
        None => 2.0 * meridian_metric_length(s, s.polar_span()),
    }
}

/// All connecting geodesics from `x` to `y` up to the default length bound.
pub fn connect(s: &Surface, x: &ChartPoint, y: &ChartPoint, max_starts: usize) -> Result<Connection, GeodesicError> {
    connect_within(s, x, y, max_starts, connect_length_bound(s))
}

/// Connecting geodesics of length at most `l_max`.
pub fn connect_within(
    s: &Surface,
    x: &ChartPoint,
    y: &ChartPoint,
    max_starts: usize,
    l_max: f64,
) -> Result<Connection, GeodesicError> {
    let x = s.normalize(x);
    let y = s.normalize(y);
    if s.same_point(&x, &y, 1e-14 * s.scale()) {
        return Err(GeodesicError::InvalidInput("x and y coincide".into()));
    }
    if !s.is_smooth() {
        return connect_cone(s, &x, &y, l_max);
    }
    connect_fan(s, &x, &y, &uniform_fan(max_starts), l_max)
}

fn uniform_fan(n: usize) -> Vec<f64> {
    let n = n.max(8);
    let offset = 0.1234 * 2.0 * PI / n as f64;
    (0..n).map(|i| offset + 2.0 * PI * i as f64 / n as f64).collect()
}

/// Fan search over the given sorted start angles in `[0, 2 pi)`.
fn connect_fan(s: &Surface, x: &ChartPoint, y: &ChartPoint, angles: &[f64], l_max: f64) -> Result<Connection, GeodesicError> {
    let (x, y) = (*x, *y);
    let tgt = Target::new(s, &y);
    let n = angles.len();
    let gap = |i: usize| {
        let j = (i + 1) % n;
        (angles[j] - angles[i]).rem_euclid(2.0 * PI)
    };
    let max_gap = (0..n).map(gap).fold(0.0, f64::max);
    let scale = s.scale();
    let reach = l_max * max_gap + 0.05 * scale;
    let fan: Vec<Vec<Event>> = angles
        .iter()
        .map(|&a| shoot_events(s, &x, frame_direction(s, &x, a), l_max, &tgt, reach))
        .collect();

    // Degenerate family: nearly every direction hits the target at one length.
    let hits: Vec<f64> =
        fan.iter().filter_map(|ev| ev.iter().find(|e| e.miss.abs() < 1e-8 * scale).map(|e| e.s)).collect();
    if hits.len() * 4 >= n * 3 {
        let mut sorted = hits.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = sorted[sorted.len() / 2];
        if hits.iter().filter(|h| (*h - med).abs() < 1e-6 * scale).count() * 4 >= n * 3 {
            let mut geos = vec![];
            for k in 0..FAMILY_SAMPLES {
                let a = 2.0 * PI * k as f64 / FAMILY_SAMPLES as f64;
                let ev = shoot_events(s, &x, frame_direction(s, &x, a), med + 0.05 * scale, &tgt, f64::INFINITY);
                if let Some(e) = nearest_event(&ev, med, 0.01 * scale) {
                    geos.push(integrate_angle(s, &x, a, e.s)?);
                }
            }
            geos.sort_by(|a, b| a.length.partial_cmp(&b.length).unwrap());
            return Ok(Connection { geodesics: geos, degenerate_family: true });
        }
    }

    let mut sols: Vec<(f64, f64)> = vec![];
    let window = 0.05 * scale + 4.0 * STEP;
    let try_add = |sols: &mut Vec<(f64, f64)>, sol: Option<(f64, f64, f64)>| {
        if let Some((a, l, _)) = sol {
            let dup = sols.iter().any(|(b, m)| {
                let d = (a - b).rem_euclid(2.0 * PI);
                d.min(2.0 * PI - d) < DEDUP_ANGLE && (l - m).abs() < 1e-3 * scale
            });
            if !dup && l <= l_max * (1.0 + 1e-9) {
                sols.push((a, l));
            }
        }
    };
    for i in 0..n {
        let j = (i + 1) % n;
        let (a0, mut a1) = (angles[i], angles[j]);
        if j == 0 {
            a1 += 2.0 * PI;
        }
        for e in &fan[i] {
            let Some(f) = fan[j]
                .iter()
                .filter(|f| (f.s - e.s).abs() < 0.1 * scale + 0.2 * e.s * (a1 - a0))
                .min_by(|p, q| (p.s - e.s).abs().partial_cmp(&(q.s - e.s).abs()).unwrap())
            else {
                continue;
            };
            if e.miss.abs() < 1e-12 * scale {
                try_add(&mut sols, newton_polish(s, &x, &tgt, a0, e.s));
                continue;
            }
            if (e.miss > 0.0) != (f.miss > 0.0) {
                let w = window + (f.s - e.s).abs();
                if let Some((a, sl)) = bracket_root(s, &x, &tgt, (a0, e.miss), (a1, f.miss), e.s, w) {
                    try_add(&mut sols, newton_polish(s, &x, &tgt, a, sl));
                }
            }
        }
    }
    // Near-tangential solutions without a sign change: Newton from local
    // minima of |miss| along a tracked branch.
    for i in 0..n {
        let (pi, ni) = ((i + n - 1) % n, (i + 1) % n);
        for e in &fan[i] {
            let neighbor = |k: usize| {
                fan[k]
                    .iter()
                    .filter(|f| (f.s - e.s).abs() < 0.1 * scale)
                    .map(|f| f.miss.abs())
                    .fold(f64::INFINITY, f64::min)
            };
            if e.miss.abs() < 0.1 * scale && e.miss.abs() <= neighbor(pi) && e.miss.abs() <= neighbor(ni) {
                let near = gap(i).max(gap(pi));
                let have = sols.iter().any(|(b, _)| {
                    let d = (angles[i] - b).rem_euclid(2.0 * PI);
                    d.min(2.0 * PI - d) < near
                });
                if !have {
                    try_add(&mut sols, newton_polish(s, &x, &tgt, angles[i], e.s));
                }
            }
        }
    }
    if sols.is_empty() {
        return Err(GeodesicError::NoConnectionFound(format!(
            "{n} directions, length bound {l_max:.6}, from {x} to {y}"
        )));
    }
    let mut geos = sols.iter().map(|&(a, l)| integrate_angle(s, &x, a, l)).collect::<Result<Vec<_>, _>>()?;
    geos.sort_by(|a, b| a.length.partial_cmp(&b.length).unwrap());
    Ok(Connection { geodesics: geos, degenerate_family: false })
}

/// Zero-length geodesic at `p`.
pub fn trivial_geodesic(p: &ChartPoint) -> Geodesic {
    Geodesic { samples: vec![Sample { s: 0.0, p: *p, t: [0.0, 0.0] }], length: 0.0, start_angle: f64::NAN }
}

/// Minimizer between nearby points (distance below `max_len`, itself below
/// the injectivity radius): Newton shooting from the chart chord, falling
/// back to the full search.
pub fn connect_short(s: &Surface, x: &ChartPoint, y: &ChartPoint, max_len: f64) -> Result<Geodesic, GeodesicError> {
    let x = s.normalize(x);
    let y = s.normalize(y);
    if s.same_point(&x, &y, 1e-15 * s.scale()) {
        return Ok(trivial_geodesic(&x));
    }
    if !s.is_smooth() {
        let imgs = cone_images(s, &x, &y, max_len);
        let Some(im) = imgs.first() else {
            return Err(GeodesicError::NoConnectionFound(format!("no image of {y} within {max_len} of {x}")));
        };
        let d = [(im.point[0] - x.u) / im.length, (im.point[1] - x.v) / im.length];
        let mut g = integrate(s, &x, d, im.length)?;
        let last = g.samples.last_mut().unwrap();
        last.p = y;
        last.t = im.tile.inverse_linear(d);
        return Ok(g);
    }
    if let Some(yc) = s.in_chart_of(&x, &y) {
        let d = [yc.u - x.u, yc.v - x.v];
        let len = g_norm(s, &x, d);
        if len > 0.0 && len.is_finite() {
            let tgt = Target::new(s, &y);
            let a0 = frame_angle(s, &x, [d[0] / len, d[1] / len]);
            if let Some((a, l, _)) = newton_polish(s, &x, &tgt, a0, len) {
                if l <= max_len && l <= 1.5 * len + 1e-9 * s.scale() {
                    return integrate_angle(s, &x, a, l);
                }
            }
        }
    }
    let r = distance_with(s, &x, &y, DEFAULT_REL_TOL, 24)?;
    let g = r.minimizers.into_iter().next().ok_or_else(|| GeodesicError::NoConnectionFound("empty".into()))?;
    if g.length > max_len {
        return Err(GeodesicError::NoConnectionFound(format!("distance {} exceeds {max_len}", g.length)));
    }
    Ok(g)
}

/// Endpoint and final unit tangent of the geodesic from `p` along `dir`.
pub fn shoot_end(s: &Surface, p: &ChartPoint, dir: [f64; 2], length: f64) -> Result<(ChartPoint, [f64; 2]), GeodesicError> {
    if s.is_smooth() {
        let (c, x, v) = shoot_smooth(s, p, dir, length, |_, _, _, _| true);
        Ok((ChartPoint::new(c, x[0], x[1]), v))
    } else {
        let tri = s.triangle().unwrap();
        let (f, x, d) = cc_walk(&tri, p.chart, p.xy(), dir, length)?;
        Ok((ChartPoint::new(f, x[0], x[1]), d))
    }
}

/// Point `q` with tangent `v` re-expressed in the chart of `p`.
pub fn express_in(s: &Surface, p: &ChartPoint, q: &ChartPoint, v: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
    if q.chart == p.chart {
        return Some((q.xy(), v));
    }
    if s.is_smooth() {
        if q.u.hypot(q.v) < 1e-12 {
            return None;
        }
        let (_, x, w) = s.transition_with_velocity(q.chart, q.xy(), v);
        return Some((x, w));
    }
    let tri = s.triangle().unwrap();
    let e = (0..3)
        .min_by(|a, b| tri.edge_distance(*a, q.xy()).abs().partial_cmp(&tri.edge_distance(*b, q.xy()).abs()).unwrap())
        .unwrap();
    Some((tri.reflect_point(e, q.xy()), tri.reflect_dir(e, v)))
}

/// Developed image of a cone-surface point `q` for a geodesic starting in face `fx`.
#[derive(Debug, Clone, Copy)]
pub struct ConeImage {
    pub tile: Tile,
    pub point: [f64; 2],
    pub length: f64,
}

/// Images of `y` reachable by straight segments from `x` avoiding cone
/// points, sorted by length.
pub fn cone_images(s: &Surface, x: &ChartPoint, y: &ChartPoint, l_max: f64) -> Vec<ConeImage> {
    let tri = s.triangle().expect("cone surface");
    let eps = EPS_CONE * tri.side;
    let verts = tri.vertices();
    let need_odd = x.chart != y.chart;
    let px = x.xy();
    let mut out = vec![];
    for t in s.tiles() {
        if t.odd != need_odd {
            continue;
        }
        let q = t.apply(y.xy());
        let len = (q[0] - px[0]).hypot(q[1] - px[1]);
        if len > l_max || len < 1e-15 {
            continue;
        }
        // The segment must avoid all lattice vertices.
        let blocked = s.tiles().iter().any(|u| {
            verts.iter().any(|v| crate::surface::point_segment_distance(u.apply(*v), px, q) <= eps)
        });
        if !blocked {
            out.push(ConeImage { tile: *t, point: q, length: len });
        }
    }
    out.sort_by(|a, b| a.length.partial_cmp(&b.length).unwrap());
    out
}

fn connect_cone(s: &Surface, x: &ChartPoint, y: &ChartPoint, l_max: f64) -> Result<Connection, GeodesicError> {
    let imgs = cone_images(s, x, y, l_max);
    if imgs.is_empty() {
        return Err(GeodesicError::NoConnectionFound("no straight image within the bound".into()));
    }
    let geos = imgs
        .iter()
        .map(|im| {
            let d = [(im.point[0] - x.u) / im.length, (im.point[1] - x.v) / im.length];
            let mut g = integrate(s, x, d, im.length)?;
            // Snap the endpoint onto the exact target.
            let last = g.samples.last_mut().unwrap();
            last.p = *y;
            last.t = im.tile.inverse_linear(d);
            Ok(g)
        })
        .collect::<Result<Vec<_>, GeodesicError>>()?;
    Ok(Connection { geodesics: geos, degenerate_family: false })
}

/// Riemannian distance and all connecting geodesics within `(1 + rel_tol) d`.
#[derive(Debug, Clone, Serialize)]
pub struct DistanceResult {
    pub d: f64,
    pub minimizers: Vec<Geodesic>,
    pub degenerate_family: bool,
}

pub fn distance(s: &Surface, x: &ChartPoint, y: &ChartPoint, rel_tol: f64) -> Result<DistanceResult, GeodesicError> {
    distance_with(s, x, y, rel_tol, DISTANCE_STARTS)
}

pub fn distance_with(
    s: &Surface,
    x: &ChartPoint,
    y: &ChartPoint,
    rel_tol: f64,
    starts: usize,
) -> Result<DistanceResult, GeodesicError> {
    if s.same_point(x, y, 1e-14 * s.scale()) {
        return Ok(DistanceResult { d: 0.0, minimizers: vec![], degenerate_family: false });
    }
    let bound = match s.side() {
        Some(side) => 2.0 * side,
        None => pole_path_bound(s, x, y) * (1.0 + 1e-3) + 1e-3 * s.scale(),
    } * (1.0 + rel_tol);
    let c = if guided(s) {
        connect_guided(s, x, y, starts, bound)?
    } else {
        // A uniform fan can straddle a minimizer that grazes the pole path
        // bound; the mesh-seeded search picks it up.
        match connect_within(s, x, y, starts, bound) {
            Err(GeodesicError::NoConnectionFound(_)) if s.is_smooth() => connect_guided(s, x, y, starts, bound)?,
            r => r?,
        }
    };
    let d = c.geodesics[0].length;
    let minimizers: Vec<Geodesic> =
        c.geodesics.into_iter().filter(|g| g.length <= (1.0 + rel_tol) * d + 1e-12).collect();
    Ok(DistanceResult { d, minimizers, degenerate_family: c.degenerate_family })
}

/// Mesh resolution used to seed and check shooting on profile and custom kinds.
pub const GUIDE_RESOLUTION: usize = 32;

/// Shared mesh of a surface at [`GUIDE_RESOLUTION`].
pub fn surface_mesh(s: &Surface) -> std::sync::Arc<MeshOracle> {
    s.cached(|| MeshOracle::new(s, GUIDE_RESOLUTION))
}

/// Kinds whose exponential map can focus minimizers into narrow cones of
/// directions (necks), where a uniform fan may miss them.
fn guided(s: &Surface) -> bool {
    matches!(s.kind, SurfaceKind::RotationallySymmetric(_) | SurfaceKind::Custom(_))
}

fn local_fan(center: f64, n: usize, half_width: f64) -> Vec<f64> {
    (0..=2 * n)
        .map(|k| (center + half_width * (k as f64 - n as f64) / n as f64).rem_euclid(2.0 * PI))
        .collect()
}

fn merge_angles(mut a: Vec<f64>) -> Vec<f64> {
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    a.dedup_by(|p, q| (*p - *q).abs() < 1e-9);
    a
}

/// Fan search seeded by the initial direction of the shortest mesh path,
/// repeated with a denser fan when the result exceeds the mesh distance.
fn connect_guided(s: &Surface, x: &ChartPoint, y: &ChartPoint, starts: usize, l_max: f64) -> Result<Connection, GeodesicError> {
    let x = s.normalize(x);
    let y = s.normalize(y);
    if s.same_point(&x, &y, 1e-14 * s.scale()) {
        return Err(GeodesicError::InvalidInput("x and y coincide".into()));
    }
    let mesh = surface_mesh(s);
    let Some((dm, dir)) = mesh.guide(s, &x, &y) else {
        return connect_within(s, &x, &y, starts, l_max);
    };
    let scale = s.scale();
    let mut first = uniform_fan(starts);
    first.extend(local_fan(dir, 8, 0.4));
    let c = connect_fan(s, &x, &y, &merge_angles(first), l_max);
    match &c {
        Ok(c) if c.degenerate_family || c.geodesics[0].length <= dm + 1e-9 * scale => return Ok(c.clone()),
        _ => {}
    }
    let mut dense = uniform_fan(4 * starts);
    dense.extend(local_fan(dir, 48, 0.6));
    match connect_fan(s, &x, &y, &merge_angles(dense), l_max) {
        Ok(d) => match c {
            Ok(c) if c.geodesics[0].length < d.geodesics[0].length => Ok(c),
            _ => Ok(d),
        },
        Err(e) => c.map_err(|_| e),
    }
}

/// Shortest-path distance on a geodesic-edge graph over a chart grid.
pub fn mesh_distance_oracle(s: &Surface, x: &ChartPoint, y: &ChartPoint, resolution: usize) -> f64 {
    MeshOracle::new(s, resolution).distance(s, x, y)
}

/// Graph over a latitude-longitude grid (smooth kinds) or per-face
/// triangular lattices (cone kind), with edge lengths from the metric.
#[derive(Debug, Clone)]
pub struct MeshOracle {
    graph: UnGraph<ChartPoint, f64>,
    /// Smooth kinds: ring count and longitudes.
    rings: usize,
    lons: usize,
    /// Grid spacing in length units.
    pub h: f64,
    resolution: usize,
}

const STENCIL: i64 = 3;

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Length of the straight polar-coordinate segment by Simpson's rule.
fn polar_segment_length(s: &Surface, a: (f64, f64), b: (f64, f64)) -> f64 {
    let du = b.0 - a.0;
    let mut dp = b.1 - a.1;
    dp = (dp + PI).rem_euclid(2.0 * PI) - PI;
    let f = |t: f64| {
        let u = a.0 + t * du;
        let g = s.polar_metric_tensor(u, a.1 + t * dp);
        (g[0][0] * du * du + 2.0 * g[0][1] * du * dp + g[1][1] * dp * dp).max(0.0).sqrt()
    };
    (f(0.0) + 4.0 * f(0.25) + 2.0 * f(0.5) + 4.0 * f(0.75) + f(1.0)) / 12.0
}

impl MeshOracle {
    pub fn new(s: &Surface, resolution: usize) -> MeshOracle {
        let resolution = resolution.max(16);
        if let Some(tri) = s.triangle() {
            return Self::new_cone(&tri, resolution);
        }
        let span = s.polar_span();
        let rings = resolution;
        let lons = 2 * resolution;
        let du = span / rings as f64;
        let dphi = 2.0 * PI / lons as f64;
        let mut graph = UnGraph::<ChartPoint, f64>::with_capacity(rings * lons, rings * lons * 16);
        let north = graph.add_node(s.from_polar(0.0, 0.0));
        let south = graph.add_node(s.from_polar(span, 0.0));
        let mut idx = vec![];
        for i in 1..rings {
            for j in 0..lons {
                idx.push(graph.add_node(s.from_polar(i as f64 * du, j as f64 * dphi)));
            }
        }
        let node = |i: usize, j: usize| idx[(i - 1) * lons + j];
        for i in 1..rings {
            for j in 0..lons {
                for a in -STENCIL..=STENCIL {
                    for b in -STENCIL..=STENCIL {
                        if (a, b) <= (0, 0) || gcd(a, b) != 1 {
                            continue;
                        }
                        let i2 = i as i64 + a;
                        if i2 < 1 || i2 >= rings as i64 {
                            continue;
                        }
                        let j2 = (j as i64 + b).rem_euclid(lons as i64) as usize;
                        let pa = (i as f64 * du, j as f64 * dphi);
                        let pb = (i2 as f64 * du, pa.1 + b as f64 * dphi);
                        let w = polar_segment_length(s, pa, pb);
                        graph.add_edge(node(i, j), node(i2 as usize, j2), w);
                    }
                }
            }
        }
        for j in 0..lons {
            let phi = j as f64 * dphi;
            for i in 1..=(STENCIL as usize).min(rings - 1) {
                let wn = polar_segment_length(s, (0.0, phi), (i as f64 * du, phi));
                graph.add_edge(north, node(i, j), wn);
                let k = rings - i;
                let ws = polar_segment_length(s, (k as f64 * du, phi), (span, phi));
                graph.add_edge(south, node(k, j), ws);
            }
        }
        let h = s.meridian_length(span.min(PI)).max(1e-300) / rings as f64 * (span / span.min(PI));
        let h = if s.is_revolution() { s.meridian_length(span) / rings as f64 } else { h };
        MeshOracle { graph, rings, lons, h, resolution }
    }

    fn new_cone(tri: &Triangle, r: usize) -> MeshOracle {
        let h = tri.side / r as f64;
        let v = tri.vertices();
        let e1 = [(v[1][0] - v[0][0]) / r as f64, (v[1][1] - v[0][1]) / r as f64];
        let e2 = [(v[2][0] - v[0][0]) / r as f64, (v[2][1] - v[0][1]) / r as f64];
        let pos = |i: usize, j: usize| [i as f64 * e1[0] + j as f64 * e2[0], i as f64 * e1[1] + j as f64 * e2[1]];
        let boundary = |i: usize, j: usize| i == 0 || j == 0 || i + j == r;
        let mut graph = UnGraph::<ChartPoint, f64>::default();
        let mut map = std::collections::HashMap::new();
        for face in 0..2u8 {
            for i in 0..=r {
                for j in 0..=(r - i) {
                    let key = if boundary(i, j) { (2u8, i, j) } else { (face, i, j) };
                    map.entry(key).or_insert_with(|| {
                        let p = pos(i, j);
                        graph.add_node(ChartPoint::new(face, p[0], p[1]))
                    });
                }
            }
        }
        let lookup = |face: u8, i: usize, j: usize| {
            let key = if boundary(i, j) { (2u8, i, j) } else { (face, i, j) };
            map[&key]
        };
        let mut offsets = vec![];
        for a in -3i64..=3 {
            for b in -3i64..=3 {
                if (a, b) <= (0, 0) {
                    continue;
                }
                // Lattice length of a e1 + b e2.
                let len2 = (a * a + a * b + b * b) as f64;
                if len2 <= 9.0 + 1e-9 && gcd(a, b) == 1 {
                    offsets.push((a, b, len2.sqrt() * h));
                }
            }
        }
        for face in 0..2u8 {
            for i in 0..=r {
                for j in 0..=(r - i) {
                    for &(a, b, w) in &offsets {
                        let (i2, j2) = (i as i64 + a, j as i64 + b);
                        if i2 < 0 || j2 < 0 || i2 + j2 > r as i64 {
                            continue;
                        }
                        let (i2, j2) = (i2 as usize, j2 as usize);
                        // Edges along a shared boundary are added once.
                        if face == 1 && boundary(i, j) && boundary(i2, j2) && (i == i2 || j == j2 || i + j == i2 + j2)
                        {
                            if (i == i2 && i == 0) || (j == j2 && j == 0) || (i + j == r && i2 + j2 == r) {
                                continue;
                            }
                        }
                        graph.add_edge(lookup(face, i, j), lookup(face, i2, j2), w);
                    }
                }
            }
        }
        MeshOracle { graph, rings: 0, lons: 0, h, resolution: r }
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn node_points(&self) -> Vec<ChartPoint> {
        self.graph.node_weights().copied().collect()
    }

    /// Grid nodes near `p` with straight-segment edge lengths.
    fn attach(&self, s: &Surface, p: &ChartPoint) -> Vec<(NodeIndex, f64)> {
        let p = s.normalize(p);
        if let Some(tri) = s.triangle() {
            let r = self.resolution;
            let h = tri.side / r as f64;
            let mut out = vec![];
            for n in self.graph.node_indices() {
                let q = self.graph[n];
                let d = (q.u - p.u).hypot(q.v - p.v);
                // Boundary nodes serve both faces.
                let on_boundary = (0..3).any(|e| tri.edge_distance(e, q.xy()).abs() < 1e-9 * tri.side);
                if d <= 3.0 * h + 1e-12 && (q.chart == p.chart || on_boundary) {
                    out.push((n, d));
                }
            }
            return out;
        }
        let span = s.polar_span();
        let (u, phi) = s.to_polar(&p);
        let du = span / self.rings as f64;
        let dphi = 2.0 * PI / self.lons as f64;
        let i0 = (u / du).round() as i64;
        let j0 = (phi.rem_euclid(2.0 * PI) / dphi).round() as i64;
        let mut out = vec![];
        for a in -STENCIL..=STENCIL {
            let i = i0 + a;
            if i <= 0 || i >= self.rings as i64 {
                continue;
            }
            for b in -STENCIL..=STENCIL {
                let j = (j0 + b).rem_euclid(self.lons as i64) as usize;
                let n = NodeIndex::new(2 + (i as usize - 1) * self.lons + j);
                let w = polar_segment_length(s, (u, phi), (i as f64 * du, j as f64 * dphi));
                out.push((n, w));
            }
        }
        if i0 <= STENCIL {
            out.push((NodeIndex::new(0), polar_segment_length(s, (0.0, phi), (u, phi))));
        }
        if i0 >= self.rings as i64 - STENCIL {
            out.push((NodeIndex::new(1), polar_segment_length(s, (u, phi), (span, phi))));
        }
        out
    }

    /// Graph distance from `x` to every grid node.
    pub fn field(&self, s: &Surface, x: &ChartPoint) -> Vec<f64> {
        let mut g = self.graph.clone();
        let src = g.add_node(*x);
        for (n, w) in self.attach(s, x) {
            g.add_edge(src, n, w);
        }
        let m = petgraph::algo::dijkstra(&g, src, None, |e| *e.weight());
        (0..self.graph.node_count()).map(|i| m.get(&NodeIndex::new(i)).copied().unwrap_or(f64::INFINITY)).collect()
    }

    pub fn distance(&self, s: &Surface, x: &ChartPoint, y: &ChartPoint) -> f64 {
        if s.same_point(x, y, 1e-14 * s.scale()) {
            return 0.0;
        }
        let mut g = self.graph.clone();
        let a = g.add_node(*x);
        let b = g.add_node(*y);
        for (n, w) in self.attach(s, x) {
            g.add_edge(a, n, w);
        }
        for (n, w) in self.attach(s, y) {
            g.add_edge(b, n, w);
        }
        // Direct edge for nearby points.
        if let Some(direct) = self.direct(s, x, y) {
            g.add_edge(a, b, direct);
        }
        let m = petgraph::algo::dijkstra(&g, a, Some(b), |e| *e.weight());
        m.get(&b).copied().unwrap_or(f64::INFINITY)
    }

    /// Graph distance from `x` to `y` and the frame angle at `x` of the
    /// shortest graph path, read off a path node a few cells away.
    pub fn guide(&self, s: &Surface, x: &ChartPoint, y: &ChartPoint) -> Option<(f64, f64)> {
        let mut g = self.graph.clone();
        let a = g.add_node(*x);
        let b = g.add_node(*y);
        for (n, w) in self.attach(s, x) {
            g.add_edge(a, n, w);
        }
        for (n, w) in self.attach(s, y) {
            g.add_edge(b, n, w);
        }
        if let Some(direct) = self.direct(s, x, y) {
            g.add_edge(a, b, direct);
        }
        let (d, path) = petgraph::algo::astar(&g, a, |n| n == b, |e| *e.weight(), |_| 0.0)?;
        let want = (0.5 * d).min(4.0 * self.h);
        let mut acc = 0.0;
        let mut target = g[*path.last()?];
        for w in path.windows(2) {
            acc += g.edges_connecting(w[0], w[1]).map(|e| *e.weight()).fold(f64::INFINITY, f64::min);
            if acc >= want {
                target = g[w[1]];
                break;
            }
        }
        let t = s.in_chart_of(x, &target)?;
        let v = [t.u - x.u, t.v - x.v];
        let n = g_norm(s, x, v);
        (n > 0.0).then(|| (d, frame_angle(s, x, [v[0] / n, v[1] / n]).rem_euclid(2.0 * PI)))
    }

    fn direct(&self, s: &Surface, x: &ChartPoint, y: &ChartPoint) -> Option<f64> {
        let (x, y) = (s.normalize(x), s.normalize(y));
        if let Some(tri) = s.triangle() {
            let d = (x.u - y.u).hypot(x.v - y.v);
            return (x.chart == y.chart && d <= 3.0 * tri.side / self.resolution as f64).then_some(d);
        }
        let (ux, px) = s.to_polar(&x);
        let (uy, py) = s.to_polar(&y);
        let du = s.polar_span() / self.rings as f64;
        let dphi = (py - px + PI).rem_euclid(2.0 * PI) - PI;
        let dphi_grid = 2.0 * PI / self.lons as f64;
        ((ux - uy).abs() <= STENCIL as f64 * du && dphi.abs() <= STENCIL as f64 * dphi_grid)
            .then(|| polar_segment_length(s, (ux, px), (uy, py)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equator_half_turn_reaches_antipode() {
        let s = Surface::round(1.0);
        let p = s.anchor("equator:0").unwrap();
        let g = integrate_angle(&s, &p, PI / 2.0, PI).unwrap();
        let end = g.end();
        let target = s.anchor(&format!("equator:{}", PI)).unwrap();
        assert!(s.same_point(&end, &target, 1e-9));
        for smp in &g.samples {
            assert!((g_norm(&s, &smp.p, smp.t) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn great_circle_closes() {
        let s = Surface::round(1.0);
        let p = s.from_polar(0.7, 0.3);
        let g = integrate_angle(&s, &p, 1.1, 2.0 * PI).unwrap();
        assert!(s.same_point(&g.end(), &p, 1e-6));
    }

    #[test]
    fn equator_pair_has_two_connections() {
        let s = Surface::round(1.0);
        let x = s.anchor("equator:0").unwrap();
        let y = s.anchor("equator:1").unwrap();
        let c = connect(&s, &x, &y, 64).unwrap();
        assert_eq!(c.geodesics.len(), 2);
        assert!((c.geodesics[0].length - 1.0).abs() < 1e-8);
        assert!((c.geodesics[1].length - (2.0 * PI - 1.0)).abs() < 1e-8);
    }

    #[test]
    fn antipodal_pair_is_a_family() {
        let s = Surface::round(1.0);
        let x = s.from_polar(1.0, 0.4);
        let r = distance(&s, &x, &s.antipode(&x), DEFAULT_REL_TOL).unwrap();
        assert!(r.degenerate_family);
        assert!((r.d - PI).abs() < 1e-6);
        assert!(r.minimizers.iter().all(|g| (g.length - PI).abs() < 1e-6));
    }

    #[test]
    fn cone_barycenters() {
        let s = Surface::calabi_croke(1.0);
        let x = s.anchor("bary_A").unwrap();
        let y = s.anchor("bary_B").unwrap();
        let r = distance(&s, &x, &y, DEFAULT_REL_TOL).unwrap();
        assert!((r.d - 3f64.sqrt() / 3.0).abs() < 1e-12);
        assert_eq!(r.minimizers.len(), 3);
        for g in &r.minimizers {
            assert!(s.same_point(&g.end(), &y, 1e-12));
        }
    }

    #[test]
    fn mesh_oracle_round_antipodes() {
        let s = Surface::round(1.0);
        let d = mesh_distance_oracle(&s, &s.anchor("north").unwrap(), &s.anchor("south").unwrap(), 64);
        assert!((d - PI).abs() < 0.05, "{d}");
    }

    #[test]
    fn mesh_oracle_cone_barycenters() {
        let s = Surface::calabi_croke(1.0);
        let d = mesh_distance_oracle(&s, &s.anchor("bary_A").unwrap(), &s.anchor("bary_B").unwrap(), 64);
        assert!((d - 3f64.sqrt() / 3.0).abs() < 0.02, "{d}");
    }
}
