//! Birkhoff curve shortening on piecewise-geodesic loops, closed-geodesic
//! detection and polishing, and the Morse index of closed geodesics.

use crate::geodesic::{
    connect_short, express_in, frame_angle, frame_direction, g_norm, integrate, shoot_end, Geodesic, GeodesicError,
};
use crate::surface::{ChartPoint, Surface, EPS_CONE};
use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// Consecutive tiny decrements required before a loop counts as a geodesic.
pub const STALL_STEPS: usize = 20;
/// Length decrement treated as tiny.
pub const STALL_DECREMENT: f64 = 1e-10;
/// Point tolerance relative to the injectivity bound.
pub const POINT_TOL: f64 = 1e-4;
/// Largest acceptable closure defect of a closed geodesic.
pub const CLOSURE_TOL: f64 = 1e-6;
/// Largest length increase a flow step may show.
pub const MONOTONE_SLACK: f64 = 1e-12;
/// Default index grid.
pub const INDEX_GRID: usize = 128;

#[derive(Debug, Error, Clone)]
pub enum ShorteningError {
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error("arc {index} of length {length:.6} is not below the injectivity bound {bound:.6}")]
    SegmentTooLong { index: usize, length: f64, bound: f64 },
    #[error("curve is not closed: defect {0:e}")]
    NotClosed(f64),
    #[error("no closed geodesic found from {0} seeds")]
    NoClosedGeodesicFound(usize),
    #[error("invalid loop: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct PiecewiseGeodesicLoop {
    pub vertices: Vec<ChartPoint>,
    /// `arcs[i]` joins `vertices[i]` to `vertices[i + 1]` (cyclically).
    pub arcs: Vec<Geodesic>,
    pub total_length: f64,
}

impl PiecewiseGeodesicLoop {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// All arc samples, concatenated.
    pub fn samples(&self) -> Vec<(f64, ChartPoint)> {
        let mut out = vec![];
        let mut off = 0.0;
        for a in &self.arcs {
            for smp in &a.samples {
                out.push((off + smp.s, smp.p));
            }
            off += a.length;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum FlowKind {
    ConvergedToPoint(ChartPoint),
    ConvergedToClosedGeodesic { geodesic: Geodesic, closure_defect: f64 },
    MaxIters,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowOutcome {
    pub kind: FlowKind,
    /// `(iteration, total_length)`.
    pub track: Vec<(usize, f64)>,
    pub final_loop: PiecewiseGeodesicLoop,
}

impl FlowOutcome {
    /// Largest increase between consecutive track entries (non-positive for a monotone flow).
    pub fn max_increase(&self) -> f64 {
        self.track.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobiSpectrum {
    /// Extrapolated eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues of the plain three-point scheme on the requested grid.
    pub raw_eigenvalues: Vec<f64>,
    pub index: usize,
    pub nullity: usize,
    pub tol_zero: f64,
}

/// Arc-length bound used for loop arcs at `p`: the global bound on the cone
/// surface (the local bound vanishes at cone points), the pointwise one otherwise.
fn arc_bound(s: &Surface, _p: &ChartPoint) -> f64 {
    s.inj_lower
}

fn arc(s: &Surface, a: &ChartPoint, b: &ChartPoint, index: usize) -> Result<Geodesic, ShorteningError> {
    let bound = arc_bound(s, a);
    match connect_short(s, a, b, bound) {
        Ok(g) if g.length < bound => Ok(g),
        Ok(g) => Err(ShorteningError::SegmentTooLong { index, length: g.length, bound }),
        Err(GeodesicError::NoConnectionFound(_)) => {
            Err(ShorteningError::SegmentTooLong { index, length: f64::INFINITY, bound })
        }
        Err(e) => Err(e.into()),
    }
}

fn build_loop(s: &Surface, vertices: Vec<ChartPoint>) -> Result<PiecewiseGeodesicLoop, ShorteningError> {
    let n = vertices.len();
    if n < 2 {
        return Err(ShorteningError::Invalid("a loop needs at least two vertices".into()));
    }
    let arcs = (0..n)
        .map(|i| arc(s, &vertices[i], &vertices[(i + 1) % n], i))
        .collect::<Result<Vec<_>, _>>()?;
    let total_length = arcs.iter().map(|a| a.length).sum();
    Ok(PiecewiseGeodesicLoop { vertices, arcs, total_length })
}

/// Length of a sampled closed curve from consecutive chart chords.
pub fn polyline_length(s: &Surface, samples: &[ChartPoint]) -> f64 {
    let n = samples.len();
    (0..n)
        .map(|i| {
            let a = s.normalize(&samples[i]);
            let b = samples[(i + 1) % n];
            match s.in_chart_of(&a, &b) {
                Some(bc) if s.is_smooth() => {
                    let d = [bc.u - a.u, bc.v - a.v];
                    let m = s.normalize(&ChartPoint::new(a.chart, a.u + 0.5 * d[0], a.v + 0.5 * d[1]));
                    let dm = s.in_chart_of(&m, &b).zip(s.in_chart_of(&m, &a)).map(|(p, q)| [p.u - q.u, p.v - q.v]);
                    dm.map(|d| g_norm(s, &m, d)).unwrap_or(f64::INFINITY)
                }
                Some(bc) => (bc.u - a.u).hypot(bc.v - a.v),
                None => f64::INFINITY,
            }
        })
        .sum()
}

/// Smallest power of two (at least 4) whose arcs are shorter than half the
/// injectivity bound.
pub fn default_vertex_count(s: &Surface, samples: &[ChartPoint]) -> usize {
    let len = polyline_length(s, samples);
    let mut n = 4;
    while len / n as f64 >= 0.5 * s.inj_lower && n < 1 << 16 {
        n *= 2;
    }
    n
}

/// Picks `n` vertices at equal parameter spacing from a closed sampled curve
/// (the last sample is not repeated) and joins them by minimizers.
pub fn discretize_loop(s: &Surface, samples: &[ChartPoint], n: usize) -> Result<PiecewiseGeodesicLoop, ShorteningError> {
    let m = samples.len();
    if m < 2 || n < 2 {
        return Err(ShorteningError::Invalid("need at least two samples and two vertices".into()));
    }
    let vertices = (0..n)
        .map(|i| {
            let t = i as f64 * m as f64 / n as f64;
            s.normalize(&samples[(t.round() as usize) % m])
        })
        .collect();
    build_loop(s, vertices)
}

/// Moves a vertex off a cone point along the arc it came from.
fn nudge(s: &Surface, g: &Geodesic, at: f64, p: ChartPoint) -> ChartPoint {
    let Some(tri) = s.triangle() else { return p };
    if tri.nearest_vertex_distance(p.xy()) > EPS_CONE * tri.side {
        return p;
    }
    s.normalize(&g.point_at(s, (at - 10.0 * EPS_CONE * tri.side).max(0.0)).0)
}

/// One Birkhoff step: new vertices at arc midpoints, joined by minimizers.
/// A too-long new arc triggers one retry with doubled vertex count.
pub fn birkhoff_step(s: &Surface, lp: &PiecewiseGeodesicLoop) -> Result<PiecewiseGeodesicLoop, ShorteningError> {
    let mids: Vec<ChartPoint> = lp
        .arcs
        .iter()
        .map(|a| {
            let m = s.normalize(&a.midpoint(s));
            nudge(s, a, 0.5 * a.length, m)
        })
        .collect();
    match build_loop(s, mids) {
        Err(ShorteningError::SegmentTooLong { .. }) => {
            // Split every arc at its quarter points and retry once.
            let mut v = vec![];
            for a in &lp.arcs {
                v.push(s.normalize(&a.point_at(s, 0.25 * a.length).0));
                v.push(s.normalize(&a.point_at(s, 0.75 * a.length).0));
            }
            build_loop(s, v)
        }
        r => r,
    }
}

/// Drops every other vertex while the arcs stay well below the bound.
fn coarsen(s: &Surface, lp: PiecewiseGeodesicLoop) -> PiecewiseGeodesicLoop {
    let n = lp.len();
    if n <= 4 || n % 2 == 1 || lp.arcs.iter().any(|a| a.length >= s.inj_lower / 8.0) {
        return lp;
    }
    let v: Vec<ChartPoint> = lp.vertices.iter().step_by(2).copied().collect();
    match build_loop(s, v) {
        Ok(c) if c.total_length <= lp.total_length => c,
        _ => lp,
    }
}

/// Iterates Birkhoff steps until the loop shrinks to a point or settles on
/// a closed geodesic.
pub fn birkhoff_flow(
    s: &Surface,
    lp: &PiecewiseGeodesicLoop,
    max_iters: usize,
    point_tol: f64,
) -> Result<FlowOutcome, ShorteningError> {
    let mut cur = lp.clone();
    let mut track = vec![(0, cur.total_length)];
    let mut stall = 0;
    for it in 1..=max_iters {
        if cur.total_length / 2.0 < point_tol {
            let p = cur.vertices[0];
            return Ok(FlowOutcome { kind: FlowKind::ConvergedToPoint(p), track, final_loop: cur });
        }
        let next = coarsen(s, birkhoff_step(s, &cur)?);
        let dec = cur.total_length - next.total_length;
        if dec < -MONOTONE_SLACK {
            // Below the integration noise floor: the loop is numerically
            // stationary, so classify it instead of stepping further.
            return Ok(match close_loop(s, &cur) {
                Some((g, d)) => FlowOutcome {
                    kind: FlowKind::ConvergedToClosedGeodesic { geodesic: g, closure_defect: d },
                    track,
                    final_loop: cur,
                },
                None => FlowOutcome { kind: FlowKind::MaxIters, track, final_loop: cur },
            });
        }
        track.push((it, next.total_length));
        cur = next;
        stall = if dec < STALL_DECREMENT { stall + 1 } else { 0 };
        if stall >= STALL_STEPS {
            if let Some((g, defect)) = close_loop(s, &cur) {
                return Ok(FlowOutcome {
                    kind: FlowKind::ConvergedToClosedGeodesic { geodesic: g, closure_defect: defect },
                    track,
                    final_loop: cur,
                });
            }
            stall = 0;
        }
    }
    if cur.total_length / 2.0 < point_tol {
        let p = cur.vertices[0];
        return Ok(FlowOutcome { kind: FlowKind::ConvergedToPoint(p), track, final_loop: cur });
    }
    Ok(FlowOutcome { kind: FlowKind::MaxIters, track, final_loop: cur })
}

/// Default point tolerance for a surface.
pub fn point_tolerance(s: &Surface) -> f64 {
    POINT_TOL * s.inj_lower
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Closure mismatch `(frame position components, angle)` of the geodesic
/// from `p` along frame angle `alpha` after `length`.
fn closure_residual(s: &Surface, p: &ChartPoint, alpha: f64, length: f64) -> Option<[f64; 3]> {
    let d = frame_direction(s, p, alpha);
    let (q, v) = shoot_end(s, p, d, length).ok()?;
    let (x, w) = express_in(s, p, &q, v)?;
    let dx = [x[0] - p.u, x[1] - p.v];
    let [e1, e2] = s.frame(p);
    let comp = if s.is_smooth() {
        let g = s.metric_tensor(p.chart, p.xy());
        let ip = |a: [f64; 2], b: [f64; 2]| g[0][0] * a[0] * b[0] + g[0][1] * (a[0] * b[1] + a[1] * b[0]) + g[1][1] * a[1] * b[1];
        [ip(dx, e1), ip(dx, e2)]
    } else {
        dx
    };
    let end = ChartPoint::new(p.chart, x[0], x[1]);
    let ang = frame_angle(s, &end, w);
    Some([comp[0], comp[1], wrap(ang - alpha)])
}

fn defect_norm(r: &[f64; 3]) -> f64 {
    r[0].hypot(r[1]).max(r[2].abs())
}

/// Polishes a near-closed geodesic through `p` with unit tangent `t` and
/// length `length` by Newton on (normal offset, angle, length); the
/// pseudo-inverse handles families of closed geodesics.
pub fn close_geodesic(s: &Surface, p: &ChartPoint, t: [f64; 2], length: f64) -> Option<(Geodesic, f64)> {
    let p0 = s.normalize(p);
    let (p0, t) = match express_in(s, &p0, p, t) {
        Some((_, w)) if p.chart != p0.chart => (p0, w),
        _ => (p0, t),
    };
    let a0 = frame_angle(s, &p0, t);
    let n0 = frame_direction(s, &p0, a0 + 0.5 * PI);
    let start = |sig: f64| s.normalize(&ChartPoint::new(p0.chart, p0.u + sig * n0[0], p0.v + sig * n0[1]));
    let eval = |z: &[f64; 3]| {
        let q = start(z[0]);
        if q.chart != p0.chart {
            return None;
        }
        closure_residual(s, &q, a0 + z[1], z[2])
    };
    let mut z = [0.0, 0.0, length];
    let mut r = eval(&z)?;
    let mut best = (defect_norm(&r), z);
    for _ in 0..20 {
        if defect_norm(&r) < 1e-12 {
            break;
        }
        let h = 1e-7;
        let mut jac = Matrix3::<f64>::zeros();
        for k in 0..3 {
            let mut zk = z;
            zk[k] += h;
            let rk = eval(&zk)?;
            for i in 0..3 {
                jac[(i, k)] = (rk[i] - r[i]) / h;
            }
        }
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let step = svd.solve(&Vector3::new(-r[0], -r[1], -r[2]), 1e-6 * smax).ok()?;
        let mut lam = 1.0;
        let mut moved = false;
        for _ in 0..8 {
            let zn = [z[0] + lam * step[0], z[1] + lam * step[1], z[2] + lam * step[2]];
            if let Some(rn) = eval(&zn) {
                if defect_norm(&rn) < defect_norm(&r) {
                    z = zn;
                    r = rn;
                    moved = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if defect_norm(&r) < best.0 {
            best = (defect_norm(&r), z);
        }
        if !moved {
            break;
        }
    }
    let (defect, z) = best;
    if defect >= CLOSURE_TOL || !(z[2] > 0.0) {
        return None;
    }
    let q = start(z[0]);
    let d = frame_direction(s, &q, a0 + z[1]);
    let g = integrate(s, &q, d, z[2]).ok()?;
    Some((g, defect))
}

/// Closed geodesic from a settled loop, polished from its first vertex.
fn close_loop(s: &Surface, lp: &PiecewiseGeodesicLoop) -> Option<(Geodesic, f64)> {
    let a = lp.arcs.iter().find(|a| a.length > 0.0)?;
    let t = a.initial_tangent();
    close_geodesic(s, &t.base, [t.du, t.dv], lp.total_length)
}

/// Closure defect of a geodesic treated as a closed curve.
pub fn closure_defect(s: &Surface, g: &Geodesic) -> f64 {
    let a = g.initial_tangent();
    let b = g.final_tangent();
    let p = s.normalize(&a.base);
    let (pa, ta) = match express_in(s, &p, &a.base, [a.du, a.dv]) {
        Some(v) => v,
        None => return f64::INFINITY,
    };
    let Some((x, w)) = express_in(s, &p, &b.base, [b.du, b.dv]) else { return f64::INFINITY };
    let pp = ChartPoint::new(p.chart, pa[0], pa[1]);
    let dx = [x[0] - pa[0], x[1] - pa[1]];
    let pos = g_norm(s, &pp, dx);
    let ang = wrap(frame_angle(s, &ChartPoint::new(p.chart, x[0], x[1]), w) - frame_angle(s, &pp, ta));
    pos.max(ang.abs())
}

/// Periodic three-point discretization of `-u'' - K u` on `m` nodes.
fn jacobi_eigenvalues(k: &[f64], length: f64) -> Vec<f64> {
    let m = k.len();
    let h = length / m as f64;
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = 2.0 / (h * h) - k[i];
        a[(i, (i + 1) % m)] -= 1.0 / (h * h);
        a[(i, (i + m - 1) % m)] -= 1.0 / (h * h);
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Morse index and nullity of a closed geodesic from the second-variation
/// operator, with Richardson extrapolation between `m` and `2m` nodes.
pub fn closed_geodesic_index(s: &Surface, g: &Geodesic, m: usize) -> Result<JacobiSpectrum, ShorteningError> {
    if m < 64 {
        return Err(ShorteningError::Invalid(format!("index grid must be at least 64, got {m}")));
    }
    let defect = closure_defect(s, g);
    if !(defect < CLOSURE_TOL) {
        return Err(ShorteningError::NotClosed(defect));
    }
    let l = g.length;
    let sample_k = |n: usize| -> Vec<f64> {
        (0..n).map(|i| s.curvature(&g.point_at(s, l * i as f64 / n as f64).0)).collect()
    };
    let raw = jacobi_eigenvalues(&sample_k(m), l);
    let fine = jacobi_eigenvalues(&sample_k(2 * m), l);
    let eigenvalues: Vec<f64> = raw.iter().zip(&fine).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
    let tol_zero = 1e-6 * (2.0 * PI / l).powi(2);
    let index = eigenvalues.iter().filter(|e| **e < -tol_zero).count();
    let nullity = eigenvalues.iter().filter(|e| e.abs() <= tol_zero).count();
    Ok(JacobiSpectrum { eigenvalues, raw_eigenvalues: raw, index, nullity, tol_zero })
}

/// Sampled closed curves used as flow seeds.
pub fn seed_loops(s: &Surface, count: usize) -> Vec<Vec<ChartPoint>> {
    let count = count.max(8);
    let mut out: Vec<Vec<ChartPoint>> = vec![];
    if let Some(tri) = s.triangle() {
        // Perturbed lines orthogonal to each edge; each closes after one
        // lattice translation of length sqrt(3) side.
        let side = tri.side;
        let c = tri.centroid();
        let period = 3f64.sqrt() * side;
        let shapes = [(0.25, 0.05, 1.0), (0.2, 0.04, 2.0), (0.3, 0.03, 1.0)];
        'outer: for &(off, amp, freq) in shapes.iter() {
            for r in 0..3 {
                if out.len() >= count {
                    break 'outer;
                }
                let (sn, cs) = (2.0 * PI * r as f64 / 3.0).sin_cos();
                let m = 256;
                let curve: Option<Vec<ChartPoint>> = (0..m)
                    .map(|i| {
                        let t = i as f64 / m as f64;
                        let p = [off * side + amp * side * (2.0 * PI * freq * t).sin(), t * period + 0.01 * side];
                        let d = [p[0] - c[0], p[1] - c[1]];
                        s.from_development([c[0] + cs * d[0] - sn * d[1], c[1] + sn * d[0] + cs * d[1]])
                    })
                    .collect();
                if let Some(cv) = curve {
                    out.push(cv);
                }
            }
        }
        return out;
    }
    let span = s.polar_span();
    let m = 256;
    let latitude = |u: &dyn Fn(f64) -> f64| -> Vec<ChartPoint> {
        (0..m)
            .map(|i| {
                let phi = 2.0 * PI * i as f64 / m as f64;
                s.from_polar(u(phi), phi)
            })
            .collect()
    };
    let meridian = |phi0: f64| -> Vec<ChartPoint> {
        (0..m)
            .map(|i| {
                let t = 2.0 * span * i as f64 / m as f64;
                if t <= span {
                    s.from_polar(t, phi0)
                } else {
                    s.from_polar(2.0 * span - t, phi0 + PI)
                }
            })
            .collect()
    };
    // Critical latitudes of the profile are closed geodesics.
    let mut crit = vec![];
    if s.is_revolution() {
        let n = 400;
        let dg = |u: f64| s.polar_data(u).dg;
        for i in 1..n - 1 {
            let (a, b) = (span * i as f64 / n as f64, span * (i + 1) as f64 / n as f64);
            if dg(a) * dg(b) < 0.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if dg(lo) * dg(mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                crit.push(0.5 * (lo + hi));
            }
        }
    } else {
        crit.push(0.5 * span);
    }
    for &u in &crit {
        out.push(latitude(&|_| u));
    }
    out.push(meridian(0.0));
    out.push(meridian(0.5 * PI));
    // Loops symmetric under a reflection through the critical latitude
    // composed with a quarter turn, which suppresses the drift mode.
    for &u in &crit {
        out.push(latitude(&|phi| u + 0.05 * (2.0 * phi).sin()));
    }
    let mut j = 1;
    while out.len() < count {
        let u = span * j as f64 / (count + 1) as f64;
        out.push(latitude(&|_| u));
        j += 1;
    }
    out.truncate(count);
    out
}

/// Result of the closed-geodesic search.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedGeodesicSearch {
    pub geodesic: Geodesic,
    pub length: f64,
    pub outcomes: Vec<FlowOutcome>,
}

/// Runs the flow from `seeds` deterministic loops and keeps the shortest
/// closed geodesic.
pub fn shortest_closed_geodesic(s: &Surface, seeds: usize) -> Result<ClosedGeodesicSearch, ShorteningError> {
    let loops = seed_loops(s, seeds);
    let tol = point_tolerance(s);
    let runs: Vec<Option<FlowOutcome>> = loops
        .par_iter()
        .map(|samples| {
            let n = default_vertex_count(s, samples);
            let lp = discretize_loop(s, samples, n).ok()?;
            birkhoff_flow(s, &lp, 2000, tol).ok()
        })
        .collect();
    let mut outcomes = vec![];
    let mut best: Option<Geodesic> = None;
    for out in runs.into_iter().flatten() {
        if let FlowKind::ConvergedToClosedGeodesic { geodesic, .. } = &out.kind {
            if best.as_ref().is_none_or(|b| geodesic.length < b.length) {
                best = Some(geodesic.clone());
            }
        }
        outcomes.push(out);
    }
    match best {
        Some(g) => Ok(ClosedGeodesicSearch { length: g.length, geodesic: g, outcomes }),
        None => Err(ShorteningError::NoClosedGeodesicFound(loops.len())),
    }
}
