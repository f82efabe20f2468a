//! Bounds on the min-max distance width: the antipodal-type lower bound,
//! the one-point sweepout upper bound, critical-pair bounds certified by
//! curve shortening, the diameter and eccentricity scans, and the
//! comparison with half the shortest closed geodesic.

use crate::critical::{
    classify_pair, offset, refine_critical, CriticalError, PairClassification, Verdict, ETA,
};
use crate::geodesic::{
    distance, express_in, frame_angle, integrate, surface_mesh, Geodesic, GeodesicError, MeshOracle,
    DEFAULT_REL_TOL,
};
use crate::optim::nelder_mead;
use crate::shortening::{
    closed_geodesic_index, closure_defect, default_vertex_count, discretize_loop, birkhoff_flow, point_tolerance,
    shortest_closed_geodesic, FlowKind, ShorteningError,
};
use crate::surface::{ChartPoint, Surface};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Smallest grid prefix used for nested refinement.
pub const MIN_PREFIX: usize = 16;
/// Grid points refined exactly per nested prefix.
pub const REFINED_PER_PREFIX: usize = 2;
/// Relative tolerance for matching bounds and for the constant-width verdict.
pub const WIDTH_TOL: f64 = 1e-3;
/// Slack of the comparison with half the shortest closed geodesic.
pub const OMEGA1_SLACK: f64 = 1e-3;
/// Family members kept when a degenerate family bounds components.
pub const FAMILY_COMPONENTS: usize = 8;
/// Flow iteration cap for component loops.
pub const COMPONENT_ITERS: usize = 2000;

#[derive(Debug, Error, Clone)]
pub enum WidthError {
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Critical(#[from] CriticalError),
    #[error(transparent)]
    Shortening(#[from] ShorteningError),
    #[error("pair is not critical (hull distance {0:e})")]
    NotCritical(f64),
    #[error("minimizers {0} and {1} cross")]
    CrossingMinimizers(usize, usize),
    #[error("component {component} flowed to a closed geodesic of length {length:.9}; bound withheld")]
    ComponentFlowHitGeodesic { component: usize, length: f64, index: Option<usize> },
    #[error("component {0} flow did not terminate")]
    FlowDidNotTerminate(usize),
    #[error("pairing map has a fixed point near {point} (distance {distance:e})")]
    FixedPointDetected { point: ChartPoint, distance: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Fixed-point-free map used for the lower bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairingMap {
    /// `x -> -x` in the other chart (the face swap and rotation on the cone kind).
    Antipodal,
    /// Values on a finite set; the bound is taken over the table only.
    Tabulated { pairs: Vec<(ChartPoint, ChartPoint)> },
}

impl PairingMap {
    pub fn name(&self) -> String {
        match self {
            PairingMap::Antipodal => "antipodal".into(),
            PairingMap::Tabulated { pairs } => format!("tabulated({})", pairs.len()),
        }
    }

    pub fn apply(&self, s: &Surface, p: &ChartPoint) -> Option<ChartPoint> {
        match self {
            PairingMap::Antipodal => Some(s.antipode(p)),
            PairingMap::Tabulated { pairs } => {
                pairs.iter().find(|(a, _)| s.same_point(a, p, 1e-12 * s.scale())).map(|(_, b)| *b)
            }
        }
    }
}

/// How much a reported bound can be trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundLabel {
    /// Exact up to integration and solver tolerances.
    Certified,
    /// Exact over the sampled grid; the true extremum may differ by the
    /// reported sampling error.
    GridCertified,
    Heuristic,
}

#[derive(Debug, Clone, Serialize)]
pub struct Bound {
    pub value: f64,
    pub label: BoundLabel,
    pub sampling_error: f64,
    pub source: String,
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Deterministic point set whose prefixes are nested: the anchor points
/// (poles or face barycenters) followed by a Halton sequence, roughly area
/// uniform. Larger grids contain smaller ones.
pub fn nested_points(s: &Surface, n: usize) -> Vec<ChartPoint> {
    let mut out = vec![];
    if let Some(tri) = s.triangle() {
        let c = tri.centroid();
        out.push(ChartPoint::new(0, c[0], c[1]));
        out.push(ChartPoint::new(1, c[0], c[1]));
        let v = tri.vertices();
        let mut i = 1;
        while out.len() < n {
            let (mut a, mut b) = (halton(i, 2), halton(i, 3));
            if a + b > 1.0 {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            let face = (i % 2) as u8;
            let x = [
                v[0][0] + a * (v[1][0] - v[0][0]) + b * (v[2][0] - v[0][0]),
                v[0][1] + a * (v[1][1] - v[0][1]) + b * (v[2][1] - v[0][1]),
            ];
            // Keep grid points off the cone points.
            if tri.nearest_vertex_distance(x) > 1e-3 * tri.side {
                out.push(ChartPoint::new(face, x[0], x[1]));
            }
            i += 1;
        }
    } else {
        let span = s.polar_span();
        out.push(s.from_polar(0.0, 0.0));
        out.push(s.from_polar(span, 0.0));
        let mut i = 1;
        while out.len() < n {
            let z = 1.0 - 2.0 * halton(i, 2);
            let phi = 2.0 * PI * halton(i, 3);
            out.push(s.from_polar(span * z.clamp(-1.0, 1.0).acos() / PI, phi));
            i += 1;
        }
    }
    out.truncate(n.max(1));
    out
}

/// Prefix lengths `r, r/2, r/4, ...` down to [`MIN_PREFIX`].
fn prefixes(r: usize) -> Vec<usize> {
    let mut out = vec![r];
    let mut p = r / 2;
    while p >= MIN_PREFIX {
        out.push(p);
        p /= 2;
    }
    out
}

/// Indices refined exactly: the best few of every nested prefix, so the
/// refined set only grows with the grid.
fn refined_indices(scores: &[f64], r: usize, ascending: bool) -> Vec<usize> {
    let mut keep = vec![];
    for p in prefixes(r) {
        let mut idx: Vec<usize> = (0..p.min(scores.len())).collect();
        idx.sort_by(|&a, &b| {
            let o = scores[a].partial_cmp(&scores[b]).unwrap();
            if ascending { o } else { o.reverse() }
        });
        for &i in idx.iter().take(REFINED_PER_PREFIX) {
            if !keep.contains(&i) {
                keep.push(i);
            }
        }
    }
    keep.sort();
    keep
}

/// Rough covering radius of an `n`-point area-uniform grid.
fn covering_radius(s: &Surface, n: usize) -> f64 {
    let area = match s.side() {
        Some(side) => 0.5 * 3f64.sqrt() * side * side,
        None => 4.0 * PI * s.scale() * s.scale(),
    };
    (area / (PI * n as f64)).sqrt()
}

fn dist_or(s: &Surface, x: &ChartPoint, y: &ChartPoint, bad: f64) -> f64 {
    distance(s, x, y, DEFAULT_REL_TOL).map(|r| r.d).unwrap_or(bad)
}

/// Farthest point from `x` and its distance.
#[derive(Debug, Clone, Serialize)]
pub struct Eccentricity {
    pub value: f64,
    pub farthest: ChartPoint,
    /// Every ascended local maximum, largest first.
    pub maxima: Vec<(ChartPoint, f64)>,
    /// Largest mesh distance from `x`, an overestimate up to the mesh error.
    pub mesh_value: f64,
}

/// Mesh maxima competing for the eccentricity that are refined exactly.
const ECC_STARTS: usize = 4;

/// `max_y dist(x, y)`: the mesh maximum and competing mesh maxima far from
/// it, each refined by simplex ascent on the exact distance.
pub fn eccentricity(s: &Surface, mesh: &MeshOracle, x: &ChartPoint) -> Eccentricity {
    let nodes = mesh.node_points();
    let field = mesh.field(s, x);
    let top = argmax(&field);
    let mesh_value = field[top];
    let mut starts = vec![top];
    // Nearest-start distance of every node, updated greedily.
    let mut sep = mesh.field(s, &nodes[top]);
    while starts.len() < ECC_STARTS {
        let next = (0..field.len())
            .filter(|&i| sep[i] > 0.5 * s.scale() && field[i] >= mesh_value - 3.0 * mesh.h)
            .max_by(|&a, &b| field[a].partial_cmp(&field[b]).unwrap());
        let Some(i) = next else { break };
        starts.push(i);
        let f = mesh.field(s, &nodes[i]);
        for (a, b) in sep.iter_mut().zip(f) {
            *a = a.min(b);
        }
    }
    let mut maxima: Vec<(ChartPoint, f64)> = starts
        .iter()
        .map(|&i| {
            let c = s.normalize(&nodes[i]);
            let f = |a: &[f64]| -dist_or(s, x, &offset(s, &c, a), f64::NEG_INFINITY);
            let r = nelder_mead(f, &[0.0, 0.0], 1.5 * mesh.h, 80, 1e-13);
            (offset(s, &c, &r.x), -r.value)
        })
        .filter(|m| m.1.is_finite())
        .collect();
    maxima.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let (farthest, value) = maxima.first().copied().unwrap_or((nodes[top], f64::NEG_INFINITY));
    Eccentricity { value, farthest, maxima, mesh_value }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).filter(|&i| v[i].is_finite()).max_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap()).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineUpper {
    pub value: f64,
    pub x0: ChartPoint,
    pub farthest: ChartPoint,
    /// All points at (numerically) maximal distance from `x0`.
    pub farthest_ties: Vec<ChartPoint>,
    /// Mesh spacing: the inner maxima are exact local maxima, found from
    /// mesh candidates at this resolution.
    pub sampling_error: f64,
    pub grid: usize,
    pub refined: usize,
}

/// `min_{x0} max_x dist(x, x0)` over the first `r` nested grid points; each
/// candidate is a valid upper bound through the one-point sweepout at `x0`.
pub fn baseline_upper(s: &Surface, r: usize) -> BaselineUpper {
    let r = r.max(2);
    let mesh = surface_mesh(s);
    let pts = nested_points(s, r);
    let mesh_ecc: Vec<f64> =
        pts.par_iter().map(|p| mesh.field(s, p).into_iter().filter(|v| v.is_finite()).fold(0.0, f64::max)).collect();
    let idx = refined_indices(&mesh_ecc, r, true);
    let exact: Vec<(usize, Eccentricity)> = idx.par_iter().map(|&i| (i, eccentricity(s, &mesh, &pts[i]))).collect();
    let (i, e) = exact
        .into_iter()
        .filter(|(_, e)| e.value.is_finite())
        .min_by(|a, b| a.1.value.partial_cmp(&b.1.value).unwrap().then(a.0.cmp(&b.0)))
        .expect("at least one refined grid point");
    let ties = e.maxima.iter().filter(|m| m.1 >= e.value - 1e-6 * s.scale()).map(|m| m.0).collect();
    BaselineUpper {
        value: e.value,
        x0: pts[i],
        farthest: e.farthest,
        farthest_ties: ties,
        sampling_error: mesh.h,
        grid: r,
        refined: idx.len(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairingLower {
    pub value: f64,
    pub point: ChartPoint,
    pub image: ChartPoint,
    /// Minimum over the raw grid, before descent.
    pub grid_min: f64,
    /// Covering radius of the grid times the Lipschitz bound 2 of `dist(y, psi(y))`
    /// for isometric maps.
    pub sampling_error: f64,
    pub map: String,
    pub grid: usize,
}

/// `min_y dist(y, psi(y))` over the grid, with simplex descent from the best
/// grid points of every nested prefix (antipodal map only).
pub fn pairing_lower(s: &Surface, map: &PairingMap, r: usize) -> Result<PairingLower, WidthError> {
    let scale = s.scale();
    let pts: Vec<ChartPoint> = match map {
        PairingMap::Antipodal => nested_points(s, r.max(2)),
        PairingMap::Tabulated { pairs } => pairs.iter().map(|(a, _)| *a).collect(),
    };
    if pts.is_empty() {
        return Err(WidthError::InvalidInput("empty pairing table".into()));
    }
    let eval = |p: &ChartPoint| -> Result<f64, WidthError> {
        let q = map.apply(s, p).ok_or_else(|| WidthError::InvalidInput(format!("map undefined at {p}")))?;
        if s.same_point(p, &q, 1e-9 * scale) {
            return Err(WidthError::FixedPointDetected { point: *p, distance: 0.0 });
        }
        Ok(distance(s, p, &q, DEFAULT_REL_TOL)?.d)
    };
    let vals = pts.par_iter().map(eval).collect::<Result<Vec<f64>, _>>()?;
    let gi = (0..vals.len()).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
    let grid_min = vals[gi];
    if grid_min < 1e-9 * scale {
        return Err(WidthError::FixedPointDetected { point: pts[gi], distance: grid_min });
    }
    let mut best = (grid_min, pts[gi]);
    if let PairingMap::Antipodal = map {
        let step = 0.5 * covering_radius(s, pts.len());
        let idx = refined_indices(&vals, pts.len(), true);
        let found: Vec<(f64, ChartPoint)> = idx
            .par_iter()
            .map(|&i| {
                let c = s.normalize(&pts[i]);
                let f = |a: &[f64]| {
                    let p = offset(s, &c, a);
                    eval(&p).unwrap_or(f64::INFINITY)
                };
                let res = nelder_mead(f, &[0.0, 0.0], step, 80, 1e-13);
                (res.value, offset(s, &c, &res.x))
            })
            .collect();
        for (v, p) in found {
            if v < best.0 {
                best = (v, p);
            }
        }
        if best.0 < 1e-9 * scale {
            return Err(WidthError::FixedPointDetected { point: best.1, distance: best.0 });
        }
    }
    let image = map.apply(s, &best.1).unwrap_or(best.1);
    Ok(PairingLower {
        value: best.0,
        point: best.1,
        image,
        grid_min,
        sampling_error: 2.0 * covering_radius(s, pts.len()),
        map: map.name(),
        grid: pts.len(),
    })
}

/// How a component flow ended.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Point { at: ChartPoint },
    ClosedGeodesic { length: f64, closure_defect: f64, index: usize, nullity: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentCertificate {
    pub component: usize,
    /// Minimizers bounding the component, as indices into `minimizers`.
    pub arcs: (usize, usize),
    pub initial_length: f64,
    pub final_length: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalUpper {
    pub value: f64,
    pub x: ChartPoint,
    pub y: ChartPoint,
    pub distance: f64,
    pub classification: PairClassification,
    /// Initial frame angles at `x` of the bounding minimizers, sorted.
    pub minimizer_angles: Vec<f64>,
    pub certificates: Vec<ComponentCertificate>,
    /// Set when the bound comes from a closed geodesic formed by two
    /// minimizers (length, index).
    pub closed_geodesic: Option<(f64, usize)>,
}

/// Frame angle at (normalized) `x` of the initial tangent of `g`.
fn initial_angle(s: &Surface, x: &ChartPoint, g: &Geodesic) -> f64 {
    let t = g.initial_tangent();
    match express_in(s, x, &t.base, [t.du, t.dv]) {
        Some((_, v)) => frame_angle(s, x, v).rem_euclid(2.0 * PI),
        None => g.start_angle.rem_euclid(2.0 * PI),
    }
}

/// True when two minimizers meet away from their endpoints.
fn crossing(s: &Surface, a: &Geodesic, b: &Geodesic) -> bool {
    let tol = 1e-6 * s.scale();
    let interior = |g: &Geodesic| -> Vec<ChartPoint> {
        let n = g.samples.len();
        let lo = g.length * 0.02;
        let hi = g.length * 0.98;
        g.samples.iter().step_by((n / 64).max(1)).filter(|p| p.s > lo && p.s < hi).map(|p| p.p).collect()
    };
    let (pa, pb) = (interior(a), interior(b));
    let spacing = a.length / 64.0 + b.length / 64.0;
    pa.iter().any(|p| pb.iter().any(|q| s.same_point(p, q, tol.max(1e-3 * spacing))))
}

fn loop_samples(a: &Geodesic, b: &Geodesic) -> Vec<ChartPoint> {
    let mut out: Vec<ChartPoint> = a.samples.iter().map(|p| p.p).collect();
    out.pop();
    let mut back: Vec<ChartPoint> = b.samples.iter().map(|p| p.p).collect();
    back.reverse();
    back.pop();
    out.extend(back);
    out
}

/// Closed geodesic through `x` along `g` and twice its length, when `g`
/// followed by `h` reversed closes up smoothly.
fn closed_from_pair(s: &Surface, g: &Geodesic) -> Option<(Geodesic, f64)> {
    let t = g.initial_tangent();
    let full = integrate(s, &t.base, [t.du, t.dv], 2.0 * g.length).ok()?;
    let d = closure_defect(s, &full);
    Some((full, d))
}

/// Upper bound `dist(x, y)` from a critical pair: every complementary
/// component of the minimizers must shrink to a point under curve shortening.
/// When two minimizers form a closed geodesic of index at least one, the
/// bound is half its length instead.
pub fn critical_upper(s: &Surface, x: &ChartPoint, y: &ChartPoint) -> Result<CriticalUpper, WidthError> {
    let (x, y) = (s.normalize(x), s.normalize(y));
    let cls = classify_pair(s, &x, &y)?;
    if cls.verdict != Verdict::Critical {
        return Err(WidthError::NotCritical(cls.hull_distance));
    }
    let dist = distance(s, &x, &y, DEFAULT_REL_TOL)?;
    let mut mins: Vec<(f64, Geodesic)> =
        dist.minimizers.iter().map(|g| (initial_angle(s, &x, g), g.clone())).collect();
    mins.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if dist.degenerate_family && mins.len() > FAMILY_COMPONENTS {
        let stride = mins.len() / FAMILY_COMPONENTS;
        mins = mins.into_iter().step_by(stride).take(FAMILY_COMPONENTS).collect();
    }
    let k = mins.len();
    if k < 2 {
        return Err(WidthError::NotCritical(cls.hull_distance));
    }
    if !dist.degenerate_family {
        for i in 0..k {
            for j in i + 1..k {
                if crossing(s, &mins[i].1, &mins[j].1) {
                    return Err(WidthError::CrossingMinimizers(i, j));
                }
            }
        }
    }
    let comps: Vec<(usize, usize)> = if k == 2 { vec![(0, 1)] } else { (0..k).map(|i| (i, (i + 1) % k)).collect() };
    let tol = point_tolerance(s);
    let flows: Vec<Result<ComponentCertificate, WidthError>> = comps
        .par_iter()
        .enumerate()
        .map(|(c, &(i, j))| {
            let samples = loop_samples(&mins[i].1, &mins[j].1);
            let n = default_vertex_count(s, &samples);
            let lp = discretize_loop(s, &samples, n)?;
            let out = birkhoff_flow(s, &lp, COMPONENT_ITERS, tol)?;
            let iterations = out.track.last().map(|t| t.0).unwrap_or(0);
            let termination = match &out.kind {
                FlowKind::ConvergedToPoint(p) => Termination::Point { at: *p },
                FlowKind::ConvergedToClosedGeodesic { geodesic, closure_defect } => {
                    let sp = closed_geodesic_index(s, geodesic, 256)?;
                    Termination::ClosedGeodesic {
                        length: geodesic.length,
                        closure_defect: *closure_defect,
                        index: sp.index,
                        nullity: sp.nullity,
                    }
                }
                FlowKind::MaxIters => return Err(WidthError::FlowDidNotTerminate(c)),
            };
            Ok(ComponentCertificate {
                component: c,
                arcs: (i, j),
                initial_length: lp.total_length,
                final_length: out.final_loop.total_length,
                iterations,
                termination,
            })
        })
        .collect();
    let certificates = flows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let angles: Vec<f64> = mins.iter().map(|m| m.0).collect();
    let mut value = dist.d;
    let mut closed = None;
    for cert in &certificates {
        if let Termination::ClosedGeodesic { length, index, .. } = cert.termination {
            // The two minimizers themselves form the closed geodesic.
            let (i, _) = cert.arcs;
            let own = k == 2
                && (length - 2.0 * dist.d).abs() < 1e-6 * s.scale().max(length)
                && closed_from_pair(s, &mins[i].1).is_some_and(|(_, d)| d < 1e-6);
            if own && index >= 1 {
                value = 0.5 * length;
                closed = Some((length, index));
            } else {
                return Err(WidthError::ComponentFlowHitGeodesic { component: cert.component, length, index: Some(index) });
            }
        }
    }
    Ok(CriticalUpper {
        value,
        x,
        y,
        distance: dist.d,
        classification: cls,
        minimizer_angles: angles,
        certificates,
        closed_geodesic: closed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub x: ChartPoint,
    pub y: ChartPoint,
    pub distance: f64,
    pub classification: Option<PairClassification>,
}

/// One critical-pair attempt made by [`estimate_width`].
#[derive(Debug, Clone, Serialize)]
pub struct CandidateReport {
    pub seed: String,
    pub x: ChartPoint,
    pub y: ChartPoint,
    pub critical: bool,
    pub bound: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct WidthEstimate {
    pub lower: Bound,
    pub upper: Bound,
    pub witness: Witness,
    pub baseline: BaselineUpper,
    pub pairing: PairingLower,
    pub critical: Option<CriticalUpper>,
    pub candidates: Vec<CandidateReport>,
    pub omega1_proxy: Option<f64>,
    /// Bounds agree within the width tolerance.
    pub certified: bool,
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub grid: usize,
    pub pairing: PairingMap,
    pub omega1: bool,
    /// Refinement radius relative to the surface scale.
    pub refine_radius: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions { grid: 32, pairing: PairingMap::Antipodal, omega1: false, refine_radius: 0.1 }
    }
}

/// Lower bound from the pairing map, upper bound from the best of the
/// baseline and the accepted critical pairs seeded by both scans.
pub fn estimate_width(s: &Surface, opts: &EstimateOptions) -> Result<WidthEstimate, WidthError> {
    let scale = s.scale();
    let pairing = pairing_lower(s, &opts.pairing, opts.grid)?;
    let baseline = baseline_upper(s, opts.grid);
    let mut seeds = vec![("pairing minimum".to_string(), pairing.point, pairing.image)];
    for (i, y) in baseline.farthest_ties.iter().enumerate() {
        seeds.push((format!("baseline farthest pair {i}"), baseline.x0, *y));
    }
    let mut candidates = vec![];
    let mut best_critical: Option<CriticalUpper> = None;
    let mut baseline_cls: Option<PairClassification> = None;
    for (k, (name, x0, y0)) in seeds.iter().enumerate() {
        // A critical pair at the baseline value cannot be improved on.
        if k > 1 && best_critical.as_ref().is_some_and(|b| b.value <= baseline.value + 1e-9 * scale) {
            break;
        }
        let mut rep = CandidateReport {
            seed: name.clone(),
            x: *x0,
            y: *y0,
            critical: false,
            bound: None,
            note: String::new(),
        };
        let start = classify_pair(s, x0, y0);
        let pair = match start {
            Ok(c) if c.verdict == Verdict::Critical && c.hull_distance <= 0.1 * ETA => Ok((*x0, *y0, c)),
            Ok(_) => match refine_critical(s, x0, y0, opts.refine_radius * scale) {
                Ok(r) => Ok((r.x, r.y, r.classification)),
                Err(e) => Err(e.to_string()),
            },
            Err(e) => Err(e.to_string()),
        };
        match pair {
            Ok((x, y, cls)) => {
                rep.x = x;
                rep.y = y;
                rep.critical = cls.verdict == Verdict::Critical;
                if k >= 1 && baseline_cls.as_ref().is_none_or(|c| c.verdict != Verdict::Critical) {
                    baseline_cls = Some(cls);
                }
                match critical_upper(s, &x, &y) {
                    Ok(cu) => {
                        rep.bound = Some(cu.value);
                        rep.note = match cu.closed_geodesic {
                            Some((l, i)) => format!("closed geodesic of length {l:.9} and index {i}"),
                            None => format!("{} components shrink to points", cu.certificates.len()),
                        };
                        if best_critical.as_ref().is_none_or(|b| cu.value < b.value) {
                            best_critical = Some(cu);
                        }
                    }
                    Err(e) => rep.note = e.to_string(),
                }
            }
            Err(e) => rep.note = e,
        }
        candidates.push(rep);
    }
    let lower = Bound {
        value: pairing.value,
        label: match opts.pairing {
            PairingMap::Antipodal => BoundLabel::GridCertified,
            PairingMap::Tabulated { .. } => BoundLabel::Heuristic,
        },
        sampling_error: pairing.sampling_error,
        source: format!("pairing map {}", pairing.map),
    };
    let (upper, witness) = match &best_critical {
        Some(cu) if cu.value <= baseline.value + 1e-9 * scale => (
            Bound {
                value: cu.value,
                label: BoundLabel::Certified,
                sampling_error: 0.0,
                source: match cu.closed_geodesic {
                    Some(_) => "closed geodesic through a critical pair".into(),
                    None => "critical pair with shrinking components".into(),
                },
            },
            Witness { x: cu.x, y: cu.y, distance: cu.distance, classification: Some(cu.classification.clone()) },
        ),
        _ => (
            Bound {
                value: baseline.value,
                label: BoundLabel::GridCertified,
                sampling_error: baseline.sampling_error,
                source: format!("one-point sweepout at {}", baseline.x0),
            },
            Witness { x: baseline.x0, y: baseline.farthest, distance: baseline.value, classification: baseline_cls },
        ),
    };
    let omega1_proxy = if opts.omega1 { shortest_closed_geodesic(s, 8).ok().map(|r| r.length) } else { None };
    let certified = (upper.value - lower.value).abs() <= WIDTH_TOL * scale;
    Ok(WidthEstimate {
        lower,
        upper,
        witness,
        baseline,
        pairing,
        critical: best_critical,
        candidates,
        omega1_proxy,
        certified,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Diameter {
    pub value: f64,
    /// Pairs within 1e-4 of the maximum.
    pub pairs: Vec<(ChartPoint, ChartPoint, f64)>,
}

/// Largest distance: mesh eccentricities on the grid, then alternating
/// exact ascent from the best few points.
pub fn diameter(s: &Surface, r: usize) -> Diameter {
    let mesh = surface_mesh(s);
    let pts = nested_points(s, r.max(2));
    let mesh_ecc: Vec<f64> =
        pts.par_iter().map(|p| mesh.field(s, p).into_iter().filter(|v| v.is_finite()).fold(0.0, f64::max)).collect();
    let idx = refined_indices(&mesh_ecc, pts.len(), false);
    let found: Vec<(ChartPoint, ChartPoint, f64)> = idx
        .par_iter()
        .map(|&i| {
            let mut x = pts[i];
            let mut e = eccentricity(s, &mesh, &x);
            for _ in 0..2 {
                let back = eccentricity(s, &mesh, &e.farthest);
                if back.value <= e.value + 1e-12 {
                    break;
                }
                x = e.farthest;
                e = back;
            }
            (x, e.farthest, e.value)
        })
        .collect();
    let value = found.iter().map(|f| f.2).fold(f64::NEG_INFINITY, f64::max);
    let pairs = found.into_iter().filter(|f| f.2 >= value - 1e-4).collect();
    Diameter { value, pairs }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReidemeisterReport {
    /// `(x, m(x))` with `m(x) = max_y dist(x, y)`.
    pub profile: Vec<(ChartPoint, f64)>,
    pub min_m: f64,
    pub max_m: f64,
    pub diameter: f64,
    /// Antipodal pairing lower bound for the width.
    pub width_lower: f64,
    pub tol: f64,
    /// `m` is constant within `tol`.
    pub m_constant: bool,
    /// Width equals the diameter within `tol`.
    pub constant_width: bool,
}

/// Eccentricity profile over the grid and the constant-width verdict.
pub fn reidemeister_scan(s: &Surface, r: usize) -> Result<ReidemeisterReport, WidthError> {
    let mesh = surface_mesh(s);
    let pts = nested_points(s, r.max(2));
    let profile: Vec<(ChartPoint, f64)> = pts.par_iter().map(|p| (*p, eccentricity(s, &mesh, p).value)).collect();
    let min_m = profile.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_m = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let diam = diameter(s, r).value.max(max_m);
    let lower = pairing_lower(s, &PairingMap::Antipodal, r)?.value;
    let tol = WIDTH_TOL * s.scale();
    Ok(ReidemeisterReport {
        profile,
        min_m,
        max_m,
        diameter: diam,
        width_lower: lower,
        tol,
        m_constant: max_m - min_m <= tol,
        constant_width: diam - lower <= tol,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexCheck {
    pub length: f64,
    pub closure_defect: f64,
    pub index: usize,
    pub nullity: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Omega1Comparison {
    pub width_upper: f64,
    pub omega1: f64,
    pub holds: bool,
    pub equality: bool,
    pub index_check: Option<IndexCheck>,
}

/// Checks `W_d <= omega_1 / 2` with the shortest closed geodesic as the
/// proxy for omega_1. In the equality case the witness pair must bound two
/// minimizers forming a closed geodesic of index one.
pub fn compare_omega1(s: &Surface, est: &WidthEstimate, seeds: usize) -> Result<Omega1Comparison, WidthError> {
    let omega1 = match est.omega1_proxy {
        Some(l) => l,
        None => shortest_closed_geodesic(s, seeds)?.length,
    };
    let upper = est.upper.value;
    let holds = upper <= 0.5 * omega1 + OMEGA1_SLACK;
    let equality = (upper - 0.5 * omega1).abs() <= OMEGA1_SLACK;
    let index_check = if equality { Some(witness_index(s, &est.witness.x, &est.witness.y)?) } else { None };
    Ok(Omega1Comparison { width_upper: upper, omega1, holds, equality, index_check })
}

/// Closed geodesic formed by two opposite minimizers of the pair, and its index.
pub fn witness_index(s: &Surface, x: &ChartPoint, y: &ChartPoint) -> Result<IndexCheck, WidthError> {
    let x = s.normalize(x);
    let dist = distance(s, &x, y, DEFAULT_REL_TOL)?;
    let angles: Vec<f64> = dist.minimizers.iter().map(|g| initial_angle(s, &x, g)).collect();
    // The pair of minimizers leaving x in the most nearly opposite directions.
    let mut best: Option<(f64, usize)> = None;
    for i in 0..angles.len() {
        for j in 0..angles.len() {
            let d = (angles[j] - angles[i] - PI).rem_euclid(2.0 * PI);
            let d = d.min(2.0 * PI - d);
            if i != j && best.is_none_or(|b| d < b.0) {
                best = Some((d, i));
            }
        }
    }
    let (_, i) = best.ok_or(WidthError::NotCritical(f64::INFINITY))?;
    let (g, defect) = closed_from_pair(s, &dist.minimizers[i])
        .ok_or_else(|| WidthError::InvalidInput("could not extend the minimizer".into()))?;
    if defect >= 1e-6 {
        return Ok(IndexCheck { length: g.length, closure_defect: defect, index: 0, nullity: 0, passed: false });
    }
    let sp = closed_geodesic_index(s, &g, 256)?;
    Ok(IndexCheck { length: g.length, closure_defect: defect, index: sp.index, nullity: sp.nullity, passed: sp.index == 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_grids_are_prefixes() {
        for s in [Surface::round(1.0), Surface::calabi_croke(1.0)] {
            let a = nested_points(&s, 16);
            let b = nested_points(&s, 32);
            assert_eq!(a[..], b[..16]);
        }
    }

    #[test]
    fn refined_sets_grow_with_the_grid() {
        let scores: Vec<f64> = (0..64).map(|i| ((i * 37) % 64) as f64).collect();
        let small = refined_indices(&scores, 32, true);
        let big = refined_indices(&scores, 64, true);
        assert!(small.iter().all(|i| big.contains(i)));
    }
}
