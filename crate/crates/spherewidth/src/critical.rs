//! Regular and critical pairs of the distance function: conormal sets, the
//! convex-hull test with a Caratheodory certificate, and local refinement of
//! near-critical pairs.

use crate::convexbody::{tangent_basis, ConvexBody, V3};
use crate::geodesic::{distance_with, Geodesic, GeodesicError, DEFAULT_REL_TOL, DISTANCE_STARTS};
use crate::optim::{nelder_mead, simplex_qp};
use crate::surface::{ChartPoint, Surface};
use nalgebra::{Matrix6, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

/// Criticality threshold on the hull distance.
pub const ETA: f64 = 1e-6;
/// Relative length band used while refining: near-minimizers within this
/// factor contribute conormals, which keeps the objective continuous.
pub const REFINE_BAND: f64 = 0.05;

#[derive(Debug, Error, Clone)]
pub enum CriticalError {
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error("empty conormal set")]
    EmptyConormalSet,
    #[error("not critical: residual {0:e} exceeds the threshold")]
    NotCritical(f64),
    #[error("refinement stalled at hull distance {:e}", .0.classification.hull_distance)]
    StalledAboveThreshold(Box<Refined>),
}

/// `(-gamma'(0), gamma'(a))` in orthonormal frames at the two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConormalVector {
    pub c: [f64; 4],
}

impl ConormalVector {
    /// Components after rotating the frame at `x` by `ax` and at `y` by `ay`.
    pub fn rotated(&self, ax: f64, ay: f64) -> ConormalVector {
        let rot = |a: f64, p: f64, q: f64| {
            let (s, c) = a.sin_cos();
            (c * p + s * q, -s * p + c * q)
        };
        let (a, b) = rot(ax, self.c[0], self.c[1]);
        let (d, e) = rot(ay, self.c[2], self.c[3]);
        ConormalVector { c: [a, b, d, e] }
    }

    pub fn first(&self) -> [f64; 2] {
        [self.c[0], self.c[1]]
    }

    pub fn second(&self) -> [f64; 2] {
        [self.c[2], self.c[3]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Regular,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityCertificate {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairClassification {
    pub verdict: Verdict,
    /// Unit separating vector, for regular pairs.
    pub witness: Option<[f64; 4]>,
    pub certificate: Option<StationarityCertificate>,
    pub hull_distance: f64,
    pub conormals: Vec<ConormalVector>,
    pub degenerate_family: bool,
}

fn norm4(v: &[f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Components of a chart vector in the orthonormal frame at `p`.
fn frame_components(s: &Surface, p: &ChartPoint, t: [f64; 2]) -> [f64; 2] {
    if !s.is_smooth() {
        return t;
    }
    let g = s.metric_tensor(p.chart, p.xy());
    let [e1, e2] = s.frame(p);
    let ip = |a: [f64; 2], b: [f64; 2]| {
        g[0][0] * a[0] * b[0] + g[0][1] * (a[0] * b[1] + a[1] * b[0]) + g[1][1] * a[1] * b[1]
    };
    [ip(t, e1), ip(t, e2)]
}

/// Tangent of a geodesic end, re-expressed in the chart of the normalized point.
fn tangent_at(s: &Surface, p: &ChartPoint, t: [f64; 2]) -> (ChartPoint, [f64; 2]) {
    let q = s.normalize(p);
    if !s.is_smooth() || q.chart == p.chart {
        return (q, t);
    }
    let (c, x, v) = s.transition_with_velocity(p.chart, p.xy(), t);
    (ChartPoint::new(c, x[0], x[1]), v)
}

/// Conormal of a single connecting geodesic.
pub fn conormal_of(s: &Surface, g: &Geodesic) -> ConormalVector {
    let a = g.initial_tangent();
    let b = g.final_tangent();
    let (pa, ta) = tangent_at(s, &a.base, [a.du, a.dv]);
    let (pb, tb) = tangent_at(s, &b.base, [b.du, b.dv]);
    let u = frame_components(s, &pa, ta);
    let w = frame_components(s, &pb, tb);
    ConormalVector { c: [-u[0], -u[1], w[0], w[1]] }
}

/// Conormals of all minimizers between `x` and `y`, with the degeneracy flag.
pub fn conormal_set_flagged(
    s: &Surface,
    x: &ChartPoint,
    y: &ChartPoint,
    rel_tol: f64,
) -> Result<(Vec<ConormalVector>, bool), CriticalError> {
    let r = distance_with(s, x, y, rel_tol, DISTANCE_STARTS)?;
    let cs = r.minimizers.iter().map(|g| conormal_of(s, g)).collect();
    Ok((cs, r.degenerate_family))
}

pub fn conormal_set(s: &Surface, x: &ChartPoint, y: &ChartPoint, rel_tol: f64) -> Result<Vec<ConormalVector>, CriticalError> {
    Ok(conormal_set_flagged(s, x, y, rel_tol)?.0)
}

/// Hull test on a given conormal set.
pub fn classify_conormals(conormals: &[ConormalVector]) -> Result<PairClassification, CriticalError> {
    if conormals.is_empty() {
        return Err(CriticalError::EmptyConormalSet);
    }
    let pts: Vec<Vec<f64>> = conormals.iter().map(|c| c.c.to_vec()).collect();
    let qp = simplex_qp(&pts, None);
    let p = [qp.point[0], qp.point[1], qp.point[2], qp.point[3]];
    let hull_distance = norm4(&p);
    if hull_distance <= ETA {
        let pts4: Vec<[f64; 4]> = conormals.iter().map(|c| c.c).collect();
        let cert = caratheodory_reduce(&pts4, &qp.weights)?;
        Ok(PairClassification {
            verdict: Verdict::Critical,
            witness: None,
            certificate: Some(cert),
            hull_distance,
            conormals: conormals.to_vec(),
            degenerate_family: false,
        })
    } else {
        let witness = [-p[0] / hull_distance, -p[1] / hull_distance, -p[2] / hull_distance, -p[3] / hull_distance];
        Ok(PairClassification {
            verdict: Verdict::Regular,
            witness: Some(witness),
            certificate: None,
            hull_distance,
            conormals: conormals.to_vec(),
            degenerate_family: false,
        })
    }
}

/// Regular/critical verdict for a pair, with witness or certificate.
pub fn classify_pair(s: &Surface, x: &ChartPoint, y: &ChartPoint) -> Result<PairClassification, CriticalError> {
    classify_pair_tol(s, x, y, DEFAULT_REL_TOL)
}

pub fn classify_pair_tol(s: &Surface, x: &ChartPoint, y: &ChartPoint, rel_tol: f64) -> Result<PairClassification, CriticalError> {
    let (cs, deg) = conormal_set_flagged(s, x, y, rel_tol)?;
    let mut c = classify_conormals(&cs)?;
    c.degenerate_family = deg;
    Ok(c)
}

/// Largest pairing of the witness with the conormals (negative for a valid witness).
pub fn witness_margin(c: &PairClassification) -> Option<f64> {
    let w = c.witness?;
    Some(c.conormals.iter().map(|n| dot4(&w, &n.c)).fold(f64::NEG_INFINITY, f64::max))
}

/// Recomputes `|sum c_i nu_i|` for a certificate.
pub fn certificate_residual(conormals: &[ConormalVector], cert: &StationarityCertificate) -> f64 {
    let mut s = [0.0; 4];
    for (&i, &w) in cert.indices.iter().zip(&cert.weights) {
        for k in 0..4 {
            s[k] += w * conormals[i].c[k];
        }
    }
    norm4(&s)
}

fn residual_of(points: &[[f64; 4]], idx: &[usize], w: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    for (&i, &c) in idx.iter().zip(w) {
        for k in 0..4 {
            s[k] += c * points[i][k];
        }
    }
    norm4(&s)
}

/// Reduces a convex combination near the origin to at most five support
/// points. Antipodal-type pairs are tried first, then affine-dependence
/// pivoting on six points at a time.
pub fn caratheodory_reduce(points: &[[f64; 4]], weights: &[f64]) -> Result<StationarityCertificate, CriticalError> {
    let all: Vec<usize> = (0..points.len()).collect();
    let r0 = residual_of(points, &all, weights);
    if r0 > ETA {
        return Err(CriticalError::NotCritical(r0));
    }
    // Best two-point combination.
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d: Vec<f64> = (0..4).map(|k| points[i][k] - points[j][k]).collect();
            let dd: f64 = d.iter().map(|x| x * x).sum();
            if dd == 0.0 {
                continue;
            }
            let t = (-(0..4).map(|k| points[j][k] * d[k]).sum::<f64>() / dd).clamp(0.0, 1.0);
            if t <= 0.0 || t >= 1.0 {
                continue;
            }
            let r = residual_of(points, &[i, j], &[t, 1.0 - t]);
            if r <= ETA && best.is_none_or(|b| r < b.0) {
                best = Some((r, i, j, t));
            }
        }
    }
    if let Some((r, i, j, t)) = best {
        return Ok(StationarityCertificate { indices: vec![i, j], weights: vec![t, 1.0 - t], residual: r });
    }
    let lmax = weights.iter().cloned().fold(0.0, f64::max);
    let mut sup: Vec<(usize, f64)> =
        weights.iter().enumerate().filter(|(_, w)| **w > 1e-12 * lmax).map(|(i, w)| (i, *w)).collect();
    while sup.len() > 5 {
        let six = &sup[..6];
        let mut gram = Matrix6::<f64>::zeros();
        for a in 0..6 {
            for b in 0..6 {
                let (pa, pb) = (points[six[a].0], points[six[b].0]);
                gram[(a, b)] = dot4(&pa, &pb) + 1.0;
            }
        }
        let eig = SymmetricEigen::new(gram);
        let k = eig.eigenvalues.imin();
        let mut z: Vec<f64> = (0..6).map(|a| eig.eigenvectors[(a, k)]).collect();
        if !z.iter().any(|v| *v > 0.0) {
            z.iter_mut().for_each(|v| *v = -*v);
        }
        // Remove the combination's mean so the weight sum is preserved.
        let mean = z.iter().sum::<f64>() / 6.0;
        z.iter_mut().for_each(|v| *v -= mean);
        let (mut t, mut drop) = (f64::INFINITY, 0);
        for a in 0..6 {
            if z[a] > 0.0 && six[a].1 / z[a] < t {
                t = six[a].1 / z[a];
                drop = a;
            }
        }
        for a in 0..6 {
            sup[a].1 -= t * z[a];
        }
        sup.remove(drop);
        sup.retain(|(_, w)| *w > 1e-15);
    }
    let total: f64 = sup.iter().map(|(_, w)| w).sum();
    let indices: Vec<usize> = sup.iter().map(|(i, _)| *i).collect();
    let weights: Vec<f64> = sup.iter().map(|(_, w)| w / total).collect();
    let residual = residual_of(points, &indices, &weights);
    if residual > ETA {
        return Err(CriticalError::NotCritical(residual));
    }
    Ok(StationarityCertificate { indices, weights, residual })
}

/// Result of refinement: the pair and its final classification.
#[derive(Debug, Clone, Serialize)]
pub struct Refined {
    pub x: ChartPoint,
    pub y: ChartPoint,
    pub classification: PairClassification,
    pub evaluations: usize,
}

/// Moves `p` by `a` (frame components) within its normalized chart.
pub fn offset(s: &Surface, p: &ChartPoint, a: &[f64]) -> ChartPoint {
    let p = s.normalize(p);
    let [e1, e2] = s.frame(&p);
    let q = ChartPoint::new(p.chart, p.u + a[0] * e1[0] + a[1] * e2[0], p.v + a[0] * e1[1] + a[1] * e2[1]);
    s.normalize(&q)
}

/// Refinement objective: distance from the origin to the hull of conormals
/// of all geodesics within the length band, each extended by its relative
/// length excess scaled to unit size at the band edge. It vanishes exactly
/// at critical pairs and varies continuously near them.
fn banded_hull(s: &Surface, x: &ChartPoint, y: &ChartPoint) -> f64 {
    if s.same_point(x, y, 1e-9 * s.scale()) {
        return f64::INFINITY;
    }
    let Ok(r) = distance_with(s, x, y, REFINE_BAND, DISTANCE_STARTS) else { return f64::INFINITY };
    let pts: Vec<Vec<f64>> = r
        .minimizers
        .iter()
        .map(|g| {
            let n = conormal_of(s, g);
            vec![n.c[0], n.c[1], n.c[2], n.c[3], (g.length / r.d - 1.0) / REFINE_BAND]
        })
        .collect();
    if pts.is_empty() {
        return f64::INFINITY;
    }
    simplex_qp(&pts, None).objective.max(0.0).sqrt()
}

/// Simplex search on the pair within `radius` of the seed, minimizing the
/// banded hull distance, in rounds that stop once the strict classification
/// is critical.
pub fn refine_critical(s: &Surface, x0: &ChartPoint, y0: &ChartPoint, radius: f64) -> Result<Refined, CriticalError> {
    let (x0, y0) = (s.normalize(x0), s.normalize(y0));
    let evals = std::cell::Cell::new(0usize);
    let f = |a: &[f64]| {
        evals.set(evals.get() + 1);
        let r2 = a.iter().map(|v| v * v).sum::<f64>();
        let excess = (r2.sqrt() - radius).max(0.0);
        let x = offset(s, &x0, &a[0..2]);
        let y = offset(s, &y0, &a[2..4]);
        banded_hull(s, &x, &y) + 10.0 * excess
    };
    let mut a = vec![0.0; 4];
    let mut step = 0.5 * radius;
    let mut best = f(&a);
    let mut last: Option<Refined> = None;
    for _ in 0..12 {
        let r = nelder_mead(f, &a, step, 60, 1e-20);
        let progressed = r.value < best;
        if progressed {
            a = r.x;
            best = r.value;
        }
        let x = offset(s, &x0, &a[0..2]);
        let y = offset(s, &y0, &a[2..4]);
        let cls = classify_pair(s, &x, &y)?;
        let critical = cls.verdict == Verdict::Critical;
        // Once critical, polish a little further into the threshold.
        let done = critical && cls.hull_distance <= 0.1 * ETA;
        let refined = Refined { x, y, classification: cls, evaluations: evals.get() };
        if critical && (done || !progressed) {
            return Ok(refined);
        }
        last = Some(refined);
        if !progressed {
            break;
        }
        step = (0.3 * step).max(1e-8);
        if step <= 1e-8 {
            break;
        }
    }
    let last = last.unwrap();
    if last.classification.verdict == Verdict::Critical {
        return Ok(last);
    }
    Err(CriticalError::StalledAboveThreshold(Box::new(last)))
}

/// Conormal of the straight chord between boundary points with outward
/// normals `v1` and `v2`, projected onto the tangent planes.
pub fn extrinsic_conormal(body: &ConvexBody, v1: &V3, v2: &V3) -> ConormalVector {
    let (v1, v2) = (v1.normalize(), v2.normalize());
    let x1 = body.boundary_point(&v1);
    let x2 = body.boundary_point(&v2);
    let d = (x2 - x1).normalize();
    let (e1, e2) = tangent_basis(&v1);
    let (f1, f2) = tangent_basis(&v2);
    ConormalVector { c: [-d.dot(&e1), -d.dot(&e2), d.dot(&f1), d.dot(&f2)] }
}

/// Classification of a boundary pair for the Euclidean distance: the chord
/// is the only minimizer, and criticality means an orthogonal chord.
pub fn classify_extrinsic(body: &ConvexBody, v1: &V3, v2: &V3) -> Result<PairClassification, CriticalError> {
    classify_conormals(&[extrinsic_conormal(body, v1, v2)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn reduce_round_family_to_antipodal_pair() {
        let pts: Vec<[f64; 4]> = (0..10)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 10.0;
                [-a.cos(), -a.sin(), -a.cos(), a.sin()]
            })
            .collect();
        let w = vec![0.1; 10];
        let c = caratheodory_reduce(&pts, &w).unwrap();
        assert_eq!(c.indices.len(), 2);
        assert!((c.weights[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pivoting_keeps_at_most_five() {
        // Seven points in general position with the origin inside their hull.
        let raw: [[f64; 4]; 7] = [
            [1.0, 0.2, 0.1, 0.3],
            [-0.4, 1.0, 0.2, -0.1],
            [-0.3, -0.7, 1.0, 0.2],
            [0.1, -0.2, -0.9, 1.0],
            [-0.5, 0.1, 0.3, -1.0],
            [0.3, 0.4, -0.6, -0.5],
            [0.2, -0.5, 0.4, 0.6],
        ];
        let pts: Vec<Vec<f64>> = raw.iter().map(|p| p.to_vec()).collect();
        let qp = simplex_qp(&pts, None);
        assert!(qp.objective.sqrt() < ETA);
        let c = caratheodory_reduce(&raw, &qp.weights).unwrap();
        assert!(c.indices.len() <= 5);
        assert!(c.weights.iter().all(|w| *w > 0.0));
        assert!(c.residual < ETA);
    }

    #[test]
    fn orthogonal_chord_is_critical() {
        let body = ConvexBody::Ellipsoid { semi_axes: [1.5, 1.0, 0.5] };
        let z = V3::new(0.0, 0.0, 1.0);
        let c = classify_extrinsic(&body, &z, &-z).unwrap();
        assert_eq!(c.verdict, Verdict::Critical);
        let tilted = V3::new(0.3, 0.0, 1.0).normalize();
        let c = classify_extrinsic(&body, &tilted, &-tilted).unwrap();
        assert_eq!(c.verdict, Verdict::Regular);
    }
}
