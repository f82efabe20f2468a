//! Convex bodies in R^3 described by their support function.
//!
//! The distance width of the boundary sphere equals the length of the
//! shortest orthogonal chord, which in turn equals the classical width
//! `min_v p(v) + p(-v)`. This module computes both sides.

use crate::optim::{nelder_mead, simplex_qp};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type V3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BodyError {
    #[error("invalid body: {0}")]
    Invalid(String),
    #[error("origin is not interior: support {0} at {1:?}")]
    OriginNotInterior(f64, [f64; 3]),
}

/// JSON form: `{"kind":"ellipsoid","semi_axes":[a,b,c]}`,
/// `{"kind":"ball","radius":r}` or `{"kind":"hull","points":[[..],..],"smooth":rho}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexBody {
    Ellipsoid { semi_axes: [f64; 3] },
    Ball { radius: f64 },
    Hull { points: Vec<[f64; 3]>, smooth: f64 },
}

/// Step for central-difference gradients of the support function.
pub const FD_STEP: f64 = 1e-6;

impl ConvexBody {
    pub fn validate(&self) -> Result<(), BodyError> {
        match self {
            ConvexBody::Ellipsoid { semi_axes } => {
                if semi_axes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(BodyError::Invalid(format!("semi-axes must be positive: {semi_axes:?}")));
                }
            }
            ConvexBody::Ball { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(BodyError::Invalid(format!("radius must be positive: {radius}")));
                }
            }
            ConvexBody::Hull { points, smooth } => {
                if points.len() < 4 {
                    return Err(BodyError::Invalid("hull needs at least 4 points".into()));
                }
                if !(smooth.is_finite() && *smooth >= 0.0) {
                    return Err(BodyError::Invalid(format!("smoothing radius must be >= 0: {smooth}")));
                }
                for v in sphere_grid(16) {
                    let p = self.support(&v);
                    if p <= 0.0 {
                        return Err(BodyError::OriginNotInterior(p, [v.x, v.y, v.z]));
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether the support function is differentiable everywhere.
    pub fn is_strictly_convex(&self) -> bool {
        !matches!(self, ConvexBody::Hull { .. })
    }

    /// Support function `p(v) = max_{x in body} <x, v>` for unit `v`.
    pub fn support(&self, v: &V3) -> f64 {
        match self {
            ConvexBody::Ellipsoid { semi_axes: [a, b, c] } => {
                (a * a * v.x * v.x + b * b * v.y * v.y + c * c * v.z * v.z).sqrt()
            }
            ConvexBody::Ball { radius } => *radius,
            ConvexBody::Hull { points, smooth } => {
                points.iter().map(|p| p[0] * v.x + p[1] * v.y + p[2] * v.z).fold(f64::NEG_INFINITY, f64::max)
                    + smooth
            }
        }
    }

    /// Tangential gradient of `p` on the unit sphere at `v`.
    pub fn support_gradient(&self, v: &V3) -> V3 {
        match self {
            ConvexBody::Ball { .. } => V3::zeros(),
            _ => {
                let x = self.boundary_point(v);
                x - v * x.dot(v)
            }
        }
    }

    /// Tangential gradient by central differences, for cross-checks.
    pub fn support_gradient_fd(&self, v: &V3) -> V3 {
        let (e1, e2) = tangent_basis(v);
        let d = |e: &V3| {
            let vp = (v + e * FD_STEP).normalize();
            let vm = (v - e * FD_STEP).normalize();
            (self.support(&vp) - self.support(&vm)) / (2.0 * FD_STEP)
        };
        e1 * d(&e1) + e2 * d(&e2)
    }

    /// Boundary point with outward normal `v`: `p(v) v + grad p(v)`.
    pub fn boundary_point(&self, v: &V3) -> V3 {
        match self {
            ConvexBody::Ellipsoid { semi_axes: [a, b, c] } => {
                let p = self.support(v);
                V3::new(a * a * v.x, b * b * v.y, c * c * v.z) / p
            }
            ConvexBody::Ball { radius } => v * *radius,
            ConvexBody::Hull { points, smooth } => {
                let best = points
                    .iter()
                    .max_by(|p, q| {
                        let dp = p[0] * v.x + p[1] * v.y + p[2] * v.z;
                        let dq = q[0] * v.x + q[1] * v.y + q[2] * v.z;
                        dp.partial_cmp(&dq).unwrap()
                    })
                    .unwrap();
                V3::new(best[0], best[1], best[2]) + v * *smooth
            }
        }
    }

    /// Outward unit normal at a boundary point, where a closed form exists.
    pub fn outward_normal(&self, x: &V3) -> Option<V3> {
        match self {
            ConvexBody::Ellipsoid { semi_axes: [a, b, c] } => {
                Some(V3::new(x.x / (a * a), x.y / (b * b), x.z / (c * c)).normalize())
            }
            ConvexBody::Ball { .. } => Some(x.normalize()),
            ConvexBody::Hull { .. } => None,
        }
    }

    /// Membership of a point in the closed body (relative slack 1e-12).
    pub fn contains(&self, z: &V3) -> bool {
        match self {
            ConvexBody::Ellipsoid { semi_axes: [a, b, c] } => {
                (z.x / a).powi(2) + (z.y / b).powi(2) + (z.z / c).powi(2) <= 1.0 + 1e-12
            }
            ConvexBody::Ball { radius } => z.norm() <= radius * (1.0 + 1e-12),
            ConvexBody::Hull { points, smooth } => {
                let shifted: Vec<Vec<f64>> =
                    points.iter().map(|p| vec![p[0] - z.x, p[1] - z.y, p[2] - z.z]).collect();
                let qp = simplex_qp(&shifted, None);
                qp.objective.max(0.0).sqrt() <= smooth * (1.0 + 1e-12) + 1e-12
            }
        }
    }
}

/// Orthonormal basis of the tangent plane of the unit sphere at `v`.
pub fn tangent_basis(v: &V3) -> (V3, V3) {
    let a = if v.x.abs() < 0.6 { V3::x() } else if v.y.abs() < 0.6 { V3::y() } else { V3::z() };
    let e1 = v.cross(&a).normalize();
    let e2 = v.cross(&e1);
    (e1, e2)
}

fn from_angles(theta: f64, phi: f64) -> V3 {
    V3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Latitude-longitude directions on the closed upper hemisphere: the pole
/// plus `r` rings of `4r` points each.
pub fn hemisphere_grid(r: usize) -> Vec<V3> {
    let mut out = vec![V3::z()];
    for i in 1..=r {
        let theta = (PI / 2.0) * i as f64 / r as f64;
        let n = 4 * r;
        // Only half of the equator ring is needed.
        let count = if i == r { n / 2 } else { n };
        for j in 0..count {
            out.push(from_angles(theta, 2.0 * PI * j as f64 / n as f64));
        }
    }
    out
}

/// Directions covering the whole sphere.
pub fn sphere_grid(r: usize) -> Vec<V3> {
    let mut out = vec![V3::z(), -V3::z()];
    for i in 1..2 * r {
        let theta = PI * i as f64 / (2 * r) as f64;
        for j in 0..4 * r {
            out.push(from_angles(theta, 2.0 * PI * j as f64 / (4 * r) as f64));
        }
    }
    out
}

/// `w(Omega, v) = p(v) + p(-v)`.
pub fn directional_width(body: &ConvexBody, v: &V3) -> f64 {
    body.support(v) + body.support(&-v)
}

fn local_polish<F: Fn(&V3) -> f64>(f: &F, v0: &V3, step: f64) -> (V3, f64) {
    let (e1, e2) = tangent_basis(v0);
    let chart = |t: &[f64]| (v0 + e1 * t[0] + e2 * t[1]).normalize();
    let r = nelder_mead(|t| f(&chart(t)), &[0.0, 0.0], step, 400, 1e-22);
    (chart(&r.x), r.value)
}

#[derive(Debug, Clone, Serialize)]
pub struct WidthResult {
    pub width: f64,
    pub direction: [f64; 3],
    pub grid_value: f64,
    pub grid: usize,
}

/// Grid minimum of the directional width over the hemisphere, polished by
/// local descent from the best grid directions.
pub fn classical_width(body: &ConvexBody, grid: usize) -> WidthResult {
    let g = hemisphere_grid(grid.max(1));
    let mut vals: Vec<(f64, V3)> = g.iter().map(|v| (directional_width(body, v), *v)).collect();
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let grid_value = vals[0].0;
    let step = 0.5 * PI / grid.max(1) as f64;
    let mut best = vals[0];
    for (w0, v0) in vals.iter().take(3) {
        let (v, w) = local_polish(&|v: &V3| directional_width(body, v), v0, step);
        if w < best.0 && w <= *w0 {
            best = (w, v);
        }
    }
    let v = if best.1.z < 0.0 { -best.1 } else { best.1 };
    WidthResult { width: best.0, direction: [v.x, v.y, v.z], grid_value, grid }
}

#[derive(Debug, Clone, Serialize)]
pub struct Chord {
    pub x1: [f64; 3],
    pub x2: [f64; 3],
    pub direction: [f64; 3],
    pub length: f64,
}

impl Chord {
    fn from_direction(body: &ConvexBody, v: &V3) -> Chord {
        let a = body.boundary_point(v);
        let b = body.boundary_point(&-v);
        Chord { x1: [a.x, a.y, a.z], x2: [b.x, b.y, b.z], direction: [v.x, v.y, v.z], length: (a - b).norm() }
    }

    /// Largest angle between the chord and the outward normals at its ends.
    pub fn orthogonality_defect(&self, body: &ConvexBody) -> Option<f64> {
        let v = V3::from(self.direction);
        let n1 = body.outward_normal(&V3::from(self.x1))?;
        let n2 = body.outward_normal(&V3::from(self.x2))?;
        let seg = (V3::from(self.x1) - V3::from(self.x2)).normalize();
        Some((n1 - v).norm().max((n2 + v).norm()).max((seg - v).norm()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChordReport {
    pub chords: Vec<Chord>,
    /// All directions are stationary (ball-like body).
    pub degenerate_family: bool,
    pub non_converged_seeds: usize,
}

const CHORD_STEP: f64 = 1e-4;

fn width_in_chart(body: &ConvexBody, v0: &V3, e1: &V3, e2: &V3, t: [f64; 2]) -> f64 {
    directional_width(body, &(v0 + e1 * t[0] + e2 * t[1]).normalize())
}

/// Newton iteration on the tangential gradient of the width function.
fn newton_stationary(body: &ConvexBody, seed: &V3) -> Option<V3> {
    let mut v = *seed;
    for _ in 0..60 {
        let (e1, e2) = tangent_basis(&v);
        let h = CHORD_STEP;
        let f = |a: f64, b: f64| width_in_chart(body, &v, &e1, &e2, [a, b]);
        let f00 = f(0.0, 0.0);
        let g = [(f(h, 0.0) - f(-h, 0.0)) / (2.0 * h), (f(0.0, h) - f(0.0, -h)) / (2.0 * h)];
        let hxx = (f(h, 0.0) - 2.0 * f00 + f(-h, 0.0)) / (h * h);
        let hyy = (f(0.0, h) - 2.0 * f00 + f(0.0, -h)) / (h * h);
        let hxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
        let det = hxx * hyy - hxy * hxy;
        if det.abs() < 1e-12 {
            return None;
        }
        let dx = -(hyy * g[0] - hxy * g[1]) / det;
        let dy = -(-hxy * g[0] + hxx * g[1]) / det;
        let len = dx.hypot(dy);
        let scale = if len > 0.2 { 0.2 / len } else { 1.0 };
        v = (v + e1 * dx * scale + e2 * dy * scale).normalize();
        if len < 1e-11 {
            let gn = g[0].hypot(g[1]);
            return (gn < 1e-6).then_some(v);
        }
    }
    None
}

/// Stationary directions of the width function found by Newton from grid
/// seeds; each gives an orthogonal chord. Sorted by length.
pub fn orthogonal_chords(body: &ConvexBody, grid: usize) -> ChordReport {
    let seeds = hemisphere_grid(grid.max(2));
    let widths: Vec<f64> = seeds.iter().map(|v| directional_width(body, v)).collect();
    let spread = widths.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - widths.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread < 1e-12 {
        let stride = (seeds.len() / 24).max(1);
        let chords = seeds.iter().step_by(stride).map(|v| Chord::from_direction(body, v)).collect();
        return ChordReport { chords, degenerate_family: true, non_converged_seeds: 0 };
    }
    let mut found: Vec<V3> = Vec::new();
    let mut failed = 0;
    for s in &seeds {
        match newton_stationary(body, s) {
            Some(v) => {
                let v = if v.z < 0.0 || (v.z == 0.0 && v.y < 0.0) { -v } else { v };
                if !found.iter().any(|u| (u - v).norm() < 1e-6 || (u + v).norm() < 1e-6) {
                    found.push(v);
                }
            }
            None => failed += 1,
        }
    }
    let mut chords: Vec<Chord> = found.iter().map(|v| Chord::from_direction(body, v)).collect();
    chords.sort_by(|a, b| a.length.partial_cmp(&b.length).unwrap());
    ChordReport { chords, degenerate_family: false, non_converged_seeds: failed }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub classical_width: f64,
    pub direction: [f64; 3],
    pub shortest_chord: f64,
    pub difference: f64,
    pub equal: bool,
    /// Largest chord parallel to the width direction over a boundary grid.
    pub sweepout_max: f64,
    pub sweepout_gap: f64,
}

/// Tolerance for the chord/width comparison.
pub const EQUIVALENCE_TOL: f64 = 1e-5;

/// Compares the shortest orthogonal chord with the classical width, and
/// evaluates the parallel-chord sweepout along the width direction.
pub fn extrinsic_width_equivalence(body: &ConvexBody, grid: usize) -> EquivalenceReport {
    let w = classical_width(body, grid);
    let chords = orthogonal_chords(body, grid);
    let shortest = chords.chords.first().map(|c| c.length).unwrap_or(f64::NAN);
    let v0 = V3::from(w.direction);
    let sweep = parallel_chord_max(body, &v0, grid);
    EquivalenceReport {
        classical_width: w.width,
        direction: w.direction,
        shortest_chord: shortest,
        difference: (shortest - w.width).abs(),
        equal: (shortest - w.width).abs() < EQUIVALENCE_TOL,
        sweepout_max: sweep,
        sweepout_gap: (sweep - w.width).abs(),
    }
}

/// `max |x - F(x)|` where `F(x)` is the far end of the chord through the
/// boundary point `x` parallel to `v0`.
pub fn parallel_chord_max(body: &ConvexBody, v0: &V3, grid: usize) -> f64 {
    let wv = directional_width(body, v0);
    let mut best: f64 = 0.0;
    for u in hemisphere_grid(grid.clamp(2, 48)) {
        // Rotate the grid so its pole is v0.
        let (e1, e2) = tangent_basis(v0);
        let n = (e1 * u.x + e2 * u.y + v0 * u.z).normalize();
        let x = body.boundary_point(&n);
        let (mut lo, mut hi) = (0.0, wv * 1.01);
        if !body.contains(&(x - v0 * 1e-9)) {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if body.contains(&(x - v0 * mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.max(lo);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipsoid_directional_widths() {
        let b = ConvexBody::Ellipsoid { semi_axes: [1.5, 1.0, 0.5] };
        assert!((directional_width(&b, &V3::z()) - 1.0).abs() < 1e-15);
        assert!((directional_width(&b, &V3::x()) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn ball_width_is_diameter() {
        let b = ConvexBody::Ball { radius: 1.0 };
        let w = classical_width(&b, 32);
        assert!((w.width - 2.0).abs() < 1e-15);
        let r = orthogonal_chords(&b, 32);
        assert!(r.degenerate_family);
        assert!(r.chords.iter().all(|c| (c.length - 2.0).abs() < 1e-12));
    }

    #[test]
    fn hull_boundary_point_is_vertex_plus_offset() {
        let b = ConvexBody::Hull {
            points: vec![[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]],
            smooth: 0.1,
        };
        b.validate().unwrap();
        let v = V3::new(1.0, 1.0, 1.0).normalize();
        let x = b.boundary_point(&v);
        assert!((x - (V3::new(1.0, 1.0, 1.0) + v * 0.1)).norm() < 1e-15);
        assert!(b.contains(&V3::zeros()));
        assert!(!b.contains(&V3::new(2.0, 0.0, 0.0)));
    }

    #[test]
    fn fd_gradient_matches_closed_form() {
        let b = ConvexBody::Ellipsoid { semi_axes: [1.5, 1.0, 0.5] };
        let v = V3::new(0.3, -0.5, 0.8).normalize();
        assert!((b.support_gradient(&v) - b.support_gradient_fd(&v)).norm() < 1e-8);
    }
}
