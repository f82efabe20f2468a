//! Catalog of Riemannian 2-spheres.
//!
//! Smooth kinds are all described in two azimuthal charts. Chart 0 is
//! centered at the north pole and chart 1 at the south pole; a point with
//! polar parameter `u` (distance-like coordinate from the north pole, in
//! `[0, U]`) and longitude `phi` has chart-0 coordinates `u (cos phi, sin phi)`
//! and chart-1 coordinates `(U - u) (cos phi, sin phi)`. The metric in either
//! chart has the form `g = A I + B x x^T` with `A = G/u^2`, `B = (E - A)/u^2`,
//! where `E du^2 + G dphi^2` is the polar form.
//!
//! The Calabi-Croke sphere uses two triangle charts (faces A = 0 and B = 1),
//! both in the coordinates of one reference equilateral triangle. Crossing an
//! edge flips the face and reflects coordinates across that edge.

use crate::spline::CubicSpline;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::any::Any;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("point ({1}, {2}) lies outside chart {0}")]
    PointOutsideChart(u8, f64, f64),
    #[error("metric evaluation needs a smooth surface")]
    NotSmoothSurface,
    #[error("no overlap between chart {0} and chart {1} at this point")]
    NoOverlap(u8, u8),
    #[error("face chain passes through a cone point")]
    ChainHitsConePoint,
    #[error("face chain is not edge-adjacent: {0}")]
    NonAdjacentFaces(String),
    #[error("invalid surface: {0}")]
    Invalid(String),
    #[error("unknown anchor {0:?} for this surface")]
    UnknownAnchor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: u8,
    pub u: f64,
    pub v: f64,
}

impl ChartPoint {
    pub fn new(chart: u8, u: f64, v: f64) -> Self {
        ChartPoint { chart, u, v }
    }
    pub fn xy(&self) -> [f64; 2] {
        [self.u, self.v]
    }
}

impl fmt::Display for ChartPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]({:.6}, {:.6})", self.chart, self.u, self.v)
    }
}

/// Metric, Christoffel symbols `gamma[k][i][j]` and Gauss curvature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricData {
    pub g: [[f64; 2]; 2],
    pub gamma: [[[f64; 2]; 2]; 2],
    pub k: f64,
}

/// Warped-product profile `dt^2 + f(t)^2 dphi^2` on `[0, L]`.
///
/// The table is interpolated through `h = f / S` with `S = sin(kt)/k`,
/// `k = pi/L`, by a clamped cubic spline with `h'(0) = h'(L) = 0`. This keeps
/// `f` positive between the poles and makes it close smoothly with slope
/// `+1` and `-1`.
#[derive(Clone, Serialize)]
pub struct Profile {
    pub t: Vec<f64>,
    pub f: Vec<f64>,
    #[serde(skip)]
    spline: Option<Arc<CubicSpline>>,
    #[serde(skip)]
    k: f64,
    #[serde(skip)]
    exact: Option<Arc<DumbbellExact>>,
}

/// Exact evaluation of the dumbbell profile: a fine table of the Jacobi
/// solution up to the round part, stepped once to the query point.
#[derive(Debug)]
struct DumbbellExact {
    a3: f64,
    t3: f64,
    beta: f64,
    step: f64,
    rows: Vec<(f64, f64, f64)>,
}

impl DumbbellExact {
    fn eval(&self, t: f64) -> ProfileEval {
        if t >= self.t3 {
            let (sn, cs) = (t - self.t3 + self.beta).sin_cos();
            return ProfileEval { f: sn, df: cs, ddf: -sn, curvature: 1.0 };
        }
        let j = ((t / self.step).round() as usize).min(self.rows.len() - 1);
        let (tj, f0, d0) = self.rows[j];
        let h = t - tj;
        let k = |t: f64| dumbbell_curvature(t, self.a3);
        let (k1f, k1d) = (d0, -k(tj) * f0);
        let (k2f, k2d) = (d0 + 0.5 * h * k1d, -k(tj + 0.5 * h) * (f0 + 0.5 * h * k1f));
        let (k3f, k3d) = (d0 + 0.5 * h * k2d, -k(tj + 0.5 * h) * (f0 + 0.5 * h * k2f));
        let (k4f, k4d) = (d0 + h * k3d, -k(t) * (f0 + h * k3f));
        let f = f0 + h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
        let df = d0 + h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        let kt = k(t);
        ProfileEval { f, df, ddf: -kt * f, curvature: kt }
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Profile({} knots, L = {})", self.t.len(), self.length())
    }
}

/// Values of `f, f', f''` and the curvature at one parameter.
#[derive(Debug, Clone, Copy)]
pub struct ProfileEval {
    pub f: f64,
    pub df: f64,
    pub ddf: f64,
    pub curvature: f64,
}

impl Profile {
    pub fn new(t: Vec<f64>, f: Vec<f64>) -> Result<Profile, SurfaceError> {
        let n = t.len();
        if n < 4 || f.len() != n {
            return Err(SurfaceError::Invalid("profile needs at least 4 matching samples".into()));
        }
        if t[0] != 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SurfaceError::Invalid("profile parameters must start at 0 and increase".into()));
        }
        let len = t[n - 1];
        if f[0].abs() > 1e-12 || f[n - 1].abs() > 1e-12 {
            return Err(SurfaceError::Invalid("profile must vanish at both poles".into()));
        }
        if f[1..n - 1].iter().any(|v| !(*v > 0.0)) {
            return Err(SurfaceError::Invalid("profile must be positive between the poles".into()));
        }
        let s0 = f[1] / t[1];
        let s1 = f[n - 2] / (len - t[n - 2]);
        if (s0 - 1.0).abs() > 0.1 || (s1 - 1.0).abs() > 0.1 {
            return Err(SurfaceError::Invalid(format!(
                "profile does not close smoothly: end slopes {s0:.4} and {:.4}",
                -s1
            )));
        }
        let k = PI / len;
        let h: Vec<f64> = t
            .iter()
            .zip(&f)
            .enumerate()
            .map(|(i, (ti, fi))| if i == 0 || i == n - 1 { 1.0 } else { fi * k / (k * ti).sin() })
            .collect();
        let spline = CubicSpline::clamped(&t, &h, 0.0, 0.0);
        Ok(Profile { t, f, spline: Some(Arc::new(spline)), k, exact: None })
    }

    pub fn length(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> ProfileEval {
        if let Some(ex) = &self.exact {
            return ex.eval(t);
        }
        let k = self.k;
        let (h, dh, ddh) = self.spline.as_ref().unwrap().eval(t);
        let kt = k * t;
        let (sn, cs) = kt.sin_cos();
        let s = sn / k;
        let ds = cs;
        let dds = -k * sn;
        let f = s * h;
        let df = ds * h + s * dh;
        let ddf = dds * h + 2.0 * ds * dh + s * ddh;
        // f''/f = -k^2 + (2 S' h'/S + h'')/h; the ratio h'/S is finite at the
        // poles because h' vanishes there.
        let ratio = if s.abs() < 1e-7 { ddh / ds } else { dh / s };
        let curvature = k * k - (2.0 * ds * ratio + ddh) / h;
        ProfileEval { f, df, ddf, curvature }
    }
}

/// Parameters of the shipped dumbbell: curvature schedule along the
/// meridian, integrated from the small pole.
pub mod dumbbell {
    /// Radius of the small round cap.
    pub const CAP_RADIUS: f64 = 0.3;
    /// Curvature on the neck.
    pub const NECK_CURVATURE: f64 = -4.0;
    /// Length of the cap-to-neck transition.
    pub const W1: f64 = 0.15;
    /// Length of the neck-to-sphere transition.
    pub const W3: f64 = 0.3;
    /// Where the cap ends: a bit past its equator, so its boundary circle is
    /// strictly concave.
    pub fn a1() -> f64 {
        CAP_RADIUS * (std::f64::consts::FRAC_PI_2 + 0.2)
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

fn dumbbell_curvature(t: f64, a3: f64) -> f64 {
    use dumbbell::*;
    let kcap = 1.0 / (CAP_RADIUS * CAP_RADIUS);
    let a1 = a1();
    if t < a1 {
        kcap
    } else if t < a1 + W1 {
        kcap + (NECK_CURVATURE - kcap) * smoothstep((t - a1) / W1)
    } else if t < a3 {
        NECK_CURVATURE
    } else if t < a3 + W3 {
        NECK_CURVATURE + (1.0 - NECK_CURVATURE) * smoothstep((t - a3) / W3)
    } else {
        1.0
    }
}

/// RK4 for `f'' = -K f`, `f(0) = 0`, `f'(0) = 1`, recording every `record`th step.
fn integrate_jacobi(a3: f64, t_end: f64, h: f64, record: usize) -> (Vec<(f64, f64, f64)>, f64, f64) {
    let n = (t_end / h).ceil() as usize;
    let h = t_end / n as f64;
    let (mut f, mut df) = (0.0, 1.0);
    let mut out = vec![(0.0, 0.0, 1.0)];
    for i in 0..n {
        let t = i as f64 * h;
        let k = |t: f64| dumbbell_curvature(t, a3);
        let (k1f, k1d) = (df, -k(t) * f);
        let (k2f, k2d) = (df + 0.5 * h * k1d, -k(t + 0.5 * h) * (f + 0.5 * h * k1f));
        let (k3f, k3d) = (df + 0.5 * h * k2d, -k(t + 0.5 * h) * (f + 0.5 * h * k2f));
        let (k4f, k4d) = (df + h * k3d, -k(t + h) * (f + h * k3f));
        f += h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
        df += h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        if (i + 1) % record == 0 {
            out.push(((i + 1) as f64 * h, f, df));
        }
    }
    (out, f, df)
}

/// Builds the dumbbell profile table with roughly `knots` samples.
///
/// The neck-to-sphere transition start `a3` is chosen so that the profile
/// joins a unit round sphere exactly (`f^2 + f'^2 = 1` where the curvature
/// reaches 1).
pub fn dumbbell_table(knots: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, f, _) = dumbbell_build(knots);
    (t, f)
}

fn dumbbell_build(knots: usize) -> (Vec<f64>, Vec<f64>, DumbbellExact) {
    let h = 2e-4;
    let closing = |a3: f64| {
        let (_, f, df) = integrate_jacobi(a3, a3 + dumbbell::W3, h, usize::MAX);
        f * f + df * df - 1.0
    };
    let (mut lo, mut hi) = (1.4, 2.4);
    let flo = closing(lo);
    debug_assert!(flo * closing(hi) < 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if closing(mid) * flo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a3 = 0.5 * (lo + hi);
    let t3 = a3 + dumbbell::W3;
    let (_, f3, df3) = integrate_jacobi(a3, t3, h, usize::MAX);
    let beta = f3.atan2(df3);
    let len = t3 + PI - beta;
    let dt = len / (knots.max(16) - 1) as f64;
    // Fine integration for the table: record at a multiple of the step.
    let sub = 16usize;
    let (rows, _, _) = integrate_jacobi(a3, t3, dt / sub as f64, 1);
    let mut t = vec![];
    let mut f = vec![];
    for i in 0..knots.max(16) {
        let ti = (i as f64 * dt).min(len);
        let fi = if ti <= t3 {
            let j = ((ti / t3) * (rows.len() - 1) as f64).round() as usize;
            let (tj, fj, dfj) = rows[j.min(rows.len() - 1)];
            // Short Taylor step from the nearest recorded row.
            let d = ti - tj;
            let kk = dumbbell_curvature(tj, a3);
            fj + dfj * d - 0.5 * kk * fj * d * d
        } else {
            (ti - t3 + beta).sin()
        };
        t.push(ti);
        f.push(if i == 0 || i == knots.max(16) - 1 { 0.0 } else { fi });
    }
    let fine = 5e-5;
    let n = (t3 / fine).ceil() as usize;
    let (rows, _, _) = integrate_jacobi(a3, t3, t3 / n as f64, 1);
    let exact = DumbbellExact { a3, t3, beta, step: t3 / n as f64, rows };
    (t, f, exact)
}

pub type CustomMetricFn = Arc<dyn Fn([f64; 3]) -> [[f64; 3]; 3] + Send + Sync>;

/// Metric given as a positive definite ambient tensor field on the unit
/// sphere, pulled back through the charts.
#[derive(Clone)]
pub struct CustomMetric {
    pub name: String,
    pub tensor: CustomMetricFn,
}

impl fmt::Debug for CustomMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Custom({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum SurfaceKind {
    Round { radius: f64 },
    EllipsoidOfRevolution { a: f64 },
    RotationallySymmetric(Profile),
    CalabiCroke { side: f64 },
    Custom(CustomMetric),
}

/// Polar data `E, E', G, G'` and curvature at one polar parameter.
#[derive(Debug, Clone, Copy)]
pub struct PolarData {
    pub e: f64,
    pub de: f64,
    pub g: f64,
    pub dg: f64,
    pub k: f64,
}

/// Below this chart radius Christoffels are scaled linearly from it.
const RHO_SMALL: f64 = 1e-4;
/// Central-difference step for the custom kind.
pub const CUSTOM_FD_STEP: f64 = 1e-5;
/// Distance below which a path counts as touching a cone point, relative to the side.
pub const EPS_CONE: f64 = 1e-9;

/// A 2D affine isometry `p -> m p + t` of the reflection tiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
    /// Number of edge reflections mod 2 (face flips).
    pub odd: bool,
}

impl Tile {
    pub fn identity() -> Tile {
        Tile { m: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0], odd: false }
    }
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.t[0],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.t[1],
        ]
    }
    pub fn apply_linear(&self, d: [f64; 2]) -> [f64; 2] {
        [self.m[0][0] * d[0] + self.m[0][1] * d[1], self.m[1][0] * d[0] + self.m[1][1] * d[1]]
    }
    /// Transpose of the linear part applied to `d`.
    pub fn inverse_linear(&self, d: [f64; 2]) -> [f64; 2] {
        [self.m[0][0] * d[0] + self.m[1][0] * d[1], self.m[0][1] * d[0] + self.m[1][1] * d[1]]
    }
    /// `self o other`.
    pub fn compose(&self, other: &Tile) -> Tile {
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = self.m[i][0] * other.m[0][j] + self.m[i][1] * other.m[1][j];
            }
        }
        let t = self.apply(other.t);
        Tile { m, t, odd: self.odd ^ other.odd }
    }
}

/// Reference equilateral triangle with side `s`.
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub side: f64,
}

impl Triangle {
    pub fn vertices(&self) -> [[f64; 2]; 3] {
        let s = self.side;
        [[0.0, 0.0], [s, 0.0], [0.5 * s, 0.5 * 3f64.sqrt() * s]]
    }
    pub fn centroid(&self) -> [f64; 2] {
        [0.5 * self.side, self.side / (2.0 * 3f64.sqrt())]
    }
    /// Inward unit normal and offset of edge `e` (edge e joins vertex e and e+1).
    pub fn edge(&self, e: usize) -> ([f64; 2], f64) {
        let r3 = 3f64.sqrt();
        match e {
            0 => ([0.0, 1.0], 0.0),
            1 => ([-0.5 * r3, -0.5], -0.5 * r3 * self.side),
            _ => ([0.5 * r3, -0.5], 0.0),
        }
    }
    /// Signed distance to edge `e`, positive inside.
    pub fn edge_distance(&self, e: usize, p: [f64; 2]) -> f64 {
        let (n, c) = self.edge(e);
        n[0] * p[0] + n[1] * p[1] - c
    }
    pub fn reflect_point(&self, e: usize, p: [f64; 2]) -> [f64; 2] {
        let (n, _) = self.edge(e);
        let d = self.edge_distance(e, p);
        [p[0] - 2.0 * d * n[0], p[1] - 2.0 * d * n[1]]
    }
    pub fn reflect_dir(&self, e: usize, d: [f64; 2]) -> [f64; 2] {
        let (n, _) = self.edge(e);
        let k = n[0] * d[0] + n[1] * d[1];
        [d[0] - 2.0 * k * n[0], d[1] - 2.0 * k * n[1]]
    }
    pub fn reflection(&self, e: usize) -> Tile {
        let (n, c) = self.edge(e);
        let m = [[1.0 - 2.0 * n[0] * n[0], -2.0 * n[0] * n[1]], [-2.0 * n[0] * n[1], 1.0 - 2.0 * n[1] * n[1]]];
        Tile { m, t: [2.0 * c * n[0], 2.0 * c * n[1]], odd: true }
    }
    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        (0..3).all(|e| self.edge_distance(e, p) >= -tol)
    }
    pub fn nearest_vertex_distance(&self, p: [f64; 2]) -> f64 {
        self.vertices().iter().map(|v| (v[0] - p[0]).hypot(v[1] - p[1])).fold(f64::INFINITY, f64::min)
    }
}

/// Tiles of the reflection group whose centroids lie within `radius` of the
/// reference centroid, identity first.
pub fn enumerate_tiles(tri: &Triangle, radius: f64) -> Vec<Tile> {
    let c = tri.centroid();
    let key = |p: [f64; 2]| ((p[0] / tri.side * 1e6).round() as i64, (p[1] / tri.side * 1e6).round() as i64);
    let mut seen = std::collections::HashSet::new();
    let mut out = vec![Tile::identity()];
    seen.insert(key(c));
    let mut head = 0;
    while head < out.len() {
        let g = out[head];
        head += 1;
        for e in 0..3 {
            let n = g.compose(&tri.reflection(e));
            let nc = n.apply(c);
            if (nc[0] - c[0]).hypot(nc[1] - c[1]) > radius {
                continue;
            }
            if seen.insert(key(nc)) {
                out.push(n);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Surface {
    pub kind: SurfaceKind,
    /// User-certified lower bound for the injectivity radius.
    pub inj_lower: f64,
    pub name: String,
    tiles: Arc<Vec<Tile>>,
    cache: SurfaceCache,
}

/// Lazily built per-surface data shared by clones (the distance mesh).
#[derive(Clone, Default)]
pub(crate) struct SurfaceCache(Arc<OnceLock<Arc<dyn Any + Send + Sync>>>);

impl fmt::Debug for SurfaceCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SurfaceCache({})", if self.0.get().is_some() { "built" } else { "empty" })
    }
}

/// JSON surface description: `{"kind": ..., "params": {...}, "inj_lower": x}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceConfig {
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub inj_lower: Option<f64>,
    #[serde(default)]
    pub name: Option<String>,
}

/// Names accepted by [`Surface::builtin`].
pub const BUILTINS: [&str; 5] = ["round", "prolate", "oblate", "calabi_croke", "dumbbell"];

/// Knots in the shipped dumbbell table.
pub const DUMBBELL_KNOTS: usize = 2401;
/// Injectivity radius lower bound used for the dumbbell.
pub const DUMBBELL_INJ: f64 = 0.4;

impl Surface {
    pub fn round(radius: f64) -> Surface {
        Self::make(SurfaceKind::Round { radius }, PI * radius, format!("round({radius})"))
    }

    pub fn ellipsoid(a: f64) -> Surface {
        Self::make(SurfaceKind::EllipsoidOfRevolution { a }, PI * a.min(1.0 / a), format!("ellipsoid({a})"))
    }

    pub fn rotationally_symmetric(profile: Profile, inj_lower: f64) -> Surface {
        Self::make(SurfaceKind::RotationallySymmetric(profile), inj_lower, "rotationally_symmetric".into())
    }

    pub fn calabi_croke(side: f64) -> Surface {
        let mut s = Self::make(SurfaceKind::CalabiCroke { side }, 0.25 * side, format!("calabi_croke({side})"));
        s.tiles = Arc::new(enumerate_tiles(&Triangle { side }, 4.5 * side));
        s
    }

    pub fn custom(name: &str, tensor: CustomMetricFn, inj_lower: f64) -> Surface {
        Self::make(SurfaceKind::Custom(CustomMetric { name: name.into(), tensor }), inj_lower, name.into())
    }

    pub fn dumbbell() -> Surface {
        let (t, f, exact) = dumbbell_build(DUMBBELL_KNOTS);
        let mut profile = Profile::new(t, f).expect("valid dumbbell table");
        profile.exact = Some(Arc::new(exact));
        let mut s = Self::rotationally_symmetric(profile, DUMBBELL_INJ);
        s.name = "dumbbell".into();
        s
    }

    fn make(kind: SurfaceKind, inj_lower: f64, name: String) -> Surface {
        Surface { kind, inj_lower, name, tiles: Arc::new(vec![]), cache: SurfaceCache::default() }
    }

    pub fn builtin(name: &str) -> Result<Surface, SurfaceError> {
        match name {
            "round" => Ok(Self::round(1.0)),
            "prolate" => Ok(Self::ellipsoid(1.2)),
            "oblate" => Ok(Self::ellipsoid(0.4)),
            "calabi_croke" | "cc" => Ok(Self::calabi_croke(1.0)),
            "dumbbell" => Ok(Self::dumbbell()),
            _ => Err(SurfaceError::Invalid(format!("unknown builtin {name:?}"))),
        }
    }

    pub fn from_config(cfg: &SurfaceConfig) -> Result<Surface, SurfaceError> {
        let num = |key: &str| -> Result<f64, SurfaceError> {
            cfg.params
                .get(key)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| SurfaceError::Invalid(format!("missing numeric parameter {key:?}")))
        };
        let mut s = match cfg.kind.as_str() {
            "round" => {
                let r = num("radius")?;
                if !(r > 0.0) {
                    return Err(SurfaceError::Invalid("radius must be positive".into()));
                }
                Self::round(r)
            }
            "ellipsoid" | "ellipsoid_of_revolution" => {
                let a = num("a")?;
                if !(a > 0.0) {
                    return Err(SurfaceError::Invalid("a must be positive".into()));
                }
                Self::ellipsoid(a)
            }
            "calabi_croke" => {
                let side = num("side")?;
                if !(side > 0.0) {
                    return Err(SurfaceError::Invalid("side must be positive".into()));
                }
                Self::calabi_croke(side)
            }
            "rotationally_symmetric" => {
                let arr = |key: &str| -> Result<Vec<f64>, SurfaceError> {
                    serde_json::from_value(cfg.params.get(key).cloned().unwrap_or_default())
                        .map_err(|e| SurfaceError::Invalid(format!("profile {key}: {e}")))
                };
                let inj = cfg
                    .inj_lower
                    .ok_or_else(|| SurfaceError::Invalid("rotationally symmetric surfaces need inj_lower".into()))?;
                let (t, f) = (arr("t")?, arr("f")?);
                // The shipped dumbbell table gets its exact evaluator back.
                let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-13);
                let (dt, df) = if t.len() == DUMBBELL_KNOTS { dumbbell_table(DUMBBELL_KNOTS) } else { (vec![], vec![]) };
                if same(&t, &dt) && same(&f, &df) {
                    let mut s = Self::dumbbell();
                    s.inj_lower = inj;
                    s
                } else {
                    Self::rotationally_symmetric(Profile::new(t, f)?, inj)
                }
            }
            "dumbbell" => Self::dumbbell(),
            other => return Err(SurfaceError::Invalid(format!("unknown surface kind {other:?}"))),
        };
        if let Some(inj) = cfg.inj_lower {
            if !(inj > 0.0) {
                return Err(SurfaceError::Invalid("inj_lower must be positive".into()));
            }
            s.inj_lower = inj;
        }
        if let Some(n) = &cfg.name {
            s.name = n.clone();
        }
        Ok(s)
    }

    pub fn to_config(&self) -> Option<SurfaceConfig> {
        let (kind, params) = match &self.kind {
            SurfaceKind::Round { radius } => ("round", serde_json::json!({ "radius": radius })),
            SurfaceKind::EllipsoidOfRevolution { a } => ("ellipsoid", serde_json::json!({ "a": a })),
            SurfaceKind::CalabiCroke { side } => ("calabi_croke", serde_json::json!({ "side": side })),
            SurfaceKind::RotationallySymmetric(p) => {
                ("rotationally_symmetric", serde_json::json!({ "t": p.t, "f": p.f }))
            }
            SurfaceKind::Custom(_) => return None,
        };
        Some(SurfaceConfig {
            kind: kind.into(),
            params,
            inj_lower: Some(self.inj_lower),
            name: Some(self.name.clone()),
        })
    }

    /// Per-surface cached value, built on first use. Only one type is ever stored.
    pub(crate) fn cached<T: Any + Send + Sync>(&self, build: impl FnOnce() -> T) -> Arc<T> {
        let v = self.cache.0.get_or_init(|| Arc::new(build()) as Arc<dyn Any + Send + Sync>);
        v.clone().downcast::<T>().unwrap_or_else(|_| unreachable!("surface cache holds one type"))
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, SurfaceKind::CalabiCroke { .. })
    }

    pub fn is_revolution(&self) -> bool {
        matches!(
            self.kind,
            SurfaceKind::Round { .. } | SurfaceKind::EllipsoidOfRevolution { .. } | SurfaceKind::RotationallySymmetric(_)
        )
    }

    pub fn side(&self) -> Option<f64> {
        match self.kind {
            SurfaceKind::CalabiCroke { side } => Some(side),
            _ => None,
        }
    }

    pub fn triangle(&self) -> Option<Triangle> {
        self.side().map(|side| Triangle { side })
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    /// Polar range `U`: the north-to-south polar parameter span.
    pub fn polar_span(&self) -> f64 {
        match &self.kind {
            SurfaceKind::RotationallySymmetric(p) => p.length(),
            _ => PI,
        }
    }

    /// Scale used for relative tolerances: side length or meridian length.
    pub fn scale(&self) -> f64 {
        match &self.kind {
            SurfaceKind::CalabiCroke { side } => *side,
            _ => self.meridian_length(PI.min(self.polar_span())).max(1e-300),
        }
    }

    /// Polar data for revolution kinds at polar parameter `u` from the north pole.
    pub fn polar_data(&self, u: f64) -> PolarData {
        match &self.kind {
            SurfaceKind::Round { radius } => {
                let r2 = radius * radius;
                let (s, c) = u.sin_cos();
                PolarData { e: r2, de: 0.0, g: r2 * s * s, dg: 2.0 * r2 * s * c, k: 1.0 / r2 }
            }
            SurfaceKind::EllipsoidOfRevolution { a } => {
                let (s, c) = u.sin_cos();
                let a2 = a * a;
                let e = c * c + a2 * s * s;
                PolarData { e, de: 2.0 * (a2 - 1.0) * s * c, g: s * s, dg: 2.0 * s * c, k: a2 / (e * e) }
            }
            SurfaceKind::RotationallySymmetric(p) => {
                let v = p.eval(u);
                PolarData { e: 1.0, de: 0.0, g: v.f * v.f, dg: 2.0 * v.f * v.df, k: v.curvature }
            }
            _ => panic!("polar data requested for a non-revolution surface"),
        }
    }

    /// Meridian arc length from the north pole to polar parameter `u`.
    pub fn meridian_length(&self, u: f64) -> f64 {
        match &self.kind {
            SurfaceKind::Round { radius } => radius * u,
            SurfaceKind::RotationallySymmetric(_) => u,
            SurfaceKind::EllipsoidOfRevolution { .. } | SurfaceKind::Custom(_) => {
                // Composite Simpson on sqrt(E) (unit sphere for custom).
                let n = 2 * ((u.abs() / 0.01).ceil() as usize).max(8);
                let h = u / n as f64;
                let f = |t: f64| match self.kind {
                    SurfaceKind::EllipsoidOfRevolution { .. } => self.polar_data(t).e.sqrt(),
                    _ => 1.0,
                };
                let mut acc = f(0.0) + f(u);
                for i in 1..n {
                    acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
                }
                acc * h / 3.0
            }
            SurfaceKind::CalabiCroke { .. } => f64::NAN,
        }
    }

    fn check_domain(&self, p: &ChartPoint) -> Result<(), SurfaceError> {
        let ok = match &self.kind {
            SurfaceKind::CalabiCroke { side } => {
                let tri = Triangle { side: *side };
                p.chart <= 1 && in_extended_domain(&tri, p.xy())
            }
            _ => p.chart <= 1 && p.u.hypot(p.v) < self.polar_span() && p.u.is_finite() && p.v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SurfaceError::PointOutsideChart(p.chart, p.u, p.v))
        }
    }

    /// Metric, Christoffel symbols and curvature in the chart of `p`.
    pub fn metric_eval(&self, p: &ChartPoint) -> Result<MetricData, SurfaceError> {
        if !self.is_smooth() {
            return Err(SurfaceError::NotSmoothSurface);
        }
        self.check_domain(p)?;
        Ok(self.metric_unchecked(p.chart, [p.u, p.v]))
    }

    pub(crate) fn metric_unchecked(&self, chart: u8, x: [f64; 2]) -> MetricData {
        match &self.kind {
            SurfaceKind::Custom(c) => custom_metric_data(c, chart, x),
            _ => {
                let (g, dg, k) = self.azimuthal_metric(chart, x);
                MetricData { g, gamma: christoffel(&g, &dg), k }
            }
        }
    }

    /// Metric only, cheaper than the full evaluation.
    pub(crate) fn metric_tensor(&self, chart: u8, x: [f64; 2]) -> [[f64; 2]; 2] {
        match &self.kind {
            SurfaceKind::Custom(c) => custom_metric(c, chart, x),
            _ => {
                let rho2 = x[0] * x[0] + x[1] * x[1];
                let rho = rho2.sqrt();
                let u = if chart == 0 { rho } else { self.polar_span() - rho };
                let pd = self.polar_data(u);
                if rho < 1e-12 {
                    return [[pd.e, 0.0], [0.0, pd.e]];
                }
                let a = pd.g / rho2;
                let b = (pd.e - a) / rho2;
                [[a + b * x[0] * x[0], b * x[0] * x[1]], [b * x[0] * x[1], a + b * x[1] * x[1]]]
            }
        }
    }

    /// Geodesic acceleration `-Gamma^k_ij v^i v^j` in the chart.
    pub(crate) fn geodesic_accel(&self, chart: u8, x: [f64; 2], v: [f64; 2]) -> [f64; 2] {
        let gm = self.metric_unchecked(chart, x).gamma;
        let mut a = [0.0; 2];
        for k in 0..2 {
            a[k] = -(gm[k][0][0] * v[0] * v[0] + 2.0 * gm[k][0][1] * v[0] * v[1] + gm[k][1][1] * v[1] * v[1]);
        }
        a
    }

    /// Metric, its coordinate derivatives `dg[k][i][j] = d_k g_ij`, and K.
    fn azimuthal_metric(&self, chart: u8, x: [f64; 2]) -> ([[f64; 2]; 2], [[[f64; 2]; 2]; 2], f64) {
        let rho2 = x[0] * x[0] + x[1] * x[1];
        let rho = rho2.sqrt();
        let span = self.polar_span();
        let (u, sign) = if chart == 0 { (rho, 1.0) } else { (span - rho, -1.0) };
        let pd = self.polar_data(u);
        if rho < 1e-12 {
            return ([[pd.e, 0.0], [0.0, pd.e]], [[[0.0; 2]; 2]; 2], pd.k);
        }
        if rho < RHO_SMALL {
            // Christoffels are linear in x near the chart origin.
            let scale = RHO_SMALL / rho;
            let (_, dg_far, _) = self.azimuthal_metric(chart, [x[0] * scale, x[1] * scale]);
            let g = self.metric_tensor(chart, x);
            let mut dg = dg_far;
            for row in dg.iter_mut() {
                for r in row.iter_mut() {
                    for v in r.iter_mut() {
                        *v /= scale;
                    }
                }
            }
            return (g, dg, pd.k);
        }
        let (e, de, g, dgu) = (pd.e, sign * pd.de, pd.g, sign * pd.dg);
        let a = g / rho2;
        let b = (e - a) / rho2;
        let da = dgu / rho2 - 2.0 * g / (rho2 * rho);
        let db = (de - da) / rho2 - 2.0 * (e - a) / (rho2 * rho);
        let a_s = da / (2.0 * rho);
        let b_s = db / (2.0 * rho);
        let gm = [[a + b * x[0] * x[0], b * x[0] * x[1]], [b * x[0] * x[1], a + b * x[1] * x[1]]];
        let mut dg = [[[0.0; 2]; 2]; 2];
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    dg[k][i][j] = 2.0 * x[k] * (a_s * delta(i, j) + b_s * x[i] * x[j])
                        + b * (delta(i, k) * x[j] + delta(j, k) * x[i]);
                }
            }
        }
        (gm, dg, pd.k)
    }

    /// Metric data in polar coordinates `(u, phi)` measured from the north
    /// pole. For revolution kinds `g = diag(E, G)`.
    pub fn metric_eval_polar(&self, u: f64, phi: f64) -> Result<MetricData, SurfaceError> {
        if !self.is_smooth() {
            return Err(SurfaceError::NotSmoothSurface);
        }
        let span = self.polar_span();
        if !(u > 0.0 && u < span) {
            return Err(SurfaceError::PointOutsideChart(0, u, phi));
        }
        if self.is_revolution() {
            let pd = self.polar_data(u);
            let mut gamma = [[[0.0; 2]; 2]; 2];
            gamma[0][0][0] = pd.de / (2.0 * pd.e);
            gamma[0][1][1] = -pd.dg / (2.0 * pd.e);
            gamma[1][0][1] = pd.dg / (2.0 * pd.g);
            gamma[1][1][0] = gamma[1][0][1];
            return Ok(MetricData { g: [[pd.e, 0.0], [0.0, pd.g]], gamma, k: pd.k });
        }
        // Generic: pull the chart metric back through the polar map, with
        // finite-difference Christoffels.
        let polar_g = |u: f64, phi: f64| {
            let (chart, r) = if u <= 0.5 * span { (0u8, u) } else { (1u8, span - u) };
            let x = [r * phi.cos(), r * phi.sin()];
            let gm = self.metric_tensor(chart, x);
            let du = if chart == 0 { 1.0 } else { -1.0 };
            let j = [[du * phi.cos(), -r * phi.sin()], [du * phi.sin(), r * phi.cos()]];
            congruence(&gm, &j)
        };
        let h = CUSTOM_FD_STEP;
        let g = polar_g(u, phi);
        let gu = |d: f64| polar_g(u + d, phi);
        let gp = |d: f64| polar_g(u, phi + d);
        let mut dg = [[[0.0; 2]; 2]; 2];
        let (a, b, c, d) = (gu(h), gu(-h), gp(h), gp(-h));
        for i in 0..2 {
            for j in 0..2 {
                dg[0][i][j] = (a[i][j] - b[i][j]) / (2.0 * h);
                dg[1][i][j] = (c[i][j] - d[i][j]) / (2.0 * h);
            }
        }
        let k = self.metric_unchecked(if u <= 0.5 * span { 0 } else { 1 }, {
            let r = if u <= 0.5 * span { u } else { span - u };
            [r * phi.cos(), r * phi.sin()]
        })
        .k;
        Ok(MetricData { g, gamma: christoffel(&g, &dg), k })
    }

    /// Metric tensor in polar coordinates `(u, phi)`, without derivatives.
    pub fn polar_metric_tensor(&self, u: f64, phi: f64) -> [[f64; 2]; 2] {
        let span = self.polar_span();
        if self.is_revolution() {
            let pd = self.polar_data(u.clamp(0.0, span));
            return [[pd.e, 0.0], [0.0, pd.g]];
        }
        let (chart, r) = if u <= 0.5 * span { (0u8, u) } else { (1u8, span - u) };
        let x = [r * phi.cos(), r * phi.sin()];
        let gm = self.metric_tensor(chart, x);
        let du = if chart == 0 { 1.0 } else { -1.0 };
        let j = [[du * phi.cos(), -r * phi.sin()], [du * phi.sin(), r * phi.cos()]];
        congruence(&gm, &j)
    }

    /// Gauss curvature at a point.
    pub fn curvature(&self, p: &ChartPoint) -> f64 {
        match self.kind {
            SurfaceKind::CalabiCroke { .. } => 0.0,
            _ => self.metric_unchecked(p.chart, p.xy()).k,
        }
    }

    /// Same surface point expressed in chart `target`.
    pub fn chart_transition(&self, p: &ChartPoint, target: u8) -> Result<ChartPoint, SurfaceError> {
        self.check_domain(p)?;
        if target > 1 {
            return Err(SurfaceError::NoOverlap(p.chart, target));
        }
        if target == p.chart {
            return Ok(*p);
        }
        match &self.kind {
            SurfaceKind::CalabiCroke { side } => {
                let tri = Triangle { side: *side };
                let x = p.xy();
                let e = (0..3)
                    .min_by(|a, b| tri.edge_distance(*a, x).partial_cmp(&tri.edge_distance(*b, x)).unwrap())
                    .unwrap();
                let y = tri.reflect_point(e, x);
                Ok(ChartPoint::new(target, y[0], y[1]))
            }
            _ => {
                let rho = p.u.hypot(p.v);
                if rho < 1e-14 {
                    return Err(SurfaceError::NoOverlap(p.chart, target));
                }
                let s = (self.polar_span() - rho) / rho;
                Ok(ChartPoint::new(target, p.u * s, p.v * s))
            }
        }
    }

    /// Transition of a point with a tangent vector (smooth kinds).
    pub(crate) fn transition_with_velocity(&self, chart: u8, x: [f64; 2], v: [f64; 2]) -> (u8, [f64; 2], [f64; 2]) {
        let rho = x[0].hypot(x[1]);
        let rho2 = self.polar_span() - rho;
        let n = [x[0] / rho, x[1] / rho];
        let t = [-n[1], n[0]];
        let vn = n[0] * v[0] + n[1] * v[1];
        let vt = t[0] * v[0] + t[1] * v[1];
        let s = rho2 / rho;
        let nv = [-vn * n[0] + s * vt * t[0], -vn * n[1] + s * vt * t[1]];
        (1 - chart, [x[0] * s, x[1] * s], nv)
    }

    /// Polar parameters `(u, phi)` of a smooth-kind point.
    pub fn to_polar(&self, p: &ChartPoint) -> (f64, f64) {
        let rho = p.u.hypot(p.v);
        let phi = if rho > 0.0 { p.v.atan2(p.u) } else { 0.0 };
        if p.chart == 0 {
            (rho, phi)
        } else {
            (self.polar_span() - rho, phi)
        }
    }

    /// Smooth-kind point from polar parameters, in the better chart.
    pub fn from_polar(&self, u: f64, phi: f64) -> ChartPoint {
        let span = self.polar_span();
        let u = u.clamp(0.0, span);
        if u <= 0.5 * span {
            ChartPoint::new(0, u * phi.cos(), u * phi.sin())
        } else {
            let r = span - u;
            ChartPoint::new(1, r * phi.cos(), r * phi.sin())
        }
    }

    /// Re-expresses a point in its preferred chart: smooth kinds use the
    /// chart where it is closer to the center; cone kinds fold it into the
    /// closed reference triangle.
    pub fn normalize(&self, p: &ChartPoint) -> ChartPoint {
        match &self.kind {
            SurfaceKind::CalabiCroke { side } => {
                let tri = Triangle { side: *side };
                let (f, x) = fold_into_triangle(&tri, p.chart, p.xy());
                ChartPoint::new(f, x[0], x[1])
            }
            _ => {
                let rho = p.u.hypot(p.v);
                if rho > 0.5 * self.polar_span() {
                    self.chart_transition(p, 1 - p.chart).unwrap_or(*p)
                } else {
                    *p
                }
            }
        }
    }

    /// Expresses `q` in the chart of `p` when possible.
    pub fn in_chart_of(&self, p: &ChartPoint, q: &ChartPoint) -> Option<ChartPoint> {
        if q.chart == p.chart {
            return Some(*q);
        }
        self.chart_transition(q, p.chart).ok()
    }

    /// Whether two chart points denote the same surface point, comparing
    /// coordinates after a transition (tolerance in chart units).
    pub fn same_point(&self, p: &ChartPoint, q: &ChartPoint, tol: f64) -> bool {
        let (a, b) = (self.normalize(p), self.normalize(q));
        if a.chart == b.chart && (a.u - b.u).hypot(a.v - b.v) <= tol {
            return true;
        }
        match self.in_chart_of(&a, &b) {
            Some(c) => (a.u - c.u).hypot(a.v - c.v) <= tol,
            None => false,
        }
    }

    /// Chart-level antipodal map: `x -> -x` across the two charts for smooth
    /// kinds; face swap followed by a third of a turn about the centroid for
    /// the cone surface. Continuous and without fixed points.
    pub fn antipode(&self, p: &ChartPoint) -> ChartPoint {
        match &self.kind {
            SurfaceKind::CalabiCroke { side } => {
                let tri = Triangle { side: *side };
                let q = self.normalize(p);
                let c = tri.centroid();
                let (s, co) = (2.0 * PI / 3.0).sin_cos();
                let d = [q.u - c[0], q.v - c[1]];
                let r = [c[0] + co * d[0] - s * d[1], c[1] + s * d[0] + co * d[1]];
                ChartPoint::new(1 - q.chart, r[0], r[1])
            }
            _ => ChartPoint::new(1 - p.chart, -p.u, -p.v),
        }
    }

    /// Injectivity radius lower bound usable at `p`.
    pub fn inj_lower_at(&self, p: &ChartPoint) -> f64 {
        match &self.kind {
            SurfaceKind::CalabiCroke { side } => {
                let tri = Triangle { side: *side };
                let q = self.normalize(p);
                0.5 * 3f64.sqrt() * tri.nearest_vertex_distance(q.xy())
            }
            _ => self.inj_lower,
        }
    }

    /// Surface point under a plane point of the reflection tiling (cone kind).
    pub fn from_development(&self, p: [f64; 2]) -> Option<ChartPoint> {
        let tri = self.triangle()?;
        for t in self.tiles() {
            let d = [p[0] - t.t[0], p[1] - t.t[1]];
            let q = t.inverse_linear(d);
            if tri.contains(q, 1e-12 * tri.side) {
                let (f, x) = fold_into_triangle(&tri, t.odd as u8, q);
                return Some(ChartPoint::new(f, x[0], x[1]));
            }
        }
        None
    }

    /// Cone points in face coordinates.
    pub fn cone_points(&self) -> Vec<ChartPoint> {
        match self.triangle() {
            Some(t) => t.vertices().iter().map(|v| ChartPoint::new(0, v[0], v[1])).collect(),
            None => vec![],
        }
    }

    /// Profile parameter of the neck (interior local minimum of `f`), if any.
    pub fn neck(&self) -> Option<f64> {
        let SurfaceKind::RotationallySymmetric(p) = &self.kind else { return None };
        let n = p.t.len();
        let i = (1..n - 1).find(|&i| p.f[i] < p.f[i - 1] && p.f[i] <= p.f[i + 1])?;
        // Refine the zero of f' by bisection between neighbors.
        let (mut lo, mut hi) = (p.t[i - 1], p.t[i + 1]);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if p.eval(mid).df < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Named points: `north`, `south`, `equator:phi`, `polar:u,phi`,
    /// `neck:phi`, `bary_A`, `bary_B`, `vertex:i`.
    pub fn anchor(&self, name: &str) -> Result<ChartPoint, SurfaceError> {
        let bad = || SurfaceError::UnknownAnchor(name.to_string());
        let (head, arg) = match name.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (name, None),
        };
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        if let Some(tri) = self.triangle() {
            let c = tri.centroid();
            return match head {
                "bary_A" => Ok(ChartPoint::new(0, c[0], c[1])),
                "bary_B" => Ok(ChartPoint::new(1, c[0], c[1])),
                "face" => {
                    // face:A,x,y or face:B,x,y
                    let a = arg.ok_or_else(bad)?;
                    let parts: Vec<&str> = a.split(',').collect();
                    if parts.len() != 3 {
                        return Err(bad());
                    }
                    let f = match parts[0] {
                        "A" | "0" => 0,
                        "B" | "1" => 1,
                        _ => return Err(bad()),
                    };
                    Ok(ChartPoint::new(f, parse(parts[1])?, parse(parts[2])?))
                }
                _ => Err(bad()),
            };
        }
        let span = self.polar_span();
        match head {
            "north" => Ok(ChartPoint::new(0, 0.0, 0.0)),
            "south" => Ok(ChartPoint::new(1, 0.0, 0.0)),
            "equator" => Ok(self.from_polar(0.5 * span, arg.map(parse).transpose()?.unwrap_or(0.0))),
            "neck" => {
                let t = self.neck().ok_or_else(bad)?;
                Ok(self.from_polar(t, arg.map(parse).transpose()?.unwrap_or(0.0)))
            }
            "polar" => {
                let a = arg.ok_or_else(bad)?;
                let (u, phi) = a.split_once(',').ok_or_else(bad)?;
                Ok(self.from_polar(parse(u)?, parse(phi)?))
            }
            _ => Err(bad()),
        }
    }

    /// Approximately area-uniform deterministic point set of size about `n`
    /// (spiral for smooth kinds, triangular lattice on both faces otherwise).
    pub fn grid_points(&self, n: usize) -> Vec<ChartPoint> {
        let n = n.max(2);
        match self.triangle() {
            Some(tri) => {
                let per_face = n.div_ceil(2);
                // Lattice with about per_face points in the open triangle.
                let mut m = 1;
                while (m + 1) * (m + 2) / 2 < per_face {
                    m += 1;
                }
                let m = m + 2;
                let v = tri.vertices();
                let mut out = vec![];
                for face in 0..2u8 {
                    for i in 1..m {
                        for j in 1..m - i {
                            let (a, b) = (i as f64 / m as f64, j as f64 / m as f64);
                            let c = 1.0 - a - b;
                            let x = [
                                a * v[0][0] + b * v[1][0] + c * v[2][0],
                                a * v[0][1] + b * v[1][1] + c * v[2][1],
                            ];
                            out.push(ChartPoint::new(face, x[0], x[1]));
                        }
                    }
                }
                out
            }
            None => {
                let span = self.polar_span();
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..n)
                    .map(|i| {
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                        let theta = z.clamp(-1.0, 1.0).acos();
                        self.from_polar(span * theta / PI, golden * i as f64)
                    })
                    .collect()
            }
        }
    }

    /// Random point, roughly area-uniform.
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> ChartPoint {
        match self.triangle() {
            Some(tri) => {
                let v = tri.vertices();
                let (mut a, mut b): (f64, f64) = (rng.random(), rng.random());
                if a + b > 1.0 {
                    a = 1.0 - a;
                    b = 1.0 - b;
                }
                let face = rng.random_range(0..2u8);
                let x = [
                    v[0][0] + a * (v[1][0] - v[0][0]) + b * (v[2][0] - v[0][0]),
                    v[0][1] + a * (v[1][1] - v[0][1]) + b * (v[2][1] - v[0][1]),
                ];
                ChartPoint::new(face, x[0], x[1])
            }
            None => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                self.from_polar(self.polar_span() * z.acos() / PI, phi)
            }
        }
    }

    /// Orthonormal frame at `p`: the first chart basis vector normalized,
    /// then its positively oriented g-orthogonal complement.
    pub fn frame(&self, p: &ChartPoint) -> [[f64; 2]; 2] {
        if !self.is_smooth() {
            return [[1.0, 0.0], [0.0, 1.0]];
        }
        let g = self.metric_tensor(p.chart, p.xy());
        orthonormal_frame(&g)
    }
}

/// Gram-Schmidt frame for the metric `g` starting from `d/du`.
pub fn orthonormal_frame(g: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let e1 = [1.0 / g[0][0].sqrt(), 0.0];
    // e2 = (-g01, g00) / sqrt(g00 det g), positively oriented.
    let det = g[0][0] * g[1][1] - g[0][1] * g[0][1];
    let s = 1.0 / (g[0][0] * det).sqrt();
    [e1, [-g[0][1] * s, g[0][0] * s]]
}

/// `J^T g J`.
fn congruence(g: &[[f64; 2]; 2], j: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut s = 0.0;
            for i in 0..2 {
                for k in 0..2 {
                    s += j[i][a] * g[i][k] * j[k][b];
                }
            }
            out[a][b] = s;
        }
    }
    out
}

/// Christoffel symbols of the second kind from the metric derivatives.
pub fn christoffel(g: &[[f64; 2]; 2], dg: &[[[f64; 2]; 2]; 2]) -> [[[f64; 2]; 2]; 2] {
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let inv = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
    let mut first = [[[0.0; 2]; 2]; 2];
    for l in 0..2 {
        for i in 0..2 {
            for j in i..2 {
                let v = 0.5 * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
                first[l][i][j] = v;
                first[l][j][i] = v;
            }
        }
    }
    let mut out = [[[0.0; 2]; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                out[k][i][j] = inv[k][0] * first[0][i][j] + inv[k][1] * first[1][i][j];
            }
        }
    }
    out
}

/// Embedding of the unit sphere in chart coordinates, and its Jacobian.
fn sphere_embedding(chart: u8, x: [f64; 2]) -> ([f64; 3], [[f64; 2]; 3]) {
    let rho2 = x[0] * x[0] + x[1] * x[1];
    let rho = rho2.sqrt();
    // sinc(rho) and sinc'(rho)/rho.
    let (sinc, dsinc_over) = if rho < 1e-3 {
        (1.0 - rho2 / 6.0 + rho2 * rho2 / 120.0, -1.0 / 3.0 + rho2 / 30.0)
    } else {
        let (s, c) = rho.sin_cos();
        (s / rho, (rho * c - s) / (rho2 * rho))
    };
    let zsign = if chart == 0 { 1.0 } else { -1.0 };
    let p = [sinc * x[0], sinc * x[1], zsign * rho.cos()];
    // d(cos rho)/dx_i = -sin(rho) x_i / rho = -sinc x_i.
    let j = [
        [sinc + dsinc_over * x[0] * x[0], dsinc_over * x[0] * x[1]],
        [dsinc_over * x[0] * x[1], sinc + dsinc_over * x[1] * x[1]],
        [-zsign * sinc * x[0], -zsign * sinc * x[1]],
    ];
    (p, j)
}

fn custom_metric(c: &CustomMetric, chart: u8, x: [f64; 2]) -> [[f64; 2]; 2] {
    let (p, j) = sphere_embedding(chart, x);
    let m = (c.tensor)(p);
    let mut g = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut s = 0.0;
            for i in 0..3 {
                for k in 0..3 {
                    s += j[i][a] * m[i][k] * j[k][b];
                }
            }
            g[a][b] = s;
        }
    }
    // Symmetrize exactly.
    let off = 0.5 * (g[0][1] + g[1][0]);
    g[0][1] = off;
    g[1][0] = off;
    g
}

fn custom_gamma(c: &CustomMetric, chart: u8, x: [f64; 2]) -> ([[f64; 2]; 2], [[[f64; 2]; 2]; 2]) {
    let h = CUSTOM_FD_STEP;
    let g = custom_metric(c, chart, x);
    let mut dg = [[[0.0; 2]; 2]; 2];
    for k in 0..2 {
        let mut xp = x;
        let mut xm = x;
        xp[k] += h;
        xm[k] -= h;
        let (gp, gm) = (custom_metric(c, chart, xp), custom_metric(c, chart, xm));
        for i in 0..2 {
            for j in 0..2 {
                dg[k][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * h);
            }
        }
    }
    (g, christoffel(&g, &dg))
}

fn custom_metric_data(c: &CustomMetric, chart: u8, x: [f64; 2]) -> MetricData {
    let (g, gamma) = custom_gamma(c, chart, x);
    // K = R_1212 / det g with R_1212 = g_1m (d_1 G^m_22 - d_2 G^m_12 + G^m_1n G^n_22 - G^m_2n G^n_12).
    let h = 1e-3;
    let gam = |dx: f64, dy: f64| custom_gamma(c, chart, [x[0] + dx, x[1] + dy]).1;
    let (g1p, g1m, g2p, g2m) = (gam(h, 0.0), gam(-h, 0.0), gam(0.0, h), gam(0.0, -h));
    let mut r = 0.0;
    for m in 0..2 {
        let d1 = (g1p[m][1][1] - g1m[m][1][1]) / (2.0 * h);
        let d2 = (g2p[m][0][1] - g2m[m][0][1]) / (2.0 * h);
        let mut quad = 0.0;
        for n in 0..2 {
            quad += gamma[m][0][n] * gamma[n][1][1] - gamma[m][1][n] * gamma[n][0][1];
        }
        r += g[0][m] * (d1 - d2 + quad);
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    MetricData { g, gamma, k: r / det }
}

fn in_extended_domain(tri: &Triangle, x: [f64; 2]) -> bool {
    let tol = 1e-12 * tri.side;
    let neg: Vec<usize> = (0..3).filter(|&e| tri.edge_distance(e, x) < -tol).collect();
    match neg.len() {
        0 => true,
        1 => tri.contains(tri.reflect_point(neg[0], x), tol),
        _ => false,
    }
}

/// Folds a cone-surface point into the closed reference triangle.
pub fn fold_into_triangle(tri: &Triangle, face: u8, x: [f64; 2]) -> (u8, [f64; 2]) {
    let mut f = face;
    let mut p = x;
    for _ in 0..64 {
        let (e, d) = (0..3)
            .map(|e| (e, tri.edge_distance(e, p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if d >= 0.0 {
            break;
        }
        p = tri.reflect_point(e, p);
        f = 1 - f;
    }
    (f, p)
}

/// Planar development of a chain of faces.
#[derive(Debug, Clone)]
pub struct Development {
    /// Face of each triangle (0 = A, 1 = B).
    pub faces: Vec<u8>,
    /// Isometry placing the reference triangle for each step.
    pub maps: Vec<Tile>,
    /// Triangle vertices in the plane.
    pub triangles: Vec<[[f64; 2]; 3]>,
    side: f64,
}

impl Development {
    /// Checks that the straight segment `a -> b` (plane coordinates) stays
    /// inside the development, visits the triangles in order, and avoids
    /// cone points by more than `EPS_CONE * side`.
    pub fn check_segment(&self, a: [f64; 2], b: [f64; 2]) -> Result<(), SurfaceError> {
        let eps = EPS_CONE * self.side;
        for tri in &self.triangles {
            for v in tri {
                if point_segment_distance(*v, a, b) <= eps {
                    return Err(SurfaceError::ChainHitsConePoint);
                }
            }
        }
        // Sample the segment and require every sample to lie in the union.
        let n = 256;
        let reference = Triangle { side: self.side };
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let inside = self.maps.iter().any(|m| {
                let q = m.inverse_linear([p[0] - m.t[0], p[1] - m.t[1]]);
                reference.contains(q, 1e-12 * self.side)
            });
            if !inside {
                return Err(SurfaceError::NonAdjacentFaces("segment leaves the developed strip".into()));
            }
        }
        Ok(())
    }
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Develops the chain that starts in `start_face` and crosses the reference
/// edges `edges` in order (edge labels are those of the face being left).
/// A chain that immediately re-crosses the edge it came through folds back
/// onto the previous face and is rejected.
pub fn flat_unfold(side: f64, start_face: u8, edges: &[usize]) -> Result<Development, SurfaceError> {
    let tri = Triangle { side };
    let mut maps = vec![Tile::identity()];
    let mut faces = vec![start_face];
    let mut prev: Option<usize> = None;
    for &e in edges {
        if e > 2 {
            return Err(SurfaceError::NonAdjacentFaces(format!("edge index {e} out of range")));
        }
        if prev == Some(e) {
            return Err(SurfaceError::NonAdjacentFaces("chain folds back across the same edge".into()));
        }
        let g = maps.last().unwrap().compose(&tri.reflection(e));
        maps.push(g);
        faces.push(1 - faces.last().unwrap());
        prev = Some(e);
    }
    let v = tri.vertices();
    let triangles = maps.iter().map(|m| [m.apply(v[0]), m.apply(v[1]), m.apply(v[2])]).collect();
    Ok(Development { faces, maps, triangles, side })
}

/// Edges crossed by the straight path from `p` in direction `d` (face
/// coordinates) over `length`, with the final face, point and direction.
pub fn trace_edges(
    side: f64,
    face: u8,
    p: [f64; 2],
    d: [f64; 2],
    length: f64,
) -> Result<(Vec<usize>, u8, [f64; 2], [f64; 2]), SurfaceError> {
    let tri = Triangle { side };
    let (mut f, mut x, mut dir) = (face, p, d);
    let mut left = length;
    let mut edges = vec![];
    let mut last: Option<usize> = None;
    loop {
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
        let (e, t) = best.expect("a ray leaves the triangle");
        if t >= left {
            x = [x[0] + left * dir[0], x[1] + left * dir[1]];
            return Ok((edges, f, x, dir));
        }
        x = [x[0] + t * dir[0], x[1] + t * dir[1]];
        if tri.nearest_vertex_distance(x) <= EPS_CONE * side {
            return Err(SurfaceError::ChainHitsConePoint);
        }
        left -= t;
        dir = tri.reflect_dir(e, dir);
        f = 1 - f;
        edges.push(e);
        last = Some(e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_polar_examples() {
        let s = Surface::round(1.0);
        let m = s.metric_eval_polar(PI / 2.0, 0.0).unwrap();
        assert!((m.g[0][0] - 1.0).abs() < 1e-15 && (m.g[1][1] - 1.0).abs() < 1e-15);
        assert!(m.gamma.iter().flatten().flatten().all(|v| v.abs() < 1e-15));
        assert_eq!(m.k, 1.0);
        let m = s.metric_eval_polar(PI / 4.0, 0.0).unwrap();
        assert!((m.g[1][1] - 0.5).abs() < 1e-15);
        assert!((m.gamma[0][1][1] + 0.5).abs() < 1e-15);
        assert!((m.gamma[1][0][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ellipsoid_equator_curvature() {
        let s = Surface::ellipsoid(1.2);
        let p = s.anchor("equator:0.3").unwrap();
        let k = s.metric_eval(&p).unwrap().k;
        assert!((k - 1.0 / 1.44).abs() < 1e-12);
    }

    #[test]
    fn azimuthal_christoffels_match_finite_differences() {
        for s in [Surface::round(1.3), Surface::ellipsoid(1.2), Surface::dumbbell()] {
            for (chart, x) in [(0u8, [0.3, -0.7]), (1, [-0.2, 0.4]), (0, [2e-5, 1e-5]), (1, [0.9, 0.8])] {
                let h = 1e-6;
                let m = s.metric_eval(&ChartPoint::new(chart, x[0], x[1])).unwrap();
                let mut dg = [[[0.0; 2]; 2]; 2];
                for k in 0..2 {
                    let (mut a, mut b) = (x, x);
                    a[k] += h;
                    b[k] -= h;
                    let (ga, gb) = (s.metric_tensor(chart, a), s.metric_tensor(chart, b));
                    for i in 0..2 {
                        for j in 0..2 {
                            dg[k][i][j] = (ga[i][j] - gb[i][j]) / (2.0 * h);
                        }
                    }
                }
                let fd = christoffel(&m.g, &dg);
                for k in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            assert!((fd[k][i][j] - m.gamma[k][i][j]).abs() < 1e-6, "{} {chart} {x:?}", s.name);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn transition_is_involutive_with_velocity() {
        let s = Surface::ellipsoid(0.7);
        let (c, x, v) = s.transition_with_velocity(0, [0.8, -1.1], [0.3, 0.2]);
        let (c2, x2, v2) = s.transition_with_velocity(c, x, v);
        assert_eq!(c2, 0);
        assert!((x2[0] - 0.8).abs() < 1e-14 && (x2[1] + 1.1).abs() < 1e-14);
        assert!((v2[0] - 0.3).abs() < 1e-14 && (v2[1] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn dumbbell_joins_unit_sphere_and_has_neck() {
        let s = Surface::dumbbell();
        let SurfaceKind::RotationallySymmetric(p) = &s.kind else { unreachable!() };
        let len = p.length();
        for t in [len - 0.5, len - 1.0, len - 2.0] {
            let e = p.eval(t);
            assert!((e.f - (len - t).sin()).abs() < 1e-8, "{t} {}", e.f - (len - t).sin());
            assert!((e.curvature - 1.0).abs() < 1e-4);
        }
        let e = p.eval(0.1);
        assert!((e.f - 0.3 * (0.1f64 / 0.3).sin()).abs() < 1e-8);
        assert!((e.curvature - 1.0 / 0.09).abs() < 1e-3);
        let tn = s.neck().unwrap();
        assert!(p.eval(tn).df.abs() < 1e-9);
        assert!((p.eval(tn).curvature + 4.0).abs() < 1e-4);
    }

    #[test]
    fn tiles_cover_neighbourhood() {
        let tri = Triangle { side: 1.0 };
        let tiles = enumerate_tiles(&tri, 2.0);
        // Area of the disk of radius 2 over the tile area, roughly.
        assert!(tiles.len() > 25);
        assert_eq!(tiles[0], Tile::identity());
        for t in &tiles {
            let det = t.m[0][0] * t.m[1][1] - t.m[0][1] * t.m[1][0];
            assert!((det - if t.odd { -1.0 } else { 1.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn cc_chart_transition_reflects_across_nearest_edge() {
        let s = Surface::calabi_croke(1.0);
        let p = ChartPoint::new(0, 0.5, 0.01);
        let q = s.chart_transition(&p, 1).unwrap();
        assert_eq!(q.chart, 1);
        assert!((q.u - 0.5).abs() < 1e-15 && (q.v + 0.01).abs() < 1e-15);
        let back = s.chart_transition(&q, 0).unwrap();
        assert!((back.u - p.u).abs() < 1e-15 && (back.v - p.v).abs() < 1e-15);
        assert!(matches!(s.metric_eval(&p), Err(SurfaceError::NotSmoothSurface)));
    }

    #[test]
    fn antipode_has_no_fixed_points_on_grid() {
        for s in [Surface::round(1.0), Surface::calabi_croke(1.0)] {
            for p in s.grid_points(200) {
                assert!(!s.same_point(&p, &s.antipode(&p), 1e-6));
            }
        }
    }
}
