//! Verifier for the four-vector convex-geometry lemma and the root-set
//! machinery behind its proof.
//!
//! A [`VectorConfig`] holds two quadruples of unit vectors sharing the same
//! convex weights. The lemma asserts that some triple of indices gives two
//! triangles that both contain the origin. [`verify_roots`] and
//! [`angle_infeasibility`] replay the algebra used to rule out the
//! contradiction case.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// Orientation tolerance for closed-triangle membership.
pub const TRIANGLE_TOL: f64 = 1e-12;
/// Allowed magnitude of the x^4 coefficient after expansion.
pub const QUARTIC_TOL: f64 = 1e-12;
/// Radicands of `f` within this band below zero are clamped to zero.
pub const RADICAND_CLAMP: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LemmaError {
    #[error("invalid vector configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid weights: {0}")]
    InvalidLambda(String),
    #[error("no triple contains the origin for both vector sets: {0}")]
    LemmaViolation(String),
    #[error("quartic coefficient {0:e} did not cancel")]
    QuarticDidNotCancel(f64),
}

pub type Vec2 = [f64; 2];

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Two quadruples of unit vectors and shared weights with
/// `sum(lambda_i v_i) = 0 = sum(lambda_i w_i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorConfig {
    /// Clockwise cyclic order.
    pub v: [Vec2; 4],
    /// Counterclockwise cyclic order.
    pub w: [Vec2; 4],
    pub lambda: [f64; 4],
}

impl VectorConfig {
    pub fn new(v: [Vec2; 4], w: [Vec2; 4], lambda: [f64; 4]) -> Result<Self, LemmaError> {
        check_lambda(&lambda)?;
        for (name, set) in [("v", &v), ("w", &w)] {
            for (i, p) in set.iter().enumerate() {
                let n = (p[0] * p[0] + p[1] * p[1]).sqrt();
                if (n - 1.0).abs() > 1e-10 {
                    return Err(LemmaError::InvalidConfig(format!("{name}{} has norm {n}", i + 1)));
                }
            }
            let sx: f64 = (0..4).map(|i| lambda[i] * set[i][0]).sum();
            let sy: f64 = (0..4).map(|i| lambda[i] * set[i][1]).sum();
            if sx.hypot(sy) > 1e-10 {
                return Err(LemmaError::InvalidConfig(format!(
                    "weighted sum of {name} is not zero ({:e})",
                    sx.hypot(sy)
                )));
            }
        }
        let cw = (0..4).all(|i| cross(v[i], v[(i + 1) % 4]) < 0.0);
        if !cw {
            return Err(LemmaError::InvalidConfig("v is not in clockwise cyclic order".into()));
        }
        let ccw = (0..4).all(|i| cross(w[i], w[(i + 1) % 4]) > 0.0);
        if !ccw {
            return Err(LemmaError::InvalidConfig("w is not in counterclockwise cyclic order".into()));
        }
        Ok(Self { v, w, lambda })
    }

    /// Central angles between consecutive vectors, `theta_i` for v (measured
    /// clockwise) and `theta'_i` for w (counterclockwise).
    pub fn central_angles(&self) -> ([f64; 4], [f64; 4]) {
        let ang = |a: Vec2, b: Vec2, sign: f64| {
            let t = (sign * cross(a, b)).atan2(a[0] * b[0] + a[1] * b[1]);
            if t < 0.0 {
                t + 2.0 * PI
            } else {
                t
            }
        };
        let mut th = [0.0; 4];
        let mut thp = [0.0; 4];
        for i in 0..4 {
            th[i] = ang(self.v[i], self.v[(i + 1) % 4], -1.0);
            thp[i] = ang(self.w[i], self.w[(i + 1) % 4], 1.0);
        }
        (th, thp)
    }
}

fn check_lambda(l: &[f64; 4]) -> Result<(), LemmaError> {
    if l.iter().any(|x| !(x.is_finite() && *x > 0.0 && *x < 1.0)) {
        return Err(LemmaError::InvalidLambda(format!("entries must lie in (0,1): {l:?}")));
    }
    let s: f64 = l.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(LemmaError::InvalidLambda(format!("entries sum to {s}, not 1")));
    }
    Ok(())
}

/// Closed-triangle membership of the origin, boundary included.
pub fn origin_in_triangle(a: Vec2, b: Vec2, c: Vec2) -> bool {
    // Orientation of the origin against each directed edge.
    let o1 = cross(a, b);
    let o2 = cross(b, c);
    let o3 = cross(c, a);
    let has_neg = o1 < -TRIANGLE_TOL || o2 < -TRIANGLE_TOL || o3 < -TRIANGLE_TOL;
    let has_pos = o1 > TRIANGLE_TOL || o2 > TRIANGLE_TOL || o3 > TRIANGLE_TOL;
    !(has_neg && has_pos)
}

pub const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];

/// First triple (0-based) whose v- and w-triangles both contain the origin.
pub fn check_lemma(cfg: &VectorConfig) -> Result<[usize; 3], LemmaError> {
    for t in TRIPLES {
        let tv = origin_in_triangle(cfg.v[t[0]], cfg.v[t[1]], cfg.v[t[2]]);
        let tw = origin_in_triangle(cfg.w[t[0]], cfg.w[t[1]], cfg.w[t[2]]);
        if tv && tw {
            return Ok(t);
        }
    }
    Err(LemmaError::LemmaViolation(format!("{cfg:?}")))
}

fn unit(angle: f64) -> Vec2 {
    [angle.cos(), angle.sin()]
}

/// Barycentric coordinates of the origin in triangle (a, b, c).
fn origin_barycentric(a: Vec2, b: Vec2, c: Vec2) -> [f64; 3] {
    let area = cross([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]]);
    [cross(b, c) / area, cross(c, a) / area, cross(a, b) / area]
}

/// Deterministic random configuration for the fuzz harness.
///
/// The w-vectors are `Q R v_i` with `R` the reflection across the first axis
/// and `Q` a random rotation, so only this isometry family is explored.
pub fn sample_config(seed: u64) -> VectorConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let mut angles: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        // Descending angles give clockwise order.
        angles.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let gaps_ok = (0..4).all(|i| {
            let g = (angles[i] - angles[(i + 1) % 4]).rem_euclid(2.0 * PI);
            g > 1e-3 && g < PI - 1e-3
        });
        if !gaps_ok {
            continue;
        }
        let v: [Vec2; 4] = [unit(angles[0]), unit(angles[1]), unit(angles[2]), unit(angles[3])];
        // One triangle from each diagonal split contains the origin; mixing
        // their barycentric weights gives strictly positive lambda.
        let split = |tri_a: [usize; 3], tri_b: [usize; 3]| -> Option<[f64; 4]> {
            for t in [tri_a, tri_b] {
                let bc = origin_barycentric(v[t[0]], v[t[1]], v[t[2]]);
                if bc.iter().all(|x| *x > 1e-9) {
                    let mut l = [0.0; 4];
                    for k in 0..3 {
                        l[t[k]] = bc[k];
                    }
                    return Some(l);
                }
            }
            None
        };
        let (Some(alpha), Some(beta)) = (split([0, 1, 2], [0, 2, 3]), split([0, 1, 3], [1, 2, 3])) else {
            continue;
        };
        let mu: f64 = rng.random_range(0.05..0.95);
        let mut lambda = [0.0; 4];
        for i in 0..4 {
            lambda[i] = mu * alpha[i] + (1.0 - mu) * beta[i];
        }
        let s: f64 = lambda.iter().sum();
        lambda.iter_mut().for_each(|x| *x /= s);
        if lambda.iter().any(|x| *x <= 1e-9) {
            continue;
        }
        let rot: f64 = rng.random_range(0.0..2.0 * PI);
        let (sr, cr) = rot.sin_cos();
        let w = v.map(|p| {
            let r = [p[0], -p[1]];
            [cr * r[0] - sr * r[1], sr * r[0] + cr * r[1]]
        });
        if let Ok(cfg) = VectorConfig::new(v, w, lambda) {
            return cfg;
        }
    }
    unreachable!("sampler exhausted its retries")
}

#[derive(Debug, Clone, Serialize)]
pub struct FuzzReport {
    pub trials: usize,
    pub seed: u64,
    pub violations: usize,
    pub triple_histogram: [usize; 4],
    pub first_violation: Option<VectorConfig>,
}

/// Runs [`check_lemma`] on `trials` configurations with seeds `seed + i`.
pub fn fuzz(trials: usize, seed: u64) -> FuzzReport {
    let results: Vec<(VectorConfig, Result<[usize; 3], LemmaError>)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let cfg = sample_config(seed.wrapping_add(i as u64));
            let r = check_lemma(&cfg);
            (cfg, r)
        })
        .collect();
    let mut hist = [0usize; 4];
    let mut violations = 0;
    let mut first = None;
    for (cfg, r) in results {
        match r {
            Ok(t) => hist[TRIPLES.iter().position(|x| *x == t).unwrap()] += 1,
            Err(_) => {
                violations += 1;
                if first.is_none() {
                    first = Some(cfg);
                }
            }
        }
    }
    FuzzReport { trials, seed, violations, triple_histogram: hist, first_violation: first }
}

/// Dense polynomial with coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq)]
struct Poly(Vec<f64>);

impl Poly {
    fn mul(&self, o: &Poly) -> Poly {
        let mut c = vec![0.0; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly(c)
    }
    fn sub(&self, o: &Poly) -> Poly {
        let n = self.0.len().max(o.0.len());
        Poly((0..n)
            .map(|i| self.0.get(i).copied().unwrap_or(0.0) - o.0.get(i).copied().unwrap_or(0.0))
            .collect())
    }
    fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
    fn scale_at(&self, x: f64) -> f64 {
        self.0.iter().enumerate().map(|(k, c)| c.abs() * x.abs().powi(k as i32)).sum()
    }
}

/// The squared equation, `(d+ax)^2 (4b^2c^2 - (a^2+d^2-b^2-c^2+2adx)^2)
/// - a^2 (1-x^2)(a^2+d^2+b^2-c^2+2adx)^2`, expanded in powers of x.
pub fn squared_polynomial(l: [f64; 4]) -> Vec<f64> {
    let [a, b, c, d] = l;
    let lin = |c0: f64, c1: f64| Poly(vec![c0, c1]);
    let dax = lin(d, a);
    let q = lin(a * a + d * d - b * b - c * c, 2.0 * a * d);
    let p = lin(a * a + d * d + b * b - c * c, 2.0 * a * d);
    let k = Poly(vec![4.0 * b * b * c * c]);
    let left = dax.mul(&dax).mul(&k.sub(&q.mul(&q)));
    let one_minus = Poly(vec![a * a, 0.0, -a * a]);
    let right = one_minus.mul(&p).mul(&p);
    left.sub(&right).0
}

#[derive(Debug, Clone, Serialize)]
pub struct RootCheck {
    pub root: f64,
    /// |P(root)| divided by the sum of |coefficient| |root|^k.
    pub residual: f64,
    pub abs_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RootReport {
    pub lambda: [f64; 4],
    /// `"cubic"` when b != d, `"quadratic"` when b == d.
    pub branch: String,
    pub coefficients: Vec<f64>,
    pub quartic_coefficient: f64,
    pub roots: Vec<RootCheck>,
    pub max_residual: f64,
    pub x1: f64,
    pub x1_le_minus_one: bool,
    /// `a^2 + b^2 == c^2 + d^2` within 1e-12.
    pub pythagorean: bool,
    /// Cubic branch only: the second and third roots coincide.
    pub x2_eq_x3: Option<bool>,
    /// Quadratic branch with a == c: the polynomial vanishes identically.
    pub identically_zero: bool,
}

/// Threshold under which b and d are treated as equal.
pub const BD_EQUAL_TOL: f64 = 1e-12;

pub fn verify_roots(l: [f64; 4]) -> Result<RootReport, LemmaError> {
    check_lambda(&l)?;
    let [a, b, c, d] = l;
    let coeffs = squared_polynomial(l);
    let quartic = coeffs[4];
    if quartic.abs() >= QUARTIC_TOL {
        return Err(LemmaError::QuarticDidNotCancel(quartic));
    }
    let poly = Poly(coeffs[..4].to_vec());
    let cubic = (b - d).abs() > BD_EQUAL_TOL;
    let roots: Vec<f64> = if cubic {
        vec![
            -(a * a + d * d) / (2.0 * a * d),
            -(a * a + d * d + b * b - c * c + 2.0 * b * d) / (2.0 * a * (b + d)),
            (a * a + d * d + b * b - c * c - 2.0 * b * d) / (2.0 * a * (b - d)),
        ]
    } else {
        vec![-(a * a + b * b) / (2.0 * a * b), -(a * a + 4.0 * b * b - c * c) / (4.0 * a * b)]
    };
    let identically_zero = !cubic && coeffs.iter().all(|x| x.abs() <= 1e-15);
    let checks: Vec<RootCheck> = roots
        .iter()
        .map(|&r| {
            let v = poly.eval(r);
            let s = poly.scale_at(r);
            // A vanishing polynomial leaves only rounding noise in both terms.
            let residual = if identically_zero || s <= 0.0 { 0.0 } else { v.abs() / s };
            RootCheck { root: r, residual, abs_value: v.abs() }
        })
        .collect();
    let max_residual = checks.iter().map(|c| c.residual).fold(0.0, f64::max);
    let pyth = (a * a + b * b - c * c - d * d).abs() <= 1e-12;
    let x2_eq_x3 = cubic.then(|| (roots[1] - roots[2]).abs() <= 1e-9 * roots[1].abs().max(1.0));
    Ok(RootReport {
        lambda: l,
        branch: if cubic { "cubic".into() } else { "quadratic".into() },
        coefficients: coeffs,
        quartic_coefficient: quartic,
        x1: roots[0],
        x1_le_minus_one: roots[0] <= -1.0,
        roots: checks,
        max_residual,
        pythagorean: pyth,
        x2_eq_x3,
        identically_zero,
    })
}

/// Margins of the four strict inequalities; all positive means satisfied.
#[derive(Debug, Clone, Copy)]
pub struct AngleMargins {
    pub in_domain: bool,
    pub m: [f64; 4],
}

/// `f(theta)` from the proof, `None` outside its domain.
pub fn f_theta(l: [f64; 4], theta: f64) -> Option<f64> {
    let [a, b, c, d] = l;
    let q = a * a + d * d - b * b - c * c + 2.0 * a * d * theta.cos();
    let rad = 4.0 * b * b * c * c - q * q;
    if rad >= 0.0 {
        Some(rad.sqrt())
    } else if rad >= -RADICAND_CLAMP {
        Some(0.0)
    } else {
        None
    }
}

/// Margins of inequalities 1 and 2 at `theta` (first two entries) and of 3
/// and 4 at the same angle used as `theta'` (last two entries).
pub fn angle_margins(l: [f64; 4], theta: f64) -> AngleMargins {
    let [a, b, c, d] = l;
    let Some(f) = f_theta(l, theta) else {
        return AngleMargins { in_domain: false, m: [f64::NEG_INFINITY; 4] };
    };
    let (st, ct) = theta.sin_cos();
    let p = a * a + d * d + b * b - c * c + 2.0 * a * d * ct;
    let r = a * a + d * d - b * b + c * c + 2.0 * a * d * ct;
    let m1 = a * st * p - (d + a * ct) * f;
    let m2 = (a + d * ct) * f - d * st * r;
    let m3 = d * st * r - (a + d * ct) * f;
    let m4 = (d + a * ct) * f - a * st * p;
    AngleMargins { in_domain: true, m: [m1, m2, m3, m4] }
}

#[derive(Debug, Clone, Serialize)]
pub struct InfeasibilityReport {
    pub lambda: [f64; 4],
    pub grid: usize,
    pub infeasible: bool,
    /// Largest `min` of the four margins over the grid (non-positive when
    /// infeasible).
    pub max_joint_margin: f64,
    pub best_theta: f64,
    pub best_theta_prime: f64,
    /// Some theta satisfies inequalities 1 and 2.
    pub theta_pair_solvable: bool,
    /// Some theta' satisfies inequalities 3 and 4.
    pub theta_prime_pair_solvable: bool,
}

/// Grid sweep of the four inequalities over `(theta, theta') in (0, pi)^2`.
pub fn angle_infeasibility(l: [f64; 4], grid: usize) -> Result<InfeasibilityReport, LemmaError> {
    check_lambda(&l)?;
    if grid < 2 {
        return Err(LemmaError::InvalidLambda("grid must be at least 2".into()));
    }
    let thetas: Vec<f64> = (0..grid).map(|i| (i as f64 + 0.5) * PI / grid as f64).collect();
    let margins: Vec<AngleMargins> = thetas.iter().map(|&t| angle_margins(l, t)).collect();
    let first: Vec<f64> = margins
        .iter()
        .map(|m| if m.in_domain { m.m[0].min(m.m[1]) } else { f64::NEG_INFINITY })
        .collect();
    let second: Vec<f64> = margins
        .iter()
        .map(|m| if m.in_domain { m.m[2].min(m.m[3]) } else { f64::NEG_INFINITY })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (i, fi) in first.iter().enumerate() {
        for (j, sj) in second.iter().enumerate() {
            let joint = fi.min(*sj);
            if joint > best.0 {
                best = (joint, i, j);
            }
        }
    }
    Ok(InfeasibilityReport {
        lambda: l,
        grid,
        infeasible: !(best.0 > 0.0),
        max_joint_margin: best.0,
        best_theta: thetas[best.1],
        best_theta_prime: thetas[best.2],
        theta_pair_solvable: first.iter().any(|x| *x > 0.0),
        theta_prime_pair_solvable: second.iter().any(|x| *x > 0.0),
    })
}

/// Uniform random point of the open probability simplex.
pub fn random_lambda<R: Rng>(rng: &mut R) -> [f64; 4] {
    loop {
        let e: [f64; 4] = std::array::from_fn(|_| -rng.random_range(f64::MIN_POSITIVE..1.0).ln());
        let s: f64 = e.iter().sum();
        let l = e.map(|x| x / s);
        if l.iter().all(|x| *x > 1e-6 && *x < 1.0) {
            let t: f64 = l.iter().sum();
            if (t - 1.0).abs() <= 1e-12 {
                return l;
            }
        }
    }
}
