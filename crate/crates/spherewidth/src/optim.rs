//! Thin wrappers around derivative-free minimizers and the small
//! simplex-constrained quadratic program shared by several modules.

use argmin::core::{CostFunction, Error, Executor, State};
use argmin::solver::neldermead::NelderMead;

struct Closure<F>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Closure<F> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Self::Param) -> Result<f64, Error> {
        Ok((self.0)(p))
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: u64,
}

/// Nelder-Mead from an axis-aligned simplex of size `step` around `x0`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, max_iters: u64, sd_tol: f64) -> NmResult {
    let n = x0.len();
    let mut simplex = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let f0 = f(x0);
    let solver = NelderMead::new(simplex).with_sd_tolerance(sd_tol).expect("positive tolerance");
    let res = Executor::new(Closure(f), solver).configure(|s| s.max_iters(max_iters)).run();
    match res {
        Ok(r) => {
            let st = r.state();
            let x = st.get_best_param().cloned().unwrap_or_else(|| x0.to_vec());
            let value = st.get_best_cost();
            if value <= f0 {
                NmResult { x, value, iterations: st.get_iter() }
            } else {
                NmResult { x: x0.to_vec(), value: f0, iterations: st.get_iter() }
            }
        }
        Err(_) => NmResult { x: x0.to_vec(), value: f0, iterations: 0 },
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

#[derive(Debug, Clone)]
pub struct SimplexQp {
    pub weights: Vec<f64>,
    /// Nearest point `sum(weights_i * points_i)`.
    pub point: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Minimizes `|sum(l_i p_i)|^2 + sum(l_i c_i)` over the probability simplex by
/// projected gradient with exact line search, then polishes on the detected
/// support by solving the equality-constrained KKT system.
pub fn simplex_qp(points: &[Vec<f64>], linear: Option<&[f64]>) -> SimplexQp {
    let m = points.len();
    assert!(m > 0, "empty point set");
    let dim = points[0].len();
    let zero = vec![0.0; m];
    let c = linear.unwrap_or(&zero);
    let combo = |l: &[f64]| -> Vec<f64> {
        let mut s = vec![0.0; dim];
        for (li, p) in l.iter().zip(points) {
            for k in 0..dim {
                s[k] += li * p[k];
            }
        }
        s
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let obj = |l: &[f64]| {
        let s = combo(l);
        dot(&s, &s) + dot(l, c)
    };
    let gram: Vec<Vec<f64>> = points.iter().map(|p| points.iter().map(|q| dot(p, q)).collect()).collect();
    let lip = 2.0 * gram.iter().enumerate().map(|(i, r)| r[i]).sum::<f64>().max(1e-300);

    let mut l = vec![1.0 / m as f64; m];
    let mut it = 0;
    for k in 0..20_000 {
        it = k;
        let s = combo(&l);
        let g: Vec<f64> = points.iter().zip(c).map(|(p, ci)| 2.0 * dot(p, &s) + ci).collect();
        let trial: Vec<f64> = l.iter().zip(&g).map(|(x, gi)| x - gi / lip).collect();
        let proj = project_simplex(&trial);
        let d: Vec<f64> = proj.iter().zip(&l).map(|(a, b)| a - b).collect();
        let dn = dot(&d, &d).sqrt();
        if dn < 1e-17 {
            break;
        }
        let vd = combo(&d);
        let denom = 2.0 * dot(&vd, &vd);
        let slope = 2.0 * dot(&s, &vd) + dot(&d, c);
        let t = if denom > 0.0 { (-slope / denom).clamp(0.0, 1.0) } else if slope < 0.0 { 1.0 } else { 0.0 };
        if t == 0.0 {
            break;
        }
        for i in 0..m {
            l[i] += t * d[i];
        }
        if k % 50 == 49 && obj(&l) < 1e-30 {
            break;
        }
    }
    if let Some(p) = polish_support(points, &gram, c, &l) {
        if obj(&p) <= obj(&l) {
            l = p;
        }
    }
    let point = combo(&l);
    SimplexQp { objective: obj(&l), point, weights: l, iterations: it }
}

/// Solves the KKT system restricted to the support of `l`.
fn polish_support(points: &[Vec<f64>], gram: &[Vec<f64>], c: &[f64], l: &[f64]) -> Option<Vec<f64>> {
    let lmax = l.iter().cloned().fold(0.0, f64::max);
    let support: Vec<usize> = (0..l.len()).filter(|&i| l[i] > 1e-9 * lmax).collect();
    let k = support.len();
    if k == 0 || k > 12 {
        return None;
    }
    let _ = points;
    let n = k + 1;
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    for (r, &i) in support.iter().enumerate() {
        for (s, &j) in support.iter().enumerate() {
            a[(r, s)] = 2.0 * gram[i][j];
        }
        a[(r, k)] = 1.0;
        a[(k, r)] = 1.0;
        b[r] = -c[i];
    }
    b[k] = 1.0;
    // Least-squares solve handles the rank-deficient (affinely dependent) case.
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-13).ok()?;
    let mut out = vec![0.0; l.len()];
    for (r, &i) in support.iter().enumerate() {
        if !(x[r] > 0.0) {
            return None;
        }
        out[i] = x[r];
    }
    let s: f64 = out.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return None;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_simplex(&[0.5, 2.0, -1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|x| *x >= 0.0));
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn qp_finds_origin_inside_triangle() {
        let pts = vec![vec![1.0, 0.0], vec![-0.5, 0.8], vec![-0.5, -0.8]];
        let r = simplex_qp(&pts, None);
        assert!(r.objective < 1e-28);
        assert!(r.weights.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn qp_distance_to_segment() {
        let pts = vec![vec![1.0, 1.0], vec![-1.0, 1.0]];
        let r = simplex_qp(&pts, None);
        assert!((r.objective - 1.0).abs() < 1e-14);
        assert!((r.weights[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let r = nelder_mead(|x| (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2), &[0.0, 0.0], 0.5, 500, 1e-20);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] + 2.0).abs() < 1e-6);
    }
}
