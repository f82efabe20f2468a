//! Clamped cubic spline on a nonuniform grid.

#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    /// Spline through `(x_i, y_i)` with prescribed end slopes.
    pub fn clamped(x: &[f64], y: &[f64], d0: f64, d1: f64) -> CubicSpline {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        // Tridiagonal system for the knot second derivatives.
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut r = vec![0.0; n];
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        b[0] = h[0] / 3.0;
        c[0] = h[0] / 6.0;
        r[0] = (y[1] - y[0]) / h[0] - d0;
        for i in 1..n - 1 {
            a[i] = h[i - 1] / 6.0;
            b[i] = (h[i - 1] + h[i]) / 3.0;
            c[i] = h[i] / 6.0;
            r[i] = (y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1];
        }
        a[n - 1] = h[n - 2] / 6.0;
        b[n - 1] = h[n - 2] / 3.0;
        r[n - 1] = d1 - (y[n - 1] - y[n - 2]) / h[n - 2];
        // Thomas algorithm.
        for i in 1..n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            r[i] -= w * r[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = r[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (r[i] - c[i] * m[i + 1]) / b[i];
        }
        CubicSpline { x: x.to_vec(), y: y.to_vec(), m }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Value and first two derivatives at `t` (extrapolates the end cubics).
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubic() {
        let f = |t: f64| 1.0 + 0.5 * t - t * t + 0.25 * t * t * t;
        let df = |t: f64| 0.5 - 2.0 * t + 0.75 * t * t;
        let x = [0.0, 0.3, 0.7, 1.0, 1.8, 2.0];
        let y: Vec<f64> = x.iter().map(|t| f(*t)).collect();
        let s = CubicSpline::clamped(&x, &y, df(0.0), df(2.0));
        for t in [0.0, 0.1, 0.55, 1.3, 2.0] {
            let (v, d, _) = s.eval(t);
            assert!((v - f(t)).abs() < 1e-12 && (d - df(t)).abs() < 1e-11);
        }
    }
}
