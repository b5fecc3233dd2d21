//! Natural cubic smoothing spline (Reinsch / Green–Silverman form) with
//! the smoothing parameter chosen by generalized cross-validation. Used to
//! turn the discrete WCSS-vs-K curve into a twice-differentiable function
//! for curvature-based knee detection.

use nalgebra::DMatrix;

/// Log₁₀ range and resolution of the GCV search grid for λ.
const LAMBDA_LOG_MIN: f64 = -8.0;
const LAMBDA_LOG_MAX: f64 = 2.0;
const LAMBDA_GRID: usize = 101;

#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    x: Vec<f64>,
    /// Fitted values at the knots.
    g: Vec<f64>,
    /// Second derivatives at the knots (natural ends: γ₀ = γₙ₋₁ = 0).
    gamma: Vec<f64>,
}

impl SmoothingSpline {
    /// Fits the spline minimizing Σ(yᵢ − g(xᵢ))² + λ∫g″². Knots must be
    /// strictly ascending, at least 3 of them.
    pub fn fit(x: &[f64], y: &[f64], lambda: f64) -> SmoothingSpline {
        let (g, gamma, _) = solve(x, y, lambda);
        SmoothingSpline { x: x.to_vec(), g, gamma }
    }

    /// Fits with λ minimizing GCV(λ) = n·RSS / tr(I − A)² over a log grid;
    /// ties prefer the smaller λ. Returns the spline and the chosen λ.
    pub fn fit_gcv(x: &[f64], y: &[f64]) -> (SmoothingSpline, f64) {
        let n = x.len() as f64;
        let mut best: Option<(f64, f64)> = None; // (gcv, lambda)
        for i in 0..LAMBDA_GRID {
            let exp = LAMBDA_LOG_MIN + (LAMBDA_LOG_MAX - LAMBDA_LOG_MIN) * i as f64 / (LAMBDA_GRID - 1) as f64;
            let lambda = 10f64.powf(exp);
            let (g, _, trace_a) = solve(x, y, lambda);
            let rss: f64 = y.iter().zip(&g).map(|(yi, gi)| (yi - gi) * (yi - gi)).sum();
            let denom = (n - trace_a) * (n - trace_a);
            let gcv = if denom < 1e-12 { f64::INFINITY } else { n * rss / denom };
            if best.is_none_or(|(b, _)| gcv < b) {
                best = Some((gcv, lambda));
            }
        }
        let (_, lambda) = best.expect("non-empty grid");
        (SmoothingSpline::fit(x, y, lambda), lambda)
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        if t <= self.x[0] {
            return 0;
        }
        if t >= self.x[n - 1] {
            return n - 2;
        }
        match self.x.binary_search_by(|v| v.partial_cmp(&t).expect("finite knots")) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        }
    }

    /// Piecewise-cubic coefficients on segment i with offset t − xᵢ:
    /// g(t) = a + b·t + c·t² + d·t³.
    fn coefficients(&self, i: usize) -> (f64, f64, f64, f64) {
        let h = self.x[i + 1] - self.x[i];
        let a = self.g[i];
        let c = self.gamma[i] / 2.0;
        let d = (self.gamma[i + 1] - self.gamma[i]) / (6.0 * h);
        let b = (self.g[i + 1] - self.g[i]) / h - h * (2.0 * self.gamma[i] + self.gamma[i + 1]) / 6.0;
        (a, b, c, d)
    }

    pub fn value(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (a, b, c, d) = self.coefficients(i);
        let dt = t - self.x[i];
        a + dt * (b + dt * (c + dt * d))
    }

    pub fn d1(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (_, b, c, d) = self.coefficients(i);
        let dt = t - self.x[i];
        b + dt * (2.0 * c + dt * 3.0 * d)
    }

    pub fn d2(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (_, _, c, d) = self.coefficients(i);
        let dt = t - self.x[i];
        2.0 * c + 6.0 * d * dt
    }
}

/// Solves the penalized system: g = (I + λ·Q·R⁻¹·Qᵀ)⁻¹ y and
/// γ = R⁻¹·Qᵀ·g. Returns (g, γ padded with natural zeros, tr A) where
/// A = (I + λK)⁻¹ is the influence matrix.
fn solve(x: &[f64], y: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let n = x.len();
    assert!(n >= 3, "smoothing spline needs at least 3 points");
    assert!(x.windows(2).all(|w| w[1] > w[0]), "knots must be strictly ascending");
    let m = n - 2;
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

    let mut q = DMatrix::zeros(n, m);
    let mut r = DMatrix::zeros(m, m);
    for j in 0..m {
        q[(j, j)] = 1.0 / h[j];
        q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
        q[(j + 2, j)] = 1.0 / h[j + 1];
        r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
        if j + 1 < m {
            r[(j, j + 1)] = h[j + 1] / 6.0;
            r[(j + 1, j)] = h[j + 1] / 6.0;
        }
    }

    // X = R⁻¹ Qᵀ, K = Q X.
    let r_inv_qt = r.clone().lu().solve(&q.transpose()).expect("R is positive definite");
    let k = &q * &r_inv_qt;
    let system = DMatrix::identity(n, n) + k * lambda;
    let a = system.lu().try_inverse().expect("I + λK is positive definite");
    let trace_a = a.trace();
    let yv = DMatrix::from_column_slice(n, 1, y);
    let g = &a * &yv;
    let gamma_interior = &r_inv_qt * &g;

    let g_vec: Vec<f64> = g.column(0).iter().copied().collect();
    let mut gamma = vec![0.0; n];
    for j in 0..m {
        gamma[j + 1] = gamma_interior[(j, 0)];
    }
    (g_vec, gamma, trace_a)
}
