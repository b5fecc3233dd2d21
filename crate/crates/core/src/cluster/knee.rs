//! Knee/elbow detection: the K at maximum curvature
//! κ_f(x) = f″(x) / (1 + f′(x)²)^1.5 of the normalized WCSS-vs-K curve,
//! evaluated on a dense grid through a GCV-smoothed cubic spline.

use thiserror::Error;

use super::spline::SmoothingSpline;

/// Grid density for the curvature scan.
const GRID_POINTS: usize = 2001;
/// Below this |κ| the curve is considered knee-less (flat or linear).
const FLAT_CURVATURE: f64 = 1e-8;
/// Two-point fallback: prefer the larger K only when its WCSS is
/// essentially a full drop from the smaller K's.
const TWO_POINT_DROP: f64 = 0.05;
/// Normalized-WCSS threshold under which a point sits on the curve's
/// floor (used to detect a trailing plateau of exact zeros).
const PLATEAU_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KneeError {
    #[error("knee detection needs at least 2 curve points, got {0}")]
    TooFewPoints(usize),
    #[error("ks must be strictly ascending")]
    UnsortedKs,
    #[error("wcss values must be finite and non-negative")]
    InvalidWcss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KneeResult {
    pub k: usize,
    /// Set when the curve carries no usable curvature signal (flat or
    /// linear input, or too few points to assess curvature).
    pub no_knee: bool,
    /// Sign of κ at the selected point (+1 convex, −1 concave, 0 flat),
    /// recorded for audit; selection itself uses |κ|.
    pub curvature_sign: i8,
    pub max_abs_curvature: f64,
}

/// Selects the knee of a WCSS curve. Normalizes both axes to [0, 1].
/// A curve ending in a floor plateau (≥ 2 trailing points at the
/// minimum) knees at the plateau's first point. Otherwise (≥ 4 points)
/// smooths with a GCV cubic spline and returns the K nearest to the
/// grid argmax of |κ| over the interior (first and last curve points
/// excluded); ties break toward smaller K. With 3 points it falls back
/// to the discrete second difference; with 2 points to a drop-size
/// heuristic flagged as no-knee.
pub fn knee_point(ks: &[usize], wcss: &[f64]) -> Result<KneeResult, KneeError> {
    let n = ks.len();
    if n < 2 || wcss.len() != n {
        return Err(KneeError::TooFewPoints(n.min(wcss.len())));
    }
    if !ks.windows(2).all(|w| w[1] > w[0]) {
        return Err(KneeError::UnsortedKs);
    }
    if wcss.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(KneeError::InvalidWcss);
    }

    let k_lo = ks[0] as f64;
    let k_span = (ks[n - 1] - ks[0]) as f64;
    let xs: Vec<f64> = ks.iter().map(|&k| (k as f64 - k_lo) / k_span).collect();
    let (w_min, w_max) = wcss
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
    if w_max - w_min <= 0.0 {
        // Perfectly flat curve: no structure at all. With only two
        // candidates parsimony wins; otherwise the smallest interior K.
        let k = if n == 2 { ks[0] } else { ks[1] };
        return Ok(KneeResult { k, no_knee: true, curvature_sign: 0, max_abs_curvature: 0.0 });
    }
    let ys: Vec<f64> = wcss.iter().map(|&w| (w - w_min) / (w_max - w_min)).collect();

    // Trailing floor plateau: two or more final Ks share the curve's
    // minimum, i.e. the partition stopped improving — with exact snap
    // zeros this means K clusters already explain everything. The knee
    // is the first K on the floor; it is also the discrete-curvature
    // argmax of the full curve. The spline path is unusable here: on an
    // exactly representable curve GCV degenerates to an interpolating
    // fit whose inter-knot ringing swamps the corner curvature.
    let plateau = ys.iter().rev().take_while(|&&y| y <= PLATEAU_TOL).count();
    if plateau >= 2 {
        let corner = n - plateau;
        let h0 = xs[corner] - xs[corner - 1];
        let h1 = xs[corner + 1] - xs[corner];
        let d1 = (ys[corner + 1] - ys[corner - 1]) / (h0 + h1);
        let d2 = 2.0 * ((ys[corner + 1] - ys[corner]) / h1 - (ys[corner] - ys[corner - 1]) / h0)
            / (h0 + h1);
        let kappa = d2.abs() / (1.0 + d1 * d1).powf(1.5);
        return Ok(KneeResult {
            k: ks[corner],
            no_knee: false,
            curvature_sign: if d2 > 0.0 { 1 } else { -1 },
            max_abs_curvature: kappa,
        });
    }

    if n == 2 {
        // No curvature exists; pick the larger K only for a near-total drop.
        let k = if wcss[1] < TWO_POINT_DROP * wcss[0] + 1e-12 { ks[1] } else { ks[0] };
        return Ok(KneeResult { k, no_knee: true, curvature_sign: 0, max_abs_curvature: 0.0 });
    }
    if n == 3 {
        return Ok(discrete_fallback(ks, &xs, &ys));
    }

    let (spline, _lambda) = SmoothingSpline::fit_gcv(&xs, &ys);
    // Interior restriction: spline curvature at the boundary points is
    // unreliable, so the scan spans the second through second-to-last knot.
    let lo = xs[1];
    let hi = xs[n - 2];
    let mut best_t = lo;
    let mut best_abs = -1.0;
    let mut best_sign = 0i8;
    for i in 0..GRID_POINTS {
        let t = lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64;
        let d1 = spline.d1(t);
        let d2 = spline.d2(t);
        let kappa = d2 / (1.0 + d1 * d1).powf(1.5);
        if kappa.abs() > best_abs {
            best_abs = kappa.abs();
            best_t = t;
            best_sign = if kappa > 0.0 {
                1
            } else if kappa < 0.0 {
                -1
            } else {
                0
            };
        }
    }

    if best_abs < FLAT_CURVATURE {
        // Linear curve: κ ≡ 0 everywhere; report the smallest interior K.
        return Ok(KneeResult { k: ks[1], no_knee: true, curvature_sign: 0, max_abs_curvature: best_abs });
    }

    let k_value = k_lo + best_t * k_span;
    let mut selected = ks[0];
    let mut selected_dist = f64::INFINITY;
    for &k in ks {
        let d = (k as f64 - k_value).abs();
        if d < selected_dist - 1e-12 {
            selected_dist = d;
            selected = k;
        }
    }
    Ok(KneeResult { k: selected, no_knee: false, curvature_sign: best_sign, max_abs_curvature: best_abs })
}

/// Discrete-curvature fallback: divided-difference second derivative at
/// each interior point; argmax of |f″|, ties toward smaller K.
fn discrete_fallback(ks: &[usize], xs: &[f64], ys: &[f64]) -> KneeResult {
    let mut best = 1usize;
    let mut best_abs = -1.0;
    for i in 1..ks.len() - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        let second = 2.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0) / (h0 + h1);
        if second.abs() > best_abs + 1e-15 {
            best_abs = second.abs();
            best = i;
        }
    }
    let h0 = xs[best] - xs[best - 1];
    let h1 = xs[best + 1] - xs[best];
    let second = 2.0 * ((ys[best + 1] - ys[best]) / h1 - (ys[best] - ys[best - 1]) / h0) / (h0 + h1);
    KneeResult {
        k: ks[best],
        no_knee: best_abs < FLAT_CURVATURE,
        curvature_sign: if second > 0.0 { 1 } else if second < 0.0 { -1 } else { 0 },
        max_abs_curvature: best_abs,
    }
}
