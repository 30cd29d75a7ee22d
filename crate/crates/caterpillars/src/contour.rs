//! Spectrally accurate contour integration over positively oriented circles.
//!
//! Everything downstream reduces to integrals of the form `(1/2πi) ∮ f(w) dw`
//! over circles. Integrands are analytic on the contour, so the trapezoidal
//! rule converges geometrically; nodes are doubled until the last two levels
//! agree to the requested tolerance.

use num_complex::Complex64;
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_NODES: usize = 8192;
const START_NODES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Complex64,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Complex64, radius: f64) -> Self {
        assert!(radius > 0.0, "circle radius must be positive");
        Circle { center, radius }
    }

    pub fn origin(radius: f64) -> Self {
        Circle::new(Complex64::new(0.0, 0.0), radius)
    }

    pub fn around(center: f64, radius: f64) -> Self {
        Circle::new(Complex64::new(center, 0.0), radius)
    }

    fn point(&self, angle: f64) -> Complex64 {
        self.center + Complex64::from_polar(self.radius, angle)
    }

    /// Smallest |w| attained on the circle.
    pub fn min_abs(&self) -> f64 {
        (self.center.norm() - self.radius).abs()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureResult {
    pub value: Complex64,
    pub nodes_used: usize,
    pub est_error: f64,
}

#[derive(Debug, Error)]
pub enum ContourError {
    #[error("quadrature did not converge: last value {value}, est_error {est_error:.3e}")]
    NotConverged { value: Complex64, est_error: f64 },
    #[error("no circle separates the enclosed points from the excluded ones")]
    NoSeparatingCircle,
}

/// `(1/2πi) ∮ f(w) dw` over `c`, doubling nodes until the running value moves
/// by less than `tol * max(1, |value|)`.
pub fn integrate<F>(
    f: F,
    c: &Circle,
    tol: f64,
    max_nodes: usize,
) -> Result<QuadratureResult, ContourError>
where
    F: Fn(Complex64) -> Complex64,
{
    assert!(tol > 0.0);
    let mut n = START_NODES.min(max_nodes.max(4));
    // raw sum of f(w_k)·(w_k - center) over all nodes seen so far
    let mut raw = Complex64::new(0.0, 0.0);
    let mut seen = 0usize;
    let mut prev: Option<Complex64> = None;
    loop {
        // new nodes: at the first level all of them, afterwards the midpoints
        let (count, step, offset) = if seen == 0 {
            (n, std::f64::consts::TAU / n as f64, 0.0)
        } else {
            let step = std::f64::consts::TAU / n as f64;
            (seen, step, step / 2.0)
        };
        for k in 0..count {
            let w = c.point(offset + k as f64 * step * if seen == 0 { 1.0 } else { 2.0 });
            raw += f(w) * (w - c.center);
        }
        seen += count;
        debug_assert_eq!(seen, n);
        let value = raw / n as f64;
        if let Some(p) = prev {
            let est = (value - p).norm();
            if est <= tol * value.norm().max(1.0) {
                return Ok(QuadratureResult {
                    value,
                    nodes_used: n,
                    est_error: est,
                });
            }
            if 2 * n > max_nodes {
                return Err(ContourError::NotConverged {
                    value,
                    est_error: est,
                });
            }
        }
        prev = Some(value);
        n *= 2;
    }
}

/// Laurent coefficient of `w^index` of `f` on the circle of the given radius
/// centered at the origin.
pub fn laurent_coeff<F>(
    f: F,
    index: i64,
    radius: f64,
    tol: f64,
    max_nodes: usize,
) -> Result<Complex64, ContourError>
where
    F: Fn(Complex64) -> Complex64,
{
    let c = Circle::origin(radius);
    integrate(|w| f(w) * w.powi(-(index as i32) - 1), &c, tol, max_nodes).map(|r| r.value)
}

/// Batched evaluation of `F(d) = (1/2πi) ∮ θ^d w^{-d-1} g(w) dw` for every
/// displacement `d` in `d_lo..=d_hi`, sharing one set of quadrature nodes.
///
/// Runs node doubling until every displacement has stabilised or `max_nodes`
/// is reached, and returns the values together with per-displacement doubling
/// differences scaled by `max(1, |value|)`. A displacement whose relative
/// estimate exceeds the tolerance is still returned (callers evaluating on
/// several circles keep the best-estimated value per displacement).
pub fn displacement_values<F>(
    g: F,
    c: &Circle,
    theta: f64,
    d_lo: i64,
    d_hi: i64,
    tol: f64,
    max_nodes: usize,
) -> (Vec<Complex64>, Vec<f64>)
where
    F: Fn(Complex64) -> Complex64,
{
    assert!(d_lo <= d_hi);
    let count = (d_hi - d_lo + 1) as usize;
    let mut n = START_NODES.min(max_nodes.max(4));
    let mut raw = vec![Complex64::new(0.0, 0.0); count];
    let mut seen = 0usize;
    let mut prev: Option<Vec<Complex64>> = None;
    loop {
        let full_step = std::f64::consts::TAU / n as f64;
        let (new_count, step, offset) = if seen == 0 {
            (n, full_step, 0.0)
        } else {
            (seen, 2.0 * full_step, full_step / 2.0)
        };
        for k in 0..new_count {
            let w = c.point(offset + k as f64 * step);
            // weight g(w)·(w - center)/w so that raw[d] accumulates θ^d w^{-d} g(w)(w-c)/w
            let base = g(w) * (w - c.center) / w;
            let u = Complex64::new(theta, 0.0) / w;
            let mut p = u.powi(d_lo as i32);
            for slot in raw.iter_mut() {
                *slot += base * p;
                p *= u;
            }
        }
        seen += new_count;
        let values: Vec<Complex64> = raw.iter().map(|z| z / n as f64).collect();
        if let Some(p) = prev {
            let ests: Vec<f64> = values
                .iter()
                .zip(p.iter())
                .map(|(a, b)| {
                    let e = (a - b).norm() / a.norm().max(1.0);
                    if e.is_finite() {
                        e
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            let worst = ests.iter().cloned().fold(0.0f64, f64::max);
            if worst <= tol || 2 * n > max_nodes {
                return (values, ests);
            }
        }
        prev = Some(values);
        n *= 2;
    }
}

/// A circle enclosing every point of `points` and none of `exclude`: centered
/// at the centroid, radius = max distance to the points plus 25% of the gap to
/// the nearest excluded point.
pub fn enclosing_contour(
    points: &[Complex64],
    exclude: &[Complex64],
) -> Result<Circle, ContourError> {
    assert!(!points.is_empty(), "need at least one point to enclose");
    let center = points.iter().sum::<Complex64>() / points.len() as f64;
    let max_dist = points
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0f64, f64::max);
    let gap = exclude
        .iter()
        .map(|q| (q - center).norm() - max_dist)
        .fold(f64::INFINITY, f64::min);
    if gap <= 0.0 {
        return Err(ContourError::NoSeparatingCircle);
    }
    let radius = if gap.is_finite() {
        max_dist + 0.25 * gap
    } else {
        max_dist.max(1.0) * 1.25
    };
    Ok(Circle::new(center, radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c64(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cauchy_residue_of_one_over_w() {
        let r = integrate(|w| 1.0 / w, &Circle::origin(1.0), 1e-13, 8192).unwrap();
        assert_abs_diff_eq!(r.value.re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.value.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coefficient_of_w_in_square() {
        // (1+w)^2 / w^2 picks out the coefficient of w in (1+w)^2
        let r = integrate(
            |w| (1.0 + w) * (1.0 + w) / (w * w),
            &Circle::origin(0.5),
            1e-13,
            8192,
        )
        .unwrap();
        assert_abs_diff_eq!(r.value.re, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn taylor_coefficient_of_exponential() {
        // e^{tw}/w^{k+1} -> t^k/k!, here t=2, k=3
        let r = integrate(
            |w| (2.0 * w).exp() / w.powi(4),
            &Circle::origin(0.5),
            1e-13,
            8192,
        )
        .unwrap();
        assert_abs_diff_eq!(r.value.re, 8.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn analytic_inside_integrates_to_zero() {
        let r = integrate(
            |w| w.exp() + 3.0 * w * w - 1.0,
            &Circle::origin(1.3),
            1e-13,
            8192,
        )
        .unwrap();
        assert!(r.value.norm() < 1e-12);
    }

    #[test]
    fn laurent_binomial() {
        let v = laurent_coeff(|w| (1.0 + w).powi(3), 2, 0.7, 1e-13, 8192).unwrap();
        assert_abs_diff_eq!(v.re, 3.0, epsilon = 1e-11);
    }

    #[test]
    fn laurent_geometric_outside_pole() {
        // on |w|=2 the expansion of 1/(1-w) is -sum_{k<=-1} w^k
        let v = laurent_coeff(|w| 1.0 / (1.0 - w), -1, 2.0, 1e-13, 8192).unwrap();
        assert_abs_diff_eq!(v.re, -1.0, epsilon = 1e-11);
        // independent check against the generic integrator
        let r = integrate(|w| 1.0 / (1.0 - w) / w.powi(0), &Circle::origin(2.0), 1e-13, 8192)
            .unwrap();
        assert_abs_diff_eq!(r.value.re, -1.0, epsilon = 1e-11);
    }

    #[test]
    fn laurent_below_lowest_order_vanishes() {
        let v = laurent_coeff(|w| (1.0 + 1.0 / w).powi(2), -4, 0.8, 1e-13, 8192).unwrap();
        assert!(v.norm() < 1e-12);
    }

    #[test]
    fn displacement_batch_matches_single_coefficients() {
        let g = |w: Complex64| (1.0 + w).powi(5) / (1.5 - w);
        let theta = 0.4;
        let circle = Circle::origin(0.6);
        let (vals, ests) = displacement_values(&g, &circle, theta, -4, 9, 1e-13, 8192);
        assert!(ests.iter().all(|e| *e <= 1e-13));
        for (i, d) in (-4..=9).enumerate() {
            let single = integrate(
                |w| g(w) * Complex64::new(theta, 0.0).powi(d as i32) * w.powi(-(d as i32) - 1),
                &circle,
                1e-13,
                8192,
            )
            .unwrap();
            assert_abs_diff_eq!(vals[i].re, single.value.re, epsilon = 1e-11);
        }
    }

    #[test]
    fn conjugate_symmetry_gives_real_values() {
        let g = |w: Complex64| (1.0 + w).powi(3) / (2.0 - w);
        let (vals, _) = displacement_values(&g, &Circle::origin(0.5), 0.3, -5, 5, 1e-13, 8192);
        for v in vals {
            assert!(v.im.abs() <= 1e-12 * (1.0 + v.re.abs()));
        }
    }

    #[test]
    fn enclosing_single_point() {
        let c = enclosing_contour(&[c64(1.0, 0.0)], &[c64(0.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(c.center.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.radius, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn enclosing_two_points() {
        let c = enclosing_contour(&[c64(1.0, 0.0), c64(2.0, 0.0)], &[c64(0.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(c.center.re, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.radius, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn enclosing_conflict_is_rejected() {
        let e = enclosing_contour(&[c64(1.0, 0.0)], &[c64(1.0, 0.0)]);
        assert!(matches!(e, Err(ContourError::NoSeparatingCircle)));
    }
}
