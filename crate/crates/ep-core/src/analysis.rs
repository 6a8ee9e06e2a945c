//! Geometric analytics on polynomial curves: arc length and curvature.

use crate::curve::PolyCurve2D;
use crate::error::{EpError, Result};

/// Samples below this speed are skipped when maximizing curvature.
pub const SPEED_EPSILON: f64 = 1e-6;

/// Default Gauss-Legendre order for arc length.
pub const DEFAULT_QUADRATURE_ORDER: usize = 32;

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Arc length by Gauss-Legendre quadrature of the speed integrand.
pub fn arc_length(curve: &PolyCurve2D) -> Result<f64> {
    arc_length_with_order(curve, DEFAULT_QUADRATURE_ORDER)
}

/// Panel-adaptive composite rule: panels are doubled until the estimate
/// stabilizes, which keeps accuracy on curves whose speed has near-cusps.
pub fn arc_length_with_order(curve: &PolyCurve2D, order: usize) -> Result<f64> {
    let (nodes, weights) = gauss_legendre(order);
    let (t0, t1) = curve.interval;
    let panel_sum = |panels: usize| -> Result<f64> {
        let mut total = 0.0;
        for p in 0..panels {
            let a = t0 + (t1 - t0) * p as f64 / panels as f64;
            let b = t0 + (t1 - t0) * (p + 1) as f64 / panels as f64;
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&x, &w) in nodes.iter().zip(&weights) {
                let v = curve.derivative(mid + half * x, 1)?;
                total += w * half * v.norm();
            }
        }
        Ok(total)
    };
    let mut panels = 1;
    let mut prev = panel_sum(panels)?;
    while panels < 64 {
        panels *= 2;
        let next = panel_sum(panels)?;
        if (next - prev).abs() <= 1e-10 * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    Ok(prev)
}

/// Maximum |kappa| over `samples` uniform parameter samples.
/// kappa(t) = |x'y'' - y'x''| / (x'^2 + y'^2)^{3/2}; samples with speed below
/// [`SPEED_EPSILON`] are skipped.
pub fn max_abs_curvature(curve: &PolyCurve2D, samples: usize) -> Result<f64> {
    assert!(samples >= 2, "need at least 2 samples");
    let (t0, t1) = curve.interval;
    let mut best: Option<f64> = None;
    for i in 0..samples {
        let t = t0 + (t1 - t0) * i as f64 / (samples - 1) as f64;
        let d1 = curve.derivative(t, 1)?;
        let speed = d1.norm();
        if speed < SPEED_EPSILON {
            continue;
        }
        let d2 = curve.derivative(t, 2)?;
        let kappa = d1.cross(d2).abs() / speed.powi(3);
        best = Some(best.map_or(kappa, |b: f64| b.max(kappa)));
    }
    best.ok_or(EpError::DegenerateCurve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Basis;
    use crate::geom::Vec2;
    use approx::assert_abs_diff_eq;

    fn bez(coeffs: Vec<[f64; 2]>) -> PolyCurve2D {
        PolyCurve2D::new(
            Basis::Bernstein,
            (0.0, 1.0),
            coeffs.into_iter().map(Vec2::from).collect(),
        )
        .unwrap()
    }

    /// Standard cubic Bezier quarter-circle approximation of radius r,
    /// from (r, 0) to (0, r), kappa constant ~ 0.5523.
    fn quarter_circle_cubic(r: f64) -> PolyCurve2D {
        let k = 0.5522847498307936 * r;
        bez(vec![[r, 0.0], [r, k], [k, r], [0.0, r]])
    }

    #[test]
    fn straight_segment_has_zero_curvature() {
        let c = bez(vec![
            [0.0, 0.0],
            [10.0 / 3.0, 0.0],
            [20.0 / 3.0, 0.0],
            [10.0, 0.0],
        ]);
        let k = max_abs_curvature(&c, 101).unwrap();
        assert!(k < 1e-12);
    }

    #[test]
    fn parabola_curvature_peak() {
        // (t, t^2) on t in [-1, 1], exact degree-2 in monomial basis:
        // x = -1 + u*2, y = 1 - 4u + 4u^2 with u = (t+1)/2.
        let c = PolyCurve2D::new(
            Basis::Monomial,
            (-1.0, 1.0),
            vec![Vec2::new(-1.0, 1.0), Vec2::new(2.0, -4.0), Vec2::new(0.0, 4.0)],
        )
        .unwrap();
        let k = max_abs_curvature(&c, 1001).unwrap();
        assert_abs_diff_eq!(k, 2.0, epsilon = 1e-3);
    }

    #[test]
    fn quarter_circle_curvature_near_inverse_radius() {
        let c = quarter_circle_cubic(20.0);
        let k = max_abs_curvature(&c, 1001).unwrap();
        assert!((k - 0.05).abs() / 0.05 < 0.02, "k = {k}");
    }

    #[test]
    fn degenerate_curve_is_an_error() {
        let c = bez(vec![[1.0, 1.0]; 4]);
        assert!(matches!(
            max_abs_curvature(&c, 100),
            Err(EpError::DegenerateCurve)
        ));
    }

    #[test]
    fn straight_segment_length() {
        let c = bez(vec![[0.0, 0.0], [1.0, 4.0 / 3.0], [2.0, 8.0 / 3.0], [3.0, 4.0]]);
        assert_abs_diff_eq!(arc_length(&c).unwrap(), 5.0, epsilon = 1e-9);
    }

    #[test]
    fn point_curve_has_zero_length() {
        let c = bez(vec![[2.0, 2.0]; 6]);
        assert_abs_diff_eq!(arc_length(&c).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quarter_circle_length_near_half_pi_r() {
        let c = quarter_circle_cubic(20.0);
        let len = arc_length(&c).unwrap();
        let exact = std::f64::consts::PI * 20.0 / 2.0;
        assert!((len - exact).abs() / exact < 1e-3, "len = {len}");
    }

    // Adaptive-refinement oracle: composite Simpson with interval doubling.
    fn arc_length_adaptive(curve: &PolyCurve2D) -> f64 {
        let (t0, t1) = curve.interval;
        let speed = |t: f64| curve.derivative(t, 1).unwrap().norm();
        let mut n = 64;
        let mut prev = f64::INFINITY;
        loop {
            let h = (t1 - t0) / n as f64;
            let mut s = speed(t0) + speed(t1);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * speed(t0 + i as f64 * h);
            }
            let val = s * h / 3.0;
            if (val - prev).abs() <= 1e-12 * val.abs().max(1.0) || n > 1 << 20 {
                return val;
            }
            prev = val;
            n *= 2;
        }
    }

    #[test]
    fn quadrature_matches_adaptive_oracle() {
        let c = bez(vec![[0.0, 0.0], [3.0, 8.0], [-2.0, 4.0], [7.0, 1.0], [5.0, -3.0], [9.0, 2.0]]);
        let gl = arc_length(&c).unwrap();
        let oracle = arc_length_adaptive(&c);
        assert!((gl - oracle).abs() / oracle <= 1e-6, "gl={gl} oracle={oracle}");
    }

    #[test]
    fn arc_length_invariant_under_basis_and_rigid_transform() {
        let c = bez(vec![[0.0, 0.0], [2.0, 5.0], [6.0, -1.0], [8.0, 3.0]]);
        let l0 = arc_length(&c).unwrap();
        let l1 = arc_length(&c.to_basis(Basis::Monomial)).unwrap();
        let l2 = arc_length(&c.transformed(0.83, Vec2::new(-40.0, 17.0))).unwrap();
        assert!((l0 - l1).abs() <= 1e-9 * l0);
        assert!((l0 - l2).abs() <= 1e-9 * l0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // Order n integrates degree 2n-1 exactly; check x^5 on [-1,1] = 0 and x^4 = 2/5.
        let (nodes, weights) = gauss_legendre(3);
        let int4: f64 = nodes.iter().zip(&weights).map(|(&x, &w)| w * x.powi(4)).sum();
        assert_abs_diff_eq!(int4, 0.4, epsilon = 1e-12);
    }
}
