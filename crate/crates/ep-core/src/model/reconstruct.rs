//! Closed-form degree-6 trajectory reconstruction from a 14-entry state
//! vector via the observation matrix H.
//!
//! The state s = [p(t0), p(t30), v(t30), a(t30), p(t60), v(t60), a(t60)]
//! (x, y interleaved) relates to monomial coefficients omega on the
//! normalized parameter u in [0, 1] by s = H omega; derivative rows carry the
//! chain-rule factors 1/span and 1/span^2 so s stays in natural units.

use super::tape::Matrix;
use crate::curve::{Basis, PolyCurve2D};
use crate::error::{EpError, Result};
use crate::geom::Vec2;

pub const STATE_DIM: usize = 14;
pub const RECON_DEGREE: usize = 6;

/// The 14-entry state vector: positions, velocities and accelerations at the
/// three observation times, x and y interleaved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector14(pub [f64; STATE_DIM]);

impl StateVector14 {
    pub fn from_parts(
        p0: Vec2,
        p30: Vec2,
        v30: Vec2,
        a30: Vec2,
        p60: Vec2,
        v60: Vec2,
        a60: Vec2,
    ) -> Self {
        StateVector14([
            p0.x, p0.y, p30.x, p30.y, v30.x, v30.y, a30.x, a30.y, p60.x, p60.y, v60.x, v60.y,
            a60.x, a60.y,
        ])
    }

    pub fn p0(&self) -> Vec2 {
        Vec2::new(self.0[0], self.0[1])
    }
}

/// Observation matrix over the three times plus its inverse and the interval.
#[derive(Debug, Clone)]
pub struct ObservationMatrix {
    pub h: Matrix,
    pub h_inv: Matrix,
    pub interval: (f64, f64),
    pub condition_number: f64,
}

/// Builds the 14x14 observation matrix for observation times `t0 < t30 < t60`
/// (seconds). Rows are the monomial basis (and its first two derivatives with
/// chain-rule factors) at the normalized parameters of the three times,
/// Kronecker-expanded to x/y pairs.
pub fn build_observation_matrix(t0: f64, t30: f64, t60: f64) -> Result<ObservationMatrix> {
    if !(t0 < t30 && t30 < t60) {
        return Err(EpError::SingularMatrix(format!(
            "observation times must be increasing: {t0}, {t30}, {t60}"
        )));
    }
    let span = t60 - t0;
    let mut h = Matrix::zeros(STATE_DIM, STATE_DIM);
    let mut row = 0;
    for &(t, order) in &[
        (t0, 0usize),
        (t30, 0),
        (t30, 1),
        (t30, 2),
        (t60, 0),
        (t60, 1),
        (t60, 2),
    ] {
        let u = (t - t0) / span;
        let basis = monomial_derivative_row(u, order, span);
        // Kronecker with I2: one row for x entries, one for y.
        for (xy, r) in [(0usize, row), (1, row + 1)] {
            for (j, &b) in basis.iter().enumerate() {
                *h.at_mut(r, 2 * j + xy) = b;
            }
        }
        row += 2;
    }

    let na = nalgebra::DMatrix::from_row_slice(STATE_DIM, STATE_DIM, &h.data);
    let svd = na.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-12 * smax {
        return Err(EpError::SingularMatrix(
            "observation matrix is numerically singular".into(),
        ));
    }
    let inv = na
        .try_inverse()
        .ok_or_else(|| EpError::SingularMatrix("observation matrix not invertible".into()))?;
    let mut h_inv = Matrix::zeros(STATE_DIM, STATE_DIM);
    for r in 0..STATE_DIM {
        for c in 0..STATE_DIM {
            *h_inv.at_mut(r, c) = inv[(r, c)];
        }
    }
    Ok(ObservationMatrix {
        h,
        h_inv,
        interval: (t0, t60),
        condition_number: smax / smin,
    })
}

/// Basis row d^order/dt^order [1, u, ..., u^6] at u, including the chain-rule
/// factor (1/span)^order.
fn monomial_derivative_row(u: f64, order: usize, span: f64) -> [f64; RECON_DEGREE + 1] {
    let mut out = [0.0; RECON_DEGREE + 1];
    for j in order..=RECON_DEGREE {
        // d^o/du^o u^j = j (j-1) ... (j-o+1) u^{j-o}
        let mut coef = 1.0;
        for k in 0..order {
            coef *= (j - k) as f64;
        }
        out[j] = coef * u.powi((j - order) as i32) / span.powi(order as i32);
    }
    out
}

/// Solves H omega = s and returns the degree-6 monomial curve on the
/// observation interval.
pub fn reconstruct_trajectory(s: &StateVector14, obs: &ObservationMatrix) -> PolyCurve2D {
    let mut coeffs = Vec::with_capacity(RECON_DEGREE + 1);
    for j in 0..=RECON_DEGREE {
        let mut x = 0.0;
        let mut y = 0.0;
        for c in 0..STATE_DIM {
            x += obs.h_inv.at(2 * j, c) * s.0[c];
            y += obs.h_inv.at(2 * j + 1, c) * s.0[c];
        }
        coeffs.push(Vec2::new(x, y));
    }
    PolyCurve2D::new(Basis::Monomial, obs.interval, coeffs).expect("finite coefficients")
}

/// Maps a curve's coefficients back to the interleaved 14-vector form.
pub fn curve_to_omega(curve: &PolyCurve2D) -> [f64; STATE_DIM] {
    assert_eq!(curve.degree, RECON_DEGREE);
    assert_eq!(curve.basis, Basis::Monomial);
    let mut out = [0.0; STATE_DIM];
    for (j, c) in curve.coeffs.iter().enumerate() {
        out[2 * j] = c.x;
        out[2 * j + 1] = c.y;
    }
    out
}

/// Samples the exact state vector of a degree-6 curve at the matrix's times.
pub fn observe_curve(curve: &PolyCurve2D, obs: &ObservationMatrix) -> Result<StateVector14> {
    let (t0, t60) = obs.interval;
    let t30 = 0.5 * (t0 + t60);
    Ok(StateVector14::from_parts(
        curve.evaluate(t0)?,
        curve.evaluate(t30)?,
        curve.derivative(t30, 1)?,
        curve.derivative(t30, 2)?,
        curve.evaluate(t60)?,
        curve.derivative(t60, 1)?,
        curve.derivative(t60, 2)?,
    ))
}

/// Splits H^{-1} into the block applied to the tracked position (14x2) and
/// the block applied to the 12 predicted numbers (14x12), for in-graph use.
pub fn h_inv_blocks(obs: &ObservationMatrix) -> (Matrix, Matrix) {
    let mut left = Matrix::zeros(STATE_DIM, 2);
    let mut right = Matrix::zeros(STATE_DIM, STATE_DIM - 2);
    for r in 0..STATE_DIM {
        for c in 0..2 {
            *left.at_mut(r, c) = obs.h_inv.at(r, c);
        }
        for c in 2..STATE_DIM {
            *right.at_mut(r, c - 2) = obs.h_inv.at(r, c);
        }
    }
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_obs() -> ObservationMatrix {
        build_observation_matrix(0.0, 3.0, 6.0).unwrap()
    }

    fn random_curve(rng: &mut ChaCha8Rng) -> PolyCurve2D {
        let coeffs = (0..=RECON_DEGREE)
            .map(|_| Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        PolyCurve2D::new(Basis::Monomial, (0.0, 6.0), coeffs).unwrap()
    }

    #[test]
    fn first_rows_select_the_constant_coefficient() {
        let obs = default_obs();
        // phi(0) = [1, 0, ..., 0] Kronecker I2.
        assert_eq!(obs.h.at(0, 0), 1.0);
        assert_eq!(obs.h.at(1, 1), 1.0);
        for c in 2..STATE_DIM {
            assert_eq!(obs.h.at(0, c), 0.0);
            assert_eq!(obs.h.at(1, c), 0.0);
        }
    }

    #[test]
    fn h_maps_curve_coefficients_to_analytic_states() {
        let obs = default_obs();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let curve = random_curve(&mut rng);
            let omega = curve_to_omega(&curve);
            let expected = observe_curve(&curve, &obs).unwrap();
            for r in 0..STATE_DIM {
                let got: f64 = (0..STATE_DIM).map(|c| obs.h.at(r, c) * omega[c]).sum();
                assert!(
                    (got - expected.0[r]).abs() <= 1e-9,
                    "row {r}: {got} vs {}",
                    expected.0[r]
                );
            }
        }
    }

    #[test]
    fn inverse_round_trip_is_identity() {
        let obs = default_obs();
        let prod = obs.h.matmul(&obs.h_inv);
        for r in 0..STATE_DIM {
            for c in 0..STATE_DIM {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((prod.at(r, c) - expect).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn reconstruction_recovers_known_curve() {
        let obs = default_obs();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let curve = random_curve(&mut rng);
            let s = observe_curve(&curve, &obs).unwrap();
            let rec = reconstruct_trajectory(&s, &obs);
            for (a, b) in curve.coeffs.iter().zip(&rec.coeffs) {
                assert!(a.dist(*b) <= 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn stationary_state_reconstructs_to_constant_curve() {
        let obs = default_obs();
        let p = Vec2::new(3.0, -2.0);
        let s = StateVector14::from_parts(p, p, Vec2::ZERO, Vec2::ZERO, p, Vec2::ZERO, Vec2::ZERO);
        let rec = reconstruct_trajectory(&s, &obs);
        for t in [0.0, 1.7, 4.2, 6.0] {
            assert!(rec.evaluate(t).unwrap().dist(p) <= 1e-9);
        }
    }

    #[test]
    fn coincident_times_are_rejected() {
        assert!(build_observation_matrix(0.0, 3.0, 3.0).is_err());
        assert!(build_observation_matrix(2.0, 1.0, 6.0).is_err());
    }

    #[test]
    fn condition_number_is_reported_and_finite() {
        let obs = default_obs();
        assert!(obs.condition_number.is_finite() && obs.condition_number >= 1.0);
    }

    #[test]
    fn reconstruction_interpolates_constraints() {
        let obs = default_obs();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let s = StateVector14(std::array::from_fn(|_| rng.gen_range(-10.0..10.0)));
            let rec = reconstruct_trajectory(&s, &obs);
            let back = observe_curve(&rec, &obs).unwrap();
            for (a, b) in s.0.iter().zip(&back.0) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn h_inv_blocks_recompose_the_solve() {
        let obs = default_obs();
        let (left, right) = h_inv_blocks(&obs);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = StateVector14(std::array::from_fn(|_| rng.gen_range(-4.0..4.0)));
        let p = Matrix {
            rows: 2,
            cols: 1,
            data: s.0[..2].to_vec(),
        };
        let rest = Matrix {
            rows: STATE_DIM - 2,
            cols: 1,
            data: s.0[2..].to_vec(),
        };
        let omega = {
            let a = left.matmul(&p);
            let b = right.matmul(&rest);
            let mut o = a.clone();
            for (x, y) in o.data.iter_mut().zip(&b.data) {
                *x += y;
            }
            o
        };
        let direct = reconstruct_trajectory(&s, &obs);
        let direct_omega = curve_to_omega(&direct);
        for (a, b) in omega.data.iter().zip(&direct_omega) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    /// Finite-difference check of d(endpoint)/d(s entries) through the solve.
    #[test]
    fn endpoint_gradient_matches_finite_differences() {
        let obs = default_obs();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s0 = StateVector14(std::array::from_fn(|_| rng.gen_range(-5.0..5.0)));
        let endpoint_x = |s: &StateVector14| -> f64 {
            reconstruct_trajectory(s, &obs).evaluate(6.0).unwrap().x
        };
        // Analytic: endpoint x = sum_j omega_x_j = e^T Hinv s restricted to x rows.
        for i in 0..STATE_DIM {
            let analytic: f64 = (0..=RECON_DEGREE).map(|j| obs.h_inv.at(2 * j, i)).sum();
            let eps = 1e-5;
            let mut plus = s0;
            plus.0[i] += eps;
            let mut minus = s0;
            minus.0[i] -= eps;
            let numeric = (endpoint_x(&plus) - endpoint_x(&minus)) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1.0);
            assert!((analytic - numeric).abs() / denom <= 1e-5);
        }
    }
}
