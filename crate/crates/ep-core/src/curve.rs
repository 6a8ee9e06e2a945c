//! Planar polynomial curves in Bernstein or monomial basis.
//!
//! All curves use a normalized internal parameter u in [0, 1]; a curve's
//! `interval` maps wall-clock (or arc) parameter t to u = (t - t0) / (t1 - t0).
//! Time derivatives therefore carry a chain-rule factor 1/(t1 - t0) per order,
//! applied at evaluation so the derivative operator stays integer-valued.

use crate::error::{EpError, Result};
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Bernstein,
    Monomial,
}

/// A planar polynomial curve with 2D coefficients.
///
/// In the Bernstein basis the coefficients are control points; the curve
/// interpolates the first and last of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCurve2D {
    pub degree: usize,
    pub basis: Basis,
    /// (t_start, t_end) in seconds (or meters for arc-parameterized lanes).
    pub interval: (f64, f64),
    pub coeffs: Vec<Vec2>,
}

impl PolyCurve2D {
    pub fn new(basis: Basis, interval: (f64, f64), coeffs: Vec<Vec2>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(EpError::MalformedCurve("empty coefficient list".into()));
        }
        if !(interval.0 < interval.1) || !interval.0.is_finite() || !interval.1.is_finite() {
            return Err(EpError::MalformedCurve(format!(
                "invalid interval ({}, {})",
                interval.0, interval.1
            )));
        }
        Ok(PolyCurve2D {
            degree: coeffs.len() - 1,
            basis,
            interval,
            coeffs,
        })
    }

    pub fn span(&self) -> f64 {
        self.interval.1 - self.interval.0
    }

    /// Map t to the normalized parameter u.
    pub fn to_u(&self, t: f64) -> f64 {
        (t - self.interval.0) / self.span()
    }

    /// Curve position at parameter t.
    pub fn evaluate(&self, t: f64) -> Result<Vec2> {
        if !t.is_finite() {
            return Err(EpError::NonFinite(format!("t = {t}")));
        }
        if self.coeffs.is_empty() {
            return Err(EpError::MalformedCurve("empty coefficient list".into()));
        }
        let u = self.to_u(t);
        Ok(match self.basis {
            Basis::Bernstein => de_casteljau(&self.coeffs, u),
            Basis::Monomial => horner(&self.coeffs, u),
        })
    }

    /// Derivative of the given order with respect to t (natural units).
    pub fn derivative(&self, t: f64, order: usize) -> Result<Vec2> {
        if !t.is_finite() {
            return Err(EpError::NonFinite(format!("t = {t}")));
        }
        let mono = self.to_basis(Basis::Monomial);
        let op = DerivativeOperator::new(self.degree);
        let mut cx: Vec<f64> = mono.coeffs.iter().map(|c| c.x).collect();
        let mut cy: Vec<f64> = mono.coeffs.iter().map(|c| c.y).collect();
        for _ in 0..order {
            cx = op.apply(&cx);
            cy = op.apply(&cy);
        }
        let u = self.to_u(t);
        let coeffs: Vec<Vec2> = cx.iter().zip(&cy).map(|(&x, &y)| Vec2::new(x, y)).collect();
        let v = horner(&coeffs, u);
        let scale = self.span().powi(-(order as i32));
        Ok(v * scale)
    }

    /// Convert to the target basis via the exact change-of-basis matrix.
    pub fn to_basis(&self, target: Basis) -> PolyCurve2D {
        if self.basis == target {
            return self.clone();
        }
        let m = match (self.basis, target) {
            (Basis::Bernstein, Basis::Monomial) => bernstein_to_monomial_matrix(self.degree),
            (Basis::Monomial, Basis::Bernstein) => monomial_to_bernstein_matrix(self.degree),
            _ => unreachable!(),
        };
        let coeffs = apply_matrix(&m, &self.coeffs);
        PolyCurve2D {
            degree: self.degree,
            basis: target,
            interval: self.interval,
            coeffs,
        }
    }

    /// Rigid transform of the curve (control points transform as points in
    /// Bernstein basis; monomial curves transform via their Bernstein form).
    pub fn transformed(&self, rotation: f64, translation: Vec2) -> PolyCurve2D {
        match self.basis {
            Basis::Bernstein => {
                let coeffs = self
                    .coeffs
                    .iter()
                    .map(|c| c.rotated(rotation) + translation)
                    .collect();
                PolyCurve2D {
                    coeffs,
                    ..self.clone()
                }
            }
            Basis::Monomial => {
                // Rotation is linear in the coefficients; translation shifts a_0 only.
                let coeffs = self
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let r = c.rotated(rotation);
                        if i == 0 {
                            r + translation
                        } else {
                            r
                        }
                    })
                    .collect();
                PolyCurve2D {
                    coeffs,
                    ..self.clone()
                }
            }
        }
    }
}

/// Numerically stable Bernstein evaluation.
pub fn de_casteljau(control: &[Vec2], u: f64) -> Vec2 {
    let mut pts = control.to_vec();
    let n = pts.len();
    for level in 1..n {
        for i in 0..n - level {
            pts[i] = pts[i] * (1.0 - u) + pts[i + 1] * u;
        }
    }
    pts[0]
}

fn horner(coeffs: &[Vec2], u: f64) -> Vec2 {
    let mut acc = Vec2::ZERO;
    for c in coeffs.iter().rev() {
        acc = acc * u + *c;
    }
    acc
}

fn apply_matrix(m: &[Vec<f64>], coeffs: &[Vec2]) -> Vec<Vec2> {
    m.iter()
        .map(|row| {
            row.iter()
                .zip(coeffs)
                .fold(Vec2::ZERO, |acc, (&w, &c)| acc + c * w)
        })
        .collect()
}

/// Exact binomial coefficient as f64 (degrees here stay tiny).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0f64;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

/// Row k: monomial coefficient a_k as a combination of control points,
/// a_k = sum_i (-1)^{k-i} C(n,k) C(k,i) w_i.
pub fn bernstein_to_monomial_matrix(degree: usize) -> Vec<Vec<f64>> {
    let n = degree;
    (0..=n)
        .map(|k| {
            (0..=n)
                .map(|i| {
                    if i > k {
                        0.0
                    } else {
                        let sign = if (k - i) % 2 == 0 { 1.0 } else { -1.0 };
                        sign * binomial(n, k) * binomial(k, i)
                    }
                })
                .collect()
        })
        .collect()
}

/// Row i: control point w_i = sum_{k<=i} C(i,k)/C(n,k) a_k.
pub fn monomial_to_bernstein_matrix(degree: usize) -> Vec<Vec<f64>> {
    let n = degree;
    (0..=n)
        .map(|i| {
            (0..=n)
                .map(|k| {
                    if k > i {
                        0.0
                    } else {
                        binomial(i, k) / binomial(n, k)
                    }
                })
                .collect()
        })
        .collect()
}

/// Monomial basis vector [1, u, u^2, ..., u^d] at a normalized parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasisVector {
    pub degree: usize,
    pub values: Vec<f64>,
}

impl MonomialBasisVector {
    pub fn at(degree: usize, u: f64) -> Self {
        let mut values = Vec::with_capacity(degree + 1);
        let mut p = 1.0;
        for _ in 0..=degree {
            values.push(p);
            p *= u;
        }
        MonomialBasisVector { degree, values }
    }
}

/// Linear operator mapping monomial coefficients to the coefficients of the
/// derivative, padded with a zero row to keep dimension (degree+1).
/// Nilpotent of index degree+1.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeOperator {
    pub degree: usize,
    pub matrix: Vec<Vec<f64>>,
}

impl DerivativeOperator {
    pub fn new(degree: usize) -> Self {
        let n = degree + 1;
        let mut matrix = vec![vec![0.0; n]; n];
        for j in 0..degree {
            matrix[j][j + 1] = (j + 1) as f64;
        }
        DerivativeOperator { degree, matrix }
    }

    /// Apply to a monomial coefficient vector: [a1, 2 a2, ..., d a_d, 0].
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.degree + 1;
        assert_eq!(coeffs.len(), n, "coefficient length mismatch");
        let mut out = vec![0.0; n];
        for j in 0..self.degree {
            out[j] = (j + 1) as f64 * coeffs[j + 1];
        }
        out
    }
}
