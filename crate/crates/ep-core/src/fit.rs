//! Curve fitting: Borges-Pastva style total least squares for map polylines,
//! weighted linear least squares for observed agent histories, and recursive
//! segment splitting until a fit-error threshold is met.

use crate::curve::{Basis, PolyCurve2D};
use crate::error::{EpError, Result};
use crate::geom::Vec2;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const PARAM_CONVERGENCE: f64 = 1e-8;
pub const MAX_TLS_ITERATIONS: usize = 50;
pub const MAX_NEWTON_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Semantic {
    LaneCenter,
    Crosswalk,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Vec2>,
    pub semantic: Semantic,
}

impl Polyline {
    /// Builds a polyline, dropping consecutive duplicate points.
    pub fn new(points: Vec<Vec2>, semantic: Semantic) -> Result<Self> {
        let mut deduped: Vec<Vec2> = Vec::with_capacity(points.len());
        for p in points {
            if deduped.last().map_or(true, |&q| q != p) {
                deduped.push(p);
            }
        }
        if deduped.len() < 2 {
            return Err(EpError::NotEnoughSamples {
                need: 2,
                got: deduped.len(),
            });
        }
        Ok(Polyline {
            points: deduped,
            semantic,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedSample {
    pub t: f64,
    #[serde(flatten)]
    pub position: XY,
    pub valid: bool,
}

/// Flat {x, y} used inside observation records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XY {
    pub x: f64,
    pub y: f64,
}

impl From<Vec2> for XY {
    fn from(v: Vec2) -> Self {
        XY { x: v.x, y: v.y }
    }
}

impl From<XY> for Vec2 {
    fn from(p: XY) -> Self {
        Vec2::new(p.x, p.y)
    }
}

impl ObservedSample {
    pub fn new(t: f64, position: Vec2, valid: bool) -> Self {
        ObservedSample {
            t,
            position: position.into(),
            valid,
        }
    }

    pub fn pos(&self) -> Vec2 {
        self.position.into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrack {
    pub samples: Vec<ObservedSample>,
    /// Observation noise standard deviation in meters for this agent class.
    pub noise_std: f64,
}

impl ObservedTrack {
    pub fn new(samples: Vec<ObservedSample>, noise_std: f64) -> Result<Self> {
        for w in samples.windows(2) {
            if !(w[0].t < w[1].t) {
                return Err(EpError::MalformedCurve(
                    "track timestamps must be strictly increasing".into(),
                ));
            }
        }
        Ok(ObservedTrack { samples, noise_std })
    }

    pub fn valid_samples(&self) -> impl Iterator<Item = &ObservedSample> {
        self.samples.iter().filter(|s| s.valid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitFlags {
    /// The effective fitting degree was reduced (rank deficiency or too few
    /// samples); the returned curve is degree-elevated back to the request.
    #[serde(default)]
    pub degree_reduced: bool,
    /// Segment could not be split further while still above threshold.
    #[serde(default)]
    pub irreducible: bool,
}

impl FitFlags {
    pub fn is_empty(&self) -> bool {
        !self.degree_reduced && !self.irreducible
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub curve: PolyCurve2D,
    /// Maximum point-to-curve distance in meters.
    pub max_error: f64,
    /// Root-mean-square point-to-curve distance in meters.
    pub rms_error: f64,
    #[serde(default, skip_serializing_if = "FitFlags::is_empty")]
    pub flags: FitFlags,
}

/// Chord-length parameterization in [0, 1].
pub fn chord_length_params(points: &[Vec2]) -> Vec<f64> {
    let mut cum = vec![0.0; points.len()];
    for i in 1..points.len() {
        cum[i] = cum[i - 1] + points[i].dist(points[i - 1]);
    }
    let total = cum[points.len() - 1];
    if total <= 0.0 {
        // All points coincide; spread parameters uniformly.
        return (0..points.len())
            .map(|i| i as f64 / (points.len() - 1).max(1) as f64)
            .collect();
    }
    cum.into_iter().map(|c| c / total).collect()
}

fn bernstein_row(degree: usize, u: f64) -> Vec<f64> {
    // Via de Casteljau on indicator control points would be overkill; the
    // direct product form is fine at these degrees.
    let n = degree;
    (0..=n)
        .map(|i| {
            crate::curve::binomial(n, i) * u.powi(i as i32) * (1.0 - u).powi((n - i) as i32)
        })
        .collect()
}

/// Least-squares solve for Bernstein control points at fixed parameters.
/// Returns (control points, effective rank).
fn solve_bernstein_ls(
    points: &[Vec2],
    params: &[f64],
    weights: Option<&[f64]>,
    degree: usize,
) -> (Vec<Vec2>, usize) {
    let n = points.len();
    let cols = degree + 1;
    let mut b = DMatrix::zeros(n, cols);
    let mut rx = DVector::zeros(n);
    let mut ry = DVector::zeros(n);
    for (i, (&p, &u)) in points.iter().zip(params).enumerate() {
        let w = weights.map_or(1.0, |ws| ws[i].sqrt());
        for (j, v) in bernstein_row(degree, u).into_iter().enumerate() {
            b[(i, j)] = w * v;
        }
        rx[i] = w * p.x;
        ry[i] = w * p.y;
    }
    let svd = b.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * n.max(cols) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let cx = svd.solve(&rx, tol).expect("svd solve");
    let cy = svd.solve(&ry, tol).expect("svd solve");
    let ctrl = (0..cols).map(|j| Vec2::new(cx[j], cy[j])).collect();
    (ctrl, rank)
}

/// Least-squares solve with the first and last control points clamped to the
/// first and last sample (Borges-Pastva endpoint interpolation). Returns the
/// full control polygon and the effective rank of the interior system.
fn solve_bernstein_ls_clamped(points: &[Vec2], params: &[f64], degree: usize) -> (Vec<Vec2>, usize) {
    let n = points.len();
    let first = points[0];
    let last = points[n - 1];
    if degree == 1 {
        return (vec![first, last], 2);
    }
    let cols = degree - 1;
    let mut b = DMatrix::zeros(n, cols);
    let mut rx = DVector::zeros(n);
    let mut ry = DVector::zeros(n);
    for (i, (&p, &u)) in points.iter().zip(params).enumerate() {
        let row = bernstein_row(degree, u);
        for j in 0..cols {
            b[(i, j)] = row[j + 1];
        }
        let rhs = p - first * row[0] - last * row[degree];
        rx[i] = rhs.x;
        ry[i] = rhs.y;
    }
    let svd = b.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * n.max(cols) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let cx = svd.solve(&rx, tol).expect("svd solve");
    let cy = svd.solve(&ry, tol).expect("svd solve");
    let mut ctrl = Vec::with_capacity(degree + 1);
    ctrl.push(first);
    for j in 0..cols {
        ctrl.push(Vec2::new(cx[j], cy[j]));
    }
    ctrl.push(last);
    (ctrl, rank + 2)
}

/// Joint Gauss-Newton step over interior control points and interior sample
/// parameters with endpoint interpolation kept. Damped by step halving.
fn gauss_newton_refine(points: &[Vec2], ctrl: &mut Vec<Vec2>, params: &mut [f64]) {
    let degree = ctrl.len() - 1;
    if degree < 2 || points.len() < 3 {
        return;
    }
    let n = points.len();
    let n_ctrl = degree - 1;
    let n_par = n - 2;
    let cols = 2 * n_ctrl + n_par;

    let sum_sq = |ctrl: &[Vec2], params: &[f64]| -> f64 {
        let mono = MonoCurve::from_control(ctrl);
        points
            .iter()
            .zip(params)
            .map(|(&p, &u)| mono.pos(u).dist(p).powi(2))
            .sum()
    };

    let mut err = sum_sq(ctrl, params);
    for _ in 0..30 {
        let mono = MonoCurve::from_control(ctrl);
        let mut jac = DMatrix::zeros(2 * n, cols);
        let mut rhs = DVector::zeros(2 * n);
        for i in 0..n {
            let u = params[i];
            let row = bernstein_row(degree, u);
            for j in 0..n_ctrl {
                jac[(2 * i, 2 * j)] = row[j + 1];
                jac[(2 * i + 1, 2 * j + 1)] = row[j + 1];
            }
            if i > 0 && i < n - 1 {
                let d1 = mono.d1(u);
                jac[(2 * i, 2 * n_ctrl + i - 1)] = d1.x;
                jac[(2 * i + 1, 2 * n_ctrl + i - 1)] = d1.y;
            }
            let r = mono.pos(u) - points[i];
            rhs[2 * i] = -r.x;
            rhs[2 * i + 1] = -r.y;
        }
        let Some(delta) = (jac.transpose() * &jac)
            .cholesky()
            .map(|ch| ch.solve(&(jac.transpose() * rhs)))
        else {
            return;
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let mut new_ctrl = ctrl.clone();
            for j in 0..n_ctrl {
                new_ctrl[j + 1] =
                    new_ctrl[j + 1] + Vec2::new(delta[2 * j], delta[2 * j + 1]) * scale;
            }
            let mut new_params = params.to_vec();
            for i in 1..n - 1 {
                new_params[i] = (new_params[i] + scale * delta[2 * n_ctrl + i - 1]).clamp(0.0, 1.0);
            }
            let new_err = sum_sq(&new_ctrl, &new_params);
            if new_err <= err {
                let step: f64 = delta.amax() * scale;
                *ctrl = new_ctrl;
                params.copy_from_slice(&new_params);
                let done = new_err >= err - 1e-16 * err.max(1.0) || step < 1e-12;
                err = new_err;
                improved = true;
                if done {
                    return;
                }
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            return;
        }
    }
}

/// Raise a Bernstein curve's degree by one without changing the curve.
fn elevate_once(ctrl: &[Vec2]) -> Vec<Vec2> {
    let n = ctrl.len() - 1;
    let m = n + 1;
    (0..=m)
        .map(|i| {
            let a = i as f64 / m as f64;
            let lo = if i == 0 { Vec2::ZERO } else { ctrl[i - 1] * a };
            let hi = if i == m { Vec2::ZERO } else { ctrl[i] * (1.0 - a) };
            lo + hi
        })
        .collect()
}

fn elevate_to(ctrl: Vec<Vec2>, degree: usize) -> Vec<Vec2> {
    let mut c = ctrl;
    while c.len() < degree + 1 {
        c = elevate_once(&c);
    }
    c
}

/// Precomputed monomial form used for fast repeated evaluation.
struct MonoCurve {
    cx: Vec<f64>,
    cy: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    ddx: Vec<f64>,
    ddy: Vec<f64>,
}

impl MonoCurve {
    fn from_control(ctrl: &[Vec2]) -> Self {
        let degree = ctrl.len() - 1;
        let m = crate::curve::bernstein_to_monomial_matrix(degree);
        let cx: Vec<f64> = m
            .iter()
            .map(|row| row.iter().zip(ctrl).map(|(&w, c)| w * c.x).sum())
            .collect();
        let cy: Vec<f64> = m
            .iter()
            .map(|row| row.iter().zip(ctrl).map(|(&w, c)| w * c.y).sum())
            .collect();
        let op = crate::curve::DerivativeOperator::new(degree);
        let dx = op.apply(&cx);
        let dy = op.apply(&cy);
        let ddx = op.apply(&dx);
        let ddy = op.apply(&dy);
        MonoCurve {
            cx,
            cy,
            dx,
            dy,
            ddx,
            ddy,
        }
    }

    fn horner(c: &[f64], u: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &v| acc * u + v)
    }

    fn pos(&self, u: f64) -> Vec2 {
        Vec2::new(Self::horner(&self.cx, u), Self::horner(&self.cy, u))
    }

    fn d1(&self, u: f64) -> Vec2 {
        Vec2::new(Self::horner(&self.dx, u), Self::horner(&self.dy, u))
    }

    fn d2(&self, u: f64) -> Vec2 {
        Vec2::new(Self::horner(&self.ddx, u), Self::horner(&self.ddy, u))
    }

    /// Nearest-point parameter for `p`, warm-started at `u0`.
    /// Newton on the projection condition with a coarse-scan fallback; the
    /// returned parameter never yields a larger distance than `u0` did.
    fn foot_point(&self, p: Vec2, u0: f64) -> f64 {
        let mut u = u0.clamp(0.0, 1.0);
        let mut converged = false;
        for _ in 0..MAX_NEWTON_STEPS {
            let d = self.pos(u) - p;
            let c1 = self.d1(u);
            let g = c1.dot(d);
            let gp = self.d2(u).dot(d) + c1.norm_sq();
            if gp.abs() < 1e-14 {
                break;
            }
            let step = g / gp;
            u = (u - step).clamp(0.0, 1.0);
            if step.abs() < 1e-12 {
                converged = true;
                break;
            }
        }
        if !converged {
            // Coarse scan plus local refinement as a bisection-style fallback.
            let mut best_u = u;
            let mut best_d = self.pos(u).dist(p);
            for k in 0..=32 {
                let cand = k as f64 / 32.0;
                let d = self.pos(cand).dist(p);
                if d < best_d {
                    best_d = d;
                    best_u = cand;
                }
            }
            let mut lo = (best_u - 1.0 / 32.0).max(0.0);
            let mut hi = (best_u + 1.0 / 32.0).min(1.0);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let g = self.d1(mid).dot(self.pos(mid) - p);
                if g > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            u = 0.5 * (lo + hi);
        }
        // Never regress relative to the warm start.
        if self.pos(u).dist(p) <= self.pos(u0.clamp(0.0, 1.0)).dist(p) {
            u
        } else {
            u0.clamp(0.0, 1.0)
        }
    }
}

fn fit_errors(mono: &MonoCurve, points: &[Vec2], params: &[f64]) -> (f64, f64) {
    let mut max_e = 0.0f64;
    let mut sum_sq = 0.0;
    for (&p, &u) in points.iter().zip(params) {
        let d = mono.pos(mono.foot_point(p, u)).dist(p);
        max_e = max_e.max(d);
        sum_sq += d * d;
    }
    (max_e, (sum_sq / points.len() as f64).sqrt())
}

/// Total least squares fit of a Bernstein curve to polyline samples.
///
/// Alternates a linear least-squares solve for control points with Newton
/// foot-point projection of the sample parameters (chord-length initialized)
/// until the largest parameter update falls below [`PARAM_CONVERGENCE`].
pub fn fit_polyline_tls(polyline: &Polyline, degree: usize) -> Result<FitResult> {
    fit_points_tls(&polyline.points, degree)
}

pub fn fit_points_tls(points: &[Vec2], degree: usize) -> Result<FitResult> {
    if points.len() < degree + 1 {
        return Err(EpError::NotEnoughSamples {
            need: degree + 1,
            got: points.len(),
        });
    }
    let mut params = chord_length_params(points);
    let mut flags = FitFlags::default();
    let mut ctrl: Vec<Vec2> = Vec::new();
    #[cfg(debug_assertions)]
    let mut prev_sq = f64::INFINITY;
    let last = points.len() - 1;
    for _ in 0..MAX_TLS_ITERATIONS {
        let (solved, rank) = solve_bernstein_ls_clamped(points, &params, degree);
        ctrl = if rank < degree + 1 {
            flags.degree_reduced = true;
            let eff = (rank.max(3) - 2).max(1);
            let (reduced, _) = solve_bernstein_ls_clamped(points, &params, eff);
            elevate_to(reduced, degree)
        } else {
            solved
        };
        let mono = MonoCurve::from_control(&ctrl);
        #[cfg(debug_assertions)]
        {
            let sq: f64 = points
                .iter()
                .zip(&params)
                .map(|(&p, &u)| mono.pos(u).dist(p).powi(2))
                .sum();
            debug_assert!(
                flags.degree_reduced || sq <= prev_sq + 1e-9,
                "TLS error increased: {sq} > {prev_sq}"
            );
        }
        // Endpoint parameters stay pinned to 0 and 1.
        let mut max_update = 0.0f64;
        let new_params: Vec<f64> = points
            .iter()
            .zip(&params)
            .enumerate()
            .map(|(i, (&p, &u))| {
                if i == 0 || i == last {
                    return u;
                }
                let nu = mono.foot_point(p, u);
                max_update = max_update.max((nu - u).abs());
                nu
            })
            .collect();
        params = new_params;
        #[cfg(debug_assertions)]
        {
            prev_sq = points
                .iter()
                .zip(&params)
                .map(|(&p, &u)| mono.pos(u).dist(p).powi(2))
                .sum();
        }
        if max_update < PARAM_CONVERGENCE {
            break;
        }
    }
    // The alternation converges only linearly once close; polish with joint
    // Gauss-Newton over interior control points and interior parameters.
    if !flags.degree_reduced {
        gauss_newton_refine(points, &mut ctrl, &mut params);
    }
    let mono = MonoCurve::from_control(&ctrl);
    let (max_error, rms_error) = fit_errors(&mono, points, &params);
    let curve = PolyCurve2D::new(Basis::Bernstein, (0.0, 1.0), ctrl)?;
    Ok(FitResult {
        curve,
        max_error,
        rms_error,
        flags,
    })
}

/// Recursively bisect at the middle sample point until each segment fits
/// under `threshold` (max point distance). Adjacent segments share their
/// boundary sample.
pub fn split_until_fit(
    polyline: &Polyline,
    degree: usize,
    threshold: f64,
) -> Result<Vec<FitResult>> {
    assert!(threshold > 0.0, "threshold must be positive");
    let mut out = Vec::new();
    split_rec(&polyline.points, degree, threshold, &mut out)?;
    Ok(out)
}

fn split_rec(
    points: &[Vec2],
    degree: usize,
    threshold: f64,
    out: &mut Vec<FitResult>,
) -> Result<()> {
    let mut fit = fit_points_tls(points, degree.min(points.len() - 1)).map(|mut f| {
        if points.len() < degree + 1 {
            f.flags.degree_reduced = true;
            f.curve = PolyCurve2D::new(
                Basis::Bernstein,
                f.curve.interval,
                elevate_to(f.curve.coeffs.clone(), degree),
            )
            .expect("elevation preserves validity");
        }
        f
    })?;
    if fit.max_error < threshold {
        out.push(fit);
        return Ok(());
    }
    if points.len() < 3 || points.len() < degree + 1 {
        fit.flags.irreducible = true;
        out.push(fit);
        return Ok(());
    }
    let mid = points.len() / 2;
    split_rec(&points[..=mid], degree, threshold, out)?;
    split_rec(&points[mid..], degree, threshold, out)?;
    Ok(())
}

/// Weighted linear least squares history fit in Bernstein basis over the
/// valid samples, weights 1/noise_std^2. The curve interval is
/// [first valid t, last valid t]; the curve value at the interval end is the
/// tracked current position.
pub fn fit_history_wls(track: &ObservedTrack, degree: usize) -> Result<FitResult> {
    let valid: Vec<&ObservedSample> = track.valid_samples().collect();
    if valid.len() < 2 {
        return Err(EpError::NotEnoughSamples {
            need: 2,
            got: valid.len(),
        });
    }
    let mut flags = FitFlags::default();
    let eff_degree = if valid.len() < degree + 1 {
        flags.degree_reduced = true;
        valid.len() - 1
    } else {
        degree
    };
    let t0 = valid[0].t;
    let t1 = valid[valid.len() - 1].t;
    let points: Vec<Vec2> = valid.iter().map(|s| s.pos()).collect();
    let params: Vec<f64> = valid.iter().map(|s| (s.t - t0) / (t1 - t0)).collect();
    let w = if track.noise_std > 0.0 {
        1.0 / (track.noise_std * track.noise_std)
    } else {
        1.0
    };
    let weights = vec![w; points.len()];
    let (solved, rank) = solve_bernstein_ls(&points, &params, Some(&weights), eff_degree);
    let ctrl = if rank < eff_degree + 1 {
        flags.degree_reduced = true;
        let eff = rank.max(2) - 1;
        let (reduced, _) = solve_bernstein_ls(&points, &params, Some(&weights), eff);
        elevate_to(reduced, degree)
    } else {
        elevate_to(solved, degree)
    };
    let curve = PolyCurve2D::new(Basis::Bernstein, (t0, t1), ctrl)?;
    let mut max_e = 0.0f64;
    let mut sum_sq = 0.0;
    for s in &valid {
        let d = curve.evaluate(s.t)?.dist(s.pos());
        max_e = max_e.max(d);
        sum_sq += d * d;
    }
    Ok(FitResult {
        curve,
        max_error: max_e,
        rms_error: (sum_sq / valid.len() as f64).sqrt(),
        flags,
    })
}
