//! Control-point feature extraction for the predictor: difference vectors,
//! reference pose, time window, and coordinate-frame machinery.

use crate::curve::PolyCurve2D;
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};

/// Deltas below this norm are considered degenerate for heading extraction.
pub const HEADING_EPSILON: f64 = 1e-6;

/// A rigid coordinate frame: origin plus heading, heading in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub origin: Vec2,
    pub heading: f64,
}

impl FramePose {
    pub fn identity() -> Self {
        FramePose {
            origin: Vec2::ZERO,
            heading: 0.0,
        }
    }

    pub fn new(origin: Vec2, heading: f64) -> Self {
        FramePose {
            origin,
            heading: normalize_angle(heading),
        }
    }

    /// Frame anchored at the curve's end point, heading along the last
    /// non-degenerate control-point delta (fallback chain: most recent delta
    /// with norm >= epsilon, else +x).
    pub fn from_curve_end(curve: &PolyCurve2D) -> Self {
        let ctrl = &curve.coeffs;
        let origin = *ctrl.last().expect("non-empty curve");
        let heading = last_heading(ctrl).map_or(0.0, |d| d.y.atan2(d.x));
        FramePose::new(origin, heading)
    }

    /// World point -> frame coordinates.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotated(-self.heading)
    }

    /// Frame coordinates -> world point.
    pub fn to_world(&self, p: Vec2) -> Vec2 {
        p.rotated(self.heading) + self.origin
    }

    /// Rotate a direction (no translation).
    pub fn dir_to_local(&self, d: Vec2) -> Vec2 {
        d.rotated(-self.heading)
    }

    pub fn dir_to_world(&self, d: Vec2) -> Vec2 {
        d.rotated(self.heading)
    }
}

fn normalize_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    a
}

/// Most recent control-point delta with norm above the epsilon.
fn last_heading(ctrl: &[Vec2]) -> Option<Vec2> {
    ctrl.windows(2)
        .rev()
        .map(|w| w[1] - w[0])
        .find(|d| d.norm() >= HEADING_EPSILON)
        .and_then(|d| d.normalized())
}

/// Rigid transform of a curve into a frame (control points map as points).
pub fn to_frame(curve: &PolyCurve2D, frame: &FramePose) -> PolyCurve2D {
    curve.transformed(-frame.heading, (-frame.origin).rotated(-frame.heading))
}

/// Inverse of [`to_frame`].
pub fn from_frame(curve: &PolyCurve2D, frame: &FramePose) -> PolyCurve2D {
    curve.transformed(frame.heading, frame.origin)
}

/// Agent features: 5 control-point deltas, reference pose (last control point
/// plus unit heading), time window and class id. 16 numeric entries.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentFeatures {
    pub deltas: Vec<Vec2>,
    pub ref_point: Vec2,
    pub heading_cos: f64,
    pub heading_sin: f64,
    pub time_window: (f64, f64),
    pub class_id: usize,
    pub degenerate_heading: bool,
}

impl AgentFeatures {
    /// Flat numeric layout: [deltas(10), ref(2), cos, sin, tw(2)].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.deltas.len() + 6);
        for d in &self.deltas {
            v.push(d.x);
            v.push(d.y);
        }
        v.extend_from_slice(&[
            self.ref_point.x,
            self.ref_point.y,
            self.heading_cos,
            self.heading_sin,
            self.time_window.0,
            self.time_window.1,
        ]);
        v
    }
}

/// Map element features: 3 deltas plus reference pose at the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFeatures {
    pub deltas: Vec<Vec2>,
    pub ref_point: Vec2,
    pub heading_cos: f64,
    pub heading_sin: f64,
    pub semantic_id: usize,
    pub degenerate_heading: bool,
}

impl MapFeatures {
    /// Flat numeric layout: [deltas(6), ref(2), cos, sin].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.deltas.len() + 4);
        for d in &self.deltas {
            v.push(d.x);
            v.push(d.y);
        }
        v.extend_from_slice(&[
            self.ref_point.x,
            self.ref_point.y,
            self.heading_cos,
            self.heading_sin,
        ]);
        v
    }
}

fn control_deltas(ctrl: &[Vec2]) -> Vec<Vec2> {
    ctrl.windows(2).map(|w| w[1] - w[0]).collect()
}

fn heading_of(ctrl: &[Vec2]) -> (f64, f64, bool) {
    match last_heading(ctrl) {
        Some(d) => (d.x, d.y, false),
        None => (1.0, 0.0, true),
    }
}

/// Features of a degree-5 history curve in the given frame.
pub fn agent_features(
    history: &PolyCurve2D,
    time_window: (f64, f64),
    class_id: usize,
    frame: &FramePose,
) -> AgentFeatures {
    let local = to_frame(history, frame);
    let deltas = control_deltas(&local.coeffs);
    let (heading_cos, heading_sin, degenerate_heading) = heading_of(&local.coeffs);
    AgentFeatures {
        ref_point: *local.coeffs.last().expect("non-empty"),
        deltas,
        heading_cos,
        heading_sin,
        time_window,
        class_id,
        degenerate_heading,
    }
}

fn first_heading(ctrl: &[Vec2]) -> (f64, f64, bool) {
    let d = ctrl
        .windows(2)
        .map(|w| w[1] - w[0])
        .find(|d| d.norm() >= HEADING_EPSILON)
        .and_then(|d| d.normalized());
    match d {
        Some(d) => (d.x, d.y, false),
        None => (1.0, 0.0, true),
    }
}

/// Features of a degree-3 map curve; the initial point is the reference.
pub fn map_features(curve: &PolyCurve2D, semantic_id: usize, frame: &FramePose) -> MapFeatures {
    let local = to_frame(curve, frame);
    let deltas = control_deltas(&local.coeffs);
    let (heading_cos, heading_sin, degenerate_heading) = first_heading(&local.coeffs);
    MapFeatures {
        ref_point: local.coeffs[0],
        deltas,
        heading_cos,
        heading_sin,
        semantic_id,
        degenerate_heading,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Basis;
    use crate::fit::{fit_history_wls, ObservedSample, ObservedTrack};

    fn bez(coeffs: Vec<[f64; 2]>, interval: (f64, f64)) -> PolyCurve2D {
        PolyCurve2D::new(
            Basis::Bernstein,
            interval,
            coeffs.into_iter().map(Vec2::from).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_frame_is_noop() {
        let c = bez(vec![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0], [6.0, 1.0]], (0.0, 1.0));
        let t = to_frame(&c, &FramePose::identity());
        assert_eq!(c, t);
    }

    #[test]
    fn self_frame_normalizes_endpoint_and_heading() {
        let c = bez(
            vec![[0.0, 0.0], [1.0, 1.0], [2.0, 3.0], [4.0, 4.0], [6.0, 4.5], [8.0, 5.0]],
            (-5.0, 0.0),
        );
        let frame = FramePose::from_curve_end(&c);
        let local = to_frame(&c, &frame);
        let end = *local.coeffs.last().unwrap();
        assert!(end.norm() < 1e-12);
        let (cx, sx, degen) = super::heading_of(&local.coeffs);
        assert!(!degen);
        assert!((cx - 1.0).abs() < 1e-12 && sx.abs() < 1e-12);
    }

    #[test]
    fn frame_roundtrip_is_identity() {
        let c = bez(vec![[0.0, 0.0], [1.0, 2.0], [3.0, 1.0], [4.0, 3.0]], (0.0, 1.0));
        let f = FramePose::new(Vec2::new(7.0, -2.0), 1.2);
        let rt = from_frame(&to_frame(&c, &f), &f);
        for (a, b) in c.coeffs.iter().zip(&rt.coeffs) {
            assert!(a.dist(*b) <= 1e-12);
        }
    }

    #[test]
    fn stationary_agent_gets_heading_fallback() {
        let c = bez(vec![[3.0, 3.0]; 6], (-5.0, 0.0));
        let feats = agent_features(&c, (-5.0, 0.0), 0, &FramePose::identity());
        assert!(feats.degenerate_heading);
        assert_eq!((feats.heading_cos, feats.heading_sin), (1.0, 0.0));
        assert!(feats.deltas.iter().all(|d| d.norm() == 0.0));
    }

    #[test]
    fn constant_velocity_deltas_are_uniform() {
        // 10 m/s along +x for 5 s, fit a degree-5 curve, difference controls.
        let samples: Vec<ObservedSample> = (0..=50)
            .map(|k| {
                let t = -5.0 + 0.1 * k as f64;
                ObservedSample::new(t, Vec2::new(10.0 * (t + 5.0), 0.0), true)
            })
            .collect();
        let track = ObservedTrack::new(samples, 0.0).unwrap();
        let fit = fit_history_wls(&track, 5).unwrap();
        let feats = agent_features(&fit.curve, (-5.0, 0.0), 0, &FramePose::identity());
        assert_eq!(feats.deltas.len(), 5);
        for d in &feats.deltas {
            assert!((d.x - 10.0).abs() < 1e-6 && d.y.abs() < 1e-6, "{d:?}");
        }
        assert_eq!(feats.to_vec().len(), 16);
    }

    #[test]
    fn straight_lane_along_y_reference_pose() {
        let c = bez(
            vec![[0.0, 0.0], [0.0, 10.0], [0.0, 20.0], [0.0, 30.0]],
            (0.0, 1.0),
        );
        let feats = map_features(&c, 0, &FramePose::identity());
        assert!(feats.ref_point.norm() < 1e-12);
        assert!(feats.heading_cos.abs() < 1e-12);
        assert!((feats.heading_sin - 1.0).abs() < 1e-12);
        assert_eq!(feats.deltas.len(), 3);
        assert_eq!(feats.to_vec().len(), 10);
    }

    #[test]
    fn flipped_lane_negates_lateral_deltas() {
        let c = bez(
            vec![[0.0, 0.0], [10.0, 2.0], [20.0, 5.0], [30.0, 9.0]],
            (0.0, 1.0),
        );
        let mut flipped = c.clone();
        for p in &mut flipped.coeffs {
            p.y = -p.y;
        }
        let f1 = map_features(&c, 0, &FramePose::identity());
        let f2 = map_features(&flipped, 0, &FramePose::identity());
        for (a, b) in f1.deltas.iter().zip(&f2.deltas) {
            assert!((a.x - b.x).abs() < 1e-12);
            assert!((a.y + b.y).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_extraction_is_frame_equivariant() {
        let c = bez(
            vec![[0.0, 0.0], [1.0, 1.0], [2.5, 1.5], [4.0, 1.0], [5.5, 0.0], [7.0, -1.0]],
            (-5.0, 0.0),
        );
        let f = FramePose::new(Vec2::new(3.0, -1.0), 0.7);
        let a = agent_features(&to_frame(&c, &f), (-5.0, 0.0), 0, &FramePose::identity());
        let b = agent_features(&c, (-5.0, 0.0), 0, &f);
        for (x, y) in a.to_vec().iter().zip(b.to_vec().iter()) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn map_features_compose_across_frames() {
        let c = bez(
            vec![[0.0, 0.0], [10.0, 2.0], [20.0, 5.0], [30.0, 9.0]],
            (0.0, 1.0),
        );
        let focal = FramePose::new(Vec2::new(5.0, 5.0), -0.4);
        let own = FramePose::new(c.coeffs[0], 0.3);
        let via_focal = map_features(&c, 0, &focal);
        let composed = map_features(&to_frame(&to_frame(&c, &own), &FramePose::identity()), 0, &FramePose::identity());
        let direct_own = map_features(&c, 0, &own);
        for (x, y) in composed.to_vec().iter().zip(direct_own.to_vec().iter()) {
            assert!((x - y).abs() <= 1e-9);
        }
        // Focal-frame and own-frame features differ exactly by the rigid
        // transform between the frames: deltas rotate by the heading gap.
        let gap = own.heading - focal.heading;
        for (df, done) in via_focal.deltas.iter().zip(direct_own.deltas.iter()) {
            let rotated = done.rotated(gap);
            assert!(df.dist(rotated) <= 1e-9);
        }
    }

    #[test]
    fn control_points_recoverable_from_ref_and_deltas() {
        let c = bez(
            vec![[0.0, 0.0], [1.0, 3.0], [2.0, 2.0], [3.5, 1.0], [5.0, 2.0], [6.0, 2.5]],
            (-5.0, 0.0),
        );
        let feats = agent_features(&c, (-5.0, 0.0), 0, &FramePose::identity());
        // Reverse cumulative sum from the last control point.
        let mut ctrl = vec![feats.ref_point];
        for d in feats.deltas.iter().rev() {
            let prev = *ctrl.last().unwrap() - *d;
            ctrl.push(prev);
        }
        ctrl.reverse();
        for (a, b) in ctrl.iter().zip(&c.coeffs) {
            assert!(a.dist(*b) <= 1e-12);
        }
    }
}
