//! Shared fixtures for the pipeline benchmarks.

use ep_core::fit::{Polyline, Semantic};
use ep_core::generator::{generate_synthetic, GeneratorConfig};
use ep_core::geom::Vec2;
use ep_core::scenario::HomogenizedScenario;

/// A 60 m radius-40 arc sampled at roughly 1 m spacing.
pub fn arc_polyline() -> Polyline {
    let r = 40.0_f64;
    let arc = 1.5_f64;
    let n = (r * arc).ceil() as usize;
    let points = (0..=n)
        .map(|i| {
            let a = arc * i as f64 / n as f64;
            Vec2::new(r * a.cos(), r * a.sin())
        })
        .collect();
    Polyline::new(points, Semantic::LaneCenter).unwrap()
}

pub fn scenarios(n: usize) -> Vec<HomogenizedScenario> {
    generate_synthetic(&GeneratorConfig::id_profile(42), n).unwrap()
}
