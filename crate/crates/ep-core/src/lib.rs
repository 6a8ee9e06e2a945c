//! Polynomial trajectory representation toolkit: Bernstein curve fitting for
//! agent histories and map geometry, control-point features, a compact
//! multi-modal encoder/decoder predictor with closed-form polynomial
//! trajectory reconstruction, and an ID-vs-OoD evaluation harness.

pub mod analysis;
pub mod curve;
pub mod error;
pub mod eval;
pub mod features;
pub mod fit;
pub mod generator;
pub mod geom;
pub mod model;
pub mod scenario;

pub use curve::{Basis, DerivativeOperator, MonomialBasisVector, PolyCurve2D};
pub use error::{EpError, Result};
pub use eval::{delta_report, evaluate_set, DeltaReport, EvalReport, MetricSpec, MetricValues};
pub use generator::{generate_synthetic, GeneratorConfig};
pub use fit::{FitResult, ObservedTrack, Polyline, Semantic};
pub use geom::Vec2;
