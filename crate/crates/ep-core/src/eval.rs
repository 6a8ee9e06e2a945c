//! Evaluation harness: minADE/minFDE at K ∈ {1, 6}, scenario-set reports and
//! ID-vs-OoD delta reports.
//!
//! Predicted curves are sampled at exactly the ground-truth timestamps
//! (10 Hz), so no interpolation of the truth is ever needed. Only the focal
//! agent is scored.

use crate::curve::PolyCurve2D;
use crate::error::{EpError, Result};
use crate::features::FramePose;
use crate::geom::Vec2;
use crate::model::{EpModel, PredictionSet};
use crate::scenario::{Agent, HomogenizedScenario};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_EVAL_HORIZON: f64 = 4.1;
pub const EVAL_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    /// Number of modes the multi-modal metrics minimize over.
    pub k: usize,
    /// Evaluation horizon in seconds; must be a whole number of steps.
    pub horizon: f64,
    /// Sampling step in seconds.
    pub step: f64,
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec {
            k: 6,
            horizon: DEFAULT_EVAL_HORIZON,
            step: EVAL_STEP,
        }
    }
}

impl MetricSpec {
    pub fn with_horizon(horizon: f64) -> Self {
        MetricSpec {
            horizon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(EpError::SpecMismatch("metric K must be >= 1".into()));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(EpError::SpecMismatch(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        let steps = self.horizon / self.step;
        if !(self.horizon > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(EpError::SpecMismatch(format!(
                "horizon {} is not a whole number of {} s steps",
                self.horizon, self.step
            )));
        }
        Ok(())
    }

    /// Number of future steps scored; the last one sits exactly at `horizon`.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    /// Scored timestamps step, 2·step, …, horizon.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.n_steps()).map(|k| k as f64 * self.step).collect()
    }
}

/// Mean Euclidean displacement of the best mode over all scored steps.
/// Each mode is a sampled trajectory aligned with `truth`.
pub fn min_ade(modes: &[Vec<Vec2>], truth: &[Vec2]) -> f64 {
    modes
        .iter()
        .map(|mode| {
            let mut sum = 0.0;
            for (p, q) in mode.iter().zip(truth) {
                sum += (*p - *q).norm();
            }
            sum / truth.len() as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// Euclidean displacement of the best mode at the final scored step.
pub fn min_fde(modes: &[Vec<Vec2>], truth: &[Vec2]) -> f64 {
    let last = truth.len() - 1;
    modes
        .iter()
        .map(|mode| (mode[last] - truth[last]).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Ground-truth focal positions at the scored timestamps, in world frame.
/// Any missing or invalid step inside the horizon rejects the scenario.
pub fn truth_samples(agent: &Agent, spec: &MetricSpec) -> Result<Vec<Vec2>> {
    spec.times()
        .iter()
        .map(|&t| {
            agent
                .future
                .iter()
                .find(|s| s.valid && (s.t - t).abs() < spec.step / 2.0)
                .map(|s| s.pos())
                .ok_or_else(|| {
                    EpError::ScenarioRejected(format!("truth gap at t = {t:.1} s"))
                })
        })
        .collect()
}

/// Sample a predicted curve at the scored timestamps and map it to world.
pub fn sample_mode(
    curve: &PolyCurve2D,
    frame: &FramePose,
    spec: &MetricSpec,
) -> Result<Vec<Vec2>> {
    spec.times()
        .iter()
        .map(|&t| Ok(frame.to_world(curve.evaluate(t)?)))
        .collect()
}

/// The `k` highest-probability modes, sampled at the scored timestamps.
fn top_k_modes(pred: &PredictionSet, k: usize, spec: &MetricSpec) -> Result<Vec<Vec<Vec2>>> {
    let mut order: Vec<usize> = (0..pred.modes.len()).collect();
    order.sort_by(|&a, &b| {
        pred.modes[b]
            .probability
            .total_cmp(&pred.modes[a].probability)
            .then(a.cmp(&b))
    });
    order
        .iter()
        .take(k.min(pred.modes.len()))
        .map(|&i| sample_mode(&pred.modes[i].curve, &pred.frame, spec))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub minade1: f64,
    pub minfde1: f64,
    pub minade6: f64,
    pub minfde6: f64,
}

impl MetricValues {
    fn zip(a: &MetricValues, b: &MetricValues, f: impl Fn(f64, f64) -> f64) -> MetricValues {
        MetricValues {
            minade1: f(a.minade1, b.minade1),
            minfde1: f(a.minfde1, b.minfde1),
            minade6: f(a.minade6, b.minade6),
            minfde6: f(a.minfde6, b.minfde6),
        }
    }

    fn scale(&self, s: f64) -> MetricValues {
        MetricValues {
            minade1: self.minade1 * s,
            minfde1: self.minfde1 * s,
            minade6: self.minade6 * s,
            minfde6: self.minfde6 * s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub focal_id: String,
    #[serde(flatten)]
    pub metrics: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub focal_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec: MetricSpec,
    pub n_scenarios: usize,
    pub metrics: MetricValues,
    pub per_scenario: Vec<ScenarioScore>,
    pub rejected: Vec<Rejection>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Score one scenario's focal agent: top-1 and top-K metrics.
pub fn score_prediction(
    pred: &PredictionSet,
    truth: &[Vec2],
    spec: &MetricSpec,
) -> Result<MetricValues> {
    let top1 = top_k_modes(pred, 1, spec)?;
    let topk = top_k_modes(pred, spec.k, spec)?;
    Ok(MetricValues {
        minade1: min_ade(&top1, truth),
        minfde1: min_fde(&top1, truth),
        minade6: min_ade(&topk, truth),
        minfde6: min_fde(&topk, truth),
    })
}

/// Evaluate with an arbitrary per-scenario predictor (used for oracles and
/// by `evaluate_set`). Scenarios whose truth has gaps inside the horizon or
/// whose prediction fails are listed in `rejected` with a reason.
pub fn evaluate_with(
    predict: impl Fn(&HomogenizedScenario) -> Result<PredictionSet>,
    scenarios: &[HomogenizedScenario],
    spec: &MetricSpec,
) -> Result<EvalReport> {
    spec.validate()?;
    if scenarios.is_empty() {
        return Err(EpError::EmptyEvalSet);
    }
    let mut per_scenario = Vec::new();
    let mut rejected = Vec::new();
    for scenario in scenarios {
        let focal = scenario.focal();
        match truth_samples(focal, spec).and_then(|truth| {
            let pred = predict(scenario)?;
            score_prediction(&pred, &truth, spec)
        }) {
            Ok(metrics) => per_scenario.push(ScenarioScore {
                focal_id: focal.id.clone(),
                metrics,
            }),
            Err(e) => rejected.push(Rejection {
                focal_id: focal.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if per_scenario.is_empty() {
        return Err(EpError::EmptyEvalSet);
    }
    let sum = per_scenario.iter().skip(1).fold(
        per_scenario[0].metrics,
        |acc, s| MetricValues::zip(&acc, &s.metrics, |a, b| a + b),
    );
    Ok(EvalReport {
        spec: *spec,
        n_scenarios: per_scenario.len(),
        metrics: sum.scale(1.0 / per_scenario.len() as f64),
        per_scenario,
        rejected,
    })
}

/// Score a model over a scenario set; focal agents only, deterministic.
pub fn evaluate_set(
    model: &EpModel,
    scenarios: &[HomogenizedScenario],
    spec: &MetricSpec,
) -> Result<EvalReport> {
    evaluate_with(|s| model.predict_focal(s), scenarios, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub spec: MetricSpec,
    pub id: MetricValues,
    pub ood: MetricValues,
    /// OoD − ID, meters.
    pub delta: MetricValues,
    /// 100 · delta / ID, percent.
    pub relative: MetricValues,
}

impl DeltaReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

/// Robustness deltas between an in-distribution and an out-of-distribution
/// report sharing the same metric spec.
pub fn delta_report(id: &EvalReport, ood: &EvalReport) -> Result<DeltaReport> {
    if id.spec != ood.spec {
        return Err(EpError::SpecMismatch(format!(
            "metric specs differ: {:?} vs {:?}",
            id.spec, ood.spec
        )));
    }
    let delta = MetricValues::zip(&ood.metrics, &id.metrics, |o, i| o - i);
    let relative = MetricValues::zip(&delta, &id.metrics, |d, i| {
        if i.abs() < 1e-12 {
            0.0
        } else {
            100.0 * d / i
        }
    });
    Ok(DeltaReport {
        spec: id.spec,
        id: id.metrics,
        ood: ood.metrics,
        delta,
        relative,
    })
}
