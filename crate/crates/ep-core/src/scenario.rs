//! Canonical scenario data model and dataset homogenization.
//!
//! Raw scenarios carry a full timeline per agent plus map polylines; the
//! homogenizer re-slices them to a 5 s history (51 samples, t in [-5, 0]),
//! a per-profile future horizon, lane-center/crosswalk map content only and a
//! single fully observed, non-ego focal agent.

use crate::error::{EpError, Result};
use crate::features::FramePose;
use crate::fit::{
    fit_history_wls, split_until_fit, FitResult, ObservedSample, ObservedTrack, Polyline, Semantic,
};
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
pub const HISTORY_SECONDS: f64 = 5.0;
pub const HISTORY_STEPS: usize = 51; // 50 past steps + current
pub const STEP_SECONDS: f64 = 0.1;
pub const MAP_FIT_DEGREE: usize = 3;
pub const MAP_FIT_THRESHOLD: f64 = 0.1;
pub const HISTORY_FIT_DEGREE: usize = 5;
/// Minimum evaluable future required of any homogenized scenario.
pub const MIN_FUTURE_SECONDS: f64 = 4.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    Ego,
}

impl AgentClass {
    /// Per-class observation noise std in meters (configuration values).
    pub fn default_noise_std(self) -> f64 {
        match self {
            AgentClass::Vehicle | AgentClass::Ego => 0.15,
            AgentClass::Pedestrian => 0.10,
            AgentClass::Cyclist => 0.12,
        }
    }

    pub fn index(self) -> usize {
        match self {
            AgentClass::Vehicle => 0,
            AgentClass::Pedestrian => 1,
            AgentClass::Cyclist => 2,
            AgentClass::Ego => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    A2like,
    WOlike,
    Synthetic,
}

/// Homogenization input profile; decides horizon and focal selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceProfile {
    A2like,
    WOlike,
}

impl SourceProfile {
    pub fn future_seconds(self) -> f64 {
        match self {
            SourceProfile::A2like => 6.0,
            SourceProfile::WOlike => 4.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub class: AgentClass,
    pub is_focal: bool,
    /// 51 history samples on the 10 Hz grid, t in [-5.0, 0.0].
    pub observations: Vec<ObservedSample>,
    /// Ground-truth future on the 10 Hz grid, t in (0.0, horizon].
    pub future: Vec<ObservedSample>,
}

impl Agent {
    pub fn fully_observed(&self) -> bool {
        self.observations.iter().all(|s| s.valid) && self.future.iter().all(|s| s.valid)
    }

    pub fn history_track(&self) -> Result<ObservedTrack> {
        ObservedTrack::new(self.observations.clone(), self.class.default_noise_std())
    }

    /// Degree-5 weighted least squares fit of the history window.
    pub fn fit_history(&self) -> Result<FitResult> {
        fit_history_wls(&self.history_track()?, HISTORY_FIT_DEGREE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub semantic: Semantic,
    #[serde(flatten)]
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedScenario {
    pub version: u32,
    pub source: Source,
    pub focal_id: String,
    pub agents: Vec<Agent>,
    pub map: Vec<MapElement>,
}

impl HomogenizedScenario {
    pub fn focal(&self) -> &Agent {
        self.agents
            .iter()
            .find(|a| a.id == self.focal_id)
            .expect("focal agent present")
    }

    pub fn horizon_seconds(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.future.len())
            .max()
            .unwrap_or(0) as f64
            * STEP_SECONDS
    }

    /// Checks the homogenized-scenario invariants.
    pub fn validate(&self) -> Result<()> {
        if self.agents.iter().filter(|a| a.is_focal).count() != 1 {
            return Err(EpError::ScenarioRejected(
                "exactly one focal agent required".into(),
            ));
        }
        let focal = self
            .agents
            .iter()
            .find(|a| a.is_focal)
            .expect("checked above");
        if focal.id != self.focal_id {
            return Err(EpError::ScenarioRejected("focal_id mismatch".into()));
        }
        if focal.class == AgentClass::Ego {
            return Err(EpError::ScenarioRejected("ego cannot be focal".into()));
        }
        if !focal.fully_observed() {
            return Err(EpError::ScenarioRejected(
                "focal agent must be fully observed".into(),
            ));
        }
        for a in &self.agents {
            if a.observations.len() != HISTORY_STEPS {
                return Err(EpError::ScenarioRejected(format!(
                    "agent {} history has {} steps, expected {HISTORY_STEPS}",
                    a.id,
                    a.observations.len()
                )));
            }
            if (a.observations[0].t + HISTORY_SECONDS).abs() > 1e-9
                || a.observations[HISTORY_STEPS - 1].t.abs() > 1e-9
            {
                return Err(EpError::ScenarioRejected(format!(
                    "agent {} history window is not [-5, 0]",
                    a.id
                )));
            }
        }
        if self
            .map
            .iter()
            .any(|m| !matches!(m.semantic, Semantic::LaneCenter | Semantic::Crosswalk))
        {
            return Err(EpError::ScenarioRejected(
                "map may only contain lane centers and crosswalks".into(),
            ));
        }
        Ok(())
    }

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

/// Raw map semantics before homogenization filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RawSemantic {
    LaneCenter,
    Crosswalk,
    LaneBoundary,
    JunctionLane,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMapElement {
    pub semantic: RawSemantic,
    pub points: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAgent {
    pub id: String,
    pub class: AgentClass,
    /// Focal label (A2-like) or focal candidacy (WO-like).
    pub is_focal: bool,
    /// Full-timeline observations at 10 Hz, timestamps from scenario start.
    pub observations: Vec<ObservedSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScenario {
    pub version: u32,
    pub agents: Vec<RawAgent>,
    pub map: Vec<RawMapElement>,
}

impl RawScenario {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    fn start_time(&self) -> Option<f64> {
        self.agents
            .iter()
            .flat_map(|a| a.observations.first())
            .map(|s| s.t)
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.min(t)))
            })
    }

    fn end_time(&self) -> Option<f64> {
        self.agents
            .iter()
            .flat_map(|a| a.observations.last())
            .map(|s| s.t)
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.max(t)))
            })
    }
}

/// Resample onto the exact 10 Hz grid relative to `anchor`; steps without a
/// matching valid raw sample become invalid placeholders.
fn resample_grid(samples: &[ObservedSample], anchor: f64, steps: &[i64]) -> Vec<ObservedSample> {
    steps
        .iter()
        .map(|&k| {
            let t = k as f64 * STEP_SECONDS;
            let raw_t = anchor + t;
            let hit = samples
                .iter()
                .find(|s| (s.t - raw_t).abs() < STEP_SECONDS / 2.0 - 1e-9);
            match hit {
                Some(s) if s.valid => ObservedSample::new(round_step(t), s.pos(), true),
                _ => ObservedSample::new(round_step(t), Vec2::ZERO, false),
            }
        })
        .collect()
}

fn round_step(t: f64) -> f64 {
    (t * 10.0).round() / 10.0
}

/// Homogenize a raw scenario to the canonical protocol.
///
/// The history window ends 5.0 s after scenario start; the future horizon is
/// 6.0 s for A2-like and 4.1 s for WO-like input. The focal agent is the
/// labeled focal for A2-like input, and the first fully observed non-ego
/// focal candidate (input order) for WO-like input.
pub fn homogenize(raw: &RawScenario, profile: SourceProfile) -> Result<HomogenizedScenario> {
    let t_start = raw
        .start_time()
        .ok_or_else(|| EpError::ScenarioRejected("scenario has no observations".into()))?;
    let t_end = raw.end_time().expect("non-empty by start_time check");
    if t_end - t_start < 9.1 - 1e-9 {
        return Err(EpError::ScenarioRejected(format!(
            "scenario spans {:.1} s, need at least 9.1 s",
            t_end - t_start
        )));
    }
    let anchor = t_start + HISTORY_SECONDS;
    let available_future = t_end - anchor;
    if available_future < MIN_FUTURE_SECONDS - 1e-9 {
        return Err(EpError::ScenarioRejected(format!(
            "future horizon {available_future:.2} s is shorter than {MIN_FUTURE_SECONDS} s"
        )));
    }
    let horizon_steps = ((profile.future_seconds().min(available_future) + 1e-9) / STEP_SECONDS)
        .floor() as i64;

    let hist_steps: Vec<i64> = (-50..=0).collect();
    let fut_steps: Vec<i64> = (1..=horizon_steps).collect();

    let mut agents: Vec<Agent> = raw
        .agents
        .iter()
        .map(|ra| Agent {
            id: ra.id.clone(),
            class: ra.class,
            is_focal: false,
            observations: resample_grid(&ra.observations, anchor, &hist_steps),
            future: resample_grid(&ra.observations, anchor, &fut_steps),
        })
        .collect();

    // Agents whose history cannot support a fit are dropped.
    agents.retain(|a| a.observations.iter().filter(|s| s.valid).count() >= 2);

    let focal_id = {
        let candidate_ids: Vec<&str> = raw
            .agents
            .iter()
            .filter(|ra| ra.is_focal)
            .map(|ra| ra.id.as_str())
            .collect();
        let eligible = |a: &Agent| a.class != AgentClass::Ego && a.fully_observed();
        let found = match profile {
            SourceProfile::A2like => candidate_ids
                .first()
                .and_then(|id| agents.iter().find(|a| a.id == *id))
                .filter(|a| eligible(a)),
            SourceProfile::WOlike => candidate_ids
                .iter()
                .filter_map(|id| agents.iter().find(|a| a.id == *id))
                .find(|a| eligible(a)),
        };
        found
            .map(|a| a.id.clone())
            .ok_or_else(|| EpError::ScenarioRejected("no valid focal agent".into()))?
    };
    for a in &mut agents {
        a.is_focal = a.id == focal_id;
    }

    // Validate that every retained agent history is fittable.
    for a in &agents {
        a.fit_history()?;
    }

    let mut map = Vec::new();
    for elem in &raw.map {
        let semantic = match elem.semantic {
            RawSemantic::LaneCenter => Semantic::LaneCenter,
            RawSemantic::Crosswalk => Semantic::Crosswalk,
            _ => continue,
        };
        let polyline = Polyline::new(elem.points.clone(), semantic)?;
        for fit in split_until_fit(&polyline, MAP_FIT_DEGREE, MAP_FIT_THRESHOLD)? {
            map.push(MapElement { semantic, fit });
        }
    }

    let scenario = HomogenizedScenario {
        version: SCHEMA_VERSION,
        source: match profile {
            SourceProfile::A2like => Source::A2like,
            SourceProfile::WOlike => Source::WOlike,
        },
        focal_id,
        agents,
        map,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Reconstruct a raw view of a homogenized scenario (timeline re-anchored at
/// 5.0 s); used for idempotence checks and re-homogenization.
impl From<&HomogenizedScenario> for RawScenario {
    fn from(s: &HomogenizedScenario) -> RawScenario {
        let agents = s
            .agents
            .iter()
            .map(|a| RawAgent {
                id: a.id.clone(),
                class: a.class,
                is_focal: a.is_focal,
                observations: a
                    .observations
                    .iter()
                    .chain(&a.future)
                    .map(|o| ObservedSample::new(round_step(o.t + HISTORY_SECONDS), o.pos(), o.valid))
                    .collect(),
            })
            .collect();
        let map = s
            .map
            .iter()
            .map(|m| {
                let n = (crate::analysis::arc_length(&m.fit.curve).unwrap_or(2.0).ceil() as usize)
                    .max(8);
                RawMapElement {
                    semantic: match m.semantic {
                        Semantic::LaneCenter => RawSemantic::LaneCenter,
                        Semantic::Crosswalk => RawSemantic::Crosswalk,
                        Semantic::Other => RawSemantic::Other,
                    },
                    points: (0..=n)
                        .map(|i| m.fit.curve.evaluate(i as f64 / n as f64).expect("in range"))
                        .collect(),
                }
            })
            .collect();
        RawScenario {
            version: SCHEMA_VERSION,
            agents,
            map,
        }
    }
}

/// Focal coordinate frame of a scenario: origin at the focal agent's tracked
/// current position, x-axis along its current heading.
pub fn focal_frame(scenario: &HomogenizedScenario) -> Result<FramePose> {
    let fit = scenario.focal().fit_history()?;
    Ok(FramePose::from_curve_end(&fit.curve))
}

fn transform_sample(s: &ObservedSample, frame: &FramePose) -> ObservedSample {
    ObservedSample::new(s.t, frame.to_local(s.pos()), s.valid)
}

/// Express every observation, future point and map control point in the
/// focal frame.
pub fn to_focal_frame(scenario: &HomogenizedScenario) -> Result<HomogenizedScenario> {
    let frame = focal_frame(scenario)?;
    let mut out = scenario.clone();
    for a in &mut out.agents {
        for s in &mut a.observations {
            *s = transform_sample(s, &frame);
        }
        for s in &mut a.future {
            *s = transform_sample(s, &frame);
        }
    }
    for m in &mut out.map {
        for c in &mut m.fit.curve.coeffs {
            *c = frame.to_local(*c);
        }
    }
    Ok(out)
}

/// Mirror a focal-frame scenario across its longitudinal axis, exchanging
/// left and right turns. An exact involution.
pub fn flip_scenario(scenario: &HomogenizedScenario) -> HomogenizedScenario {
    let mut out = scenario.clone();
    let flip = |s: &mut ObservedSample| {
        s.position.y = -s.position.y;
    };
    for a in &mut out.agents {
        a.observations.iter_mut().for_each(flip);
        a.future.iter_mut().for_each(flip);
    }
    for m in &mut out.map {
        for c in &mut m.fit.curve.coeffs {
            c.y = -c.y;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LaneStat {
    pub lane_id: String,
    pub max_abs_curvature: f64,
    pub length_m: f64,
}

/// Per-lane curvature/length statistics over a scenario set.
pub fn lane_stats(scenarios: &[HomogenizedScenario]) -> Vec<LaneStat> {
    let mut out = Vec::new();
    for (si, s) in scenarios.iter().enumerate() {
        for (li, m) in s.map.iter().enumerate() {
            let kappa = crate::analysis::max_abs_curvature(&m.fit.curve, 512).unwrap_or(0.0);
            let len = crate::analysis::arc_length(&m.fit.curve).unwrap_or(0.0);
            out.push(LaneStat {
                lane_id: format!("{si}_{li}"),
                max_abs_curvature: kappa,
                length_m: len,
            });
        }
    }
    out
}

pub fn lane_stats_csv(stats: &[LaneStat]) -> String {
    let mut csv = String::from("lane_id,max_abs_curvature,length_m\n");
    for s in stats {
        csv.push_str(&format!(
            "{},{},{}\n",
            s.lane_id, s.max_abs_curvature, s.length_m
        ));
    }
    csv
}
