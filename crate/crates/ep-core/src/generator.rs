//! Synthetic scenario generator.
//!
//! Stands in for real dataset archives: agents follow constant-speed motion
//! along procedurally generated lanes (circular arcs or straights), with
//! Gaussian observation noise on the history window only. Two configs with
//! different lane length/curvature distributions realize an in-distribution
//! vs out-of-distribution pair.

use crate::error::{EpError, Result};
use crate::fit::ObservedSample;
use crate::geom::Vec2;
use crate::scenario::{
    homogenize, AgentClass, HomogenizedScenario, RawAgent, RawMapElement, RawScenario,
    RawSemantic, Source, SourceProfile, SCHEMA_VERSION, STEP_SECONDS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Raw timeline length per generated scenario: 5 s history + 6 s future.
const TIMELINE_SECONDS: f64 = 11.0;
/// Lateral spacing between parallel agent paths / lanes.
const LANE_OFFSET_M: f64 = 3.5;

/// Closed interval a value is drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn check(&self, name: &str, min_allowed: f64) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() || self.max < self.min {
            return Err(EpError::InfeasibleConfig(format!(
                "{name} range [{}, {}] is not a valid interval",
                self.min, self.max
            )));
        }
        if self.min < min_allowed {
            return Err(EpError::InfeasibleConfig(format!(
                "{name} must be >= {min_allowed}, got {}",
                self.min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Lane arc length in meters.
    pub lane_length: Range,
    /// Unsigned lane curvature in 1/m (sign is drawn per lane).
    pub lane_curvature: Range,
    /// Number of agents per scenario (inclusive), ego and focal included.
    pub agent_count: (usize, usize),
    /// Agent speed along the lane in m/s.
    pub speed: Range,
    /// Std of the Gaussian noise added to history observations, meters.
    pub noise_std: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    /// In-distribution profile: long, nearly straight lanes.
    pub fn id_profile(seed: u64) -> Self {
        GeneratorConfig {
            lane_length: Range::new(90.0, 140.0),
            lane_curvature: Range::new(0.0, 0.004),
            agent_count: (2, 4),
            speed: Range::new(5.0, 11.0),
            noise_std: 0.05,
            seed,
        }
    }

    /// Out-of-distribution profile: short, curvy lanes.
    pub fn ood_profile(seed: u64) -> Self {
        GeneratorConfig {
            lane_length: Range::new(28.0, 55.0),
            lane_curvature: Range::new(0.015, 0.045),
            agent_count: (2, 4),
            speed: Range::new(2.0, 5.0),
            noise_std: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lane_length.check("lane_length", 1e-6)?;
        self.lane_curvature.check("lane_curvature", 0.0)?;
        self.speed.check("speed", 0.0)?;
        if self.agent_count.0 < 2 || self.agent_count.1 < self.agent_count.0 {
            return Err(EpError::InfeasibleConfig(format!(
                "agent_count range ({}, {}) must be increasing with min >= 2 (ego + focal)",
                self.agent_count.0, self.agent_count.1
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(EpError::InfeasibleConfig(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// A circular-arc (or straight) lane with unit-speed parameterization.
struct Lane {
    start: Vec2,
    heading: f64,
    curvature: f64,
    length: f64,
}

impl Lane {
    fn sample(config: &GeneratorConfig, rng: &mut impl Rng) -> Self {
        let mag = config.lane_curvature.sample(rng);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        Lane {
            start: Vec2::new(rng.gen_range(-5.0..=5.0), rng.gen_range(-5.0..=5.0)),
            heading: rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI),
            curvature: sign * mag,
            length: config.lane_length.sample(rng),
        }
    }

    /// Point at arc length `s`, shifted `offset` meters along the left normal.
    fn point(&self, s: f64, offset: f64) -> Vec2 {
        let (sin_h, cos_h) = self.heading.sin_cos();
        let center = if self.curvature.abs() < 1e-9 {
            return self.start
                + Vec2::new(cos_h, sin_h) * s
                + Vec2::new(-sin_h, cos_h) * offset;
        } else {
            let r = 1.0 / self.curvature;
            self.start + Vec2::new(-sin_h, cos_h) * r
        };
        let r = 1.0 / self.curvature;
        let theta = self.heading + self.curvature * s;
        // Radius shrinks/grows with a lateral offset toward/away from center.
        let r_off = r - offset;
        center + Vec2::new(theta.sin(), -theta.cos()) * r_off
    }

    /// Polyline along the lane at roughly 1 m spacing.
    fn polyline(&self, offset: f64) -> Vec<Vec2> {
        let n = (self.length.ceil() as usize).max(2);
        (0..=n)
            .map(|i| self.point(self.length * i as f64 / n as f64, offset))
            .collect()
    }
}

fn agent_track(
    lane: &Lane,
    offset: f64,
    s0: f64,
    speed: f64,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Vec<ObservedSample> {
    let noise = Normal::new(0.0, noise_std.max(1e-12)).expect("valid std");
    let steps = (TIMELINE_SECONDS / STEP_SECONDS).round() as usize;
    (0..=steps)
        .map(|k| {
            let t = k as f64 * STEP_SECONDS;
            let mut p = lane.point(s0 + speed * t, offset);
            // Noise corrupts the observed history only; the future stays
            // exact so it can serve as ground truth.
            if noise_std > 0.0 && t <= 5.0 + 1e-9 {
                p = p + Vec2::new(noise.sample(rng), noise.sample(rng));
            }
            ObservedSample::new(t, p, true)
        })
        .collect()
}

fn generate_raw(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> RawScenario {
    let lane = Lane::sample(config, rng);
    let n_agents = rng.gen_range(config.agent_count.0..=config.agent_count.1);

    let mut agents = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        // Agent 0 is the ego, agent 1 the labeled focal; the rest alternate
        // between vehicles and cyclists on parallel offsets of the same lane.
        let (id, class, is_focal, offset) = match i {
            0 => ("ego".to_string(), AgentClass::Ego, false, 0.0),
            1 => ("focal".to_string(), AgentClass::Vehicle, true, LANE_OFFSET_M),
            _ => {
                let class = if i % 2 == 0 {
                    AgentClass::Vehicle
                } else {
                    AgentClass::Cyclist
                };
                let side = if i % 2 == 0 { -1.0 } else { 1.0 };
                let lanes_out = (i / 2) as f64;
                (format!("agent{i}"), class, false, side * lanes_out * LANE_OFFSET_M)
            }
        };
        let s0 = rng.gen_range(0.0..=(lane.length / 4.0));
        // Clamp speed so the agent never runs off the lane end.
        let speed = config
            .speed
            .sample(rng)
            .min(((lane.length - s0) / TIMELINE_SECONDS).max(0.0));
        agents.push(RawAgent {
            id,
            class,
            is_focal,
            observations: agent_track(&lane, offset, s0, speed, config.noise_std, rng),
        });
    }

    let map = vec![
        RawMapElement {
            semantic: RawSemantic::LaneCenter,
            points: lane.polyline(0.0),
        },
        RawMapElement {
            semantic: RawSemantic::LaneCenter,
            points: lane.polyline(LANE_OFFSET_M),
        },
    ];

    RawScenario {
        version: SCHEMA_VERSION,
        agents,
        map,
    }
}

/// Generate `n` homogenized synthetic scenarios. Each scenario draws from its
/// own RNG seeded with `config.seed ^ index`, so output is independent of
/// generation order.
pub fn generate_synthetic(config: &GeneratorConfig, n: usize) -> Result<Vec<HomogenizedScenario>> {
    config.validate()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ i as u64);
        let raw = generate_raw(config, &mut rng);
        let mut scenario = homogenize(&raw, SourceProfile::A2like)?;
        scenario.source = Source::Synthetic;
        out.push(scenario);
    }
    Ok(out)
}
