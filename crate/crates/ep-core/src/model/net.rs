//! The EP network: feature encoders, attention stages, multi-modal decoder
//! with closed-form polynomial reconstruction.

use super::layers::{AttentionBlock, Ctx, Linear, Mlp3, ParamId, ParamRegistry};
use super::reconstruct::{
    build_observation_matrix, h_inv_blocks, reconstruct_trajectory, ObservationMatrix,
    StateVector14, RECON_DEGREE, STATE_DIM,
};
use super::tape::{Matrix, Tape, VarId};
use crate::curve::PolyCurve2D;
use crate::error::{EpError, Result};
use crate::features::{agent_features, map_features, FramePose};
use crate::geom::Vec2;
use crate::scenario::HomogenizedScenario;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Training horizon in seconds; also the reconstruction interval end.
pub const HORIZON_SECONDS: f64 = 6.0;
const AGENT_DELTA_DIM: usize = 10;
const AGENT_PI_DIM: usize = 4;
const TW_DIM: usize = 2;
const MAP_DELTA_DIM: usize = 6;
const MAP_PI_DIM: usize = 4;
const N_CLASSES: usize = 4;
const N_SEMANTICS: usize = 3;
/// Pairwise relative-pose features used as attention bias (EP-Q).
const REL_FEATS: usize = 5;
const PRED_DIM: usize = STATE_DIM - 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    EpF,
    EpQ,
    EpNoAug,
}

impl Variant {
    pub fn default_lr(self) -> f64 {
        match self {
            Variant::EpF | Variant::EpNoAug => 1e-3,
            Variant::EpQ => 5e-4,
        }
    }

    pub fn default_batch_size(self) -> usize {
        match self {
            Variant::EpF | Variant::EpNoAug => 64,
            Variant::EpQ => 32,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Variant::EpF | Variant::EpNoAug => 128,
            Variant::EpQ => 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EPConfig {
    pub variant: Variant,
    pub d: usize,
    pub heads: usize,
    /// Attention blocks per stage.
    pub blocks: usize,
    /// Number of prediction modes.
    pub k: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_iters: usize,
    pub seed: u64,
}

impl EPConfig {
    pub fn for_variant(variant: Variant) -> Self {
        EPConfig {
            variant,
            d: 64,
            heads: 4,
            blocks: 1,
            k: 6,
            lr: variant.default_lr(),
            batch_size: variant.default_batch_size(),
            epochs: variant.default_epochs(),
            warmup_iters: 60_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(EpError::InfeasibleConfig("K must be >= 1".into()));
        }
        if self.d < 4 {
            return Err(EpError::InfeasibleConfig("D must be >= 4".into()));
        }
        if self.d % self.heads != 0 {
            return Err(EpError::InfeasibleConfig(
                "head count must divide hidden dim".into(),
            ));
        }
        Ok(())
    }
}

/// One decoded mode of one agent.
#[derive(Debug, Clone)]
pub struct ModePrediction {
    pub state: StateVector14,
    pub probability: f64,
    pub curve: PolyCurve2D,
}

/// All modes of one agent, expressed in `frame`.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub modes: Vec<ModePrediction>,
    pub frame: FramePose,
}

impl PredictionSet {
    /// Index of the highest-probability mode.
    pub fn top_mode(&self) -> usize {
        self.modes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.probability.partial_cmp(&b.1.probability).unwrap())
            .map(|(i, _)| i)
            .expect("non-empty mode set")
    }
}

/// Per-scenario numeric inputs extracted ahead of the forward pass.
pub struct ScenarioInputs {
    pub agent_delta: Matrix,
    pub agent_pi: Matrix,
    pub agent_tw: Matrix,
    pub class_idx: Vec<usize>,
    pub map_delta: Matrix,
    pub map_pi: Matrix,
    pub sem_idx: Vec<usize>,
    pub focal_index: usize,
    /// Tracked current position per agent, in that agent's loss frame.
    pub p_track: Vec<Vec2>,
    /// Valid ground-truth future samples per agent, in the loss frame.
    pub gt_future: Vec<Vec<(f64, Vec2)>>,
    /// Loss/feature frame per agent.
    pub agent_frames: Vec<FramePose>,
    /// Frame per map token (per-element for EP-Q, focal otherwise).
    pub map_frames: Vec<FramePose>,
}

impl ScenarioInputs {
    pub fn build(scenario: &HomogenizedScenario, variant: Variant) -> Result<ScenarioInputs> {
        let focal_index = scenario
            .agents
            .iter()
            .position(|a| a.id == scenario.focal_id)
            .ok_or_else(|| EpError::ScenarioRejected("focal agent missing".into()))?;

        let fits: Vec<_> = scenario
            .agents
            .iter()
            .map(|a| a.fit_history())
            .collect::<Result<_>>()?;
        let focal_frame = FramePose::from_curve_end(&fits[focal_index].curve);

        let n = scenario.agents.len();
        let mut agent_delta = Vec::with_capacity(n);
        let mut agent_pi = Vec::with_capacity(n);
        let mut agent_tw = Vec::with_capacity(n);
        let mut class_idx = Vec::with_capacity(n);
        let mut p_track = Vec::with_capacity(n);
        let mut gt_future = Vec::with_capacity(n);
        let mut agent_frames = Vec::with_capacity(n);

        for (agent, fit) in scenario.agents.iter().zip(&fits) {
            let frame = match variant {
                Variant::EpQ => FramePose::from_curve_end(&fit.curve),
                _ => focal_frame,
            };
            let tw = fit.curve.interval;
            let feats = agent_features(&fit.curve, tw, agent.class.index(), &frame);
            let v = feats.to_vec();
            agent_delta.push(v[..AGENT_DELTA_DIM].to_vec());
            agent_pi.push(v[AGENT_DELTA_DIM..AGENT_DELTA_DIM + AGENT_PI_DIM].to_vec());
            agent_tw.push(v[AGENT_DELTA_DIM + AGENT_PI_DIM..].to_vec());
            class_idx.push(agent.class.index());
            p_track.push(frame.to_local(fit.curve.evaluate(tw.1)?));
            gt_future.push(
                agent
                    .future
                    .iter()
                    .filter(|s| s.valid)
                    .map(|s| (s.t, frame.to_local(s.pos())))
                    .collect(),
            );
            agent_frames.push(frame);
        }

        let m = scenario.map.len();
        let mut map_delta = Vec::with_capacity(m);
        let mut map_pi = Vec::with_capacity(m);
        let mut sem_idx = Vec::with_capacity(m);
        let mut map_frames = Vec::with_capacity(m);
        for elem in &scenario.map {
            let own = match variant {
                Variant::EpQ => element_frame(&elem.fit.curve),
                _ => focal_frame,
            };
            let sem = semantic_index(elem.semantic);
            let feats = map_features(&elem.fit.curve, sem, &own);
            let v = feats.to_vec();
            map_delta.push(v[..MAP_DELTA_DIM].to_vec());
            map_pi.push(v[MAP_DELTA_DIM..].to_vec());
            sem_idx.push(sem);
            map_frames.push(own);
        }

        Ok(ScenarioInputs {
            agent_delta: rows_or_empty(agent_delta, AGENT_DELTA_DIM),
            agent_pi: rows_or_empty(agent_pi, AGENT_PI_DIM),
            agent_tw: rows_or_empty(agent_tw, TW_DIM),
            class_idx,
            map_delta: rows_or_empty(map_delta, MAP_DELTA_DIM),
            map_pi: rows_or_empty(map_pi, MAP_PI_DIM),
            sem_idx,
            focal_index,
            p_track,
            gt_future,
            agent_frames,
            map_frames,
        })
    }
}

fn rows_or_empty(rows: Vec<Vec<f64>>, cols: usize) -> Matrix {
    if rows.is_empty() {
        Matrix::zeros(0, cols)
    } else {
        Matrix::from_rows(rows)
    }
}

fn semantic_index(s: crate::fit::Semantic) -> usize {
    match s {
        crate::fit::Semantic::LaneCenter => 0,
        crate::fit::Semantic::Crosswalk => 1,
        crate::fit::Semantic::Other => 2,
    }
}

/// Frame of a map element: anchored at its start, heading along the first
/// non-degenerate control-point delta.
fn element_frame(curve: &PolyCurve2D) -> FramePose {
    let origin = curve.coeffs[0];
    let heading = curve
        .coeffs
        .windows(2)
        .map(|w| w[1] - w[0])
        .find(|d| d.norm() >= crate::features::HEADING_EPSILON)
        .map_or(0.0, |d| d.y.atan2(d.x));
    FramePose::new(origin, heading)
}

/// Pairwise relative-pose features between a query frame and a key frame:
/// [exp(-dist/20), cos dh, sin dh, cos bearing, sin bearing].
fn rel_pose_features(fi: &FramePose, fj: &FramePose) -> [f64; REL_FEATS] {
    let d = fi.to_local(fj.origin);
    let dist = d.norm();
    let bearing = if dist < 1e-9 { 0.0 } else { d.y.atan2(d.x) };
    let dh = fj.heading - fi.heading;
    [
        (-dist / 20.0).exp(),
        dh.cos(),
        dh.sin(),
        bearing.cos(),
        bearing.sin(),
    ]
}

struct Stage {
    blocks: Vec<AttentionBlock>,
    /// heads x REL_FEATS mixing weights for the relative-pose bias (EP-Q).
    bias_w: Option<ParamId>,
}

struct Layers {
    agent_delta: Mlp3,
    agent_pi: Mlp3,
    agent_tw: Mlp3,
    class_emb: ParamId,
    map_delta: Mlp3,
    map_pi: Mlp3,
    sem_emb: ParamId,
    map_map: Stage,
    agent_map: Stage,
    agent_agent: Stage,
    mode_queries: ParamId,
    head: Mlp3,
    prob_head: Linear,
}

pub struct EpModel {
    pub config: EPConfig,
    pub params: ParamRegistry,
    pub obs: ObservationMatrix,
    layers: Layers,
}

/// Raw decode of one agent: K x 12 predicted numbers plus 1 x K mode
/// probabilities, still on the tape.
pub struct DecodeVars {
    pub pred: VarId,
    pub probs: VarId,
}

impl EpModel {
    pub fn new(config: EPConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut reg = ParamRegistry::default();
        let d = config.d;
        let r = &mut rng;

        let agent_delta = Mlp3::new(&mut reg, r, "enc.agent_delta", AGENT_DELTA_DIM, d, d);
        let agent_pi = Mlp3::new(&mut reg, r, "enc.agent_pi", AGENT_PI_DIM, d, d);
        let agent_tw = Mlp3::new(&mut reg, r, "enc.agent_tw", TW_DIM, d, d);
        let class_emb = reg.alloc("enc.class_emb", xavier_like(r, N_CLASSES, d));
        let map_delta = Mlp3::new(&mut reg, r, "enc.map_delta", MAP_DELTA_DIM, d, d);
        let map_pi = Mlp3::new(&mut reg, r, "enc.map_pi", MAP_PI_DIM, d, d);
        let sem_emb = reg.alloc("enc.sem_emb", xavier_like(r, N_SEMANTICS, d));

        let stage = |reg: &mut ParamRegistry, r: &mut ChaCha8Rng, name: &str| -> Stage {
            let blocks = (0..config.blocks)
                .map(|b| AttentionBlock::new(reg, r, &format!("{name}.{b}"), d, config.heads))
                .collect();
            let bias_w = if config.variant == Variant::EpQ {
                Some(reg.alloc(
                    &format!("{name}.bias_w"),
                    xavier_like(r, config.heads, REL_FEATS),
                ))
            } else {
                None
            };
            Stage { blocks, bias_w }
        };
        let map_map = stage(&mut reg, r, "enc.map_map");
        let agent_map = stage(&mut reg, r, "enc.agent_map");
        let agent_agent = stage(&mut reg, r, "enc.agent_agent");

        let mode_queries = reg.alloc("dec.mode_queries", xavier_like(r, config.k, d));
        let head = Mlp3::new(&mut reg, r, "dec.head", d, d, PRED_DIM);
        let prob_head = Linear::new(&mut reg, r, "dec.prob_head", d, 1);

        Ok(EpModel {
            obs: build_observation_matrix(0.0, HORIZON_SECONDS / 2.0, HORIZON_SECONDS)?,
            config,
            params: reg,
            layers: Layers {
                agent_delta,
                agent_pi,
                agent_tw,
                class_emb,
                map_delta,
                map_pi,
                sem_emb,
                map_map,
                agent_map,
                agent_agent,
                mode_queries,
                head,
                prob_head,
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Per-head attention bias matrices for one stage, or None when the
    /// variant does not use relative-pose biases or a side is empty.
    fn stage_bias(
        &self,
        tape: &mut Tape,
        params: &[VarId],
        stage: &Stage,
        qf: &[FramePose],
        kf: &[FramePose],
    ) -> Option<Vec<VarId>> {
        let w = stage.bias_w?;
        if qf.is_empty() || kf.is_empty() {
            return None;
        }
        // Constant feature matrices, one per relative-pose feature.
        let mut feats = Vec::with_capacity(REL_FEATS);
        for f in 0..REL_FEATS {
            let mut m = Matrix::zeros(qf.len(), kf.len());
            for (i, fi) in qf.iter().enumerate() {
                for (j, fj) in kf.iter().enumerate() {
                    *m.at_mut(i, j) = rel_pose_features(fi, fj)[f];
                }
            }
            feats.push(tape.leaf(m));
        }
        let mut biases = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let wrow = tape.gather_rows(params[w], &[h]);
            let mut acc: Option<VarId> = None;
            for (f, &cm) in feats.iter().enumerate() {
                let s = tape.slice_cols(wrow, f, 1);
                let term = tape.scale_var(s, cm);
                acc = Some(match acc {
                    Some(a) => tape.add(a, term),
                    None => term,
                });
            }
            biases.push(acc.expect("REL_FEATS > 0"));
        }
        Some(biases)
    }

    /// Encoder: tokens then the map-map, agent-map, agent-agent stages.
    /// Returns the agent tokens (A x D).
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &[VarId],
        inputs: &ScenarioInputs,
    ) -> Result<VarId> {
        if !inputs.agent_delta.is_finite() || !inputs.map_delta.is_finite() {
            return Err(EpError::NonFinite("non-finite feature input".into()));
        }
        let l = &self.layers;

        let mut tm = {
            let d_in = tape.leaf(inputs.map_delta.clone());
            let p_in = tape.leaf(inputs.map_pi.clone());
            let mut ctx = Ctx { tape: &mut *tape, params };
            let a = l.map_delta.forward(&mut ctx, d_in);
            let b = l.map_pi.forward(&mut ctx, p_in);
            let ab = ctx.tape.add(a, b);
            if inputs.sem_idx.is_empty() {
                ab
            } else {
                let e = ctx.tape.gather_rows(ctx.params[l.sem_emb], &inputs.sem_idx);
                ctx.tape.add(ab, e)
            }
        };

        let mut ta = {
            let d_in = tape.leaf(inputs.agent_delta.clone());
            let p_in = tape.leaf(inputs.agent_pi.clone());
            let t_in = tape.leaf(inputs.agent_tw.clone());
            let mut ctx = Ctx { tape: &mut *tape, params };
            let a = l.agent_delta.forward(&mut ctx, d_in);
            let b = l.agent_pi.forward(&mut ctx, p_in);
            let c = l.agent_tw.forward(&mut ctx, t_in);
            let ab = ctx.tape.add(a, b);
            let abc = ctx.tape.add(ab, c);
            let e = ctx
                .tape
                .gather_rows(ctx.params[l.class_emb], &inputs.class_idx);
            ctx.tape.add(abc, e)
        };

        let mm_bias = self.stage_bias(tape, params, &l.map_map, &inputs.map_frames, &inputs.map_frames);
        for block in &l.map_map.blocks {
            let mut ctx = Ctx { tape: &mut *tape, params };
            tm = block.forward(&mut ctx, tm, tm, mm_bias.as_deref());
        }
        let am_bias =
            self.stage_bias(tape, params, &l.agent_map, &inputs.agent_frames, &inputs.map_frames);
        for block in &l.agent_map.blocks {
            let mut ctx = Ctx { tape: &mut *tape, params };
            ta = block.forward(&mut ctx, ta, tm, am_bias.as_deref());
        }
        let aa_bias = self.stage_bias(
            tape,
            params,
            &l.agent_agent,
            &inputs.agent_frames,
            &inputs.agent_frames,
        );
        for block in &l.agent_agent.blocks {
            let mut ctx = Ctx { tape: &mut *tape, params };
            ta = block.forward(&mut ctx, ta, ta, aa_bias.as_deref());
        }
        Ok(ta)
    }

    /// Multi-modal decode of agent `index`: K mode queries added to the agent
    /// token, shared head, probability head with softmax over modes.
    pub fn decode_multimodal(
        &self,
        tape: &mut Tape,
        params: &[VarId],
        ta: VarId,
        index: usize,
    ) -> DecodeVars {
        let l = &self.layers;
        let tok = tape.gather_rows(ta, &[index]);
        let tok_row = tape.reshape(tok, 1, self.config.d);
        let modes = tape.add_row(params[l.mode_queries], tok_row);
        let mut ctx = Ctx { tape: &mut *tape, params };
        let pred = l.head.forward(&mut ctx, modes);
        let logits = l.prob_head.forward(&mut ctx, modes);
        let lt = ctx.tape.transpose(logits);
        let probs = ctx.tape.softmax_rows(lt);
        DecodeVars { pred, probs }
    }

    /// Uni-modal decode: the first mode query with no probability head.
    pub fn decode_unimodal(
        &self,
        tape: &mut Tape,
        params: &[VarId],
        ta: VarId,
        index: usize,
    ) -> VarId {
        let l = &self.layers;
        let tok = tape.gather_rows(ta, &[index]);
        let q0 = tape.gather_rows(params[l.mode_queries], &[0]);
        let mode = tape.add(q0, tok);
        let mut ctx = Ctx { tape: &mut *tape, params };
        l.head.forward(&mut ctx, mode)
    }

    /// In-graph reconstruction + sampling: maps one mode's 12 numbers to the
    /// positions at the ground-truth timestamps. `pred_row`: 1 x 12;
    /// `p_track`, `times` are constants.
    pub fn positions_at(
        &self,
        tape: &mut Tape,
        pred_row: VarId,
        p_track: Vec2,
        times: &[f64],
    ) -> VarId {
        let (left, right) = h_inv_blocks(&self.obs);
        // omega (1 x 14) = p_track^T L^T + pred R^T.
        let lt = tape.leaf(left.transpose());
        let rt = tape.leaf(right.transpose());
        let p = tape.leaf(Matrix::row_vec(vec![p_track.x, p_track.y]));
        let a = tape.matmul(p, lt);
        let b = tape.matmul(pred_row, rt);
        let omega = tape.add(a, b);
        let w = tape.reshape(omega, RECON_DEGREE + 1, 2);
        let mut u = Matrix::zeros(times.len(), RECON_DEGREE + 1);
        for (r, &t) in times.iter().enumerate() {
            let un = t / HORIZON_SECONDS;
            for j in 0..=RECON_DEGREE {
                *u.at_mut(r, j) = un.powi(j as i32);
            }
        }
        let uv = tape.leaf(u);
        tape.matmul(uv, w)
    }

    /// Scalar ADE between in-graph positions and constant ground truth.
    pub fn ade_var(&self, tape: &mut Tape, positions: VarId, gt: &[Vec2]) -> VarId {
        let g = tape.leaf(Matrix::from_rows(gt.iter().map(|p| vec![p.x, p.y]).collect()));
        let d = tape.sub(positions, g);
        let sq = tape.mul_elem(d, d);
        let ss = tape.sum_axis1(sq);
        let dist = tape.sqrt(ss);
        tape.mean_all(dist)
    }

    /// Full prediction set for one agent (outside-graph reconstruction).
    fn prediction_from(&self, tape: &Tape, dec: &DecodeVars, inputs: &ScenarioInputs, index: usize) -> PredictionSet {
        let pred = tape.value(dec.pred);
        let probs = tape.value(dec.probs);
        let p0 = inputs.p_track[index];
        let modes = (0..pred.rows)
            .map(|k| {
                let mut s = [0.0; STATE_DIM];
                s[0] = p0.x;
                s[1] = p0.y;
                for c in 0..PRED_DIM {
                    s[c + 2] = pred.at(k, c);
                }
                let state = StateVector14(s);
                ModePrediction {
                    curve: reconstruct_trajectory(&state, &self.obs),
                    probability: probs.data[k],
                    state,
                }
            })
            .collect();
        PredictionSet {
            modes,
            frame: inputs.agent_frames[index],
        }
    }

    /// Inference: multi-modal prediction for the focal agent.
    pub fn predict_focal(&self, scenario: &HomogenizedScenario) -> Result<PredictionSet> {
        let inputs = ScenarioInputs::build(scenario, self.config.variant)?;
        let mut tape = Tape::new();
        let params = self.params.leaves(&mut tape);
        let ta = self.encode(&mut tape, &params, &inputs)?;
        let dec = self.decode_multimodal(&mut tape, &params, ta, inputs.focal_index);
        if !tape.value(dec.pred).is_finite() {
            return Err(EpError::NonFinite("non-finite decoder output".into()));
        }
        Ok(self.prediction_from(&tape, &dec, &inputs, inputs.focal_index))
    }
}

fn xavier_like(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    use rand::Rng;
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
    }
}
