//! Variant losses: best-of-K regression ADE, probability-weighted
//! classification ADE, and the uni-modal term for non-focal agents.
//!
//! `variant_loss` is the numeric reference on finished predictions;
//! `loss_graph` builds the same quantity on the tape for training.

use super::net::{EpModel, PredictionSet, ScenarioInputs, Variant};
use super::tape::{Tape, VarId};
use crate::error::{EpError, Result};
use crate::geom::Vec2;

/// Loss components; `total = reg + cls`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reg: f64,
    pub cls: f64,
    /// Agents skipped for missing ground truth.
    pub excluded: usize,
}

/// Finished predictions of one agent: the multi-modal set and, when decoded,
/// the uni-modal trajectory.
#[derive(Debug, Clone)]
pub struct AgentPredictions {
    pub multi: PredictionSet,
    pub uni: Option<crate::curve::PolyCurve2D>,
}

/// ADE of one curve against (t, position) samples.
pub fn curve_ade(curve: &crate::curve::PolyCurve2D, gt: &[(f64, Vec2)]) -> f64 {
    let sum: f64 = gt
        .iter()
        .map(|(t, p)| curve.evaluate(*t).map(|q| q.dist(*p)).unwrap_or(f64::NAN))
        .sum();
    sum / gt.len() as f64
}

fn multi_terms(pred: &PredictionSet, gt: &[(f64, Vec2)]) -> (f64, f64) {
    let ades: Vec<f64> = pred.modes.iter().map(|m| curve_ade(&m.curve, gt)).collect();
    let reg = ades.iter().cloned().fold(f64::INFINITY, f64::min);
    let cls = pred
        .modes
        .iter()
        .zip(&ades)
        .map(|(m, a)| m.probability * a)
        .sum();
    (reg, cls)
}

/// Numeric loss per variant (Eq. 1 structure): EP-F = focal reg+cls plus the
/// mean uni-modal ADE of non-focal agents; EP-Q = mean over all agents of
/// reg+cls; EP-noAug = focal reg+cls only. Agents without ground truth are
/// excluded and counted.
pub fn variant_loss(
    variant: Variant,
    predictions: &[AgentPredictions],
    ground_truth: &[Vec<(f64, Vec2)>],
    focal_index: usize,
) -> Result<LossBreakdown> {
    if predictions.len() != ground_truth.len() {
        return Err(EpError::ShapeMismatch(
            "predictions and ground truth must align per agent".into(),
        ));
    }
    if focal_index >= predictions.len() {
        return Err(EpError::ShapeMismatch("focal index out of range".into()));
    }
    if ground_truth[focal_index].is_empty() {
        return Err(EpError::ScenarioRejected(
            "focal agent has no ground truth".into(),
        ));
    }
    let mut excluded = 0;
    let (mut reg, cls);
    match variant {
        Variant::EpNoAug => {
            let (r, c) = multi_terms(&predictions[focal_index].multi, &ground_truth[focal_index]);
            reg = r;
            cls = c;
        }
        Variant::EpF => {
            let (r, c) = multi_terms(&predictions[focal_index].multi, &ground_truth[focal_index]);
            reg = r;
            cls = c;
            let mut uni_sum = 0.0;
            let mut uni_n = 0usize;
            for (i, (p, gt)) in predictions.iter().zip(ground_truth).enumerate() {
                if i == focal_index {
                    continue;
                }
                if gt.is_empty() {
                    excluded += 1;
                    continue;
                }
                let uni = p.uni.as_ref().ok_or_else(|| {
                    EpError::ShapeMismatch("missing uni-modal prediction".into())
                })?;
                uni_sum += curve_ade(uni, gt);
                uni_n += 1;
            }
            if uni_n > 0 {
                reg += uni_sum / uni_n as f64;
            }
        }
        Variant::EpQ => {
            let mut rs = 0.0;
            let mut cs = 0.0;
            let mut n = 0usize;
            for (p, gt) in predictions.iter().zip(ground_truth) {
                if gt.is_empty() {
                    excluded += 1;
                    continue;
                }
                let (r, c) = multi_terms(&p.multi, gt);
                rs += r;
                cs += c;
                n += 1;
            }
            reg = rs / n as f64;
            cls = cs / n as f64;
        }
    }
    Ok(LossBreakdown {
        total: reg + cls,
        reg,
        cls,
        excluded,
    })
}

/// Tape-resident loss of one scenario.
pub struct GraphLoss {
    pub total: VarId,
    pub reg: VarId,
    pub cls: VarId,
    pub excluded: usize,
}

/// Per-agent multi-modal loss terms on the tape: (reg, cls).
fn multi_terms_graph(
    model: &EpModel,
    tape: &mut Tape,
    params: &[VarId],
    ta: VarId,
    inputs: &ScenarioInputs,
    index: usize,
) -> (VarId, VarId) {
    let gt = &inputs.gt_future[index];
    let times: Vec<f64> = gt.iter().map(|(t, _)| *t).collect();
    let points: Vec<Vec2> = gt.iter().map(|(_, p)| *p).collect();
    let dec = model.decode_multimodal(tape, params, ta, index);
    let mut ades = Vec::with_capacity(model.config.k);
    for k in 0..model.config.k {
        let row = tape.gather_rows(dec.pred, &[k]);
        let pos = model.positions_at(tape, row, inputs.p_track[index], &times);
        ades.push(model.ade_var(tape, pos, &points));
    }
    let best = ades
        .iter()
        .enumerate()
        .min_by(|a, b| {
            tape.value(*a.1).data[0]
                .partial_cmp(&tape.value(*b.1).data[0])
                .expect("finite ADE")
        })
        .map(|(i, _)| i)
        .expect("K >= 1");
    let reg = ades[best];
    let ade_row = tape.concat_cols(&ades);
    let weighted = tape.mul_elem(dec.probs, ade_row);
    let cls = tape.sum_all(weighted);
    (reg, cls)
}

/// Builds the variant loss for one scenario on `tape`; parameters must
/// already be on the tape as `params`.
pub fn loss_graph(
    model: &EpModel,
    tape: &mut Tape,
    params: &[VarId],
    inputs: &ScenarioInputs,
) -> Result<GraphLoss> {
    if inputs.gt_future[inputs.focal_index].is_empty() {
        return Err(EpError::ScenarioRejected(
            "focal agent has no ground truth".into(),
        ));
    }
    let ta = model.encode(tape, params, inputs)?;
    let mut excluded = 0;
    let (reg, cls);
    match model.config.variant {
        Variant::EpNoAug => {
            let (r, c) = multi_terms_graph(model, tape, params, ta, inputs, inputs.focal_index);
            reg = r;
            cls = c;
        }
        Variant::EpF => {
            let (r, c) = multi_terms_graph(model, tape, params, ta, inputs, inputs.focal_index);
            let mut unis = Vec::new();
            for i in 0..inputs.gt_future.len() {
                if i == inputs.focal_index {
                    continue;
                }
                let gt = &inputs.gt_future[i];
                if gt.is_empty() {
                    excluded += 1;
                    continue;
                }
                let times: Vec<f64> = gt.iter().map(|(t, _)| *t).collect();
                let points: Vec<Vec2> = gt.iter().map(|(_, p)| *p).collect();
                let pred = model.decode_unimodal(tape, params, ta, i);
                let pos = model.positions_at(tape, pred, inputs.p_track[i], &times);
                unis.push(model.ade_var(tape, pos, &points));
            }
            reg = if unis.is_empty() {
                r
            } else {
                let row = tape.concat_cols(&unis);
                let mean = tape.mean_all(row);
                tape.add(r, mean)
            };
            cls = c;
        }
        Variant::EpQ => {
            let mut regs = Vec::new();
            let mut clss = Vec::new();
            for i in 0..inputs.gt_future.len() {
                if inputs.gt_future[i].is_empty() {
                    excluded += 1;
                    continue;
                }
                let (r, c) = multi_terms_graph(model, tape, params, ta, inputs, i);
                regs.push(r);
                clss.push(c);
            }
            let rrow = tape.concat_cols(&regs);
            reg = tape.mean_all(rrow);
            let crow = tape.concat_cols(&clss);
            cls = tape.mean_all(crow);
        }
    }
    let total = tape.add(reg, cls);
    if !tape.value(total).is_finite() {
        return Err(EpError::NonFinite("non-finite loss".into()));
    }
    Ok(GraphLoss {
        total,
        reg,
        cls,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::net::ModePrediction;
    use super::super::reconstruct::{
        build_observation_matrix, observe_curve, reconstruct_trajectory, StateVector14,
    };
    use crate::curve::{Basis, PolyCurve2D};
    use crate::features::FramePose;

    /// Degree-6 curve following a straight line at constant velocity.
    fn straight_curve(v: Vec2) -> PolyCurve2D {
        let mut coeffs = vec![Vec2::ZERO; 7];
        coeffs[1] = v * 6.0; // u in [0,1] maps to t in [0,6]
        PolyCurve2D::new(Basis::Monomial, (0.0, 6.0), coeffs).unwrap()
    }

    fn gt_for(curve: &PolyCurve2D, offset: Vec2, steps: usize) -> Vec<(f64, Vec2)> {
        (1..=steps)
            .map(|k| {
                let t = k as f64 * 0.1;
                (t, curve.evaluate(t).unwrap() + offset)
            })
            .collect()
    }

    fn pred_set(curves: Vec<PolyCurve2D>, probs: Vec<f64>) -> PredictionSet {
        let obs = build_observation_matrix(0.0, 3.0, 6.0).unwrap();
        PredictionSet {
            modes: curves
                .into_iter()
                .zip(probs)
                .map(|(c, p)| ModePrediction {
                    state: observe_curve(&c, &obs).unwrap(),
                    probability: p,
                    curve: c,
                })
                .collect(),
            frame: FramePose::identity(),
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let c = straight_curve(Vec2::new(5.0, 0.0));
        let gt = gt_for(&c, Vec2::ZERO, 60);
        let preds = vec![AgentPredictions {
            multi: pred_set(vec![c.clone(), c.clone()], vec![0.5, 0.5]),
            uni: None,
        }];
        let l = variant_loss(Variant::EpNoAug, &preds, &[gt], 0).unwrap();
        assert!(l.reg.abs() <= 1e-12 && l.cls.abs() <= 1e-12);
    }

    #[test]
    fn constant_offset_gives_offset_norm() {
        let c = straight_curve(Vec2::new(5.0, 0.0));
        let gt = gt_for(&c, Vec2::new(3.0, 4.0), 60);
        let preds = vec![AgentPredictions {
            multi: pred_set(vec![c], vec![1.0]),
            uni: None,
        }];
        let l = variant_loss(Variant::EpNoAug, &preds, &[gt], 0).unwrap();
        assert!((l.reg - 5.0).abs() <= 1e-9);
        assert!((l.cls - 5.0).abs() <= 1e-9);
    }

    #[test]
    fn two_mode_arithmetic_matches_hand_computation() {
        // ADEs {1.0, 3.0} with p {0.25, 0.75} -> reg 1.0, cls 2.5.
        let c = straight_curve(Vec2::new(5.0, 0.0));
        let m1 = straight_curve(Vec2::new(5.0, 0.0)).transformed(0.0, Vec2::new(0.0, 1.0));
        let m2 = straight_curve(Vec2::new(5.0, 0.0)).transformed(0.0, Vec2::new(0.0, 3.0));
        let gt = gt_for(&c, Vec2::ZERO, 60);
        let preds = vec![AgentPredictions {
            multi: pred_set(vec![m1, m2], vec![0.25, 0.75]),
            uni: None,
        }];
        let l = variant_loss(Variant::EpNoAug, &preds, &[gt], 0).unwrap();
        assert!((l.reg - 1.0).abs() <= 1e-9);
        assert!((l.cls - 2.5).abs() <= 1e-9);
    }

    #[test]
    fn k1_reg_equals_cls() {
        let c = straight_curve(Vec2::new(4.0, 1.0));
        let m = straight_curve(Vec2::new(4.5, 1.0));
        let gt = gt_for(&c, Vec2::ZERO, 41);
        let preds = vec![AgentPredictions {
            multi: pred_set(vec![m], vec![1.0]),
            uni: None,
        }];
        let l = variant_loss(Variant::EpQ, &preds, &[gt], 0).unwrap();
        assert!((l.reg - l.cls).abs() <= 1e-12);
    }

    #[test]
    fn variants_coincide_with_zero_non_focal_agents() {
        let c = straight_curve(Vec2::new(5.0, 0.5));
        let m1 = straight_curve(Vec2::new(4.0, 0.5));
        let m2 = straight_curve(Vec2::new(6.0, 0.5));
        let gt = gt_for(&c, Vec2::ZERO, 60);
        let preds = vec![AgentPredictions {
            multi: pred_set(vec![m1, m2], vec![0.3, 0.7]),
            uni: None,
        }];
        let gts = vec![gt];
        let f = variant_loss(Variant::EpF, &preds, &gts, 0).unwrap();
        let q = variant_loss(Variant::EpQ, &preds, &gts, 0).unwrap();
        let n = variant_loss(Variant::EpNoAug, &preds, &gts, 0).unwrap();
        assert!((f.total - q.total).abs() <= 1e-9);
        assert!((f.total - n.total).abs() <= 1e-9);
    }

    #[test]
    fn missing_non_focal_gt_is_excluded_and_counted() {
        let c = straight_curve(Vec2::new(5.0, 0.0));
        let gt = gt_for(&c, Vec2::ZERO, 60);
        let preds = vec![
            AgentPredictions {
                multi: pred_set(vec![c.clone()], vec![1.0]),
                uni: None,
            },
            AgentPredictions {
                multi: pred_set(vec![c.clone()], vec![1.0]),
                uni: Some(c.clone()),
            },
        ];
        let l = variant_loss(Variant::EpF, &preds, &[gt, vec![]], 0).unwrap();
        assert_eq!(l.excluded, 1);
    }

    #[test]
    fn graph_loss_matches_numeric_loss() {
        use super::super::net::tests::{small_config, toy_scenario};
        for variant in [Variant::EpF, Variant::EpQ, Variant::EpNoAug] {
            let mut cfg = small_config(variant);
            cfg.variant = variant;
            let model = super::super::net::EpModel::new(cfg).unwrap();
            let scenario = toy_scenario(2);
            let inputs = ScenarioInputs::build(&scenario, variant).unwrap();
            let mut tape = Tape::new();
            let params = model.params.leaves(&mut tape);
            let gl = loss_graph(&model, &mut tape, &params, &inputs).unwrap();

            // Numeric path: decode the same model outside the graph.
            let mut tape2 = Tape::new();
            let params2 = model.params.leaves(&mut tape2);
            let ta = model.encode(&mut tape2, &params2, &inputs).unwrap();
            let mut preds = Vec::new();
            for i in 0..scenario.agents.len() {
                let dec = model.decode_multimodal(&mut tape2, &params2, ta, i);
                let pv = tape2.value(dec.pred).clone();
                let probs = tape2.value(dec.probs).clone();
                let obs = &model.obs;
                let modes = (0..pv.rows)
                    .map(|k| {
                        let mut s = [0.0; 14];
                        s[0] = inputs.p_track[i].x;
                        s[1] = inputs.p_track[i].y;
                        for c in 0..12 {
                            s[c + 2] = pv.at(k, c);
                        }
                        let state = StateVector14(s);
                        ModePrediction {
                            curve: reconstruct_trajectory(&state, obs),
                            probability: probs.data[k],
                            state,
                        }
                    })
                    .collect();
                let uni_var = model.decode_unimodal(&mut tape2, &params2, ta, i);
                let uv = tape2.value(uni_var).clone();
                let mut s = [0.0; 14];
                s[0] = inputs.p_track[i].x;
                s[1] = inputs.p_track[i].y;
                for c in 0..12 {
                    s[c + 2] = uv.data[c];
                }
                preds.push(AgentPredictions {
                    multi: PredictionSet {
                        modes,
                        frame: inputs.agent_frames[i],
                    },
                    uni: Some(reconstruct_trajectory(&StateVector14(s), obs)),
                });
            }
            let numeric =
                variant_loss(variant, &preds, &inputs.gt_future, inputs.focal_index).unwrap();
            let graph_total = tape.value(gl.total).data[0];
            assert!(
                (graph_total - numeric.total).abs() <= 1e-6,
                "{variant:?}: graph {graph_total} vs numeric {}",
                numeric.total
            );
        }
    }
}
