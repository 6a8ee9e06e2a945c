//! End-to-end acceptance suite. One test per release gate; each prints a
//! single summary line on success (visible with `--nocapture`).

use ep_core::curve::{Basis, PolyCurve2D};
use ep_core::eval::{delta_report, min_ade, min_fde, EvalReport, MetricSpec, MetricValues};
use ep_core::fit::{fit_history_wls, fit_points_tls, split_until_fit, ObservedSample, ObservedTrack, Polyline, Semantic};
use ep_core::generator::{generate_synthetic, GeneratorConfig};
use ep_core::geom::Vec2;
use ep_core::model::loss::{loss_graph, variant_loss, AgentPredictions};
use ep_core::model::net::{EPConfig, EpModel, ModePrediction, PredictionSet, ScenarioInputs, Variant};
use ep_core::model::reconstruct::{
    build_observation_matrix, curve_to_omega, observe_curve, reconstruct_trajectory,
    StateVector14, RECON_DEGREE, STATE_DIM,
};
use ep_core::model::tape::Tape;
use ep_core::model::train::train;
use ep_core::scenario::flip_scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Gate 1: the degree-6 reconstruction interpolates all 14 constraints of
/// 1000 random states within 1e-9, in under 5 s.
#[test]
fn reconstruction_interpolates_random_states_exactly() {
    let start = Instant::now();
    let obs = build_observation_matrix(0.0, 3.0, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let s = StateVector14(std::array::from_fn(|i| match i % 14 {
            0 | 1 | 2 | 3 | 8 | 9 => rng.gen_range(-50.0..50.0), // positions
            4 | 5 | 10 | 11 => rng.gen_range(-10.0..10.0),       // velocities
            _ => rng.gen_range(-5.0..5.0),                       // accelerations
        }));
        let curve = reconstruct_trajectory(&s, &obs);
        let back = observe_curve(&curve, &obs).unwrap();
        for (a, b) in s.0.iter().zip(&back.0) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    assert!(worst <= 1e-9, "worst constraint violation {worst}");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("PASS reconstruction: 1000 states, worst violation {worst:.3e}, {elapsed:?}");
}

/// Gate 2: H maps known degree-6 curves to their analytic (p, v, a) samples
/// and H^-1 H is the identity, both within 1e-9.
#[test]
fn observation_matrix_is_correct_and_invertible() {
    let obs = build_observation_matrix(0.0, 3.0, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let coeffs = (0..=RECON_DEGREE)
            .map(|_| Vec2::new(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)))
            .collect();
        let curve = PolyCurve2D::new(Basis::Monomial, (0.0, 6.0), coeffs).unwrap();
        let omega = curve_to_omega(&curve);
        let analytic = observe_curve(&curve, &obs).unwrap();
        for r in 0..STATE_DIM {
            let got: f64 = (0..STATE_DIM).map(|c| obs.h.at(r, c) * omega[c]).sum();
            worst = worst.max((got - analytic.0[r]).abs());
        }
    }
    assert!(worst <= 1e-9, "H row error {worst}");
    let prod = obs.h.matmul(&obs.h_inv);
    let mut id_err = 0.0f64;
    for r in 0..STATE_DIM {
        for c in 0..STATE_DIM {
            let expect = if r == c { 1.0 } else { 0.0 };
            id_err = id_err.max((prod.at(r, c) - expect).abs());
        }
    }
    assert!(id_err <= 1e-9, "round-trip error {id_err}");
    println!("PASS observation matrix: H error {worst:.3e}, inverse error {id_err:.3e}");
}

fn binomial(n: usize, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

fn bernstein_row(u: f64, degree: usize) -> Vec<f64> {
    (0..=degree)
        .map(|j| binomial(degree, j) * u.powi(j as i32) * (1.0 - u).powi((degree - j) as i32))
        .collect()
}

/// Independent fixed-parameter LS: clamped endpoints, chord-length params,
/// interior control points from dense normal equations.
fn fixed_ls_rms(points: &[Vec2], degree: usize) -> f64 {
    let total: f64 = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let mut acc = 0.0;
    let params: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, _)| {
            if i > 0 {
                acc += (points[i] - points[i - 1]).norm();
            }
            acc / total
        })
        .collect();
    let first = points[0];
    let last = *points.last().unwrap();
    let n_int = degree - 1;
    let mut ata = nalgebra::DMatrix::<f64>::zeros(n_int, n_int);
    let mut atb = nalgebra::DMatrix::<f64>::zeros(n_int, 2);
    for (p, &u) in points.iter().zip(&params) {
        let row = bernstein_row(u, degree);
        let resid = *p - first * row[0] - last * row[degree];
        for i in 0..n_int {
            for j in 0..n_int {
                ata[(i, j)] += row[i + 1] * row[j + 1];
            }
            atb[(i, 0)] += row[i + 1] * resid.x;
            atb[(i, 1)] += row[i + 1] * resid.y;
        }
    }
    let sol = ata.lu().solve(&atb).expect("well-conditioned LS");
    let mut ctrl = vec![first];
    for i in 0..n_int {
        ctrl.push(Vec2::new(sol[(i, 0)], sol[(i, 1)]));
    }
    ctrl.push(last);
    let mut sq = 0.0;
    for (p, &u) in points.iter().zip(&params) {
        let row = bernstein_row(u, degree);
        let mut q = Vec2::ZERO;
        for (c, b) in ctrl.iter().zip(&row) {
            q = q + *c * *b;
        }
        sq += (q - *p).norm_sq();
    }
    (sq / points.len() as f64).sqrt()
}

/// Gate 3: 500 noiseless cubic curves are recovered with control-point RMS
/// <= 1e-6 from 20 samples, and TLS never loses to fixed-parameter LS.
#[test]
fn curve_fitting_recovers_cubics_and_beats_fixed_ls() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst_rms = 0.0f64;
    for _ in 0..500 {
        // Random arc-like cubics (near-uniform speed, clear curvature): the
        // regime where control points are identifiable from 20 samples.
        let r = rng.gen_range(8.0..60.0);
        let a0 = rng.gen_range(0.0..std::f64::consts::TAU);
        let arc = rng.gen_range(0.3..1.2);
        let a1 = a0 + arc;
        let k = (4.0 / 3.0) * (arc / 4.0).tan() * r;
        let p0 = Vec2::new(r * a0.cos(), r * a0.sin());
        let p3 = Vec2::new(r * a1.cos(), r * a1.sin());
        let t0 = Vec2::new(-a0.sin(), a0.cos());
        let t1 = Vec2::new(-a1.sin(), a1.cos());
        let ctrl = vec![p0, p0 + t0 * k, p3 - t1 * k, p3];
        let curve = PolyCurve2D::new(Basis::Bernstein, (0.0, 1.0), ctrl.clone()).unwrap();
        let points: Vec<Vec2> = (0..20)
            .map(|i| curve.evaluate(i as f64 / 19.0).unwrap())
            .collect();
        let fit = fit_points_tls(&points, 3).unwrap();
        let rms = (ctrl
            .iter()
            .zip(&fit.curve.coeffs)
            .map(|(a, b)| a.dist(*b).powi(2))
            .sum::<f64>()
            / 4.0)
            .sqrt();
        worst_rms = worst_rms.max(rms);
        let ls = fixed_ls_rms(&points, 3);
        assert!(
            fit.rms_error <= ls + 1e-12,
            "tls rms {} worse than fixed LS {}",
            fit.rms_error,
            ls
        );
    }
    assert!(worst_rms <= 1e-6, "worst control-point RMS {worst_rms}");
    println!("PASS curve fitting: 500 cubics, worst control-point RMS {worst_rms:.3e}");
}

/// Gate 4: every split-until-fit segment on 100 curvy polylines respects the
/// 0.1 m threshold and none needs the irreducible escape hatch.
#[test]
fn split_until_fit_respects_threshold_on_curvy_lanes() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut segments = 0usize;
    let mut irreducible = 0usize;
    for _ in 0..100 {
        let r = rng.gen_range(10.0..120.0);
        let arc = rng.gen_range(0.3..std::f64::consts::PI);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let len = r * arc;
        let n = (len.ceil() as usize).max(3);
        let points: Vec<Vec2> = (0..=n)
            .map(|i| {
                let a = phase + arc * i as f64 / n as f64;
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        let pl = Polyline::new(points, Semantic::LaneCenter).unwrap();
        for seg in split_until_fit(&pl, 3, 0.1).unwrap() {
            segments += 1;
            if seg.flags.irreducible {
                irreducible += 1;
            } else {
                assert!(seg.max_error < 0.1, "segment error {}", seg.max_error);
            }
        }
    }
    assert_eq!(irreducible, 0, "irreducible flags on smooth arcs");
    println!("PASS splitting: 100 polylines -> {segments} segments, 0 irreducible");
}

/// Gate 5: analytic gradients of the full loss match central finite
/// differences on 25+ random parameters, and the reconstruction solve's
/// endpoint gradient matches too. Relative tolerance 1e-5.
#[test]
fn gradients_match_finite_differences() {
    let scenario = &generate_synthetic(&GeneratorConfig::id_profile(105), 1).unwrap()[0];
    let mut checked = 0usize;
    for variant in [Variant::EpF, Variant::EpQ] {
        let mut config = EPConfig::for_variant(variant);
        config.d = 16;
        config.heads = 2;
        config.k = 3;
        config.seed = 105;
        let mut model = EpModel::new(config).unwrap();
        let inputs = ScenarioInputs::build(scenario, variant).unwrap();

        let mut tape = Tape::new();
        let params = model.params.leaves(&mut tape);
        let gl = loss_graph(&model, &mut tape, &params, &inputs).unwrap();
        let grads = tape.backward(gl.total).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(1000 + checked as u64);
        for _ in 0..15 {
            let pi = rng.gen_range(0..model.params.values.len());
            if model.params.values[pi].len() == 0 {
                continue;
            }
            let ei = rng.gen_range(0..model.params.values[pi].len());
            let analytic = grads[params[pi]].data[ei];
            let eps = 1e-4;
            let orig = model.params.values[pi].data[ei];
            let mut eval = |v: f64| {
                model.params.values[pi].data[ei] = v;
                let mut t = Tape::new();
                let p = model.params.leaves(&mut t);
                let g = loss_graph(&model, &mut t, &p, &inputs).unwrap();
                t.value(g.total).data[0]
            };
            let plus = eval(orig + eps);
            let minus = eval(orig - eps);
            model.params.values[pi].data[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-2);
            assert!(
                (analytic - numeric).abs() / denom <= 1e-5,
                "param {pi}[{ei}]: analytic {analytic} vs numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 25, "only {checked} parameters checked");

    // Reconstruction endpoint gradient: analytic column sums of H^-1 vs FD.
    let obs = build_observation_matrix(0.0, 3.0, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let s0 = StateVector14(std::array::from_fn(|_| rng.gen_range(-5.0..5.0)));
    for i in 0..STATE_DIM {
        let analytic: f64 = (0..=RECON_DEGREE).map(|j| obs.h_inv.at(2 * j, i)).sum();
        let eps = 1e-5;
        let endpoint_x = |s: &StateVector14| {
            reconstruct_trajectory(s, &obs).evaluate(6.0).unwrap().x
        };
        let mut plus = s0;
        plus.0[i] += eps;
        let mut minus = s0;
        minus.0[i] -= eps;
        let numeric = (endpoint_x(&plus) - endpoint_x(&minus)) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1.0);
        assert!((analytic - numeric).abs() / denom <= 1e-5);
    }
    println!("PASS gradients: {checked} loss parameters + reconstruction endpoint, all <= 1e-5");
}

/// Gate 6: minADE/minFDE equal a brute-force oracle bit-for-bit on 200
/// random fixtures, and top-1 never beats best-of-6.
#[test]
fn metrics_equal_brute_force_oracle_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let steps = 41;
    for _ in 0..200 {
        let truth: Vec<Vec2> = (0..steps)
            .map(|_| Vec2::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)))
            .collect();
        let probs: Vec<f64> = (0..6).map(|_| rng.gen_range(0.01..1.0)).collect();
        let modes: Vec<Vec<Vec2>> = (0..6)
            .map(|_| {
                (0..steps)
                    .map(|_| Vec2::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)))
                    .collect()
            })
            .collect();

        let mut oracle_ade = f64::INFINITY;
        let mut oracle_fde = f64::INFINITY;
        for mode in &modes {
            let mut sum = 0.0;
            for i in 0..steps {
                sum += (mode[i] - truth[i]).norm();
            }
            oracle_ade = oracle_ade.min(sum / steps as f64);
            oracle_fde = oracle_fde.min((mode[steps - 1] - truth[steps - 1]).norm());
        }
        assert_eq!(min_ade(&modes, &truth), oracle_ade);
        assert_eq!(min_fde(&modes, &truth), oracle_fde);

        let top = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let top1 = [modes[top].clone()];
        assert!(min_ade(&top1, &truth) >= min_ade(&modes, &truth));
        assert!(min_fde(&top1, &truth) >= min_fde(&modes, &truth));
    }
    println!("PASS metrics: 200 fixtures bitwise-equal to oracle, top-1 >= best-of-6");
}

/// Gate 7: delta arithmetic reproduces the published robustness numbers
/// within 0.001 m and 0.1 percentage points.
#[test]
fn delta_reproduces_published_robustness_numbers() {
    let report = |minade6: f64, minfde1: f64| EvalReport {
        spec: MetricSpec::default(),
        n_scenarios: 1,
        metrics: MetricValues {
            minade1: 1.0,
            minfde1,
            minade6,
            minfde6: 1.0,
        },
        per_scenario: vec![],
        rejected: vec![],
    };
    let d = delta_report(&report(0.483, 2.617), &report(0.626, 3.563)).unwrap();
    assert!((d.delta.minade6 - 0.143).abs() <= 0.001, "{}", d.delta.minade6);
    assert!((d.relative.minade6 - 29.6).abs() <= 0.1, "{}", d.relative.minade6);
    assert!((d.delta.minfde1 - 0.946).abs() <= 0.001, "{}", d.delta.minfde1);
    assert!((d.relative.minfde1 - 36.2).abs() <= 0.1, "{}", d.relative.minfde1);
    println!(
        "PASS deltas: +{:.3} (+{:.1}%) / +{:.3} (+{:.1}%)",
        d.delta.minade6, d.relative.minade6, d.delta.minfde1, d.relative.minfde1
    );
}

/// Gate 8: the D=64, K=6 model overfits 10 synthetic scenarios to training
/// minADE_6 below 0.5 m within 2000 iterations and 10 minutes.
#[test]
fn model_overfits_ten_scenarios() {
    let start = Instant::now();
    let scenarios = generate_synthetic(&GeneratorConfig::id_profile(108), 10).unwrap();
    let mut config = EPConfig::for_variant(Variant::EpF);
    config.batch_size = 10;
    config.epochs = 1500; // one batch per epoch -> 1500 iterations
    config.warmup_iters = 100;
    config.lr = 2e-3;
    config.seed = 108;
    let outcome = train(config, &scenarios, &[]).unwrap();
    let report = ep_core::eval::evaluate_set(
        &outcome.model,
        &scenarios,
        &MetricSpec::with_horizon(6.0),
    )
    .unwrap();
    let elapsed = start.elapsed();
    assert!(
        report.metrics.minade6 < 0.5,
        "training minADE_6 = {} m",
        report.metrics.minade6
    );
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "PASS overfit: train minADE_6 {:.3} m after 1500 iters in {elapsed:?}",
        report.metrics.minade6
    );
}

/// Gate 9: all three loss variants coincide when only the focal agent
/// exists, and flipping a scenario twice is an exact identity.
#[test]
fn variant_losses_coincide_and_flip_is_involution() {
    let obs = build_observation_matrix(0.0, 3.0, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let modes: Vec<ModePrediction> = (0..3)
        .map(|_| {
            let state = StateVector14(std::array::from_fn(|_| rng.gen_range(-3.0..3.0)));
            ModePrediction {
                curve: reconstruct_trajectory(&state, &obs),
                probability: 1.0 / 3.0,
                state,
            }
        })
        .collect();
    let predictions = vec![AgentPredictions {
        multi: PredictionSet {
            modes,
            frame: ep_core::features::FramePose::identity(),
        },
        uni: None,
    }];
    let gt: Vec<Vec<(f64, Vec2)>> = vec![(1..=60)
        .map(|k| {
            let t = k as f64 * 0.1;
            (t, Vec2::new(2.0 * t, 0.3 * t))
        })
        .collect()];
    let totals: Vec<f64> = [Variant::EpF, Variant::EpQ, Variant::EpNoAug]
        .iter()
        .map(|&v| variant_loss(v, &predictions, &gt, 0).unwrap().total)
        .collect();
    assert!((totals[0] - totals[1]).abs() <= 1e-9);
    assert!((totals[0] - totals[2]).abs() <= 1e-9);

    let scenario = &generate_synthetic(&GeneratorConfig::ood_profile(109), 1).unwrap()[0];
    let twice = flip_scenario(&flip_scenario(scenario));
    for (a, b) in scenario.agents.iter().zip(&twice.agents) {
        for (s, t) in a.observations.iter().chain(&a.future).zip(b.observations.iter().chain(&b.future)) {
            assert!(s.pos().dist(t.pos()) <= 1e-12);
        }
    }
    for (a, b) in scenario.map.iter().zip(&twice.map) {
        for (p, q) in a.fit.curve.coeffs.iter().zip(&b.fit.curve.coeffs) {
            assert!(p.dist(*q) <= 1e-12);
        }
    }
    println!(
        "PASS variants: losses agree to {:.1e}, flip∘flip exact",
        (totals[0] - totals[1]).abs().max((totals[0] - totals[2]).abs())
    );
}

/// Gate 11 (10 lives in the CLI crate): a 50-step 2D history serializes to
/// 100 floats raw but 12 floats as a degree-5 curve — a 12% footprint.
#[test]
fn history_storage_shrinks_to_twelve_percent() {
    let samples: Vec<ObservedSample> = (0..50)
        .map(|k| {
            let t = -4.9 + 0.1 * k as f64;
            ObservedSample::new(t, Vec2::new(8.0 * t + 0.2 * t * t, 1.5 * t), true)
        })
        .collect();
    let raw_floats = 2 * samples.len();
    assert_eq!(raw_floats, 100);
    let track = ObservedTrack::new(samples, 0.1).unwrap();
    let fit = fit_history_wls(&track, 5).unwrap();
    let text = serde_json::to_string(&fit.curve).unwrap();
    let back: PolyCurve2D = serde_json::from_str(&text).unwrap();
    assert_eq!(back.coeffs.len(), 6);
    let stored_floats = 2 * back.coeffs.len();
    assert_eq!(stored_floats, 12);
    let ratio = stored_floats as f64 / raw_floats as f64;
    assert!((ratio - 0.12).abs() < 1e-12);
    println!("PASS storage: {raw_floats} floats -> {stored_floats} floats ({:.0}%)", ratio * 100.0);
}
