use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::synth::{box_corners, gen_interaction_scene, Behavior, BehaviorMix, ScenarioSpec};
use crate::types::{CornerScheme, Point3, PoseSequence, Scene, VehicleTrack};

fn scene(seed: u64, n_ped: usize, n_veh: usize, frames: usize) -> Scene {
    gen_interaction_scene(&ScenarioSpec {
        seed,
        n_pedestrians: n_ped,
        n_vehicles: n_veh,
        duration_frames: frames,
        decision_frame: Some(frames.saturating_sub(6)),
        behavior_mix: BehaviorMix::only(Behavior::Yield),
        ..Default::default()
    })
    .unwrap()
}

fn sample_from(cfg: &ModelConfig, s: &Scene) -> PreparedSample {
    let need = cfg.t_obs + 1 + cfg.n_pred;
    let start = s.frame_count() - need;
    let peds: Vec<PoseSequence> = s.pedestrians.iter().map(|p| p.window(start..start + need).unwrap()).collect();
    let vehs: Vec<VehicleTrack> = s.vehicles.iter().map(|v| v.window(start..start + need).unwrap()).collect();
    PreparedSample::new(cfg, "t@0".into(), (peds.len(), vehs.len()), &peds, &vehs).unwrap()
}

fn tiny() -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        heads: 2,
        encoder_blocks: 1,
        pvi_blocks: 1,
        decoder_blocks: 1,
        dct_keep: 2,
        t_obs: 4,
        n_pred: 3,
        corner_groups: CornerScheme::FrontRear,
        dropout: 0.0,
        ..Default::default()
    }
}

#[test]
fn token_counts() {
    let cfg = ModelConfig {
        dct_keep: 10,
        ..ModelConfig::full_scale()
    };
    let s = sample_from(&cfg, &scene(1, 1, 2, 80));
    assert_eq!(s.ped_features.shape(), &[50, 9]);
    assert_eq!(s.veh_features.as_ref().unwrap().shape(), &[240, 6]);
    let model = ForecastModel::new(cfg, 0).unwrap();
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let hv = model.encode_vehicles(&mut tape, &p, &s).unwrap().unwrap();
    assert_eq!(tape.shape(hv), &[240, 32]);
}

#[test]
fn identical_pedestrians_get_distinct_tokens() {
    let cfg = ModelConfig::default();
    let s = scene(2, 1, 1, 40);
    let ped = s.pedestrians[0].window(24..40).unwrap();
    let twin = PoseSequence::from_track(2, ped.track().clone(), 25.0).unwrap();
    let veh = s.vehicles[0].window(24..40).unwrap();
    let sample = PreparedSample::new(&cfg, "twin".into(), (2, 1), &[ped, twin], &[veh]).unwrap();
    let model = ForecastModel::new(cfg.clone(), 3).unwrap();
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let h = model.embed_pedestrians(&mut tape, &p, &sample, true).unwrap();
    let per_ped = cfg.body_partition.len() * cfg.dct_keep * cfg.feature_dim;
    let data = tape.value(h).data();
    assert!(data[..per_ped] != data[per_ped..2 * per_ped]);
}

fn still_pose(x: f64) -> Vec<Point3> {
    (0..15).map(|j| [x, 0.1 * j as f64, 0.5 + 0.05 * j as f64]).collect()
}

#[test]
fn zero_motion_tokens_are_constant_without_tpe() {
    let cfg = ModelConfig::default();
    let ped = PoseSequence::new(1, vec![still_pose(0.0); 16], 25.0).unwrap();
    let parked = VehicleTrack::new(101, vec![box_corners([3.0, 2.0], 0.4); 16], 25.0).unwrap();
    let s = PreparedSample::new(&cfg, "still".into(), (1, 1), &[ped], &[parked]).unwrap();
    assert!(s.veh_features.as_ref().unwrap().data().iter().all(|v| *v == 0.0));
    let model = ForecastModel::new(cfg.clone(), 5).unwrap();
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let h = model.embed_pedestrians(&mut tape, &p, &s, false).unwrap();
    let d = cfg.feature_dim;
    let rows: Vec<&[f64]> = tape.value(h).data().chunks(d).collect();
    for r in &rows {
        assert_eq!(*r, rows[0]);
    }
    let with = model.embed_pedestrians(&mut tape, &p, &s, true).unwrap();
    let rows: Vec<&[f64]> = tape.value(with).data().chunks(d).collect();
    assert!(rows[0] != rows[1]);
}

#[test]
fn corner_schemes_change_vehicle_token_count() {
    let s = scene(6, 2, 2, 40);
    for (scheme, tokens) in [(CornerScheme::Whole, 8), (CornerScheme::Edges, 96)] {
        let cfg = ModelConfig {
            corner_groups: scheme,
            ..Default::default()
        };
        let sample = sample_from(&cfg, &s);
        assert_eq!(sample.veh_features.as_ref().unwrap().shape()[0], tokens);
        let model = ForecastModel::new(cfg.clone(), 1).unwrap();
        let out = model.predict_displacements(&sample).unwrap();
        assert_eq!(out.shape(), &[2, cfg.n_pred, 45]);
    }
}

/// Per-head loop evaluation of `softmax((Q K^T + B) / sqrt(d_z)) V W_O + b_O`.
fn naive_attention(
    store: &ParamStore,
    layer: &Attention,
    xq: &Tensor,
    xkv: &Tensor,
    bins: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let d = xq.shape()[1];
    let (nq, nk) = (xq.shape()[0], xkv.shape()[0]);
    let (h, dz) = (layer.heads, layer.head_dim);
    let proj = |x: &Tensor, w: usize, n: usize| -> Vec<Vec<f64>> {
        let w = store.get(w);
        (0..n)
            .map(|i| (0..d).map(|o| (0..d).map(|c| x.at(&[i, c]) * w.at(&[c, o])).sum()).collect())
            .collect()
    };
    let (q, k, v) = (proj(xq, layer.wq, nq), proj(xkv, layer.wk, nk), proj(xkv, layer.wv, nk));
    let table = layer.trpe.map(|t| store.get(t));
    let mut ctx = vec![vec![0.0; d]; nq];
    let mut weights = vec![0.0; h * nq * nk];
    for head in 0..h {
        for i in 0..nq {
            let mut logits = vec![0.0; nk];
            for (j, l) in logits.iter_mut().enumerate() {
                let mut s = 0.0;
                for c in 0..dz {
                    s += q[i][head * dz + c] * k[j][head * dz + c];
                }
                if let Some(t) = table {
                    s += t.at(&[bins[i * nk + j], head]);
                }
                *l = s / (dz as f64).sqrt();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..nk {
                let w = exps[j] / total;
                weights[(head * nq + i) * nk + j] = w;
                for c in 0..dz {
                    ctx[i][head * dz + c] += w * v[j][head * dz + c];
                }
            }
        }
    }
    let wo = store.get(layer.wo.w);
    let bo = store.get(layer.wo.b.unwrap());
    let mut out = Vec::with_capacity(nq * d);
    for row in &ctx {
        for o in 0..d {
            out.push((0..d).map(|c| row[c] * wo.at(&[c, o])).sum::<f64>() + bo.data()[o]);
        }
    }
    (out, weights)
}

#[test]
fn attention_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20 {
        let mut store = ParamStore::new();
        let layer = Attention::with_random_weights(&mut store, "a", 8, 2, Some(8), seed).unwrap();
        let xq = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let xkv = Tensor::randn(&[6, 8], 1.0, &mut rng);
        let bins: Vec<usize> = (0..24).map(|_| rng.random_range(0..8)).collect();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let (q, kv) = (tape.constant(xq.clone()), tape.constant(xkv.clone()));
        let a = layer.apply(&mut tape, &p, q, kv, Some(&bins)).unwrap();
        let (out, weights) = naive_attention(&store, &layer, &xq, &xkv, &bins);
        for (x, y) in tape.value(a.out).data().iter().zip(&out) {
            assert!((x - y).abs() <= 1e-10);
        }
        for (x, y) in tape.value(a.weights).data().iter().zip(&weights) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn huge_bias_saturates_one_row() {
    let mut store = ParamStore::new();
    let layer = Attention::with_random_weights(&mut store, "a", 8, 2, Some(3), 1).unwrap();
    let table = layer.trpe.unwrap();
    let t = store.get_mut(table);
    t.data_mut().fill(0.0);
    t.data_mut()[2 * 2] = 1e6;
    t.data_mut()[2 * 2 + 1] = 1e6;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xq = Tensor::randn(&[4, 8], 1.0, &mut rng);
    let xkv = Tensor::randn(&[6, 8], 1.0, &mut rng);
    let mut bins = vec![0; 24];
    bins[6 + 4] = 2; // query 1, key 4
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let (q, kv) = (tape.constant(xq), tape.constant(xkv));
    let a = layer.apply(&mut tape, &p, q, kv, Some(&bins)).unwrap();
    let w = tape.value(a.weights);
    for h in 0..2 {
        for j in 0..6 {
            let expect = if j == 4 { 1.0 } else { 0.0 };
            assert!((w.at(&[h, 1, j]) - expect).abs() <= 1e-9);
        }
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let mut store = ParamStore::new();
    let layer = Attention::with_random_weights(&mut store, "a", 8, 2, None, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xq = Tensor::randn(&[3, 8], 1.0, &mut rng);
    let key = Tensor::randn(&[1, 8], 1.0, &mut rng);
    let keys = Tensor::new(vec![5, 8], key.data().repeat(5)).unwrap();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let (q, kv, k1) = (tape.constant(xq), tape.constant(keys), tape.constant(key));
    let a = layer.apply(&mut tape, &p, q, kv, None).unwrap();
    assert!(tape.value(a.weights).data().iter().all(|w| (w - 0.2).abs() <= 1e-12));
    // Output is the projected shared value for every query.
    let v = tape.matmul(k1, p[layer.wv]).unwrap();
    let o = layer.wo.apply(&mut tape, &p, v).unwrap();
    let expect = tape.value(o).data().to_vec();
    for row in tape.value(a.out).data().chunks(8) {
        for (x, y) in row.iter().zip(&expect) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn untrained_model_freezes_last_pose() {
    let cfg = ModelConfig::default();
    let s = sample_from(&cfg, &scene(7, 3, 4, 40));
    let model = ForecastModel::new(cfg.clone(), 11).unwrap();
    let d = model.predict_displacements(&s).unwrap();
    assert_eq!(d.shape(), &[3, cfg.n_pred, 45]);
    assert!(d.data().iter().all(|v| *v == 0.0));
    let poses = model.predict(&s).unwrap();
    assert_eq!(poses.len(), 3);
    for (p, last) in poses.iter().zip(&s.last_poses) {
        assert_eq!(p.len(), cfg.n_pred);
        assert!(p.iter().all(|frame| frame == last));
    }
}

#[test]
fn attention_rows_are_simplex_everywhere() {
    let cfg = ModelConfig::default();
    let s = sample_from(&cfg, &scene(8, 2, 3, 40));
    let model = ForecastModel::new(cfg, 2).unwrap();
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = model.forward(&mut tape, &p, &s, Some(&mut rng)).unwrap();
    let names: Vec<&str> = trace.attention.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"encoder.1.self"));
    assert!(names.contains(&"pvi.0.cross"));
    assert!(names.contains(&"decoder.1.cross"));
    for (name, w) in &trace.attention {
        let shape = tape.shape(*w).to_vec();
        for row in tape.value(*w).data().chunks(shape[2]) {
            assert!(row.iter().all(|x| *x >= 0.0), "{name}");
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12, "{name}");
        }
    }
}

fn loss_of(pred: &Tensor, truth: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(pred.clone()), tape.constant(truth.clone()));
    let l = ForecastModel::reconstruction_loss(&mut tape, a, b).unwrap();
    tape.value(l).data()[0]
}

#[test]
fn reconstruction_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = Tensor::randn(&[2, 5, 45], 0.1, &mut rng);
    assert_eq!(loss_of(&truth, &truth), 0.0);
    let shifted: Vec<f64> = truth
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + [0.0, 3.0, 4.0][i % 3])
        .collect();
    let shifted = Tensor::new(vec![2, 5, 45], shifted).unwrap();
    assert!((loss_of(&shifted, &truth) - 5.0).abs() <= 1e-12);

    let pred = Tensor::randn(&[2, 5, 45], 0.1, &mut rng);
    let mut total = 0.0;
    for p in 0..2 {
        for t in 0..5 {
            for j in 0..15 {
                let mut sq = 0.0;
                for c in 0..3 {
                    let d = pred.at(&[p, t, 3 * j + c]) - truth.at(&[p, t, 3 * j + c]);
                    sq += d * d;
                }
                total += sq.sqrt();
            }
        }
    }
    assert!((loss_of(&pred, &truth) - total / 150.0).abs() <= 1e-12);

    let mut tape = Tape::new();
    let (a, b) = (tape.constant(pred), tape.constant(Tensor::zeros(&[2, 5, 44])));
    assert!(ForecastModel::reconstruction_loss(&mut tape, a, b).is_err());
}

#[test]
fn loss_is_translation_invariant() {
    let cfg = ModelConfig::default();
    let s = scene(12, 2, 2, 40);
    let moved = Scene::new(
        s.scene_id.clone(),
        25.0,
        s.pedestrians
            .iter()
            .map(|p| {
                let frames = p.track().frames().map(|f| f.iter().map(|q| [q[0] + 40.0, q[1] - 7.0, q[2] + 0.5]).collect()).collect();
                PoseSequence::new(p.agent_id, frames, 25.0).unwrap()
            })
            .collect(),
        s.vehicles
            .iter()
            .map(|v| {
                let frames = v.track().frames().map(|f| f.iter().map(|q| [q[0] + 40.0, q[1] - 7.0, q[2] + 0.5]).collect()).collect();
                VehicleTrack::new(v.vehicle_id, frames, 25.0).unwrap()
            })
            .collect(),
    )
    .unwrap();
    let mut model = ForecastModel::new(cfg.clone(), 4).unwrap();
    model.randomize_output_head(1);
    let (a, b) = (sample_from(&cfg, &s), sample_from(&cfg, &moved));
    assert!((model.loss(&a).unwrap() - model.loss(&b).unwrap()).abs() <= 1e-12);
}

#[test]
fn vehicle_order_invariance() {
    let cfg = ModelConfig::default();
    let s = scene(13, 2, 3, 40);
    let mut model = ForecastModel::new(cfg.clone(), 6).unwrap();
    model.randomize_output_head(2);
    let a = sample_from(&cfg, &s);
    let mut rev = s.clone();
    rev.vehicles.reverse();
    let b = sample_from(&cfg, &rev);
    let out_a = model.predict_displacements(&a).unwrap();

    // Vehicle k sits in slot P + k; permute those rows the same way.
    let ie = model.ie_param();
    let d = cfg.feature_dim;
    let table = model.params().get(ie).clone();
    let mut permuted = table.clone();
    let base = a.n_ped();
    for k in 0..3 {
        let src = (base + k) * d;
        let dst = (base + 2 - k) * d;
        permuted.data_mut()[dst..dst + d].copy_from_slice(&table.data()[src..src + d]);
    }
    *model.params_mut().get_mut(ie) = permuted;
    let out_b = model.predict_displacements(&b).unwrap();
    assert!(out_a.max_abs_diff(&out_b) <= 1e-9, "{}", out_a.max_abs_diff(&out_b));
    assert!(out_a.data().iter().any(|v| *v != 0.0));
}

#[test]
fn gradients_reach_attention_trpe_and_embedders() {
    let cfg = ModelConfig::default();
    let s = sample_from(&cfg, &scene(14, 2, 2, 40));
    let mut model = ForecastModel::new(cfg, 7).unwrap();
    // A trained head is nonzero; with the zero head nothing upstream gets gradient.
    let (_, zero_head) = model.loss_and_gradients(&s, None).unwrap();
    let wq = model.params().find("encoder.0.attn.wq").unwrap();
    assert!(zero_head[wq].as_ref().is_none_or(|g| g.iter().all(|v| *v == 0.0)));
    model.randomize_output_head(3);
    let (loss, grads) = model.loss_and_gradients(&s, None).unwrap();
    assert!(loss > 0.0);
    for (i, name) in model.params().names().iter().enumerate() {
        let watched = [".wq", ".wk", ".wv", ".trpe"].iter().any(|s| name.ends_with(s))
            || name.starts_with("ped_embed")
            || name.starts_with("veh_embed");
        if watched {
            let g = grads[i].as_ref().unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(g.iter().any(|v| *v != 0.0), "{name} gradient is zero");
        }
    }
}

#[test]
fn baseline_ignores_vehicles() {
    let cfg = ModelConfig {
        use_vehicles: false,
        ..Default::default()
    };
    let s = scene(15, 2, 2, 40);
    let sample = sample_from(&cfg, &s);
    assert_eq!(sample.n_veh(), 0);
    assert_eq!(sample.category, (2, 2));
    let model = ForecastModel::new(cfg, 1).unwrap();
    assert!(model.params().find("veh_embed.fc1.w").is_none());
    assert!(model.params().find("pvi.0.attn.wq").is_none());
}

#[test]
fn full_model_gradient_check() {
    let cfg = tiny();
    let samples: Vec<PreparedSample> = (0..2).map(|i| sample_from(&cfg, &scene(20 + i, 2, 2, 12))).collect();
    let mut model = ForecastModel::new(cfg, 3).unwrap();
    model.randomize_output_head(4);
    let (report, worst) = model.gradient_check(&samples, 1e-4, 1e-4).unwrap();
    assert_eq!(report.checked, model.params().scalar_count());
    assert!(report.passed(), "{report:?} at {worst}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        corner_groups: CornerScheme::Faces,
        ..Default::default()
    };
    let mut model = ForecastModel::new(cfg.clone(), 8).unwrap();
    model.randomize_output_head(5);
    let stem = dir.path().join("ckpt");
    save_checkpoint(&model, &stem).unwrap();
    assert!(dir.path().join("ckpt.json").exists());
    let bin = std::fs::metadata(dir.path().join("ckpt.bin")).unwrap().len();
    assert_eq!(bin as usize, model.params().scalar_count() * 8);
    let loaded = load_checkpoint(&dir.path().join("ckpt.json")).unwrap();
    assert_eq!(loaded.config(), &cfg);
    assert_eq!(loaded.params(), model.params());
    let s = sample_from(&cfg, &scene(16, 1, 1, 40));
    assert_eq!(loaded.predict_displacements(&s).unwrap(), model.predict_displacements(&s).unwrap());

    std::fs::write(dir.path().join("ckpt.bin"), [0u8; 16]).unwrap();
    assert!(load_checkpoint(&stem).is_err());
    assert!(load_checkpoint(&dir.path().join("missing")).unwrap_err().exit_code() == 2);
}
