//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpf_core::autodiff::{check_primitives, Tape, Tensor};
use vpf_core::dct::DctPlan;
use vpf_core::kdtree::KdIndex;
use vpf_core::metrics::{ape, fde, forecasts, jpe, Metric, Report, ReportOptions};
use vpf_core::model::{check_model_gradients, prepare_samples, Attention, ForecastModel, ModelConfig, ParamStore, PreparedSample};
use vpf_core::segment::{min_max_pairwise_distance, segment_corpus, select_vehicles, SegmentFilterConfig, Split};
use vpf_core::synth::{corpus_specs, gen_interaction_scene, gen_scenes, Behavior, BehaviorMix, CorpusTemplate, ScenarioSpec};
use vpf_core::train::{fit, mean_loss, TrainConfig};
use vpf_core::types::{Point3, PoseSequence};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(limit_s),
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        for (name, r) in check_primitives(seed, 1e-4, 1e-4).map_err(|e| e.to_string())? {
            worst = worst.max(r.max_rel_error);
            ensure(r.passed(), format!("{name} seed {seed}: rel err {:.3e}", r.max_rel_error))?;
        }
        let (r, param) = check_model_gradients(seed, 1e-4, 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
        ensure(r.passed(), format!("forecaster seed {seed}: rel err {:.3e} in {param}", r.max_rel_error))?;
    }
    within(start.elapsed(), 120)?;
    Ok(format!("max rel error {worst:.2e} in {:.1}s", start.elapsed().as_secs_f64()))
}

fn dct() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=64);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let full = DctPlan::new(n, n).map_err(|e| e.to_string())?;
        let cx = full.forward(&x).map_err(|e| e.to_string())?;
        let cy = full.forward(&y).map_err(|e| e.to_string())?;
        let back = full.inverse(&cx).map_err(|e| e.to_string())?;
        let rt = x.iter().zip(&back).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let cm = full.forward(&mix).map_err(|e| e.to_string())?;
        let lin = cm
            .iter()
            .zip(cx.iter().zip(&cy))
            .map(|(m, (p, q))| (m - (a * p + b * q)).abs())
            .fold(0.0, f64::max);
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = cx.iter().map(|v| v * v).sum();
        let energy = (ex - ec).abs() / ex.max(1.0);
        worst = worst.max(rt).max(lin).max(energy);
        ensure(rt <= 1e-10 && lin <= 1e-10 && energy <= 1e-10, format!("n={n}: rt {rt:e} lin {lin:e} energy {energy:e}"))?;
        let mut prev = f64::INFINITY;
        for keep in 1..=n {
            let plan = DctPlan::new(n, keep).map_err(|e| e.to_string())?;
            let rec = plan
                .inverse(&plan.forward(&x).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let err: f64 = x.iter().zip(&rec).map(|(p, q)| (p - q) * (p - q)).sum();
            ensure(err <= prev + 1e-12, format!("n={n}: truncation error rose at L={keep}"))?;
            prev = err;
        }
    }
    Ok(format!("worst deviation {worst:.2e} over 100 signals"))
}

fn oracle_dist(a: Point3, b: Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn segment_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut selected_total = 0;
    for i in 0..1000u64 {
        let behaviors = [Behavior::Cross, Behavior::Yield, Behavior::WalkAlong, Behavior::Stand];
        let scene = gen_interaction_scene(&ScenarioSpec {
            seed: i,
            n_pedestrians: rng.random_range(1..=3),
            n_vehicles: rng.random_range(0..=4),
            duration_frames: 60,
            behavior_mix: BehaviorMix::only(behaviors[rng.random_range(0..4)]),
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let len = rng.random_range(1..=60);
        let s = rng.random_range(0..=60 - len);
        let window = s..s + len;
        let group: Vec<&PoseSequence> = scene.pedestrians.iter().collect();

        let mut r = f64::INFINITY;
        for t in window.clone() {
            let mut m = 0.0f64;
            for a in 0..group.len() {
                for b in 0..group.len() {
                    if a < b {
                        let d = oracle_dist(group[a].frame(t)[0], group[b].frame(t)[0]);
                        if d > m {
                            m = d;
                        }
                    }
                }
            }
            if m < r {
                r = m;
            }
        }
        if group.len() < 2 {
            r = 0.0;
        }
        let got = min_max_pairwise_distance(&group, window.clone());
        ensure(got.to_bits() == r.to_bits(), format!("scene {i}: R {got} vs oracle {r}"))?;

        let th = rng.random_range(5.0..30.0);
        let mut expect: Vec<(u64, f64)> = Vec::new();
        for v in &scene.vehicles {
            let mut total = 0.0;
            for t in window.clone() {
                let corners = v.corners(t);
                let mut c = [0.0; 3];
                for k in 0..corners.len() {
                    for (ax, cv) in c.iter_mut().enumerate() {
                        *cv += corners[k][ax];
                    }
                }
                let c = c.map(|x| x / corners.len() as f64);
                let mut best = f64::INFINITY;
                for p in &group {
                    let d = oracle_dist(p.frame(t)[0], c);
                    if d < best {
                        best = d;
                    }
                }
                total += best;
            }
            let mean = total / window.len() as f64;
            if mean <= th {
                expect.push((v.vehicle_id, mean));
            }
        }
        let got = select_vehicles(&scene, &group, window, th).map_err(|e| e.to_string())?;
        let mut got_ids: Vec<u64> = got.iter().map(|g| g.0).collect();
        let mut want_ids: Vec<u64> = expect.iter().map(|g| g.0).collect();
        got_ids.sort_unstable();
        want_ids.sort_unstable();
        ensure(got_ids == want_ids, format!("scene {i}: vehicles {got_ids:?} vs {want_ids:?}"))?;
        for (id, d) in &got {
            let want = expect.iter().find(|e| e.0 == *id).map(|e| e.1).unwrap_or(f64::NAN);
            ensure(d.to_bits() == want.to_bits(), format!("scene {i}: vehicle {id} at {d} vs {want}"))?;
        }
        selected_total += got.len();
    }
    within(start.elapsed(), 30)?;
    Ok(format!(
        "1000 windows, {selected_total} vehicle selections, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn kdtree() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut queries = 0;
    for set in 0..1000 {
        // Snap to a coarse grid so equal distances actually occur.
        let pts: Vec<(u64, Point3)> = (0..200u64)
            .map(|id| {
                let p = [0, 1, 2].map(|_| (rng.random_range(-20..=20) as f64) * 0.5);
                (1000 - id, p)
            })
            .collect();
        let index = KdIndex::build(&pts);
        for _ in 0..5 {
            let q = [0, 1, 2].map(|_| (rng.random_range(-24..=24) as f64) * 0.5);
            let k = rng.random_range(1..=12);
            let mut scan: Vec<(f64, u64)> = pts
                .iter()
                .map(|(id, p)| {
                    let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
                    (dx * dx + dy * dy + dz * dz, *id)
                })
                .collect();
            scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<(f64, u64)> = index.nearest(q, k).iter().map(|n| (n.dist_sq, n.id)).collect();
            ensure(got == scan[..k], format!("set {set}: k={k} mismatch"))?;
            queries += 1;
        }
    }
    Ok(format!("{queries} queries over 1000 sets"))
}

/// Per-head loop evaluation of `softmax((Q K^T + B) / sqrt(d_z)) V`, then `W_O`.
fn loop_attention(store: &ParamStore, layer: &Attention, xq: &Tensor, xkv: &Tensor, bins: &[usize]) -> Vec<f64> {
    let d = xq.shape()[1];
    let (nq, nk) = (xq.shape()[0], xkv.shape()[0]);
    let dz = layer.head_dim;
    let proj = |x: &Tensor, w: usize, i: usize, o: usize| -> f64 {
        (0..d).map(|c| x.at(&[i, c]) * store.get(w).at(&[c, o])).sum()
    };
    let mut ctx = vec![vec![0.0; d]; nq];
    for h in 0..layer.heads {
        for i in 0..nq {
            let mut logits = Vec::with_capacity(nk);
            for j in 0..nk {
                let mut s = 0.0;
                for c in h * dz..(h + 1) * dz {
                    s += proj(xq, layer.wq, i, c) * proj(xkv, layer.wk, j, c);
                }
                s += store.get(layer.trpe.expect("biased layer")).at(&[bins[i * nk + j], h]);
                logits.push(s / (dz as f64).sqrt());
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for j in 0..nk {
                let w = (logits[j] - m).exp() / z;
                for c in h * dz..(h + 1) * dz {
                    ctx[i][c] += w * proj(xkv, layer.wv, j, c);
                }
            }
        }
    }
    let wo = store.get(layer.wo.w);
    let bo = store.get(layer.wo.b.expect("output bias"));
    let mut out = Vec::new();
    for row in &ctx {
        for o in 0..d {
            out.push((0..d).map(|c| row[c] * wo.at(&[c, o])).sum::<f64>() + bo.data()[o]);
        }
    }
    out
}

fn yield_sample(cfg: &ModelConfig, seed: u64, n_ped: usize, n_veh: usize) -> Result<PreparedSample, String> {
    let need = cfg.observed_frames() + cfg.n_pred;
    let scene = gen_interaction_scene(&ScenarioSpec {
        seed,
        n_pedestrians: n_ped,
        n_vehicles: n_veh,
        duration_frames: need,
        decision_frame: Some(cfg.observed_frames() - 1),
        behavior_mix: BehaviorMix::only(Behavior::Yield),
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    PreparedSample::new(cfg, format!("s{seed}"), (n_ped, n_veh), &scene.pedestrians, &scene.vehicles)
        .map_err(|e| e.to_string())
}

fn attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for inst in 0..100u64 {
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let dim = heads * rng.random_range(1..=4);
        let (nq, nk) = (rng.random_range(1..=8), rng.random_range(1..=10));
        let mut store = ParamStore::new();
        let layer = Attention::with_random_weights(&mut store, "pvi", dim, heads, Some(8), inst).map_err(|e| e.to_string())?;
        let xq = Tensor::randn(&[nq, dim], 1.0, &mut rng);
        let xkv = Tensor::randn(&[nk, dim], 1.0, &mut rng);
        let bins: Vec<usize> = (0..nq * nk).map(|_| rng.random_range(0..8)).collect();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let (q, kv) = (tape.constant(xq.clone()), tape.constant(xkv.clone()));
        let out = layer.apply(&mut tape, &p, q, kv, Some(&bins)).map_err(|e| e.to_string())?;
        let want = loop_attention(&store, &layer, &xq, &xkv, &bins);
        let diff = tape.value(out.out).data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
        ensure(diff <= 1e-10, format!("instance {inst}: deviation {diff:e}"))?;
    }

    // Row sums across every attention map of the full model.
    let cfg = ModelConfig::default();
    let mut row_err = 0.0f64;
    for seed in 0..5 {
        let s = yield_sample(&cfg, seed, 1 + seed as usize % 3, 1 + seed as usize % 4)?;
        let model = ForecastModel::new(cfg.clone(), seed).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let trace = model.forward(&mut tape, &p, &s, None).map_err(|e| e.to_string())?;
        for (_, w) in &trace.attention {
            let nk = *tape.shape(*w).last().expect("rank 3");
            for row in tape.value(*w).data().chunks(nk) {
                row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(row_err <= 1e-12, format!("row sum off by {row_err:e}"))?;

    // A +1e6 bias on one key makes that key take the whole row.
    let mut store = ParamStore::new();
    let layer = Attention::with_random_weights(&mut store, "pvi", 8, 2, Some(4), 77).map_err(|e| e.to_string())?;
    let table = layer.trpe.expect("biased layer");
    let t = store.get_mut(table);
    t.data_mut().fill(0.0);
    t.data_mut()[3 * 2] = 1e6;
    t.data_mut()[3 * 2 + 1] = 1e6;
    let (nq, nk) = (5, 7);
    let mut bins = vec![0; nq * nk];
    for i in 0..nq {
        bins[i * nk + (i + 2) % nk] = 3;
    }
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let q = tape.constant(Tensor::randn(&[nq, 8], 1.0, &mut rng));
    let kv = tape.constant(Tensor::randn(&[nk, 8], 1.0, &mut rng));
    let out = layer.apply(&mut tape, &p, q, kv, Some(&bins)).map_err(|e| e.to_string())?;
    let w = tape.value(out.weights);
    let mut one_hot_err = 0.0f64;
    for h in 0..2 {
        for i in 0..nq {
            for j in 0..nk {
                let want = if j == (i + 2) % nk { 1.0 } else { 0.0 };
                one_hot_err = one_hot_err.max((w.at(&[h, i, j]) - want).abs());
            }
        }
    }
    ensure(one_hot_err <= 1e-9, format!("saturated rows off by {one_hot_err:e}"))?;
    Ok(format!("loop deviation {worst:.1e}, row sums {row_err:.1e}, one-hot {one_hot_err:.1e}"))
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let traj = |rng: &mut ChaCha8Rng, n: usize, j: usize| -> Vec<Vec<Point3>> {
        (0..n)
            .map(|_| (0..j).map(|_| [0, 1, 2].map(|_| rng.random_range(-2.0..2.0))).collect())
            .collect()
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n, j) = (rng.random_range(1..=25), rng.random_range(1..=15));
        let (p, t) = (traj(&mut rng, n, j), traj(&mut rng, n, j));
        let h = rng.random_range(1..=n);
        let (mut sj, mut sa) = (0.0, 0.0);
        for f in 0..h {
            for k in 0..j {
                sj += oracle_dist(p[f][k], t[f][k]);
                let pc = [0, 1, 2].map(|c| p[f][k][c] - p[f][0][c]);
                let tc = [0, 1, 2].map(|c| t[f][k][c] - t[f][0][c]);
                sa += oracle_dist(pc, tc);
            }
        }
        let want_j = 1000.0 * sj / (h * j) as f64;
        let want_a = 1000.0 * sa / (h * j) as f64;
        let want_f = 1000.0 * oracle_dist(p[n - 1][0], t[n - 1][0]);
        let e = [
            (jpe(&p, &t, h).map_err(|e| e.to_string())? - want_j).abs(),
            (ape(&p, &t, h).map_err(|e| e.to_string())? - want_a).abs(),
            (fde(&p, &t).map_err(|e| e.to_string())? - want_f).abs(),
        ];
        worst = e.iter().fold(worst, |a, b| a.max(*b));
        ensure(e.iter().all(|x| *x <= 1e-9), format!("oracle deviation {e:?}"))?;
    }
    let truth = traj(&mut rng, 25, 15);
    let moved: Vec<Vec<Point3>> = truth
        .iter()
        .map(|f| f.iter().map(|q| [q[0] + 3.0, q[1] + 4.0, q[2]]).collect())
        .collect();
    let fixture = [
        jpe(&moved, &truth, 25).map_err(|e| e.to_string())?,
        ape(&moved, &truth, 25).map_err(|e| e.to_string())?,
        fde(&moved, &truth).map_err(|e| e.to_string())?,
    ];
    let want = [5000.0, 0.0, 5000.0];
    ensure(
        fixture.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-9),
        format!("fixtures gave {fixture:?}"),
    )?;
    Ok(format!(
        "oracle deviation {worst:.1e}; fixtures {:.3}/{:.3}/{:.3} mm",
        fixture[0], fixture[1], fixture[2]
    ))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        dropout: 0.0,
        ..Default::default()
    };
    let batch: Vec<PreparedSample> = (0..2).map(|i| yield_sample(&cfg, 40 + i, 2, 2)).collect::<Result<_, _>>()?;
    let mut model = ForecastModel::new(cfg, 1).map_err(|e| e.to_string())?;
    let initial = mean_loss(&model, &batch).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 2,
        dropout: false,
        ..Default::default()
    };
    fit(&mut model, &batch, &[], &tc, None, |_| {}).map_err(|e| e.to_string())?;
    let last = mean_loss(&model, &batch).map_err(|e| e.to_string())?;
    within(start.elapsed(), 180)?;
    let ratio = last / initial;
    ensure(ratio <= 0.1, format!("loss {initial:.4} -> {last:.4} ({:.1}%)", 100.0 * ratio))?;
    Ok(format!(
        "L_rec {initial:.4} -> {last:.5} ({:.1}%) in {:.1}s",
        100.0 * ratio,
        start.elapsed().as_secs_f64()
    ))
}

fn vehicle_conditioning() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let frames = 40;
    let template = CorpusTemplate {
        n_pedestrians: Some(2),
        n_vehicles: Some(2),
        duration_frames: frames,
        behavior_mix: BehaviorMix::only(Behavior::Yield),
        // The last observed frame is the decision frame.
        decision_frame: Some(frames - 1 - cfg.n_pred),
        ..Default::default()
    };
    let (scenes, _) = gen_scenes(&corpus_specs(8, 2300, &template)).map_err(|e| e.to_string())?;
    let seg = SegmentFilterConfig {
        window_frames: frames,
        stride_frames: frames,
        ..Default::default()
    };
    let records: Vec<_> = segment_corpus(&scenes, &seg)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|r| r.category == (2, 2))
        .take(2000)
        .collect();
    ensure(records.len() == 2000, format!("only {} yield segments", records.len()))?;
    let opts = ReportOptions::default();
    let mut ours_sum = 0.0;
    let mut base_sum = 0.0;
    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        let mut finals = [0.0; 2];
        for (k, vehicles) in [true, false].into_iter().enumerate() {
            let mc = ModelConfig {
                use_vehicles: vehicles,
                ..cfg.clone()
            };
            let samples = prepare_samples(&mc, &scenes, &records).map_err(|e| e.to_string())?;
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (s, r) in samples.into_iter().zip(&records) {
                if r.split == Split::Train {
                    train.push(s);
                } else {
                    val.push(s);
                }
            }
            let mut model = ForecastModel::new(mc, seed).map_err(|e| e.to_string())?;
            let tc = TrainConfig {
                epochs: 20,
                seed,
                ..Default::default()
            };
            fit(&mut model, &train, &val, &tc, None, |_| {}).map_err(|e| e.to_string())?;
            let report = Report::build(&forecasts(&model, &val).map_err(|e| e.to_string())?, None, &opts)
                .map_err(|e| e.to_string())?;
            let h = *report.horizons_s.last().expect("a horizon");
            finals[k] = report
                .get((2, 2), Metric::Jpe, h)
                .and_then(|r| r.ours_mm)
                .ok_or("no (2,2) MPJPE cell")?;
        }
        ours_sum += finals[0];
        base_sum += finals[1];
        per_seed.push(format!("{:.1}/{:.1}", finals[0], finals[1]));
    }
    let (ours, base) = (ours_sum / 3.0, base_sum / 3.0);
    let gain = 1.0 - ours / base;
    let summary = format!(
        "MPJPE ours {ours:.1} mm vs baseline {base:.1} mm ({:.1}% lower; per seed {}) in {:.0}s",
        100.0 * gain,
        per_seed.join(", "),
        start.elapsed().as_secs_f64()
    );
    within(start.elapsed(), 1800)?;
    ensure(gain >= 0.10, summary.clone())?;
    Ok(summary)
}

fn vpf(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vpf"))
        .args(args)
        .env("VPF_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("vpf {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn grouping_ablation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let data = d.join("data");
    vpf(&["synth", "--seed", "9", "--scenes", "16", "--out", p(&data)], "1")?;
    vpf(&["segment", "--input", p(&data), "--out", p(&data)], "1")?;
    let text = std::fs::read_to_string(data.join("segments.jsonl")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    ensure(lines.len() >= 200, format!("only {} segments", lines.len()))?;
    let subset = d.join("segments200.jsonl");
    std::fs::write(&subset, lines[..200].join("\n") + "\n").map_err(|e| e.to_string())?;

    let mut ckpts = Vec::new();
    for g in ["1", "2", "4", "6", "8", "12"] {
        let out = d.join(format!("g{g}"));
        vpf(
            &[
                "train", "--input", p(&data), "--segments", p(&subset), "--corner-groups", g, "--epochs", "2",
                "--out", p(&out),
            ],
            "1",
        )?;
        ckpts.push(out.join("last.json"));
    }
    let eval_dir = d.join("eval");
    let mut args = vec!["eval", "--input", p(&data), "--segments", p(&subset), "--out", p(&eval_dir)];
    for c in &ckpts {
        args.push("--ours");
        args.push(p(c));
    }
    vpf(&args, "1")?;
    let csv = std::fs::read_to_string(eval_dir.join("ablation.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let groups: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap_or("")).collect();
    ensure(groups == ["1", "2", "4", "6", "8", "12"], format!("ablation rows {groups:?}"))?;
    let jpes: Vec<String> = rows.iter().map(|r| r.split(',').nth(1).unwrap_or("").to_string()).collect();
    Ok(format!("one row per scheme, MPJPE {}", jpes.join(" / ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |root: &Path, threads: &str| -> Result<(), String> {
        let data = root.join("data");
        vpf(&["synth", "--seed", "21", "--scenes", "6", "--out", p(&data)], threads)?;
        vpf(&["segment", "--input", p(&data), "--out", p(&data)], threads)?;
        vpf(
            &["train", "--input", p(&data), "--epochs", "2", "--batch", "8", "--seed", "3", "--out", p(&root.join("ours"))],
            threads,
        )?;
        vpf(
            &[
                "train", "--input", p(&data), "--epochs", "2", "--batch", "8", "--seed", "3", "--vehicles", "off",
                "--out", p(&root.join("base")),
            ],
            threads,
        )?;
        vpf(
            &[
                "eval", "--input", p(&data), "--ours", p(&root.join("ours/last")), "--baseline",
                p(&root.join("base/last")), "--out", p(&root.join("eval")),
            ],
            threads,
        )
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a, "1")?;
    run(&b, "2")?;
    let files = [
        "data/scenes.jsonl",
        "data/manifest.json",
        "data/segments.jsonl",
        "data/stats.csv",
        "ours/loss.csv",
        "ours/last.bin",
        "ours/best.bin",
        "base/last.bin",
        "eval/report.csv",
        "eval/report.txt",
    ];
    for f in files {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(x == y, format!("{f} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across reruns", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradients),
        ("DCT suite", dct),
        ("segment filter oracles", segment_oracles),
        ("k-d tree", kdtree),
        ("attention equivalence", attention),
        ("metric oracles", metrics),
        ("overfit convergence", overfit),
        ("vehicle conditioning", vehicle_conditioning),
        ("grouping ablation", grouping_ablation),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::var("VPF_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
