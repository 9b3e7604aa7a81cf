use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vpf_core::autodiff::check_primitives;
use vpf_core::io::write_string_atomic;
use vpf_core::metrics::{
    ablation_csv, forecasts, overall_means, AblationRow, HorizonMode, Report, ReportOptions, ScenePlot,
};
use vpf_core::model::{
    check_model_gradients, load_checkpoint, prepare_samples, save_checkpoint, ForecastModel, ModelConfig,
    PreparedSample,
};
use vpf_core::segment::{dataset_stats, read_segments, segment_corpus, write_segments, SegmentFilterConfig, SegmentRecord, Split};
use vpf_core::synth::{corpus_specs, gen_dataset, Behavior, BehaviorMix, CorpusTemplate, SCENES_FILE};
use vpf_core::train::{fit, mean_loss, TrainConfig};
use vpf_core::types::{read_scenes, CornerScheme, Point3, Scene};
use vpf_core::{Error, Result};

use crate::args::*;

pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const STATS_FILE: &str = "stats.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const RUN_CONFIG: &str = "config.json";

pub fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth(_) => "synth",
        Command::Segment(_) => "segment",
        Command::Stats(_) => "stats",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Predict(_) => "predict",
        Command::Gradcheck(_) => "gradcheck",
        Command::Plot(_) => "plot",
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(&a),
        Command::Segment(a) => segment(&a),
        Command::Stats(a) => stats(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Predict(a) => predict(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Plot(a) => plot(&a),
    }
}

fn say(msg: impl AsRef<str>) {
    let _ = writeln!(std::io::stdout(), "{}", msg.as_ref());
}

fn log(msg: impl AsRef<str>) {
    let _ = writeln!(std::io::stderr(), "{}", msg.as_ref());
}

fn scenes_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(SCENES_FILE)
    } else {
        input.to_path_buf()
    }
}

fn segments_path(data: &DataArgs) -> PathBuf {
    match &data.segments {
        Some(p) if p.is_dir() => p.join(SEGMENTS_FILE),
        Some(p) => p.clone(),
        None => scenes_path(&data.input)
            .parent()
            .map_or_else(|| PathBuf::from(SEGMENTS_FILE), |d| d.join(SEGMENTS_FILE)),
    }
}

fn load_data(data: &DataArgs) -> Result<(Vec<Scene>, Vec<SegmentRecord>)> {
    let scenes = read_scenes(&scenes_path(&data.input))?;
    let records = read_segments(&segments_path(data))?;
    Ok((scenes, records))
}

fn select_split(records: &[SegmentRecord], split: SplitArg) -> Vec<SegmentRecord> {
    records
        .iter()
        .filter(|r| match split {
            SplitArg::All => true,
            SplitArg::Train => r.split == Split::Train,
            SplitArg::Val => r.split == Split::Val,
        })
        .cloned()
        .collect()
}

fn synth(a: &SynthArgs) -> Result<()> {
    let behavior_mix = match a.behavior {
        BehaviorArg::Mixed => BehaviorMix::default(),
        BehaviorArg::Cross => BehaviorMix::only(Behavior::Cross),
        BehaviorArg::Yield => BehaviorMix::only(Behavior::Yield),
        BehaviorArg::WalkAlong => BehaviorMix::only(Behavior::WalkAlong),
        BehaviorArg::Stand => BehaviorMix::only(Behavior::Stand),
    };
    let template = CorpusTemplate {
        n_pedestrians: a.n_ped,
        n_vehicles: a.n_veh,
        duration_frames: a.frames,
        behavior_mix,
        noise_std: a.noise,
        frame_rate_hz: a.fps,
        decision_frame: a.decision_frame,
    };
    let specs = corpus_specs(a.seed, a.scenes, &template);
    for s in &specs {
        s.validate()?;
    }
    let manifest = gen_dataset(&specs, &a.out)?;
    say(format!("wrote {} scenes to {}", manifest.scenes.len(), a.out.display()));
    Ok(())
}

fn segment(a: &SegmentArgs) -> Result<()> {
    let cfg = SegmentFilterConfig {
        window_frames: a.window,
        stride_frames: a.stride,
        max_pairwise_distance_m: a.rmax,
        vehicle_distance_threshold_m: a.th,
        train_fraction: a.train_fraction,
        ..Default::default()
    };
    cfg.validate()?;
    let scenes = read_scenes(&scenes_path(&a.input))?;
    let records = segment_corpus(&scenes, &cfg)?;
    write_segments(&a.out.join(SEGMENTS_FILE), &records)?;
    let stats = dataset_stats(&records, &cfg);
    write_string_atomic(&a.out.join(STATS_FILE), &stats.to_csv())?;
    say(format!("{} segments from {} scenes", records.len(), scenes.len()));
    say(stats.to_table());
    Ok(())
}

fn stats(a: &StatsArgs) -> Result<()> {
    let path = if a.segments.is_dir() {
        a.segments.join(SEGMENTS_FILE)
    } else {
        a.segments.clone()
    };
    let records = read_segments(&path)?;
    let stats = dataset_stats(&records, &SegmentFilterConfig::default());
    say(stats.to_table());
    say(format!("total {}", stats.total()));
    if let Some(out) = &a.out {
        write_string_atomic(out, &stats.to_csv())?;
    }
    Ok(())
}

pub fn model_config(m: &ModelArgs) -> Result<ModelConfig> {
    let mut cfg = ModelConfig {
        use_vehicles: m.vehicles == OnOff::On,
        corner_groups: CornerScheme::from_count(m.corner_groups)?,
        ..Default::default()
    };
    if let Some(v) = m.dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = m.heads {
        cfg.heads = v;
    }
    if let Some(v) = m.dct_keep {
        cfg.dct_keep = v;
    }
    if let Some(v) = m.t_obs {
        cfg.t_obs = v;
    }
    if let Some(v) = m.n_pred {
        cfg.n_pred = v;
    }
    if let Some(v) = m.dropout {
        cfg.dropout = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunConfig<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    scenes: String,
    segments: String,
}

fn train(a: &TrainArgs) -> Result<()> {
    let (mut model, cfg) = match &a.ckpt {
        Some(path) => {
            let m = load_checkpoint(path)?;
            let c = m.config().clone();
            (m, c)
        }
        None => {
            let cfg = model_config(&a.model)?;
            (ForecastModel::new(cfg.clone(), a.seed)?, cfg)
        }
    };
    let tc = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch,
        clip_norm: a.clip,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        dropout: cfg.dropout > 0.0,
        ..Default::default()
    };
    tc.validate()?;
    let (scenes, records) = load_data(&a.data)?;
    let samples = prepare_samples(&cfg, &scenes, &records)?;
    let (train, val): (Vec<PreparedSample>, Vec<PreparedSample>) = {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (s, r) in samples.into_iter().zip(&records) {
            match r.split {
                Split::Train => train.push(s),
                Split::Val => val.push(s),
            }
        }
        (train, val)
    };
    log(format!(
        "training on {} segments ({} validation), {} parameters",
        train.len(),
        val.len(),
        model.params().scalar_count()
    ));
    let run = RunConfig {
        model: &cfg,
        train: &tc,
        scenes: scenes_path(&a.data.input).display().to_string(),
        segments: segments_path(&a.data).display().to_string(),
    };
    let json = serde_json::to_string_pretty(&run).expect("run config serializes");
    write_string_atomic(&a.out.join(RUN_CONFIG), &(json + "\n"))?;
    let epochs = tc.epochs;
    let outcome = fit(&mut model, &train, &val, &tc, Some(&a.out), |e| {
        let val = e.val_loss.map(|v| format!(" val {v:.6}")).unwrap_or_default();
        log(format!("epoch {}/{epochs} train {:.6}{val}", e.epoch, e.train_loss));
    })?;
    if epochs == 0 {
        save_checkpoint(&model, &a.out.join(vpf_core::train::LAST_CHECKPOINT))?;
    }
    say(format!(
        "best epoch {} (loss {:.6}); checkpoints in {}",
        outcome.best_epoch,
        outcome.best_loss,
        a.out.display()
    ));
    Ok(())
}

fn parse_horizons(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|h| {
            h.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| Error::Invalid(format!("bad horizon `{h}`")))
        })
        .collect()
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (scenes, records) = load_data(&a.data)?;
    let records = select_split(&records, a.split);
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("no segments in the {:?} split", a.split)));
    }
    let fps = scenes.first().map_or(25.0, |s| s.frame_rate_hz);
    let opts = ReportOptions {
        horizons_s: parse_horizons(&a.horizons)?,
        frame_rate_hz: fps,
        mode: if a.at_frame { HorizonMode::AtFrame } else { HorizonMode::Cumulative },
        ..Default::default()
    };
    let baseline = a.baseline.as_deref().map(load_checkpoint).transpose()?;
    let base_f = match &baseline {
        Some(b) => Some(forecasts(b, &prepare_samples(b.config(), &scenes, &records)?)?),
        None => None,
    };

    let mut ablation = Vec::new();
    let mut first_report = None;
    for path in &a.ours {
        let model = load_checkpoint(path)?;
        let samples = prepare_samples(model.config(), &scenes, &records)?;
        let f = forecasts(&model, &samples)?;
        if a.ours.len() > 1 {
            let [jpe, ape, fde] = overall_means(&f, opts.mode)?;
            ablation.push(AblationRow {
                corner_groups: model.config().corner_groups.group_count(),
                jpe_mm: jpe,
                ape_mm: ape,
                fde_mm: fde,
                val_loss: mean_loss(&model, &samples)?,
            });
        }
        if first_report.is_none() {
            first_report = Some(Report::build(&f, base_f.as_deref(), &opts)?);
        }
    }
    let report = first_report.expect("at least one --ours checkpoint");
    write_string_atomic(&a.out.join(REPORT_CSV), &report.to_csv())?;
    write_string_atomic(&a.out.join(REPORT_TXT), &report.to_table())?;
    say(report.to_table());
    if !ablation.is_empty() {
        let csv = ablation_csv(&ablation);
        write_string_atomic(&a.out.join(ABLATION_CSV), &csv)?;
        say(csv);
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    key: &'a str,
    scene_id: &'a str,
    /// Absolute index of the first predicted frame.
    first_frame: usize,
    frame_rate_hz: f64,
    pedestrian_ids: &'a [u64],
    /// Pedestrian x frame x joint.
    poses: Vec<Vec<Vec<Point3>>>,
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let (scenes, records) = load_data(&a.data)?;
    let records: Vec<SegmentRecord> = records
        .into_iter()
        .filter(|r| a.scene.as_ref().is_none_or(|s| &r.scene_id == s))
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset("no segments match".into()));
    }
    let samples = prepare_samples(model.config(), &scenes, &records)?;
    let n_pred = model.config().n_pred;
    let mut out = String::new();
    for (s, r) in samples.iter().zip(&records) {
        let fps = scenes
            .iter()
            .find(|x| x.scene_id == r.scene_id)
            .map_or(25.0, |x| x.frame_rate_hz);
        let line = PredictionLine {
            key: &s.key,
            scene_id: &r.scene_id,
            first_frame: r.frame_end - n_pred,
            frame_rate_hz: fps,
            pedestrian_ids: &s.pedestrian_ids,
            poses: model.predict(s)?,
        };
        out += &serde_json::to_string(&line).expect("prediction serializes");
        out.push('\n');
    }
    write_string_atomic(&a.out, &out)?;
    say(format!("wrote {} predictions to {}", samples.len(), a.out.display()));
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut failures = 0usize;
    let mut worst: std::collections::BTreeMap<String, f64> = std::collections::BTreeMap::new();
    for seed in a.seed..a.seed + a.seeds {
        for (name, report) in check_primitives(seed, a.step, a.tol)? {
            let e = worst.entry(name.to_string()).or_insert(0.0);
            *e = e.max(report.max_rel_error);
            if !report.passed() {
                failures += 1;
                log(format!("seed {seed}: {name} max rel error {:.3e}", report.max_rel_error));
            }
        }
        let (report, param) = check_model_gradients(seed, a.step, a.tol)?;
        let e = worst.entry("forecaster".into()).or_insert(0.0);
        *e = e.max(report.max_rel_error);
        if !report.passed() {
            failures += 1;
            log(format!("seed {seed}: forecaster max rel error {:.3e} in {param}", report.max_rel_error));
        }
    }
    for (name, err) in &worst {
        let verdict = if *err <= a.tol { "PASS" } else { "FAIL" };
        say(format!("{verdict} {name:<16} max rel error {err:.3e}"));
    }
    if failures > 0 {
        return Err(Error::NonFinite(format!("gradient check: {failures} failing cases")));
    }
    say(format!("all gradients agree within {} over {} seeds", a.tol, a.seeds));
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    let (scenes, records) = load_data(&a.data)?;
    let records: Vec<SegmentRecord> = records
        .into_iter()
        .filter(|r| a.scene.as_ref().is_none_or(|s| &r.scene_id == s))
        .take(a.limit)
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset("no segments match".into()));
    }
    let ours = a.ours.as_deref().map(load_checkpoint).transpose()?;
    let baseline = a.baseline.as_deref().map(load_checkpoint).transpose()?;
    let reference = ours.as_ref().or(baseline.as_ref()).map_or_else(ModelConfig::default, |m| m.config().clone());
    let need = reference.observed_frames() + reference.n_pred;
    let samples = prepare_samples(&reference, &scenes, &records)?;
    let run = |m: &Option<ForecastModel>, r: &SegmentRecord| -> Result<Option<Vec<Vec<Vec<Point3>>>>> {
        match m {
            Some(m) => {
                let scene = scenes.iter().find(|s| s.scene_id == r.scene_id).expect("prepared above");
                Ok(Some(m.predict(&PreparedSample::from_segment(m.config(), scene, r)?)?))
            }
            None => Ok(None),
        }
    };
    for (s, r) in samples.iter().zip(&records) {
        let scene = scenes.iter().find(|x| x.scene_id == r.scene_id).expect("prepared above");
        let start = r.frame_end - need;
        let observed = start..start + reference.observed_frames();
        let o = run(&ours, r)?;
        let b = run(&baseline, r)?;
        let plot = ScenePlot::from_sample(s, scene, observed, o.as_deref(), b.as_deref())?;
        let ids: Vec<String> = r.pedestrian_ids.iter().map(u64::to_string).collect();
        let file = a.out.join(format!("{}_{}_p{}.svg", r.scene_id, r.frame_start, ids.join("-")));
        write_string_atomic(&file, &plot.to_svg())?;
    }
    say(format!("wrote {} plots to {}", records.len(), a.out.display()));
    Ok(())
}
