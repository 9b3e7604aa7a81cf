//! Python bindings: corpus generation, segmentation, metrics, DCT helpers and
//! the forecaster itself.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use vpf_core::autodiff::check_primitives;
use vpf_core::dct::DctPlan;
use vpf_core::metrics;
use vpf_core::model::{
    check_model_gradients, load_checkpoint, prepare_samples, save_checkpoint, ForecastModel, ModelConfig,
    PreparedSample,
};
use vpf_core::segment::{read_segments, segment_corpus, write_segments, SegmentFilterConfig, Split};
use vpf_core::synth::{corpus_specs, gen_dataset, CorpusTemplate, SCENES_FILE};
use vpf_core::train::{fit, TrainConfig};
use vpf_core::types::{read_scenes, Point3};
use vpf_core::Error;

const SEGMENTS_FILE: &str = "segments.jsonl";

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn scenes_file(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(SCENES_FILE)
    } else {
        data.to_path_buf()
    }
}

fn segments_file(data: &Path) -> PathBuf {
    scenes_file(data)
        .parent()
        .map_or_else(|| PathBuf::from(SEGMENTS_FILE), |d| d.join(SEGMENTS_FILE))
}

/// Generates `scenes` synthetic scenes into `out` and returns the number written.
#[pyfunction]
#[pyo3(signature = (out, seed=0, scenes=100, n_ped=None, n_veh=None, frames=150))]
fn synth(py: Python<'_>, out: PathBuf, seed: u64, scenes: usize, n_ped: Option<usize>, n_veh: Option<usize>, frames: usize) -> PyResult<usize> {
    let template = CorpusTemplate {
        n_pedestrians: n_ped,
        n_vehicles: n_veh,
        duration_frames: frames,
        ..Default::default()
    };
    let specs = corpus_specs(seed, scenes, &template);
    py.detach(|| {
        for s in &specs {
            s.validate()?;
        }
        gen_dataset(&specs, &out).map(|m| m.scenes.len())
    })
    .map_err(to_py)
}

/// Segments the scenes under `data`, writes `segments.jsonl` next to them and
/// returns the records as dicts.
#[pyfunction]
#[pyo3(signature = (data, window=75, stride=25, th=15.0, rmax=18.0, train_fraction=0.8))]
fn segment<'py>(
    py: Python<'py>,
    data: PathBuf,
    window: usize,
    stride: usize,
    th: f64,
    rmax: f64,
    train_fraction: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SegmentFilterConfig {
        window_frames: window,
        stride_frames: stride,
        vehicle_distance_threshold_m: th,
        max_pairwise_distance_m: rmax,
        train_fraction,
        ..Default::default()
    };
    let records = py
        .detach(|| {
            cfg.validate()?;
            let scenes = read_scenes(&scenes_file(&data))?;
            let records = segment_corpus(&scenes, &cfg)?;
            write_segments(&segments_file(&data), &records)?;
            Ok(records)
        })
        .map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&records).expect("records serialize"))
}

/// Mean per-joint position error in mm over the first `horizon` frames
/// (all frames by default).
#[pyfunction]
#[pyo3(signature = (pred, truth, horizon=None))]
fn jpe(pred: Vec<Vec<Point3>>, truth: Vec<Vec<Point3>>, horizon: Option<usize>) -> PyResult<f64> {
    let h = horizon.unwrap_or(pred.len());
    metrics::jpe(&pred, &truth, h).map_err(to_py)
}

/// Root-aligned joint error in mm.
#[pyfunction]
#[pyo3(signature = (pred, truth, horizon=None))]
fn ape(pred: Vec<Vec<Point3>>, truth: Vec<Vec<Point3>>, horizon: Option<usize>) -> PyResult<f64> {
    let h = horizon.unwrap_or(pred.len());
    metrics::ape(&pred, &truth, h).map_err(to_py)
}

/// Final-frame root displacement error in mm.
#[pyfunction]
fn fde(pred: Vec<Vec<Point3>>, truth: Vec<Vec<Point3>>) -> PyResult<f64> {
    metrics::fde(&pred, &truth).map_err(to_py)
}

/// Orthonormal DCT-II of `signal`, truncated to the first `keep` coefficients.
#[pyfunction]
#[pyo3(signature = (signal, keep=None))]
fn dct(signal: Vec<f64>, keep: Option<usize>) -> PyResult<Vec<f64>> {
    let plan = DctPlan::new(signal.len(), keep.unwrap_or(signal.len())).map_err(to_py)?;
    plan.forward(&signal).map_err(to_py)
}

/// Inverse of [`dct`]: rebuilds a length-`length` signal from leading coefficients.
#[pyfunction]
fn idct(coeffs: Vec<f64>, length: usize) -> PyResult<Vec<f64>> {
    let plan = DctPlan::new(length, coeffs.len()).map_err(to_py)?;
    plan.inverse(&coeffs).map_err(to_py)
}

/// Finite-difference checks of every primitive and the full model.
/// Returns `(name, max_rel_error, passed)` triples.
#[pyfunction]
#[pyo3(signature = (seed=0, step=1e-4, tol=1e-4))]
fn gradcheck(py: Python<'_>, seed: u64, step: f64, tol: f64) -> PyResult<Vec<(String, f64, bool)>> {
    py.detach(|| {
        let mut out: Vec<(String, f64, bool)> = check_primitives(seed, step, tol)?
            .into_iter()
            .map(|(name, r)| (name.to_string(), r.max_rel_error, r.passed()))
            .collect();
        let (r, _) = check_model_gradients(seed, step, tol)?;
        out.push(("forecaster".into(), r.max_rel_error, r.passed()));
        Ok(out)
    })
    .map_err(to_py)
}

fn load_samples(model: &ForecastModel, data: &Path, scene: Option<&str>) -> vpf_core::Result<(Vec<PreparedSample>, Vec<vpf_core::segment::SegmentRecord>)> {
    let scenes = read_scenes(&scenes_file(data))?;
    let records: Vec<_> = read_segments(&segments_file(data))?
        .into_iter()
        .filter(|r| scene.is_none_or(|s| r.scene_id == s))
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset("no segments match".into()));
    }
    Ok((prepare_samples(model.config(), &scenes, &records)?, records))
}

/// The pose forecaster. `config` is a JSON object of model settings; missing
/// keys take their defaults.
#[pyclass(module = "vpf")]
struct Forecaster {
    model: ForecastModel,
}

#[pymethods]
impl Forecaster {
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg: ModelConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("bad config: {e}")))?,
            None => ModelConfig::default(),
        };
        cfg.validate().map_err(to_py)?;
        Ok(Self {
            model: ForecastModel::new(cfg, seed).map_err(to_py)?,
        })
    }

    /// Loads a checkpoint stem (`best`, `last`, or either file of the pair).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: load_checkpoint(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.model, &path).map_err(to_py)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.model.params().scalar_count()
    }

    fn config_json(&self) -> String {
        serde_json::to_string(self.model.config()).expect("config serializes")
    }

    /// Trains on the segmented corpus under `data`. Returns one
    /// `(epoch, train_loss, val_loss)` tuple per epoch; `val_loss` is `None`
    /// without validation segments. The model ends at its final epoch.
    #[pyo3(signature = (data, epochs=20, lr=1e-3, batch=32, seed=0, out=None))]
    fn train(
        &mut self,
        py: Python<'_>,
        data: PathBuf,
        epochs: usize,
        lr: f64,
        batch: usize,
        seed: u64,
        out: Option<PathBuf>,
    ) -> PyResult<Vec<(usize, f64, Option<f64>)>> {
        let tc = TrainConfig {
            epochs,
            lr,
            batch_size: batch,
            seed,
            dropout: self.model.config().dropout > 0.0,
            ..Default::default()
        };
        let model = &mut self.model;
        py.detach(|| {
            tc.validate()?;
            let (samples, records) = load_samples(model, &data, None)?;
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (s, r) in samples.into_iter().zip(&records) {
                match r.split {
                    Split::Train => train.push(s),
                    Split::Val => val.push(s),
                }
            }
            let outcome = fit(model, &train, &val, &tc, out.as_deref(), |_| {})?;
            Ok(outcome
                .history
                .iter()
                .map(|e| (e.epoch, e.train_loss, e.val_loss))
                .collect())
        })
        .map_err(to_py)
    }

    /// Forecasts every segment of `data` (optionally one scene). Each result
    /// is a dict with `key`, `scene_id`, `pedestrian_ids` and `poses`
    /// (`pedestrians x frames x joints x 3`, metres).
    #[pyo3(signature = (data, scene=None))]
    fn predict<'py>(&self, py: Python<'py>, data: PathBuf, scene: Option<String>) -> PyResult<Bound<'py, PyAny>> {
        let model = &self.model;
        let rows = py
            .detach(|| {
                let (samples, records) = load_samples(model, &data, scene.as_deref())?;
                samples
                    .iter()
                    .zip(&records)
                    .map(|(s, r)| {
                        Ok(serde_json::json!({
                            "key": s.key,
                            "scene_id": r.scene_id,
                            "pedestrian_ids": s.pedestrian_ids,
                            "poses": model.predict(s)?,
                        }))
                    })
                    .collect::<vpf_core::Result<Vec<_>>>()
            })
            .map_err(to_py)?;
        json_to_py(py, &serde_json::Value::Array(rows).to_string())
    }

    fn __repr__(&self) -> String {
        let c = self.model.config();
        format!(
            "Forecaster(feature_dim={}, vehicles={}, corner_groups={:?}, params={})",
            c.feature_dim,
            c.use_vehicles,
            c.corner_groups,
            self.param_count()
        )
    }
}

#[pymodule]
fn vpf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(jpe, m)?)?;
    m.add_function(wrap_pyfunction!(ape, m)?)?;
    m.add_function(wrap_pyfunction!(fde, m)?)?;
    m.add_function(wrap_pyfunction!(dct, m)?)?;
    m.add_function(wrap_pyfunction!(idct, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_class::<Forecaster>()?;
    Ok(())
}
