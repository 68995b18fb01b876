//! Python bindings.
//!
//! ```python
//! import blindcount
//! scenes = blindcount.generate_scenes("train", 20, seed=1, classes_max=3, instances_max=20)
//! model = blindcount.Model(64, 64, m_hat=5, seed=0)
//! log = model.train(scenes, epochs=5, sigma=4.0, learning_rate=1e-3)
//! print(model.count(scenes[0].image))
//! ```

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use blindcount::assignment::{brute_force_lap, solve_lap, Assignment, CostMatrix};
use blindcount::densitymap;
use blindcount::matching::deployment_postprocess;
use blindcount::metrics::{self, BaselineMode, CountPair, MetricReport};
use blindcount::model::{self as bc_model, EvalOptions, ModelConfig, ModelParams, TrainConfig};
use blindcount::raster::Raster;
use blindcount::scenegen::{self, GenConfig, SceneLabel, Split};
use blindcount::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Image = Vec<Vec<Vec<f64>>>;

fn raster_from(image: Image) -> PyResult<Raster> {
    let c = image.len();
    let h = image.first().map_or(0, Vec::len);
    let w = image.first().and_then(|p| p.first()).map_or(0, Vec::len);
    if image.iter().any(|p| p.len() != h || p.iter().any(|r| r.len() != w)) {
        return Err(PyValueError::new_err("image must be a rectangular [channel][row][col] list"));
    }
    let data = image.into_iter().flatten().flatten().collect();
    Raster::from_vec(c, h, w, data).map_err(to_py)
}

fn raster_to(r: &Raster) -> Image {
    (0..r.channels())
        .map(|c| (0..r.height()).map(|y| (0..r.width()).map(|x| r.get(c, y, x)).collect()).collect())
        .collect()
}

/// A nonnegative per-pixel density raster.
#[pyclass(name = "DensityMap", module = "blindcount", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensityMap(densitymap::DensityMap);

#[pymethods]
impl PyDensityMap {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        densitymap::DensityMap::from_rows(&rows).map(Self).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Integral of the map, i.e. its count.
    #[getter]
    fn count(&self) -> f64 {
        densitymap::integrate(&self.0)
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.0.values().chunks(self.0.width()).map(<[f64]>::to_vec).collect()
    }

    fn __repr__(&self) -> String {
        let (h, w) = self.0.dims();
        format!("DensityMap({h}x{w}, count={:.4})", self.count())
    }
}

/// Unit-mass Gaussian per `(x, y)` center.
#[pyfunction]
#[pyo3(signature = (centers, height, width, sigma = densitymap::DEFAULT_SIGMA))]
fn pseudo_density(centers: Vec<(f64, f64)>, height: usize, width: usize, sigma: f64) -> PyResult<PyDensityMap> {
    let centers: Vec<_> = centers.into_iter().map(|(x, y)| densitymap::InstanceCenter::new(x, y)).collect();
    densitymap::pseudo_density(&centers, height, width, sigma)
        .map(PyDensityMap)
        .map_err(to_py)
}

#[pyfunction]
fn normalized_cost(gt: &PyDensityMap, pred: &PyDensityMap) -> PyResult<f64> {
    densitymap::normalized_cost(&gt.0, &pred.0).map_err(to_py)
}

fn lap_result(a: Assignment) -> (Vec<(usize, usize)>, f64) {
    (a.pairs, a.total_cost)
}

/// Optimal assignment for a prediction-by-label cost matrix. Returns
/// `((prediction, label) pairs, total cost)`.
#[pyfunction]
#[pyo3(name = "solve_lap")]
fn py_solve_lap(costs: Vec<Vec<f64>>) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let m = CostMatrix::from_rows(&costs).map_err(to_py)?;
    solve_lap(&m).map(lap_result).map_err(to_py)
}

#[pyfunction]
#[pyo3(name = "brute_force_lap")]
fn py_brute_force_lap(costs: Vec<Vec<f64>>) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let m = CostMatrix::from_rows(&costs).map_err(to_py)?;
    brute_force_lap(&m).map(lap_result).map_err(to_py)
}

fn report_dict(r: MetricReport) -> HashMap<&'static str, f64> {
    HashMap::from([
        ("mae", r.mae),
        ("rmse", r.rmse),
        ("nae", r.nae),
        ("sre", r.sre),
        ("pairs", r.pair_count as f64),
    ])
}

/// MAE, RMSE, NAE and SRE over `(y, y_hat)` pairs.
#[pyfunction]
fn compute_metrics(pairs: Vec<(f64, f64)>) -> PyResult<HashMap<&'static str, f64>> {
    let pairs: Vec<_> = pairs.into_iter().map(|(y, h)| CountPair::new(y, h, "", 0)).collect();
    metrics::compute_metrics(&pairs).map(report_dict).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (train_counts, mode = "median"))]
fn baseline_predict(train_counts: Vec<f64>, mode: &str) -> PyResult<f64> {
    let mode = match mode {
        "mean" => BaselineMode::Mean,
        "median" => BaselineMode::Median,
        _ => return Err(PyValueError::new_err(format!("mode must be mean or median, got {mode:?}"))),
    };
    metrics::baseline_predict(&train_counts, mode).map_err(to_py)
}

/// A generated scene with its labels.
#[pyclass(name = "Scene", module = "blindcount", frozen)]
struct PyScene(SceneLabel);

#[pymethods]
impl PyScene {
    #[getter]
    fn image_id(&self) -> &str {
        &self.0.image_id
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height, self.0.width)
    }

    /// Counted instances per class.
    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.0.counts()
    }

    /// RGB values in `[0, 1]`, indexed `[channel][row][col]`.
    #[getter]
    fn image(&self) -> Image {
        raster_to(&self.0.image)
    }

    #[pyo3(signature = (sigma = densitymap::DEFAULT_SIGMA))]
    fn density_maps(&self, sigma: f64) -> PyResult<Vec<PyDensityMap>> {
        let maps = self.0.density_maps(sigma).map_err(to_py)?;
        Ok(maps.into_iter().map(PyDensityMap).collect())
    }

    fn __repr__(&self) -> String {
        format!("Scene({}, counts={:?})", self.0.image_id, self.0.counts())
    }
}

fn parse_split(split: &str) -> PyResult<Split> {
    split.parse().map_err(to_py)
}

/// Generates `n` scenes of one split, as `generate` would write them.
#[pyfunction]
#[pyo3(signature = (split, n, seed = 7, width = 64, height = 64, classes_max = 4, instances_max = 300, m1 = false))]
#[allow(clippy::too_many_arguments)]
fn generate_scenes(
    py: Python<'_>,
    split: &str,
    n: usize,
    seed: u64,
    width: usize,
    height: usize,
    classes_max: usize,
    instances_max: usize,
    m1: bool,
) -> PyResult<Vec<PyScene>> {
    let defaults = GenConfig::default();
    let config = GenConfig {
        width,
        height,
        classes_max,
        instances_max,
        mean_classes: defaults.mean_classes.min(classes_max as f64),
        ..defaults
    };
    let split = parse_split(split)?;
    let (_, labels) = py
        .detach(|| scenegen::generate_split_scenes(split, n, &config, seed, m1))
        .map_err(to_py)?;
    Ok(labels.into_iter().map(PyScene).collect())
}

/// Loads a split directory written by `blindcount generate`.
#[pyfunction]
fn load_split(path: PathBuf) -> PyResult<Vec<PyScene>> {
    let (_, labels) = scenegen::load_split(&path).map_err(to_py)?;
    Ok(labels.into_iter().map(PyScene).collect())
}

fn samples(scenes: &[Py<PyScene>], py: Python<'_>, sigma: f64) -> PyResult<Vec<bc_model::Sample>> {
    let labels: Vec<SceneLabel> = scenes.iter().map(|s| s.borrow(py).0.clone()).collect();
    bc_model::samples_from_labels(&labels, sigma).map_err(to_py)
}

/// Multi-head density counter.
#[pyclass(name = "Model", module = "blindcount")]
struct PyModel(ModelParams);

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (height = 64, width = 64, m_hat = 5, seed = 0))]
    fn new(height: usize, width: usize, m_hat: usize, seed: u64) -> PyResult<Self> {
        ModelParams::init(ModelConfig::new(height, width, m_hat), seed)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        bc_model::load_checkpoint(&path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        bc_model::save_checkpoint(&path, &self.0).map_err(to_py)
    }

    #[getter]
    fn m_hat(&self) -> usize {
        self.0.m_hat()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    /// Raw density map of every head.
    fn forward(&self, image: Image) -> PyResult<Vec<PyDensityMap>> {
        let preds = self.0.forward(&raster_from(image)?).map_err(to_py)?;
        Ok(preds.into_maps().into_iter().map(PyDensityMap).collect())
    }

    /// `(head, count)` after dropping empty heads and merging duplicates,
    /// largest first.
    #[pyo3(signature = (image, similarity_threshold = 0.15, zero_threshold = 0.5))]
    fn count(&self, image: Image, similarity_threshold: f64, zero_threshold: f64) -> PyResult<Vec<(usize, f64)>> {
        let preds = self.0.forward(&raster_from(image)?).map_err(to_py)?;
        let kept = deployment_postprocess(&preds, similarity_threshold, zero_threshold).map_err(to_py)?;
        Ok(kept.heads().iter().copied().zip(kept.counts().iter().copied()).collect())
    }

    /// Trains in place and returns the per-epoch losses.
    #[pyo3(signature = (scenes, epochs = 10, sigma = densitymap::DEFAULT_SIGMA, learning_rate = None, seed = 0, freeze_backbone = false))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        scenes: Vec<Py<PyScene>>,
        epochs: usize,
        sigma: f64,
        learning_rate: Option<f64>,
        seed: u64,
        freeze_backbone: bool,
    ) -> PyResult<Vec<f64>> {
        let data = samples(&scenes, py, sigma)?;
        let defaults = TrainConfig::default();
        let config = TrainConfig {
            epochs,
            learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
            m_hat: self.0.m_hat(),
            seed,
            freeze_backbone,
            backbone_channels: self.0.config.backbone_channels,
            head_channels: self.0.config.head_channels,
            ..defaults
        };
        let params = self.0.clone();
        let outcome = py.detach(|| bc_model::train_from(params, &data, &config, |_| {})).map_err(to_py)?;
        self.0 = outcome.params;
        Ok(outcome.log.iter().map(|e| e.loss).collect())
    }

    /// Matched-count metrics over labelled scenes.
    #[pyo3(signature = (scenes, sigma = densitymap::DEFAULT_SIGMA))]
    fn evaluate(&self, py: Python<'_>, scenes: Vec<Py<PyScene>>, sigma: f64) -> PyResult<HashMap<&'static str, f64>> {
        let data = samples(&scenes, py, sigma)?;
        let outcome = py
            .detach(|| bc_model::evaluate(&self.0, &data, &EvalOptions::default()))
            .map_err(to_py)?;
        metrics::compute_metrics(&outcome.pairs).map(report_dict).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let c = &self.0.config;
        format!("Model({}x{}, m_hat={})", c.input_height, c.input_width, c.m_hat)
    }
}

#[pymodule]
#[pyo3(name = "blindcount")]
fn blindcount_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDensityMap>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(pseudo_density, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_cost, m)?)?;
    m.add_function(wrap_pyfunction!(py_solve_lap, m)?)?;
    m.add_function(wrap_pyfunction!(py_brute_force_lap, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_predict, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenes, m)?)?;
    m.add_function(wrap_pyfunction!(load_split, m)?)?;
    Ok(())
}
