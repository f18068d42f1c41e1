//! Python bindings: networks, training, the codec simulator and the metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use qpadapt::checkpoint::Checkpoint;
use qpadapt::codec::{self, DatasetSpec, GrayImage, NoiseScanConfig, QuantizerConfig, SampleStore, Split};
use qpadapt::metrics::{self, RdPoint, SweepModel};
use qpadapt::train::{train_strategy, Strategy, TrainConfig};
use qpadapt::wiener::{self, SpectralModel};
use qpadapt::{Arch, Error, Mode, QpContext, Shape, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::File { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for qpadapt::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn arch(name: &str, size: Option<usize>) -> PyResult<Arch> {
    Arch::from_name(name, size).py()
}

fn mode(name: &str) -> PyResult<Mode> {
    name.parse().py()
}

fn ctx(qp: Option<i32>) -> PyResult<Option<QpContext>> {
    qp.map(QpContext::new).transpose().py()
}

/// A backbone with single-precision weights.
#[pyclass(name = "Network", module = "pyqpadapt", skip_from_py_object)]
#[derive(Clone)]
pub struct PyNetwork {
    net: qpadapt::Network<f32>,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (arch_name, mode_name = "vanilla", seed = 0, size = None))]
    pub fn new(arch_name: &str, mode_name: &str, seed: u64, size: Option<usize>) -> PyResult<Self> {
        let spec = arch(arch_name, size)?.build(mode(mode_name)?).py()?;
        Ok(PyNetwork {
            net: qpadapt::Network::init(spec, seed).py()?,
        })
    }

    /// Reads a checkpoint, optionally converting vanilla to qp-adaptive.
    #[staticmethod]
    #[pyo3(signature = (path, mode_name = None))]
    pub fn load(path: PathBuf, mode_name: Option<&str>) -> PyResult<Self> {
        let ck = match mode_name {
            Some(m) => Checkpoint::load_as(&path, mode(m)?),
            None => Checkpoint::load(&path),
        }
        .py()?;
        Ok(PyNetwork { net: ck.net })
    }

    #[pyo3(signature = (path, label = "model".to_string(), seed = 0, iterations = 0, qps = Vec::new()))]
    pub fn save(&self, path: PathBuf, label: String, seed: u64, iterations: u64, qps: Vec<i32>) -> PyResult<()> {
        Checkpoint {
            label,
            seed,
            iterations,
            qps,
            net: self.net.clone(),
        }
        .save(&path)
        .py()
    }

    #[getter]
    pub fn arch(&self) -> &'static str {
        self.net.spec().arch.name()
    }

    #[getter]
    pub fn mode(&self) -> &'static str {
        self.net.mode().as_str()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// θ of every modulated layer; empty outside qp-adaptive mode.
    pub fn theta(&self) -> Vec<Vec<f32>> {
        self.net.theta().iter().map(|t| t.theta.clone()).collect()
    }

    /// Filters one `height × width` image given row-major in `[0, 1]`.
    #[pyo3(signature = (pixels, height, width, qp = None))]
    pub fn forward(&self, pixels: Vec<f32>, height: usize, width: usize, qp: Option<i32>) -> PyResult<Vec<f32>> {
        let x = Tensor::from_vec(Shape::new(1, 1, height, width), pixels).py()?;
        let c = ctx(qp)?;
        Ok(self.net.forward(&x, c.as_ref()).py()?.into_vec())
    }

    fn __repr__(&self) -> String {
        format!("Network({}, {}, {} parameters)", self.arch(), self.mode(), self.param_count())
    }
}

#[pyfunction]
#[pyo3(signature = (arch_name, mode_name = "vanilla", size = None))]
pub fn param_count(arch_name: &str, mode_name: &str, size: Option<usize>) -> PyResult<usize> {
    let spec = arch(arch_name, size)?.build(mode(mode_name)?).py()?;
    Ok(qpadapt::Network::<f32>::zeros(spec).py()?.param_count())
}

#[pyfunction]
pub fn qstep(qp: i32) -> PyResult<f64> {
    qpadapt::modulation::qstep_from_qp(qp).py()
}

#[pyfunction]
pub fn qsq_norm(qp: i32) -> PyResult<f64> {
    qpadapt::modulation::qsq_norm_from_qp(qp).py()
}

/// Infinite for identical inputs.
#[pyfunction]
#[pyo3(signature = (reference, test, peak = 255.0))]
pub fn psnr(reference: Vec<f64>, test: Vec<f64>, peak: f64) -> PyResult<f64> {
    Ok(metrics::psnr(&reference, &test, peak).py()?.db().unwrap_or(f64::INFINITY))
}

fn rd(points: Vec<(f64, f64)>) -> Vec<RdPoint> {
    points.into_iter().map(|(r, p)| RdPoint::new(r, p)).collect()
}

/// Percent rate change at equal quality; points are `(rate, psnr)`.
#[pyfunction]
pub fn bd_rate(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> PyResult<f64> {
    metrics::bd_rate(&rd(anchor), &rd(test)).py()
}

#[pyfunction]
pub fn bd_psnr(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> PyResult<f64> {
    metrics::bd_psnr(&rd(anchor), &rd(test)).py()
}

/// Row-major 8-bit pixels of a seeded synthetic image.
#[pyfunction]
pub fn synthetic_image(seed: u64, index: u64, size: usize) -> Vec<u8> {
    codec::synthetic_image(seed, index, size).data
}

/// Returns `(reconstruction, rate_bits)`.
#[pyfunction]
pub fn encode_decode(pixels: Vec<u8>, width: usize, height: usize, qp: i32) -> PyResult<(Vec<u8>, f64)> {
    let img = GrayImage::new(width, height, pixels).py()?;
    let enc = codec::encode_decode(&img, &QuantizerConfig::new(qp)).py()?;
    Ok((enc.recon.data, enc.rate_bits))
}

fn spectral(signal: Vec<f64>, noise: Vec<f64>, response: Vec<f64>) -> PyResult<SpectralModel> {
    SpectralModel::real(signal, noise, response).py()
}

/// Per-bin influence factors for a real response.
#[pyfunction]
pub fn wiener_factors(signal: Vec<f64>, noise: Vec<f64>, response: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(wiener::influence_factors(&spectral(signal, noise, response)?))
}

/// Returns `(adapted response, expected mse)`.
#[pyfunction]
pub fn adapt_filter(signal: Vec<f64>, noise: Vec<f64>, response: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
    let m = spectral(signal, noise, response)?;
    let adapted = wiener::adapt_filter(&m).py()?;
    let mse = wiener::expected_mse(&m, &adapted).py()?;
    Ok((adapted.iter().map(|z| z.re).collect(), mse))
}

/// Returns `(slope, per-band slopes)` of noise power against step size.
#[pyfunction]
#[pyo3(signature = (qps, coefficients = 1 << 20, seed = 0))]
pub fn noise_power_slope(qps: Vec<i32>, coefficients: usize, seed: u64) -> PyResult<(f64, Vec<f64>)> {
    let cfg = NoiseScanConfig {
        seed,
        coefficients,
        ..NoiseScanConfig::default()
    };
    let scan = codec::noise_power_scan(&qps, &cfg).py()?;
    Ok((scan.slope, scan.bin_slopes))
}

/// Writes a synthetic sample store and returns its sample count.
#[pyfunction]
#[pyo3(signature = (out_dir, seed, count, size, qps, val_count = 0, patch = 64))]
pub fn prepare_synthetic(out_dir: PathBuf, seed: u64, count: usize, size: usize, qps: Vec<i32>, val_count: usize, patch: usize) -> PyResult<usize> {
    let spec = DatasetSpec {
        patch,
        val_count,
        ..DatasetSpec::synthetic(seed, count, size, qps)
    };
    let store = codec::prepare_dataset(&spec).py()?;
    store.save(&out_dir).py()?;
    Ok(store.total_samples())
}

/// Trains one strategy; returns `(label, network, losses)` per model.
#[pyfunction]
#[pyo3(signature = (data_dir, strategy, arch_name = "dcad", size = None, qps = None, iterations = 100, batch_size = 16, lr = 1e-3, seed = 0, crop = None))]
#[allow(clippy::too_many_arguments)]
pub fn train(
    data_dir: PathBuf,
    strategy: &str,
    arch_name: &str,
    size: Option<usize>,
    qps: Option<Vec<i32>>,
    iterations: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    crop: Option<usize>,
) -> PyResult<Vec<(String, PyNetwork, Vec<f64>)>> {
    let store = SampleStore::load(&data_dir).py()?;
    let cfg = TrainConfig {
        arch: arch(arch_name, size)?,
        strategy: strategy.parse::<Strategy>().py()?,
        qps: qps.unwrap_or_else(|| store.qps.clone()),
        batch_size,
        lr,
        iterations,
        seed,
        crop,
        ..TrainConfig::default()
    };
    cfg.validate(store.patch).py()?;
    Ok(train_strategy(&store, &cfg)
        .py()?
        .into_iter()
        .map(|m| (m.label, PyNetwork { net: m.net }, m.losses.iter().map(|r| r.loss).collect()))
        .collect())
}

/// Returns `(qp, anchor psnr, filtered psnr)` per QP on the `[0, 1]` scale.
#[pyfunction]
#[pyo3(signature = (network, data_dir, qps, split = "val"))]
pub fn evaluate(network: &PyNetwork, data_dir: PathBuf, qps: Vec<i32>, split: &str) -> PyResult<Vec<(i32, f64, f64)>> {
    let store = SampleStore::load(&data_dir).py()?;
    let split = match split {
        "train" => Split::Train,
        "val" => Split::Val,
        other => return Err(PyValueError::new_err(format!("unknown split `{other}`"))),
    };
    let model = SweepModel {
        label: "model".into(),
        net: &network.net,
    };
    let curves = metrics::sweep_qp(&[model], &store, split, &qps).py()?;
    let db = |p: metrics::Psnr| p.db().unwrap_or(f64::INFINITY);
    Ok(curves[0].points.iter().map(|p| (p.qp, db(p.psnr_anchor), db(p.psnr_filtered))).collect())
}

#[pymodule]
fn pyqpadapt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(qstep, m)?)?;
    m.add_function(wrap_pyfunction!(qsq_norm, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(bd_rate, m)?)?;
    m.add_function(wrap_pyfunction!(bd_psnr, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_image, m)?)?;
    m.add_function(wrap_pyfunction!(encode_decode, m)?)?;
    m.add_function(wrap_pyfunction!(wiener_factors, m)?)?;
    m.add_function(wrap_pyfunction!(adapt_filter, m)?)?;
    m.add_function(wrap_pyfunction!(noise_power_slope, m)?)?;
    m.add_function(wrap_pyfunction!(prepare_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
