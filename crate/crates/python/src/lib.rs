//! Python bindings: losses, mixing plans, students, synthetic data and the
//! command-line entry point.
//!
//! Matrices cross the boundary as lists of rows; image batches as a flat
//! list plus an `(n, c, h, w)` shape.

use cutnmix::augment::{self, ImageBatch, SoftLabelBatch};
use cutnmix::datasets::{make_synthetic as synth, SyntheticParams};
use cutnmix::harness::{self, RunConfig};
use cutnmix::{losses, rng, Arch, DistillConfig, LossParts, OptimConfig};
use ndarray::{Array2, Array4, ArrayView2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: cutnmix::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows_of<T: Copy + Into<f64>>(a: ArrayView2<'_, T>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.iter().map(|&v| v.into()).collect()).collect()
}

fn matrices(all: &[Vec<Vec<f64>>]) -> PyResult<Vec<Array2<f64>>> {
    all.iter().map(|m| matrix(m)).collect()
}

/// Mean soft-target cross-entropy.
#[pyfunction]
fn soft_ce(logits: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<f64> {
    let t = SoftLabelBatch { probs: matrix(&targets)? };
    losses::soft_ce(matrix(&logits)?.view(), &t).map_err(py_err)
}

/// `tau^2`-scaled KL from the softened teacher to the softened student.
#[pyfunction]
fn kd_kl(student: Vec<Vec<f64>>, teacher: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    losses::kd_kl(matrix(&student)?.view(), matrix(&teacher)?.view(), tau).map_err(py_err)
}

#[pyfunction]
fn dml_loss(all_logits: Vec<Vec<Vec<f64>>>, j: usize, tau: f64) -> PyResult<f64> {
    let m = matrices(&all_logits)?;
    let v: Vec<_> = m.iter().map(|a| a.view()).collect();
    losses::dml_loss(&v, j, tau).map_err(py_err)
}

#[pyfunction]
fn mmd_loss(all_features: Vec<Vec<Vec<f64>>>, j: usize) -> PyResult<f64> {
    let m = matrices(&all_features)?;
    let v: Vec<_> = m.iter().map(|a| a.view()).collect();
    losses::mmd_loss(&v, j).map_err(py_err)
}

#[pyfunction]
fn pt_loss(student: Vec<Vec<f64>>, teacher: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    losses::pt_loss(matrix(&student)?.view(), matrix(&teacher)?.view(), tau).map_err(py_err)
}

/// `ce + alpha * dml + beta * mmd + gamma * pt` with the default weights
/// unless overridden.
#[pyfunction]
#[pyo3(signature = (ce, dml, mmd, pt, alpha=None, beta=None, gamma=None))]
fn total_loss(ce: f64, dml: f64, mmd: f64, pt: f64, alpha: Option<f64>, beta: Option<f64>, gamma: Option<f64>) -> f64 {
    let d = DistillConfig::default();
    let cfg = DistillConfig {
        alpha: alpha.unwrap_or(d.alpha),
        beta: beta.unwrap_or(d.beta),
        gamma: gamma.unwrap_or(d.gamma),
        ..d
    };
    losses::total_loss(&cfg, &LossParts { ce, dml, mmd, pt })
}

/// Learning rate at `epoch` under the default schedule or the given one.
#[pyfunction]
#[pyo3(signature = (epoch, lr0=None, milestones=None, decay_factor=None, max_epochs=None))]
fn lr_at(
    epoch: usize,
    lr0: Option<f64>,
    milestones: Option<Vec<usize>>,
    decay_factor: Option<f64>,
    max_epochs: Option<usize>,
) -> PyResult<f64> {
    let d = OptimConfig::default();
    let cfg = OptimConfig {
        lr0: lr0.unwrap_or(d.lr0),
        milestones: milestones.unwrap_or(d.milestones),
        decay_factor: decay_factor.unwrap_or(d.decay_factor),
        max_epochs: max_epochs.unwrap_or(d.max_epochs),
        ..OptimConfig::default()
    };
    cutnmix::lr_at(&cfg, epoch).map_err(py_err)
}

/// A shared-ratio, shared-pairing mixing plan with one mask set per peer.
#[pyclass(name = "MixPlan", module = "pycutnmix", frozen)]
struct PyMixPlan {
    inner: augment::MixPlan,
}

#[pymethods]
impl PyMixPlan {
    /// Samples a plan for `num_peers` networks from `seed`.
    #[staticmethod]
    fn sample(n: usize, width: usize, height: usize, num_peers: usize, seed: u64) -> PyResult<Self> {
        let mut shared = rng::stream(seed, 0, rng::Stream::MixPlan);
        let mut peers: Vec<rng::Rng> = (0..num_peers).map(|j| rng::stream(seed, 0, rng::Stream::Peer(j))).collect();
        augment::MixPlan::sample(n, width, height, &mut shared, &mut peers)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lam()
    }

    #[getter]
    fn perm(&self) -> Vec<usize> {
        self.inner.perm().to_vec()
    }

    /// `masks[j][i] = (x0, y0, w, h)`.
    #[getter]
    fn masks(&self) -> Vec<Vec<(usize, usize, usize, usize)>> {
        self.inner
            .masks()
            .iter()
            .map(|peer| peer.iter().map(|m| (m.x0, m.y0, m.w, m.h)).collect())
            .collect()
    }

    /// Soft labels shared by every peer.
    fn soft_labels(&self, labels: Vec<usize>, num_classes: usize) -> Vec<Vec<f64>> {
        rows_of(self.inner.soft_labels(&labels, num_classes).probs.view())
    }

    /// Mixes each peer's batch; returns `(pixels, soft_labels)` per peer.
    fn apply(
        &self,
        peer_pixels: Vec<Vec<f32>>,
        shape: (usize, usize, usize, usize),
        labels: Vec<usize>,
        num_classes: usize,
    ) -> PyResult<Vec<(Vec<f32>, Vec<Vec<f64>>)>> {
        let batches = peer_pixels
            .into_iter()
            .map(|px| {
                let arr = Array4::from_shape_vec(shape, px).map_err(|e| PyValueError::new_err(e.to_string()))?;
                ImageBatch::new(arr, labels.clone(), num_classes).map_err(py_err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let mixed = augment::apply_mix_plan(&batches, &self.inner).map_err(py_err)?;
        Ok(mixed
            .into_iter()
            .map(|m| (m.pixels.iter().copied().collect(), rows_of(m.soft_labels.probs.view())))
            .collect())
    }
}

/// One peer network.
#[pyclass(name = "PeerStudent", module = "pycutnmix")]
struct PyPeerStudent {
    inner: cutnmix::PeerStudent,
}

#[pymethods]
impl PyPeerStudent {
    /// `arch` is `tiny-cnn`, `resnet-<6n+2>` or `wrn-<depth>-<width>`.
    #[new]
    fn new(arch: &str, num_classes: usize, seed: u64) -> PyResult<Self> {
        let arch: Arch = arch.parse().map_err(py_err)?;
        cutnmix::build_student(arch, num_classes, seed)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params().num_trainable()
    }

    fn checksum(&self) -> u64 {
        self.inner.checksum()
    }

    /// Evaluation-mode forward pass; returns `(features, logits)`.
    fn forward(&self, pixels: Vec<f32>, shape: (usize, usize, usize, usize)) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let x = Array4::from_shape_vec(shape, pixels).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let out = self.inner.forward(&x).map_err(py_err)?;
        Ok((rows_of(out.features.view()), rows_of(out.logits.view())))
    }
}

/// Synthetic dataset as `(train_pixels, train_labels, test_pixels,
/// test_labels)` with pixels as raw bytes in CIFAR plane order.
#[pyfunction]
#[pyo3(signature = (num_classes, n_train=5000, n_test=1000, seed=0, difficulty=0.6))]
fn make_synthetic(
    num_classes: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
    difficulty: f32,
) -> PyResult<(Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>)> {
    let params = SyntheticParams { n_train, n_test, seed, difficulty };
    let (train, test) = synth(num_classes, &params).map_err(py_err)?;
    Ok((train.pixels, train.labels, test.pixels, test.labels))
}

/// Trains the run described by a JSON configuration and returns the summary
/// as JSON.
#[pyfunction]
fn train(config_json: &str) -> PyResult<String> {
    let cfg: RunConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let summary = harness::run_train(&cfg, false).map_err(py_err)?;
    serde_json::to_string(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs the command line with `args` (without the program name) and returns
/// its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    harness::cli::run_cli(std::iter::once("cutnmix".to_string()).chain(args))
}

#[pymodule]
fn pycutnmix(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(soft_ce, m)?)?;
    m.add_function(wrap_pyfunction!(kd_kl, m)?)?;
    m.add_function(wrap_pyfunction!(dml_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pt_loss, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<PyMixPlan>()?;
    m.add_class::<PyPeerStudent>()?;
    Ok(())
}
