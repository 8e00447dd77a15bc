//! Python bindings: models (layered or oracle), streams, policy evaluation
//! and threshold sweeps, mirroring the core crate's public surface.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use eenn_core::eval;
use eenn_core::layer::MacCount;
use eenn_core::model::{ExitModel, Model as CoreModel, ScoreMode};
use eenn_core::oracle::{Nesting, OracleExitModel, OracleSpec};
use eenn_core::policy::{ConfidenceMetric, LabelingMode, PolicyConfig, PolicyKind};
use eenn_core::stream::{generate_scene_stream, ClassAssignment, SceneSpec, StreamSample};
use eenn_core::tensor::Tensor;

fn err(e: eenn_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(name: &str) -> PyResult<PolicyKind> {
    Ok(match name {
        "difference_detection" => PolicyKind::DifferenceDetection,
        "temporal_patience" => PolicyKind::TemporalPatience,
        "confidence" => PolicyKind::Confidence,
        "patience" => PolicyKind::Patience,
        "budget_a_priori" => PolicyKind::BudgetAPriori,
        "budget_just_in_time" => PolicyKind::BudgetJustInTime,
        "input_filter" => PolicyKind::InputFilter,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown policy {other:?}; expected one of difference_detection, temporal_patience, confidence, patience, budget_a_priori, budget_just_in_time, input_filter"
            )))
        }
    })
}

fn parse_labeling(name: &str) -> PyResult<LabelingMode> {
    Ok(match name {
        "majority_vote" => LabelingMode::MajorityVote,
        "final_classifier" => LabelingMode::FinalClassifier,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown labeling mode {other:?}"
            )))
        }
    })
}

fn parse_metric(name: &str) -> PyResult<ConfidenceMetric> {
    Ok(match name {
        "max_prob" => ConfidenceMetric::MaxProb,
        "score_margin" => ConfidenceMetric::ScoreMargin,
        "entropy" => ConfidenceMetric::Entropy,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown confidence metric {other:?}"
            )))
        }
    })
}

fn parse_score_mode(name: &str) -> PyResult<ScoreMode> {
    Ok(match name {
        "logits" => ScoreMode::Logits,
        "probabilities" => ScoreMode::Probabilities,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown score mode {other:?}"
            )))
        }
    })
}

/// An early-exit model: a layered graph loaded from JSON or a synthetic
/// oracle with configured per-exit accuracies.
#[pyclass(frozen, name = "Model")]
struct PyModel {
    inner: CoreModel,
}

#[pymethods]
impl PyModel {
    /// Load a model JSON file (layered schema, or `"model_type": "oracle"`).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: CoreModel::load(std::path::Path::new(path)).map_err(err)?,
        })
    }

    /// Build a synthetic oracle model.
    #[staticmethod]
    #[pyo3(signature = (num_classes, input_dim, accuracies, cumulative_macs, seed,
                        score_mode="logits", branch_macs=None, nested=None,
                        label_gain=0.1, embed_gain=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn oracle(
        num_classes: usize,
        input_dim: usize,
        accuracies: Vec<f64>,
        cumulative_macs: Vec<u64>,
        seed: u64,
        score_mode: &str,
        branch_macs: Option<Vec<u64>>,
        nested: Option<Bound<'_, PyAny>>,
        label_gain: f64,
        embed_gain: f64,
    ) -> PyResult<Self> {
        let nested = match nested {
            None => Nesting::Uniform(true),
            Some(obj) => {
                if let Ok(flag) = obj.extract::<bool>() {
                    Nesting::Uniform(flag)
                } else {
                    Nesting::PerExit(obj.extract::<Vec<bool>>()?)
                }
            }
        };
        let spec = OracleSpec {
            num_classes,
            input_dim,
            score_mode: parse_score_mode(score_mode)?,
            accuracies,
            cumulative_macs,
            branch_macs,
            nested,
            seed,
            label_gain,
            embed_gain,
        };
        Ok(PyModel {
            inner: CoreModel::Oracle(OracleExitModel::from_spec(spec).map_err(err)?),
        })
    }

    #[getter]
    fn num_exits(&self) -> usize {
        self.inner.num_exits()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn score_mode(&self) -> &'static str {
        match self.inner.score_mode() {
            ScoreMode::Logits => "logits",
            ScoreMode::Probabilities => "probabilities",
        }
    }

    /// MACs of a direct run to one exit (backbone prefix plus that branch).
    fn direct_macs(&self, exit: usize) -> PyResult<u64> {
        self.check_exit(exit)?;
        Ok(self.inner.direct_macs(exit).get())
    }

    /// MACs of running exits 0..=exit in order.
    fn cascade_macs(&self, exit: usize) -> PyResult<u64> {
        self.check_exit(exit)?;
        Ok(self.inner.cascade_macs(exit).get())
    }

    /// One full forward pass with every branch.
    fn full_macs(&self) -> u64 {
        self.inner.full_macs().get()
    }

    /// The no-branch reference model: backbone plus final classifier.
    fn single_exit_macs(&self) -> u64 {
        self.inner.single_exit_macs().get()
    }

    /// Run every exit on one input; returns (exit, scores, cumulative_macs)
    /// tuples.
    fn run_sample(
        &self,
        input: Vec<f64>,
        true_label: usize,
    ) -> PyResult<Vec<(usize, Vec<f64>, u64)>> {
        let sample = StreamSample {
            input: Tensor::from_vec(input).map_err(err)?,
            true_label,
            scene_truth: None,
        };
        let readings = eenn_core::model::run_all_exits(&self.inner, &sample).map_err(err)?;
        Ok(readings
            .into_iter()
            .map(|r| (r.exit_index, r.scores, r.cumulative_macs.get()))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(exits={}, classes={}, score_mode={})",
            self.inner.num_exits(),
            self.inner.num_classes(),
            self.score_mode()
        )
    }
}

impl PyModel {
    fn check_exit(&self, exit: usize) -> PyResult<()> {
        if exit >= self.inner.num_exits() {
            return Err(PyValueError::new_err(format!(
                "exit {exit} out of range; model has {} exits",
                self.inner.num_exits()
            )));
        }
        Ok(())
    }
}

/// A labeled sample stream.
#[pyclass(frozen, name = "Stream")]
struct PyStream {
    samples: Vec<StreamSample>,
}

#[pymethods]
impl PyStream {
    /// Generate a scene-structured synthetic stream.
    #[staticmethod]
    #[pyo3(signature = (num_scenes, samples_per_scene, input_dim, num_classes,
                        prototype_spread, jitter, seed, class_assignment=None))]
    #[allow(clippy::too_many_arguments)]
    fn scenes(
        num_scenes: usize,
        samples_per_scene: usize,
        input_dim: usize,
        num_classes: usize,
        prototype_spread: f64,
        jitter: f64,
        seed: u64,
        class_assignment: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let spec = SceneSpec {
            num_scenes,
            samples_per_scene,
            input_dim,
            num_classes,
            prototype_spread,
            jitter,
            class_assignment: match class_assignment {
                Some(classes) => ClassAssignment::Explicit(classes),
                None => ClassAssignment::Random,
            },
            seed,
        };
        Ok(PyStream {
            samples: generate_scene_stream(&spec).map_err(err)?,
        })
    }

    /// Read a JSONL stream file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyStream {
            samples: eenn_core::stream::read_stream(std::path::Path::new(path)).map_err(err)?,
        })
    }

    /// Write the stream as JSONL.
    fn save(&self, path: &str) -> PyResult<()> {
        eenn_core::stream::write_stream(&self.samples, std::path::Path::new(path)).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.samples.len()
    }

    fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.true_label).collect()
    }

    fn scene_ids(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(|s| s.scene_truth).collect()
    }

    /// One sample as (input, label, scene).
    fn sample(&self, index: usize) -> PyResult<(Vec<f64>, usize, Option<usize>)> {
        let s = self
            .samples
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        Ok((s.input.data().to_vec(), s.true_label, s.scene_truth))
    }

    fn __repr__(&self) -> String {
        format!("Stream(len={})", self.samples.len())
    }
}

fn build_config(
    threshold: f64,
    labeling: &str,
    metric: &str,
    patience_window: usize,
    budget: u64,
) -> PyResult<PolicyConfig> {
    Ok(PolicyConfig {
        threshold,
        labeling: parse_labeling(labeling)?,
        metric: parse_metric(metric)?,
        patience_window,
        budget: MacCount(budget),
    })
}

fn record_to_dict<'py>(
    py: Python<'py>,
    record: &eval::SweepRecord,
) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("policy", &record.policy)?;
    dict.set_item("labeling_mode", record.labeling_mode.name())?;
    dict.set_item("threshold", record.threshold)?;
    dict.set_item("accuracy", record.accuracy)?;
    dict.set_item("mean_macs", record.mean_macs)?;
    dict.set_item("relative_macs", record.relative_macs)?;
    dict.set_item("exit_shares", record.exit_shares.clone())?;
    dict.set_item("num_scenes", record.num_scenes)?;
    dict.set_item("stream_digest", record.stream_digest)?;
    let config = PyDict::new(py);
    config.set_item("threshold", record.config.threshold)?;
    config.set_item("labeling", record.config.labeling.name())?;
    config.set_item("metric", record.config.metric.name())?;
    config.set_item("patience_window", record.config.patience_window)?;
    config.set_item("budget", record.config.budget.get())?;
    dict.set_item("config", config)?;
    Ok(dict)
}

/// Evaluate one policy configuration; returns a record dict.
#[pyfunction]
#[pyo3(signature = (model, stream, policy, threshold=0.0, labeling="majority_vote",
                    metric="max_prob", patience_window=2, budget=0))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    stream: &PyStream,
    policy: &str,
    threshold: f64,
    labeling: &str,
    metric: &str,
    patience_window: usize,
    budget: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_kind(policy)?;
    let config = build_config(threshold, labeling, metric, patience_window, budget)?;
    let record = py
        .allow_threads(|| eval::evaluate(&model.inner, &stream.samples, kind, &config))
        .map_err(err)?;
    record_to_dict(py, &record)
}

/// Sweep one policy over a grid; returns a list of record dicts.
#[pyfunction]
#[pyo3(signature = (model, stream, policy, grid, labeling="majority_vote",
                    metric="max_prob", patience_window=2, budget=0))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    model: &PyModel,
    stream: &PyStream,
    policy: &str,
    grid: Vec<f64>,
    labeling: &str,
    metric: &str,
    patience_window: usize,
    budget: u64,
) -> PyResult<Bound<'py, PyList>> {
    let kind = parse_kind(policy)?;
    let config = build_config(0.0, labeling, metric, patience_window, budget)?;
    let records = py
        .allow_threads(|| eval::sweep(&model.inner, &stream.samples, kind, &config, &grid))
        .map_err(err)?;
    let list = PyList::empty(py);
    for record in &records {
        list.append(record_to_dict(py, record)?)?;
    }
    Ok(list)
}

/// Accuracy of the final classifier alone over the stream.
#[pyfunction]
fn final_classifier_accuracy(py: Python<'_>, model: &PyModel, stream: &PyStream) -> PyResult<f64> {
    py.allow_threads(|| eval::final_classifier_accuracy(&model.inner, &stream.samples))
        .map_err(err)
}

/// Suggested threshold grid: percentiles of observed exit-0 distances.
#[pyfunction]
#[pyo3(signature = (model, stream, count=50))]
fn suggest_grid(
    py: Python<'_>,
    model: &PyModel,
    stream: &PyStream,
    count: usize,
) -> PyResult<Vec<f64>> {
    py.allow_threads(|| eval::suggest_grid(&model.inner, &stream.samples, count))
        .map_err(err)
}

/// Numerically stable softmax.
#[pyfunction]
fn softmax(scores: Vec<f64>) -> Vec<f64> {
    eenn_core::tensor::softmax(&scores)
}

/// Euclidean change metric between two score vectors.
#[pyfunction]
fn change(current: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    eenn_core::policy::change(&current, &reference).map_err(err)
}

#[pymodule]
fn eenn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyStream>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(final_classifier_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(suggest_grid, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(change, m)?)?;
    Ok(())
}
