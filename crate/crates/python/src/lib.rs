//! Python bindings: the response codec, rewards, GRPO arithmetic, metrics,
//! the synthetic environment, the toy policy and the trainer.
//!
//! Structured results cross the boundary as plain dicts and lists. Labels
//! are dicts in the dataset record layout, e.g. `{"task": "score", "mos": 3.2}`.

use gql_core::codec;
use gql_core::dataset::DatasetRecord;
use gql_core::env::{EnvConfig, FeatureNorm, SyntheticEnv};
use gql_core::grpo;
use gql_core::metrics;
use gql_core::optim;
use gql_core::policy::{encode_context, PolicyDims, PolicyParams};
use gql_core::reward::{self, RewardConfig};
use gql_core::rng::derive_rng;
use gql_core::train::{RunConfig, Trainer as CoreTrainer};
use gql_core::vocab::Vocabulary;
use gql_core::{Error, GroundTruth, TaskKind};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;
use std::path::PathBuf;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Round-trips a serializable value through `json.loads`.
fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_dict<T: serde::de::DeserializeOwned>(dict: &Bound<'_, PyDict>) -> PyResult<T> {
    let text: String = dict.py().import("json")?.call_method1("dumps", (dict,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn task(name: &str) -> PyResult<TaskKind> {
    TaskKind::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown task {name:?}")))
}

fn truth_of(label: &Bound<'_, PyDict>) -> PyResult<GroundTruth> {
    let label = label.copy()?;
    if !label.contains("id")? {
        label.set_item("id", "")?;
    }
    let record: DatasetRecord = from_dict(&label)?;
    record.label().map_err(PyValueError::new_err)
}

fn reward_config(epsilon: f64, alpha1: f64, alpha2: f64) -> PyResult<RewardConfig> {
    let cfg = RewardConfig {
        score_threshold: epsilon,
        alpha1,
        alpha2,
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Splits a response into its think and answer bodies and checks the grammar.
#[pyfunction]
fn parse_response<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
    let p = codec::parse_response(text);
    let d = PyDict::new(py);
    d.set_item("think_body", &p.think_body)?;
    d.set_item("answer_body", &p.answer_body)?;
    d.set_item("structure_ok", p.structure_ok)?;
    d.set_item("json_shape_ok", p.json_shape_ok)?;
    d.set_item("format_reward", codec::format_reward(&p))?;
    Ok(d)
}

#[pyfunction]
fn format_reward(text: &str) -> u8 {
    codec::format_reward(&codec::parse_response(text))
}

/// Reward components and total of one response.
#[pyfunction]
#[pyo3(signature = (text, label, epsilon=0.35, alpha1=0.25, alpha2=0.75))]
fn evaluate_response<'py>(
    py: Python<'py>,
    text: &str,
    label: &Bound<'py, PyDict>,
    epsilon: f64,
    alpha1: f64,
    alpha2: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = reward_config(epsilon, alpha1, alpha2)?;
    to_object(py, &reward::evaluate_response(text, &truth_of(label)?, &cfg))
}

#[pyfunction]
#[pyo3(signature = (responses, label, epsilon=0.35, alpha1=0.25, alpha2=0.75))]
fn evaluate_group<'py>(
    py: Python<'py>,
    responses: Vec<String>,
    label: &Bound<'py, PyDict>,
    epsilon: f64,
    alpha1: f64,
    alpha2: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = reward_config(epsilon, alpha1, alpha2)?;
    to_object(py, &reward::evaluate_group(&responses, &truth_of(label)?, &cfg))
}

#[pyfunction]
fn normalize_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    grpo::normalize_advantages(&rewards).map_err(to_py)
}

#[pyfunction]
fn prob_ratio(logp_new: f64, logp_old: f64) -> f64 {
    grpo::prob_ratio(logp_new, logp_old)
}

#[pyfunction]
fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    grpo::clipped_surrogate(ratio, advantage, clip)
}

#[pyfunction]
fn lr_schedule(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    optim::lr_schedule(step, total_steps, lr_start, lr_end)
}

#[pyfunction]
fn plcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::plcc(&x, &y).map_err(to_py)
}

#[pyfunction]
fn srcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::srcc(&x, &y).map_err(to_py)
}

/// Synthetic labelled samples from an environment config dict (defaults if omitted).
#[pyfunction]
#[pyo3(signature = (task_name, n, seed, env=None))]
fn sample_env<'py>(
    py: Python<'py>,
    task_name: &str,
    n: usize,
    seed: u64,
    env: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: EnvConfig = match env {
        Some(d) => from_dict(d)?,
        None => EnvConfig::default(),
    };
    let env = SyntheticEnv::new(cfg).map_err(to_py)?;
    let samples = env.holdout(task(task_name)?, n, seed);
    to_object(py, &samples)
}

/// Token policy over the standard vocabulary, with features normalized by
/// the default environment.
#[pyclass(frozen)]
struct ToyPolicy {
    params: PolicyParams,
    vocab: Vocabulary,
    norm: FeatureNorm,
}

impl ToyPolicy {
    fn context(&self, features: &[f64], features_b: Option<Vec<f64>>, task_name: &str) -> PyResult<Vec<f64>> {
        encode_context(features, features_b.as_deref(), task(task_name)?, &self.norm).map_err(to_py)
    }
}

#[pymethods]
impl ToyPolicy {
    #[new]
    #[pyo3(signature = (seed=0, hidden=32, embed=16, max_len=16, init_scale=0.1, template_prior=0.0))]
    fn new(
        seed: u64,
        hidden: usize,
        embed: usize,
        max_len: usize,
        init_scale: f64,
        template_prior: f64,
    ) -> PyResult<Self> {
        let vocab = Vocabulary::standard();
        let dims = PolicyDims {
            hidden,
            embed,
            max_len,
            vocab: vocab.len(),
            ..PolicyDims::default()
        };
        dims.validate().map_err(to_py)?;
        let mut params = PolicyParams::random(dims, init_scale, &mut derive_rng(seed, &[0x1417]));
        if template_prior != 0.0 {
            params.apply_template_prior(&vocab, template_prior).map_err(to_py)?;
        }
        Ok(Self {
            params,
            vocab,
            norm: FeatureNorm::from_config(&EnvConfig::default()),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let vocab = Vocabulary::standard();
        let params = PolicyParams::load(&path, &vocab).map_err(to_py)?;
        Ok(Self {
            params,
            vocab,
            norm: FeatureNorm::from_config(&EnvConfig::default()),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.params.save(&path, &self.vocab).map_err(to_py)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.params.as_slice().len()
    }

    /// Returns `(text, log_prob)`.
    #[pyo3(signature = (features, task_name, seed, features_b=None))]
    fn sample(
        &self,
        features: Vec<f64>,
        task_name: &str,
        seed: u64,
        features_b: Option<Vec<f64>>,
    ) -> PyResult<(String, f64)> {
        let ctx = self.context(&features, features_b, task_name)?;
        let s = self
            .params
            .sample_sequence(&ctx, &mut derive_rng(seed, &[]))
            .map_err(to_py)?;
        Ok((self.vocab.detokenize(&s.tokens), s.log_prob))
    }

    #[pyo3(signature = (features, task_name, features_b=None))]
    fn greedy(&self, features: Vec<f64>, task_name: &str, features_b: Option<Vec<f64>>) -> PyResult<(String, f64)> {
        let ctx = self.context(&features, features_b, task_name)?;
        let s = self.params.greedy_sequence(&ctx).map_err(to_py)?;
        Ok((self.vocab.detokenize(&s.tokens), s.log_prob))
    }

    /// Log-probability of `text` as a complete response: `<eos>` is appended
    /// when the text is shorter than `L` tokens.
    #[pyo3(signature = (features, task_name, text, features_b=None))]
    fn log_prob(&self, features: Vec<f64>, task_name: &str, text: &str, features_b: Option<Vec<f64>>) -> PyResult<f64> {
        let ctx = self.context(&features, features_b, task_name)?;
        let mut tokens = self
            .vocab
            .tokenize(text)
            .ok_or_else(|| PyValueError::new_err("text does not tokenize"))?;
        if tokens.len() < self.params.dims().max_len {
            tokens.push(self.vocab.eos());
        }
        self.params.check_tokens(&tokens).map_err(to_py)?;
        Ok(self.params.sequence_log_prob(&ctx, &tokens))
    }
}

/// In-process training loop driven one step at a time.
#[pyclass(unsendable)]
struct Trainer {
    inner: CoreTrainer,
}

#[pymethods]
impl Trainer {
    /// `config` is a run config dict; missing keys take their defaults.
    #[new]
    fn new(config: &Bound<'_, PyDict>) -> PyResult<Self> {
        let text: String = config
            .py()
            .import("json")?
            .call_method1("dumps", (config,))?
            .extract()?;
        let cfg = RunConfig::from_json(&text).map_err(to_py)?;
        Ok(Self {
            inner: CoreTrainer::new(cfg).map_err(to_py)?,
        })
    }

    /// Runs one optimizer step and returns its log record.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = self.inner.step().map_err(to_py)?;
        to_object(py, &report.record)
    }

    /// Greedy metrics on `per_task` held-out samples of every active task.
    fn evaluate<'py>(&self, py: Python<'py>, per_task: usize) -> PyResult<Bound<'py, PyAny>> {
        let records = self.inner.holdout(per_task);
        to_object(py, &self.inner.evaluate(&records).map_err(to_py)?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.params().save(&path, self.inner.vocab()).map_err(to_py)
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.inner.step_index()
    }
}

#[pymodule]
fn gql(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(format_reward, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_response, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_group, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(prob_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(plcc, m)?)?;
    m.add_function(wrap_pyfunction!(srcc, m)?)?;
    m.add_function(wrap_pyfunction!(sample_env, m)?)?;
    m.add_class::<ToyPolicy>()?;
    m.add_class::<Trainer>()?;
    Ok(())
}
