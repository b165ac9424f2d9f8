//! Python bindings: generator, corpora, models, training, evaluation and
//! the gradient checker, mirroring the CLI's capabilities in-process.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use reportbias::baselines::{build_baseline, AnyModel, BaselineKind};
use reportbias::checkpoint::{load_checkpoint, save_checkpoint};
use reportbias::cli::evaluate_model;
use reportbias::corpus;
use reportbias::error::Error;
use reportbias::features::Features;
use reportbias::model::{self, ModelDims, ModelParams};
use reportbias::synthgen::{self, GeneratorSpec, OmissionMode};
use reportbias::trainer::{self, TrainConfig};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Accept a flat feature vector or a list of region vectors.
fn parse_features(obj: &Bound<'_, PyAny>) -> PyResult<Features> {
    if let Ok(flat) = obj.extract::<Vec<f64>>() {
        return Features::single(flat).map_err(to_py_err);
    }
    let bag = obj.extract::<Vec<Vec<f64>>>()?;
    Features::bag(bag).map_err(to_py_err)
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().unbind().into(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.unbind().into()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.unbind().into()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.unbind().into(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.unbind().into()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.unbind().into()
        }
    })
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let json = serde_json::to_value(value)
        .map_err(|e| PyRuntimeError::new_err(format!("serialization failed: {e}")))?;
    json_to_py(py, &json)
}

/// Synthetic corpus generator configuration.
#[pyclass(name = "Generator", skip_from_py_object)]
#[derive(Clone)]
struct PyGenerator {
    spec: GeneratorSpec,
}

#[pymethods]
impl PyGenerator {
    /// Keyword arguments override the default preset (20 concepts, d=32,
    /// 10k/2k split, 5 references, image-dependent omission).
    #[new]
    #[pyo3(signature = (
        concepts=None, feature_dim=None, train_size=None, test_size=None,
        references=None, omission=None, mention_lo=None, mention_hi=None,
        prior_lo=None, prior_hi=None, presence_scale=None, omission_scale=None,
        omission_presence_alignment=None, false_mention_rate=None,
        regions=None, param_seed=None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        concepts: Option<usize>,
        feature_dim: Option<usize>,
        train_size: Option<usize>,
        test_size: Option<usize>,
        references: Option<usize>,
        omission: Option<&str>,
        mention_lo: Option<f64>,
        mention_hi: Option<f64>,
        prior_lo: Option<f64>,
        prior_hi: Option<f64>,
        presence_scale: Option<f64>,
        omission_scale: Option<f64>,
        omission_presence_alignment: Option<f64>,
        false_mention_rate: Option<f64>,
        regions: Option<usize>,
        param_seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut spec = GeneratorSpec::coco_like();
        if let Some(v) = concepts {
            spec.concepts = v;
        }
        if let Some(v) = feature_dim {
            spec.feature_dim = v;
        }
        if let Some(v) = train_size {
            spec.train_size = v;
        }
        if let Some(v) = test_size {
            spec.test_size = v;
        }
        if let Some(v) = references {
            spec.references = v;
        }
        if let Some(v) = omission {
            spec.omission = match v {
                "constant" => OmissionMode::Constant,
                "image_dependent" => OmissionMode::ImageDependent,
                other => {
                    return Err(PyValueError::new_err(format!(
                        "omission must be 'constant' or 'image_dependent', got '{other}'"
                    )))
                }
            };
        }
        if let Some(v) = mention_lo {
            spec.mention_lo = v;
        }
        if let Some(v) = mention_hi {
            spec.mention_hi = v;
        }
        if let Some(v) = prior_lo {
            spec.prior_lo = v;
        }
        if let Some(v) = prior_hi {
            spec.prior_hi = v;
        }
        if let Some(v) = presence_scale {
            spec.presence_scale = v;
        }
        if let Some(v) = omission_scale {
            spec.omission_scale = v;
        }
        if let Some(v) = omission_presence_alignment {
            spec.omission_presence_alignment = v;
        }
        if let Some(v) = false_mention_rate {
            spec.false_mention_rate = v;
        }
        if let Some(v) = regions {
            spec.regions = v;
        }
        if let Some(v) = param_seed {
            spec.param_seed = v;
        }
        spec.validate().map_err(to_py_err)?;
        Ok(PyGenerator { spec })
    }

    /// Sample (train, test) corpora from disjoint random streams.
    fn sample(&self, seed: u64) -> PyResult<(PyCorpus, PyCorpus)> {
        let config = self.spec.build().map_err(to_py_err)?;
        let (train, test) = synthgen::sample_train_test(
            &config,
            seed,
            self.spec.train_size,
            self.spec.test_size,
        )
        .map_err(to_py_err)?;
        Ok((PyCorpus { inner: train }, PyCorpus { inner: test }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Generator(concepts={}, feature_dim={}, train_size={}, test_size={}, references={})",
            self.spec.concepts,
            self.spec.feature_dim,
            self.spec.train_size,
            self.spec.test_size,
            self.spec.references
        )
    }
}

/// A labeled corpus held in memory.
#[pyclass(name = "Corpus", skip_from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    inner: corpus::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: corpus::Corpus::read_jsonl(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_jsonl(&path).map_err(to_py_err)
    }

    #[getter]
    fn num_images(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_concepts(&self) -> usize {
        self.inner.concepts()
    }

    #[getter]
    fn concept_names(&self) -> Vec<String> {
        self.inner.vocab.names().to_vec()
    }

    #[getter]
    fn references_per_image(&self) -> usize {
        self.inner.references_per_image
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    #[getter]
    fn has_true_presence(&self) -> bool {
        self.inner.has_true_presence()
    }

    /// Region vectors of one image (a single-vector image has one region).
    fn features(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        let ex = self.example(index)?;
        Ok(ex.features.iter_regions().map(<[f64]>::to_vec).collect())
    }

    /// Union training labels of one image.
    fn labels(&self, index: usize) -> PyResult<Vec<bool>> {
        Ok(self.example(index)?.labels.clone())
    }

    /// True presence of one image, when the corpus carries it.
    fn true_presence(&self, index: usize) -> PyResult<Option<Vec<bool>>> {
        Ok(self.example(index)?.true_presence.clone())
    }

    /// Per-reference mention flags of one image (`k x concepts`).
    fn references(&self, index: usize) -> PyResult<Vec<Vec<bool>>> {
        Ok(self.example(index)?.references.clone())
    }

    /// Measured omission frequencies against the stored true presence,
    /// one dict per concept.
    fn true_bias(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let rows = synthgen::true_bias(&self.inner).map_err(to_py_err)?;
        serialize_to_py(py, &rows)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(images={}, concepts={}, references={}, split={:?})",
            self.inner.len(),
            self.inner.concepts(),
            self.inner.references_per_image,
            self.inner.split
        )
    }
}

impl PyCorpus {
    fn example(&self, index: usize) -> PyResult<&corpus::CorpusExample> {
        self.inner
            .examples
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("image index {index} out of range")))
    }
}

/// A trainable/evaluable model (the factored latent model or a baseline).
#[pyclass(name = "Model", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: AnyModel,
}

#[pymethods]
impl PyModel {
    /// The factored model: presence head plus input-conditioned relevance.
    #[staticmethod]
    #[pyo3(signature = (concepts, input_dim, trunk_layers=vec![], seed=0, bag_mode=false, conditioned=true))]
    fn latent(
        concepts: usize,
        input_dim: usize,
        trunk_layers: Vec<usize>,
        seed: u64,
        bag_mode: bool,
        conditioned: bool,
    ) -> PyResult<Self> {
        let dims = ModelDims {
            concepts,
            input_dim,
            trunk_layers,
        };
        let params = ModelParams::init(&dims, seed)
            .map_err(to_py_err)?
            .with_bag_mode(bag_mode)
            .with_conditioned(conditioned);
        Ok(PyModel {
            inner: AnyModel::Latent(params),
        })
    }

    /// Comparison models: "naive", "unconditioned" or "multihead".
    #[staticmethod]
    #[pyo3(signature = (kind, concepts, input_dim, trunk_layers=vec![], seed=0, bag_mode=false, heads=5))]
    fn baseline(
        kind: &str,
        concepts: usize,
        input_dim: usize,
        trunk_layers: Vec<usize>,
        seed: u64,
        bag_mode: bool,
        heads: usize,
    ) -> PyResult<Self> {
        let dims = ModelDims {
            concepts,
            input_dim,
            trunk_layers,
        };
        let baseline_kind = match kind {
            "naive" => BaselineKind::Naive,
            "unconditioned" => BaselineKind::UnconditionedRelevance,
            "multihead" => BaselineKind::Multihead { heads },
            other => {
                return Err(PyValueError::new_err(format!(
                    "kind must be 'naive', 'unconditioned' or 'multihead', got '{other}'"
                )))
            }
        };
        let model = build_baseline(baseline_kind, &dims, seed).map_err(to_py_err)?;
        let model = match model {
            AnyModel::Latent(p) => AnyModel::Latent(p.with_bag_mode(bag_mode)),
            AnyModel::Multihead(p) => AnyModel::Multihead(p.with_bag_mode(bag_mode)),
        };
        Ok(PyModel { inner: model })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_checkpoint(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(to_py_err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn num_concepts(&self) -> usize {
        self.inner.concepts()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match &self.inner {
            AnyModel::Latent(p) if p.identity_relevance => "naive",
            AnyModel::Latent(p) if !p.relevance_conditioned => "unconditioned",
            AnyModel::Latent(_) => "latent",
            AnyModel::Multihead(_) => "multihead",
        }
    }

    /// `(presence, mention)` probabilities per concept. `features` is a
    /// flat vector or a list of region vectors.
    fn predict(&self, features: &Bound<'_, PyAny>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let features = parse_features(features)?;
        self.inner.predict(&features).map_err(to_py_err)
    }

    /// Per-concept relevance matrices `[[P(y=0|z=0), P(y=0|z=1)],
    /// [P(y=1|z=0), P(y=1|z=1)]]` (latent models only).
    fn relevance(&self, features: &Bound<'_, PyAny>) -> PyResult<Vec<[[f64; 2]; 2]>> {
        let AnyModel::Latent(params) = &self.inner else {
            return Err(PyValueError::new_err(
                "relevance matrices exist only for latent models",
            ));
        };
        let features = parse_features(features)?;
        let preds = model::model_forward(&features, params).map_err(to_py_err)?;
        Ok(preds.iter().map(|p| p.relevance.p).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={}, concepts={}, input_dim={}, params={})",
            self.kind(),
            self.inner.concepts(),
            self.inner.input_dim(),
            self.inner.num_params()
        )
    }
}

/// Train a model with minibatch SGD (momentum, L2 decay, identity warm-up
/// for the latent model). Returns `(trained_model, log_dict)`.
#[pyfunction]
#[pyo3(signature = (corpus, model, epochs=4, warmup_epochs=None, batch_size=32,
                    learning_rate=0.01, momentum=0.9, weight_decay=1e-4, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    corpus: &PyCorpus,
    model: &PyModel,
    epochs: usize,
    warmup_epochs: Option<usize>,
    batch_size: usize,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    seed: u64,
) -> PyResult<(PyModel, Py<PyAny>)> {
    let config = TrainConfig {
        epochs,
        warmup_epochs,
        batch_size,
        learning_rate,
        momentum,
        weight_decay,
        seed,
        decay_lr_at_unfreeze: false,
    };
    let (trained, log) =
        trainer::train(&corpus.inner, model.inner.clone(), &config).map_err(to_py_err)?;
    let log_obj = serialize_to_py(py, &log)?;
    Ok((PyModel { inner: trained }, log_obj))
}

/// Evaluate a model on a corpus: aggregate summary dict plus per-concept
/// rows under the "per_concept" key.
#[pyfunction]
#[pyo3(signature = (model, corpus, merge_groups=None))]
fn evaluate(
    py: Python<'_>,
    model: &PyModel,
    corpus: &PyCorpus,
    merge_groups: Option<BTreeMap<String, Vec<usize>>>,
) -> PyResult<Py<PyAny>> {
    let groups = merge_groups.unwrap_or_default();
    let computed = evaluate_model(&model.inner, &corpus.inner, &groups).map_err(to_py_err)?;
    let summary = serialize_to_py(py, &computed.summary)?;
    let dict = summary.cast_bound::<PyDict>(py)?;
    dict.set_item("per_concept", serialize_to_py(py, &computed.per_concept)?)?;
    Ok(dict.clone().unbind().into())
}

/// Max relative error of analytic gradients against central finite
/// differences, over every parameter of the model.
#[pyfunction]
#[pyo3(signature = (model, features, labels, weight_decay=1e-4, step=1e-4))]
fn gradient_check(
    model: &PyModel,
    features: &Bound<'_, PyAny>,
    labels: Vec<bool>,
    weight_decay: f64,
    step: f64,
) -> PyResult<f64> {
    let features = parse_features(features)?;
    trainer::gradient_check(&model.inner, &features, &labels, weight_decay, step)
        .map_err(to_py_err)
}

/// `1 - prod(1 - p_k)` over a non-empty list of probabilities.
#[pyfunction]
fn noisy_or(probs: Vec<f64>) -> PyResult<f64> {
    model::noisy_or(&probs).map_err(to_py_err)
}

/// Marginalize a presence probability through a relevance matrix
/// `[[P(y=0|z=0), P(y=0|z=1)], [P(y=1|z=0), P(y=1|z=1)]]`.
#[pyfunction]
fn marginalize(presence: f64, relevance: [[f64; 2]; 2]) -> PyResult<f64> {
    if !(0.0..=1.0).contains(&presence) {
        return Err(PyValueError::new_err("presence must be in [0, 1]"));
    }
    for z in 0..2 {
        let column = relevance[0][z] + relevance[1][z];
        if (column - 1.0).abs() > 1e-9 {
            return Err(PyValueError::new_err(format!(
                "relevance column {z} sums to {column}, expected 1"
            )));
        }
    }
    let rel = model::RelevanceConditional { p: relevance };
    Ok(model::marginalize(presence, &rel))
}

#[pymodule]
fn reportbias_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add_function(wrap_pyfunction!(noisy_or, m)?)?;
    m.add_function(wrap_pyfunction!(marginalize, m)?)?;
    Ok(())
}
