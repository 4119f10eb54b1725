//! Python bindings: datasets, models, training runs and evaluation reports.
//! Reports cross the boundary as plain dicts.

use std::path::Path;

use hierclass_core::data::{generate_synthetic, DatasetManifest, ImageStore, LabelTaxonomy, Split, SyntheticConfig};
use hierclass_core::eval::{self, EvalLevel, EvalReport};
use hierclass_core::model::{load_checkpoint, save_checkpoint, CheckpointMetadata, Stage};
use hierclass_core::train::{self, TrainConfig};
use hierclass_core::{BackboneSpec, Error, ErrorKind, HeadSpec, Model, Tensor};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

create_exception!(hierclass, HierclassError, PyException, "Base class of hierclass errors.");
create_exception!(hierclass, ConfigError, HierclassError, "Invalid parameters or configuration.");
create_exception!(hierclass, DataError, HierclassError, "Unreadable or inconsistent input data.");
create_exception!(hierclass, ComputeError, HierclassError, "Numeric or runtime failure.");

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        ErrorKind::Config => ConfigError::new_err(msg),
        ErrorKind::Data => DataError::new_err(msg),
        ErrorKind::Runtime => ComputeError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for hierclass_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn to_py_json<'py, S: serde::Serialize>(py: Python<'py>, value: &S) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py_json<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| DataError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().py_err()
}

#[pyclass(name = "Taxonomy", module = "hierclass", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTaxonomy(LabelTaxonomy);

#[pymethods]
impl PyTaxonomy {
    #[new]
    fn new(type_names: Vec<String>, item_names: Vec<String>, item_to_type: Vec<usize>) -> PyResult<Self> {
        LabelTaxonomy::new(type_names, item_names, item_to_type).py_err().map(Self)
    }

    /// Four types with eight items each.
    #[staticmethod]
    fn desk_default() -> Self {
        Self(LabelTaxonomy::desk_default())
    }

    #[staticmethod]
    fn uniform(type_names: Vec<String>, items_per_type: usize) -> PyResult<Self> {
        let names: Vec<&str> = type_names.iter().map(String::as_str).collect();
        LabelTaxonomy::uniform(&names, items_per_type).py_err().map(Self)
    }

    #[getter]
    fn type_names(&self) -> Vec<String> {
        self.0.type_names.clone()
    }

    #[getter]
    fn item_names(&self) -> Vec<String> {
        self.0.item_names.clone()
    }

    #[getter]
    fn item_to_type(&self) -> Vec<usize> {
        self.0.item_to_type.clone()
    }

    fn type_of(&self, item: usize) -> PyResult<usize> {
        if item >= self.0.item_count() {
            return Err(ConfigError::new_err(format!("no item {item}")));
        }
        Ok(self.0.type_of(item))
    }

    fn __repr__(&self) -> String {
        format!("Taxonomy({} types, {} items)", self.0.type_count(), self.0.item_count())
    }
}

/// Training configuration. Keyword arguments name TrainConfig fields.
#[pyclass(name = "TrainConfig", module = "hierclass", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig(TrainConfig);

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut table = toml::Table::new();
        for (k, v) in kwargs.into_iter().flatten() {
            let key: String = k.extract()?;
            let value = if let Ok(i) = v.extract::<i64>() {
                toml::Value::Integer(i)
            } else {
                toml::Value::Float(v.extract::<f64>()?)
            };
            table.insert(key, value);
        }
        let text = toml::to_string(&table).map_err(|e| ConfigError::new_err(e.to_string()))?;
        TrainConfig::from_kv_text(&text).py_err().map(Self)
    }

    #[staticmethod]
    fn from_kv_text(text: &str) -> PyResult<Self> {
        TrainConfig::from_kv_text(text).py_err().map(Self)
    }

    fn to_kv_text(&self) -> String {
        self.0.to_kv_text()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py_json(py, &self.0)
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.0.learning_rate
    }

    #[getter]
    fn epochs_per_stage(&self) -> usize {
        self.0.epochs_per_stage
    }

    #[getter]
    fn max_iterations(&self) -> usize {
        self.0.max_iterations
    }

    #[getter]
    fn lr_decay_factor(&self) -> f64 {
        self.0.lr_decay_factor
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Dense f32 tensor, row-major.
#[pyclass(name = "Tensor", module = "hierclass", frozen, skip_from_py_object)]
struct PyTensor(Tensor<f32>);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Tensor::from_vec(shape, data).py_err().map(Self)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    /// Flat list of values.
    fn tolist(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.data().len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

/// A manifest together with its decoded images.
#[pyclass(name = "Dataset", module = "hierclass", frozen, skip_from_py_object)]
struct PyDataset {
    manifest: DatasetManifest,
    store: ImageStore<f32>,
}

impl PyDataset {
    fn from_manifest(manifest: DatasetManifest, base: &Path) -> PyResult<Self> {
        let store = ImageStore::from_manifest(&manifest, base).py_err()?;
        Ok(PyDataset { manifest, store })
    }
}

#[pymethods]
impl PyDataset {
    /// Procedural dataset with images embedded in the manifest.
    #[staticmethod]
    #[pyo3(signature = (taxonomy=None, per_item=30, image_size=32, seed=0))]
    fn synthetic(taxonomy: Option<&PyTaxonomy>, per_item: usize, image_size: usize, seed: u64) -> PyResult<Self> {
        let taxonomy = taxonomy.map_or_else(LabelTaxonomy::desk_default, |t| t.0.clone());
        let cfg = SyntheticConfig { per_item, image_size, seed, ..Default::default() };
        let manifest = generate_synthetic(&taxonomy, &cfg).py_err()?;
        Self::from_manifest(manifest, Path::new("."))
    }

    /// Load a manifest; relative image paths resolve against its directory.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let path = Path::new(path);
        let manifest = DatasetManifest::load(path).py_err()?;
        Self::from_manifest(manifest, path.parent().unwrap_or(Path::new(".")))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.manifest.save(Path::new(path)).py_err()
    }

    #[getter]
    fn taxonomy(&self) -> PyTaxonomy {
        PyTaxonomy(self.manifest.taxonomy.clone())
    }

    #[getter]
    fn input_shape(&self) -> [usize; 3] {
        self.manifest.input_shape
    }

    /// Sample counts per split.
    fn counts(&self) -> std::collections::BTreeMap<&'static str, usize> {
        [Split::Train, Split::Validation, Split::Test].into_iter().map(|s| (s.name(), self.manifest.count(s))).collect()
    }

    fn indices(&self, split: &str) -> PyResult<Vec<usize>> {
        Ok(self.store.indices(parse(split)?))
    }

    fn image(&self, index: usize) -> PyResult<PyTensor> {
        self.check(index)?;
        Ok(PyTensor(self.store.image(index).clone()))
    }

    fn item(&self, index: usize) -> PyResult<usize> {
        self.check(index)?;
        Ok(self.store.item(index))
    }

    /// Stack samples into an (N, C, H, W) batch.
    fn batch(&self, indices: Vec<usize>) -> PyResult<PyTensor> {
        indices.iter().try_for_each(|&i| self.check(i))?;
        self.store.batch(&indices).py_err().map(PyTensor)
    }

    fn __len__(&self) -> usize {
        self.store.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} samples, input {:?})", self.store.len(), self.manifest.input_shape)
    }
}

impl PyDataset {
    fn check(&self, index: usize) -> PyResult<()> {
        if index >= self.store.len() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("sample {index} out of range")));
        }
        Ok(())
    }
}

#[pyclass(name = "Model", module = "hierclass", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    model: Model<f32>,
    metadata: Option<CheckpointMetadata>,
}

impl PyModel {
    fn trained(
        model: Model<f32>,
        stage: Stage,
        iteration: usize,
        groups: Option<Vec<usize>>,
        data: &PyDataset,
        config: &TrainConfig,
    ) -> Self {
        let metadata = CheckpointMetadata {
            stage,
            iteration: iteration as u32,
            taxonomy: data.manifest.taxonomy.clone(),
            label_groups: groups,
            seed: config.seed,
            config_digest: config.digest(),
        };
        PyModel { model, metadata: Some(metadata) }
    }
}

#[pymethods]
impl PyModel {
    /// Fresh model on the default backbone, or on a backbone given as JSON.
    #[staticmethod]
    #[pyo3(signature = (class_count, seed=0, backbone_json=None))]
    fn build(class_count: usize, seed: u64, backbone_json: Option<&str>) -> PyResult<Self> {
        let backbone = match backbone_json {
            Some(text) => serde_json::from_str(text).map_err(|e| ConfigError::new_err(e.to_string()))?,
            None => BackboneSpec::default(),
        };
        let head = HeadSpec::new(class_count, backbone.embedding_dim);
        let model = Model::build(&backbone, &head, seed).py_err()?;
        Ok(PyModel { model, metadata: None })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| DataError::new_err(format!("{path}: {e}")))?;
        Self::from_bytes(&bytes)
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        let (model, metadata) = load_checkpoint(bytes).py_err()?;
        Ok(PyModel { model, metadata: Some(metadata) })
    }

    /// Checkpoint bytes. Models built from scratch need a taxonomy.
    #[pyo3(signature = (taxonomy=None))]
    fn to_bytes<'py>(&self, py: Python<'py>, taxonomy: Option<&PyTaxonomy>) -> PyResult<Bound<'py, PyBytes>> {
        let metadata = match (taxonomy, &self.metadata) {
            (Some(t), Some(m)) if m.taxonomy == t.0 => m.clone(),
            (Some(t), _) => CheckpointMetadata {
                stage: if self.model.class_count() == t.0.type_count() { Stage::Type } else { Stage::Item },
                iteration: 0,
                taxonomy: t.0.clone(),
                label_groups: None,
                seed: 0,
                config_digest: String::new(),
            },
            (None, Some(m)) => m.clone(),
            (None, None) => return Err(ConfigError::new_err("a taxonomy is needed to save an untrained model")),
        };
        let bytes = save_checkpoint(&self.model, &metadata).py_err()?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[pyo3(signature = (path, taxonomy=None))]
    fn save(&self, py: Python<'_>, path: &str, taxonomy: Option<&PyTaxonomy>) -> PyResult<()> {
        let bytes = self.to_bytes(py, taxonomy)?;
        std::fs::write(path, bytes.as_bytes()).map_err(|e| DataError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.model.class_count()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    /// Checkpoint metadata as a dict, if the model came from training or a file.
    #[getter]
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.metadata.as_ref().map(|m| to_py_json(py, m)).transpose()
    }

    /// Eval-mode logits for an (N, C, H, W) batch.
    fn logits(&self, batch: &PyTensor) -> PyResult<PyTensor> {
        self.model.logits(&batch.0).py_err().map(PyTensor)
    }

    fn embed(&self, batch: &PyTensor) -> PyResult<PyTensor> {
        self.model.embed(&batch.0).py_err().map(PyTensor)
    }

    /// Argmax class per sample of a split.
    #[pyo3(signature = (dataset, split="test"))]
    fn predict(&self, dataset: &PyDataset, split: &str) -> PyResult<Vec<usize>> {
        let idx = dataset.store.indices(parse(split)?);
        eval::predict(&self.model, &dataset.store, &idx).py_err()
    }

    /// Same backbone, fresh head with `class_count` outputs.
    #[pyo3(signature = (class_count, seed=0))]
    fn transfer_core(&self, class_count: usize, seed: u64) -> PyResult<Self> {
        let head = HeadSpec::new(class_count, self.model.backbone_spec().embedding_dim);
        let model = self.model.transfer_core(&head, seed).py_err()?;
        Ok(PyModel { model, metadata: None })
    }

    fn __repr__(&self) -> String {
        format!("Model({} classes, {} parameters)", self.model.class_count(), self.model.param_count())
    }
}

fn initial_model(initial: Option<&PyModel>) -> Option<Model<f32>> {
    initial.map(|m| m.model.clone())
}

/// Flat item-level training. Returns (model, stage report).
#[pyfunction]
#[pyo3(signature = (dataset, config, initial=None))]
fn train_flat<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: &PyTrainConfig,
    initial: Option<&PyModel>,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let init = initial_model(initial);
    let out =
        py.detach(|| train::train_flat(&dataset.store, &BackboneSpec::default(), &config.0, init.as_ref())).py_err()?;
    let model = PyModel::trained(out.model, Stage::Item, 0, None, dataset, &config.0);
    Ok((model, to_py_json(py, &out.stage)?))
}

/// Alternating type/item training. Returns a dict with `final_model`,
/// `type_model`, `models` (per iteration) and `report`.
#[pyfunction]
#[pyo3(signature = (dataset, config, initial=None))]
fn run_hierarchical<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: &PyTrainConfig,
    initial: Option<&PyModel>,
) -> PyResult<Bound<'py, PyDict>> {
    let init = initial_model(initial);
    let out = py
        .detach(|| train::run_hierarchical(&dataset.store, &BackboneSpec::default(), &config.0, init.as_ref()))
        .py_err()?;
    let cfg = &config.0;
    let item_to_type = &dataset.manifest.taxonomy.item_to_type;
    let models = out
        .report
        .iterations
        .iter()
        .zip(out.models)
        .map(|(it, m)| {
            let groups = (&it.stage1_groups != item_to_type).then(|| it.stage1_groups.clone());
            (
                PyModel::trained(m.stage1, Stage::Type, it.iteration, groups, dataset, cfg),
                PyModel::trained(m.stage2, Stage::Item, it.iteration, None, dataset, cfg),
            )
        })
        .collect::<Vec<_>>();
    let last = out.report.iterations.len();
    let d = PyDict::new(py);
    d.set_item("final_model", PyModel::trained(out.final_model, Stage::Item, last, None, dataset, cfg))?;
    d.set_item("type_model", PyModel::trained(out.type_model, Stage::Type, 1, None, dataset, cfg))?;
    d.set_item("models", models)?;
    d.set_item("report", to_py_json(py, &out.report)?)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (model, dataset, split="test", level="item"))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    dataset: &PyDataset,
    split: &str,
    level: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let (split, level): (Split, EvalLevel) = (parse(split)?, parse(level)?);
    let report = py.detach(|| eval::evaluate(&model.model, &dataset.store, split, level)).py_err()?;
    to_py_json(py, &report)
}

/// Item-level report with type accuracy from a separate type-level model.
#[pyfunction]
#[pyo3(signature = (item_model, type_model, dataset, split="test"))]
fn evaluate_hierarchy<'py>(
    py: Python<'py>,
    item_model: &PyModel,
    type_model: &PyModel,
    dataset: &PyDataset,
    split: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let split: Split = parse(split)?;
    let report =
        py.detach(|| eval::evaluate_hierarchy(&item_model.model, &type_model.model, &dataset.store, split)).py_err()?;
    to_py_json(py, &report)
}

/// Render the two-row comparison table for two evaluation report dicts.
#[pyfunction]
fn compare(flat: &Bound<'_, PyAny>, hier: &Bound<'_, PyAny>) -> PyResult<(String, f64)> {
    let flat: EvalReport = from_py_json(flat)?;
    let hier: EvalReport = from_py_json(hier)?;
    let table = eval::compare(&flat, &hier).py_err()?;
    Ok((table.render(), table.difference_points))
}

#[pyfunction]
fn derive_seed(base: u64, path: Vec<u64>) -> u64 {
    hierclass_core::seed::derive_seed(base, &path)
}

#[pymodule]
pub fn hierclass(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("HierclassError", py.get_type::<HierclassError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("ComputeError", py.get_type::<ComputeError>())?;
    m.add_class::<PyTaxonomy>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train_flat, m)?)?;
    m.add_function(wrap_pyfunction!(run_hierarchical, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_hierarchy, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
