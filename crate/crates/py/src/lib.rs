//! Python bindings: datasets, the scoring model, graph problems and their
//! solvers, metrics, and the full pipeline.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use pairloc::data::{BBox, Selection};
use pairloc::graph::GraphProblem;
use pairloc::inference::{icm_run, initialize, relocalize, selections, IcmConfig, InitKind, InitScheme, RelocConfig, TrwsConfig};
use pairloc::pipeline::{run, Mode, PipelineConfig};
use pairloc::scoring::Scope;
use pairloc::synth::{generate, SynthConfig};
use pairloc::transfer::BlendWeights;

type Selections = BTreeMap<String, BTreeMap<String, usize>>;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn export(sel: &BTreeMap<String, Selection>) -> Selections {
    sel.iter().map(|(c, s)| (c.clone(), s.chosen.clone())).collect()
}

fn import(sel: Selections) -> BTreeMap<String, Selection> {
    sel.into_iter()
        .map(|(c, chosen)| {
            let mut s = Selection::new(&c);
            s.chosen = chosen;
            (c, s)
        })
        .collect()
}

#[pyclass(name = "Dataset", module = "pairloc_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(pairloc::data::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        pairloc::io::load_dataset(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        pairloc::io::save_dataset(&self.0, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.bags().len()
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.classes().iter().cloned().collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn generic_dim(&self) -> usize {
        self.0.generic_dim()
    }

    fn bag_ids(&self) -> Vec<String> {
        self.0.bags().iter().map(|b| b.id.clone()).collect()
    }

    /// Feature rows of one bag.
    fn features(&self, bag: &str) -> PyResult<Vec<Vec<f64>>> {
        let b = self.0.bag(bag).ok_or_else(|| err(format!("unknown bag `{bag}`")))?;
        Ok(b.proposals.iter().map(|p| p.features.clone()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Dataset(bags={}, classes={}, dim={})", self.0.bags().len(), self.0.classes().len(), self.0.dim())
    }
}

/// Planted synthetic data. Keyword arguments override the generator
/// defaults; returns `(source, target, truth)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, **overrides))]
fn synthesize(seed: u64, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<(PyDataset, PyDataset, Selections)> {
    let mut value = serde_json::to_value(SynthConfig::default()).map_err(err)?;
    if let Some(kw) = overrides {
        let py = kw.py();
        let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
        let extra: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text).map_err(err)?;
        for (k, v) in extra {
            if value.get(&k).is_none() {
                return Err(err(format!("unknown generator option `{k}`")));
            }
            value[k] = v;
        }
    }
    value["seed"] = seed.into();
    let cfg: SynthConfig = serde_json::from_value(value).map_err(err)?;
    let syn = generate(&cfg).map_err(err)?;
    Ok((PyDataset(syn.source), PyDataset(syn.target), export(&syn.truth)))
}

#[pyclass(name = "ScoringModel", module = "pairloc_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel(pairloc::scoring::ScoringModel);

fn scope(class: Option<&str>) -> Scope<'_> {
    class.map_or(Scope::Generic, Scope::Class)
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (classes, dim, generic_dim, seed = 0))]
    fn new(classes: Vec<String>, dim: usize, generic_dim: usize, seed: u64) -> Self {
        Self(pairloc::scoring::ScoringModel::new(&classes, dim, generic_dim, seed))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        pairloc::io::load_model(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        pairloc::io::save_model(&self.0, path).map_err(err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    /// Unary score; `class=None` selects the class-generic function.
    #[pyo3(signature = (features, class = None))]
    fn unary(&self, features: Vec<f64>, class: Option<&str>) -> PyResult<f64> {
        self.0.unary_forward(scope(class), &features).map_err(err)
    }

    #[pyo3(signature = (first, second, class = None))]
    fn pairwise(&self, first: Vec<f64>, second: Vec<f64>, class: Option<&str>) -> PyResult<f64> {
        self.0.pairwise_forward(scope(class), &first, &second).map_err(err)
    }

    fn get_flat(&self) -> Vec<f64> {
        self.0.to_flat()
    }

    fn set_flat(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.0.set_flat(&flat).map_err(err)
    }
}

#[pyclass(name = "GraphProblem", module = "pairloc_py", frozen)]
struct PyProblem(GraphProblem);

fn parse_init(name: &str, k: usize, seed: u64) -> PyResult<InitScheme> {
    Ok(match name {
        "mini_problems" => InitScheme::mini_problems(k, seed),
        "objectness" => InitScheme::Objectness,
        "random" => InitScheme::Random { seed },
        "full_image" => InitScheme::FullImage,
        other => return Err(err(format!("unknown init scheme `{other}`"))),
    })
}

#[pymethods]
impl PyProblem {
    /// `unary[i][a]` and one row-major table per edge `i < j`, in
    /// lexicographic edge order.
    #[new]
    fn new(unary: Vec<Vec<f64>>, edges: Vec<Vec<f64>>) -> PyResult<Self> {
        GraphProblem::from_potentials(unary, edges).map(Self).map_err(err)
    }

    fn energy(&self, labels: Vec<usize>) -> PyResult<f64> {
        self.0.energy(&labels).map_err(err)
    }

    fn brute_force(&self) -> PyResult<(Vec<usize>, f64)> {
        self.0.brute_force().map_err(err)
    }

    /// Returns `(labels, energy, lower_bound)`.
    #[pyo3(signature = (max_iters = 500))]
    fn trws(&self, max_iters: usize) -> PyResult<(Vec<usize>, f64, f64)> {
        let cfg = TrwsConfig { max_iters, ..TrwsConfig::default() };
        let r = pairloc::inference::trws_solve(&self.0, &cfg).map_err(err)?;
        let lb = r.lower_bound();
        Ok((r.labels, r.energy, lb))
    }

    #[pyo3(signature = (scheme = "mini_problems", k = 8, seed = 0))]
    fn initialize(&self, scheme: &str, k: usize, seed: u64) -> PyResult<Vec<usize>> {
        Ok(initialize(&self.0, &parse_init(scheme, k, seed)?).map_err(err)?.labels)
    }

    /// Returns `(labels, energy_trace)`.
    #[pyo3(signature = (labels, epochs = 2))]
    fn icm(&self, labels: Vec<usize>, epochs: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let r = icm_run(&self.0, &labels, &IcmConfig { epochs, ..IcmConfig::default() }).map_err(err)?;
        Ok((r.labels, r.trace))
    }

    #[getter]
    fn pairwise_evals(&self) -> u64 {
        self.0.counts().pairwise_evals
    }
}

#[pyfunction]
fn sigmoid_ce(x: f64, y: f64) -> PyResult<f64> {
    pairloc::losses::sigmoid_ce(x, y).map_err(err)
}

#[pyfunction]
fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    let a = BBox::new(a.0, a.1, a.2, a.3).map_err(err)?;
    let b = BBox::new(b.0, b.1, b.2, b.3).map_err(err)?;
    pairloc::eval::iou(&a, &b).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (selections, dataset, threshold = 0.5))]
fn corloc(selections: Selections, dataset: &PyDataset, threshold: f64) -> PyResult<f64> {
    Ok(pairloc::eval::corloc(&import(selections), &dataset.0, threshold).map_err(err)?.mean)
}

#[pyfunction]
fn selection_accuracy(selections: Selections, truth: Selections) -> PyResult<f64> {
    pairloc::eval::selection_accuracy(&import(selections), &import(truth)).map_err(err)
}

/// One re-localization step of every class of `dataset`.
#[pyfunction]
#[pyo3(signature = (dataset, model, alpha = 1.0, lambda1 = 0.5, lambda2 = 0.5, init = "mini_problems", k = 8, epochs = 2, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn relocalize_step(
    dataset: &PyDataset,
    model: &PyModel,
    alpha: f64,
    lambda1: f64,
    lambda2: f64,
    init: &str,
    k: usize,
    epochs: usize,
    seed: u64,
) -> PyResult<Selections> {
    let init = match init {
        "mini_problems" => InitKind::MiniProblems,
        "objectness" => InitKind::Objectness,
        "random" => InitKind::Random,
        "full_image" => InitKind::FullImage,
        other => return Err(err(format!("unknown init scheme `{other}`"))),
    };
    let cfg = RelocConfig {
        alpha,
        weights: BlendWeights::new(lambda1, lambda2).map_err(err)?,
        k,
        init,
        icm: IcmConfig { epochs, ..IcmConfig::default() },
        seed,
        ..RelocConfig::default()
    };
    Ok(export(&selections(&relocalize(&dataset.0, &model.0, &cfg).map_err(err)?)))
}

/// Full pipeline. `config` is a dict of pipeline config fields. Returns
/// `(selections, metrics, model)`.
#[pyfunction]
#[pyo3(signature = (source, target, truth = None, seed = 0, mode = "full", config = None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    source: &PyDataset,
    target: &PyDataset,
    truth: Option<Selections>,
    seed: u64,
    mode: &str,
    config: Option<&Bound<'py, PyDict>>,
) -> PyResult<(Selections, Bound<'py, PyAny>, PyModel)> {
    let mut cfg: PipelineConfig = match config {
        Some(d) => {
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(err)?
        }
        None => PipelineConfig::default(),
    };
    cfg.seed = seed;
    cfg.mode = match mode {
        "full" => Mode::Full,
        "unary_only" => Mode::UnaryOnly,
        "warmup_only" => Mode::WarmupOnly,
        "warmup_unary_only" => Mode::WarmupUnaryOnly,
        other => return Err(err(format!("unknown mode `{other}`"))),
    };
    let truth = truth.map(import);
    let out = py
        .detach(|| run(&cfg, &source.0, &target.0, truth.as_ref()))
        .map_err(err)?;
    Ok((export(&out.selections), to_py(py, &out.metrics)?, PyModel(out.model)))
}

#[pymodule]
fn pairloc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid_ce, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(corloc, m)?)?;
    m.add_function(wrap_pyfunction!(selection_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(relocalize_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
