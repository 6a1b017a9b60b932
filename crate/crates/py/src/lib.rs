//! Python bindings. States are 0-based indices, as in the Rust API.

use std::collections::BTreeMap;
use std::sync::Arc;

use catbn::data::{generate_synthetic as sample, synthetic_truth};
use catbn::learning::{em_fit as fit, sparsity_metrics, EmConfig};
use catbn::session::{self, Session, TerminationRule};
use catbn::zoo::{build_model as build, ModelId, TestBlueprint};
use catbn::{Evidence, InferenceEngine, Network};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

fn err(e: catbn::Error) -> PyErr {
    match e {
        catbn::Error::UnknownVariable(id) => PyKeyError::new_err(format!("unknown variable `{id}`")),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn evidence(net: &Network, map: &BTreeMap<String, usize>) -> PyResult<Evidence> {
    let mut e = Evidence::new();
    for (id, &state) in map {
        let v = net.index_of(id).map_err(err)?;
        e.observe(v, state).map_err(err)?;
    }
    net.check_evidence(&e).map_err(err)?;
    Ok(e)
}

fn blueprint(json: Option<&str>) -> PyResult<TestBlueprint> {
    match json {
        Some(text) => {
            let bp = TestBlueprint::from_json(text).map_err(err)?;
            bp.validate().map_err(err)?;
            Ok(bp)
        }
        None => Ok(TestBlueprint::reference()),
    }
}

fn model_id(name: &str) -> PyResult<ModelId> {
    name.parse().map_err(err)
}

/// A validated Bayesian network with a compiled inference engine.
#[pyclass(name = "Network", module = "catbn", frozen)]
struct PyNetwork {
    engine: Arc<InferenceEngine>,
}

impl PyNetwork {
    fn wrap(net: Network) -> PyResult<Self> {
        Ok(PyNetwork { engine: Arc::new(InferenceEngine::new(net).map_err(err)?) })
    }

    fn net(&self) -> &Network {
        self.engine.network()
    }
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        PyNetwork::wrap(Network::from_json(text).map_err(err)?)
    }

    fn to_json(&self) -> String {
        self.net().to_json()
    }

    /// Variable ids in declaration order.
    fn variables(&self) -> Vec<String> {
        self.net().variables.iter().map(|v| v.id.clone()).collect()
    }

    fn cardinality(&self, id: &str) -> PyResult<usize> {
        Ok(self.net().variable(id).map_err(err)?.cardinality)
    }

    fn role(&self, id: &str) -> PyResult<String> {
        let role = self.net().variable(id).map_err(err)?.role;
        Ok(format!("{role:?}").to_lowercase())
    }

    fn edge_count(&self) -> usize {
        self.net().edge_count()
    }

    /// `P(v | evidence)` for each target (every variable by default).
    #[pyo3(signature = (evidence_map=BTreeMap::new(), targets=None))]
    fn posterior_marginals(
        &self,
        evidence_map: BTreeMap<String, usize>,
        targets: Option<Vec<String>>,
    ) -> PyResult<BTreeMap<String, Vec<f64>>> {
        let e = evidence(self.net(), &evidence_map)?;
        let ids = targets.unwrap_or_else(|| self.variables());
        let vars = ids.iter().map(|id| self.net().index_of(id)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let dists = self.engine.posterior_marginals(&e, &vars).map_err(err)?;
        Ok(dists.into_iter().map(|d| (d.variable, d.probabilities)).collect())
    }

    /// Total log-likelihood of the rows (natural log).
    fn log_likelihood(&self, rows: Vec<BTreeMap<String, usize>>) -> PyResult<f64> {
        let rows = rows.iter().map(|r| evidence(self.net(), r)).collect::<PyResult<Vec<_>>>()?;
        Ok(self.engine.log_likelihood(&rows).map_err(err)?.total)
    }

    #[pyo3(signature = (evidence_map=BTreeMap::new()))]
    fn entropy(&self, evidence_map: BTreeMap<String, usize>) -> PyResult<f64> {
        session::entropy(&self.engine, &evidence(self.net(), &evidence_map)?).map_err(err)
    }

    #[pyo3(signature = (question, evidence_map=BTreeMap::new()))]
    fn information_gain(&self, question: &str, evidence_map: BTreeMap<String, usize>) -> PyResult<f64> {
        let q = self.net().index_of(question).map_err(err)?;
        session::information_gain(&self.engine, &evidence(self.net(), &evidence_map)?, q).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.net().len()
    }

    fn __repr__(&self) -> String {
        format!("Network({} variables, {} arcs)", self.net().len(), self.net().edge_count())
    }
}

/// An adaptive test over a network.
#[pyclass(name = "Session", module = "catbn")]
struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (network, info=BTreeMap::new(), max_questions=None, entropy_below=None))]
    fn new(
        network: &PyNetwork,
        info: BTreeMap<String, usize>,
        max_questions: Option<usize>,
        entropy_below: Option<f64>,
    ) -> PyResult<Self> {
        let termination = match (max_questions, entropy_below) {
            (Some(_), Some(_)) => return Err(PyValueError::new_err("give max_questions or entropy_below, not both")),
            (Some(k), None) => TerminationRule::MaxQuestions(k),
            (None, Some(h)) => TerminationRule::EntropyBelow(h),
            (None, None) => TerminationRule::Exhaust,
        };
        let e = evidence(network.net(), &info)?;
        let inner = Session::new(network.engine.clone(), e, termination).map_err(err)?;
        Ok(PySession { inner })
    }

    /// `(question, information gain)` of the next question, or `None`.
    fn select_next(&mut self) -> PyResult<Option<(String, f64)>> {
        let choice = self.inner.select_next().map_err(err)?;
        let net = self.inner.engine().network();
        Ok(choice.map(|c| (net.variables[c.question].id.clone(), c.ig)))
    }

    fn submit_answer(&mut self, question: &str, state: usize) -> PyResult<()> {
        let q = self.inner.engine().network().index_of(question).map_err(err)?;
        self.inner.submit_answer(q, state).map(|_| ()).map_err(err)
    }

    fn skill_estimates(&self) -> BTreeMap<String, Vec<f64>> {
        self.inner.skill_estimates().into_iter().map(|d| (d.variable, d.probabilities)).collect()
    }

    /// Most probable state of every open question.
    fn predict_answers(&self) -> BTreeMap<String, usize> {
        let net = self.inner.engine().network();
        self.inner
            .predict_answers()
            .into_iter()
            .map(|p| (net.variables[p.question].id.clone(), p.state))
            .collect()
    }

    fn entropy(&self) -> f64 {
        self.inner.current_entropy()
    }

    fn entropy_trace(&self) -> Vec<f64> {
        self.inner.entropy_trace().to_vec()
    }

    fn remaining(&self) -> Vec<String> {
        let net = self.inner.engine().network();
        self.inner.remaining().iter().map(|&q| net.variables[q].id.clone()).collect()
    }

    #[getter]
    fn step(&self) -> usize {
        self.inner.step()
    }

    fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    /// Transcript as JSON lines (answers 1-based).
    fn transcript_jsonl(&self) -> String {
        self.inner.transcript_jsonl()
    }
}

/// Ids of the fourteen model structures.
#[pyfunction]
fn model_ids() -> Vec<&'static str> {
    ModelId::ALL.iter().map(|m| m.as_str()).collect()
}

/// The built-in reference blueprint as JSON.
#[pyfunction]
fn reference_blueprint() -> String {
    TestBlueprint::reference().to_json()
}

/// Structure of `model` over a blueprint (the reference test by default),
/// with uniform CPTs.
#[pyfunction]
#[pyo3(signature = (model, blueprint_json=None))]
fn build_model(model: &str, blueprint_json: Option<&str>) -> PyResult<PyNetwork> {
    let spec = model_id(model)?.spec();
    PyNetwork::wrap(build(&spec, &blueprint(blueprint_json)?).map_err(err)?)
}

/// Fits the CPTs of `structure` by EM. Returns a dict with `network`,
/// `ll_trace`, `iterations` and `converged`.
#[pyfunction]
#[pyo3(signature = (structure, rows, max_iterations=100, ll_tolerance=1e-4, pseudocount=0.0, seed=0))]
fn em_fit<'py>(
    py: Python<'py>,
    structure: &PyNetwork,
    rows: Vec<BTreeMap<String, usize>>,
    max_iterations: usize,
    ll_tolerance: f64,
    pseudocount: f64,
    seed: u64,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let rows = rows.iter().map(|r| evidence(structure.net(), r)).collect::<PyResult<Vec<_>>>()?;
    let cfg = EmConfig { max_iterations, ll_tolerance, pseudocount, seed };
    let result = fit(structure.net(), &rows, &cfg).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("network", PyNetwork::wrap(result.network)?)?;
    out.set_item("ll_trace", result.ll_trace)?;
    out.set_item("iterations", result.iterations_used)?;
    out.set_item("converged", result.converged)?;
    Ok(out)
}

/// Synthetic ground-truth network shaped like `model`.
#[pyfunction]
#[pyo3(signature = (model, seed=0, blueprint_json=None))]
fn synthetic_network(model: &str, seed: u64, blueprint_json: Option<&str>) -> PyResult<PyNetwork> {
    PyNetwork::wrap(synthetic_truth(model_id(model)?, &blueprint(blueprint_json)?, seed).map_err(err)?)
}

/// `n` students sampled from `truth`, as dataset CSV text.
#[pyfunction]
#[pyo3(signature = (truth, n, seed=0, blueprint_json=None))]
fn generate_synthetic(truth: &PyNetwork, n: usize, seed: u64, blueprint_json: Option<&str>) -> PyResult<String> {
    let data = sample(truth.net(), &blueprint(blueprint_json)?, n, seed).map_err(err)?;
    Ok(data.dataset.to_csv_string())
}

/// `(azt, as)`: mean zero count and mean row sparsity over the networks.
#[pyfunction]
fn sparsity(networks: Vec<PyRef<'_, PyNetwork>>) -> (f64, f64) {
    let nets: Vec<Network> = networks.iter().map(|n| n.net().clone()).collect();
    let s = sparsity_metrics(&nets);
    (s.azt, s.as_)
}

#[pymodule]
#[pyo3(name = "catbn")]
fn catbn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(model_ids, m)?)?;
    m.add_function(wrap_pyfunction!(reference_blueprint, m)?)?;
    m.add_function(wrap_pyfunction!(build_model, m)?)?;
    m.add_function(wrap_pyfunction!(em_fit, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_network, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(sparsity, m)?)?;
    Ok(())
}
