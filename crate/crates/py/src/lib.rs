//! Python bindings: balancers, rearrangements, node-wise hosting, workload
//! generation, simulation and the verification suites.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use orchsim_core::balance::{self, BalancePolicy, PolicyKind};
use orchsim_core::rearrangement::{Rearrangement as CoreRearrangement, Slot};
use orchsim_core::run::{self, RunConfig};
use orchsim_core::topology::{
    inter_node_egress, solve_hosting, ClusterTopology, VolumeMatrix, DEFAULT_SEARCH_BUDGET,
};
use orchsim_core::types::{CostModel, ModalityId, PaddingMode, SeqItem};
use orchsim_core::verify::{run_verify, VerifyOptions};
use orchsim_core::{workload, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn policy_of(name: &str, lam: f64, tolerance: u64) -> PyResult<BalancePolicy> {
    let kind = match name {
        "greedy_unpadded" => PolicyKind::GreedyUnpadded,
        "binary_padded" => PolicyKind::BinaryPadded,
        "quadratic_tolerance" => PolicyKind::QuadraticTolerance,
        "convtransformer" => PolicyKind::ConvTransformer,
        other => return Err(PyValueError::new_err(format!("unknown policy `{other}`"))),
    };
    Ok(BalancePolicy {
        kind,
        tolerance_v: tolerance,
        lambda: lam,
    })
}

/// Rebalances items of the given lengths across `d` instances.
///
/// Returns a dict with `objective`, `batches` (input indices per instance),
/// `kept_arrival` and `search_bound`.
#[pyfunction]
#[pyo3(signature = (policy, d, lengths, origins=None, lam=0.0, tolerance=0))]
fn balance_items<'py>(
    py: Python<'py>,
    policy: &str,
    d: usize,
    lengths: Vec<u64>,
    origins: Option<Vec<usize>>,
    lam: f64,
    tolerance: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let policy = policy_of(policy, lam, tolerance)?;
    let origins = origins.unwrap_or_else(|| vec![0; lengths.len()]);
    if origins.len() != lengths.len() {
        return Err(PyValueError::new_err(
            "origins and lengths differ in length",
        ));
    }
    let items = lengths
        .iter()
        .zip(&origins)
        .enumerate()
        .map(|(k, (&l, &o))| SeqItem::new(k as u64, ModalityId::text(), 0, l, o))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let r = balance::balance(&policy, d, &items).map_err(py_err)?;
    let batches: Vec<Vec<u64>> = r
        .new_batches
        .iter()
        .map(|b| b.items.iter().map(|it| it.example_id).collect())
        .collect();
    let out = PyDict::new(py);
    out.set_item("objective", r.objective_value)?;
    out.set_item("batches", batches)?;
    out.set_item("kept_arrival", r.kept_arrival)?;
    out.set_item("search_bound", r.search_bound)?;
    Ok(out)
}

/// Exact min-max objective by exhaustive search (n <= 14, d <= 4), linear
/// cost.
#[pyfunction]
#[pyo3(signature = (d, lengths, padded=false))]
fn oracle_optimal(d: usize, lengths: Vec<u64>, padded: bool) -> PyResult<f64> {
    let mode = if padded {
        PaddingMode::Padded
    } else {
        PaddingMode::Unpadded
    };
    balance::oracle_optimal(
        d,
        &lengths,
        &CostModel::linear(mode),
        balance::DEFAULT_ORACLE_ITEM_CAP,
    )
    .map(|s| s.objective)
    .map_err(py_err)
}

/// A bijection between item slots of two layouts over `d` instances.
#[pyclass(frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct Rearrangement {
    inner: CoreRearrangement,
}

#[pymethods]
impl Rearrangement {
    /// `moves[i][s] = (instance, slot)` is where source item `s` of instance
    /// `i` goes.
    #[new]
    fn new(moves: Vec<Vec<(usize, usize)>>) -> PyResult<Self> {
        let d = moves.len();
        let moves = moves
            .into_iter()
            .map(|row| row.into_iter().map(|(i, s)| Slot::new(i, s)).collect())
            .collect();
        CoreRearrangement::new(d, moves)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn identity(sizes: Vec<usize>) -> Self {
        Self {
            inner: CoreRearrangement::identity(&sizes),
        }
    }

    /// `outer ∘ inner⁻¹`: one exchange from where `inner` left the items to
    /// where `outer` sends them.
    #[staticmethod]
    fn compose(outer: &Rearrangement, inner: &Rearrangement) -> PyResult<Self> {
        CoreRearrangement::compose(&outer.inner, &inner.inner)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn inverse(&self) -> Self {
        Self {
            inner: self.inner.inverse(),
        }
    }

    fn moves(&self) -> Vec<Vec<(usize, usize)>> {
        let mut rows: Vec<Vec<(usize, usize)>> = self
            .inner
            .source_sizes()
            .iter()
            .map(|&n| vec![(0, 0); n])
            .collect();
        for (src, dst) in self.inner.iter() {
            rows[src.instance][src.slot] = (dst.instance, dst.slot);
        }
        rows
    }

    /// Moves arbitrary per-instance payloads.
    fn apply(&self, py: Python<'_>, data: Vec<Vec<Py<PyAny>>>) -> PyResult<Vec<Vec<Py<PyAny>>>> {
        let shared: Vec<Vec<usize>> = data
            .iter()
            .scan(0usize, |next, row| {
                let ids = (*next..*next + row.len()).collect();
                *next += row.len();
                Some(ids)
            })
            .collect();
        let flat: Vec<Py<PyAny>> = data.into_iter().flatten().collect();
        let moved = self.inner.apply_slots(&shared).map_err(py_err)?;
        Ok(moved
            .into_iter()
            .map(|row| row.into_iter().map(|k| flat[k].clone_ref(py)).collect())
            .collect())
    }

    fn is_identity(&self) -> bool {
        self.inner.is_identity()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Rearrangement({:?})", self.moves())
    }
}

/// Best hosting of destination batches on nodes of `c` instances for the
/// volume matrix `volumes[src][dst]`.
#[pyfunction]
#[pyo3(signature = (volumes, c, budget=DEFAULT_SEARCH_BUDGET))]
fn nodewise_hosting<'py>(
    py: Python<'py>,
    volumes: Vec<Vec<u64>>,
    c: usize,
    budget: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let topo = ClusterTopology::new(volumes.len(), c, 1.0, 1.0).map_err(py_err)?;
    let v = VolumeMatrix::from_rows(volumes).map_err(py_err)?;
    let sol = solve_hosting(&v, &topo, budget).map_err(py_err)?;
    let baseline = inter_node_egress(&v, &topo, &topo.identity_hosting()).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("hosting", sol.hosting)?;
    out.set_item("per_node_egress", sol.per_node_egress)?;
    out.set_item("max_egress", sol.max_egress)?;
    out.set_item(
        "baseline_max_egress",
        baseline.into_iter().max().unwrap_or(0),
    )?;
    out.set_item("proved_optimal", sol.proved_optimal)?;
    Ok(out)
}

/// The default run configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_toml_string()
}

/// Samples the configured workload and returns it as JSON-lines trace text.
#[pyfunction]
#[pyo3(signature = (config=None, examples=None))]
fn generate_trace(config: Option<&str>, examples: Option<usize>) -> PyResult<String> {
    let config = parse_config(config)?;
    let mut g = config.generate_config();
    if let Some(n) = examples {
        g.examples = n;
    }
    let registry = config.registry().map_err(py_err)?;
    let ex = workload::generate(&g.profiles, &g.weights, g.examples, config.seed, &registry)
        .map_err(py_err)?;
    let mut buf = Vec::new();
    workload::write_trace(&ex, &mut buf).map_err(py_err)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_config(text: Option<&str>) -> PyResult<RunConfig> {
    match text {
        Some(t) => RunConfig::from_toml_str(t).map_err(py_err),
        None => Ok(RunConfig::default()),
    }
}

/// Runs a simulation from TOML configuration text; returns the JSON report.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn simulate(py: Python<'_>, config: Option<&str>) -> PyResult<String> {
    let config = parse_config(config)?;
    let report = py
        .detach(|| {
            let ex = config.examples()?;
            run::simulate(&config, &ex)
        })
        .map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Runs the oracle suites; returns the JSON verification report.
#[pyfunction]
#[pyo3(signature = (cap=None, seed=0))]
fn verify(py: Python<'_>, cap: Option<usize>, seed: u64) -> PyResult<String> {
    let opts = VerifyOptions {
        cap,
        seed,
        ..VerifyOptions::default()
    };
    let report = py.detach(|| run_verify(&opts)).map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

#[pymodule]
fn orchsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(balance_items, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_optimal, m)?)?;
    m.add_function(wrap_pyfunction!(nodewise_hosting, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_class::<Rearrangement>()?;
    Ok(())
}
