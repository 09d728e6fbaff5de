//! Python bindings: meshes, spectra, the pseudo-norm and the descent flow.

use std::sync::Arc;

use eigopt::flow::{run_flow, FlowConfig};
use eigopt::functional::Form;
use eigopt::mesh::shapes;
use eigopt::subgradient::{generate_candidates, is_critical, pseudo_norm, SubgradientOptions};
use eigopt::{ConformalFactor, Discretization, Error, FunctionalSpec, Objective, ProblemKind, SolverOptions, TriMesh};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        3 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

type MeshData = (Vec<[f64; 3]>, Vec<[usize; 3]>);

fn mesh_data(m: &TriMesh) -> MeshData {
    (m.positions().to_vec(), m.triangles().to_vec())
}

#[pyfunction]
fn icosphere(level: usize) -> MeshData {
    mesh_data(&shapes::icosphere(level))
}

#[pyfunction]
fn unit_disk(rings: usize) -> PyResult<MeshData> {
    if rings == 0 {
        return Err(PyValueError::new_err("rings must be positive"));
    }
    Ok(mesh_data(&shapes::unit_disk(rings)))
}

#[pyfunction]
fn flat_torus(n: usize) -> PyResult<MeshData> {
    if n < 3 {
        return Err(PyValueError::new_err("n must be at least 3"));
    }
    Ok(mesh_data(&shapes::flat_torus(n)))
}

#[pyfunction]
fn load_off(path: &str) -> PyResult<MeshData> {
    Ok(mesh_data(&TriMesh::load_off(path).map_err(to_py)?))
}

/// Value `v` and optimal strategies `(p, q)` of the zero-sum game with payoff
/// rows (maximizer) × columns (minimizer).
#[pyfunction]
fn solve_game(matrix: Vec<Vec<f64>>) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let r = matrix.len();
    let c = matrix.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || matrix.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("payoff matrix must be rectangular and nonempty"));
    }
    let a = nalgebra::DMatrix::from_fn(r, c, |i, j| matrix[i][j]);
    let s = eigopt::game::solve_matrix_game(&a).map_err(to_py)?;
    Ok((s.value, s.row_strategy, s.col_strategy))
}

/// Runs the command-line front end with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    eigopt::cli::run(std::iter::once("eigopt".to_string()).chain(args))
}

/// A spectral functional `E(f) = F(λ̄_{k_1}(f), …)` on a fixed mesh.
#[pyclass(frozen)]
struct Problem {
    obj: Objective,
}

impl Problem {
    fn factor(&self, f: Vec<f64>) -> PyResult<ConformalFactor> {
        ConformalFactor::new(f, self.obj.kind().support()).map_err(to_py)
    }
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (vertices, triangles, kind = "laplace", indices = vec![1], coefficients = None, form = "neg_sum"))]
    fn new(
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
        kind: &str,
        indices: Vec<usize>,
        coefficients: Option<Vec<f64>>,
        form: &str,
    ) -> PyResult<Self> {
        let kind: ProblemKind = kind.parse().map_err(to_py)?;
        let form = match form {
            "neg_sum" => Form::NegSum,
            "inv_sum" => Form::InvSum,
            other => return Err(PyValueError::new_err(format!("unknown form {other:?}"))),
        };
        let coefficients = coefficients.unwrap_or_else(|| vec![1.0; indices.len()]);
        let spec = FunctionalSpec::new(kind, form, indices, coefficients).map_err(to_py)?;
        let mesh = TriMesh::new(vertices, triangles).map_err(to_py)?;
        let disc = Arc::new(Discretization::new(mesh).map_err(to_py)?);
        let obj = Objective::new(spec, disc, SolverOptions::default()).map_err(to_py)?;
        Ok(Problem { obj })
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.obj.disc.num_vertices()
    }

    /// Renormalized eigenvalues `λ̄_0, …, λ̄_{count-1}` at `f`.
    fn spectrum(&self, f: Vec<f64>, count: usize) -> PyResult<Vec<f64>> {
        let f = self.factor(f)?;
        let problem = self.obj.disc.problem(self.obj.kind(), &f).map_err(to_py)?;
        let pkg = eigopt::eigen::solve(&problem, count, &self.obj.solver).map_err(to_py)?;
        Ok(pkg.renormalized)
    }

    /// `E(f)`.
    fn value(&self, f: Vec<f64>) -> PyResult<f64> {
        self.obj.value(&self.factor(f)?).map_err(to_py)
    }

    fn pseudo_norm(&self, f: Vec<f64>) -> PyResult<f64> {
        let eval = self.obj.evaluate(&self.factor(f)?).map_err(to_py)?;
        let set = generate_candidates(&eval, &SubgradientOptions::default()).map_err(to_py)?;
        Ok(pseudo_norm(&set).map_err(to_py)?.value)
    }

    /// Whether the pseudo-norm is at most `rel_tol · Σ |∂_i F| λ̄_{k_i}`.
    #[pyo3(signature = (f, rel_tol = 0.05))]
    fn is_critical(&self, f: Vec<f64>, rel_tol: f64) -> PyResult<bool> {
        let eval = self.obj.evaluate(&self.factor(f)?).map_err(to_py)?;
        let set = generate_candidates(&eval, &SubgradientOptions::default()).map_err(to_py)?;
        let tol = rel_tol * eigopt::cli::criticality_scale(&eval);
        Ok(is_critical(&set, tol).map_err(to_py)?.critical)
    }

    /// Descent flow from `f`. Returns a dict with the per-record `energy`,
    /// `pseudo_norm` and `accepted` lists, the `termination` reason and the
    /// `final_factor`.
    #[pyo3(signature = (f, ps_eps = 1e-2, max_steps = 500, dt_init = 1e-3))]
    fn flow<'py>(&self, py: Python<'py>, f: Vec<f64>, ps_eps: f64, max_steps: usize, dt_init: f64) -> PyResult<Bound<'py, PyDict>> {
        let f = self.factor(f)?;
        let config = FlowConfig {
            ps_eps,
            max_steps,
            dt_init,
            dt_max: FlowConfig::default().dt_max.max(dt_init),
            ..FlowConfig::default()
        };
        let trace = py.detach(|| run_flow(&self.obj, &f, &config)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("energy", trace.records.iter().map(|r| r.energy).collect::<Vec<_>>())?;
        d.set_item("pseudo_norm", trace.records.iter().map(|r| r.pseudo_norm).collect::<Vec<_>>())?;
        d.set_item("accepted", trace.records.iter().map(|r| r.accepted).collect::<Vec<_>>())?;
        let term = match trace.termination {
            eigopt::flow::Termination::PalaisSmale => "palais_smale",
            eigopt::flow::Termination::Stalled => "stalled",
            eigopt::flow::Termination::MaxSteps => "max_steps",
        };
        d.set_item("termination", term)?;
        d.set_item("final_factor", trace.final_factor.map(|f| f.into_values()))?;
        Ok(d)
    }
}

#[pymodule]
fn eigopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(icosphere, m)?)?;
    m.add_function(wrap_pyfunction!(unit_disk, m)?)?;
    m.add_function(wrap_pyfunction!(flat_torus, m)?)?;
    m.add_function(wrap_pyfunction!(load_off, m)?)?;
    m.add_function(wrap_pyfunction!(solve_game, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Problem>()?;
    Ok(())
}
