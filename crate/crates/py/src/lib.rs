//! Python module `neb`.

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

use neb_core::algorithms::{self, AlgorithmKind, AlgorithmSpec, RunOptions, DEFAULT_BUDGET};
use neb_core::benchmarks::ProblemSpec;
use neb_core::bitvec;
use neb_core::harness::{self, ExperimentPlan};
use neb_core::noise::{NoiseKind, NoiseModel};
use neb_core::oracle::{self, ChainSpec};
use neb_core::stats::{self, Alternative, Sample};

fn to_py(e: neb_core::Error) -> PyErr {
    match e {
        neb_core::Error::Io(m) => PyIOError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Fixed-length bit string.
#[pyclass(name = "BitString", from_py_object)]
#[derive(Clone)]
struct PyBitString(bitvec::BitString);

#[pymethods]
impl PyBitString {
    /// Parses a string of `0` and `1` characters.
    #[new]
    fn new(bits: &str) -> PyResult<Self> {
        bits.parse().map(PyBitString).map_err(to_py)
    }

    #[staticmethod]
    fn zeros(n: usize) -> Self {
        PyBitString(bitvec::BitString::zeros(n))
    }

    /// Uniformly random string of length `n`.
    #[staticmethod]
    fn random(n: usize, seed: u64) -> PyResult<Self> {
        let mut rng = bitvec::RandomStream::from_seed(seed);
        bitvec::random_bitstring(n, &mut rng).map(PyBitString).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __getitem__(&self, i: usize) -> PyResult<bool> {
        if i >= self.0.len() {
            return Err(PyIndexError::new_err(i));
        }
        Ok(self.0.get(i))
    }

    fn flip(&mut self, i: usize) -> PyResult<()> {
        if i >= self.0.len() {
            return Err(PyIndexError::new_err(i));
        }
        self.0.flip(i);
        Ok(())
    }

    fn ones_count(&self) -> usize {
        self.0.ones_count()
    }

    fn leading_ones(&self) -> usize {
        self.0.leading_ones()
    }

    fn hamming_distance(&self, other: &PyBitString) -> PyResult<usize> {
        if other.0.len() != self.0.len() {
            return Err(PyValueError::new_err("lengths differ"));
        }
        Ok(self.0.hamming_distance(&other.0))
    }

    fn __eq__(&self, other: &PyBitString) -> bool {
        self.0 == other.0
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("BitString('{}')", self.0)
    }
}

/// OneMax, LeadingOnes or Jump_k on `n` bits.
#[pyclass(name = "Problem", frozen, from_py_object)]
#[derive(Clone)]
struct PyProblem(ProblemSpec);

#[pymethods]
impl PyProblem {
    #[staticmethod]
    fn onemax(n: usize) -> PyResult<Self> {
        ProblemSpec::onemax(n).map(PyProblem).map_err(to_py)
    }

    #[staticmethod]
    fn leadingones(n: usize) -> PyResult<Self> {
        ProblemSpec::leadingones(n).map(PyProblem).map_err(to_py)
    }

    #[staticmethod]
    fn jump(n: usize, k: usize) -> PyResult<Self> {
        ProblemSpec::jump(n, k).map(PyProblem).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn k(&self) -> Option<usize> {
        self.0.gap()
    }

    #[getter]
    fn max_fitness(&self) -> i64 {
        self.0.max_fitness()
    }

    fn fitness(&self, x: &PyBitString) -> PyResult<i64> {
        if x.0.len() != self.0.n() {
            return Err(PyValueError::new_err(format!("expected {} bits, got {}", self.0.n(), x.0.len())));
        }
        Ok(self.0.fitness(&x.0))
    }

    fn __repr__(&self) -> String {
        self.0.to_string()
    }
}

/// Outcome of a single optimization run.
#[pyclass(name = "RunResult", frozen, get_all)]
struct PyRunResult {
    seed: u64,
    evaluations: u64,
    iterations: u64,
    done: bool,
    censored: bool,
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(seed={}, evaluations={}, iterations={}, done={}, censored={})",
            self.seed,
            self.evaluations,
            self.iterations,
            if self.done { "True" } else { "False" },
            if self.censored { "True" } else { "False" }
        )
    }
}

fn noise_model(kind: &str, q: f64) -> PyResult<NoiseModel> {
    let kind = match kind {
        "none" => NoiseKind::None,
        "bitwise" => NoiseKind::Bitwise,
        "one_bit" => NoiseKind::OneBit,
        other => return Err(PyValueError::new_err(format!("unknown noise kind {other:?}"))),
    };
    NoiseModel::new(kind, q).map_err(to_py)
}

/// Runs one optimizer until the optimum is accepted or the budget is spent.
#[pyfunction]
#[pyo3(signature = (problem, algorithm="one_plus_one_ea", lam=1, p=None, c=None, noise="none", q=0.0, seed=0, budget=DEFAULT_BUDGET, count_parent_reeval=false))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    problem: &PyProblem,
    algorithm: &str,
    lam: usize,
    p: Option<f64>,
    c: Option<f64>,
    noise: &str,
    q: f64,
    seed: u64,
    budget: u64,
    count_parent_reeval: bool,
) -> PyResult<PyRunResult> {
    let kind = AlgorithmKind::parse(algorithm).map_err(to_py)?;
    let spec = match (kind, p, c) {
        (AlgorithmKind::OnePlusLlGa, None, None) => AlgorithmSpec::ollga_standard(lam, problem.0.n()),
        _ => AlgorithmSpec::new(kind, lam, p, c),
    }
    .map_err(to_py)?;
    let noise = noise_model(noise, q)?;
    let options = RunOptions {
        budget,
        count_parent_reeval,
    };
    let problem = problem.0;
    let out = py
        .detach(|| algorithms::run(&problem, &spec, &noise, seed, options))
        .map_err(to_py)?;
    Ok(PyRunResult {
        seed: out.seed,
        evaluations: out.evaluations,
        iterations: out.iterations,
        done: out.done,
        censored: out.censored,
    })
}

/// Executes a JSON experiment plan and returns the results CSV text.
#[pyfunction]
#[pyo3(signature = (plan_json, workers=1))]
fn run_plan(py: Python<'_>, plan_json: &str, workers: usize) -> PyResult<String> {
    let plan = ExperimentPlan::from_json(plan_json).map_err(to_py)?;
    let records = py.detach(|| harness::execute(&plan, workers)).map_err(to_py)?;
    let mut buf = Vec::new();
    harness::write_records_csv(&records, &mut buf).map_err(to_py)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Exact expected runtime of the (1+1) EA under bitwise noise of rate `q`.
#[pyfunction]
#[pyo3(signature = (problem, q=0.0, count_parent_reeval=false))]
fn expected_runtime(problem: &PyProblem, q: f64, count_parent_reeval: bool) -> PyResult<f64> {
    let noise = NoiseModel::bitwise(q).map_err(to_py)?;
    let chain = ChainSpec::new(problem.0, noise).map_err(to_py)?;
    let result = oracle::expected_runtime_1p1(&chain);
    Ok(if result.diverged {
        f64::INFINITY
    } else {
        result.evaluations(count_parent_reeval)
    })
}

fn sample(v: Vec<f64>) -> PyResult<Sample> {
    Sample::new(v).map_err(to_py)
}

/// Welch's t-test; returns `(t, df, p)` with a two-sided p.
#[pyfunction]
fn welch_t(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = stats::welch_t(&sample(a)?, &sample(b)?).map_err(to_py)?;
    Ok((r.t, r.df, r.p))
}

/// Wilcoxon rank-sum p; `alternative` is `two-sided`, `less` or `greater`.
#[pyfunction]
#[pyo3(signature = (a, b, alternative="two-sided"))]
fn wilcoxon_rank_sum(a: Vec<f64>, b: Vec<f64>, alternative: &str) -> PyResult<f64> {
    let alt = match alternative {
        "two-sided" => Alternative::TwoSided,
        "less" => Alternative::Less,
        "greater" => Alternative::Greater,
        other => return Err(PyValueError::new_err(format!("unknown alternative {other:?}"))),
    };
    stats::wilcoxon_rank_sum_with(&sample(a)?, &sample(b)?, alt).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (p, m=3, alpha=0.05))]
fn bonferroni_significant(p: f64, m: usize, alpha: f64) -> PyResult<bool> {
    stats::bonferroni_significant(p, m, alpha).map_err(to_py)
}

#[pymodule]
fn neb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBitString>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_plan, m)?)?;
    m.add_function(wrap_pyfunction!(expected_runtime, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_rank_sum, m)?)?;
    m.add_function(wrap_pyfunction!(bonferroni_significant, m)?)?;
    Ok(())
}
