//! Python bindings: scenario configs, sizing, simulation and the test procedures.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cfplacebo::commands::{simulate_config, size_config, RunOptions};
use cfplacebo::config::{load_config, parse_config, ScenarioConfig};
use cfplacebo::mc::{linspace, sweep_grid};
use cfplacebo::procedures::{self, StepReached, TestOutcome};
use cfplacebo::reproduce::{CellStatus, ReproduceOptions, Target};
use cfplacebo::sizing;
use cfplacebo::stats::{self, ArmSummary, LogIncidenceEstimate};

create_exception!(cfplacebo_py, CfPlaceboError, PyValueError);
create_exception!(cfplacebo_py, InfeasibleError, CfPlaceboError);

fn err(e: cfplacebo::Error) -> PyErr {
    match e {
        cfplacebo::Error::Infeasible { .. } | cfplacebo::Error::InfeasibleScenario { .. } => {
            InfeasibleError::new_err(e.to_string())
        }
        _ => CfPlaceboError::new_err(e.to_string()),
    }
}

/// A validated scenario configuration.
#[pyclass(name = "Scenario", module = "cfplacebo_py", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Load from a TOML file path or a built-in scenario name.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_config(std::path::Path::new(path))
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        parse_config(text).map(|inner| Self { inner }).map_err(err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.emit().map_err(err)
    }

    #[getter]
    fn design(&self) -> String {
        self.inner.design.to_string()
    }

    #[getter]
    fn name(&self) -> Option<String> {
        self.inner.name.clone()
    }

    /// Copy with the seed, replicate count or thread cap replaced.
    #[pyo3(signature = (seed=None, replicates=None, threads=None))]
    fn with_run(
        &self,
        seed: Option<u64>,
        replicates: Option<u64>,
        threads: Option<usize>,
    ) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        RunOptions {
            seed,
            replicates,
            threads,
        }
        .apply(&mut inner)
        .map_err(err)?;
        Ok(Self { inner })
    }

    fn size<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = size_config(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("design", r.design.to_string())?;
        d.set_item("total_py", r.total_py)?;
        d.set_item("expected_events", r.expected_events)?;
        d.set_item("auxiliary", r.auxiliary)?;
        Ok(d)
    }

    /// Monte Carlo rejection rate at the configured truth and hypothesis.
    fn simulate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.inner.clone();
        let (oc, runtime) = py.detach(move || simulate_config(&cfg)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("n_replicates", oc.n_replicates)?;
        d.set_item("rejections", oc.rejections)?;
        d.set_item("rejection_rate", oc.rejection_rate)?;
        d.set_item("mc_std_err", oc.mc_std_err)?;
        d.set_item("n_estimator_undefined", oc.n_estimator_undefined)?;
        d.set_item("n_no_margin", oc.n_no_margin)?;
        d.set_item("n_step1_fail", oc.n_step1_fail)?;
        d.set_item("trial_py", oc.trial_py)?;
        d.set_item("mean_sized_py", oc.mean_sized_py)?;
        d.set_item("mean_margin", oc.mean_margin)?;
        d.set_item("runtime_s", runtime)?;
        Ok(d)
    }

    /// Grid sweep as a list of `(lambda_p, lambda_a, rejection_rate, mc_std_err, status)`.
    fn sweep(&self, py: Python<'_>) -> PyResult<Vec<(f64, f64, f64, f64, String)>> {
        let cfg = self.inner.clone();
        let grid = cfg
            .grid
            .clone()
            .ok_or_else(|| CfPlaceboError::new_err("scenario has no [grid] section"))?;
        let cells = py
            .detach(move || {
                let lp = linspace(grid.lambda_p.from, grid.lambda_p.to, grid.lambda_p.points);
                let la = linspace(grid.lambda_a.from, grid.lambda_a.to, grid.lambda_a.points);
                sweep_grid(
                    &cfg.simulation_plan(),
                    &lp,
                    &la,
                    grid.reps_per_cell,
                    cfg.simulation.threads,
                )
            })
            .map_err(err)?;
        Ok(cells
            .into_iter()
            .map(|c| {
                (
                    c.lambda_p,
                    c.lambda_a,
                    c.rejection_rate,
                    c.mc_std_err,
                    c.status.as_str().to_string(),
                )
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, design={})",
            self.inner.name.as_deref().unwrap_or(""),
            self.inner.design
        )
    }
}

fn arm(events: u64, person_years: f64) -> PyResult<ArmSummary> {
    ArmSummary::new(events, person_years).map_err(err)
}

fn outcome<'py>(py: Python<'py>, o: TestOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("reject", o.reject)?;
    let step = match o.step_reached {
        StepReached::Step1Fail => "step1_fail",
        StepReached::Step2 => "step2",
        StepReached::Single => "single",
        StepReached::NoMargin => "no_margin",
    };
    d.set_item("step_reached", step)?;
    d.set_item("statistics", o.statistics)?;
    Ok(d)
}

#[pyfunction]
fn normal_cdf(x: f64) -> f64 {
    stats::normal_cdf(x)
}

#[pyfunction]
fn normal_quantile(p: f64) -> PyResult<f64> {
    stats::normal_quantile(p).map_err(err)
}

/// `(log_rate, std_err)` for an arm, with the zero-count correction.
#[pyfunction]
fn estimate_log_incidence(events: u64, person_years: f64) -> PyResult<(f64, f64)> {
    let e = stats::estimate_log_incidence(&arm(events, person_years)?);
    Ok((e.log_rate, e.std_err))
}

/// "95%-95%" margin from a historical trial, or `None` when it is not positive.
#[pyfunction]
fn ni_margin(
    placebo_events: u64,
    active_events: u64,
    arm_py: f64,
    gamma: f64,
) -> PyResult<Option<f64>> {
    Ok(procedures::ni_margin_95_95(
        &arm(placebo_events, arm_py)?,
        &arm(active_events, arm_py)?,
        gamma,
    )
    .usable())
}

/// Two-step AC-CF test; `conservative` selects the lower-bound variant.
#[pyfunction]
#[pyo3(signature = (cf_log_rate, cf_std_err, e_events, a_events, arm_py, gamma, alpha=0.025, conservative=false))]
#[allow(clippy::too_many_arguments)]
fn accf_test<'py>(
    py: Python<'py>,
    cf_log_rate: f64,
    cf_std_err: f64,
    e_events: u64,
    a_events: u64,
    arm_py: f64,
    gamma: f64,
    alpha: f64,
    conservative: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cf = LogIncidenceEstimate::new(cf_log_rate, cf_std_err).map_err(err)?;
    let (e, a) = (arm(e_events, arm_py)?, arm(a_events, arm_py)?);
    let test = if conservative {
        procedures::conservative_accf_two_step_test
    } else {
        procedures::accf_two_step_test
    };
    outcome(py, test(&cf, &e, &a, gamma, alpha).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (x, alpha=0.025))]
fn analytic_type1_ni_rae(x: f64, alpha: f64) -> PyResult<f64> {
    sizing::analytic_type1_ni_rae(x, alpha).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (r_ap, r_ea, gamma, alpha=0.025))]
fn analytic_type1_conservative_accf(r_ap: f64, r_ea: f64, gamma: f64, alpha: f64) -> PyResult<f64> {
    sizing::analytic_type1_conservative_accf(r_ap, r_ea, gamma, alpha).map_err(err)
}

/// Run a bundled target. Returns `(passed, cells)` with one dict per checked value.
#[pyfunction]
#[pyo3(signature = (target, seed=None, replicates=None, threads=None))]
fn reproduce<'py>(
    py: Python<'py>,
    target: &str,
    seed: Option<u64>,
    replicates: Option<u64>,
    threads: Option<usize>,
) -> PyResult<(bool, Vec<Bound<'py, PyDict>>)> {
    let target: Target = target.parse().map_err(err)?;
    let opts = ReproduceOptions {
        seed: seed.unwrap_or(ReproduceOptions::default().seed),
        replicates,
        threads,
    };
    let report = py
        .detach(|| cfplacebo::reproduce::reproduce(target, &opts))
        .map_err(err)?;
    let mut cells = Vec::with_capacity(report.cells.len());
    for c in &report.cells {
        let d = PyDict::new(py);
        d.set_item("id", &c.expectation.id)?;
        d.set_item("observed", c.observed)?;
        d.set_item("expected", c.expectation.value)?;
        let status = match c.status {
            CellStatus::Pass => "pass",
            CellStatus::Fail => "fail",
            CellStatus::Unreproducible { .. } => "unreproducible",
        };
        d.set_item("status", status)?;
        cells.push(d);
    }
    Ok((report.passed(), cells))
}

#[pymodule]
fn cfplacebo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CfPlaceboError", m.py().get_type::<CfPlaceboError>())?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_log_incidence, m)?)?;
    m.add_function(wrap_pyfunction!(ni_margin, m)?)?;
    m.add_function(wrap_pyfunction!(accf_test, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_type1_ni_rae, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_type1_conservative_accf, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce, m)?)?;
    Ok(())
}
