//! Python bindings: scenario loading, planning, single episodes and the
//! nominal-speed sweep. Results come back as dicts and CSV strings.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ovs_core::config::{parse_override, ScenarioConfig};
use ovs_core::sim::{self, Method, Scenario};
use ovs_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::PlanningFailure(_) | Error::TargetLostAtStart | Error::InfeasibleStart(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn load(path: Option<&str>, overrides: Vec<String>) -> PyResult<Scenario> {
    let parsed = overrides
        .iter()
        .map(|a| parse_override(a))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    let cfg = match path {
        Some(p) => ScenarioConfig::load(Path::new(p), &parsed),
        None => ScenarioConfig::from_str_with("", &parsed),
    }
    .map_err(to_py)?;
    let scenario = cfg.to_scenario().map_err(to_py)?;
    scenario.validate().map_err(to_py)?;
    Ok(scenario)
}

fn method(name: &str) -> PyResult<Method> {
    name.parse().map_err(to_py)
}

/// Default scenario as configuration text.
#[pyfunction]
fn default_config() -> String {
    ScenarioConfig::default().to_config_string()
}

/// Optimizes the reference trajectory. Returns cost, iterations, convergence,
/// defect, cost history and the trajectory CSV.
#[pyfunction]
#[pyo3(signature = (scenario=None, overrides=Vec::new()))]
fn plan<'py>(
    py: Python<'py>,
    scenario: Option<&str>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let sc = load(scenario, overrides)?;
    let goal = sim::estimate_goal(&sc).map_err(to_py)?;
    let (traj, report) = py
        .detach(|| sim::plan(&sc, Method::Ovs, &goal))
        .map_err(to_py)?;
    let report = report.expect("optimized plans carry a report");
    let d = PyDict::new(py);
    d.set_item("cost", report.final_cost)?;
    d.set_item("iterations", report.iterations)?;
    d.set_item("converged", report.converged)?;
    d.set_item("max_defect", report.max_dynamics_defect)?;
    d.set_item("cost_history", report.cost_history)?;
    d.set_item(
        "s_nom",
        (goal.x_goal.position - sc.x_init.position).norm() / sc.tf,
    )?;
    d.set_item("trajectory_csv", traj.to_csv())?;
    Ok(d)
}

/// Flies one episode and returns its error statistics and episode CSV.
#[pyfunction]
#[pyo3(signature = (scenario=None, method_name="ovs", overrides=Vec::new()))]
fn run_episode<'py>(
    py: Python<'py>,
    scenario: Option<&str>,
    method_name: &str,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let sc = load(scenario, overrides)?;
    let m = method(method_name)?;
    let log = py
        .detach(|| sim::run_episode(&sc, m, &sc.mpc))
        .map_err(to_py)?;
    let stats = sim::compute_stats(&log, sc.vehicle.mass * sc.vehicle.gravity.norm());
    let d = PyDict::new(py);
    d.set_item("method", m.to_string())?;
    d.set_item("avg_pixel_error", stats.avg_pixel_error)?;
    d.set_item("max_pixel_error", stats.max_pixel_error)?;
    d.set_item("visibility", stats.visibility_fraction)?;
    d.set_item("rms_thrust", stats.rms_thrust)?;
    d.set_item(
        "final_position_error",
        (log.final_state().position - log.goal.position).norm(),
    )?;
    d.set_item("episode_csv", log.to_csv())?;
    Ok(d)
}

/// Runs the sweep over `tf_list` and returns the comparison CSV.
#[pyfunction]
#[pyo3(signature = (scenario=None, tf_list=None, trials=None, overrides=Vec::new()))]
fn compare(
    py: Python<'_>,
    scenario: Option<&str>,
    tf_list: Option<Vec<f64>>,
    trials: Option<usize>,
    overrides: Vec<String>,
) -> PyResult<String> {
    let sc = load(scenario, overrides)?;
    let tfs = tf_list.unwrap_or_else(|| sc.tf_list.clone());
    let n = trials.unwrap_or(sc.trials);
    if n == 0 {
        return Err(PyValueError::new_err("trials must be at least 1"));
    }
    let table = py
        .detach(|| sim::sweep_nominal_speeds(&sc, &tfs, &Method::ALL, n))
        .map_err(to_py)?;
    Ok(table.to_csv())
}

#[pymodule]
fn ovs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
