//! Python bindings: forward/inverse kinematics and the slice census.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use triplanar::error::Error;
use triplanar::kinematics::{FkOptions, FkSolver, Mechanism, SlicePose};
use triplanar::model::parse_config;
use triplanar::singularity::AspectLabel;

fn to_py_err(err: Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn mechanism(config_text: Option<&str>) -> PyResult<(Mechanism, f64, usize)> {
    let text = config_text.unwrap_or(include_str!("../../../configs/reference.cfg"));
    let cfg = parse_config(text).map_err(to_py_err)?;
    Ok((Mechanism::new(cfg.geometry), cfg.slice.rho1, cfg.slice.grid_n))
}

/// Forward kinematics: list of (theta1, alpha, aspect) at the joint lengths.
/// Aspect is +1 or -1 by the sign of the inverse-Jacobian determinant.
#[pyfunction]
#[pyo3(signature = (rho1, rho2, rho3, config_text=None))]
fn forward_kinematics(
    rho1: f64,
    rho2: f64,
    rho3: f64,
    config_text: Option<&str>,
) -> PyResult<Vec<(f64, f64, i32)>> {
    let (mech, _, _) = mechanism(config_text)?;
    let solver = FkSolver::new(mech, rho1, FkOptions::default());
    let set = solver.solve(rho2, rho3).map_err(to_py_err)?;
    Ok(set
        .solutions
        .iter()
        .map(|c| {
            let aspect = match c.aspect {
                AspectLabel::Wa1 => 1,
                AspectLabel::Wa2 => -1,
                AspectLabel::Singular => 0,
            };
            (c.pose.theta1, c.pose.alpha, aspect)
        })
        .collect())
}

/// Inverse kinematics: (rho1, rho2, rho3) of a pose in the rho1 slice.
#[pyfunction]
#[pyo3(signature = (theta1, alpha, rho1, config_text=None))]
fn inverse_kinematics(
    theta1: f64,
    alpha: f64,
    rho1: f64,
    config_text: Option<&str>,
) -> PyResult<(f64, f64, f64)> {
    let (mech, _, _) = mechanism(config_text)?;
    let j = mech.inverse_kinematics(&SlicePose::new(theta1, alpha, rho1));
    Ok((j.rho1, j.rho2, j.rho3))
}

/// Run the slice analysis and return the census as a dict.
#[pyfunction]
#[pyo3(signature = (config_text=None, grid_n=None))]
fn slice_census(py: Python<'_>, config_text: Option<&str>, grid_n: Option<usize>) -> PyResult<PyObject> {
    let text = config_text.unwrap_or(include_str!("../../../configs/reference.cfg"));
    let mut cfg = parse_config(text).map_err(to_py_err)?;
    if let Some(n) = grid_n {
        cfg.slice = triplanar::model::SliceConfig::new(cfg.slice.rho1, n).map_err(to_py_err)?;
    }
    let atlas = triplanar::atlas::analyze(cfg, text).map_err(to_py_err)?;
    let c = atlas.report.census;
    let dict = pyo3::types::PyDict::new_bound(py);
    dict.set_item("cusps", c.cusps)?;
    dict.set_item("nodes", c.nodes)?;
    dict.set_item("tangency_points", c.tangency_points)?;
    dict.set_item("char_cusps", c.char_cusps)?;
    dict.set_item("singular_crossings", c.singular_crossings)?;
    dict.set_item("char_crossings", c.char_crossings)?;
    dict.set_item("verified", atlas.report.ok())?;
    Ok(dict.into())
}

#[pymodule]
fn triplanar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(slice_census, m)?)?;
    m.add("__version__", triplanar::VERSION)?;
    Ok(())
}
