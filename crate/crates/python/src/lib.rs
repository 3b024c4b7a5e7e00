//! Python bindings. Tensors cross the boundary as flat row-major lists in
//! `(n, c, k, k)` order.

use std::path::PathBuf;

use cocompress::{
    self as cc, compress_layer, importance_bruteforce, importance_fast, ApproxState, ConvShape,
    Error, HeuristicConfig, LayerContext, PlannerConfig, Unit, WeightTensor,
};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_numerical() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse_unit(kind: &str, index: usize) -> PyResult<Unit> {
    match kind {
        "channel" => Ok(Unit::Channel(index)),
        "singular_value" => Ok(Unit::SingularValue(index)),
        other => Err(PyValueError::new_err(format!(
            "unit kind must be `channel` or `singular_value`, got `{other}`"
        ))),
    }
}

fn unit_tuple(u: Unit) -> (&'static str, usize) {
    match u {
        Unit::Channel(i) => ("channel", i),
        Unit::SingularValue(i) => ("singular_value", i),
    }
}

fn tensor(shape: (usize, usize, usize), data: Vec<f64>) -> PyResult<WeightTensor> {
    let shape = ConvShape::new(shape.0, shape.1, shape.2).map_err(to_py)?;
    WeightTensor::new(shape, data).map_err(to_py)
}

/// Rate of a layer with `t1` pruned channels and `t2` removed singular values.
#[pyfunction]
fn compression_rate(n: usize, c: usize, k: usize, t1: usize, t2: usize) -> PyResult<f64> {
    let r = ConvShape::new(n, c, k).map_err(to_py)?.full_rank();
    if t1 > c || t2 > r {
        return Err(PyValueError::new_err(format!(
            "need t1 <= {c} and t2 <= {r}"
        )));
    }
    Ok(cc::compression_rate(n, c, k, t1, t2, r))
}

#[pyfunction]
fn rate_from_sensitivity(a: f64, b: f64, i_bar: f64) -> PyResult<f64> {
    cc::rate_from_sensitivity(a, b, i_bar).map_err(to_py)
}

/// Returns `(a, b, r_squared)`.
#[pyfunction]
fn fit_exponential(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let fit = cc::fit_exponential(&points).map_err(to_py)?;
    Ok((fit.a, fit.b, fit.r_squared))
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (models, flops, total_flops, target_rate, eta=1.0, stop_threshold=1e4, r_max=0.95))]
fn plan_rates<'py>(
    py: Python<'py>,
    models: Vec<(f64, f64)>,
    flops: Vec<f64>,
    total_flops: f64,
    target_rate: f64,
    eta: f64,
    stop_threshold: f64,
    r_max: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = PlannerConfig {
        eta,
        stop_threshold,
        r_max,
        ..PlannerConfig::default()
    };
    let plan = cc::plan_rates(&models, &flops, total_flops, target_rate, &cfg).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("rates", plan.rates)?;
    out.set_item("unclamped", plan.unclamped)?;
    out.set_item("clamped", plan.clamped)?;
    out.set_item("i_bar", plan.i_bar)?;
    out.set_item("iterations", plan.iterations)?;
    out.set_item("achieved_flops_sum", plan.achieved_flops_sum)?;
    out.set_item("target", plan.target)?;
    Ok(out)
}

/// Greedy `(R, I)` curve with normalized loss.
#[pyfunction]
fn build_curve(
    shape: (usize, usize, usize),
    weight: Vec<f64>,
    gradient: Vec<f64>,
) -> PyResult<Vec<(f64, f64)>> {
    cc::build_curve(&tensor(shape, weight)?, &tensor(shape, gradient)?).map_err(to_py)
}

/// Layer names and shapes of a network manifest.
#[pyfunction]
fn load_network<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let bundle = cc::load_network(&path).map_err(to_py)?;
    bundle
        .layers
        .iter()
        .map(|rec| {
            let d = PyDict::new(py);
            d.set_item("name", &rec.name)?;
            d.set_item("shape", (rec.n, rec.c, rec.k))?;
            d.set_item("stride", rec.stride)?;
            d.set_item("output", (rec.h_out, rec.w_out))?;
            d.set_item("compressible", rec.compressible)?;
            d.set_item("flops", cc::layer_flops(rec))?;
            Ok(d)
        })
        .collect()
}

/// A layer under compression: original weight, gradient and current
/// approximation.
#[pyclass(name = "Layer")]
struct PyLayer {
    weight: WeightTensor,
    gradient: WeightTensor,
    ctx: LayerContext,
    state: ApproxState,
}

#[pymethods]
impl PyLayer {
    #[new]
    fn new(shape: (usize, usize, usize), weight: Vec<f64>, gradient: Vec<f64>) -> PyResult<Self> {
        let weight = tensor(shape, weight)?;
        let gradient = tensor(shape, gradient)?;
        let ctx = LayerContext::new(&weight, &gradient).map_err(to_py)?;
        let state = ApproxState::new(&weight);
        Ok(Self {
            weight,
            gradient,
            ctx,
            state,
        })
    }

    #[getter]
    fn compression_rate(&self) -> f64 {
        self.state.compression_rate()
    }

    #[getter]
    fn t1(&self) -> usize {
        self.state.t1()
    }

    #[getter]
    fn t2(&self) -> usize {
        self.state.t2()
    }

    #[getter]
    fn singular_values(&self) -> Vec<f64> {
        self.state.svd().sigma.iter().copied().collect()
    }

    /// Current approximation, flat `(n, c, k, k)`.
    fn approx(&self) -> Vec<f64> {
        self.state.approx().into_data()
    }

    fn remaining_units(&self) -> Vec<(&'static str, usize)> {
        self.state
            .remaining_units()
            .into_iter()
            .map(unit_tuple)
            .collect()
    }

    /// Unnormalized information loss of the current approximation.
    fn information_loss(&self) -> f64 {
        self.ctx.loss(self.state.approx_matrix())
    }

    fn remove(&mut self, kind: &str, index: usize) -> PyResult<()> {
        self.state.remove(parse_unit(kind, index)?).map_err(to_py)
    }

    fn reset(&mut self) {
        self.state = ApproxState::new(&self.weight);
    }

    #[pyo3(signature = (kind, index, gamma=0.5, fast=true))]
    fn importance(&self, kind: &str, index: usize, gamma: f64, fast: bool) -> PyResult<f64> {
        let unit = parse_unit(kind, index)?;
        let score = if fast {
            importance_fast(&self.state, &self.ctx, unit, gamma)
        } else {
            importance_bruteforce(&self.state, &self.ctx, unit, gamma)
        };
        score.map_err(to_py)
    }

    /// Compresses the original weight to `target_rate`.
    #[pyo3(signature = (target_rate, gamma=0.5, interval_fraction=0.01))]
    fn compress<'py>(
        &self,
        py: Python<'py>,
        target_rate: f64,
        gamma: f64,
        interval_fraction: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = HeuristicConfig {
            gamma,
            interval_fraction,
            ..HeuristicConfig::new(target_rate)
        };
        let out = compress_layer(&self.weight, &self.gradient, &cfg, "layer").map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("t1", out.t1)?;
        d.set_item("t2", out.t2)?;
        d.set_item("rate", out.rate)?;
        d.set_item("pruning_fallback", out.pruning_fallback)?;
        d.set_item("kept_channels", out.layer.kept_channels.clone())?;
        d.set_item("params", out.layer.param_count())?;
        Ok(d)
    }
}

#[pymodule]
#[pyo3(name = "cocompress")]
fn cocompress_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compression_rate, m)?)?;
    m.add_function(wrap_pyfunction!(rate_from_sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(plan_rates, m)?)?;
    m.add_function(wrap_pyfunction!(build_curve, m)?)?;
    m.add_function(wrap_pyfunction!(load_network, m)?)?;
    m.add_class::<PyLayer>()?;
    Ok(())
}
