//! Python bindings. Model, bundle and result documents cross the boundary
//! as the same JSON the command-line tool reads and writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use survchart::assist::{parameter_assist as assist, AssistOptions};
use survchart::bernoulli::{bernoulli_cusum as bernoulli, BernoulliParams, BernoulliSpec};
use survchart::bk::{bk_cusum as bk, BkSpec};
use survchart::cgr::{cgr_cusum as cgr, CgrMethod, CgrSpec, DEFAULT_MAXTHETA};
use survchart::chart;
use survchart::controllimit::{control_limit as limit, LimitChart, RunOptions, SimConfig, SimInputs};
use survchart::datagen::{generate_surgery_data as generate, GenConfig};
use survchart::dataset::{arrival_rate as arrivals, parse_dataset, Schema};
use survchart::funnel::{funnel_summary as funnel, FunnelOptions, DEFAULT_CONFLEVS};
use survchart::riskadjust::{fit_coxph as fit_cox, fit_logistic as fit_glm, RiskModel};

fn err(e: survchart::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn py_to_json(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

#[pyclass(name = "Dataset", module = "survchart_py", frozen)]
pub struct PyDataset(survchart::dataset::Dataset);

#[pymethods]
impl PyDataset {
    /// Reads a dataset CSV. `covariates` limits which extra columns are kept.
    #[staticmethod]
    #[pyo3(signature = (path, covariates=None))]
    fn read_csv(path: &str, covariates: Option<Vec<String>>) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        let schema = match covariates {
            Some(c) => Schema::default().with_covariates(c),
            None => Schema::default(),
        };
        parse_dataset(file, &schema).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_csv_string(text: &str) -> PyResult<Self> {
        parse_dataset(text.as_bytes(), &Schema::default()).map(Self).map_err(err)
    }

    fn to_csv_string(&self) -> String {
        self.0.to_csv_string()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn units(&self) -> Vec<String> {
        self.0.units()
    }

    fn unit(&self, label: &str) -> Self {
        Self(self.0.unit(label))
    }

    /// Records with `start <= entrytime < end`.
    #[pyo3(signature = (start=None, end=None))]
    fn entered_between(&self, start: Option<f64>, end: Option<f64>) -> Self {
        let (lo, hi) = (start.unwrap_or(f64::NEG_INFINITY), end.unwrap_or(f64::INFINITY));
        Self(self.0.filter(|r| r.entrytime >= lo && r.entrytime < hi))
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.0.covariate_names().to_vec()
    }

    /// `(entrytime, survtime, event, unit)` columns as lists.
    fn columns(&self) -> (Vec<f64>, Vec<f64>, Vec<bool>, Vec<String>) {
        let r = self.0.records();
        (
            r.iter().map(|x| x.entrytime).collect(),
            r.iter().map(|x| x.survtime).collect(),
            r.iter().map(|x| x.event).collect(),
            r.iter().map(|x| x.unit.clone()).collect(),
        )
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} records, {} units)", self.0.len(), self.0.units().len())
    }
}

#[pyclass(name = "Model", module = "survchart_py", frozen)]
pub struct PyModel(RiskModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        RiskModel::from_json(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind()
    }

    #[getter]
    fn coefficients(&self) -> Vec<(String, f64)> {
        let c = match &self.0 {
            RiskModel::Logistic(m) => &m.coefficients,
            RiskModel::Cox(m) => &m.coefficients,
            RiskModel::Manual(m) => &m.coefficients,
        };
        c.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?})", self.0.kind())
    }
}

#[pyclass(name = "Chart", module = "survchart_py", frozen)]
pub struct PyChart(chart::Chart);

#[pymethods]
impl PyChart {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        chart::Chart::from_json(text).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_csv_string(text: &str) -> PyResult<Self> {
        chart::Chart::from_csv(text.as_bytes()).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn to_csv_string(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0.to_csv(&mut buf).map_err(err)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.as_str()
    }

    #[getter]
    fn start_time(&self) -> f64 {
        self.0.start_time
    }

    #[getter]
    fn h(&self) -> Option<f64> {
        self.0.h
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values()
    }

    #[getter]
    fn theta_hat(&self) -> Option<Vec<f64>> {
        self.0.points.iter().map(|p| p.theta_hat).collect()
    }

    /// Time from start to the first crossing of `h`; `inf` without one.
    fn runlength(&self, h: f64) -> PyResult<f64> {
        self.0.runlength(h).map_err(err)
    }

    #[pyo3(signature = (start=None, end=None))]
    fn chart_max(&self, start: Option<f64>, end: Option<f64>) -> PyResult<f64> {
        let window = match (start, end) {
            (None, None) => None,
            (s, e) => Some((s.unwrap_or(f64::NEG_INFINITY), e.unwrap_or(f64::INFINITY))),
        };
        self.0.chart_max(window).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.points.len()
    }

    fn __repr__(&self) -> String {
        format!("Chart(kind={:?}, points={})", self.0.kind.as_str(), self.0.points.len())
    }
}

fn hazard(model: &PyModel) -> PyResult<&dyn survchart::riskadjust::HazardModel> {
    model
        .0
        .as_hazard()
        .ok_or_else(|| PyValueError::new_err(format!("a {} model has no baseline hazard", model.0.kind())))
}

/// Synthetic multi-unit surgery data. Keyword arguments override the
/// generator defaults (`n_units`, `psi_levels`, `entry_horizon`, `theta_sd`, ...).
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn generate_surgery_data(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<PyDataset> {
    let cfg: GenConfig = match kwargs {
        Some(k) => serde_json::from_str(&py_to_json(k.as_any())?).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => GenConfig::default(),
    };
    generate(&cfg).map(PyDataset).map_err(err)
}

#[pyfunction]
fn arrival_rate(data: &PyDataset) -> PyResult<Vec<(String, f64)>> {
    Ok(arrivals(&data.0).map_err(err)?.into_iter().map(|a| (a.unit, a.psi_hat)).collect())
}

#[pyfunction]
fn fit_logistic(data: &PyDataset, covariates: Vec<String>, followup: f64) -> PyResult<PyModel> {
    fit_glm(&data.0, &covariates, followup).map(|m| PyModel(m.into())).map_err(err)
}

#[pyfunction]
fn fit_coxph(data: &PyDataset, covariates: Vec<String>) -> PyResult<PyModel> {
    fit_cox(&data.0, &covariates).map(|m| PyModel(m.into())).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, followup, model=None, theta=None, p0=None, p1=None, h=None, stoptime=None))]
#[allow(clippy::too_many_arguments)]
fn bernoulli_cusum(
    data: &PyDataset,
    followup: f64,
    model: Option<&PyModel>,
    theta: Option<f64>,
    p0: Option<f64>,
    p1: Option<f64>,
    h: Option<f64>,
    stoptime: Option<f64>,
) -> PyResult<PyChart> {
    let params = match (model, theta, p0, p1) {
        (Some(m), Some(theta), None, None) => BernoulliParams::Model {
            model: m.0.as_probability().ok_or_else(|| PyValueError::new_err("the Bernoulli chart needs a logistic model"))?,
            theta,
        },
        (None, Some(theta), Some(p0), None) => BernoulliParams::Odds { p0, theta },
        (None, None, Some(p0), Some(p1)) => BernoulliParams::Probabilities { p0, p1 },
        _ => return Err(PyValueError::new_err("give model and theta, p0 and theta, or p0 and p1")),
    };
    bernoulli(&data.0, &BernoulliSpec { params, followup }, stoptime, h).map(PyChart).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, model, theta, h=None, truncation=None, stoptime=None))]
fn bk_cusum(
    data: &PyDataset,
    model: &PyModel,
    theta: f64,
    h: Option<f64>,
    truncation: Option<f64>,
    stoptime: Option<f64>,
) -> PyResult<PyChart> {
    let spec = BkSpec {
        truncation,
        stoptime,
        ..BkSpec::new(theta)
    };
    bk(&data.0, hazard(model)?, &spec, h).map(PyChart).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, model, maxtheta=DEFAULT_MAXTHETA, h=None, truncation=None, stoptime=None, method="matrix"))]
#[allow(clippy::too_many_arguments)]
fn cgr_cusum(
    py: Python<'_>,
    data: &PyDataset,
    model: &PyModel,
    maxtheta: f64,
    h: Option<f64>,
    truncation: Option<f64>,
    stoptime: Option<f64>,
    method: &str,
) -> PyResult<PyChart> {
    let method = match method {
        "matrix" => CgrMethod::Matrix,
        "rescan" => CgrMethod::Rescan,
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let spec = CgrSpec {
        maxtheta,
        truncation,
        stoptime,
        method,
        ctimes: None,
    };
    hazard(model)?;
    let (d, m) = (&data.0, &model.0);
    py.detach(|| cgr(d, m.as_hazard().expect("checked above"), &spec, h))
        .map(PyChart)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, followup, model=None, p0=None, conflevs=None, ctime=None))]
fn funnel_summary<'py>(
    py: Python<'py>,
    data: &PyDataset,
    followup: f64,
    model: Option<&PyModel>,
    p0: Option<f64>,
    conflevs: Option<Vec<f64>>,
    ctime: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let prob = match model {
        Some(m) => Some(m.0.as_probability().ok_or_else(|| PyValueError::new_err("funnel plots need a logistic model"))?),
        None => None,
    };
    let opts = FunnelOptions {
        followup,
        ctime,
        p0,
        conflevs: conflevs.unwrap_or_else(|| DEFAULT_CONFLEVS.to_vec()),
    };
    let s = funnel(&data.0, prob, &opts).map_err(err)?;
    json_to_py(py, &serde_json::to_string(&s).expect("summaries serialize"))
}

/// Control limit from simulated in-control units; returns the result document
/// as a dict (`h`, `alpha`, `achieved_alpha`, `n_sim`, `seed`, `maxima`, `config`).
#[pyfunction]
#[pyo3(signature = (kind, time, psi, alpha=0.05, model=None, baseline=None, theta=None, maxtheta=DEFAULT_MAXTHETA,
                    followup=None, p0=None, p1=None, truncation=None, n_sim=None, seed=1, precision=2, workers=None))]
#[allow(clippy::too_many_arguments)]
fn control_limit<'py>(
    py: Python<'py>,
    kind: &str,
    time: f64,
    psi: f64,
    alpha: f64,
    model: Option<&PyModel>,
    baseline: Option<&PyDataset>,
    theta: Option<f64>,
    maxtheta: f64,
    followup: Option<f64>,
    p0: Option<f64>,
    p1: Option<f64>,
    truncation: Option<f64>,
    n_sim: Option<usize>,
    seed: u64,
    precision: u32,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let need_theta = || theta.ok_or_else(|| PyValueError::new_err("theta is required"));
    let chart = match kind {
        "bernoulli" => LimitChart::Bernoulli {
            followup: followup.ok_or_else(|| PyValueError::new_err("followup is required"))?,
            theta,
            p0,
            p1,
        },
        "bk" => LimitChart::Bk {
            theta: need_theta()?,
            truncation,
        },
        "cgr" => LimitChart::Cgr { maxtheta, truncation },
        other => return Err(PyValueError::new_err(format!("unknown chart kind {other:?}"))),
    };
    let mut cfg = SimConfig::new(chart, time, alpha, psi);
    if let Some(n) = n_sim {
        cfg.n_sim = n;
    }
    cfg.seed = seed;
    cfg.h_precision = precision;
    let inputs = SimInputs {
        baseline_data: baseline.map(|b| &b.0),
        model: model.map(|m| &m.0),
    };
    let res = py
        .detach(|| {
            limit(
                &cfg,
                &inputs,
                &RunOptions {
                    workers,
                    progress: None,
                },
            )
        })
        .map_err(err)?;
    json_to_py(py, &serde_json::to_string(&res).expect("results serialize"))
}

/// Fits models on `baseline` and fills chart defaults; returns the bundle as a dict.
#[pyfunction]
#[pyo3(signature = (baseline, data, covariates=None, followup=None, theta=None, time=None, alpha=None, maxtheta=None))]
#[allow(clippy::too_many_arguments)]
fn parameter_assist<'py>(
    py: Python<'py>,
    baseline: &PyDataset,
    data: &PyDataset,
    covariates: Option<Vec<String>>,
    followup: Option<f64>,
    theta: Option<f64>,
    time: Option<f64>,
    alpha: Option<f64>,
    maxtheta: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = AssistOptions {
        covariates,
        followup,
        theta,
        time,
        alpha,
        maxtheta,
    };
    let b = assist(&baseline.0, &data.0, &opts).map_err(err)?;
    json_to_py(py, &b.to_json())
}

#[pymodule]
fn survchart_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyChart>()?;
    m.add_function(wrap_pyfunction!(generate_surgery_data, m)?)?;
    m.add_function(wrap_pyfunction!(arrival_rate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_coxph, m)?)?;
    m.add_function(wrap_pyfunction!(bernoulli_cusum, m)?)?;
    m.add_function(wrap_pyfunction!(bk_cusum, m)?)?;
    m.add_function(wrap_pyfunction!(cgr_cusum, m)?)?;
    m.add_function(wrap_pyfunction!(funnel_summary, m)?)?;
    m.add_function(wrap_pyfunction!(control_limit, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_assist, m)?)?;
    Ok(())
}
