//! Risk-adjustment models.
//!
//! Discrete-time charts (funnel plot, Bernoulli CUSUM) use a logistic model
//! for the probability of failing within a followup window. Continuous-time
//! charts (BK, CGR) use a Cox proportional hazards model whose Breslow
//! baseline gives each subject a cumulative intensity
//! `Λᵢ(t) = exp(Zᵢβ) · H₀(time at risk by t)`.
//!
//! Models serialize to a small JSON document:
//! `{kind, intercept?, coefficients{name: value}, baseline{times, values} | {rate}, followup?}`.

mod cox;
mod logistic;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateLookup, PatientRecord};
use crate::error::{Error, Result};

pub use cox::{fit_coxph, fit_coxph_with, log_partial_likelihood, CoxFitOptions};
pub use logistic::{fit_logistic, fit_logistic_with, logistic_outcome, LogisticFitOptions};

/// Named linear-predictor coefficients, kept in insertion order.
pub type Coefficients = IndexMap<String, f64>;

/// Right-continuous nondecreasing step function with `H(x) = 0` before the first jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepFunctionRepr")]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct StepFunctionRepr {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<StepFunctionRepr> for StepFunction {
    type Error = Error;
    fn try_from(r: StepFunctionRepr) -> Result<Self> {
        StepFunction::new(r.times, r.values)
    }
}

impl StepFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid("step function: times and values differ in length"));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("step function: non-finite entry"));
        }
        if times.first().is_some_and(|&t| t < 0.0) || values.first().is_some_and(|&v| v < 0.0) {
            return Err(Error::invalid("step function: negative time or value"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("step function: times must be strictly increasing"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("step function: values must be nondecreasing"));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `x`; constant beyond the last jump.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.times.partition_point(|&t| t <= x);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// Generalized inverse `inf{x : H(x) ≥ y}`; `+∞` when `y` exceeds the last value.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let k = self.values.partition_point(|&v| v < y);
        self.times.get(k).copied().unwrap_or(f64::INFINITY)
    }
}

/// Cumulative baseline hazard on the follow-up time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Baseline {
    /// Constant hazard: `H₀(x) = rate · x`.
    Rate { rate: f64 },
    Table(StepFunction),
}

impl Baseline {
    pub fn rate(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::invalid("baseline rate must be positive"));
        }
        Ok(Baseline::Rate { rate })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Baseline::Rate { rate } => rate * x.max(0.0),
            Baseline::Table(s) => s.eval(x),
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match self {
            Baseline::Rate { rate } => y.max(0.0) / rate,
            Baseline::Table(s) => s.inverse(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Coefficients,
    pub followup: f64,
    pub converged: bool,
    pub p0_marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub coefficients: Coefficients,
    pub baseline: Baseline,
    pub converged: bool,
}

/// User-specified coefficients, with an optional intercept and baseline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ManualModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    pub coefficients: Coefficients,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup: Option<f64>,
}

impl ManualModel {
    pub fn new<S: Into<String>>(coefficients: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self {
            coefficients: coefficients.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            ..Default::default()
        }
    }

    pub fn with_intercept(mut self, intercept: f64) -> Self {
        self.intercept = Some(intercept);
        self
    }

    pub fn with_baseline(mut self, baseline: Baseline) -> Self {
        self.baseline = Some(baseline);
        self
    }
}

/// Any risk model, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RiskModel {
    Logistic(LogisticModel),
    Cox(CoxModel),
    Manual(ManualModel),
}

impl RiskModel {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models always serialize")
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RiskModel::Logistic(_) => "logistic",
            RiskModel::Cox(_) => "cox",
            RiskModel::Manual(_) => "manual",
        }
    }

    /// The model as a failure-probability model, if it is one.
    pub fn as_probability(&self) -> Option<&dyn ProbabilityModel> {
        match self {
            RiskModel::Logistic(m) => Some(m),
            RiskModel::Manual(m) => Some(m),
            RiskModel::Cox(_) => None,
        }
    }

    /// The model as a hazard model, if it carries a baseline.
    pub fn as_hazard(&self) -> Option<&dyn HazardModel> {
        match self {
            RiskModel::Cox(m) => Some(m),
            RiskModel::Manual(m) if m.baseline.is_some() => Some(m),
            _ => None,
        }
    }

    pub fn followup(&self) -> Option<f64> {
        match self {
            RiskModel::Logistic(m) => Some(m.followup),
            RiskModel::Manual(m) => m.followup,
            RiskModel::Cox(_) => None,
        }
    }
}

impl From<LogisticModel> for RiskModel {
    fn from(m: LogisticModel) -> Self {
        RiskModel::Logistic(m)
    }
}

impl From<CoxModel> for RiskModel {
    fn from(m: CoxModel) -> Self {
        RiskModel::Cox(m)
    }
}

impl From<ManualModel> for RiskModel {
    fn from(m: ManualModel) -> Self {
        RiskModel::Manual(m)
    }
}

/// A model with a linear predictor `Zβ`.
pub trait LinearModel {
    fn coefficients(&self) -> &Coefficients;

    fn linear_predictor(&self, covariates: &dyn CovariateLookup) -> Result<f64> {
        self.coefficients().iter().try_fold(0.0, |acc, (name, beta)| {
            covariates
                .covariate(name)
                .map(|z| acc + z * beta)
                .ok_or_else(|| Error::MissingCovariate(name.clone()))
        })
    }

    /// Resolves coefficient names against a dataset's covariate columns.
    fn bind(&self, names: &[String]) -> Result<BoundPredictor> {
        let mut index = Vec::with_capacity(self.coefficients().len());
        let mut beta = Vec::with_capacity(self.coefficients().len());
        for (name, b) in self.coefficients() {
            let i = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::MissingCovariate(name.clone()))?;
            index.push(i);
            beta.push(*b);
        }
        Ok(BoundPredictor { index, beta })
    }
}

/// Failure probability within a fixed window.
pub trait ProbabilityModel: LinearModel {
    fn intercept(&self) -> f64;

    /// `1 / (1 + exp(-(β₀ + Zβ)))`.
    fn predict_prob(&self, covariates: &dyn CovariateLookup) -> Result<f64> {
        Ok(logistic(self.intercept() + self.linear_predictor(covariates)?))
    }
}

/// Proportional-hazards model with a cumulative baseline hazard.
pub trait HazardModel: LinearModel {
    fn baseline(&self) -> &Baseline;

    /// `exp(Zβ)`; exactly 1 with no covariates.
    fn relative_risk(&self, covariates: &dyn CovariateLookup) -> Result<f64> {
        Ok(self.linear_predictor(covariates)?.exp())
    }

    /// Cumulative intensity `Λᵢ(t)` of one subject at chronological time `t`.
    ///
    /// The subject is at risk from entry until `min(survtime, truncation)`
    /// after entry; the intensity is constant afterwards.
    fn subject_cum_intensity(
        &self,
        record: &PatientRecord,
        covariates: &dyn CovariateLookup,
        t: f64,
        truncation: Option<f64>,
    ) -> Result<f64> {
        let rr = self.relative_risk(covariates)?;
        let window = at_risk_window(record.survtime, truncation);
        Ok(cum_intensity(self.baseline(), rr, record.entrytime, window, t))
    }
}

impl LinearModel for LogisticModel {
    fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }
}

impl ProbabilityModel for LogisticModel {
    fn intercept(&self) -> f64 {
        self.intercept
    }
}

impl LinearModel for ManualModel {
    fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }
}

impl ProbabilityModel for ManualModel {
    fn intercept(&self) -> f64 {
        self.intercept.unwrap_or(0.0)
    }
}

const NO_BASELINE: Baseline = Baseline::Rate { rate: 0.0 };

impl HazardModel for ManualModel {
    fn baseline(&self) -> &Baseline {
        self.baseline.as_ref().unwrap_or(&NO_BASELINE)
    }
}

impl LinearModel for CoxModel {
    fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }
}

impl HazardModel for CoxModel {
    fn baseline(&self) -> &Baseline {
        &self.baseline
    }
}

/// Coefficients resolved to column positions for fast repeated evaluation.
#[derive(Debug, Clone)]
pub struct BoundPredictor {
    index: Vec<usize>,
    beta: Vec<f64>,
}

impl BoundPredictor {
    pub fn eval(&self, covariates: &[f64]) -> f64 {
        self.index
            .iter()
            .zip(&self.beta)
            .fold(0.0, |acc, (&i, b)| acc + covariates[i] * b)
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Follow-up span during which a subject is at risk.
pub(crate) fn at_risk_window(survtime: f64, truncation: Option<f64>) -> f64 {
    match truncation {
        Some(c) => survtime.min(c),
        None => survtime,
    }
}

/// `rr · H₀(clamp(t − entry, 0, window))`.
pub(crate) fn cum_intensity(baseline: &Baseline, rr: f64, entry: f64, window: f64, t: f64) -> f64 {
    if t < entry {
        return 0.0;
    }
    rr * baseline.eval((t - entry).min(window))
}
