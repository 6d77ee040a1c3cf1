//! One-call setup of every chart parameter from a baseline period.

use serde::{Deserialize, Serialize};

use crate::cgr::DEFAULT_MAXTHETA;
use crate::dataset::{arrival_rate, Dataset};
use crate::error::{Error, Result};
use crate::riskadjust::{fit_coxph, fit_logistic, logistic_outcome, CoxModel, LogisticModel};

/// Where a bundled dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    /// File path, when the dataset was read from disk.
    pub source: Option<String>,
    pub n_records: usize,
    pub units: Vec<String>,
}

impl DatasetRef {
    pub fn of(data: &Dataset, source: Option<String>) -> Self {
        Self {
            source,
            n_records: data.len(),
            units: data.units(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistBundle {
    /// Echo of the invocation.
    pub call: Vec<String>,
    pub data: DatasetRef,
    pub baseline_data: DatasetRef,
    pub glmmod: Option<LogisticModel>,
    pub coxphmod: Option<CoxModel>,
    pub theta: f64,
    pub psi: f64,
    pub time: f64,
    pub alpha: f64,
    pub maxtheta: f64,
    pub followup: Option<f64>,
    /// Pooled baseline failure fraction within `followup`.
    pub p0: Option<f64>,
}

impl AssistBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundles always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Followup window, which the discrete-time chart cannot do without.
    pub fn require_followup(&self) -> Result<f64> {
        self.followup
            .ok_or_else(|| Error::invalid("the bundle has no followup; the Bernoulli chart needs one"))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssistOptions {
    /// Risk-adjustment covariates; `None` disables model fitting.
    pub covariates: Option<Vec<String>>,
    pub followup: Option<f64>,
    pub theta: Option<f64>,
    pub time: Option<f64>,
    pub alpha: Option<f64>,
    pub maxtheta: Option<f64>,
}

/// Fits the risk models on `baseline_data` and fills chart defaults:
/// `theta = ln 2`, `alpha = 0.05`, `maxtheta = 6`, `time` = last baseline
/// entry, `psi` = mean per-unit arrival rate of the baseline data.
pub fn parameter_assist(baseline_data: &Dataset, data: &Dataset, opts: &AssistOptions) -> Result<AssistBundle> {
    if baseline_data.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(cov) = &opts.covariates {
        baseline_data.require_covariates(cov)?;
        data.require_covariates(cov)?;
    }
    if let Some(f) = opts.followup {
        if !(f > 0.0) {
            return Err(Error::invalid("followup must be positive"));
        }
    }
    let alpha = opts.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie strictly between 0 and 1"));
    }
    let rates = arrival_rate(baseline_data)?;
    let psi = rates.iter().map(|r| r.psi_hat).sum::<f64>() / rates.len() as f64;
    let glmmod = match (&opts.covariates, opts.followup) {
        (Some(cov), Some(f)) => Some(fit_logistic(baseline_data, cov, f)?),
        _ => None,
    };
    let coxphmod = match &opts.covariates {
        Some(cov) => Some(fit_coxph(baseline_data, cov)?),
        None => None,
    };
    let p0 = opts.followup.map(|f| {
        let fails = baseline_data.records().iter().filter(|r| logistic_outcome(r, f)).count();
        fails as f64 / baseline_data.len() as f64
    });
    Ok(AssistBundle {
        call: Vec::new(),
        data: DatasetRef::of(data, None),
        baseline_data: DatasetRef::of(baseline_data, None),
        glmmod,
        coxphmod,
        theta: opts.theta.unwrap_or(std::f64::consts::LN_2),
        psi,
        time: opts.time.unwrap_or_else(|| baseline_data.max_entrytime().unwrap_or(0.0)),
        alpha,
        maxtheta: opts.maxtheta.unwrap_or(DEFAULT_MAXTHETA),
        followup: opts.followup,
        p0,
    })
}
