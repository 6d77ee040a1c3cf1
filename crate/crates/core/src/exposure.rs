//! Per-subject exposure shared by the continuous-time charts.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::riskadjust::{at_risk_window, cum_intensity, Baseline, HazardModel};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Exposure {
    pub entry: f64,
    pub window: f64,
    /// Chronological failure time, when the failure is observed within the window.
    pub failure: Option<f64>,
    pub rr: f64,
}

impl Exposure {
    pub fn cum_intensity(&self, baseline: &Baseline, t: f64) -> f64 {
        cum_intensity(baseline, self.rr, self.entry, self.window, t)
    }

    pub fn failures_by(&self, t: f64) -> f64 {
        match self.failure {
            Some(f) if f <= t => 1.0,
            _ => 0.0,
        }
    }
}

pub(crate) fn check_truncation(truncation: Option<f64>) -> Result<()> {
    match truncation {
        Some(c) if !(c > 0.0) => Err(Error::invalid("truncation time C must be positive")),
        _ => Ok(()),
    }
}

/// Exposures in stable entry-time order.
pub(crate) fn exposures(data: &Dataset, model: &dyn HazardModel, truncation: Option<f64>) -> Result<Vec<Exposure>> {
    check_truncation(truncation)?;
    let predictor = model.bind(data.covariate_names())?;
    Ok(data
        .sorted_by_entry()
        .into_iter()
        .map(|r| {
            let window = at_risk_window(r.survtime, truncation);
            let counted = r.event && truncation.is_none_or(|c| r.survtime <= c);
            Exposure {
                entry: r.entrytime,
                window,
                failure: counted.then_some(r.entrytime + r.survtime),
                rr: predictor.eval(&r.covariates).exp(),
            }
        })
        .collect())
}

/// Sorted chronological failure times, with multiplicity.
pub(crate) fn failure_times(exps: &[Exposure]) -> Vec<f64> {
    let mut f: Vec<f64> = exps.iter().filter_map(|e| e.failure).collect();
    f.sort_by(f64::total_cmp);
    f
}
