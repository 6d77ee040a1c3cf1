//! Risk-adjusted Bernoulli CUSUM over outcomes dichotomized at a followup window.

use crate::chart::{check_limit, Chart, ChartKind};
use crate::dataset::{Dataset, PatientRecord};
use crate::error::{Error, Result};
use crate::riskadjust::{logistic, logistic_outcome, ProbabilityModel};

/// How the in-control and alternative failure probabilities are specified.
#[derive(Clone, Copy)]
pub enum BernoulliParams<'a> {
    /// Per-patient `p0_i` from a model, alternative odds ratio `exp(theta)`.
    Model { model: &'a dyn ProbabilityModel, theta: f64 },
    /// Constant `p0`, alternative odds ratio `exp(theta)`.
    Odds { p0: f64, theta: f64 },
    /// Constant `p0` against constant `p1`.
    Probabilities { p0: f64, p1: f64 },
}

impl std::fmt::Debug for BernoulliParams<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Model { theta, .. } => f.debug_struct("Model").field("theta", theta).finish_non_exhaustive(),
            Self::Odds { p0, theta } => f.debug_struct("Odds").field("p0", p0).field("theta", theta).finish(),
            Self::Probabilities { p0, p1 } => f.debug_struct("Probabilities").field("p0", p0).field("p1", p1).finish(),
        }
    }
}

impl BernoulliParams<'_> {
    /// Log odds ratio of the alternative.
    pub fn theta(&self) -> f64 {
        match *self {
            Self::Model { theta, .. } | Self::Odds { theta, .. } => theta,
            Self::Probabilities { p0, p1 } => (p1 * (1.0 - p0) / (p0 * (1.0 - p1))).ln(),
        }
    }

    fn validate(&self) -> Result<()> {
        let prob = |p: f64, name: &str| {
            if p > 0.0 && p < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie strictly between 0 and 1")))
            }
        };
        match *self {
            Self::Model { theta, .. } | Self::Odds { theta, .. } if !theta.is_finite() => {
                Err(Error::invalid("theta must be finite"))
            }
            Self::Odds { p0, .. } => prob(p0, "p0"),
            Self::Probabilities { p0, p1 } => prob(p0, "p0").and(prob(p1, "p1")),
            Self::Model { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BernoulliSpec<'a> {
    pub params: BernoulliParams<'a>,
    /// Outcome window `C`.
    pub followup: f64,
}

/// `W = Xθ − ln(1 − p0 + e^θ p0)`.
pub fn weight_odds(outcome: bool, p0: f64, theta: f64) -> f64 {
    let x = if outcome { theta } else { 0.0 };
    x - (p0 * theta.exp_m1()).ln_1p()
}

/// `W = X ln(p1(1−p0) / (p0(1−p1))) + ln((1−p1)/(1−p0))`.
pub fn weight_probabilities(outcome: bool, p0: f64, p1: f64) -> f64 {
    let x = if outcome {
        (p1 * (1.0 - p0) / (p0 * (1.0 - p1))).ln()
    } else {
        0.0
    };
    x + ((1.0 - p1) / (1.0 - p0)).ln()
}

/// Log-likelihood-ratio increment of one patient with baseline probability
/// `p0_i`. For [`BernoulliParams::Probabilities`] `p0_i` plays the role of `p0`.
pub fn bernoulli_weight(outcome: bool, p0_i: f64, params: &BernoulliParams) -> Result<f64> {
    if !(p0_i > 0.0 && p0_i < 1.0) {
        return Err(Error::invalid(format!("baseline probability {p0_i} must lie strictly between 0 and 1")));
    }
    Ok(match *params {
        BernoulliParams::Model { theta, .. } | BernoulliParams::Odds { theta, .. } => weight_odds(outcome, p0_i, theta),
        BernoulliParams::Probabilities { p1, .. } => {
            if !(p1 > 0.0 && p1 < 1.0) {
                return Err(Error::invalid("p1 must lie strictly between 0 and 1"));
            }
            weight_probabilities(outcome, p0_i, p1)
        }
    })
}

/// Bernoulli CUSUM of one unit.
///
/// Patients are taken in entry order and each outcome becomes known at
/// `entrytime + followup`; patients sharing that time are merged into a
/// single point. A negative log odds ratio gives the lower chart.
pub fn bernoulli_cusum(data: &Dataset, spec: &BernoulliSpec, stoptime: Option<f64>, h: Option<f64>) -> Result<Chart> {
    spec.params.validate()?;
    if !(spec.followup > 0.0) {
        return Err(Error::invalid("followup must be positive"));
    }
    if data.is_empty() {
        return Err(Error::Empty);
    }
    let lower = spec.params.theta() < 0.0;
    let kind = if lower { ChartKind::BernoulliLower } else { ChartKind::Bernoulli };
    if let Some(h) = h {
        check_limit(kind, h)?;
    }
    let c = spec.followup;
    let indeterminate: Vec<usize> = data
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.survtime < c && !r.event)
        .map(|(i, _)| i)
        .collect();
    if !indeterminate.is_empty() {
        return Err(Error::IndeterminateOutcome { rows: indeterminate });
    }
    let predictor = match spec.params {
        BernoulliParams::Model { model, .. } => Some((model.intercept(), model.bind(data.covariate_names())?)),
        _ => None,
    };
    let p0_of = |r: &PatientRecord| match (&predictor, spec.params) {
        (Some((b0, pred)), _) => logistic(b0 + pred.eval(&r.covariates)),
        (None, BernoulliParams::Odds { p0, .. } | BernoulliParams::Probabilities { p0, .. }) => p0,
        (None, BernoulliParams::Model { .. }) => unreachable!(),
    };

    let recs = data.sorted_by_entry();
    let start = recs[0].entrytime;
    let stop = stoptime.unwrap_or(f64::INFINITY);
    let mut chart = Chart::new(kind, start);
    chart.h = h;
    chart.push(start, 0.0, None);
    let mut s = 0.0_f64;
    let mut i = 0;
    while i < recs.len() {
        let t = recs[i].entrytime + c;
        if t > stop {
            break;
        }
        // patients with tied entry times report together
        while i < recs.len() && recs[i].entrytime + c == t {
            let r = recs[i];
            let w = bernoulli_weight(logistic_outcome(r, c), p0_of(r), &spec.params)?;
            s = if lower { (s + w).min(0.0) } else { (s + w).max(0.0) };
            i += 1;
        }
        if t == start {
            chart.points.last_mut().expect("start point").value = s;
        } else {
            chart.push(t, s, None);
        }
        if chart.signalled(h) {
            break;
        }
    }
    Ok(chart)
}
