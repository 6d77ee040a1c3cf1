//! Control limits from simulated in-control units, chosen so that at most a
//! fraction `alpha` of them signals within the monitoring horizon.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bernoulli::{bernoulli_cusum, BernoulliParams, BernoulliSpec};
use crate::bk::{bk_cusum, BkSpec};
use crate::cgr::{cgr_cusum, CgrSpec};
use crate::dataset::{Dataset, PatientRecord};
use crate::error::{Error, Result};
use crate::riskadjust::{logistic, LinearModel, RiskModel};
use crate::rng::unit_rng;

/// Chart family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LimitChart {
    /// With a probability model give `theta`; without one give `p0` and
    /// either `theta` or `p1`.
    Bernoulli {
        followup: f64,
        #[serde(default)]
        theta: Option<f64>,
        #[serde(default)]
        p0: Option<f64>,
        #[serde(default)]
        p1: Option<f64>,
    },
    Bk {
        theta: f64,
        #[serde(default)]
        truncation: Option<f64>,
    },
    Cgr {
        maxtheta: f64,
        #[serde(default)]
        truncation: Option<f64>,
    },
}

impl LimitChart {
    pub fn default_n_sim(&self) -> usize {
        match self {
            LimitChart::Cgr { .. } => 20,
            _ => 200,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LimitChart::Bernoulli { .. } => "bernoulli",
            LimitChart::Bk { .. } => "bk",
            LimitChart::Cgr { .. } => "cgr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Monitoring horizon; arrivals fall in `[0, time]` and charts stop at `time`.
    pub time: f64,
    pub alpha: f64,
    pub psi: f64,
    pub n_sim: usize,
    /// Decimal places of the limit grid.
    pub h_precision: u32,
    pub seed: u64,
    pub chart: LimitChart,
}

impl SimConfig {
    pub fn new(chart: LimitChart, time: f64, alpha: f64, psi: f64) -> Self {
        Self {
            time,
            alpha,
            psi,
            n_sim: chart.default_n_sim(),
            h_precision: 2,
            seed: 1,
            chart,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie strictly between 0 and 1"));
        }
        if !(self.psi > 0.0 && self.psi.is_finite()) {
            return Err(Error::invalid("psi must be positive"));
        }
        if !(self.time > 0.0 && self.time.is_finite()) {
            return Err(Error::invalid("time must be positive"));
        }
        if self.n_sim == 0 {
            return Err(Error::invalid("n_sim must be at least 1"));
        }
        if self.h_precision > 12 {
            return Err(Error::invalid("h_precision must be at most 12"));
        }
        Ok(())
    }

    /// Lower charts are calibrated on minima with a negative limit.
    pub fn is_lower(&self) -> bool {
        match self.chart {
            LimitChart::Bernoulli { theta: Some(t), .. } => t < 0.0,
            LimitChart::Bernoulli { p0: Some(p0), p1: Some(p1), .. } => p1 < p0,
            LimitChart::Bk { theta, .. } => theta < 0.0,
            _ => false,
        }
    }
}

/// Inputs shared by every simulated unit.
#[derive(Clone, Copy)]
pub struct SimInputs<'a> {
    /// Covariate rows are resampled with replacement from here.
    pub baseline_data: Option<&'a Dataset>,
    pub model: Option<&'a RiskModel>,
}

#[derive(Default, Clone, Copy)]
pub struct RunOptions<'a> {
    /// Thread count; `None` uses the ambient rayon pool.
    pub workers: Option<usize>,
    /// Called with `(finished, total)` after each simulated unit.
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLimitResult {
    pub h: f64,
    pub alpha: f64,
    pub achieved_alpha: f64,
    pub n_sim: usize,
    pub seed: u64,
    /// Per-unit chart maximum (minimum for lower charts), by unit index.
    pub maxima: Vec<f64>,
    pub config: SimConfig,
}

enum Outcome<'a> {
    Hazard(&'a RiskModel),
    Probability(Option<&'a RiskModel>, f64),
}

fn check_inputs<'a>(config: &SimConfig, inputs: &SimInputs<'a>) -> Result<Outcome<'a>> {
    match (&config.chart, inputs.model) {
        (LimitChart::Bernoulli { followup, theta, p0, p1 }, model) => {
            if !(*followup > 0.0) {
                return Err(Error::invalid("followup must be positive"));
            }
            match model {
                Some(m) => {
                    if m.as_probability().is_none() || matches!(m, RiskModel::Cox(_)) {
                        return Err(Error::invalid("the Bernoulli chart needs a logistic or manual model"));
                    }
                    if theta.is_none() || p1.is_some() {
                        return Err(Error::invalid("with a model the Bernoulli chart takes theta only"));
                    }
                    Ok(Outcome::Probability(Some(m), 0.0))
                }
                None => match (p0, theta, p1) {
                    (Some(p0), Some(_), None) | (Some(p0), None, Some(_)) => Ok(Outcome::Probability(None, *p0)),
                    _ => Err(Error::invalid("without a model give p0 together with theta or p1")),
                },
            }
        }
        (_, Some(m)) => match m {
            RiskModel::Logistic(_) => Err(Error::invalid("continuous-time charts need a hazard model")),
            RiskModel::Manual(mm) if mm.baseline.is_none() => {
                Err(Error::invalid("continuous-time charts need a model with a baseline hazard"))
            }
            _ => Ok(Outcome::Hazard(m)),
        },
        (_, None) => Err(Error::invalid("continuous-time charts need a hazard model")),
    }
}

/// One synthetic in-control unit, determined by `(config.seed, index)`.
pub fn simulate_inctrl_unit(config: &SimConfig, inputs: &SimInputs, index: u64) -> Result<Dataset> {
    config.validate()?;
    let outcome = check_inputs(config, inputs)?;
    simulate(config, inputs, &outcome, index)
}

fn linear_part(m: &RiskModel) -> &dyn LinearModel {
    match m {
        RiskModel::Logistic(l) => l,
        RiskModel::Cox(c) => c,
        RiskModel::Manual(mm) => mm,
    }
}

fn simulate(config: &SimConfig, inputs: &SimInputs, outcome: &Outcome, index: u64) -> Result<Dataset> {
    let mut rng = unit_rng(config.seed, index);
    let names = inputs.baseline_data.map(|d| d.covariate_names().to_vec()).unwrap_or_default();
    let pool = inputs.baseline_data.map(|d| d.records()).unwrap_or(&[]);
    if !names.is_empty() && pool.is_empty() {
        return Err(Error::Empty);
    }
    let gaps = Exp::new(config.psi).map_err(|e| Error::invalid(e.to_string()))?;
    let predictor = match outcome {
        Outcome::Hazard(m) | Outcome::Probability(Some(m), _) => Some(linear_part(m).bind(&names)?),
        Outcome::Probability(None, _) => None,
    };
    let mut records = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t > config.time {
            break;
        }
        let covariates = if pool.is_empty() {
            Vec::new()
        } else {
            pool[rng.random_range(0..pool.len())].covariates.clone()
        };
        let eta = predictor.as_ref().map_or(0.0, |p| p.eval(&covariates));
        let u: f64 = rng.random();
        let (survtime, event) = match outcome {
            Outcome::Hazard(m) => {
                let x = m.as_hazard().unwrap().baseline().inverse(-(1.0 - u).ln() / eta.exp());
                let room = config.time - t;
                if x <= room {
                    (x, true)
                } else {
                    (room, false)
                }
            }
            Outcome::Probability(m, p0) => {
                let LimitChart::Bernoulli { followup, .. } = config.chart else { unreachable!() };
                let p = match m {
                    Some(m) => logistic(m.as_probability().unwrap().intercept() + eta),
                    None => *p0,
                };
                (followup, u < p)
            }
        };
        records.push(PatientRecord {
            entrytime: t,
            survtime,
            event,
            unit: (index + 1).to_string(),
            covariates,
        });
    }
    Dataset::new(names, records)
}

fn unit_extreme(config: &SimConfig, inputs: &SimInputs, outcome: &Outcome, index: u64) -> Result<f64> {
    let data = simulate(config, inputs, outcome, index)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let stop = Some(config.time);
    let chart = match (&config.chart, outcome) {
        (LimitChart::Bernoulli { followup, theta, p0, p1 }, Outcome::Probability(m, _)) => {
            let params = match (m, theta, p0, p1) {
                (Some(m), Some(theta), _, _) => BernoulliParams::Model {
                    model: m.as_probability().unwrap(),
                    theta: *theta,
                },
                (None, Some(theta), Some(p0), _) => BernoulliParams::Odds { p0: *p0, theta: *theta },
                (None, None, Some(p0), Some(p1)) => BernoulliParams::Probabilities { p0: *p0, p1: *p1 },
                _ => unreachable!("checked by check_inputs"),
            };
            let spec = BernoulliSpec {
                params,
                followup: *followup,
            };
            bernoulli_cusum(&data, &spec, stop, None)?
        }
        (LimitChart::Bk { theta, truncation }, Outcome::Hazard(m)) => {
            let spec = BkSpec {
                theta: *theta,
                ctimes: None,
                truncation: *truncation,
                stoptime: stop,
            };
            bk_cusum(&data, m.as_hazard().unwrap(), &spec, None)?
        }
        (LimitChart::Cgr { maxtheta, truncation }, Outcome::Hazard(m)) => {
            let spec = CgrSpec {
                maxtheta: *maxtheta,
                truncation: *truncation,
                stoptime: stop,
                ..CgrSpec::default()
            };
            cgr_cusum(&data, m.as_hazard().unwrap(), &spec, None)?
        }
        _ => unreachable!("checked by check_inputs"),
    };
    chart.chart_max(None)
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Chart extremes over `[0, time]` of units `indices` under the configured seed.
pub fn simulated_maxima(
    config: &SimConfig,
    inputs: &SimInputs,
    indices: std::ops::Range<u64>,
    opts: &RunOptions,
) -> Result<Vec<f64>> {
    config.validate()?;
    let outcome = check_inputs(config, inputs)?;
    let total = (indices.end - indices.start) as usize;
    let done = AtomicUsize::new(0);
    with_workers(opts.workers, || {
        indices
            .into_par_iter()
            .map(|i| {
                let v = unit_extreme(config, inputs, &outcome, i);
                if let Some(cb) = opts.progress {
                    cb(done.fetch_add(1, Ordering::Relaxed) + 1, total);
                }
                v
            })
            .collect::<Result<Vec<f64>>>()
    })?
}

/// Smallest grid value `h` (step `10^-precision`) such that at most a
/// fraction `alpha` of `maxima` reaches it. Lower charts pass minima and get
/// a negative limit. Returns `(h, achieved_alpha)`.
pub fn limit_from_maxima(maxima: &[f64], alpha: f64, precision: u32, lower: bool) -> Result<(f64, f64)> {
    if maxima.is_empty() {
        return Err(Error::Empty);
    }
    let sign = if lower { -1.0 } else { 1.0 };
    let mut m: Vec<f64> = maxima.iter().map(|v| sign * v).collect();
    if m.iter().all(|&v| v <= 0.0) {
        return Err(Error::InsufficientEvents);
    }
    m.sort_by(|a, b| b.total_cmp(a));
    let n = m.len();
    let allowed = (alpha * n as f64 + 1e-9).floor() as usize;
    let scale = 10f64.powi(precision as i32);
    let grid = |j: i64| j as f64 / scale;
    // the limit must exceed the (allowed + 1)-th largest value
    let h = if allowed >= n {
        grid(1)
    } else {
        let bar = m[allowed].max(0.0);
        let mut j = (bar * scale).floor() as i64 + 1;
        while grid(j) <= bar {
            j += 1;
        }
        while j > 1 && grid(j - 1) > bar {
            j -= 1;
        }
        grid(j)
    };
    let achieved = m.iter().filter(|&&v| v >= h).count() as f64 / n as f64;
    Ok((sign * h, achieved))
}

pub fn control_limit(config: &SimConfig, inputs: &SimInputs, opts: &RunOptions) -> Result<ControlLimitResult> {
    let maxima = simulated_maxima(config, inputs, 0..config.n_sim as u64, opts)?;
    let (h, achieved_alpha) = limit_from_maxima(&maxima, config.alpha, config.h_precision, config.is_lower())?;
    Ok(ControlLimitResult {
        h,
        alpha: config.alpha,
        achieved_alpha,
        n_sim: config.n_sim,
        seed: config.seed,
        maxima,
        config: config.clone(),
    })
}
