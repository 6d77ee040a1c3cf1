//! Synthetic multi-hospital surgery data with Poisson arrivals and
//! exponential proportional-hazards survival.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PatientRecord};
use crate::error::{Error, Result};
use crate::rng::{unit_rng, UnitRng};

/// Column order of generated datasets after the core columns.
pub const COVARIATE_COLUMNS: [&str; 5] = ["exptheta", "psival", "age", "sex", "BMI"];

/// Marginals of the synthetic covariates. `sex` is 1 for male.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSampler {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: f64,
    pub bmi_mean: f64,
    pub bmi_sd: f64,
    pub bmi_min: f64,
    pub p_male: f64,
}

impl Default for CovariateSampler {
    fn default() -> Self {
        Self {
            age_mean: 65.0,
            age_sd: 10.0,
            age_min: 18.0,
            bmi_mean: 26.0,
            bmi_sd: 4.0,
            bmi_min: 15.0,
            p_male: 0.5,
        }
    }
}

fn truncated_normal(rng: &mut UnitRng, d: &Normal<f64>, min: f64) -> f64 {
    loop {
        let x = d.sample(rng);
        if x >= min {
            return x;
        }
    }
}

impl CovariateSampler {
    /// `(age, sex, BMI)`; age rounded to whole years, BMI to two decimals.
    fn draw(&self, rng: &mut UnitRng) -> Result<(f64, f64, f64)> {
        let age_d = Normal::new(self.age_mean, self.age_sd).map_err(|e| Error::invalid(e.to_string()))?;
        let bmi_d = Normal::new(self.bmi_mean, self.bmi_sd).map_err(|e| Error::invalid(e.to_string()))?;
        let age = truncated_normal(rng, &age_d, self.age_min).round().max(self.age_min.ceil());
        let sex = f64::from(u8::from(rng.random_bool(self.p_male)));
        let bmi = (truncated_normal(rng, &bmi_d, self.bmi_min) * 100.0).round() / 100.0;
        Ok((age, sex, bmi.max(self.bmi_min)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_units: usize,
    /// Arrival rates, spread over consecutive blocks of equally many units.
    pub psi_levels: Vec<f64>,
    pub entry_horizon: f64,
    /// Exponential baseline hazard `λ`.
    pub baseline_rate: f64,
    /// Log hazard ratios keyed by covariate (`age`, `BMI`, `sex`).
    pub beta: IndexMap<String, f64>,
    /// Unit effects are `θ ~ Normal(theta_mean, theta_sd²)`.
    pub theta_mean: f64,
    pub theta_sd: f64,
    pub covariates: CovariateSampler,
    /// Follow-up beyond this is administratively censored.
    pub censor_cap: Option<f64>,
    /// Round entry and survival times to whole time units, as in day-level registry data.
    pub integer_times: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_units: 45,
            psi_levels: vec![0.5, 1.0, 1.5],
            entry_horizon: 730.0,
            baseline_rate: 0.01,
            beta: [("age", 0.003), ("BMI", 0.02), ("sex", 0.2)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            theta_mean: 0.0,
            theta_sd: 0.4,
            covariates: CovariateSampler::default(),
            censor_cap: None,
            integer_times: false,
            seed: 1,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.psi_levels.is_empty() {
            return Err(Error::invalid("need at least one unit and one arrival rate"));
        }
        if self.psi_levels.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::invalid("arrival rates must be positive"));
        }
        if !(self.baseline_rate > 0.0) || !(self.entry_horizon > 0.0) {
            return Err(Error::invalid("baseline rate and entry horizon must be positive"));
        }
        if !(self.theta_sd >= 0.0) || !self.theta_mean.is_finite() {
            return Err(Error::invalid("theta_sd must be nonnegative and theta_mean finite"));
        }
        if self.censor_cap.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("censor cap must be positive"));
        }
        if let Some(k) = self.beta.keys().find(|k| !["age", "BMI", "sex"].contains(&k.as_str())) {
            return Err(Error::MissingCovariate(k.clone()));
        }
        Ok(())
    }

    /// Arrival rate of unit `i` (0-based).
    pub fn psi_of(&self, i: usize) -> f64 {
        self.psi_levels[i * self.psi_levels.len() / self.n_units]
    }

    fn unit(&self, i: usize) -> Result<Vec<PatientRecord>> {
        let mut rng = unit_rng(self.seed, i as u64);
        let psi = self.psi_of(i);
        let theta = if self.theta_sd > 0.0 {
            Normal::new(self.theta_mean, self.theta_sd)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng)
        } else {
            self.theta_mean
        };
        let gaps = Exp::new(psi).map_err(|e| Error::invalid(e.to_string()))?;
        let b = |k: &str| self.beta.get(k).copied().unwrap_or(0.0);
        let mut out = Vec::new();
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut rng);
            if t > self.entry_horizon {
                break;
            }
            let (age, sex, bmi) = self.covariates.draw(&mut rng)?;
            let rate = self.baseline_rate * (theta + age * b("age") + bmi * b("BMI") + sex * b("sex")).exp();
            let u: f64 = rng.random();
            let mut surv = -(1.0 - u).ln() / rate;
            let mut entry = t;
            if self.integer_times {
                entry = entry.floor();
                surv = surv.round();
            }
            let mut event = true;
            if let Some(cap) = self.censor_cap {
                if surv > cap {
                    surv = cap;
                    event = false;
                }
            }
            out.push(PatientRecord {
                entrytime: entry,
                survtime: surv,
                event,
                unit: (i + 1).to_string(),
                covariates: vec![theta.exp(), psi, age, sex, bmi],
            });
        }
        Ok(out)
    }
}

/// Generates every unit from its own random stream; units are labelled `1..=n_units`.
pub fn generate_surgery_data(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let units = (0..config.n_units)
        .into_par_iter()
        .map(|i| config.unit(i))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        COVARIATE_COLUMNS.iter().map(|c| c.to_string()).collect(),
        units.into_iter().flatten().collect(),
    )
}
