use crate::dataset::{Dataset, PatientRecord};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;

use super::{logistic, Coefficients, LogisticModel};

#[derive(Debug, Clone, Copy)]
pub struct LogisticFitOptions {
    /// Convergence threshold on the score max-norm divided by the sample size.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Any fitted coefficient (on the standardized scale) beyond this magnitude
    /// is reported as separation.
    pub max_abs_coefficient: f64,
}

impl Default for LogisticFitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 50,
            max_abs_coefficient: 30.0,
        }
    }
}

/// Binary outcome within `followup`: an observed failure no later than the window end.
pub fn logistic_outcome(record: &PatientRecord, followup: f64) -> bool {
    record.event && record.survtime <= followup
}

/// Column-standardized design used by both model fits.
pub(super) struct Standardized {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Row-major `n × p`, centered and scaled.
    pub x: Vec<f64>,
    pub p: usize,
}

impl Standardized {
    pub fn new<S: AsRef<str>>(data: &Dataset, covariates: &[S]) -> Result<Self> {
        data.require_covariates(covariates)?;
        let cols: Vec<usize> = covariates
            .iter()
            .map(|c| data.covariate_index(c.as_ref()).unwrap())
            .collect();
        let n = data.len();
        let p = cols.len();
        let mut mean = vec![0.0; p];
        let mut sd = vec![0.0; p];
        for (j, &c) in cols.iter().enumerate() {
            let m = data.records().iter().map(|r| r.covariates[c]).sum::<f64>() / n as f64;
            let var = data
                .records()
                .iter()
                .map(|r| (r.covariates[c] - m).powi(2))
                .sum::<f64>()
                / n as f64;
            let s = var.sqrt();
            if !(s > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::DegenerateDesign(format!(
                    "covariate `{}` has zero variance",
                    covariates[j].as_ref()
                )));
            }
            mean[j] = m;
            sd[j] = s;
        }
        let mut x = Vec::with_capacity(n * p);
        for r in data.records() {
            for (j, &c) in cols.iter().enumerate() {
                x.push((r.covariates[c] - mean[j]) / sd[j]);
            }
        }
        let s = Self {
            names: covariates.iter().map(|c| c.as_ref().to_string()).collect(),
            mean,
            sd,
            x,
            p,
        };
        s.check_rank(n)?;
        Ok(s)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Rejects collinear columns via the correlation matrix.
    fn check_rank(&self, n: usize) -> Result<()> {
        if self.p == 0 {
            return Ok(());
        }
        let mut corr = SquareMatrix::zeros(self.p);
        for i in 0..n {
            corr.add_outer(self.row(i), 1.0);
        }
        corr.scale(1.0 / n as f64);
        if corr.cholesky(1e-10).is_none() {
            return Err(Error::DegenerateDesign(format!(
                "covariates {:?} are collinear",
                self.names
            )));
        }
        Ok(())
    }

    /// Maps standardized slopes back to the raw covariate scale.
    pub fn raw_coefficients(&self, beta: &[f64]) -> Coefficients {
        self.names
            .iter()
            .zip(beta.iter().zip(&self.sd))
            .map(|(n, (b, s))| (n.clone(), b / s))
            .collect()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fits `P(failure within followup) = logistic(β₀ + Zβ)` by iteratively
/// reweighted least squares with step halving.
pub fn fit_logistic<S: AsRef<str>>(
    data: &Dataset,
    covariates: &[S],
    followup: f64,
) -> Result<LogisticModel> {
    fit_logistic_with(data, covariates, followup, LogisticFitOptions::default())
}

pub fn fit_logistic_with<S: AsRef<str>>(
    data: &Dataset,
    covariates: &[S],
    followup: f64,
    opts: LogisticFitOptions,
) -> Result<LogisticModel> {
    if !(followup > 0.0) {
        return Err(Error::invalid("followup must be positive"));
    }
    if data.is_empty() {
        return Err(Error::Empty);
    }
    let design = Standardized::new(data, covariates)?;
    let n = data.len();
    let p = design.p;
    let y: Vec<f64> = data
        .records()
        .iter()
        .map(|r| f64::from(u8::from(logistic_outcome(r, followup))))
        .collect();
    let ybar = y.iter().sum::<f64>() / n as f64;
    if ybar == 0.0 || ybar == 1.0 {
        return Err(Error::Separation {
            name: "(intercept)".into(),
            value: if ybar == 0.0 { f64::NEG_INFINITY } else { f64::INFINITY },
        });
    }

    // coefficient 0 is the intercept; the rest follow the design columns
    let mut beta = vec![0.0; p + 1];
    beta[0] = (ybar / (1.0 - ybar)).ln();

    let eta = |beta: &[f64], i: usize| {
        beta[0]
            + design
                .row(i)
                .iter()
                .zip(&beta[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>()
    };
    let loglik = |beta: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let e = eta(beta, i);
                y[i] * e - softplus(e)
            })
            .sum()
    };

    let mut converged = false;
    let mut ll = loglik(&beta);
    for _ in 0..opts.max_iter {
        let mut score = vec![0.0; p + 1];
        let mut info = SquareMatrix::zeros(p + 1);
        let mut xi = vec![1.0; p + 1];
        for (i, &yi) in y.iter().enumerate() {
            xi[1..].copy_from_slice(design.row(i));
            let mu = logistic(eta(&beta, i));
            let resid = yi - mu;
            for (s, x) in score.iter_mut().zip(&xi) {
                *s += x * resid;
            }
            info.add_outer(&xi, mu * (1.0 - mu));
        }
        let norm = score.iter().fold(0.0_f64, |m, s| m.max(s.abs())) / n as f64;
        // one more Newton step after the threshold is met
        converged = norm < opts.tolerance;
        let chol = info.cholesky(1e-14).ok_or_else(|| {
            Error::DegenerateDesign("information matrix is singular".into())
        })?;
        let step = chol.solve(&score);
        let mut scale = 1.0;
        let mut candidate: Vec<f64>;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let new_ll = loglik(&candidate);
            if new_ll >= ll - 1e-12 * ll.abs() || scale < 1e-10 {
                ll = new_ll;
                break;
            }
            scale *= 0.5;
        }
        beta = candidate;
        if let Some((j, b)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| b.abs() > opts.max_abs_coefficient)
        {
            let name = if j == 0 { "(intercept)".to_string() } else { design.names[j - 1].clone() };
            return Err(Error::Separation { name, value: *b });
        }
        if converged {
            break;
        }
    }

    let coefficients = design.raw_coefficients(&beta[1..]);
    let intercept = beta[0]
        - beta[1..]
            .iter()
            .zip(design.mean.iter().zip(&design.sd))
            .map(|(b, (m, s))| b * m / s)
            .sum::<f64>();
    let p0_marginal = (0..n).map(|i| logistic(eta(&beta, i))).sum::<f64>() / n as f64;
    Ok(LogisticModel {
        intercept,
        coefficients,
        followup,
        converged,
        p0_marginal,
    })
}
