use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;

use super::logistic::Standardized;
use super::{Baseline, CoxModel, StepFunction};

#[derive(Debug, Clone, Copy)]
pub struct CoxFitOptions {
    /// Threshold on the max-norm of the score, on the raw covariate scale.
    pub tolerance: f64,
    pub max_iter: usize,
    pub max_abs_coefficient: f64,
}

impl Default for CoxFitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 50,
            max_abs_coefficient: 30.0,
        }
    }
}

struct Derivatives {
    loglik: f64,
    score: Vec<f64>,
    info: SquareMatrix,
}

/// Subjects sorted by decreasing follow-up time, grouped by tied times.
struct RiskSets {
    order: Vec<usize>,
    /// `(start, end)` ranges into `order` of equal survtime.
    groups: Vec<(usize, usize)>,
}

impl RiskSets {
    fn new(data: &Dataset) -> Self {
        let recs = data.records();
        let mut order: Vec<usize> = (0..recs.len()).collect();
        order.sort_by(|&a, &b| recs[b].survtime.total_cmp(&recs[a].survtime));
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || recs[order[k]].survtime != recs[order[start]].survtime {
                groups.push((start, k));
                start = k;
            }
        }
        Self { order, groups }
    }
}

/// Breslow partial likelihood and its first two derivatives in the
/// standardized parametrization.
fn derivatives(data: &Dataset, x: &Standardized, sets: &RiskSets, beta: &[f64], want_info: bool) -> Derivatives {
    let p = x.p;
    let recs = data.records();
    let eta = |i: usize| x.row(i).iter().zip(beta).map(|(z, b)| z * b).sum::<f64>();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = SquareMatrix::zeros(p);
    let mut loglik = 0.0;
    let mut score = vec![0.0; p];
    let mut info = SquareMatrix::zeros(p);
    for &(a, b) in &sets.groups {
        let mut d = 0usize;
        let mut event_eta = 0.0;
        let mut event_z = vec![0.0; p];
        for &i in &sets.order[a..b] {
            let e = eta(i);
            let w = e.exp();
            s0 += w;
            let z = x.row(i);
            for j in 0..p {
                s1[j] += w * z[j];
            }
            if want_info {
                s2.add_outer(z, w);
            }
            if recs[i].event {
                d += 1;
                event_eta += e;
                for j in 0..p {
                    event_z[j] += z[j];
                }
            }
        }
        if d == 0 {
            continue;
        }
        let df = d as f64;
        loglik += event_eta - df * s0.ln();
        for j in 0..p {
            score[j] += event_z[j] - df * s1[j] / s0;
        }
        if want_info {
            for j in 0..p {
                for k in 0..p {
                    let v = s2.get(j, k) / s0 - s1[j] * s1[k] / (s0 * s0);
                    info.add(j, k, df * v);
                }
            }
        }
    }
    Derivatives { loglik, score, info }
}

/// Breslow log partial likelihood at raw-scale coefficients `beta`
/// (ordered as `covariates`).
pub fn log_partial_likelihood<S: AsRef<str>>(data: &Dataset, covariates: &[S], beta: &[f64]) -> Result<f64> {
    let x = Standardized::new(data, covariates)?;
    if beta.len() != x.p {
        return Err(Error::invalid("coefficient vector length does not match covariates"));
    }
    let std_beta: Vec<f64> = beta.iter().zip(&x.sd).map(|(b, s)| b * s).collect();
    let sets = RiskSets::new(data);
    // centering cancels between the event terms and the log risk-set sums
    Ok(derivatives(data, &x, &sets, &std_beta, false).loglik)
}

/// Fits a Cox proportional hazards model on the follow-up time scale by
/// Newton–Raphson (Breslow ties, step halving) and attaches the Breslow
/// cumulative baseline hazard.
pub fn fit_coxph<S: AsRef<str>>(data: &Dataset, covariates: &[S]) -> Result<CoxModel> {
    fit_coxph_with(data, covariates, CoxFitOptions::default())
}

pub fn fit_coxph_with<S: AsRef<str>>(data: &Dataset, covariates: &[S], opts: CoxFitOptions) -> Result<CoxModel> {
    if !data.records().iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }
    let x = Standardized::new(data, covariates)?;
    let p = x.p;
    let sets = RiskSets::new(data);
    let mut beta = vec![0.0; p];
    let mut converged = p == 0;
    let mut last_norm = 0.0;
    if p > 0 {
        let mut current = derivatives(data, &x, &sets, &beta, true);
        for _ in 0..opts.max_iter {
            let norm = current
                .score
                .iter()
                .zip(&x.sd)
                .fold(0.0_f64, |m, (g, s)| m.max((g / s).abs()));
            last_norm = norm;
            let at_tolerance = norm < opts.tolerance;
            let chol = current
                .info
                .cholesky(1e-14)
                .ok_or_else(|| Error::DegenerateDesign("information matrix is singular".into()))?;
            let step = chol.solve(&current.score);
            let mut scale = 1.0;
            let (next_beta, next) = loop {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
                let d = derivatives(data, &x, &sets, &cand, true);
                if d.loglik >= current.loglik - 1e-12 * current.loglik.abs() || scale < 1e-10 {
                    break (cand, d);
                }
                scale *= 0.5;
            };
            beta = next_beta;
            current = next;
            if let Some((j, b)) = beta.iter().enumerate().find(|(_, b)| b.abs() > opts.max_abs_coefficient) {
                return Err(Error::Separation {
                    name: x.names[j].clone(),
                    value: *b,
                });
            }
            if at_tolerance {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: opts.max_iter,
            score: last_norm,
        });
    }

    let coefficients = x.raw_coefficients(&beta);
    let baseline = breslow(data, &x, &sets, &beta);
    Ok(CoxModel {
        coefficients,
        baseline: Baseline::Table(baseline),
        converged,
    })
}

/// `H₀(x) = Σ_{event times ≤ x} d_k / Σ_{at risk} exp(Zβ)` with raw, uncentered `Z`.
fn breslow(data: &Dataset, x: &Standardized, sets: &RiskSets, beta: &[f64]) -> StepFunction {
    let recs = data.records();
    // exp(Z_raw β_raw) = exp(η_std + centering)
    let centering: f64 = beta.iter().zip(x.mean.iter().zip(&x.sd)).map(|(b, (m, s))| b * m / s).sum();
    let mut s0 = 0.0;
    let mut jumps: Vec<(f64, f64)> = Vec::new();
    for &(a, b) in &sets.groups {
        let mut d = 0usize;
        for &i in &sets.order[a..b] {
            let eta: f64 = x.row(i).iter().zip(beta).map(|(z, b)| z * b).sum();
            s0 += (eta + centering).exp();
            if recs[i].event {
                d += 1;
            }
        }
        if d > 0 {
            jumps.push((recs[sets.order[a]].survtime, d as f64 / s0));
        }
    }
    jumps.reverse();
    let mut times = Vec::with_capacity(jumps.len());
    let mut values = Vec::with_capacity(jumps.len());
    let mut acc = 0.0;
    for (t, h) in jumps {
        acc += h;
        times.push(t);
        values.push(acc);
    }
    StepFunction::new(times, values).expect("Breslow increments are positive at increasing times")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PatientRecord;

    fn toy() -> Dataset {
        let rows = [
            (5.0, true, 0.0),
            (8.0, true, 1.0),
            (8.0, false, 0.0),
            (10.0, true, 1.0),
            (12.0, false, 1.0),
            (15.0, true, 0.0),
            (20.0, false, 1.0),
            (3.0, true, 1.0),
        ];
        let recs = rows
            .iter()
            .map(|&(s, e, z)| {
                let mut r = PatientRecord::new(0.0, s, e);
                r.covariates = vec![z];
                r
            })
            .collect();
        Dataset::new(vec!["z".into()], recs).unwrap()
    }

    #[test]
    fn empty_covariates_give_nelson_aalen() {
        let d = toy();
        let m = fit_coxph(&d, &[] as &[&str]).unwrap();
        let Baseline::Table(h) = &m.baseline else { panic!() };
        // at-risk counts at event times 3, 5, 8, 10, 15: 8, 7, 6, 4, 2
        let expected = [1.0 / 8.0, 1.0 / 7.0, 1.0 / 6.0, 1.0 / 4.0, 1.0 / 2.0];
        let mut acc = 0.0;
        for (k, e) in expected.iter().enumerate() {
            acc += e;
            assert!((h.values()[k] - acc).abs() < 1e-14);
        }
        assert_eq!(h.times(), &[3.0, 5.0, 8.0, 10.0, 15.0]);
        assert_eq!(h.eval(0.0), 0.0);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let d = toy();
        let m = fit_coxph(&d, &["z"]).unwrap();
        let b = m.coefficients["z"];
        let f = |x: f64| log_partial_likelihood(&d, &["z"], &[x]).unwrap();
        let h = 1e-5;
        let fd = (f(b + h) - f(b - h)) / (2.0 * h);
        assert!(fd.abs() < 1e-7, "fd gradient {fd}");
        assert!(f(b) >= f(b + 0.01) && f(b) >= f(b - 0.01));
    }

    #[test]
    fn no_events_is_an_error() {
        let d = toy().filter(|r| !r.event);
        assert!(matches!(fit_coxph(&d, &["z"]), Err(Error::NoEvents)));
    }

    #[test]
    fn constant_covariate_is_degenerate() {
        let d = toy();
        let recs = d
            .records()
            .iter()
            .cloned()
            .map(|mut r| {
                r.covariates.push(2.0);
                r
            })
            .collect();
        let d = Dataset::new(vec!["z".into(), "c".into()], recs).unwrap();
        assert!(matches!(fit_coxph(&d, &["z", "c"]), Err(Error::DegenerateDesign(_))));
    }
}
