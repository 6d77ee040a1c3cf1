//! CGR-CUSUM: likelihood-ratio chart maximized over the change subject with
//! a capped running MLE of the hazard ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{check_limit, evaluation_grid, Chart, ChartKind};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exposure::{exposures, failure_times, Exposure};
use crate::riskadjust::{Baseline, HazardModel};

pub const DEFAULT_MAXTHETA: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CgrMethod {
    /// Precompute every `Λᵢ(t_k)` then run suffix scans.
    #[default]
    Matrix,
    /// Recompute the intensities at each evaluation time; constant memory.
    Rescan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgrSpec {
    /// Cap on the estimated hazard ratio `exp(θ̂)`.
    pub maxtheta: f64,
    #[serde(default)]
    pub ctimes: Option<Vec<f64>>,
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub stoptime: Option<f64>,
    #[serde(default)]
    pub method: CgrMethod,
}

impl Default for CgrSpec {
    fn default() -> Self {
        Self {
            maxtheta: DEFAULT_MAXTHETA,
            ctimes: None,
            truncation: None,
            stoptime: None,
            method: CgrMethod::Matrix,
        }
    }
}

impl CgrSpec {
    fn validate(&self) -> Result<()> {
        if !(self.maxtheta > 1.0) {
            return Err(Error::invalid("maxtheta must exceed 1"));
        }
        Ok(())
    }
}

/// `min(ln maxtheta, max(0, ln(N/Λ)))`, with `N = 0 → 0` and `Λ = 0 < N → ln maxtheta`.
pub fn cgr_mle(n: f64, lambda: f64, maxtheta: f64) -> f64 {
    let cap = maxtheta.ln();
    if n <= 0.0 {
        0.0
    } else if lambda <= 0.0 {
        cap
    } else {
        (n / lambda).ln().max(0.0).min(cap)
    }
}

/// Subject cumulative intensities and failure indicators on a time grid.
///
/// Rows are subjects in entry order; columns are grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMatrix {
    times: Vec<f64>,
    entries: Vec<f64>,
    lambda: Vec<f64>,
    failed: Vec<bool>,
}

impl IntensityMatrix {
    pub fn build(data: &Dataset, model: &dyn HazardModel, truncation: Option<f64>, times: &[f64]) -> Result<Self> {
        let exps = exposures(data, model, truncation)?;
        Ok(Self::from_exposures(&exps, model.baseline(), times))
    }

    fn from_exposures(exps: &[Exposure], baseline: &Baseline, times: &[f64]) -> Self {
        let m = times.len();
        let rows: Vec<(Vec<f64>, Vec<bool>)> = exps
            .par_iter()
            .map(|e| {
                let l = times.iter().map(|&t| e.cum_intensity(baseline, t)).collect();
                let f = times.iter().map(|&t| e.failures_by(t) > 0.0).collect();
                (l, f)
            })
            .collect();
        let mut lambda = Vec::with_capacity(exps.len() * m);
        let mut failed = Vec::with_capacity(exps.len() * m);
        for (l, f) in rows {
            lambda.extend(l);
            failed.extend(f);
        }
        Self {
            times: times.to_vec(),
            entries: exps.iter().map(|e| e.entry).collect(),
            lambda,
            failed,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_subjects(&self) -> usize {
        self.entries.len()
    }

    pub fn lambda(&self, subject: usize, k: usize) -> f64 {
        self.lambda[subject * self.times.len() + k]
    }

    pub fn failed(&self, subject: usize, k: usize) -> bool {
        self.failed[subject * self.times.len() + k]
    }
}

/// Descending suffix scan over the subjects that entered by `t`; returns the
/// chart value and the θ̂ of the maximizing change subject.
fn suffix_scan(entered: usize, maxtheta: f64, cell: impl Fn(usize) -> (f64, f64)) -> (f64, f64) {
    let mut n = 0.0;
    let mut lam = 0.0;
    let mut best = f64::NEG_INFINITY;
    let mut best_theta = 0.0;
    for i in (0..entered).rev() {
        let (ni, li) = cell(i);
        n += ni;
        lam += li;
        let theta = cgr_mle(n, lam, maxtheta);
        let term = theta * n - theta.exp_m1() * lam;
        // `>=` while descending hands ties to the smallest index
        if term >= best {
            best = term;
            best_theta = theta;
        }
    }
    if entered == 0 {
        (0.0, 0.0)
    } else {
        (best.max(0.0), best_theta)
    }
}

pub(crate) fn cgr_chart(
    exps: &[Exposure],
    baseline: &Baseline,
    spec: &CgrSpec,
    h: Option<f64>,
) -> Chart {
    let start = exps.iter().map(|e| e.entry).fold(f64::INFINITY, f64::min);
    let mut chart = Chart::new(ChartKind::Cgr, start);
    chart.h = h;
    if exps.is_empty() {
        return chart;
    }
    let grid = evaluation_grid(start, &failure_times(exps), spec.ctimes.as_deref(), spec.stoptime);
    let entered = |t: f64| exps.partition_point(|e| e.entry <= t);
    match spec.method {
        CgrMethod::Matrix => {
            let mat = IntensityMatrix::from_exposures(exps, baseline, &grid);
            let vals: Vec<(f64, f64)> = (0..grid.len())
                .into_par_iter()
                .map(|k| {
                    suffix_scan(entered(grid[k]), spec.maxtheta, |i| {
                        (f64::from(u8::from(mat.failed(i, k))), mat.lambda(i, k))
                    })
                })
                .collect();
            for (&t, (v, th)) in grid.iter().zip(vals) {
                chart.push(t, v, Some(th));
                if chart.signalled(h) {
                    break;
                }
            }
        }
        CgrMethod::Rescan => {
            for &t in &grid {
                let (v, th) = suffix_scan(entered(t), spec.maxtheta, |i| {
                    (exps[i].failures_by(t), exps[i].cum_intensity(baseline, t))
                });
                chart.push(t, v, Some(th));
                if chart.signalled(h) {
                    break;
                }
            }
        }
    }
    chart
}

/// CGR-CUSUM of one unit, with the θ̂ trace of the maximizing change subject.
pub fn cgr_cusum(data: &Dataset, model: &dyn HazardModel, spec: &CgrSpec, h: Option<f64>) -> Result<Chart> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(h) = h {
        check_limit(ChartKind::Cgr, h)?;
    }
    let exps = exposures(data, model, spec.truncation)?;
    Ok(cgr_chart(&exps, model.baseline(), spec, h))
}
