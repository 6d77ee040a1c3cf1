//! Continuous-time BK-CUSUM for a prespecified hazard ratio `exp(θ₁)`.

use serde::{Deserialize, Serialize};

use crate::chart::{check_limit, evaluation_grid, Chart, ChartKind, TwoSidedChart};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exposure::{exposures, failure_times, Exposure};
use crate::riskadjust::{Baseline, HazardModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BkSpec {
    /// Log hazard ratio under the alternative; the sign picks the upper or lower chart.
    pub theta: f64,
    /// Extra evaluation times, merged with the failure times.
    #[serde(default)]
    pub ctimes: Option<Vec<f64>>,
    /// Outcome truncation window `C`.
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub stoptime: Option<f64>,
}

impl BkSpec {
    pub fn new(theta: f64) -> Self {
        Self {
            theta,
            ctimes: None,
            truncation: None,
            stoptime: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() || self.theta == 0.0 {
            return Err(Error::invalid("theta must be finite and nonzero"));
        }
        Ok(())
    }
}

/// `Σᵢ Λᵢ(t)` in entry order, skipping subjects that have not yet entered.
pub(crate) fn total_intensity(exps: &[Exposure], baseline: &Baseline, t: f64) -> f64 {
    let entered = exps.partition_point(|e| e.entry <= t);
    exps[..entered].iter().map(|e| e.cum_intensity(baseline, t)).sum()
}

/// BK statistic on prepared exposures.
///
/// With `G(t) = θN(t) − (e^θ − 1)Λ(t)`, the chart is `G(t)` minus the running
/// minimum of `G` over the origin and all failure times up to `t` (maximum,
/// for the lower chart). Candidate change points are only the origin and the
/// failure times, so extra grid times never alter the values.
pub(crate) fn bk_chart(
    exps: &[Exposure],
    baseline: &Baseline,
    theta: f64,
    ctimes: Option<&[f64]>,
    stoptime: Option<f64>,
    h: Option<f64>,
) -> Chart {
    let lower = theta < 0.0;
    let kind = if lower { ChartKind::BkLower } else { ChartKind::Bk };
    let start = exps.iter().map(|e| e.entry).fold(f64::INFINITY, f64::min);
    let mut chart = Chart::new(kind, start);
    chart.h = h;
    if exps.is_empty() {
        return chart;
    }
    let failures = failure_times(exps);
    let grid = evaluation_grid(start, &failures, ctimes, stoptime);
    let drift = theta.exp_m1();
    let mut anchor = 0.0_f64;
    let mut nf = 0usize;
    for &t in &grid {
        let before = nf;
        while nf < failures.len() && failures[nf] <= t {
            nf += 1;
        }
        let g = theta * nf as f64 - drift * total_intensity(exps, baseline, t);
        let value = if lower { (g - anchor).min(0.0) } else { (g - anchor).max(0.0) };
        chart.push(t, value, None);
        if nf > before {
            anchor = if lower { anchor.max(g) } else { anchor.min(g) };
        }
        if chart.signalled(h) {
            break;
        }
    }
    chart
}

/// BK-CUSUM of one unit. `theta > 0` gives the upper chart, `theta < 0` the
/// lower chart. With `h`, construction stops at the first crossing.
pub fn bk_cusum(data: &Dataset, model: &dyn HazardModel, spec: &BkSpec, h: Option<f64>) -> Result<Chart> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(h) = h {
        let kind = if spec.theta < 0.0 { ChartKind::BkLower } else { ChartKind::Bk };
        check_limit(kind, h)?;
    }
    let exps = exposures(data, model, spec.truncation)?;
    Ok(bk_chart(&exps, model.baseline(), spec.theta, spec.ctimes.as_deref(), spec.stoptime, h))
}

/// Upper chart at `|θ|` paired with the lower chart at `−|θ|`.
pub fn bk_cusum_twosided(
    data: &Dataset,
    model: &dyn HazardModel,
    spec: &BkSpec,
    h_upper: Option<f64>,
    h_lower: Option<f64>,
) -> Result<TwoSidedChart> {
    let up = BkSpec {
        theta: spec.theta.abs(),
        ..spec.clone()
    };
    let lo = BkSpec {
        theta: -spec.theta.abs(),
        ..spec.clone()
    };
    Ok(TwoSidedChart {
        upper: bk_cusum(data, model, &up, h_upper)?,
        lower: bk_cusum(data, model, &lo, h_lower)?,
    })
}
