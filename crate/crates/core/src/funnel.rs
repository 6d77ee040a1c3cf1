//! Risk-adjusted funnel plots.

use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::riskadjust::{logistic, logistic_outcome, ProbabilityModel};

pub const DEFAULT_CONFLEVS: [f64; 2] = [0.95, 0.99];

/// Normal-approximation interval `p0 ± z √(p0(1−p0)/n)` clamped to `[0, 1]`,
/// with `z` the `(1 + conflev)/2` standard normal quantile.
pub fn funnel_bounds(p0: f64, n: f64, conflev: f64) -> Result<(f64, f64)> {
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::invalid("p0 must lie strictly between 0 and 1"));
    }
    if !(n > 0.0) {
        return Err(Error::invalid("n must be positive"));
    }
    if !(conflev > 0.0 && conflev < 1.0) {
        return Err(Error::invalid("confidence level must lie strictly between 0 and 1"));
    }
    let z = Normal::standard().inverse_cdf((1.0 - conflev) / 2.0).abs();
    let half = z * (p0 * (1.0 - p0) / n).sqrt();
    Ok(((p0 - half).max(0.0), (p0 + half).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "worse")]
    Worse,
    #[serde(rename = "in-control")]
    InControl,
    #[serde(rename = "better")]
    Better,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Worse => "worse",
            Classification::InControl => "in-control",
            Classification::Better => "better",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelRow {
    pub unit: String,
    pub observed: usize,
    pub expected: f64,
    pub numtotal: usize,
    /// Risk-adjusted failure proportion `(O/E)·p0`.
    pub p: f64,
    /// One entry per confidence level, in the summary's order.
    pub classification: Vec<Classification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelSummary {
    pub p0: f64,
    pub conflevs: Vec<f64>,
    pub rows: Vec<FunnelRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunnelOptions {
    pub followup: f64,
    /// Only patients whose outcome window has closed by `ctime` are included.
    pub ctime: Option<f64>,
    pub p0: Option<f64>,
    pub conflevs: Vec<f64>,
}

impl FunnelOptions {
    pub fn new(followup: f64) -> Self {
        Self {
            followup,
            ctime: None,
            p0: None,
            conflevs: DEFAULT_CONFLEVS.to_vec(),
        }
    }
}

#[derive(Default)]
struct Tally {
    observed: usize,
    expected: f64,
    numtotal: usize,
}

pub fn funnel_summary(data: &Dataset, model: Option<&dyn ProbabilityModel>, opts: &FunnelOptions) -> Result<FunnelSummary> {
    if !(opts.followup > 0.0) {
        return Err(Error::invalid("followup must be positive"));
    }
    if opts.conflevs.is_empty() {
        return Err(Error::invalid("at least one confidence level is required"));
    }
    let predictor = model
        .map(|m| m.bind(data.covariate_names()).map(|b| (m.intercept(), b)))
        .transpose()?;
    let included: Vec<_> = data
        .records()
        .iter()
        .filter(|r| opts.ctime.is_none_or(|c| r.entrytime + opts.followup <= c))
        .collect();
    if included.is_empty() {
        return Err(Error::Empty);
    }
    let failures = included.iter().filter(|r| logistic_outcome(r, opts.followup)).count();
    let p0 = opts.p0.unwrap_or(failures as f64 / included.len() as f64);

    let mut tallies: IndexMap<&str, Tally> = IndexMap::new();
    for r in &included {
        let t = tallies.entry(r.unit.as_str()).or_default();
        t.numtotal += 1;
        if logistic_outcome(r, opts.followup) {
            t.observed += 1;
        }
        if let Some((b0, pred)) = &predictor {
            t.expected += logistic(b0 + pred.eval(&r.covariates));
        }
    }

    let mut rows = Vec::with_capacity(tallies.len());
    for (unit, t) in tallies {
        let expected = if predictor.is_some() { t.expected } else { t.numtotal as f64 * p0 };
        let p = if predictor.is_some() {
            if expected == 0.0 {
                if t.observed > 0 {
                    return Err(Error::ZeroExpected { unit: unit.to_string() });
                }
                0.0
            } else {
                t.observed as f64 / expected * p0
            }
        } else {
            t.observed as f64 / t.numtotal as f64
        };
        let classification = opts
            .conflevs
            .iter()
            .map(|&cl| {
                let (lo, hi) = funnel_bounds(p0, t.numtotal as f64, cl)?;
                Ok(if p > hi {
                    Classification::Worse
                } else if p < lo {
                    Classification::Better
                } else {
                    Classification::InControl
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FunnelRow {
            unit: unit.to_string(),
            observed: t.observed,
            expected,
            numtotal: t.numtotal,
            p,
            classification,
        });
    }
    Ok(FunnelSummary {
        p0,
        conflevs: opts.conflevs.clone(),
        rows,
    })
}

impl FunnelSummary {
    /// `unit,observed,expected,numtotal,p,<one column per conflev>`.
    pub fn to_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header: Vec<String> = ["unit", "observed", "expected", "numtotal", "p"].map(String::from).to_vec();
        header.extend(self.conflevs.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.unit.clone(),
                r.observed.to_string(),
                r.expected.to_string(),
                r.numtotal.to_string(),
                r.p.to_string(),
            ];
            rec.extend(r.classification.iter().map(|c| c.as_str().to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format data for drawing the plot: one `unit` row per unit and
    /// `lower`/`upper` rows sampling each bound curve at `samples` values of
    /// `n` (log-spaced between 1 and the largest unit size).
    pub fn plot_data_csv<W: Write>(&self, sink: W, samples: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["series", "label", "conflev", "n", "p"])?;
        for r in &self.rows {
            w.write_record(["unit", &r.unit, "", &r.numtotal.to_string(), &r.p.to_string()])?;
        }
        let nmax = self.rows.iter().map(|r| r.numtotal).max().unwrap_or(1).max(2) as f64;
        let samples = samples.max(2);
        for &cl in &self.conflevs {
            for k in 0..samples {
                let n = nmax.powf(k as f64 / (samples - 1) as f64);
                let (lo, hi) = funnel_bounds(self.p0, n, cl)?;
                let (cl, n) = (cl.to_string(), n.to_string());
                w.write_record(["lower", "", &cl, &n, &lo.to_string()])?;
                w.write_record(["upper", "", &cl, &n, &hi.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PatientRecord;
    use crate::riskadjust::ManualModel;

    #[test]
    fn bounds_examples() {
        let (lo, hi) = funnel_bounds(0.5, 100.0, 0.95).unwrap();
        assert!((lo - 0.402).abs() < 1e-4 && (hi - 0.598).abs() < 1e-4);
        let (lo, hi) = funnel_bounds(0.2, 25.0, 0.95).unwrap();
        assert!((lo - 0.04320).abs() < 1e-5 && (hi - 0.35680).abs() < 1e-5);
        let (lo, hi) = funnel_bounds(0.3, 10.0, 1e-12).unwrap();
        assert!((lo - 0.3).abs() < 1e-9 && (hi - 0.3).abs() < 1e-9);
        let (lo, hi) = funnel_bounds(0.01, 1.0, 0.99).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi < 1.0);
        assert!(funnel_bounds(0.0, 10.0, 0.95).is_err());
        assert!(funnel_bounds(0.5, 0.0, 0.95).is_err());
        assert!(funnel_bounds(0.5, 10.0, 1.0).is_err());
    }

    fn rec(unit: &str, entry: f64, fail: bool) -> PatientRecord {
        let mut r = PatientRecord::new(entry, if fail { 5.0 } else { 100.0 }, true);
        r.unit = unit.into();
        r
    }

    #[test]
    fn model_free_center_line() {
        let recs = (0..40).map(|i| rec("a", i as f64, i % 4 == 0)).collect();
        let d = Dataset::new(vec![], recs).unwrap();
        let s = funnel_summary(&d, None, &FunnelOptions::new(30.0)).unwrap();
        assert_eq!(s.p0, 0.25);
        assert_eq!(s.rows[0].p, 0.25);
        assert!(s.rows[0].classification.iter().all(|&c| c == Classification::InControl));
    }

    #[test]
    fn zero_observed_is_better_when_bound_positive() {
        let mut recs: Vec<_> = (0..200).map(|i| rec("big", i as f64, i % 2 == 0)).collect();
        recs.extend((0..50).map(|i| rec("clean", i as f64, false)));
        let d = Dataset::new(vec![], recs).unwrap();
        let model = ManualModel::new(Vec::<(String, f64)>::new()).with_intercept(0.0);
        let s = funnel_summary(&d, Some(&model), &FunnelOptions::new(30.0)).unwrap();
        let clean = &s.rows[1];
        assert_eq!(clean.unit, "clean");
        assert_eq!(clean.observed, 0);
        assert_eq!(clean.p, 0.0);
        assert!((clean.expected - 25.0).abs() < 1e-12);
        assert!(clean.classification.iter().all(|&c| c == Classification::Better));
    }

    #[test]
    fn ctime_keeps_closed_windows_only() {
        let recs = vec![rec("a", 0.0, true), rec("a", 10.0, false), rec("b", 40.0, true)];
        let d = Dataset::new(vec![], recs).unwrap();
        let opts = FunnelOptions {
            ctime: Some(40.0),
            ..FunnelOptions::new(30.0)
        };
        let s = funnel_summary(&d, None, &opts).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].numtotal, 2);
        let none = FunnelOptions {
            ctime: Some(10.0),
            ..FunnelOptions::new(30.0)
        };
        assert!(matches!(funnel_summary(&d, None, &none), Err(Error::Empty)));
    }

    #[test]
    fn csv_layout() {
        let recs = (0..10).map(|i| rec("u1", i as f64, i < 3)).collect();
        let d = Dataset::new(vec![], recs).unwrap();
        let s = funnel_summary(&d, None, &FunnelOptions::new(30.0)).unwrap();
        let mut buf = Vec::new();
        s.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "unit,observed,expected,numtotal,p,0.95,0.99");
        assert_eq!(text.lines().nth(1).unwrap(), "u1,3,3,10,0.3,in-control,in-control");
        let mut buf = Vec::new();
        s.plot_data_csv(&mut buf, 5).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 1 + 2 * 2 * 5);
    }
}
