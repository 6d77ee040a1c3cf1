//! Common chart representation, run lengths and chart extrema.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Bernoulli,
    BernoulliLower,
    Bk,
    BkLower,
    Cgr,
}

impl ChartKind {
    /// Lower charts live below zero and signal at `value ≤ h < 0`.
    pub fn is_lower(self) -> bool {
        matches!(self, ChartKind::BernoulliLower | ChartKind::BkLower)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChartKind::Bernoulli => "bernoulli",
            ChartKind::BernoulliLower => "bernoulli_lower",
            ChartKind::Bk => "bk",
            ChartKind::BkLower => "bk_lower",
            ChartKind::Cgr => "cgr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub t: f64,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<f64>,
}

/// A CUSUM evaluated at strictly increasing chronological times.
///
/// The first point is always the start of monitoring (the smallest entry
/// time in the charted data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub kind: ChartKind,
    pub start_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub points: Vec<ChartPoint>,
}

/// Upper and lower charts of a two-sided scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedChart {
    pub upper: Chart,
    pub lower: Chart,
}

impl TwoSidedChart {
    /// Earliest signal of either side.
    pub fn runlength(&self, h_upper: f64, h_lower: f64) -> Result<f64> {
        Ok(self.upper.runlength(h_upper)?.min(self.lower.runlength(h_lower)?))
    }
}

impl Chart {
    pub fn new(kind: ChartKind, start_time: f64) -> Self {
        Self {
            kind,
            start_time,
            h: None,
            points: Vec::new(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    fn crosses(&self, value: f64, h: f64) -> bool {
        if self.kind.is_lower() {
            value <= h
        } else {
            value >= h
        }
    }

    /// Time from `start_time` to the first stored point at or beyond `h`;
    /// `+∞` if the chart never signals.
    pub fn runlength(&self, h: f64) -> Result<f64> {
        check_limit(self.kind, h)?;
        Ok(self
            .points
            .iter()
            .find(|p| self.crosses(p.value, h))
            .map(|p| p.t - self.start_time)
            .unwrap_or(f64::INFINITY))
    }

    /// Largest value (smallest, for lower charts) over an optional closed time window.
    pub fn chart_max(&self, window: Option<(f64, f64)>) -> Result<f64> {
        let mut vals = self
            .points
            .iter()
            .filter(|p| window.is_none_or(|(a, b)| p.t >= a && p.t <= b))
            .map(|p| p.value)
            .peekable();
        if vals.peek().is_none() {
            return Err(Error::EmptyWindow);
        }
        Ok(if self.kind.is_lower() {
            vals.fold(f64::INFINITY, f64::min)
        } else {
            vals.fold(f64::NEG_INFINITY, f64::max)
        })
    }

    pub(crate) fn push(&mut self, t: f64, value: f64, theta_hat: Option<f64>) {
        debug_assert!(self.points.last().is_none_or(|p| p.t < t));
        self.points.push(ChartPoint { t, value, theta_hat });
    }

    /// True when the last stored point reaches `h`.
    pub(crate) fn signalled(&self, h: Option<f64>) -> bool {
        match (h, self.points.last()) {
            (Some(h), Some(p)) => self.crosses(p.value, h),
            _ => false,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("charts always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes `time,value[,theta_hat]`.
    pub fn to_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let with_theta = self.points.iter().any(|p| p.theta_hat.is_some());
        if with_theta {
            w.write_record(["time", "value", "theta_hat"])?;
        } else {
            w.write_record(["time", "value"])?;
        }
        for p in &self.points {
            let mut row = vec![p.t.to_string(), p.value.to_string()];
            if with_theta {
                row.push(p.theta_hat.map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a chart CSV. The CSV carries no metadata, so the first point is
    /// taken as the start of monitoring; a `theta_hat` column marks a CGR
    /// chart and any negative value a lower chart.
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let tc = col("time")?;
        let vc = col("value")?;
        let thc = headers.iter().position(|h| h == "theta_hat");
        let mut points = Vec::new();
        for (idx, row) in rdr.records().enumerate() {
            let row = row?;
            let num = |c: usize, name: &str| -> Result<f64> {
                let raw = row.get(c).unwrap_or("");
                raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                    row: idx + 2,
                    column: name.to_string(),
                    value: raw.to_string(),
                })
            };
            let theta_hat = match thc {
                Some(c) if !row.get(c).unwrap_or("").is_empty() => Some(num(c, "theta_hat")?),
                _ => None,
            };
            points.push(ChartPoint {
                t: num(tc, "time")?,
                value: num(vc, "value")?,
                theta_hat,
            });
        }
        if points.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid("chart times must be strictly increasing"));
        }
        let kind = if thc.is_some() {
            ChartKind::Cgr
        } else if points.iter().any(|p| p.value < 0.0) {
            ChartKind::BkLower
        } else {
            ChartKind::Bk
        };
        let start_time = points.first().map(|p| p.t).unwrap_or(0.0);
        Ok(Chart {
            kind,
            start_time,
            h: None,
            points,
        })
    }
}

pub(crate) fn check_limit(kind: ChartKind, h: f64) -> Result<()> {
    let ok = if kind.is_lower() { h < 0.0 } else { h > 0.0 };
    if !ok || !h.is_finite() {
        return Err(Error::invalid(format!(
            "control limit {h} has the wrong sign for a {} chart",
            kind.as_str()
        )));
    }
    Ok(())
}

/// Sorted, deduplicated evaluation times: the start, every failure time and
/// any requested times, all within `[start, stoptime]`.
pub(crate) fn evaluation_grid(start: f64, failures: &[f64], ctimes: Option<&[f64]>, stoptime: Option<f64>) -> Vec<f64> {
    let stop = stoptime.unwrap_or(f64::INFINITY);
    let mut grid: Vec<f64> = std::iter::once(start)
        .chain(failures.iter().copied())
        .chain(ctimes.unwrap_or(&[]).iter().copied())
        .filter(|&t| t >= start && t <= stop && t.is_finite())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}
