//! Patient-level data model, CSV ingestion and arrival-rate estimation.
//!
//! A [`Dataset`] is an ordered list of [`PatientRecord`]s sharing one list of
//! covariate names. Times are plain numbers on a common scale (days in the
//! bundled generator); date strings are rejected.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit label used when the source has no unit column.
pub const IMPLICIT_UNIT: &str = "1";

/// One subject: chronological entry, follow-up outcome and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub entrytime: f64,
    /// Follow-up duration from entry until failure or censoring.
    pub survtime: f64,
    /// `true` when the failure was observed, `false` when right-censored at `survtime`.
    pub event: bool,
    pub unit: String,
    /// Values aligned with [`Dataset::covariate_names`].
    pub covariates: Vec<f64>,
}

impl PatientRecord {
    pub fn new(entrytime: f64, survtime: f64, event: bool) -> Self {
        Self {
            entrytime,
            survtime,
            event,
            unit: IMPLICIT_UNIT.to_string(),
            covariates: Vec::new(),
        }
    }

    /// Chronological failure or censoring time.
    pub fn exit_time(&self) -> f64 {
        self.entrytime + self.survtime
    }
}

/// Name-based access to a subject's covariates.
pub trait CovariateLookup {
    fn covariate(&self, name: &str) -> Option<f64>;
}

impl CovariateLookup for HashMap<String, f64> {
    fn covariate(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl CovariateLookup for BTreeMap<String, f64> {
    fn covariate(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl CovariateLookup for IndexMap<String, f64> {
    fn covariate(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl CovariateLookup for [(&str, f64)] {
    fn covariate(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> CovariateLookup for [(&str, f64); N] {
    fn covariate(&self, name: &str) -> Option<f64> {
        self.as_slice().covariate(name)
    }
}

/// A record together with the names of its covariate values.
#[derive(Debug, Clone, Copy)]
pub struct RecordRef<'a> {
    pub record: &'a PatientRecord,
    pub names: &'a [String],
}

impl CovariateLookup for RecordRef<'_> {
    fn covariate(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.record.covariates[i])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<PatientRecord>,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking every record against the record invariants.
    pub fn new(covariate_names: Vec<String>, records: Vec<PatientRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != covariate_names.len() {
                return Err(Error::invalid(format!(
                    "record {i} has {} covariates, expected {}",
                    r.covariates.len(),
                    covariate_names.len()
                )));
            }
            if !r.entrytime.is_finite() || !r.survtime.is_finite() {
                return Err(Error::invalid(format!("record {i} has a non-finite time")));
            }
            if r.survtime < 0.0 {
                return Err(Error::NegativeSurvtime {
                    row: i,
                    value: r.survtime,
                });
            }
        }
        Ok(Self {
            records,
            covariate_names,
        })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<RecordRef<'_>> {
        self.records.get(i).map(|record| RecordRef {
            record,
            names: &self.covariate_names,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = RecordRef<'_>> {
        self.records.iter().map(|record| RecordRef {
            record,
            names: &self.covariate_names,
        })
    }

    /// Distinct unit labels in order of first appearance.
    pub fn units(&self) -> Vec<String> {
        let mut seen: IndexMap<&str, ()> = IndexMap::new();
        for r in &self.records {
            seen.entry(r.unit.as_str()).or_insert(());
        }
        seen.keys().map(|s| s.to_string()).collect()
    }

    pub fn filter(&self, mut keep: impl FnMut(&PatientRecord) -> bool) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    pub fn unit(&self, label: &str) -> Dataset {
        self.filter(|r| r.unit == label)
    }

    /// Records ordered by entry time; ties keep their input order.
    pub fn sorted_by_entry(&self) -> Vec<&PatientRecord> {
        let mut out: Vec<&PatientRecord> = self.records.iter().collect();
        out.sort_by(|a, b| a.entrytime.total_cmp(&b.entrytime));
        out
    }

    pub fn min_entrytime(&self) -> Option<f64> {
        self.records.iter().map(|r| r.entrytime).reduce(f64::min)
    }

    pub fn max_entrytime(&self) -> Option<f64> {
        self.records.iter().map(|r| r.entrytime).reduce(f64::max)
    }

    /// Checks that every name is a covariate of this dataset.
    pub fn require_covariates<S: AsRef<str>>(&self, names: &[S]) -> Result<()> {
        for n in names {
            if self.covariate_index(n.as_ref()).is_none() {
                return Err(Error::MissingCovariate(n.as_ref().to_string()));
            }
        }
        Ok(())
    }

    pub fn from_csv<R: Read>(source: R, schema: &Schema) -> Result<Self> {
        parse_dataset(source, schema)
    }

    /// Writes `entrytime,survtime,censorid,unit,<covariates...>`.
    pub fn to_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["entrytime", "survtime", "censorid", "unit"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.entrytime.to_string(),
                r.survtime.to_string(),
                if r.event { "1" } else { "0" }.to_string(),
                r.unit.clone(),
            ];
            row.extend(r.covariates.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Which non-core columns become covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CovariateSelection {
    /// Every column other than the four core columns.
    #[default]
    AllOther,
    /// Only the listed columns; others are ignored.
    Only(Vec<String>),
}

/// Column-name mapping for [`parse_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub entrytime: String,
    pub survtime: String,
    pub censorid: String,
    pub unit: String,
    pub covariates: CovariateSelection,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            entrytime: "entrytime".into(),
            survtime: "survtime".into(),
            censorid: "censorid".into(),
            unit: "unit".into(),
            covariates: CovariateSelection::AllOther,
        }
    }
}

impl Schema {
    pub fn with_covariates<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.covariates = CovariateSelection::Only(names.into_iter().map(Into::into).collect());
        self
    }
}

fn numeric(raw: &str, line: usize, column: &str) -> Result<f64> {
    let t = raw.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric {
            row: line,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Parses a header-first CSV into a [`Dataset`].
///
/// Row numbers in errors are file line numbers (the header is line 1).
/// A missing `censorid` column means every subject had an observed event; a
/// missing unit column puts everyone in [`IMPLICIT_UNIT`].
pub fn parse_dataset<R: Read>(source: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let entry_col = find(&schema.entrytime).ok_or_else(|| Error::MissingColumn(schema.entrytime.clone()))?;
    let surv_col = find(&schema.survtime).ok_or_else(|| Error::MissingColumn(schema.survtime.clone()))?;
    let cens_col = find(&schema.censorid);
    let unit_col = find(&schema.unit);

    let core = [Some(entry_col), Some(surv_col), cens_col, unit_col];
    let covariate_names: Vec<String> = match &schema.covariates {
        CovariateSelection::AllOther => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !core.contains(&Some(*i)))
            .map(|(_, h)| h.clone())
            .collect(),
        CovariateSelection::Only(list) => list.clone(),
    };
    let cov_cols = covariate_names
        .iter()
        .map(|n| find(n).ok_or_else(|| Error::MissingColumn(n.clone())))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = idx + 2;
        let field = |c: usize| row.get(c).unwrap_or("");
        let entrytime = numeric(field(entry_col), line, &schema.entrytime)?;
        let survtime = numeric(field(surv_col), line, &schema.survtime)?;
        if survtime < 0.0 {
            return Err(Error::NegativeSurvtime {
                row: line,
                value: survtime,
            });
        }
        let event = match cens_col {
            None => true,
            Some(c) => match field(c).trim().parse::<f64>() {
                Ok(0.0) => false,
                Ok(1.0) => true,
                _ => {
                    return Err(Error::InvalidCensorid {
                        row: line,
                        value: field(c).to_string(),
                    })
                }
            },
        };
        let unit = unit_col
            .map(|c| field(c).trim().to_string())
            .unwrap_or_else(|| IMPLICIT_UNIT.to_string());
        let covariates = cov_cols
            .iter()
            .zip(&covariate_names)
            .map(|(&c, name)| {
                let raw = field(c);
                if raw.trim().is_empty() || raw.trim() == "NA" {
                    Err(Error::MissingCell {
                        row: line,
                        column: name.clone(),
                    })
                } else {
                    numeric(raw, line, name)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(PatientRecord {
            entrytime,
            survtime,
            event,
            unit,
            covariates,
        });
    }
    Ok(Dataset {
        records,
        covariate_names,
    })
}

/// Poisson arrival-rate estimate for one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEstimate {
    pub unit: String,
    pub psi_hat: f64,
    pub n: usize,
    pub span: f64,
}

/// Per-unit arrival rates `n / (max entry - min entry)`, ascending by rate.
pub fn arrival_rate(data: &Dataset) -> Result<Vec<ArrivalEstimate>> {
    let mut by_unit: IndexMap<&str, (usize, f64, f64)> = IndexMap::new();
    for r in data.records() {
        let e = by_unit
            .entry(r.unit.as_str())
            .or_insert((0, f64::INFINITY, f64::NEG_INFINITY));
        e.0 += 1;
        e.1 = e.1.min(r.entrytime);
        e.2 = e.2.max(r.entrytime);
    }
    let mut out = Vec::with_capacity(by_unit.len());
    for (unit, (n, lo, hi)) in by_unit {
        let span = hi - lo;
        if n < 2 || span <= 0.0 {
            return Err(Error::UndefinedArrivalSpan {
                unit: unit.to_string(),
            });
        }
        out.push(ArrivalEstimate {
            unit: unit.to_string(),
            psi_hat: n as f64 / span,
            n,
            span,
        });
    }
    out.sort_by(|a, b| a.psi_hat.total_cmp(&b.psi_hat));
    Ok(out)
}
