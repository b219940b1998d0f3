//! Observed follow-up records and their CSV form.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::lifetable::{Demographics, Sex, DAYS_PER_YEAR};

/// One patient: follow-up time `T = min(E, P, C)` in years and `status = 1`
/// when the follow-up ended in a death.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub time: f64,
    pub status: bool,
    pub demo: Demographics,
    pub group: Option<String>,
}

impl PatientRecord {
    pub fn new(time: f64, status: bool, demo: Demographics) -> Result<Self> {
        if !(time > 0.0 && time.is_finite()) {
            return Err(Error::input(format!("follow-up time must be positive, got {time}")));
        }
        Ok(Self {
            time,
            status,
            demo,
            group: None,
        })
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    records: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(records: Vec<PatientRecord>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| !(r.time > 0.0 && r.time.is_finite())) {
            return Err(Error::input(format!("follow-up time must be positive, got {}", r.time)));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_time(&self) -> f64 {
        self.records.iter().map(|r| r.time).fold(0.0, f64::max)
    }

    pub fn events(&self) -> usize {
        self.records.iter().filter(|r| r.status).count()
    }

    /// Records at the given indices, repeats allowed.
    pub fn select(&self, indices: &[usize]) -> Cohort {
        Cohort {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Splits by group label, in label order. Fails if any record is unlabeled.
    pub fn by_group(&self) -> Result<BTreeMap<String, Cohort>> {
        let mut out: BTreeMap<String, Cohort> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let g = r
                .group
                .as_ref()
                .ok_or_else(|| Error::input(format!("record {} has no group label", i + 1)))?;
            out.entry(g.clone()).or_default().records.push(r.clone());
        }
        Ok(out)
    }
}

impl FromIterator<PatientRecord> for Cohort {
    fn from_iter<I: IntoIterator<Item = PatientRecord>>(iter: I) -> Self {
        Cohort {
            records: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeUnit {
    #[default]
    Days,
    Years,
}

impl TimeUnit {
    pub fn to_years(self, x: f64) -> f64 {
        match self {
            TimeUnit::Days => x / DAYS_PER_YEAR,
            TimeUnit::Years => x,
        }
    }
}

impl FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "days" => Ok(TimeUnit::Days),
            "years" => Ok(TimeUnit::Years),
            other => Err(Error::parse(format!("unknown time unit {other:?}"))),
        }
    }
}

/// Units of the `time` and `age` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CohortUnits {
    pub time: TimeUnit,
    pub age: TimeUnit,
}

impl Default for CohortUnits {
    fn default() -> Self {
        Self {
            time: TimeUnit::Days,
            age: TimeUnit::Years,
        }
    }
}

/// `YYYY-MM-DD` or a decimal year such as `1999.5`.
pub fn parse_date(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        let days_in_year = if NaiveDate::from_ymd_opt(d.year(), 2, 29).is_some() {
            366.0
        } else {
            365.0
        };
        return Ok(d.year() as f64 + d.ordinal0() as f64 / days_in_year);
    }
    match s.parse::<f64>() {
        Ok(y) if y.is_finite() => Ok(y),
        _ => Err(Error::parse(format!("cannot read date {s:?}"))),
    }
}

/// Reads `time,status,sex,age,diag_date[,group]`.
pub fn load_cohort_csv<R: BufRead>(source: R, units: CohortUnits) -> Result<Cohort> {
    let mut lines = source.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h?,
        None => return Err(Error::parse_at(1, "empty cohort file")),
    };
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let expected = ["time", "status", "sex", "age", "diag_date"];
    let has_group = cols.len() == 6 && cols[5] == "group";
    if cols.len() < 5 || cols[..5] != expected || (cols.len() == 6 && !has_group) || cols.len() > 6 {
        return Err(Error::parse_at(
            1,
            format!("expected header \"time,status,sex,age,diag_date[,group]\", got {header:?}"),
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(Error::parse_at(
                lineno,
                format!("expected {} fields, got {}", cols.len(), f.len()),
            ));
        }
        let at = |e: Error| Error::parse_at(lineno, e.to_string());
        let time: f64 = f[0]
            .parse()
            .map_err(|_| Error::parse_at(lineno, format!("bad time {:?}", f[0])))?;
        let status = match f[1] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse_at(lineno, format!("status must be 0 or 1, got {other:?}"))),
        };
        let sex: Sex = f[2].parse().map_err(at)?;
        let age: f64 = f[3]
            .parse()
            .map_err(|_| Error::parse_at(lineno, format!("bad age {:?}", f[3])))?;
        let diagnosis_year = parse_date(f[4]).map_err(at)?;
        let time = units.time.to_years(time);
        let age = units.age.to_years(age);
        if !(age >= 0.0 && age.is_finite()) {
            return Err(Error::parse_at(lineno, format!("age must be non-negative, got {age}")));
        }
        let mut rec = PatientRecord::new(
            time,
            status,
            Demographics {
                sex,
                age,
                diagnosis_year,
            },
        )
        .map_err(at)?;
        if has_group {
            rec.group = Some(f[5].to_string());
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::input("cohort has no records"));
    }
    Cohort::new(records)
}
