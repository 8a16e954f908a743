use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{parse_date, DataError, RawSeries, RegionDataset};

/// Largest fraction of days that may be corrected before a series is
/// rejected.
pub const MAX_CORRECTED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Deaths,
    Cases,
    Tests,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Deaths => "deaths",
            Field::Cases => "cases",
            Field::Tests => "tests",
        })
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deaths" => Ok(Field::Deaths),
            "cases" => Ok(Field::Cases),
            "tests" => Ok(Field::Tests),
            other => Err(format!("unknown field {other:?}")),
        }
    }
}

/// One changed daily value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub date: NaiveDate,
    pub field: Field,
    pub before: i64,
    pub after: i64,
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.date.format("%Y-%m-%d"), self.field, self.before, self.after)
    }
}

/// Clamps negative increments to zero, moving the deficit to the previous
/// day until it is absorbed. A deficit that reaches the first day is
/// dropped. Returns the corrected series and the changed days.
fn clamp_backward(values: &[i64]) -> (Vec<u64>, Vec<(usize, i64, i64)>) {
    let mut v = values.to_vec();
    for d in (0..v.len()).rev() {
        if v[d] < 0 {
            let deficit = v[d];
            v[d] = 0;
            if d > 0 {
                v[d - 1] += deficit;
            }
        }
    }
    let changes = values
        .iter()
        .zip(&v)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(d, (&a, &b))| (d, a, b))
        .collect();
    (v.into_iter().map(|x| x as u64).collect(), changes)
}

/// Produces a nonnegative dataset with a correction log. Surveys and periods
/// are left empty.
pub fn clean(raw: &RawSeries) -> Result<RegionDataset, DataError> {
    let mut log = Vec::new();
    let mut corrected_days = BTreeSet::new();
    let mut run = |field: Field, values: &[i64]| {
        let (out, changes) = clamp_backward(values);
        for (d, before, after) in changes {
            corrected_days.insert(d);
            log.push(Correction {
                date: raw.first_day + Duration::days(d as i64),
                field,
                before,
                after,
            });
        }
        out
    };
    let deaths = run(Field::Deaths, &raw.deaths);
    let cases = run(Field::Cases, &raw.cases);
    let tests = run(Field::Tests, &raw.tests);
    let days = raw.days();
    if corrected_days.len() as f64 > MAX_CORRECTED_FRACTION * days as f64 {
        return Err(DataError::TooManyCorrections {
            region: raw.region_code.clone(),
            corrected: corrected_days.len(),
            days,
        });
    }
    if tests.iter().all(|&t| t == 0) && cases.iter().any(|&c| c > 0) {
        return Err(DataError::CasesWithoutTests {
            region: raw.region_code.clone(),
        });
    }
    log.sort_by_key(|c| (c.date, c.field));
    Ok(RegionDataset {
        region_code: raw.region_code.clone(),
        population: raw.population,
        first_day: raw.first_day,
        deaths,
        cases,
        tests,
        surveys: Vec::new(),
        periods: Vec::new(),
        cleaning_log: log,
        gap_days: raw.gap_days.clone(),
    })
}

pub fn format_cleaning_log(log: &[Correction]) -> String {
    log.iter().map(|c| format!("{c}\n")).collect()
}

/// Reads the output of [`format_cleaning_log`]; blank lines are skipped.
pub fn parse_cleaning_log(text: &str) -> Result<Vec<Correction>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| DataError::CleaningLog { line: line_no, message };
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", parts.len())));
        }
        let date = parse_date(parts[0]).ok_or_else(|| err(format!("bad date {:?}", parts[0])))?;
        let field = parts[1].parse::<Field>().map_err(err)?;
        let before = parts[2].parse::<i64>().map_err(|e| err(e.to_string()))?;
        let after = parts[3].parse::<i64>().map_err(|e| err(e.to_string()))?;
        out.push(Correction {
            date,
            field,
            before,
            after,
        });
    }
    Ok(out)
}
