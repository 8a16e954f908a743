//! Daily state time series: ingestion, cleaning, model horizon, test periods
//! and survey metadata.
//!
//! Calendar dates exist only at the file boundary; a [`RegionDataset`] indexes
//! days from its `first_day`.

mod clean;
mod ingest;
mod periods;
mod populations;
mod surveys;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelData;
use crate::observation::{SurveyObservation, TestPeriod};

pub use clean::{clean, format_cleaning_log, parse_cleaning_log, Correction, Field, MAX_CORRECTED_FRACTION};
pub use ingest::{ingest_timeseries, ingest_timeseries_path, parse_date, write_daily_csv, RawSeries, Schema};
pub use periods::{make_periods, MIN_PERIOD_DAYS};
pub use populations::PopulationTable;
pub use surveys::{attach_surveys, bundled_surveys, load_survey_config, load_survey_path, SurveyRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("row {row}: {message}")]
    Malformed { row: u64, message: String },
    #[error("header does not match a known schema; missing columns: {}", missing.join(", "))]
    MissingColumns { missing: Vec<String> },
    #[error("row {row}: cannot parse date {value:?}")]
    BadDate { row: u64, value: String },
    #[error("row {row}: cannot parse {column} value {value:?}")]
    BadNumber { row: u64, column: String, value: String },
    #[error("row {row}: unknown region code {code:?}")]
    UnknownRegion { row: u64, code: String },
    #[error("row {row}: duplicate date {date} for region {region}")]
    DuplicateDate { row: u64, region: String, date: NaiveDate },
    #[error("no data rows")]
    Empty,
    #[error("{region}: {corrected} of {days} days need correction, more than the allowed fraction")]
    TooManyCorrections { region: String, corrected: usize, days: usize },
    #[error("{region}: cases are reported but no tests are")]
    CasesWithoutTests { region: String },
    #[error("period length must be at least {min} days, got {got}")]
    PeriodTooShort { got: usize, min: usize },
    #[error("{region}: no deaths reported, cannot place the model horizon")]
    NoDeaths { region: String },
    #[error("{region}: horizon is empty after cropping")]
    EmptyHorizon { region: String },
    #[error("survey {index}: {message}")]
    InvalidSurvey { index: usize, message: String },
    #[error("survey config: {0}")]
    SurveyConfig(String),
    #[error("cleaning log line {line}: {message}")]
    CleaningLog { line: usize, message: String },
    #[error("region {0} is not in the population table")]
    MissingPopulation(String),
}

/// Where day 0 of a region's model horizon falls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonRule {
    /// `days` before the first reported death.
    FirstDeathOffset { days: i64 },
    /// The first date in the input file.
    DatasetStart,
    Fixed { date: NaiveDate },
}

impl Default for HorizonRule {
    fn default() -> Self {
        HorizonRule::FirstDeathOffset { days: 30 }
    }
}

/// Cleaned daily series for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDataset {
    pub region_code: String,
    pub population: f64,
    pub first_day: NaiveDate,
    pub deaths: Vec<u64>,
    pub cases: Vec<u64>,
    pub tests: Vec<u64>,
    pub surveys: Vec<SurveyObservation>,
    pub periods: Vec<TestPeriod>,
    pub cleaning_log: Vec<Correction>,
    /// Days that were missing from the input and filled with zeros.
    pub gap_days: Vec<usize>,
}

impl RegionDataset {
    pub fn days(&self) -> usize {
        self.deaths.len()
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.first_day + Duration::days(day as i64)
    }

    pub fn day_of(&self, date: NaiveDate) -> i64 {
        (date - self.first_day).num_days()
    }

    pub fn last_day(&self) -> NaiveDate {
        self.date_of(self.days().saturating_sub(1))
    }

    pub fn cumulative_cases(&self) -> Vec<u64> {
        cumulative(&self.cases)
    }

    pub fn cumulative_tests(&self) -> Vec<u64> {
        cumulative(&self.tests)
    }

    /// Observations for the likelihood.
    pub fn model_data(&self) -> ModelData {
        ModelData {
            days: self.days(),
            population: self.population,
            deaths: self.deaths.clone(),
            surveys: self.surveys.clone(),
            periods: self.periods.clone(),
        }
    }

    /// Moves day 0 to the date chosen by `rule` and drops days after `end`.
    ///
    /// Cases and tests before the new day 0 are folded into it so that
    /// cumulative counts are unchanged; deaths before it are dropped. A start
    /// before the first reported day pads with zeros. Surveys and periods
    /// must be attached afterwards.
    pub fn apply_horizon(&self, rule: HorizonRule, end: Option<NaiveDate>) -> Result<RegionDataset, DataError> {
        let start = match rule {
            HorizonRule::DatasetStart => self.first_day,
            HorizonRule::Fixed { date } => date,
            HorizonRule::FirstDeathOffset { days } => {
                let first = self.deaths.iter().position(|&d| d > 0).ok_or_else(|| DataError::NoDeaths {
                    region: self.region_code.clone(),
                })?;
                self.date_of(first) - Duration::days(days)
            }
        };
        let offset = self.day_of(start);
        let mut out = RegionDataset {
            first_day: start,
            deaths: Vec::new(),
            cases: Vec::new(),
            tests: Vec::new(),
            surveys: Vec::new(),
            periods: Vec::new(),
            gap_days: Vec::new(),
            ..self.clone()
        };
        let end_day = match end {
            Some(e) => self.day_of(e).min(self.days() as i64 - 1),
            None => self.days() as i64 - 1,
        };
        if end_day < offset {
            return Err(DataError::EmptyHorizon {
                region: self.region_code.clone(),
            });
        }
        let (mut folded_cases, mut folded_tests) = (0u64, 0u64);
        for d in 0..self.days() as i64 {
            if d < offset {
                folded_cases += self.cases[d as usize];
                folded_tests += self.tests[d as usize];
            }
        }
        for d in offset..=end_day {
            if d < 0 {
                out.deaths.push(0);
                out.cases.push(0);
                out.tests.push(0);
            } else {
                let i = d as usize;
                out.deaths.push(self.deaths[i]);
                out.cases.push(self.cases[i]);
                out.tests.push(self.tests[i]);
                if self.gap_days.contains(&i) {
                    out.gap_days.push((d - offset) as usize);
                }
            }
        }
        out.cases[0] += folded_cases;
        out.tests[0] += folded_tests;
        Ok(out)
    }
}

pub(crate) fn cumulative(xs: &[u64]) -> Vec<u64> {
    let mut acc = 0u64;
    xs.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}
