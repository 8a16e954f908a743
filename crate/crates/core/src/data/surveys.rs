use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{DataError, RegionDataset};
use crate::observation::{SurveyKind, SurveyObservation};

const BUNDLED: &str = include_str!("../../data/surveys.json");

/// A prevalence survey as it appears in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyRecord {
    pub region: String,
    pub kind: SurveyKind,
    pub estimate: f64,
    pub sample_size: u64,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
}

impl SurveyRecord {
    fn validate(&self, index: usize) -> Result<(), DataError> {
        let bad = |message: &str| DataError::InvalidSurvey {
            index,
            message: message.to_string(),
        };
        if !(self.estimate > 0.0 && self.estimate < 1.0) {
            return Err(bad("estimate must lie strictly between 0 and 1"));
        }
        if self.sample_size == 0 {
            return Err(bad("sample size must be positive"));
        }
        if self.window_end < self.window_start {
            return Err(bad("window ends before it starts"));
        }
        Ok(())
    }
}

/// Parses a JSON array of survey records.
pub fn load_survey_config(text: &str) -> Result<Vec<SurveyRecord>, DataError> {
    let mut records: Vec<SurveyRecord> =
        serde_json::from_str(text).map_err(|e| DataError::SurveyConfig(e.to_string()))?;
    for (i, r) in records.iter_mut().enumerate() {
        r.region = r.region.trim().to_ascii_uppercase();
        r.validate(i)?;
    }
    Ok(records)
}

pub fn load_survey_path(path: &Path) -> Result<Vec<SurveyRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_survey_config(&text)
}

/// The Indiana and Ohio random-sample surveys.
pub fn bundled_surveys() -> Vec<SurveyRecord> {
    load_survey_config(BUNDLED).expect("bundled survey config is valid")
}

/// Converts the dataset region's surveys to day indices and stores them on
/// the dataset. A window outside the dataset's days is an error.
pub fn attach_surveys(ds: &mut RegionDataset, records: &[SurveyRecord]) -> Result<(), DataError> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.region != ds.region_code {
            continue;
        }
        let start = ds.day_of(r.window_start);
        let end = ds.day_of(r.window_end);
        if start < 0 || end >= ds.days() as i64 {
            return Err(DataError::InvalidSurvey {
                index: i,
                message: format!(
                    "window {}..{} is outside the {} horizon {}..{}",
                    r.window_start,
                    r.window_end,
                    ds.region_code,
                    ds.first_day,
                    ds.last_day()
                ),
            });
        }
        out.push(SurveyObservation {
            kind: r.kind,
            estimate: r.estimate,
            sample_size: r.sample_size,
            window_start: start as usize,
            window_end: end as usize,
        });
    }
    ds.surveys = out;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, d).unwrap()
    }

    #[test]
    fn bundled_values() {
        let s = bundled_surveys();
        assert_eq!(s.len(), 4);
        let in_viral = &s[0];
        assert_eq!(in_viral.region, "IN");
        assert_eq!(in_viral.kind, SurveyKind::Viral);
        assert_eq!((in_viral.estimate, in_viral.sample_size), (0.0174, 3605));
        assert_eq!((in_viral.window_start, in_viral.window_end), (date(4, 25), date(4, 29)));
        assert_eq!((s[1].estimate, s[1].sample_size), (0.0109, 3518));
        let oh: Vec<_> = s.iter().filter(|r| r.region == "OH").collect();
        assert_eq!(oh.len(), 2);
        assert!(oh.iter().all(|r| r.window_start == date(7, 9) && r.window_end == date(7, 28)));
        assert!(oh.iter().any(|r| r.kind == SurveyKind::Sero && r.estimate == 0.013 && r.sample_size == 667));
        assert!(oh.iter().any(|r| r.kind == SurveyKind::Viral && r.estimate == 0.009 && r.sample_size == 727));
    }

    #[test]
    fn attach_converts_to_day_indices() {
        let mut ds = RegionDataset {
            region_code: "IN".into(),
            population: 1e6,
            first_day: date(4, 1),
            deaths: vec![0; 60],
            cases: vec![0; 60],
            tests: vec![0; 60],
            surveys: vec![],
            periods: vec![],
            cleaning_log: vec![],
            gap_days: vec![],
        };
        attach_surveys(&mut ds, &bundled_surveys()).unwrap();
        assert_eq!(ds.surveys.len(), 2);
        assert_eq!((ds.surveys[0].window_start, ds.surveys[0].window_end), (24, 28));
        ds.first_day = date(4, 27);
        assert!(attach_surveys(&mut ds, &bundled_surveys()).is_err());
    }

    #[test]
    fn invalid_records_rejected() {
        let rec = |est: f64, n: u64, end: &str| {
            format!(
                r#"[{{"region":"in","kind":"sero","estimate":{est},"sample_size":{n},"window_start":"2020-04-25","window_end":"{end}"}}]"#
            )
        };
        assert_eq!(load_survey_config(&rec(0.1, 10, "2020-04-29")).unwrap()[0].region, "IN");
        assert!(load_survey_config(&rec(1.0, 10, "2020-04-29")).is_err());
        assert!(load_survey_config(&rec(0.1, 0, "2020-04-29")).is_err());
        assert!(load_survey_config(&rec(0.1, 10, "2020-04-20")).is_err());
        assert!(load_survey_config(r#"[{"region":"IN"}]"#).is_err());
    }
}
