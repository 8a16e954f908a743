use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};

use super::{DataError, PopulationTable, RegionDataset};

/// Column layout of an input time-series file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// `date,region,deaths_daily,cases_daily,tests_daily`
    Daily,
    /// `date,state,death,positive,totalTestResults`, differenced on ingest.
    Cumulative,
}

impl Schema {
    fn columns(self) -> [&'static str; 5] {
        match self {
            Schema::Daily => ["date", "region", "deaths_daily", "cases_daily", "tests_daily"],
            Schema::Cumulative => ["date", "state", "death", "positive", "totaltestresults"],
        }
    }
}

/// Daily increments for one region before cleaning. Increments may be
/// negative where the source revised a cumulative count downwards.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub region_code: String,
    pub population: f64,
    pub first_day: NaiveDate,
    pub deaths: Vec<i64>,
    pub cases: Vec<i64>,
    pub tests: Vec<i64>,
    pub gap_days: Vec<usize>,
}

impl RawSeries {
    pub fn days(&self) -> usize {
        self.deaths.len()
    }

    pub fn from_dataset(ds: &RegionDataset) -> Self {
        let conv = |v: &[u64]| v.iter().map(|&x| x as i64).collect();
        RawSeries {
            region_code: ds.region_code.clone(),
            population: ds.population,
            first_day: ds.first_day,
            deaths: conv(&ds.deaths),
            cases: conv(&ds.cases),
            tests: conv(&ds.tests),
            gap_days: ds.gap_days.clone(),
        }
    }
}

/// Accepts `2020-03-01` and `20200301`.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%Y%m%d"))
        .ok()
}

fn parse_count(s: &str) -> Option<Option<i64>> {
    let s = s.trim();
    if s.is_empty() {
        return Some(None);
    }
    if let Ok(v) = s.parse::<i64>() {
        return Some(Some(v));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Some(Some(v as i64)),
        _ => None,
    }
}

fn detect(headers: &csv::StringRecord) -> Result<(Schema, [usize; 5]), DataError> {
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let mut best_missing: Option<Vec<String>> = None;
    for schema in [Schema::Daily, Schema::Cumulative] {
        let mut idx = [0usize; 5];
        let mut missing = Vec::new();
        for (k, col) in schema.columns().iter().enumerate() {
            match names.iter().position(|n| n == col) {
                Some(i) => idx[k] = i,
                None => missing.push((*col).to_string()),
            }
        }
        if missing.is_empty() {
            return Ok((schema, idx));
        }
        if best_missing.as_ref().is_none_or(|m| missing.len() < m.len()) {
            best_missing = Some(missing);
        }
    }
    Err(DataError::MissingColumns {
        missing: best_missing.unwrap_or_default(),
    })
}

type Row = (NaiveDate, [Option<i64>; 3]);

/// Reads a time-series file in either schema. Regions come back ordered by
/// code; days missing inside a region's date range are filled with zero
/// increments and listed in `gap_days`.
pub fn ingest_timeseries<R: Read>(reader: R, populations: &PopulationTable) -> Result<Vec<RawSeries>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Malformed {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let (schema, idx) = detect(&headers)?;
    let mut by_region: BTreeMap<String, BTreeMap<NaiveDate, [Option<i64>; 3]>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Malformed {
            row: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let date = parse_date(field(0)).ok_or_else(|| DataError::BadDate {
            row,
            value: field(0).to_string(),
        })?;
        let code = field(1).to_ascii_uppercase();
        if populations.get(&code).is_none() {
            return Err(DataError::UnknownRegion { row, code });
        }
        let mut values = [None; 3];
        for k in 0..3 {
            values[k] = parse_count(field(k + 2)).ok_or_else(|| DataError::BadNumber {
                row,
                column: headers.get(idx[k + 2]).unwrap_or("").to_string(),
                value: field(k + 2).to_string(),
            })?;
        }
        let series = by_region.entry(code.clone()).or_default();
        if series.insert(date, values).is_some() {
            return Err(DataError::DuplicateDate { row, region: code, date });
        }
    }
    if by_region.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(by_region
        .into_iter()
        .map(|(code, rows)| {
            let population = populations.get(&code).unwrap_or(f64::NAN);
            assemble(code, population, rows.into_iter().collect(), schema)
        })
        .collect())
}

pub fn ingest_timeseries_path(path: &Path, populations: &PopulationTable) -> Result<Vec<RawSeries>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ingest_timeseries(std::io::BufReader::new(file), populations)
}

fn assemble(code: String, population: f64, rows: Vec<Row>, schema: Schema) -> RawSeries {
    let first = rows[0].0;
    let last = rows[rows.len() - 1].0;
    let days = (last - first).num_days() as usize + 1;
    let mut out = RawSeries {
        region_code: code,
        population,
        first_day: first,
        deaths: vec![0; days],
        cases: vec![0; days],
        tests: vec![0; days],
        gap_days: Vec::new(),
    };
    let mut present = vec![false; days];
    for (date, _) in &rows {
        present[(*date - first).num_days() as usize] = true;
    }
    out.gap_days = (0..days).filter(|&d| !present[d]).collect();
    match schema {
        Schema::Daily => {
            for (date, v) in rows {
                let d = (date - first).num_days() as usize;
                out.deaths[d] = v[0].unwrap_or(0);
                out.cases[d] = v[1].unwrap_or(0);
                out.tests[d] = v[2].unwrap_or(0);
            }
        }
        Schema::Cumulative => {
            // Blank cumulative cells and gap days repeat the last known value.
            let mut cum = vec![[0i64; 3]; days];
            let mut last_seen = [0i64; 3];
            let mut it = rows.into_iter().peekable();
            for (d, slot) in cum.iter_mut().enumerate() {
                if let Some((date, v)) = it.peek() {
                    if (*date - first).num_days() as usize == d {
                        for k in 0..3 {
                            if let Some(x) = v[k] {
                                last_seen[k] = x;
                            }
                        }
                        it.next();
                    }
                }
                *slot = last_seen;
            }
            let mut prev = [0i64; 3];
            for d in 0..days {
                out.deaths[d] = cum[d][0] - prev[0];
                out.cases[d] = cum[d][1] - prev[1];
                out.tests[d] = cum[d][2] - prev[2];
                prev = cum[d];
            }
        }
    }
    out
}

/// Writes series in the daily schema, one row per region and day.
pub fn write_daily_csv<W: Write>(writer: W, series: &[RawSeries]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(Schema::Daily.columns())?;
    for s in series {
        for d in 0..s.days() {
            let date = s.first_day + Duration::days(d as i64);
            w.write_record([
                date.format("%Y-%m-%d").to_string(),
                s.region_code.clone(),
                s.deaths[d].to_string(),
                s.cases[d].to_string(),
                s.tests[d].to_string(),
            ])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PopulationTable {
        PopulationTable::bundled()
    }

    fn ingest(text: &str) -> Result<Vec<RawSeries>, DataError> {
        ingest_timeseries(text.as_bytes(), &table())
    }

    #[test]
    fn three_daily_rows() {
        let s = ingest(
            "date,region,deaths_daily,cases_daily,tests_daily\n\
             2020-03-01,IN,0,1,10\n2020-03-02,IN,1,2,20\n2020-03-03,IN,0,3,30\n",
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].deaths, vec![0, 1, 0]);
        assert_eq!(s[0].cases, vec![1, 2, 3]);
        assert_eq!(s[0].tests, vec![10, 20, 30]);
        assert!(s[0].gap_days.is_empty());
        assert_eq!(s[0].population, 6_732_219.0);
    }

    #[test]
    fn gap_day_is_zero_filled_and_flagged() {
        let s = ingest(
            "date,region,deaths_daily,cases_daily,tests_daily\n\
             2020-03-01,IN,0,1,10\n2020-03-03,IN,2,3,30\n",
        )
        .unwrap();
        assert_eq!(s[0].cases, vec![1, 0, 3]);
        assert_eq!(s[0].gap_days, vec![1]);
    }

    #[test]
    fn cumulative_schema_is_differenced() {
        // Unsorted like the archived feed, with a blank and a revision.
        let s = ingest(
            "date,state,positive,death,totalTestResults,hospitalized\n\
             20200303,OH,7,,40,\n20200301,OH,1,0,10,\n20200302,oh,5,1,45,3\n",
        )
        .unwrap();
        assert_eq!(s[0].region_code, "OH");
        assert_eq!(s[0].cases, vec![1, 4, 2]);
        assert_eq!(s[0].deaths, vec![0, 1, 0]);
        assert_eq!(s[0].tests, vec![10, 35, -5]);
    }

    #[test]
    fn cumulative_gap_carries_forward() {
        let s = ingest(
            "date,state,death,positive,totalTestResults\n\
             2020-03-01,IN,0,1,10\n2020-03-04,IN,0,4,40\n",
        )
        .unwrap();
        assert_eq!(s[0].cases, vec![1, 0, 0, 3]);
        assert_eq!(s[0].gap_days, vec![1, 2]);
    }

    #[test]
    fn errors_carry_row_numbers() {
        let hdr = "date,region,deaths_daily,cases_daily,tests_daily\n";
        let e = ingest(&format!("{hdr}2020-03-01,IN,0,1,10\n2020-03-0x,IN,0,1,10\n")).unwrap_err();
        assert_eq!(
            e,
            DataError::BadDate {
                row: 3,
                value: "2020-03-0x".into()
            }
        );
        let e = ingest(&format!("{hdr}2020-03-01,ZZ,0,1,10\n")).unwrap_err();
        assert!(matches!(e, DataError::UnknownRegion { row: 2, .. }));
        let e = ingest(&format!("{hdr}2020-03-01,IN,0,1,10\n2020-03-01,IN,0,1,10\n")).unwrap_err();
        assert!(matches!(e, DataError::DuplicateDate { row: 3, .. }));
        let e = ingest(&format!("{hdr}2020-03-01,IN,0,one,10\n")).unwrap_err();
        assert!(matches!(e, DataError::BadNumber { row: 2, .. }));
        let e = ingest("date,region,deaths_daily,cases_daily\n2020-03-01,IN,0,1\n").unwrap_err();
        assert_eq!(
            e,
            DataError::MissingColumns {
                missing: vec!["tests_daily".into()]
            }
        );
        assert_eq!(ingest(hdr).unwrap_err(), DataError::Empty);
    }

    #[test]
    fn regions_are_split_and_ordered() {
        let s = ingest(
            "date,region,deaths_daily,cases_daily,tests_daily\n\
             2020-03-01,OH,0,1,10\n2020-03-01,IN,0,2,20\n2020-03-02,IN,0,3,30\n",
        )
        .unwrap();
        let codes: Vec<_> = s.iter().map(|r| r.region_code.as_str()).collect();
        assert_eq!(codes, ["IN", "OH"]);
        assert_eq!(s[0].days(), 2);
        assert_eq!(s[1].days(), 1);
    }

    #[test]
    fn daily_round_trip_is_lossless() {
        let text = "date,region,deaths_daily,cases_daily,tests_daily\n\
                    2020-03-01,IN,0,1,10\n2020-03-02,IN,-1,2,20\n2020-03-01,OH,3,4,5\n";
        let s = ingest(text).unwrap();
        let mut buf = Vec::new();
        write_daily_csv(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), text);
        assert_eq!(ingest_timeseries(buf.as_slice(), &table()).unwrap(), s);
    }

    #[test]
    fn date_formats() {
        let d = NaiveDate::from_ymd_opt(2020, 4, 25).unwrap();
        assert_eq!(parse_date("2020-04-25"), Some(d));
        assert_eq!(parse_date(" 20200425 "), Some(d));
        assert_eq!(parse_date("04/25/2020"), None);
    }
}
