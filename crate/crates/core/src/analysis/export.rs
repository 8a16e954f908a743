//! Comma-separated tables and JSON metadata for summaries, projections and
//! draws. Numbers are written in Rust's shortest round-trip form, so every
//! table reads back exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{AnalysisError, DiagnosticsSummary, Interval, ProjectionResult, QuantileBand, RegionSummary};
use crate::data::parse_date;
use crate::sampler::PosteriorDraws;

const NA: &str = "NA";

fn io_err(path: &Path, e: impl ToString) -> AnalysisError {
    AnalysisError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> AnalysisError {
    AnalysisError::Parse {
        line,
        message: message.into(),
    }
}

/// Writes `quantity,date,quantile,value` rows.
fn write_bands<W: Write>(writer: W, first_day: NaiveDate, bands: &[(&str, &QuantileBand)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["quantity", "date", "quantile", "value"])?;
    for (name, band) in bands {
        for (d, q) in band.values.iter().enumerate() {
            let date = (first_day + Duration::days(d as i64)).format("%Y-%m-%d").to_string();
            for (j, level) in band.levels.iter().enumerate() {
                let value = match q {
                    Some(q) => q[j].to_string(),
                    None => NA.to_string(),
                };
                w.write_record([*name, date.as_str(), level.to_string().as_str(), value.as_str()])?;
            }
        }
    }
    w.flush()
}

type Cells = BTreeMap<NaiveDate, Vec<(f64, Option<f64>)>>;

/// Reads a band table back; also returns the first date seen, if any.
fn read_bands<R: Read>(reader: R) -> Result<(Option<NaiveDate>, BTreeMap<String, QuantileBand>), AnalysisError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["quantity", "date", "quantile", "value"] {
        return Err(parse_err(1, "expected header quantity,date,quantile,value"));
    }
    let mut cells: BTreeMap<String, Cells> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(parse_err(line, "expected 4 fields"));
        }
        let date = parse_date(&rec[1]).ok_or_else(|| parse_err(line, format!("bad date {:?}", &rec[1])))?;
        let level: f64 = rec[2]
            .parse()
            .ok()
            .filter(|l: &f64| (0.0..=1.0).contains(l))
            .ok_or_else(|| parse_err(line, format!("bad quantile {:?}", &rec[2])))?;
        let value = if &rec[3] == NA {
            None
        } else {
            Some(
                rec[3]
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("bad value {:?}", &rec[3])))?,
            )
        };
        cells
            .entry(rec[0].to_string())
            .or_default()
            .entry(date)
            .or_default()
            .push((level, value));
    }
    let first = cells.values().filter_map(|c| c.keys().next().copied()).min();
    let mut out = BTreeMap::new();
    for (name, by_date) in cells {
        let start = *by_date.keys().next().expect("non-empty by construction");
        if Some(start) != first {
            return Err(parse_err(0, format!("{name} does not start on the first date")));
        }
        let levels: Vec<f64> = by_date[&start].iter().map(|c| c.0).collect();
        let mut values = Vec::with_capacity(by_date.len());
        for (k, (date, row)) in by_date.iter().enumerate() {
            if *date != start + Duration::days(k as i64) {
                return Err(parse_err(0, format!("{name} skips a date before {date}")));
            }
            if row.iter().map(|c| c.0).collect::<Vec<_>>() != levels {
                return Err(parse_err(0, format!("{name} on {date} has different quantiles")));
            }
            let defined: Option<Vec<f64>> = row.iter().map(|c| c.1).collect();
            if defined.is_none() && row.iter().any(|c| c.1.is_some()) {
                return Err(parse_err(0, format!("{name} on {date} is partly undefined")));
            }
            values.push(defined);
        }
        out.insert(name, QuantileBand { levels, values });
    }
    Ok((first, out))
}

const SUMMARY_QUANTITIES: [&str; 4] = ["daily_infections", "cumulative_incidence", "r_t", "undercount"];

pub fn write_summary_csv<W: Write>(writer: W, s: &RegionSummary) -> std::io::Result<()> {
    write_bands(
        writer,
        s.first_day,
        &[
            (SUMMARY_QUANTITIES[0], &s.daily_infections),
            (SUMMARY_QUANTITIES[1], &s.cumulative_incidence),
            (SUMMARY_QUANTITIES[2], &s.r_t),
            (SUMMARY_QUANTITIES[3], &s.undercount),
        ],
    )
}

/// Bands by quantity name and the first date of the table.
pub fn read_summary_csv<R: Read>(reader: R) -> Result<(Option<NaiveDate>, BTreeMap<String, QuantileBand>), AnalysisError> {
    read_bands(reader)
}

/// Everything in a [`RegionSummary`] that is not a daily band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryMetadata {
    pub region_code: String,
    pub first_day: NaiveDate,
    pub days: usize,
    pub population: f64,
    pub ifr: Option<Interval>,
    pub parameters: BTreeMap<String, Interval>,
    pub parameter_order: Vec<String>,
    pub diagnostics: Option<DiagnosticsSummary>,
    pub levels: Vec<f64>,
}

impl SummaryMetadata {
    pub fn from_summary(s: &RegionSummary) -> Self {
        SummaryMetadata {
            region_code: s.region_code.clone(),
            first_day: s.first_day,
            days: s.days(),
            population: s.population,
            ifr: s.ifr,
            parameters: s.parameters.iter().cloned().collect(),
            parameter_order: s.parameters.iter().map(|p| p.0.clone()).collect(),
            diagnostics: s.diagnostics.clone(),
            levels: s.daily_infections.levels.clone(),
        }
    }
}

/// Writes `<code>_summary.csv` and `<code>_summary.json` into `dir`.
pub fn write_summary(dir: &Path, s: &RegionSummary) -> Result<(), AnalysisError> {
    let csv_path = dir.join(format!("{}_summary.csv", s.region_code));
    let f = std::fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    write_summary_csv(std::io::BufWriter::new(f), s).map_err(|e| io_err(&csv_path, e))?;
    let json_path = dir.join(format!("{}_summary.json", s.region_code));
    let text = serde_json::to_string_pretty(&SummaryMetadata::from_summary(s)).map_err(|e| io_err(&json_path, e))?;
    std::fs::write(&json_path, text + "\n").map_err(|e| io_err(&json_path, e))
}

pub fn read_summary(dir: &Path, code: &str) -> Result<RegionSummary, AnalysisError> {
    let json_path = dir.join(format!("{code}_summary.json"));
    let text = std::fs::read_to_string(&json_path).map_err(|e| io_err(&json_path, e))?;
    let meta: SummaryMetadata = serde_json::from_str(&text).map_err(|e| io_err(&json_path, e))?;
    let csv_path = dir.join(format!("{code}_summary.csv"));
    let f = std::fs::File::open(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let (first, mut bands) = read_bands(std::io::BufReader::new(f))?;
    if meta.days > 0 && first != Some(meta.first_day) {
        return Err(parse_err(0, "table and metadata disagree on the first date"));
    }
    let mut take = |name: &str| -> Result<QuantileBand, AnalysisError> {
        match bands.remove(name) {
            Some(b) if b.days() == meta.days => Ok(b),
            Some(_) => Err(parse_err(0, format!("{name} has the wrong number of days"))),
            None if meta.days == 0 => Ok(QuantileBand {
                levels: meta.levels.clone(),
                values: Vec::new(),
            }),
            None => Err(parse_err(0, format!("missing quantity {name}"))),
        }
    };
    let daily_infections = take(SUMMARY_QUANTITIES[0])?;
    let cumulative_incidence = take(SUMMARY_QUANTITIES[1])?;
    let r_t = take(SUMMARY_QUANTITIES[2])?;
    let undercount = take(SUMMARY_QUANTITIES[3])?;
    let parameters = meta
        .parameter_order
        .iter()
        .map(|n| {
            meta.parameters
                .get(n)
                .map(|i| (n.clone(), *i))
                .ok_or_else(|| parse_err(0, format!("missing parameter {n}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(RegionSummary {
        region_code: meta.region_code,
        first_day: meta.first_day,
        population: meta.population,
        ifr: meta.ifr,
        parameters,
        diagnostics: meta.diagnostics,
        daily_infections,
        cumulative_incidence,
        r_t,
        undercount,
    })
}

const PROJECTION_QUANTITIES: [&str; 4] = ["daily_infections", "cumulative_immunity", "added_infections", "vaccinated"];

pub fn write_projection_csv<W: Write>(writer: W, p: &ProjectionResult) -> std::io::Result<()> {
    write_bands(
        writer,
        p.first_day,
        &[
            (PROJECTION_QUANTITIES[0], &p.daily_infections),
            (PROJECTION_QUANTITIES[1], &p.cumulative_immunity),
            (PROJECTION_QUANTITIES[2], &p.added_infections),
            (PROJECTION_QUANTITIES[3], &p.vaccinated),
        ],
    )
}

/// Rebuilds a projection from its table; `region_code`, `population` and
/// the first date (for an empty table) come from the caller.
pub fn read_projection_csv<R: Read>(
    reader: R,
    region_code: &str,
    population: f64,
    first_day: NaiveDate,
) -> Result<ProjectionResult, AnalysisError> {
    let (first, mut bands) = read_bands(reader)?;
    if first.is_some_and(|f| f != first_day) {
        return Err(parse_err(0, "projection table starts on an unexpected date"));
    }
    let days = bands.values().map(QuantileBand::days).max().unwrap_or(0);
    let mut take = |name: &str| match bands.remove(name) {
        Some(b) if b.days() == days => Ok(b),
        Some(_) => Err(parse_err(0, format!("{name} has the wrong number of days"))),
        None if days == 0 => Ok(QuantileBand {
            levels: super::PROJECTION_LEVELS.to_vec(),
            values: Vec::new(),
        }),
        None => Err(parse_err(0, format!("missing quantity {name}"))),
    };
    Ok(ProjectionResult {
        region_code: region_code.to_string(),
        first_day,
        population,
        daily_infections: take(PROJECTION_QUANTITIES[0])?,
        cumulative_immunity: take(PROJECTION_QUANTITIES[1])?,
        added_infections: take(PROJECTION_QUANTITIES[2])?,
        vaccinated: take(PROJECTION_QUANTITIES[3])?,
    })
}

const DRAW_COLUMNS: [&str; 4] = ["chain", "draw", "divergent", "tree_depth"];

/// One row per draw: chain, draw index within the chain, divergence flag,
/// tree depth, then every parameter.
pub fn write_draws_csv<W: Write>(writer: W, draws: &PosteriorDraws) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = DRAW_COLUMNS.to_vec();
    header.extend(draws.param_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let mut seen = vec![0usize; draws.chains()];
    for (i, row) in draws.rows().enumerate() {
        let c = draws.chain_id[i];
        let mut rec = vec![
            c.to_string(),
            seen[c].to_string(),
            u8::from(draws.divergent[i]).to_string(),
            draws.tree_depth[i].to_string(),
        ];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
        seen[c] += 1;
    }
    w.flush()
}

/// Reads a draws table. Diagnostics are recomputed; step sizes and metrics
/// are not part of the table and come back empty.
pub fn read_draws_csv<R: Read>(reader: R) -> Result<PosteriorDraws, AnalysisError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < DRAW_COLUMNS.len() || header.iter().take(4).collect::<Vec<_>>() != DRAW_COLUMNS {
        return Err(parse_err(1, "expected header chain,draw,divergent,tree_depth,..."));
    }
    let param_names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
    let mut out = PosteriorDraws {
        param_names,
        draws: Vec::new(),
        chain_id: Vec::new(),
        divergent: Vec::new(),
        tree_depth: Vec::new(),
        rhat: Vec::new(),
        ess: Vec::new(),
        step_size: Vec::new(),
        inv_metric: Vec::new(),
        mean_accept: Vec::new(),
    };
    let mut next_draw: Vec<usize> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let int = |k: usize| -> Result<usize, AnalysisError> {
            rec[k]
                .parse()
                .map_err(|_| parse_err(line, format!("bad {} {:?}", DRAW_COLUMNS[k], &rec[k])))
        };
        let chain = int(0)?;
        let draw = int(1)?;
        if chain > next_draw.len() || (chain + 1 < next_draw.len()) {
            return Err(parse_err(line, "chains must appear in order"));
        }
        if chain == next_draw.len() {
            next_draw.push(0);
        }
        if draw != next_draw[chain] {
            return Err(parse_err(line, format!("expected draw {}", next_draw[chain])));
        }
        next_draw[chain] += 1;
        let divergent = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("bad divergent flag {other:?}"))),
        };
        let depth: u32 = rec[3]
            .parse()
            .map_err(|_| parse_err(line, format!("bad tree_depth {:?}", &rec[3])))?;
        for v in rec.iter().skip(4) {
            out.draws
                .push(v.parse().map_err(|_| parse_err(line, format!("bad value {v:?}")))?);
        }
        out.chain_id.push(chain);
        out.divergent.push(divergent);
        out.tree_depth.push(depth);
    }
    out.refresh_diagnostics();
    Ok(out)
}
