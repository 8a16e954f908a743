//! Files in an output directory and the manifest that indexes them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sirprev::analysis::{
    common_window, paths_from_draws, read_draws_csv, summarize, summarize_paths, summary_svg, write_draws_csv,
    write_summary, NationalAggregator, RegionPaths, RegionSummary,
};
use sirprev::config::RunConfig;
use sirprev::data::{format_cleaning_log, RegionDataset};
use sirprev::sampler::PosteriorDraws;

use crate::fit::RegionOutcome;
use crate::Status;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to audit or repeat a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the effective configuration as TOML.
    pub config_sha256: String,
    pub config: RunConfig,
    /// In fitting order.
    pub regions: Vec<RegionOutcome>,
    /// Code of the national aggregate, when one was written.
    pub national: Option<String>,
}

impl Manifest {
    pub fn fitted(&self) -> impl Iterator<Item = &RegionOutcome> {
        self.regions.iter().filter(|r| r.error.is_none())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub(crate) fn draws_file(code: &str) -> String {
    format!("{code}_draws.csv")
}

pub(crate) fn dataset_file(code: &str) -> String {
    format!("{code}_dataset.json")
}

fn file(dir: &Path, name: String) -> PathBuf {
    dir.join(name)
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn read_to_string(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(m)? + "\n";
    write(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_to_string(&path).context("no fit found; run `sirprev fit` first")?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// Writes the summary tables and plot of `s`.
pub(crate) fn write_summary_files(dir: &Path, s: &RegionSummary) -> anyhow::Result<()> {
    write_summary(dir, s)?;
    write(&file(dir, format!("{}_summary.svg", s.region_code)), summary_svg(s).as_bytes())
}

/// Draws, dataset, cleaning log, summary and plot of one fitted region.
/// Returns the SHA-256 of the draws file and the summary.
pub(crate) fn write_region(dir: &Path, ds: &RegionDataset, draws: &PosteriorDraws) -> anyhow::Result<(String, RegionSummary)> {
    let code = &ds.region_code;
    let mut buf = Vec::new();
    write_draws_csv(&mut buf, draws)?;
    write(&file(dir, draws_file(code)), &buf)?;
    let json = serde_json::to_string_pretty(ds)? + "\n";
    write(&file(dir, dataset_file(code)), json.as_bytes())?;
    write(
        &file(dir, format!("{code}_cleaning.log")),
        format_cleaning_log(&ds.cleaning_log).as_bytes(),
    )?;
    let summary = summarize(draws, ds)?;
    write_summary_files(dir, &summary)?;
    Ok((sha256_hex(&buf), summary))
}

pub(crate) fn read_dataset(dir: &Path, code: &str) -> anyhow::Result<RegionDataset> {
    let path = file(dir, dataset_file(code));
    serde_json::from_str(&read_to_string(&path)?).with_context(|| format!("cannot parse {}", path.display()))
}

pub(crate) fn read_draws(dir: &Path, code: &str) -> anyhow::Result<PosteriorDraws> {
    let path = file(dir, draws_file(code));
    let f = std::fs::File::open(&path).with_context(|| format!("cannot read {}", path.display()))?;
    read_draws_csv(std::io::BufReader::new(f)).with_context(|| format!("cannot parse {}", path.display()))
}

/// Trajectories of every draw of a saved region.
pub(crate) fn region_paths(dir: &Path, code: &str) -> anyhow::Result<RegionPaths> {
    let ds = read_dataset(dir, code)?;
    let draws = read_draws(dir, code)?;
    Ok(paths_from_draws(&draws, &ds)?)
}

/// Per-draw sum of the saved regions on their common dates, reading one
/// region at a time.
pub(crate) fn national_paths(dir: &Path, code: &str, regions: &[&RegionOutcome]) -> anyhow::Result<RegionPaths> {
    if regions.is_empty() {
        bail!("no fitted regions to aggregate");
    }
    let mut spans = Vec::with_capacity(regions.len());
    for r in regions {
        let ds = read_dataset(dir, &r.code)?;
        spans.push((ds.first_day, ds.last_day()));
    }
    let (first, days) = common_window(&spans)?;
    let draws = regions.iter().map(|r| r.draws).min().unwrap_or(0);
    let mut agg = NationalAggregator::new(code, first, days, draws);
    for r in regions {
        agg.add(&region_paths(dir, &r.code)?)?;
    }
    Ok(agg.finish()?)
}

pub(crate) fn write_national(dir: &Path, code: &str, regions: &[&RegionOutcome]) -> anyhow::Result<RegionSummary> {
    let s = summarize_paths(&national_paths(dir, code, regions)?)?;
    write_summary_files(dir, &s)?;
    Ok(s)
}

/// One line per region for the terminal.
pub(crate) fn describe(s: &RegionSummary) -> String {
    let mut line = format!("{}: {} days from {}", s.region_code, s.days(), s.first_day);
    if let Some(i) = s.ifr {
        line += &format!(", IFR {:.4} [{:.4}, {:.4}]", i.median, i.lower, i.upper);
    }
    if s.days() > 0 {
        let d = s.last_day();
        if let Some(v) = s.cumulative_incidence.median(d) {
            line += &format!(", cumulative incidence {:.1}%", 100.0 * v);
        }
        if let Some(v) = s.undercount.median(d) {
            line += &format!(", undercount {v:.2}");
        }
    }
    if let Some(diag) = &s.diagnostics {
        if let Some(r) = diag.max_rhat {
            line += &format!(", max R-hat {r:.3}");
        }
        line += &format!(", divergences {:.2}%", 100.0 * diag.divergence_rate);
    }
    line
}

/// Recomputes the summaries of saved fits, and the national aggregate when
/// every region is included.
pub fn summarize_outputs(dir: &Path, only: Option<&[String]>) -> anyhow::Result<Status> {
    let manifest = read_manifest(dir)?;
    let wanted = |code: &str| only.is_none_or(|o| o.iter().any(|c| c.eq_ignore_ascii_case(code)));
    let regions: Vec<&RegionOutcome> = manifest.fitted().filter(|r| wanted(&r.code)).collect();
    if let Some(o) = only {
        for c in o {
            if !manifest.fitted().any(|r| r.code.eq_ignore_ascii_case(c)) {
                return Err(crate::input_error(format!("{c} has no saved fit in {}", dir.display())));
            }
        }
    }
    for r in &regions {
        let ds = read_dataset(dir, &r.code)?;
        let s = summarize(&read_draws(dir, &r.code)?, &ds)?;
        write_summary_files(dir, &s)?;
        println!("{}", describe(&s));
    }
    if let (Some(code), None) = (&manifest.national, only) {
        let s = write_national(dir, code, &regions)?;
        println!("{}", describe(&s));
    }
    Ok(Status::Success)
}
