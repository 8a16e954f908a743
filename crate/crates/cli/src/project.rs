use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use sirprev::analysis::{project, projection_svg, write_projection_csv, ProjectionResult, ProjectionScenario, RegionPaths};

use crate::fit::{region_seed, RegionOutcome};
use crate::input_error;
use crate::outputs::{national_paths, read_manifest, region_paths};

#[derive(Debug, Clone, Default, Args)]
pub struct ProjectArgs {
    /// Scenario file (TOML); the 2021 dose ramp to the end of August when absent
    #[arg(long, value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    /// Days to project past the last fitted day
    #[arg(long, value_name = "DAYS")]
    pub horizon: Option<usize>,
}

fn load_scenario(path: &Path) -> anyhow::Result<ProjectionScenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    toml::from_str(&text).map_err(|e| input_error(format!("{}: {}", path.display(), e.message())))
}

fn write_projection(dir: &Path, p: &ProjectionResult) -> anyhow::Result<()> {
    let csv = dir.join(format!("{}_projection.csv", p.region_code));
    let mut buf = Vec::new();
    write_projection_csv(&mut buf, p)?;
    std::fs::write(&csv, buf).with_context(|| format!("cannot write {}", csv.display()))?;
    let svg = dir.join(format!("{}_projection.svg", p.region_code));
    std::fs::write(&svg, projection_svg(p)).with_context(|| format!("cannot write {}", svg.display()))
}

fn describe(p: &ProjectionResult) -> String {
    let mut line = format!("{}: {} days from {}", p.region_code, p.days(), p.first_day);
    if p.days() > 0 {
        let last = p.days() - 1;
        if let (Some(lo), Some(hi)) = (p.added_infections.at(last, 0.25), p.added_infections.at(last, 0.75)) {
            line += &format!(", added infections {lo:.0} to {hi:.0} (interquartile)");
        }
        if let Some(d) = p.first_day_below(5000.0, 0.5) {
            line += &format!(", median below 5000 a day from {d}");
        }
    }
    line
}

/// Projects every saved region, and the national aggregate, writing a
/// quantile table and a plot for each.
pub fn project_outputs(
    dir: &Path,
    args: &ProjectArgs,
    only: Option<&[String]>,
    seed: Option<u64>,
) -> anyhow::Result<Vec<ProjectionResult>> {
    let manifest = read_manifest(dir)?;
    let base = args.scenario.as_deref().map(load_scenario).transpose()?;
    let seed = seed.unwrap_or(manifest.seed);
    let run = |paths: &RegionPaths| -> anyhow::Result<ProjectionResult> {
        let mut scenario = base.clone().unwrap_or_else(|| ProjectionScenario::us_2021(paths.last_day()));
        if let Some(h) = args.horizon {
            scenario.horizon = h;
        }
        let p = project(paths, &scenario, region_seed(seed, &paths.region_code)).map_err(|e| match e {
            sirprev::analysis::AnalysisError::InvalidScenario(_) | sirprev::analysis::AnalysisError::DoseScheduleTooShort { .. } => {
                input_error(e)
            }
            other => other.into(),
        })?;
        write_projection(dir, &p)?;
        println!("{}", describe(&p));
        Ok(p)
    };
    let fitted: Vec<&RegionOutcome> = manifest.fitted().collect();
    let mut results = Vec::new();
    match only {
        Some(codes) => {
            for c in codes {
                let code = c.to_uppercase();
                let paths = if manifest.national.as_deref() == Some(code.as_str()) {
                    national_paths(dir, &code, &fitted)?
                } else if fitted.iter().any(|r| r.code == code) {
                    region_paths(dir, &code)?
                } else {
                    return Err(input_error(format!("{code} has no saved fit in {}", dir.display())));
                };
                results.push(run(&paths)?);
            }
        }
        None => {
            for r in &fitted {
                results.push(run(&region_paths(dir, &r.code)?)?);
            }
            if let Some(code) = &manifest.national {
                results.push(run(&national_paths(dir, code, &fitted)?)?);
            }
        }
    }
    Ok(results)
}
