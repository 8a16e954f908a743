//! Acceptance criteria, one line each.
//!
//! Criteria 1 to 3 always run. Calibration needs `SIRPREV_ACCEPTANCE=full`
//! (several hours on one core). The archived-data criteria read a fit
//! directory named by `SIRPREV_ARCHIVED_FIT`, produced by `sirprev fit` and
//! `sirprev project` on the snapshot through 2021-01-06.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use sirprev::analysis::{read_projection_csv, read_summary};
use sirprev::synth::{desk_prior, SbcOptions};
use sirprev::validate::{
    conservation_check, convolution_check, delay_truncation_check, desk_sampler, effective_beta_check, gradient_check,
    recovery_checks, sampler_checks, sbc_checks, transform_check, Check,
};

const SEED: u64 = 20_210_106;
const SBC_REPLICATIONS: usize = 50;

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Option<Duration>,
}

enum Result {
    Ran(Vec<Check>, Duration),
    Skipped(String),
}

fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

fn timed(f: impl FnOnce() -> Vec<Check>) -> Result {
    let start = Instant::now();
    let checks = f();
    Result::Ran(checks, start.elapsed())
}

/// Prints the criterion line and its checks; returns false on failure.
fn report(c: &Criterion, r: Result) -> bool {
    match r {
        Result::Skipped(why) => {
            println!("SKIP {}. {}: {why}", c.id, c.name);
            true
        }
        Result::Ran(checks, took) => {
            let in_time = c.budget.is_none_or(|b| took <= b);
            let ok = in_time && checks.iter().all(Check::passed);
            let budget = c.budget.map(|b| format!(", budget {} s", b.as_secs())).unwrap_or_default();
            println!(
                "{} {}. {} ({:.1} s{budget})",
                if ok { "PASS" } else { "FAIL" },
                c.id,
                c.name,
                took.as_secs_f64()
            );
            for check in &checks {
                println!("    {check}");
            }
            if !in_time {
                println!("    over the time budget");
            }
            ok
        }
    }
}

fn within(name: &str, v: Option<f64>, lo: f64, hi: f64) -> Check {
    match v {
        Some(v) => Check::new(name, (lo..=hi).contains(&v), format!("{v:.4} in [{lo}, {hi}]")),
        None => Check::new(name, false, "not available".into()),
    }
}

fn archived_fit() -> Option<PathBuf> {
    std::env::var_os("SIRPREV_ARCHIVED_FIT").map(PathBuf::from)
}

fn reproduction(dir: &Path) -> Vec<Check> {
    let end = NaiveDate::from_ymd_opt(2021, 1, 6).expect("valid date");
    let mut out = Vec::new();
    for code in ["IN", "OH", "US"] {
        let s = match read_summary(dir, code) {
            Ok(s) => s,
            Err(e) => {
                out.push(Check::new(&format!("{code} summary"), false, e.to_string()));
                continue;
            }
        };
        let last = s.last_day();
        out.push(Check::new(
            &format!("{code} fit ends on {end}"),
            s.date_of(last) == end,
            s.date_of(last).to_string(),
        ));
        let incidence = s.cumulative_incidence.median(last);
        match code {
            "IN" => {
                out.push(within("IN median IFR", s.ifr.map(|i| i.median), 0.0061, 0.0088));
                out.push(within("IN median cumulative incidence", incidence, 0.171, 0.245));
            }
            "OH" => out.push(within("OH median IFR", s.ifr.map(|i| i.median), 0.0047, 0.0069)),
            _ => {
                out.push(within("US median cumulative incidence", incidence, 0.158, 0.172));
                out.push(within("US median undercount", s.undercount.median(last), 2.5, 2.7));
            }
        }
    }
    out
}

fn projection(dir: &Path) -> Vec<Check> {
    let fail = |e: String| vec![Check::new("US projection", false, e)];
    let s = match read_summary(dir, "US") {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    let first = s.date_of(s.days());
    let p = match std::fs::File::open(dir.join("US_projection.csv"))
        .map_err(|e| e.to_string())
        .and_then(|f| read_projection_csv(f, "US", s.population, first).map_err(|e| e.to_string()))
    {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    if p.days() == 0 {
        return fail("empty projection".into());
    }
    let august = NaiveDate::from_ymd_opt(2021, 8, 1).expect("valid date");
    let below = p.first_day_below(5000.0, 0.5);
    let last = p.days() - 1;
    let (q25, q75) = (p.added_infections.at(last, 0.25), p.added_infections.at(last, 0.75));
    vec![
        Check::new(
            "median daily infections below 5000 before August 2021",
            below.is_some_and(|d| d < august),
            below.map_or("never".into(), |d| d.to_string()),
        ),
        Check::new(
            "added infections interquartile range within 30 to 50 million",
            matches!((q25, q75), (Some(a), Some(b)) if a >= 30e6 && b <= 50e6),
            format!("{:.3e} to {:.3e}", q25.unwrap_or(f64::NAN), q75.unwrap_or(f64::NAN)),
        ),
    ]
}

fn main() -> ExitCode {
    let full = std::env::var("SIRPREV_ACCEPTANCE").is_ok_and(|v| v == "full");
    let archived = archived_fit();
    let mut ok = true;

    let c = Criterion {
        id: 1,
        name: "property suite",
        budget: minutes(10),
    };
    ok &= report(
        &c,
        timed(|| {
            vec![
                conservation_check(SEED),
                effective_beta_check(SEED),
                convolution_check(SEED),
                delay_truncation_check(),
                gradient_check(SEED),
                transform_check(SEED),
            ]
        }),
    );

    let c = Criterion {
        id: 2,
        name: "sampler oracle",
        budget: minutes(10),
    };
    ok &= report(&c, timed(|| sampler_checks(SEED)));

    let c = Criterion {
        id: 3,
        name: "synthetic recovery",
        budget: minutes(30),
    };
    ok &= report(&c, timed(|| recovery_checks(&desk_sampler(SEED), SEED)));

    let c = Criterion {
        id: 4,
        name: "simulation-based calibration",
        budget: minutes(60),
    };
    let r = if full {
        let opts = SbcOptions {
            seed: SEED,
            ..SbcOptions::default()
        };
        timed(|| sbc_checks(&desk_prior(), SBC_REPLICATIONS, &desk_sampler(SEED), &opts))
    } else {
        Result::Skipped("set SIRPREV_ACCEPTANCE=full to run".into())
    };
    ok &= report(&c, r);

    let c = Criterion {
        id: 5,
        name: "archived data reproduction",
        budget: None,
    };
    let r = match &archived {
        Some(dir) => timed(|| reproduction(dir)),
        None => Result::Skipped("set SIRPREV_ARCHIVED_FIT to a fit of the 2021-01-06 snapshot".into()),
    };
    ok &= report(&c, r);

    let c = Criterion {
        id: 6,
        name: "vaccination projection",
        budget: None,
    };
    let r = match &archived {
        Some(dir) => timed(|| projection(dir)),
        None => Result::Skipped("needs the archived fit and its US projection".into()),
    };
    ok &= report(&c, r);

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
