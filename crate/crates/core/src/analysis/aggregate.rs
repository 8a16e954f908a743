use chrono::{Duration, NaiveDate};

use super::{AnalysisError, RegionPaths};
use crate::dynamics::{SirState, SirTrajectory};

/// The dates every region covers: from the latest first day to the
/// earliest last day, as `(first_day, days)`.
pub fn common_window(spans: &[(NaiveDate, NaiveDate)]) -> Result<(NaiveDate, usize), AnalysisError> {
    let first = spans.iter().map(|s| s.0).max().ok_or(AnalysisError::NoDraws)?;
    let last = spans.iter().map(|s| s.1).min().ok_or(AnalysisError::NoDraws)?;
    if last < first {
        return Err(AnalysisError::DateMismatch);
    }
    Ok((first, (last - first).num_days() as usize + 1))
}

/// Sums regions one at a time, so only the running total and the region
/// being added need to be in memory.
#[derive(Debug, Clone)]
pub struct NationalAggregator {
    total: RegionPaths,
}

impl NationalAggregator {
    pub fn new(code: &str, first_day: NaiveDate, days: usize, draws: usize) -> Self {
        let zero = SirState::new(0.0, 0.0, 0.0);
        let empty = SirTrajectory {
            states: vec![zero; days + 1],
            nu: vec![0.0; days],
            vaccinated: vec![0.0; days],
            population: 0.0,
        };
        NationalAggregator {
            total: RegionPaths {
                region_code: code.to_string(),
                first_day,
                population: 0.0,
                cum_cases: vec![0; days],
                trajectories: vec![empty; draws],
                r_t: Vec::new(),
                gamma: Vec::new(),
            },
        }
    }

    /// Adds a region on the common dates. Regions with more draws are
    /// thinned to evenly spaced draws.
    pub fn add(&mut self, region: &RegionPaths) -> Result<(), AnalysisError> {
        let m = self.total.n_draws();
        let days = self.total.days();
        let offset = (self.total.first_day - region.first_day).num_days();
        let last = self.total.first_day + Duration::days(days as i64 - 1);
        if offset < 0 || offset as usize + days > region.days() {
            return Err(AnalysisError::WindowNotCovered {
                region: region.region_code.clone(),
                first: self.total.first_day,
                last,
            });
        }
        if region.n_draws() < m || m == 0 {
            return Err(AnalysisError::NoDraws);
        }
        let o = offset as usize;
        let n_r = region.n_draws();
        for (j, acc) in self.total.trajectories.iter_mut().enumerate() {
            let src = &region.trajectories[j * n_r / m];
            for (d, st) in acc.states.iter_mut().enumerate() {
                let s = &src.states[d + o];
                st.s += s.s;
                st.i += s.i;
                st.r += s.r;
            }
            for d in 0..days {
                acc.nu[d] += src.nu[d + o];
                acc.vaccinated[d] += src.vaccinated[d + o];
            }
            acc.population += src.population;
        }
        for d in 0..days {
            self.total.cum_cases[d] += region.cum_cases[d + o];
        }
        self.total.population += region.population;
        Ok(())
    }

    /// Summed paths with reproductive numbers from the effective rates.
    pub fn finish(self) -> Result<RegionPaths, AnalysisError> {
        self.total.with_effective_rates()
    }
}

/// Per-draw sum of the regions' trajectories on their common dates.
pub fn aggregate_regions(code: &str, regions: &[RegionPaths]) -> Result<RegionPaths, AnalysisError> {
    let spans: Vec<_> = regions.iter().map(|r| (r.first_day, r.last_day())).collect();
    let (first, days) = common_window(&spans)?;
    let draws = regions.iter().map(RegionPaths::n_draws).min().unwrap_or(0);
    if draws == 0 {
        return Err(AnalysisError::NoDraws);
    }
    let mut agg = NationalAggregator::new(code, first, days, draws);
    for r in regions {
        agg.add(r)?;
    }
    agg.finish()
}

#[cfg(test)]
mod tests {
    use super::super::tests::{dataset, fake_draws, params};
    use super::super::{paths_from_draws, summarize_paths};
    use super::*;

    fn region(code: &str, first: NaiveDate, days: usize, draws: usize, b: f64) -> RegionPaths {
        let ps: Vec<_> = (0..draws).map(|k| params(days, 0.01, b + 0.001 * k as f64)).collect();
        let mut ds = dataset(days, 3);
        ds.region_code = code.into();
        ds.first_day = first;
        paths_from_draws(&fake_draws(&ps), &ds).unwrap()
    }

    fn day(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, d).unwrap()
    }

    #[test]
    fn single_region_is_identity() {
        let r = region("IN", day(3, 1), 30, 4, 0.3);
        let us = aggregate_regions("US", std::slice::from_ref(&r)).unwrap();
        assert_eq!(us.trajectories, r.trajectories);
        assert_eq!(us.cum_cases, r.cum_cases);
    }

    #[test]
    fn identical_regions_double() {
        let r = region("IN", day(3, 1), 30, 4, 0.3);
        let us = aggregate_regions("US", &[r.clone(), r.clone()]).unwrap();
        for (a, b) in us.trajectories.iter().zip(&r.trajectories) {
            for (x, y) in a.states.iter().zip(&b.states) {
                assert_eq!(x.i, 2.0 * y.i);
            }
        }
        // Doubling leaves the reproductive number alone.
        for (a, b) in us.r_t[0].iter().zip(&r.r_t[0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn three_regions_match_brute_force_on_the_common_window() {
        let a = region("IN", day(3, 1), 40, 6, 0.3);
        let b = region("OH", day(3, 5), 40, 4, 0.25);
        let c = region("IL", day(3, 3), 35, 5, 0.35);
        let us = aggregate_regions("US", &[a.clone(), b.clone(), c.clone()]).unwrap();
        assert_eq!(us.first_day, day(3, 5));
        assert_eq!(us.last_day(), day(4, 6));
        assert_eq!(us.n_draws(), 4);
        for j in 0..4 {
            for d in 0..us.days() {
                let date = us.date_of(d);
                let mut i = 0.0;
                let mut cases = 0;
                let mut weighted = 0.0;
                for r in [&a, &b, &c] {
                    let k = j * r.n_draws() / 4;
                    let rd = (date - r.first_day).num_days() as usize;
                    let st = r.trajectories[k].end_of_day(rd);
                    i += st.i;
                    weighted += st.ever_infected();
                    cases += r.cum_cases[rd];
                }
                let st = us.trajectories[j].end_of_day(d);
                assert!((st.i - i).abs() <= 1e-9 * i);
                assert_eq!(us.cum_cases[d], cases);
                let inc = st.ever_infected() / us.population;
                assert!((inc - weighted / us.population).abs() < 1e-12);
            }
        }
        let s = summarize_paths(&us).unwrap();
        assert!(s.daily_infections.is_monotone());
    }

    #[test]
    fn disjoint_dates_rejected() {
        let a = region("IN", day(3, 1), 10, 2, 0.3);
        let b = region("OH", day(4, 1), 10, 2, 0.3);
        assert_eq!(aggregate_regions("US", &[a, b]).unwrap_err(), AnalysisError::DateMismatch);
    }
}
