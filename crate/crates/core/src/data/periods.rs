use super::{cumulative, DataError, RegionDataset};
use crate::observation::TestPeriod;

pub const MIN_PERIOD_DAYS: usize = 7;

/// Consecutive `l`-day periods starting on the first day with any tests.
/// A trailing partial period is dropped.
pub fn make_periods(ds: &RegionDataset, l: usize) -> Result<Vec<TestPeriod>, DataError> {
    if l < MIN_PERIOD_DAYS {
        return Err(DataError::PeriodTooShort {
            got: l,
            min: MIN_PERIOD_DAYS,
        });
    }
    let Some(first) = ds.tests.iter().position(|&t| t > 0) else {
        return Ok(Vec::new());
    };
    let cum_cases = cumulative(&ds.cases);
    let cum_tests = cumulative(&ds.tests);
    let count = (ds.days() - first) / l;
    Ok((0..count)
        .map(|k| {
            let start = first + k * l;
            let end = start + l - 1;
            TestPeriod {
                start_day: start,
                end_day: end,
                cases: ds.cases[start..=end].iter().sum(),
                tests: ds.tests[start..=end].iter().sum(),
                cum_cases_end: cum_cases[end],
                cum_tests_end: cum_tests[end],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn ds(cases: Vec<u64>, tests: Vec<u64>) -> RegionDataset {
        RegionDataset {
            region_code: "IN".into(),
            population: 1e6,
            first_day: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            deaths: vec![0; cases.len()],
            cases,
            tests,
            surveys: vec![],
            periods: vec![],
            cleaning_log: vec![],
            gap_days: vec![],
        }
    }

    #[test]
    fn whole_and_partial_periods() {
        let p = make_periods(&ds(vec![1; 21], vec![5; 21]), 7).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!((p[2].start_day, p[2].end_day), (14, 20));
        let p = make_periods(&ds(vec![1; 20], vec![5; 20]), 7).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].end_day, 13);
    }

    #[test]
    fn starts_at_first_test_and_keeps_earlier_cumulatives() {
        let mut cases = vec![0u64; 17];
        cases[0] = 3;
        let mut tests = vec![2u64; 17];
        tests[0] = 0;
        tests[1] = 0;
        let p = make_periods(&ds(cases, tests), 7).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].start_day, 2);
        assert_eq!(p[0].cases, 0);
        assert_eq!(p[0].cum_cases_end, 3);
        assert_eq!(p[1].cum_tests_end, 28);
        assert_eq!(p[1].cum_tests_before(), 14);
    }

    #[test]
    fn rejects_short_periods_and_handles_no_tests() {
        assert!(matches!(
            make_periods(&ds(vec![0; 30], vec![1; 30]), 6),
            Err(DataError::PeriodTooShort { got: 6, .. })
        ));
        assert!(make_periods(&ds(vec![0; 30], vec![0; 30]), 7).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn sums_match_brute_force(
            rows in prop::collection::vec((0u64..50, 0u64..500), 1..120),
            l in 7usize..15,
        ) {
            let (cases, tests): (Vec<u64>, Vec<u64>) = rows.into_iter().unzip();
            let d = ds(cases.clone(), tests.clone());
            let periods = make_periods(&d, l).unwrap();
            let mut total = 0;
            for p in &periods {
                prop_assert_eq!(p.len(), l);
                let mut c = 0;
                let mut t = 0;
                for day in p.start_day..=p.end_day {
                    c += cases[day];
                    t += tests[day];
                }
                prop_assert_eq!(p.cases, c);
                prop_assert_eq!(p.tests, t);
                prop_assert_eq!(p.cum_tests_end, tests[..=p.end_day].iter().sum::<u64>());
                total += p.cases;
            }
            prop_assert!(total <= cases.iter().sum::<u64>());
            prop_assert!(periods.windows(2).all(|w| w[1].start_day == w[0].end_day + 1));
        }
    }
}
