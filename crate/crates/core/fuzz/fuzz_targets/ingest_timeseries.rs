//! Arbitrary CSV through ingestion and cleaning. Anything that ingests must
//! clean without panicking, and cleaned series must survive a trip through
//! the daily writer unchanged.
#![no_main]
use libfuzzer_sys::fuzz_target;
use sirprev::data::{clean, ingest_timeseries, write_daily_csv, PopulationTable, RawSeries};

fuzz_target!(|data: &[u8]| {
    let pops = PopulationTable::bundled();
    let Ok(series) = ingest_timeseries(data, &pops) else {
        return;
    };
    for raw in &series {
        assert_eq!(raw.deaths.len(), raw.cases.len());
        assert_eq!(raw.deaths.len(), raw.tests.len());
        let Ok(ds) = clean(raw) else {
            continue;
        };
        let mut buf = Vec::new();
        write_daily_csv(&mut buf, &[RawSeries::from_dataset(&ds)]).unwrap();
        let back = ingest_timeseries(&buf[..], &pops).unwrap();
        assert_eq!(back.len(), 1);
        let again = clean(&back[0]).unwrap();
        assert_eq!(again.deaths, ds.deaths);
        assert_eq!(again.cases, ds.cases);
        assert_eq!(again.tests, ds.tests);
        assert!(again.cleaning_log.is_empty());
    }
});
