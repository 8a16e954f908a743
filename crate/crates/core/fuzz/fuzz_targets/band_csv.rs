//! Summary and projection tables share one quantile-band layout.
#![no_main]
use libfuzzer_sys::fuzz_target;
use sirprev::analysis::{read_projection_csv, read_summary_csv, write_projection_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok((first, bands)) = read_summary_csv(data) {
        for band in bands.values() {
            assert!(band.values.iter().flatten().all(|q| q.len() == band.levels.len()));
        }
        if bands.is_empty() {
            assert!(first.is_none());
        }
    }
    let day = chrono::NaiveDate::from_ymd_opt(2021, 1, 7).unwrap();
    if let Ok(p) = read_projection_csv(data, "US", 1.0, day) {
        let mut buf = Vec::new();
        write_projection_csv(&mut buf, &p).unwrap();
        let back = read_projection_csv(&buf[..], "US", 1.0, day).unwrap();
        assert_eq!(back.days(), p.days());
    }
});
