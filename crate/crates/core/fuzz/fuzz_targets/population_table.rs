#![no_main]
use libfuzzer_sys::fuzz_target;
use sirprev::data::PopulationTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = PopulationTable::from_csv(data) {
        for code in t.codes() {
            let n = t.get(code).unwrap();
            assert!(n.is_finite() && n > 0.0);
            let _ = t.name(code);
        }
    }
});
