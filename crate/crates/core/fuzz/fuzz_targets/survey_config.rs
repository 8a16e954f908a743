//! Survey JSON: parse, re-serialize, parse again.
#![no_main]
use libfuzzer_sys::fuzz_target;
use sirprev::data::load_survey_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(records) = load_survey_config(text) {
        for r in &records {
            assert!(r.estimate > 0.0 && r.estimate < 1.0);
            assert!(r.window_start <= r.window_end);
        }
        let json = serde_json::to_string(&records).unwrap();
        assert_eq!(load_survey_config(&json).unwrap(), records);
    }
});
