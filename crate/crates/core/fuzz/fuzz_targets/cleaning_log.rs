#![no_main]
use libfuzzer_sys::fuzz_target;
use sirprev::data::{format_cleaning_log, parse_cleaning_log};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(log) = parse_cleaning_log(text) {
        let again = parse_cleaning_log(&format_cleaning_log(&log)).unwrap();
        assert_eq!(again, log);
    }
});
