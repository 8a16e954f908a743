#![no_main]
use libfuzzer_sys::fuzz_target;
use sirprev::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_toml_str(text) else {
        return;
    };
    let _ = cfg.validate();
    let toml = cfg.to_toml_string();
    let back = RunConfig::from_toml_str(&toml).unwrap();
    assert_eq!(back.to_toml_string(), toml);
});
