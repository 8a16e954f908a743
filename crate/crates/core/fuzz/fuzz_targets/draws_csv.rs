//! Draw tables: whatever reads must write and read back to the same text.
#![no_main]
use libfuzzer_sys::fuzz_target;
use sirprev::analysis::{read_draws_csv, write_draws_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(draws) = read_draws_csv(data) else {
        return;
    };
    assert_eq!(draws.draws.len(), draws.n_draws() * draws.dim());
    let mut first = Vec::new();
    write_draws_csv(&mut first, &draws).unwrap();
    let back = read_draws_csv(&first[..]).unwrap();
    let mut second = Vec::new();
    write_draws_csv(&mut second, &back).unwrap();
    assert_eq!(first, second);
});
