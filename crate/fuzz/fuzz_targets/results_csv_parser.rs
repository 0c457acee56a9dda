#![no_main]

use libfuzzer_sys::fuzz_target;

use igapw_cli::report::{analyse, parse_results};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_results(text) {
        let _ = analyse(&rows, Some(1.0));
    }
});
