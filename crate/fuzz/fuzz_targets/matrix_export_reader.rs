#![no_main]

use libfuzzer_sys::fuzz_target;
use igapw::export::CooMatrix;

fuzz_target!(|data: &[u8]| {
    // decoded dumps re-encode to the same bytes
    if let Ok(m) = CooMatrix::from_bytes(data) {
        assert_eq!(m.to_bytes(), data);
    }
});
