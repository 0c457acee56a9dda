#![no_main]

use libfuzzer_sys::fuzz_target;
use igapw::cache::{decode, decode_header};

fuzz_target!(|data: &[u8]| {
    let _ = decode_header(data);
    if let Ok(t) = decode(data, None) {
        let w = (2 * t.extent + 1) as usize;
        assert_eq!(t.values.len(), w.pow(t.dim as u32));
    }
});
