//! Arbitrary text through the experiment configuration parser.
//! Parsing must not panic; accepted configurations must survive a
//! round trip through their resolved text.

#![no_main]

use libfuzzer_sys::fuzz_target;

use igapw_cli::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(cfg) = ExperimentConfig::parse(&text) {
        let again = ExperimentConfig::parse(&cfg.to_text()).expect("resolved config reparses");
        assert_eq!(again.points(), cfg.points());
        assert_eq!(again.reference(), cfg.reference());
    }
});
