#![no_main]
use libfuzzer_sys::fuzz_target;

use maskseg::cli::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let canonical = cfg.to_text();
        let again = ExperimentConfig::parse(&canonical).expect("canonical form parses");
        assert_eq!(again.to_text(), canonical);
    }
});
