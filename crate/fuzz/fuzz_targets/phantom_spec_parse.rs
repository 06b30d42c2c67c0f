#![no_main]
use libfuzzer_sys::fuzz_target;

use maskseg::phantom::PhantomSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = PhantomSpec::parse(text) {
        assert_eq!(PhantomSpec::parse(&spec.to_text()).expect("canonical spec parses"), spec);
    }
});
