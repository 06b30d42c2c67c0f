#![no_main]
use libfuzzer_sys::fuzz_target;

use maskseg::pipeline::mvol::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode(data) {
        assert_eq!(encode(&img), data);
    }
});
