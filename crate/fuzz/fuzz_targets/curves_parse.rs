#![no_main]

use libfuzzer_sys::fuzz_target;
use ucgan::eval::parse_curves;

fuzz_target!(|data: &[u8]| {
    let _ = parse_curves(data);
});
