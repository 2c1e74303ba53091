#![no_main]

use libfuzzer_sys::fuzz_target;
use ucgan::eval::MetricReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(r) = MetricReport::from_kv(text) {
            let again = MetricReport::from_kv(&r.to_kv()).expect("round trip");
            assert_eq!(again.samples, r.samples);
        }
    }
});
