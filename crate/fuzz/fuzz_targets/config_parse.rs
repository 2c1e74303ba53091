#![no_main]

use libfuzzer_sys::fuzz_target;
use ucgan_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = RunConfig::from_toml(text, &[]) {
            let _ = config.validate();
        }
    }
});
