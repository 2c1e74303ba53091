#![no_main]

use libfuzzer_sys::fuzz_target;
use ucgan::training::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = decode(data) {
        let bytes = encode(&state).expect("decoded states encode");
        assert_eq!(decode(&bytes).expect("re-decode").iteration, state.iteration);
    }
});
