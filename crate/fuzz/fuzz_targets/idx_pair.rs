#![no_main]

use libfuzzer_sys::fuzz_target;
use ucgan::data::{parse_idx, serialize_idx};

// First byte splits the input into an image file and a label file.
fuzz_target!(|data: &[u8]| {
    let Some((&cut, rest)) = data.split_first() else { return };
    let cut = (cut as usize * rest.len()) / 255;
    let (images, labels) = rest.split_at(cut);
    if let Ok(ds) = parse_idx(images, labels) {
        let (i, l) = serialize_idx(&ds).expect("parsed datasets serialise");
        let again = parse_idx(&i, &l).expect("serialised datasets parse");
        assert_eq!(again.labels(), ds.labels());
        assert_eq!(again.images(), ds.images());
    }
});
