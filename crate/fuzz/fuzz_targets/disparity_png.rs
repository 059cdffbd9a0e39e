#![no_main]

use libfuzzer_sys::fuzz_target;
use lsfuse::data_io::{decode_disparity_png, encode_disparity_png};

fuzz_target!(|data: &[u8]| {
    let Ok(map) = decode_disparity_png(data) else {
        return;
    };
    for (u, v, d) in map.valid_entries() {
        assert!(d > 0.0 && d.is_finite(), "({u},{v}) = {d}");
    }
    // Decoded maps sit on the 1/256 grid, so a second trip is lossless.
    let again = decode_disparity_png(&encode_disparity_png(&map)).expect("own encoding decodes");
    assert_eq!(again, map);
});
