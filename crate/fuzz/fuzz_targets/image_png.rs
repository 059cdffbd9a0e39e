#![no_main]

//! Colour and mask decoding of arbitrary bytes.

use libfuzzer_sys::fuzz_target;
use lsfuse::data_io::{decode_mask_png, decode_rgb_png, encode_mask_png, encode_rgb_png};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_rgb_png(data) {
        assert!(img.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
        let again = decode_rgb_png(&encode_rgb_png(&img)).expect("own encoding decodes");
        assert_eq!(again.dims(), img.dims());
    }
    if let Ok(mask) = decode_mask_png(data) {
        assert_eq!(
            decode_mask_png(&encode_mask_png(&mask)).expect("own encoding decodes"),
            mask
        );
    }
});
