#![no_main]

use libfuzzer_sys::fuzz_target;
use lsfuse::data_io::parse_calibration;

fuzz_target!(|text: &str| {
    let Ok(calib) = parse_calibration(text) else {
        return;
    };
    assert!(calib.focal > 0.0 && calib.baseline > 0.0);
    let again = parse_calibration(&calib.to_text()).expect("own output parses");
    assert!((again.focal - calib.focal).abs() <= 1e-9 * calib.focal);
    assert!((again.baseline - calib.baseline).abs() <= 1e-9 * calib.baseline);
});
