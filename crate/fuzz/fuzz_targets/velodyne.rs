#![no_main]

//! Scan parsing never panics, and anything it accepts re-encodes to the same bytes.

use libfuzzer_sys::fuzz_target;
use lsfuse::data_io::{encode_velodyne, parse_velodyne};

fuzz_target!(|data: &[u8]| {
    if let Ok(scan) = parse_velodyne(data) {
        assert_eq!(scan.points.len(), scan.reflectance.len());
        assert_eq!(encode_velodyne(&scan), data);
    }
});
