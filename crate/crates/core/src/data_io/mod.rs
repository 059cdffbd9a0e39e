//! Loading and generating inputs: Velodyne scans, disparity PNGs,
//! calibration text, synthetic scenes and scene directories.

pub mod calib;
pub mod png_io;
pub mod scene;
pub mod synth;
pub mod velodyne;

pub use calib::{
    load_calibration, load_calibration_files, parse_calibration, CalibrationSet, Mat3, Mat34, Mat4,
    IDENTITY4,
};
pub use png_io::{
    decode_disparity_png, decode_mask_png, decode_rgb_png, encode_disparity_png, encode_mask_png,
    encode_rgb_png, load_disparity_png, load_mask_png, load_rgb_png, save_disparity_png,
    save_label_png, save_mask_png, save_rgb_png,
};
pub use scene::{
    load_scene, parse_meta, save_scene, CorruptionRecord, ImagePair, LidarInput, SceneBundle,
};
pub use synth::{generate_synthetic_scene, synthetic_regions, SynthSpec};
pub use velodyne::{
    encode_velodyne, load_velodyne_scan, parse_velodyne, write_velodyne_scan, RawScan,
};
