use std::path::Path;

use crate::error::{Error, Result};

const RECORD_BYTES: usize = 16;

/// Raw Lidar sweep in the sensor frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawScan {
    /// `(x, y, z)` in meters.
    pub points: Vec<[f32; 3]>,
    /// Per-point intensity. Carried through but unused by fusion.
    pub reflectance: Vec<f32>,
}

impl RawScan {
    /// Builds a scan from `(x, y, z, reflectance)` quadruples.
    pub fn from_points(records: Vec<[f32; 4]>) -> Self {
        let points = records.iter().map(|r| [r[0], r[1], r[2]]).collect();
        let reflectance = records.iter().map(|r| r[3]).collect();
        Self {
            points,
            reflectance,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Decodes consecutive little-endian `f32` quadruples `(x, y, z, reflectance)`.
pub fn parse_velodyne(bytes: &[u8]) -> Result<RawScan> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::MalformedScan(format!(
            "byte length {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut reflectance = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| {
            f32::from_le_bytes([rec[4 * k], rec[4 * k + 1], rec[4 * k + 2], rec[4 * k + 3]])
        };
        let p = [f(0), f(1), f(2)];
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::MalformedScan(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        points.push(p);
        reflectance.push(f(3));
    }
    Ok(RawScan {
        points,
        reflectance,
    })
}

pub fn encode_velodyne(scan: &RawScan) -> Vec<u8> {
    let mut out = Vec::with_capacity(scan.len() * RECORD_BYTES);
    for (p, r) in scan.points.iter().zip(&scan.reflectance) {
        for x in [p[0], p[1], p[2], *r] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn load_velodyne_scan(path: impl AsRef<Path>) -> Result<RawScan> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_velodyne(&bytes)
}

pub fn write_velodyne_scan(path: impl AsRef<Path>, scan: &RawScan) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_velodyne(scan)).map_err(|e| Error::io(path, e))
}
