//! Stereo rig + Lidar calibration in KITTI text conventions.
//!
//! Each line is `LABEL: v0 v1 ...` (colon optional). Recognised labels:
//!
//! | role                 | labels                                   | values |
//! |----------------------|------------------------------------------|--------|
//! | left projection      | `P2`, `P_rect_02`, `P_l`                 | 12     |
//! | right projection     | `P3`, `P_rect_03`, `P_r`                 | 12     |
//! | Lidar -> camera      | `Tr`, `Tr_velo_to_cam`, or `R` + `T`     | 12/16, or 9 + 3 |
//! | rectifying rotation  | `R0_rect`, `R_rect_00` (optional)        | 9      |
//!
//! Lines with unknown labels or non-numeric payloads (e.g. `calib_time`) are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Side;

pub type Mat3 = [[f64; 3]; 3];
pub type Mat34 = [[f64; 4]; 3];
pub type Mat4 = [[f64; 4]; 4];

pub const IDENTITY4: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

const ROTATION_TOL: f64 = 1e-6;

const LEFT_LABELS: &[&str] = &["P2", "P_rect_02", "P_l"];
const RIGHT_LABELS: &[&str] = &["P3", "P_rect_03", "P_r"];
const EXTRINSIC_LABELS: &[&str] = &["Tr", "Tr_velo_to_cam", "Tr_velo_cam"];
const RECT_LABELS: &[&str] = &["R0_rect", "R_rect_00", "R_rect"];

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSet {
    pub k_left: Mat3,
    pub k_right: Mat3,
    pub p_left: Mat34,
    pub p_right: Mat34,
    /// Lidar -> (rectified) left-camera frame.
    pub extrinsic: Mat4,
    /// Meters.
    pub baseline: f64,
    /// Pixels.
    pub focal: f64,
}

impl CalibrationSet {
    /// Derives intrinsics, focal length and baseline from rectified projections.
    ///
    /// `f = P_l(0,0)`, `B = (P_l(0,3) - P_r(0,3)) / f`.
    pub fn from_projections(p_left: Mat34, p_right: Mat34, extrinsic: Mat4) -> Result<Self> {
        let all_finite = p_left
            .iter()
            .chain(p_right.iter())
            .flatten()
            .all(|x| x.is_finite())
            && extrinsic.iter().flatten().all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::Calibration("non-finite matrix entry".into()));
        }
        let focal = p_left[0][0];
        if !(focal > 0.0) {
            return Err(Error::Calibration(format!(
                "focal length {focal} is not positive"
            )));
        }
        let baseline = (p_left[0][3] - p_right[0][3]) / focal;
        if !(baseline > 0.0) {
            return Err(Error::Calibration(format!(
                "derived baseline {baseline} is not positive"
            )));
        }
        check_rigid(&extrinsic)?;
        Ok(Self {
            k_left: intrinsics(&p_left),
            k_right: intrinsics(&p_right),
            p_left,
            p_right,
            extrinsic,
            baseline,
            focal,
        })
    }

    pub fn projection(&self, side: Side) -> &Mat34 {
        match side {
            Side::Left => &self.p_left,
            Side::Right => &self.p_right,
        }
    }

    /// Rectified pinhole rig with identity extrinsic, principal point at the image center.
    pub fn synthetic(width: usize, height: usize, focal: f64, baseline: f64) -> Result<Self> {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let p_left = [
            [focal, 0.0, cx, 0.0],
            [0.0, focal, cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let mut p_right = p_left;
        p_right[0][3] = -focal * baseline;
        Self::from_projections(p_left, p_right, IDENTITY4)
    }

    pub fn to_text(&self) -> String {
        let fmt = |vals: Vec<f64>| {
            vals.iter()
                .map(|v| format!("{v:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let flat34 = |m: &Mat34| m.iter().flatten().copied().collect::<Vec<_>>();
        let tr: Vec<f64> = self.extrinsic[..3].iter().flatten().copied().collect();
        format!(
            "P2: {}\nP3: {}\nTr: {}\n",
            fmt(flat34(&self.p_left)),
            fmt(flat34(&self.p_right)),
            fmt(tr)
        )
    }
}

fn intrinsics(p: &Mat34) -> Mat3 {
    [
        [p[0][0], p[0][1], p[0][2]],
        [p[1][0], p[1][1], p[1][2]],
        [p[2][0], p[2][1], p[2][2]],
    ]
}

fn check_rigid(t: &Mat4) -> Result<()> {
    let r = |i: usize, j: usize| t[i][j];
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r(k, i) * r(k, j)).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > ROTATION_TOL {
                return Err(Error::Calibration(
                    "extrinsic rotation is not orthonormal".into(),
                ));
            }
        }
    }
    let det = r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1))
        - r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0))
        + r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::Calibration(format!(
            "extrinsic rotation has det {det}"
        )));
    }
    if t[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::Calibration(
            "extrinsic bottom row must be [0 0 0 1]".into(),
        ));
    }
    Ok(())
}

fn parse_entries(text: &str) -> BTreeMap<String, Vec<f64>> {
    let mut entries = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, rest) = match line.split_once(':') {
            Some((l, r)) => (l.trim(), r),
            None => match line.split_once(char::is_whitespace) {
                Some((l, r)) => (l.trim(), r),
                None => continue,
            },
        };
        let values: std::result::Result<Vec<f64>, _> =
            rest.split_whitespace().map(str::parse::<f64>).collect();
        if let Ok(values) = values {
            entries.insert(label.to_string(), values);
        }
    }
    entries
}

fn lookup<'a>(entries: &'a BTreeMap<String, Vec<f64>>, labels: &[&str]) -> Option<&'a Vec<f64>> {
    labels.iter().find_map(|l| entries.get(*l))
}

fn expect_len(what: &str, values: &[f64], n: usize) -> Result<()> {
    if values.len() == n {
        Ok(())
    } else {
        Err(Error::CalibrationParse(format!(
            "{what}: expected {n} values, found {}",
            values.len()
        )))
    }
}

fn mat34(values: &[f64]) -> Mat34 {
    let mut m = [[0.0; 4]; 3];
    for (i, v) in values.iter().take(12).enumerate() {
        m[i / 4][i % 4] = *v;
    }
    m
}

fn extrinsic_from(entries: &BTreeMap<String, Vec<f64>>) -> Result<Mat4> {
    let mut t = IDENTITY4;
    if let Some(values) = lookup(entries, EXTRINSIC_LABELS) {
        if values.len() != 12 && values.len() != 16 {
            return Err(Error::CalibrationParse(format!(
                "extrinsic: expected 12 or 16 values, found {}",
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            t[i / 4][i % 4] = *v;
        }
    } else {
        let (Some(r), Some(tr)) = (entries.get("R"), entries.get("T")) else {
            return Err(Error::CalibrationParse(
                "missing Lidar extrinsic (Tr / Tr_velo_to_cam or R + T)".into(),
            ));
        };
        expect_len("R", r, 9)?;
        expect_len("T", tr, 3)?;
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = r[3 * i + j];
            }
            t[i][3] = tr[i];
        }
    }
    if let Some(rect) = lookup(entries, RECT_LABELS) {
        expect_len("rectifying rotation", rect, 9)?;
        let mut r4 = IDENTITY4;
        for i in 0..3 {
            for j in 0..3 {
                r4[i][j] = rect[3 * i + j];
            }
        }
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (0..4).map(|k| r4[i][k] * t[k][j]).sum();
            }
        }
        t = out;
    }
    Ok(t)
}

pub fn parse_calibration(text: &str) -> Result<CalibrationSet> {
    let entries = parse_entries(text);
    let p_left = lookup(&entries, LEFT_LABELS)
        .ok_or_else(|| Error::CalibrationParse("missing left projection (P2)".into()))?;
    expect_len("left projection", p_left, 12)?;
    let p_right = lookup(&entries, RIGHT_LABELS)
        .ok_or_else(|| Error::CalibrationParse("missing right projection (P3)".into()))?;
    expect_len("right projection", p_right, 12)?;
    let t = extrinsic_from(&entries)?;
    CalibrationSet::from_projections(mat34(p_left), mat34(p_right), t)
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<CalibrationSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calibration(&text)
}

/// Concatenates several calibration files (KITTI raw splits cam-to-cam and velo-to-cam).
pub fn load_calibration_files(paths: &[impl AsRef<Path>]) -> Result<CalibrationSet> {
    let mut text = String::new();
    for p in paths {
        let p = p.as_ref();
        text.push_str(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?);
        text.push('\n');
    }
    parse_calibration(&text)
}
