//! Scene bundles and their on-disk directory layout.
//!
//! ```text
//! scene/
//!   left.png  right.png            colour pair
//!   calib.txt                      labelled projection / extrinsic matrices
//!   scan.bin                       raw Velodyne sweep, or
//!   lidar_l.png  lidar_r.png       pre-projected 16-bit disparity maps
//!   gt.png  gt_r.png               optional ground truth (left / right)
//!   corruption_l.png corruption_r.png   planted-outlier masks (synthetic only)
//!   render_valid.png               right pixels with a left-image source (synthetic only)
//!   meta.txt                       key=value scene description
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::data_io::calib::{load_calibration, CalibrationSet};
use crate::data_io::png_io::{
    load_disparity_png, load_mask_png, load_rgb_png, save_disparity_png, save_mask_png,
    save_rgb_png,
};
use crate::data_io::synth::SynthSpec;
use crate::data_io::velodyne::{load_velodyne_scan, write_velodyne_scan, RawScan};
use crate::error::{Error, Result};
use crate::geometry::{project_lidar, Side, SparseDisparityMap};
use crate::grid::Grid;
use crate::image_ops::RgbImage;

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub left: RgbImage,
    pub right: RgbImage,
}

impl ImagePair {
    pub fn new(left: RgbImage, right: RgbImage) -> Result<Self> {
        if !left.same_dims(&right) {
            return Err(Error::Shape(format!(
                "stereo pair dimensions differ: {:?} vs {:?}",
                left.dims(),
                right.dims()
            )));
        }
        if left.width() < 16 || left.height() < 16 {
            return Err(Error::InvalidInput(format!(
                "images must be at least 16x16, got {:?}",
                left.dims()
            )));
        }
        Ok(Self { left, right })
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }

    pub fn image(&self, side: Side) -> &RgbImage {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LidarInput {
    Scan(RawScan),
    Projected {
        left: SparseDisparityMap,
        right: SparseDisparityMap,
    },
}

/// Per-pixel flags marking planted outliers in each view.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionRecord {
    pub left: Grid<bool>,
    pub right: Grid<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub pair: ImagePair,
    pub lidar: LidarInput,
    pub calib: CalibrationSet,
    pub gt: Option<SparseDisparityMap>,
    pub gt_right: Option<SparseDisparityMap>,
    pub corruption: Option<CorruptionRecord>,
    pub render_valid: Option<Grid<bool>>,
    /// Present for generated scenes.
    pub synth: Option<SynthSpec>,
}

impl SceneBundle {
    pub fn is_synthetic(&self) -> bool {
        self.synth.is_some()
    }

    /// Left and right sparse Lidar disparities, projecting the raw scan if needed.
    pub fn lidar_maps(&self) -> (SparseDisparityMap, SparseDisparityMap) {
        match &self.lidar {
            LidarInput::Projected { left, right } => (left.clone(), right.clone()),
            LidarInput::Scan(scan) => {
                let (w, h) = (self.pair.width(), self.pair.height());
                (
                    project_lidar(scan, &self.calib, w, h, Side::Left),
                    project_lidar(scan, &self.calib, w, h, Side::Right),
                )
            }
        }
    }

    /// Same scene with replaced pre-projected Lidar maps.
    pub fn with_lidar(&self, left: SparseDisparityMap, right: SparseDisparityMap) -> Self {
        Self {
            lidar: LidarInput::Projected { left, right },
            ..self.clone()
        }
    }

    fn check_dims(&self) -> Result<()> {
        let dims = self.pair.left.dims();
        let mut maps: Vec<(&str, (usize, usize))> = Vec::new();
        if let LidarInput::Projected { left, right } = &self.lidar {
            maps.push(("lidar_l", left.dims()));
            maps.push(("lidar_r", right.dims()));
        }
        if let Some(g) = &self.gt {
            maps.push(("gt", g.dims()));
        }
        if let Some(g) = &self.gt_right {
            maps.push(("gt_r", g.dims()));
        }
        if let Some(c) = &self.corruption {
            maps.push(("corruption_l", c.left.dims()));
            maps.push(("corruption_r", c.right.dims()));
        }
        if let Some(r) = &self.render_valid {
            maps.push(("render_valid", r.dims()));
        }
        for (name, d) in maps {
            if d != dims {
                return Err(Error::Shape(format!(
                    "{name} is {d:?}, images are {dims:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_meta(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::SceneParse(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::SceneParse(format!("line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn save_scene(dir: impl AsRef<Path>, scene: &SceneBundle) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_rgb_png(dir.join("left.png"), &scene.pair.left)?;
    save_rgb_png(dir.join("right.png"), &scene.pair.right)?;
    let calib_path = dir.join("calib.txt");
    std::fs::write(&calib_path, scene.calib.to_text()).map_err(|e| Error::io(&calib_path, e))?;
    match &scene.lidar {
        LidarInput::Scan(scan) => write_velodyne_scan(dir.join("scan.bin"), scan)?,
        LidarInput::Projected { left, right } => {
            save_disparity_png(dir.join("lidar_l.png"), left)?;
            save_disparity_png(dir.join("lidar_r.png"), right)?;
        }
    }
    if let Some(gt) = &scene.gt {
        save_disparity_png(dir.join("gt.png"), gt)?;
    }
    if let Some(gt) = &scene.gt_right {
        save_disparity_png(dir.join("gt_r.png"), gt)?;
    }
    if let Some(rec) = &scene.corruption {
        save_mask_png(dir.join("corruption_l.png"), &rec.left)?;
        save_mask_png(dir.join("corruption_r.png"), &rec.right)?;
    }
    if let Some(rv) = &scene.render_valid {
        save_mask_png(dir.join("render_valid.png"), rv)?;
    }
    let meta = match &scene.synth {
        Some(spec) => format!("kind=synthetic\n{}", spec.to_meta()),
        None => "kind=real\n".to_string(),
    };
    let meta_path = dir.join("meta.txt");
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

fn optional<'a, T>(path: &'a Path, load: impl FnOnce(&'a Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let pair = ImagePair::new(
        load_rgb_png(dir.join("left.png"))?,
        load_rgb_png(dir.join("right.png"))?,
    )?;
    let calib = load_calibration(dir.join("calib.txt"))?;
    let (ll, lr) = (dir.join("lidar_l.png"), dir.join("lidar_r.png"));
    let lidar = if ll.exists() && lr.exists() {
        LidarInput::Projected {
            left: load_disparity_png(&ll)?,
            right: load_disparity_png(&lr)?,
        }
    } else if dir.join("scan.bin").exists() {
        LidarInput::Scan(load_velodyne_scan(dir.join("scan.bin"))?)
    } else {
        return Err(Error::SceneParse(format!(
            "{}: neither scan.bin nor lidar_l.png/lidar_r.png present",
            dir.display()
        )));
    };
    let meta_path = dir.join("meta.txt");
    let meta = match optional(&meta_path, |p| {
        std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
    })? {
        Some(text) => parse_meta(&text)?,
        None => BTreeMap::new(),
    };
    let synth = match meta.get("kind").map(String::as_str) {
        Some("synthetic") => Some(SynthSpec::from_meta(&meta)?),
        Some("real") | None => None,
        Some(other) => return Err(Error::SceneParse(format!("unknown scene kind {other:?}"))),
    };
    let corruption = if synth.is_some() {
        match (
            optional(&dir.join("corruption_l.png"), load_mask_png)?,
            optional(&dir.join("corruption_r.png"), load_mask_png)?,
        ) {
            (Some(left), Some(right)) => Some(CorruptionRecord { left, right }),
            _ => None,
        }
    } else {
        None
    };
    let scene = SceneBundle {
        pair,
        lidar,
        calib,
        gt: optional(&dir.join("gt.png"), load_disparity_png)?,
        gt_right: optional(&dir.join("gt_r.png"), load_disparity_png)?,
        corruption,
        render_valid: optional(&dir.join("render_valid.png"), load_mask_png)?,
        synth,
    };
    scene.check_dims()?;
    Ok(scene)
}
