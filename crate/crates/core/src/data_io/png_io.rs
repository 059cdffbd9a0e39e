//! PNG codecs for disparity maps, masks, label maps and colour images.
//!
//! Disparity maps follow the KITTI convention: single-channel 16-bit,
//! `disparity = raw / 256`, raw value 0 marks an invalid pixel.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::geometry::SparseDisparityMap;
use crate::grid::Grid;
use crate::image_ops::RgbImage;

/// Decoder allocation cap; comfortably above a 4K RGBA16 frame.
const DECODE_LIMIT_BYTES: usize = 256 << 20;

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(bytes: &[u8], transform: Transformations) -> Result<Decoded> {
    let mut decoder = png::Decoder::new_with_limits(
        Cursor::new(bytes),
        png::Limits {
            bytes: DECODE_LIMIT_BYTES,
        },
    );
    decoder.set_transformations(transform);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("image too large".into()))?;
    if size > DECODE_LIMIT_BYTES {
        return Err(Error::Format("image too large".into()));
    }
    let mut data = vec![0; size];
    let info = reader
        .next_frame(&mut data)
        .map_err(|e| Error::Format(e.to_string()))?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn encode(width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(depth);
        let mut writer = encoder.write_header().expect("in-memory png header");
        writer.write_image_data(data).expect("in-memory png body");
        writer.finish().expect("in-memory png finish");
    }
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_gray16(bytes: &[u8]) -> Result<Grid<u16>> {
    let img = decode(bytes, Transformations::IDENTITY)?;
    if img.depth != BitDepth::Sixteen {
        return Err(Error::Format(format!(
            "expected 16-bit samples, found {:?}",
            img.depth
        )));
    }
    if img.color != ColorType::Grayscale {
        return Err(Error::Format(format!(
            "expected single-channel image, found {:?}",
            img.color
        )));
    }
    let raw = img
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Grid::from_vec(img.width, img.height, raw)
        .ok_or_else(|| Error::Format("truncated image".into()))
}

fn encode_gray16(grid: &Grid<u16>) -> Vec<u8> {
    let data: Vec<u8> = grid.iter().flat_map(|x| x.to_be_bytes()).collect();
    encode(
        grid.width(),
        grid.height(),
        ColorType::Grayscale,
        BitDepth::Sixteen,
        &data,
    )
}

pub fn decode_disparity_png(bytes: &[u8]) -> Result<SparseDisparityMap> {
    let raw = decode_gray16(bytes)?;
    Ok(SparseDisparityMap {
        values: raw.map(|&r| r as f64 / 256.0),
        mask: raw.map(|&r| r != 0),
    })
}

/// Valid values are rounded to the nearest 1/256 px and kept at least 1/256
/// so that they never collide with the invalid marker.
pub fn encode_disparity_png(map: &SparseDisparityMap) -> Vec<u8> {
    let raw = map.values.zip_map(&map.mask, |&d, &m| {
        if m {
            (d * 256.0).round().clamp(1.0, u16::MAX as f64) as u16
        } else {
            0
        }
    });
    encode_gray16(&raw)
}

pub fn load_disparity_png(path: impl AsRef<Path>) -> Result<SparseDisparityMap> {
    decode_disparity_png(&read_file(path.as_ref())?)
}

pub fn save_disparity_png(path: impl AsRef<Path>, map: &SparseDisparityMap) -> Result<()> {
    write_file(path.as_ref(), &encode_disparity_png(map))
}

/// Decodes any 8/16-bit grey, grey-alpha, RGB, RGBA or palette PNG into `[0,1]` RGB.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = decode(bytes, Transformations::EXPAND)?;
    let channels = match img.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(Error::Format("unexpanded palette image".into())),
    };
    let samples: Vec<f64> = match img.depth {
        BitDepth::Eight => img.data.iter().map(|&b| b as f64 / 255.0).collect(),
        BitDepth::Sixteen => img
            .data
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        d => return Err(Error::Format(format!("unsupported bit depth {d:?}"))),
    };
    if samples.len() != img.width * img.height * channels {
        return Err(Error::Format("truncated image".into()));
    }
    let pixels = samples
        .chunks_exact(channels)
        .map(|px| match channels {
            1 | 2 => [px[0]; 3],
            _ => [px[0], px[1], px[2]],
        })
        .collect();
    Ok(Grid::from_vec(img.width, img.height, pixels).expect("length checked above"))
}

pub fn encode_rgb_png(img: &RgbImage) -> Vec<u8> {
    let data: Vec<u8> = img
        .iter()
        .flat_map(|px| px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    encode(
        img.width(),
        img.height(),
        ColorType::Rgb,
        BitDepth::Eight,
        &data,
    )
}

pub fn load_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_rgb_png(&read_file(path.as_ref())?)
}

pub fn save_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_file(path.as_ref(), &encode_rgb_png(img))
}

/// Binary mask as 8-bit grey, 255 = set.
pub fn encode_mask_png(mask: &Grid<bool>) -> Vec<u8> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    encode(
        mask.width(),
        mask.height(),
        ColorType::Grayscale,
        BitDepth::Eight,
        &data,
    )
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<Grid<bool>> {
    let img = decode(bytes, Transformations::EXPAND | Transformations::STRIP_16)?;
    let channels = match img.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(Error::Format("unexpanded palette image".into())),
    };
    if img.data.len() != img.width * img.height * channels {
        return Err(Error::Format("truncated image".into()));
    }
    let mask = img
        .data
        .chunks_exact(channels)
        .map(|px| px[0] != 0)
        .collect();
    Ok(Grid::from_vec(img.width, img.height, mask).expect("length checked above"))
}

pub fn save_mask_png(path: impl AsRef<Path>, mask: &Grid<bool>) -> Result<()> {
    write_file(path.as_ref(), &encode_mask_png(mask))
}

pub fn load_mask_png(path: impl AsRef<Path>) -> Result<Grid<bool>> {
    decode_mask_png(&read_file(path.as_ref())?)
}

/// Segment label map as 16-bit grey. Labels above `u16::MAX` saturate.
pub fn save_label_png(path: impl AsRef<Path>, labels: &Grid<u32>) -> Result<()> {
    let raw = labels.map(|&l| l.min(u16::MAX as u32) as u16);
    write_file(path.as_ref(), &encode_gray16(&raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from_raw(raw: &[u16], w: usize) -> SparseDisparityMap {
        let grid = Grid::from_vec(w, raw.len() / w, raw.to_vec()).unwrap();
        decode_disparity_png(&encode_gray16(&grid)).unwrap()
    }

    #[test]
    fn kitti_scaling_convention() {
        let m = map_from_raw(&[256, 0, 12800, 1], 2);
        assert_eq!(m.get(0, 0), Some(1.0));
        assert_eq!(m.get(1, 0), None);
        assert_eq!(m.get(0, 1), Some(50.0));
        assert_eq!(m.get(1, 1), Some(1.0 / 256.0));
    }

    #[test]
    fn rejects_eight_bit_disparity() {
        let bytes = encode_mask_png(&Grid::new(4, 4, true));
        assert!(matches!(
            decode_disparity_png(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_disparity_png(b"not a png").is_err());
        assert!(decode_rgb_png(&[]).is_err());
    }

    #[test]
    fn rgb_round_trip_is_quantised() {
        let img = Grid::from_fn(5, 3, |u, v| [u as f64 / 4.0, v as f64 / 2.0, 0.5]);
        let back = decode_rgb_png(&encode_rgb_png(&img)).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn mask_round_trip() {
        let m = Grid::from_fn(7, 3, |u, v| (u + v) % 3 == 0);
        assert_eq!(decode_mask_png(&encode_mask_png(&m)).unwrap(), m);
    }
}
