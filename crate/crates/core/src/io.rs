//! On-disk formats.
//!
//! * Distance masks: 16-bit grayscale PNG holding `round(value * 65535)`,
//!   with a JSON sidecar `{"d_max": .., "factor": ..}` next to it.
//! * Binary masks: 8-bit grayscale PNG with values 0 and 255.
//! * Flow fields and other real-valued planes: little-endian binary with an
//!   8-byte header (width, height as `i32`), followed by row-major `f32`
//!   planes (`dx` then `dy` for flow).
//!
//! Every writer goes through a temporary file in the target directory and a
//! rename, so readers never observe partial files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, DistanceMask, Grid};
use crate::pipeline::FlowField;

/// Metadata stored beside a distance-mask PNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub d_max: u32,
    pub factor: u32,
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Sidecar path for a mask PNG: same stem, `.json` extension.
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

fn encode_png<P>(path: &Path, img: &ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
{
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(buf.into_inner())
}

fn dims_u32(path: &Path, w: usize, h: usize) -> Result<(u32, u32)> {
    match (u32::try_from(w), u32::try_from(h)) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("cannot store a {w}x{h} image"),
        }),
    }
}

/// Quantizes a normalized value to 16 bits.
pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn write_distance_mask(path: &Path, dm: &DistanceMask, factor: u32) -> Result<()> {
    let (w, h) = dims_u32(path, dm.width(), dm.height())?;
    let data: Vec<u16> = dm
        .values()
        .as_slice()
        .iter()
        .map(|&v| quantize16(v))
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, data).expect("buffer matches dimensions");
    write_atomic(path, &encode_png(path, &img)?)?;
    write_json(
        &sidecar_path(path),
        &MaskSidecar {
            d_max: dm.d_max(),
            factor,
        },
    )
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a distance mask and its sidecar.
pub fn read_distance_mask(path: &Path) -> Result<(DistanceMask, MaskSidecar)> {
    let meta: MaskSidecar = read_json(&sidecar_path(path))?;
    let img = open_image(path)?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        _ => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "distance masks must be 16-bit single-channel PNG".into(),
            })
        }
    };
    let (w, h) = gray.dimensions();
    let values: Vec<f64> = gray
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 65535.0)
        .collect();
    let grid = Grid::from_vec(w as usize, h as usize, values)?;
    let dm = DistanceMask::new(grid, meta.d_max).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((dm, meta))
}

pub fn write_binary_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (w, h) = dims_u32(path, mask.width(), mask.height())?;
    let data: Vec<u8> = mask
        .as_slice()
        .iter()
        .map(|&v| if v { 255 } else { 0 })
        .collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w, h, data).expect("buffer matches dimensions");
    write_atomic(path, &encode_png(path, &img)?)
}

/// Any non-zero pixel is foreground.
pub fn read_binary_mask(path: &Path) -> Result<BinaryMask> {
    let gray = open_image(path)?.into_luma8();
    let (w, h) = gray.dimensions();
    Grid::from_vec(
        w as usize,
        h as usize,
        gray.into_raw().into_iter().map(|v| v > 0).collect(),
    )
}

/// Grayscale frame with intensities scaled to `[0, 1]`.
pub fn read_gray_frame(path: &Path) -> Result<Grid<f32>> {
    let gray = open_image(path)?.into_luma16();
    let (w, h) = gray.dimensions();
    Grid::from_vec(
        w as usize,
        h as usize,
        gray.into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
    )
}

pub fn write_gray_frame(path: &Path, frame: &Grid<f32>) -> Result<()> {
    let (w, h) = dims_u32(path, frame.width(), frame.height())?;
    let data: Vec<u8> = frame
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w, h, data).expect("buffer matches dimensions");
    write_atomic(path, &encode_png(path, &img)?)
}

fn encode_planes(width: usize, height: usize, planes: &[&[f64]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + planes.len() * width * height * 4);
    out.extend_from_slice(&(width as i32).to_le_bytes());
    out.extend_from_slice(&(height as i32).to_le_bytes());
    for plane in planes {
        for &v in plane.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn decode_planes(path: &Path, bytes: &[u8], count: usize) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 8 {
        return Err(bad("missing 8-byte header".into()));
    }
    let w = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(bad(format!("invalid dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 8 + count * w * h * 4;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {w}x{h}, found {}",
            bytes.len()
        )));
    }
    let mut planes = Vec::with_capacity(count);
    for p in 0..count {
        let start = 8 + p * w * h * 4;
        let plane: Vec<f64> = bytes[start..start + w * h * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if plane.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        planes.push(plane);
    }
    Ok((w, h, planes))
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    encode_planes(
        flow.width(),
        flow.height(),
        &[flow.dx().as_slice(), flow.dy().as_slice()],
    )
}

pub fn decode_flow(path: &Path, bytes: &[u8]) -> Result<FlowField> {
    let (w, h, mut planes) = decode_planes(path, bytes, 2)?;
    let dy = planes.pop().unwrap();
    let dx = planes.pop().unwrap();
    FlowField::new(Grid::from_vec(w, h, dx)?, Grid::from_vec(w, h, dy)?)
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    write_atomic(path, &encode_flow(flow))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(path, &bytes)
}

/// Single real-valued plane in the flow container layout.
pub fn write_plane(path: &Path, plane: &Grid<f64>) -> Result<()> {
    write_atomic(
        path,
        &encode_planes(plane.width(), plane.height(), &[plane.as_slice()]),
    )
}

pub fn read_plane(path: &Path) -> Result<Grid<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, mut planes) = decode_planes(path, &bytes, 1)?;
    Grid::from_vec(w, h, planes.pop().unwrap())
}
