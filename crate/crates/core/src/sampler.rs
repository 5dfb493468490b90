//! Object-centred training patch sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{
    rasterize_cables, rasterize_pylons, AnnotationSet, DEFAULT_CABLE_THICKNESS,
};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, ObjectClass};
use crate::targets::squared_edt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    pub patch_size: u32,
    /// Largest allowed distance in pixels from a patch center to the nearest
    /// target object.
    pub max_center_distance: f64,
    pub target_classes: Vec<ObjectClass>,
    pub seed: u64,
    /// Patches drawn per image.
    pub count: usize,
    pub cable_thickness: u32,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            patch_size: 1024,
            max_center_distance: 128.0,
            target_classes: vec![ObjectClass::Cables],
            seed: 0,
            count: 1,
            cable_thickness: DEFAULT_CABLE_THICKNESS,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::invalid("patch_size must be at least 1"));
        }
        if !(self.max_center_distance >= 0.0) {
            return Err(Error::invalid("max_center_distance must be >= 0"));
        }
        if self.target_classes.is_empty() {
            return Err(Error::invalid("at least one target class is required"));
        }
        Ok(())
    }
}

/// Square crop with top-left corner `(x0, y0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Patch {
    pub x0: u32,
    pub y0: u32,
    pub size: u32,
}

impl Patch {
    pub fn center(&self) -> (u32, u32) {
        (self.x0 + self.size / 2, self.y0 + self.size / 2)
    }
}

/// Pixels within `max_center_distance` of any object of the selected classes.
pub fn candidate_region(a: &AnnotationSet, spec: &SampleSpec) -> Result<BinaryMask> {
    spec.validate()?;
    let (w, h) = (a.meta.width, a.meta.height);
    let mut objects = Grid::new(w as usize, h as usize, false);
    for class in &spec.target_classes {
        let raster = match class {
            ObjectClass::Cables => rasterize_cables(&a.cables, w, h, spec.cable_thickness)?,
            ObjectClass::Pylons => rasterize_pylons(&a.pylons, w, h)?,
        };
        objects = objects.union(&raster)?;
    }
    let limit = spec.max_center_distance * spec.max_center_distance;
    Ok(squared_edt(&objects).map(|d2| d2 <= limit))
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Generator for draw `index` of an image. Each draw has its own stream, so
/// the result does not depend on evaluation order.
pub fn draw_rng(seed: u64, image_id: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(image_id.as_bytes()));
    rng.set_stream(index);
    rng
}

/// Draws `spec.count` patches whose centers are uniform over the candidate
/// region restricted to centers that keep the patch inside the image. Returns
/// no patches when that set is empty.
pub fn sample_patches(a: &AnnotationSet, spec: &SampleSpec) -> Result<Vec<Patch>> {
    spec.validate()?;
    let (w, h, size) = (a.meta.width, a.meta.height, spec.patch_size);
    if w < size || h < size {
        return Err(Error::invalid(format!(
            "image `{}` ({w}x{h}) is smaller than a {size} px patch",
            a.meta.image_id
        )));
    }
    let region = candidate_region(a, spec)?;
    let half = size / 2;
    // Centers in [half, dim - half); equivalently x0 in [0, dim - size].
    let (cx_end, cy_end) = ((w - size + half) as usize, (h - size + half) as usize);
    let mut centers = Vec::new();
    for row in half as usize..=cy_end {
        for col in half as usize..=cx_end {
            if region[(row, col)] {
                centers.push((col as u32, row as u32));
            }
        }
    }
    if centers.is_empty() {
        return Ok(Vec::new());
    }
    Ok((0..spec.count as u64)
        .map(|k| {
            let mut rng = draw_rng(spec.seed, &a.meta.image_id, k);
            let (cx, cy) = centers[rng.random_range(0..centers.len())];
            Patch {
                x0: cx - half,
                y0: cy - half,
                size,
            }
        })
        .collect())
}

/// Cuts the region of `patch` out of a grid that is `factor` times coarser
/// than the image the patch refers to.
pub fn crop_mask<T: Copy>(grid: &Grid<T>, patch: &Patch, factor: u32) -> Result<Grid<T>> {
    if factor == 0 {
        return Err(Error::invalid("crop factor must be at least 1"));
    }
    if !patch.x0.is_multiple_of(factor)
        || !patch.y0.is_multiple_of(factor)
        || !patch.size.is_multiple_of(factor)
    {
        return Err(Error::invalid(format!(
            "patch ({}, {}, {}) is not aligned to factor {factor}",
            patch.x0, patch.y0, patch.size
        )));
    }
    let s = (patch.size / factor) as usize;
    grid.crop(
        (patch.x0 / factor) as usize,
        (patch.y0 / factor) as usize,
        s,
        s,
    )
}
