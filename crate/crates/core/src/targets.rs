//! Distance-mask regression targets and coarse-resolution labels.

use serde::{Deserialize, Serialize};

use crate::annotations::{rasterize_cables, rasterize_pylons, AnnotationSet};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ClassPair, DistanceMask, Grid};

/// How a coarse grid treats a trailing partial block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Remainder {
    /// Pad right/bottom with 1.0 and keep the partial block (`ceil` size).
    Pad,
    /// Pad, pool, then drop the partial block (`floor` size).
    #[default]
    Crop,
}

/// Squared Euclidean distance from each cell to the nearest foreground cell,
/// `+inf` where the mask has no foreground at all. Values are exact integers.
pub fn squared_edt(mask: &BinaryMask) -> Grid<f64> {
    let (w, h) = mask.dims();
    let mut out = Grid::new(w, h, f64::INFINITY);
    if w == 0 || h == 0 {
        return out;
    }
    let mut f = vec![0.0; w.max(h)];
    let mut d = vec![0.0; w.max(h)];
    let mut scratch = Envelope::with_capacity(w.max(h));

    // Rows: 1D transform of the 0/inf indicator.
    for row in 0..h {
        for (col, slot) in f[..w].iter_mut().enumerate() {
            *slot = if mask[(row, col)] { 0.0 } else { f64::INFINITY };
        }
        scratch.transform(&f[..w], &mut d[..w]);
        for col in 0..w {
            out[(row, col)] = d[col];
        }
    }
    // Columns: lower envelope of the row results.
    for col in 0..w {
        for row in 0..h {
            f[row] = out[(row, col)];
        }
        scratch.transform(&f[..h], &mut d[..h]);
        for row in 0..h {
            out[(row, col)] = d[row];
        }
    }
    out
}

/// Scratch space for the 1D squared distance transform over a lower
/// envelope of parabolas rooted at the finite samples.
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    fn transform(&mut self, f: &[f64], d: &mut [f64]) {
        self.sites.clear();
        self.bounds.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            loop {
                let Some(&p) = self.sites.last() else {
                    self.sites.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let s = intersection(f, p, q);
                if s <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.sites.is_empty() {
            d.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, dq) in d.iter_mut().enumerate() {
            let x = q as f64;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let p = self.sites[k];
            let dx = x - p as f64;
            *dq = dx * dx + f[p];
        }
    }
}

/// Abscissa where the parabolas rooted at `p < q` intersect.
fn intersection(f: &[f64], p: usize, q: usize) -> f64 {
    let (pf, qf) = (p as f64, q as f64);
    ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
}

/// Euclidean distance in pixels to the nearest foreground cell; `+inf`
/// everywhere when the mask is empty.
pub fn edt(mask: &BinaryMask) -> Grid<f64> {
    squared_edt(mask).map(f64::sqrt)
}

/// `min(dist, d_max) / d_max`, with infinite distances mapping to 1.
pub fn clamp_normalize(dist: &Grid<f64>, d_max: u32) -> Result<DistanceMask> {
    if d_max == 0 {
        return Err(Error::invalid("d_max must be at least 1"));
    }
    let cap = d_max as f64;
    if dist.as_slice().iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::invalid("distances must be non-negative"));
    }
    Ok(DistanceMask::from_trusted(
        dist.map(|v| v.min(cap) / cap),
        d_max,
    ))
}

/// Block minimum over `factor x factor` blocks, padding partial blocks with 1.0.
/// The output has `ceil` dimensions.
pub fn minpool(dm: &DistanceMask, factor: usize) -> Result<DistanceMask> {
    minpool_with(dm, factor, Remainder::Pad)
}

pub fn minpool_with(
    dm: &DistanceMask,
    factor: usize,
    remainder: Remainder,
) -> Result<DistanceMask> {
    if factor == 0 {
        return Err(Error::invalid("pooling factor must be at least 1"));
    }
    let (w, h) = dm.dims();
    let (cw, ch) = coarse_dims(w, h, factor, remainder);
    if cw == 0 || ch == 0 {
        return Err(Error::invalid(format!(
            "{w}x{h} mask is smaller than one {factor}x{factor} block"
        )));
    }
    let src = dm.values();
    let mut out = Grid::new(cw, ch, 1.0f64);
    for row in 0..h.min(ch * factor) {
        let cr = row / factor;
        for col in 0..w.min(cw * factor) {
            let cell = &mut out[(cr, col / factor)];
            let v = src[(row, col)];
            if v < *cell {
                *cell = v;
            }
        }
    }
    Ok(DistanceMask::from_trusted(out, dm.d_max()))
}

/// Coarse grid size for a `w x h` input.
pub fn coarse_dims(w: usize, h: usize, factor: usize, remainder: Remainder) -> (usize, usize) {
    match remainder {
        Remainder::Pad => (w.div_ceil(factor), h.div_ceil(factor)),
        Remainder::Crop => (w / factor, h / factor),
    }
}

/// Foreground where `value * d_max < threshold` (strict).
pub fn binarize(dm: &DistanceMask, threshold: f64) -> Result<BinaryMask> {
    let d_max = dm.d_max() as f64;
    if !(threshold > 0.0 && threshold <= d_max) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside (0, {d_max}]"
        )));
    }
    Ok(dm.values().map(|v| v * d_max < threshold))
}

/// `n`-times downsampling that looks only at the 2x2 center of each block.
pub fn downsample_segmentation(mask: &BinaryMask, n: usize) -> Result<BinaryMask> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "segmentation downsampling needs an even factor >= 2, got {n}"
        )));
    }
    let (w, h) = mask.dims();
    if w % n != 0 || h % n != 0 {
        return Err(Error::invalid(format!(
            "{w}x{h} mask is not divisible by {n}"
        )));
    }
    let c = n / 2;
    Ok(Grid::from_fn(w / n, h / n, |r, col| {
        let (r0, c0) = (r * n + c - 1, col * n + c - 1);
        mask[(r0, c0)] || mask[(r0, c0 + 1)] || mask[(r0 + 1, c0)] || mask[(r0 + 1, c0 + 1)]
    }))
}

/// Coarse cell is set when any pixel of its block is set (partial blocks
/// included, `ceil` size), optionally cropped to `floor` size.
pub fn downsample_any(
    mask: &BinaryMask,
    factor: usize,
    remainder: Remainder,
) -> Result<BinaryMask> {
    if factor == 0 {
        return Err(Error::invalid("downsampling factor must be at least 1"));
    }
    let (w, h) = mask.dims();
    let (cw, ch) = coarse_dims(w, h, factor, remainder);
    let mut out = Grid::new(cw, ch, false);
    for (row, col, v) in mask.indexed() {
        if v && row / factor < ch && col / factor < cw {
            out[(row / factor, col / factor)] = true;
        }
    }
    Ok(out)
}

/// Full-resolution object mask to coarse distance mask.
pub fn distance_target(
    objects: &BinaryMask,
    d_max: u32,
    factor: usize,
    remainder: Remainder,
) -> Result<DistanceMask> {
    let full = clamp_normalize(&edt(objects), d_max)?;
    minpool_with(&full, factor, remainder)
}

/// Cable and pylon distance targets for one annotated image.
pub fn gt_targets(
    a: &AnnotationSet,
    d_max: u32,
    factor: usize,
    remainder: Remainder,
    cable_thickness: u32,
) -> Result<ClassPair<DistanceMask>> {
    let (w, h) = (a.meta.width, a.meta.height);
    let cables = rasterize_cables(&a.cables, w, h, cable_thickness)?;
    let pylons = rasterize_pylons(&a.pylons, w, h)?;
    Ok(ClassPair::new(
        distance_target(&cables, d_max, factor, remainder)?,
        distance_target(&pylons, d_max, factor, remainder)?,
    ))
}
