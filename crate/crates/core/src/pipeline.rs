//! Software model of the onboard inference loop.
//!
//! Each frame is padded and split into square patches, the patches are sent
//! to a [`Predictor`] in fixed-size batches, and the coarse per-patch outputs
//! are stitched into one distance mask per class covering the whole frame.
//! The previous fused mask is warped along the estimated motion and averaged
//! with the current one; the result is thresholded and painted back at full
//! resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ClassPair, DistanceMask, Grid};
use crate::sampler::Patch;
use crate::targets::binarize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Square patch side in input pixels.
    pub patch: u32,
    /// Patches per predictor call.
    pub batch: usize,
    /// Input pixels per coarse output cell.
    pub out_factor: u32,
    /// Share of the warped previous prediction in the fused mask.
    pub fuse_weight: f64,
    /// Binarization threshold in input pixels.
    pub threshold: f64,
    pub d_max: u32,
    /// Downsampling of camera frames before flow estimation.
    pub flow_downsample: u32,
    /// Block side for the built-in flow estimator, in downsampled pixels.
    pub flow_block: u32,
    /// Search radius for the built-in flow estimator, in downsampled pixels.
    pub flow_radius: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            patch: 1024,
            batch: 4,
            out_factor: 32,
            fuse_weight: 0.5,
            threshold: 32.0,
            d_max: crate::DEFAULT_D_MAX,
            flow_downsample: 8,
            flow_block: 8,
            flow_radius: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.out_factor == 0 || !self.patch.is_multiple_of(self.out_factor) {
            return Err(Error::invalid(format!(
                "patch {} must be a positive multiple of out_factor {}",
                self.patch, self.out_factor
            )));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.fuse_weight) {
            return Err(Error::invalid(format!(
                "fuse_weight {} outside [0, 1]",
                self.fuse_weight
            )));
        }
        if !(self.threshold > 0.0 && self.threshold <= self.d_max as f64) {
            return Err(Error::invalid(format!(
                "threshold {} outside (0, {}]",
                self.threshold, self.d_max
            )));
        }
        if self.flow_downsample == 0 || self.flow_block == 0 {
            return Err(Error::invalid(
                "flow_downsample and flow_block must be at least 1",
            ));
        }
        Ok(())
    }

    /// Side of one patch's coarse output.
    pub fn patch_cells(&self) -> usize {
        (self.patch / self.out_factor) as usize
    }
}

/// Per-cell displacement in coarse cells. A cell at `p` in the current frame
/// shows what was at `p - flow(p)` in the previous frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    dx: Grid<f64>,
    dy: Grid<f64>,
}

impl FlowField {
    pub fn new(dx: Grid<f64>, dy: Grid<f64>) -> Result<Self> {
        dx.ensure_same_dims(&dy)?;
        if dx
            .as_slice()
            .iter()
            .chain(dy.as_slice())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("flow field contains non-finite values"));
        }
        Ok(FlowField { dx, dy })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            dx: Grid::new(width, height, 0.0),
            dy: Grid::new(width, height, 0.0),
        }
    }

    pub fn constant(width: usize, height: usize, dx: f64, dy: f64) -> Result<Self> {
        FlowField::new(Grid::new(width, height, dx), Grid::new(width, height, dy))
    }

    pub fn dx(&self) -> &Grid<f64> {
        &self.dx
    }

    pub fn dy(&self) -> &Grid<f64> {
        &self.dy
    }

    pub fn width(&self) -> usize {
        self.dx.width()
    }

    pub fn height(&self) -> usize {
        self.dx.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dx.dims()
    }
}

/// Patch grid over a padded frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub width: u32,
    pub height: u32,
    pub patch: u32,
    pub cols: u32,
    pub rows: u32,
    pub pad_right: u32,
    pub pad_bottom: u32,
    /// Row-major.
    pub patches: Vec<Patch>,
}

/// Pads right/bottom up to multiples of `patch` and tiles the result.
pub fn pad_split(width: u32, height: u32, patch: u32) -> Result<Layout> {
    if width == 0 || height == 0 || patch == 0 {
        return Err(Error::invalid(format!(
            "cannot split a {width}x{height} frame into {patch} px patches"
        )));
    }
    let (cols, rows) = (width.div_ceil(patch), height.div_ceil(patch));
    let patches = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| Patch {
                x0: c * patch,
                y0: r * patch,
                size: patch,
            })
        })
        .collect();
    Ok(Layout {
        width,
        height,
        patch,
        cols,
        rows,
        pad_right: cols * patch - width,
        pad_bottom: rows * patch - height,
        patches,
    })
}

/// Coarse output size of a frame: `floor(dim / out_factor)`.
pub fn stitched_dims(width: u32, height: u32, out_factor: u32) -> (usize, usize) {
    (
        (width / out_factor) as usize,
        (height / out_factor) as usize,
    )
}

/// Places row-major patch outputs on the layout grid and crops to
/// `floor(crop_to / out_factor)`.
pub fn stitch(
    outputs: &[DistanceMask],
    layout: &Layout,
    crop_to: (u32, u32),
    out_factor: u32,
) -> Result<DistanceMask> {
    if outputs.len() != layout.patches.len() {
        return Err(Error::invalid(format!(
            "layout has {} patches but {} outputs were given",
            layout.patches.len(),
            outputs.len()
        )));
    }
    if out_factor == 0 || !layout.patch.is_multiple_of(out_factor) {
        return Err(Error::invalid(format!(
            "patch {} is not a multiple of out_factor {out_factor}",
            layout.patch
        )));
    }
    let cells = (layout.patch / out_factor) as usize;
    let d_max = outputs
        .first()
        .map(|o| o.d_max())
        .unwrap_or(crate::DEFAULT_D_MAX);
    for (i, o) in outputs.iter().enumerate() {
        if o.dims() != (cells, cells) {
            return Err(Error::Predictor {
                frame: 0,
                patch: i,
                message: format!(
                    "expected {cells}x{cells} cells, got {}x{}",
                    o.width(),
                    o.height()
                ),
            });
        }
    }
    let (w, h) = stitched_dims(crop_to.0, crop_to.1, out_factor);
    if w > layout.cols as usize * cells || h > layout.rows as usize * cells {
        return Err(Error::invalid("crop exceeds the stitched layout"));
    }
    let cols = layout.cols as usize;
    let grid = Grid::from_fn(w, h, |r, c| {
        let p = (r / cells) * cols + c / cells;
        outputs[p].values()[(r % cells, c % cells)]
    });
    Ok(DistanceMask::from_trusted(grid, d_max))
}

/// Block-mean downsampling of a camera frame (`floor` size, at least 1x1).
pub fn downsample_frame(frame: &Grid<f32>, factor: u32) -> Grid<f32> {
    let f = factor.max(1) as usize;
    let (w, h) = ((frame.width() / f).max(1), (frame.height() / f).max(1));
    Grid::from_fn(w, h, |r, c| {
        let mut sum = 0.0f64;
        let mut n = 0u32;
        for rr in r * f..((r + 1) * f).min(frame.height()) {
            for cc in c * f..((c + 1) * f).min(frame.width()) {
                sum += frame[(rr, cc)] as f64;
                n += 1;
            }
        }
        (sum / n.max(1) as f64) as f32
    })
}

/// Integer block matching on two equally sized small frames followed by
/// bilinear interpolation of the block displacements onto a
/// `coarse_w x coarse_h` grid, in coarse-cell units.
///
/// Displacements are searched in `[-radius, radius]^2` and must keep the
/// displaced block inside the previous frame. Ties in the sum of absolute
/// differences prefer the smaller displacement.
pub fn estimate_flow(
    prev: &Grid<f32>,
    cur: &Grid<f32>,
    coarse_w: usize,
    coarse_h: usize,
    block: u32,
    radius: u32,
) -> Result<FlowField> {
    prev.ensure_same_dims(cur)?;
    if coarse_w == 0 || coarse_h == 0 {
        return Err(Error::invalid("flow grid must be non-empty"));
    }
    let (w, h) = cur.dims();
    let b = (block as usize).clamp(1, w.min(h).max(1));
    let (bw, bh) = ((w / b).max(1), (h / b).max(1));
    let r = radius as i64;
    let mut block_dx = Grid::new(bw, bh, 0.0f64);
    let mut block_dy = Grid::new(bw, bh, 0.0f64);
    for by in 0..bh {
        for bx in 0..bw {
            let (x0, y0) = ((bx * b) as i64, (by * b) as i64);
            let (x1, y1) = ((x0 + b as i64).min(w as i64), (y0 + b as i64).min(h as i64));
            let mut best: Option<(f64, i64, i64, i64)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    if x0 - dx < 0 || y0 - dy < 0 || x1 - dx > w as i64 || y1 - dy > h as i64 {
                        continue;
                    }
                    let mut sad = 0.0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let a = cur[(y as usize, x as usize)];
                            let p = prev[((y - dy) as usize, (x - dx) as usize)];
                            sad += (a - p).abs() as f64;
                        }
                    }
                    let key = (sad, dx.abs() + dy.abs(), dy, dx);
                    let better = match best {
                        None => true,
                        Some(cur_best) => {
                            key.0 < cur_best.0
                                || (key.0 == cur_best.0
                                    && (key.1, key.2, key.3) < (cur_best.1, cur_best.2, cur_best.3))
                        }
                    };
                    if better {
                        best = Some(key);
                    }
                }
            }
            let (_, _, dy, dx) = best.expect("zero displacement is always admissible");
            block_dx[(by, bx)] = dx as f64;
            block_dy[(by, bx)] = dy as f64;
        }
    }

    // Block centers sit at ((bx + 0.5) b, (by + 0.5) b) in small-frame pixels.
    let (sx, sy) = (w as f64 / coarse_w as f64, h as f64 / coarse_h as f64);
    let sample = |g: &Grid<f64>, x: f64, y: f64| -> f64 {
        let gx = (x / b as f64 - 0.5).clamp(0.0, (bw - 1) as f64);
        let gy = (y / b as f64 - 0.5).clamp(0.0, (bh - 1) as f64);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(bw - 1), (y0 + 1).min(bh - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let top = g[(y0, x0)] * (1.0 - fx) + g[(y0, x1)] * fx;
        let bottom = g[(y1, x0)] * (1.0 - fx) + g[(y1, x1)] * fx;
        top * (1.0 - fy) + bottom * fy
    };
    let dx = Grid::from_fn(coarse_w, coarse_h, |r, c| {
        sample(&block_dx, (c as f64 + 0.5) * sx, (r as f64 + 0.5) * sy) / sx
    });
    let dy = Grid::from_fn(coarse_w, coarse_h, |r, c| {
        sample(&block_dy, (c as f64 + 0.5) * sx, (r as f64 + 0.5) * sy) / sy
    });
    FlowField::new(dx, dy)
}

/// Value used for samples that fall outside the previous prediction.
pub const WARP_FILL: f64 = 1.0;

/// Backward warp with bilinear interpolation: `out(p) = prev(p - flow(p))`.
pub fn warp(prev: &DistanceMask, flow: &FlowField) -> Result<DistanceMask> {
    prev.values().ensure_same_dims(flow.dx())?;
    let src = prev.values();
    let (w, h) = src.dims();
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            WARP_FILL
        } else {
            src[(r as usize, c as usize)]
        }
    };
    let out = Grid::from_fn(w, h, |r, c| {
        let x = c as f64 - flow.dx()[(r, c)];
        let y = r as f64 - flow.dy()[(r, c)];
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as i64, y0 as i64);
        let top = at(yi, xi) * (1.0 - fx) + at(yi, xi + 1) * fx;
        let bottom = at(yi + 1, xi) * (1.0 - fx) + at(yi + 1, xi + 1) * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
    });
    Ok(DistanceMask::from_trusted(out, prev.d_max()))
}

/// `fuse_weight * warped_prev + (1 - fuse_weight) * current`; returns
/// `current` unchanged when there is no history.
pub fn temporal_fuse(
    warped_prev: Option<&DistanceMask>,
    current: &DistanceMask,
    fuse_weight: f64,
) -> Result<DistanceMask> {
    if !(0.0..=1.0).contains(&fuse_weight) {
        return Err(Error::invalid(format!(
            "fuse_weight {fuse_weight} outside [0, 1]"
        )));
    }
    let Some(prev) = warped_prev else {
        return Ok(current.clone());
    };
    // Written as an offset from `current` so equal inputs come back bit-exact.
    let fused = current.values().zip_map(prev.values(), |c, p| {
        (c + fuse_weight * (p - c)).clamp(0.0, 1.0)
    })?;
    Ok(DistanceMask::from_trusted(fused, current.d_max()))
}

/// Binarizes a coarse mask and paints each cell over its `out_factor` block of
/// a `target_w x target_h` image. Pixels beyond the last full block take the
/// nearest edge cell.
pub fn threshold_upscale(
    fused: &DistanceMask,
    threshold: f64,
    target_w: u32,
    target_h: u32,
    out_factor: u32,
) -> Result<BinaryMask> {
    let (cw, ch) = fused.dims();
    if out_factor == 0 || (target_w as usize) < cw || (target_h as usize) < ch || cw == 0 || ch == 0
    {
        return Err(Error::invalid(format!(
            "cannot upscale {cw}x{ch} cells to {target_w}x{target_h} with factor {out_factor}"
        )));
    }
    let coarse = binarize(fused, threshold)?;
    let f = out_factor as usize;
    let col_of: Vec<usize> = (0..target_w as usize)
        .map(|x| (x / f).min(cw - 1))
        .collect();
    Ok(Grid::from_fn(
        target_w as usize,
        target_h as usize,
        |y, x| coarse[((y / f).min(ch - 1), col_of[x])],
    ))
}

/// Seeded synthetic prediction: each object cell (value 0) is erased to 1.0
/// with probability `dropout`; every other cell gets Gaussian noise of
/// standard deviation `noise_sigma`, clamped to `[0, 1]`.
pub fn degraded_oracle(
    gt: &DistanceMask,
    noise_sigma: f64,
    dropout: f64,
    seed: u64,
) -> Result<DistanceMask> {
    if !(noise_sigma >= 0.0) || !(0.0..=1.0).contains(&dropout) {
        return Err(Error::invalid(format!(
            "noise_sigma {noise_sigma} must be >= 0 and dropout {dropout} in [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let values = gt.values().map(|v| {
        // Draw both variates for every cell so the stream does not depend on content.
        let erase = rng.random::<f64>() < dropout;
        let noise = normal.sample(&mut rng);
        if v == 0.0 && erase {
            1.0
        } else if noise_sigma == 0.0 {
            v
        } else {
            (v + noise).clamp(0.0, 1.0)
        }
    });
    Ok(DistanceMask::from_trusted(values, gt.d_max()))
}

/// What the predictor sees of the current frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub index: usize,
    pub id: &'a str,
    pub width: u32,
    pub height: u32,
    pub image: Option<&'a Grid<f32>>,
}

impl FrameContext<'_> {
    /// Patch pixels with edge replication past the frame border, if the frame
    /// carries an image.
    pub fn patch_pixels(&self, patch: &Patch) -> Option<Grid<f32>> {
        let img = self.image?;
        let (w, h) = img.dims();
        let s = patch.size as usize;
        Some(Grid::from_fn(s, s, |r, c| {
            let y = (patch.y0 as usize + r).min(h - 1);
            let x = (patch.x0 as usize + c).min(w - 1);
            img[(y, x)]
        }))
    }
}

/// Source of per-patch coarse predictions. Implementations must tolerate
/// concurrent calls for different batches of the same frame.
pub trait Predictor: Sync {
    /// One coarse mask pair of `patch / out_factor` cells per patch.
    fn predict(
        &self,
        frame: &FrameContext<'_>,
        batch: &[Patch],
    ) -> Result<Vec<ClassPair<DistanceMask>>>;
}

/// Same value everywhere, every frame.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor {
    pub cables: f64,
    pub pylons: f64,
    pub cells: usize,
    pub d_max: u32,
}

impl Predictor for ConstantPredictor {
    fn predict(
        &self,
        _frame: &FrameContext<'_>,
        batch: &[Patch],
    ) -> Result<Vec<ClassPair<DistanceMask>>> {
        batch
            .iter()
            .map(|_| {
                Ok(ClassPair::new(
                    DistanceMask::filled(self.cells, self.cells, self.cables, self.d_max)?,
                    DistanceMask::filled(self.cells, self.cells, self.pylons, self.d_max)?,
                ))
            })
            .collect()
    }
}

/// Serves crops of precomputed full-frame coarse masks, one pair per frame.
/// Cells beyond a map's extent read as 1.0.
#[derive(Debug, Clone)]
pub struct CoarseMapPredictor {
    pub maps: Vec<ClassPair<DistanceMask>>,
    pub out_factor: u32,
}

impl Predictor for CoarseMapPredictor {
    fn predict(
        &self,
        frame: &FrameContext<'_>,
        batch: &[Patch],
    ) -> Result<Vec<ClassPair<DistanceMask>>> {
        let maps = self.maps.get(frame.index).ok_or_else(|| Error::Predictor {
            frame: frame.index,
            patch: 0,
            message: "no coarse map for this frame".into(),
        })?;
        let f = self.out_factor.max(1);
        batch
            .iter()
            .map(|p| {
                let cells = (p.size / f) as usize;
                let (cx, cy) = ((p.x0 / f) as usize, (p.y0 / f) as usize);
                maps.as_ref().clone().try_map(|_, m| {
                    let g = Grid::from_fn(cells, cells, |r, c| {
                        m.values().get(cy + r, cx + c).unwrap_or(1.0)
                    });
                    DistanceMask::new(g, m.d_max())
                })
            })
            .collect()
    }
}

/// Frame handed to the simulator.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    pub id: String,
    /// Grayscale camera frame, needed only for built-in flow estimation and
    /// by predictors that look at pixels.
    pub image: Option<Grid<f32>>,
}

/// Where inter-frame motion comes from.
#[derive(Debug, Clone)]
pub enum FlowSource {
    Zero,
    /// One field per frame; entry `t` maps frame `t - 1` onto frame `t`, and
    /// entry 0 is unused.
    External(Vec<FlowField>),
    /// Block matching on downsampled consecutive frame images.
    Estimated,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineState {
    pub prev_fused: Option<ClassPair<DistanceMask>>,
    pub frame_index: usize,
    prev_small: Option<Grid<f32>>,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub stitched: ClassPair<DistanceMask>,
    pub fused: ClassPair<DistanceMask>,
    pub masks: ClassPair<BinaryMask>,
    pub flow: Option<FlowField>,
}

/// Stream simulator for frames of one fixed size.
pub struct Simulator<'p, P: Predictor> {
    cfg: PipelineConfig,
    width: u32,
    height: u32,
    layout: Layout,
    predictor: &'p P,
    flows: FlowSource,
    state: PipelineState,
}

impl<'p, P: Predictor> Simulator<'p, P> {
    pub fn new(
        width: u32,
        height: u32,
        predictor: &'p P,
        flows: FlowSource,
        cfg: PipelineConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let layout = pad_split(width, height, cfg.patch)?;
        let (cw, ch) = stitched_dims(width, height, cfg.out_factor);
        if cw == 0 || ch == 0 {
            return Err(Error::invalid(format!(
                "{width}x{height} frame is smaller than one {} px output cell",
                cfg.out_factor
            )));
        }
        Ok(Simulator {
            cfg,
            width,
            height,
            layout,
            predictor,
            flows,
            state: PipelineState::default(),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    fn predict_frame(&self, ctx: &FrameContext<'_>) -> Result<ClassPair<DistanceMask>> {
        let cells = self.cfg.patch_cells();
        let mut cables = Vec::with_capacity(self.layout.patches.len());
        let mut pylons = Vec::with_capacity(self.layout.patches.len());
        for (b, batch) in self.layout.patches.chunks(self.cfg.batch).enumerate() {
            let out = self.predictor.predict(ctx, batch)?;
            if out.len() != batch.len() {
                return Err(Error::Predictor {
                    frame: ctx.index,
                    patch: b * self.cfg.batch,
                    message: format!(
                        "batch of {} patches returned {} outputs",
                        batch.len(),
                        out.len()
                    ),
                });
            }
            for (i, pair) in out.into_iter().enumerate() {
                for m in [&pair.cables, &pair.pylons] {
                    if m.dims() != (cells, cells) {
                        return Err(Error::Predictor {
                            frame: ctx.index,
                            patch: b * self.cfg.batch + i,
                            message: format!(
                                "expected {cells}x{cells} cells, got {}x{}",
                                m.width(),
                                m.height()
                            ),
                        });
                    }
                }
                cables.push(pair.cables);
                pylons.push(pair.pylons);
            }
        }
        let crop = (self.width, self.height);
        Ok(ClassPair::new(
            stitch(&cables, &self.layout, crop, self.cfg.out_factor)?,
            stitch(&pylons, &self.layout, crop, self.cfg.out_factor)?,
        ))
    }

    /// Processes the next frame of the stream.
    pub fn step(&mut self, frame: &Frame) -> Result<FrameOutput> {
        let index = self.state.frame_index;
        if let Some(img) = &frame.image {
            if img.dims() != (self.width as usize, self.height as usize) {
                return Err(Error::Dimension {
                    expected: (self.width as usize, self.height as usize),
                    found: img.dims(),
                });
            }
        }
        let ctx = FrameContext {
            index,
            id: &frame.id,
            width: self.width,
            height: self.height,
            image: frame.image.as_ref(),
        };
        let stitched = self.predict_frame(&ctx)?;
        let (cw, ch) = stitched.cables.dims();

        let small = match (&self.flows, &frame.image) {
            (FlowSource::Estimated, Some(img)) => {
                Some(downsample_frame(img, self.cfg.flow_downsample))
            }
            (FlowSource::Estimated, None) => {
                return Err(Error::invalid(format!(
                    "frame {index} has no image for flow estimation"
                )))
            }
            _ => None,
        };

        let mut flow_used = None;
        let fused = match self.state.prev_fused.take() {
            None => stitched.clone(),
            Some(prev) => {
                let flow = match &self.flows {
                    FlowSource::Zero => FlowField::zeros(cw, ch),
                    FlowSource::External(fields) => {
                        let f = fields.get(index).ok_or_else(|| {
                            Error::invalid(format!("no external flow field for frame {index}"))
                        })?;
                        if f.dims() != (cw, ch) {
                            return Err(Error::Dimension {
                                expected: (cw, ch),
                                found: f.dims(),
                            });
                        }
                        f.clone()
                    }
                    FlowSource::Estimated => {
                        let prev_small =
                            self.state.prev_small.as_ref().expect("set with prev_fused");
                        estimate_flow(
                            prev_small,
                            small.as_ref().expect("checked above"),
                            cw,
                            ch,
                            self.cfg.flow_block,
                            self.cfg.flow_radius,
                        )?
                    }
                };
                let w = self.cfg.fuse_weight;
                let fused = ClassPair::new(
                    temporal_fuse(Some(&warp(&prev.cables, &flow)?), &stitched.cables, w)?,
                    temporal_fuse(Some(&warp(&prev.pylons, &flow)?), &stitched.pylons, w)?,
                );
                flow_used = Some(flow);
                fused
            }
        };

        let masks = fused.as_ref().clone().try_map(|_, m| {
            threshold_upscale(
                m,
                self.cfg.threshold,
                self.width,
                self.height,
                self.cfg.out_factor,
            )
        })?;
        self.state.prev_fused = Some(fused.clone());
        self.state.prev_small = small;
        self.state.frame_index += 1;
        Ok(FrameOutput {
            stitched,
            fused,
            masks,
            flow: flow_used,
        })
    }
}

/// Runs a whole stream and collects every frame's output.
pub fn run_stream<P: Predictor>(
    frames: &[Frame],
    width: u32,
    height: u32,
    predictor: &P,
    flows: FlowSource,
    cfg: &PipelineConfig,
) -> Result<Vec<FrameOutput>> {
    let mut sim = Simulator::new(width, height, predictor, flows, cfg.clone())?;
    frames.iter().map(|f| sim.step(f)).collect()
}
