//! Fixtures shared by the criterion benchmarks.

use powerline_core::pipeline::{pad_split, Layout};
use powerline_core::{BinaryMask, DistanceMask, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A few random horizontal and vertical 3-px lines, roughly what a cable
/// raster looks like to the distance transform.
pub fn line_mask(w: usize, h: usize, lines: usize, seed: u64) -> BinaryMask {
    let mut r = rng(seed);
    let mut m = Grid::new(w, h, false);
    for _ in 0..lines {
        if r.random::<bool>() {
            let y = r.random_range(1..h - 1);
            for x in 0..w {
                for yy in y - 1..=y + 1 {
                    m[(yy, x)] = true;
                }
            }
        } else {
            let x = r.random_range(1..w - 1);
            for y in 0..h {
                for xx in x - 1..=x + 1 {
                    m[(y, xx)] = true;
                }
            }
        }
    }
    m
}

pub fn noise_mask(w: usize, h: usize, density: f64, seed: u64) -> BinaryMask {
    let mut r = rng(seed);
    Grid::from_fn(w, h, |_, _| r.random::<f64>() < density)
}

pub fn uniform_dm(w: usize, h: usize, seed: u64) -> DistanceMask {
    let mut r = rng(seed);
    DistanceMask::new(Grid::from_fn(w, h, |_, _| r.random::<f64>()), 128).unwrap()
}

/// Ground truth with a cable column every 16 cells and graded distances
/// around it.
pub fn cable_gt(w: usize, h: usize) -> DistanceMask {
    let g = Grid::from_fn(w, h, |_, c| {
        let d = (c % 16).min(16 - c % 16) as f64;
        (d * 16.0 / 128.0).min(1.0)
    });
    DistanceMask::new(g, 128).unwrap()
}

/// Layout and per-patch coarse outputs for a full frame.
pub fn stitch_inputs(w: u32, h: u32, patch: u32, out_factor: u32) -> (Layout, Vec<DistanceMask>) {
    let layout = pad_split(w, h, patch).unwrap();
    let cells = (patch / out_factor) as usize;
    let patches = (0..layout.patches.len() as u64)
        .map(|i| uniform_dm(cells, cells, i))
        .collect();
    (layout, patches)
}
