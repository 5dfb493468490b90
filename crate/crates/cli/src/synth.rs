//! Seeded synthetic scenes for demos and end-to-end tests.

use std::f64::consts::PI;

use powerline_core::{AnnotationSet, BBox, Dataset, ImageMeta, Point, Polyline};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Largest heading change between consecutive cable segments, in radians.
const MAX_TURN: f64 = 0.15;
const MAX_VERTICES: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub recordings: usize,
    pub locations: usize,
    pub max_cables: usize,
    pub exclusion_rate: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        SynthSpec {
            images: cfg.images,
            width: cfg.width,
            height: cfg.height,
            recordings: cfg.recordings,
            locations: cfg.locations,
            max_cables: cfg.max_cables,
            exclusion_rate: cfg.exclusion_rate,
            seed: cfg.seed,
        }
    }
}

/// Point where the segment `a -> b` leaves `[0, w] x [0, h]`, or `b` if it stays inside.
fn clip_to_frame(a: Point, b: Point, w: f64, h: f64) -> Point {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let mut t: f64 = 1.0;
    for (p, d, hi) in [(a.x, dx, w), (a.y, dy, h)] {
        if d > 0.0 && p + d > hi {
            t = t.min((hi - p) / d);
        }
        if d < 0.0 && p + d < 0.0 {
            t = t.min(-p / d);
        }
    }
    Point::new((a.x + t * dx).clamp(0.0, w), (a.y + t * dy).clamp(0.0, h))
}

fn synth_cable(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Option<Polyline> {
    // Enter from a random side, heading roughly across the frame.
    let side = rng.random_range(0..4);
    let jitter = rng.random_range(-0.5..0.5);
    let (start, heading) = match side {
        0 => (Point::new(0.0, rng.random_range(0.1..0.9) * h), jitter),
        1 => (Point::new(w, rng.random_range(0.1..0.9) * h), PI + jitter),
        2 => (
            Point::new(rng.random_range(0.1..0.9) * w, 0.0),
            PI / 2.0 + jitter,
        ),
        _ => (
            Point::new(rng.random_range(0.1..0.9) * w, h),
            -PI / 2.0 + jitter,
        ),
    };
    let step = w.max(h) / rng.random_range(4.0..8.0);
    let mut pts = vec![start];
    let mut theta = heading;
    while pts.len() < MAX_VERTICES {
        let a = *pts.last().unwrap();
        let b = Point::new(a.x + step * theta.cos(), a.y + step * theta.sin());
        let c = clip_to_frame(a, b, w, h);
        if (c.x - a.x).abs() + (c.y - a.y).abs() > 1e-9 {
            pts.push(c);
        }
        if c != b {
            break;
        }
        theta += rng.random_range(-MAX_TURN..MAX_TURN);
    }
    Polyline::new(pts).ok()
}

/// Box of the given size centered near `(cx, cy)`, shifted to lie inside the image.
fn box_near(cx: f64, cy: f64, bw: f64, bh: f64, w: f64, h: f64) -> Option<BBox> {
    let (bw, bh) = (bw.min(w), bh.min(h));
    let x = cx.clamp(bw / 2.0, w - bw / 2.0);
    let y = cy.clamp(bh / 2.0, h - bh / 2.0);
    BBox::new(x - bw / 2.0, y - bh / 2.0, x + bw / 2.0, y + bh / 2.0).ok()
}

pub fn synth_image(spec: &SynthSpec, index: usize) -> AnnotationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let n_cables = if spec.max_cables == 0 {
        0
    } else {
        rng.random_range(1..=spec.max_cables)
    };
    let cables: Vec<Polyline> = (0..n_cables)
        .filter_map(|_| synth_cable(&mut rng, w, h))
        .collect();

    let mut pylons = Vec::new();
    for c in &cables {
        let pts = c.points();
        for p in [pts[0], pts[pts.len() - 1]] {
            if rng.random::<f64>() < 0.6 {
                let (bw, bh) = (rng.random_range(4.0..12.0), rng.random_range(16.0..48.0));
                let (jx, jy) = (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                pylons.extend(box_near(p.x + jx, p.y + jy, bw, bh, w, h));
            }
        }
    }
    let mut exclusions = Vec::new();
    if rng.random::<f64>() < spec.exclusion_rate {
        let (bw, bh) = (rng.random_range(8.0..32.0), rng.random_range(8.0..32.0));
        exclusions.extend(box_near(
            rng.random_range(0.0..w),
            rng.random_range(0.0..h),
            bw,
            bh,
            w,
            h,
        ));
    }

    let recording = index * spec.recordings / spec.images.max(1);
    AnnotationSet {
        meta: ImageMeta {
            image_id: format!("img{index:04}"),
            width: spec.width,
            height: spec.height,
            recording_id: format!("rec{recording:03}"),
            location_group: format!("loc{:03}", recording % spec.locations.max(1)),
        },
        cables,
        pylons,
        exclusions,
    }
}

pub fn synth_dataset(spec: &SynthSpec) -> CliResult<Dataset> {
    if spec.images > 0 && (spec.recordings == 0 || spec.locations == 0) {
        return Err(CliError::Config(
            "recordings and locations must be at least 1".into(),
        ));
    }
    if spec.width < 8 || spec.height < 8 {
        return Err(CliError::Config(format!(
            "synthetic images must be at least 8x8, got {}x{}",
            spec.width, spec.height
        )));
    }
    let items = (0..spec.images).map(|i| synth_image(spec, i)).collect();
    Ok(Dataset::new(items)?)
}
