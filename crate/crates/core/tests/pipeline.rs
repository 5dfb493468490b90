use powerline_core::pipeline::{
    degraded_oracle, estimate_flow, pad_split, run_stream, stitch, stitched_dims,
    threshold_upscale, warp, CoarseMapPredictor, ConstantPredictor, FlowSource, Frame,
    FrameContext, Predictor,
};
use powerline_core::{
    ClassPair, DistanceMask, Error, FlowField, Grid, Patch, PipelineConfig, Result,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DistanceMask {
    DistanceMask::new(Grid::from_fn(w, h, |_, _| rng.random::<f64>()), 128).unwrap()
}

fn cfg(patch: u32, out_factor: u32, batch: usize) -> PipelineConfig {
    PipelineConfig {
        patch,
        out_factor,
        batch,
        ..PipelineConfig::default()
    }
}

fn frames(n: usize) -> Vec<Frame> {
    (0..n)
        .map(|i| Frame {
            id: format!("f{i}"),
            image: None,
        })
        .collect()
}

#[test]
fn split_then_stitch_reproduces_coarse_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..40 {
        let out_factor = [2u32, 4, 8][rng.random_range(0..3)];
        let patch = out_factor * rng.random_range(1..6);
        let (w, h) = (
            rng.random_range(out_factor..200),
            rng.random_range(out_factor..200),
        );
        let (cw, ch) = stitched_dims(w, h, out_factor);
        let maps = ClassPair::new(random_map(&mut rng, cw, ch), random_map(&mut rng, cw, ch));
        let pred = CoarseMapPredictor {
            maps: vec![maps.clone()],
            out_factor,
        };
        let out = run_stream(
            &frames(1),
            w,
            h,
            &pred,
            FlowSource::Zero,
            &cfg(patch, out_factor, 3),
        )
        .unwrap();
        assert_eq!(out[0].stitched, maps);
        assert_eq!(out[0].fused, maps);
    }
}

#[test]
fn published_frame_shapes() {
    for (f, dims) in [(32, (128, 93)), (16, (256, 187))] {
        let layout = pad_split(4096, 3000, 1024).unwrap();
        let cells = (1024 / f) as usize;
        let outs =
            vec![DistanceMask::filled(cells, cells, 1.0, 128).unwrap(); layout.patches.len()];
        assert_eq!(
            stitch(&outs, &layout, (4096, 3000), f).unwrap().dims(),
            dims
        );
    }
}

#[test]
fn constant_prediction_is_a_fixed_point() {
    for c in [0.0, 0.1, 0.3, 0.7, 1.0] {
        let pred = ConstantPredictor {
            cables: c,
            pylons: 1.0 - c,
            cells: 4,
            d_max: 128,
        };
        let out = run_stream(&frames(6), 100, 70, &pred, FlowSource::Zero, &cfg(16, 4, 2)).unwrap();
        for o in &out[1..] {
            assert!(o.fused.cables.values().as_slice().iter().all(|&v| v == c));
            assert!(o
                .fused
                .pylons
                .values()
                .as_slice()
                .iter()
                .all(|&v| v == 1.0 - c));
        }
    }
}

#[test]
fn alternating_cell_follows_the_averaging_recurrence() {
    let maps: Vec<ClassPair<DistanceMask>> = (0..8)
        .map(|t| {
            let v = if t % 2 == 0 { 0.0 } else { 1.0 };
            let m = DistanceMask::filled(1, 1, v, 128).unwrap();
            ClassPair::new(m.clone(), m)
        })
        .collect();
    let pred = CoarseMapPredictor {
        maps,
        out_factor: 8,
    };
    let out = run_stream(&frames(8), 8, 8, &pred, FlowSource::Zero, &cfg(8, 8, 1)).unwrap();
    let mut x = 0.0f64;
    for (t, o) in out.iter().enumerate() {
        let c = if t % 2 == 0 { 0.0 } else { 1.0 };
        x = if t == 0 { c } else { (x + c) / 2.0 };
        assert_eq!(o.fused.cables.values()[(0, 0)], x, "frame {t}");
    }
    assert_eq!(out[1].fused.cables.values()[(0, 0)], 0.5);
    assert_eq!(out[2].fused.cables.values()[(0, 0)], 0.25);
}

#[test]
fn single_frame_output_is_thresholded_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (w, h) = (70, 45);
    let maps = ClassPair::new(random_map(&mut rng, 8, 5), random_map(&mut rng, 8, 5));
    let pred = CoarseMapPredictor {
        maps: vec![maps.clone()],
        out_factor: 8,
    };
    let c = cfg(16, 8, 4);
    let out = run_stream(&frames(1), w, h, &pred, FlowSource::Zero, &c).unwrap();
    let expect = threshold_upscale(&maps.cables, c.threshold, w, h, 8).unwrap();
    assert_eq!(out[0].masks.cables, expect);
    assert!(out[0].flow.is_none());
}

#[test]
fn external_flow_shifts_history() {
    let mut first = Grid::new(6, 6, 1.0);
    first[(2, 2)] = 0.0;
    let first = DistanceMask::new(first, 128).unwrap();
    let blank = DistanceMask::filled(6, 6, 1.0, 128).unwrap();
    let pred = CoarseMapPredictor {
        maps: vec![
            ClassPair::new(first, blank.clone()),
            ClassPair::new(blank.clone(), blank),
        ],
        out_factor: 4,
    };
    let flows = vec![
        FlowField::zeros(6, 6),
        FlowField::constant(6, 6, 1.0, 2.0).unwrap(),
    ];
    let out = run_stream(
        &frames(2),
        24,
        24,
        &pred,
        FlowSource::External(flows),
        &cfg(8, 4, 4),
    )
    .unwrap();
    let fused = out[1].fused.cables.values();
    assert_eq!(fused[(4, 3)], 0.5);
    assert_eq!(fused.as_slice().iter().filter(|&&v| v < 1.0).count(), 1);
}

fn texture(w: usize, h: usize, seed: u64) -> Grid<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Grid<f32> = Grid::from_fn(w / 4 + 2, h / 4 + 2, |_, _| rng.random());
    // Blocky noise smoothed a little so block matching has a clear optimum.
    Grid::from_fn(w, h, |r, c| {
        base[(r / 4, c / 4)] * 0.8 + base[((r + 2) / 4, (c + 2) / 4)] * 0.2
    })
}

#[test]
fn block_matching_recovers_a_translation() {
    let big = texture(80, 80, 33);
    let (dx, dy) = (3usize, 2usize);
    let prev = big.crop(8, 8, 64, 64).unwrap();
    // Content moves right/down: cur(p) = prev(p - d).
    let cur = big.crop(8 - dx, 8 - dy, 64, 64).unwrap();
    let flow = estimate_flow(&prev, &cur, 16, 16, 8, 4).unwrap();
    // Coarse cells are 4 small pixels wide.
    for r in 4..12 {
        for c in 4..12 {
            assert!(
                (flow.dx()[(r, c)] - 0.75).abs() < 1e-12,
                "{}",
                flow.dx()[(r, c)]
            );
            assert!((flow.dy()[(r, c)] - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn estimated_flow_run_is_deterministic_and_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let (w, h) = (128u32, 96u32);
    let gt = random_map(&mut rng, 16, 12);
    let maps: Vec<_> = (0..4)
        .map(|t| {
            let c = degraded_oracle(&gt, 0.1, 0.2, t).unwrap();
            ClassPair::new(c.clone(), c)
        })
        .collect();
    let big = texture(160, 130, 35);
    let frames: Vec<Frame> = (0..4)
        .map(|t| Frame {
            id: format!("f{t}"),
            image: Some(big.crop(t * 2, t, w as usize, h as usize).unwrap()),
        })
        .collect();
    let pred = CoarseMapPredictor {
        maps,
        out_factor: 8,
    };
    let c = PipelineConfig {
        flow_downsample: 2,
        ..cfg(32, 8, 3)
    };
    let a = run_stream(&frames, w, h, &pred, FlowSource::Estimated, &c).unwrap();
    let b = run_stream(&frames, w, h, &pred, FlowSource::Estimated, &c).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.fused, y.fused);
        assert_eq!(x.masks, y.masks);
        assert!(x
            .fused
            .cables
            .values()
            .as_slice()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(a[1].flow.is_some());
}

#[test]
fn warp_with_zero_flow_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    for _ in 0..20 {
        let (w, h) = (rng.random_range(1..30), rng.random_range(1..30));
        let m = random_map(&mut rng, w, h);
        assert_eq!(warp(&m, &FlowField::zeros(w, h)).unwrap(), m);
    }
}

struct Broken;

impl Predictor for Broken {
    fn predict(
        &self,
        frame: &FrameContext<'_>,
        batch: &[Patch],
    ) -> Result<Vec<ClassPair<DistanceMask>>> {
        Ok(batch
            .iter()
            .map(|p| {
                let n = if frame.index == 1 && p.x0 == 16 && p.y0 == 8 {
                    3
                } else {
                    2
                };
                let m = DistanceMask::filled(n, n, 1.0, 128).unwrap();
                ClassPair::new(m.clone(), m)
            })
            .collect())
    }
}

#[test]
fn bad_predictor_output_names_frame_and_patch() {
    let err = run_stream(&frames(3), 32, 16, &Broken, FlowSource::Zero, &cfg(8, 4, 3)).unwrap_err();
    match err {
        Error::Predictor { frame, patch, .. } => assert_eq!((frame, patch), (1, 6)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn patch_pixels_replicate_edges() {
    let img = Grid::from_fn(5, 3, |r, c| (r * 10 + c) as f32);
    let ctx = FrameContext {
        index: 0,
        id: "x",
        width: 5,
        height: 3,
        image: Some(&img),
    };
    let p = ctx
        .patch_pixels(&Patch {
            x0: 4,
            y0: 0,
            size: 4,
        })
        .unwrap();
    assert_eq!(p.row(0), &[4.0, 4.0, 4.0, 4.0]);
    assert_eq!(p.row(3), &[24.0, 24.0, 24.0, 24.0]);
}
