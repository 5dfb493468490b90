use powerline_core::annotations::{hflip_annotations, rasterize_cables, rasterize_pylons};
use powerline_core::metrics::{ccq, evaluate_binary, pixel_prf};
use powerline_core::targets::{
    binarize, clamp_normalize, edt, gt_targets, minpool, squared_edt, Remainder,
};
use powerline_core::{
    AnnotationSet, BBox, BinaryMask, DistanceMask, Grid, ImageMeta, Point, Polyline,
};
use proptest::prelude::*;

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..max, 1..max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(proptest::bool::weighted(0.15), w * h)
            .prop_map(move |v| Grid::from_vec(w, h, v).unwrap())
    })
}

fn pair_strategy(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..max, 1..max).prop_flat_map(|(w, h)| {
        let one = proptest::collection::vec(proptest::bool::weighted(0.2), w * h);
        (one.clone(), one).prop_map(move |(a, b)| {
            (
                Grid::from_vec(w, h, a).unwrap(),
                Grid::from_vec(w, h, b).unwrap(),
            )
        })
    })
}

// Quarter-pixel coordinates keep every flip exact in floating point.
fn quarter(lo: i32, hi: i32) -> impl Strategy<Value = f64> {
    (lo * 4..hi * 4).prop_map(|v| v as f64 / 4.0)
}

fn scene_strategy() -> impl Strategy<Value = AnnotationSet> {
    (4u32..12, 4u32..12).prop_flat_map(|(bw, bh)| {
        let (w, h) = (bw * 4, bh * 4);
        let (wi, hi) = (w as i32, h as i32);
        let polyline = proptest::collection::vec((quarter(-2, wi + 2), quarter(-2, hi + 2)), 2..5);
        let bbox = (0..wi - 1, 0..hi - 1, 1..8i32, 1..8i32);
        (
            proptest::collection::vec(polyline, 0..3),
            proptest::collection::vec(bbox, 0..3),
        )
            .prop_map(move |(lines, boxes)| AnnotationSet {
                meta: ImageMeta {
                    image_id: "p".into(),
                    width: w,
                    height: h,
                    recording_id: "r".into(),
                    location_group: "l".into(),
                },
                cables: lines
                    .into_iter()
                    .filter_map(|pts| {
                        Polyline::new(pts.into_iter().map(|(x, y)| Point::new(x, y)).collect()).ok()
                    })
                    .collect(),
                // Integer box edges never pass through a pixel center.
                pylons: boxes
                    .into_iter()
                    .map(|(x, y, bw, bh)| {
                        BBox::new(x as f64, y as f64, (x + bw) as f64, (y + bh) as f64).unwrap()
                    })
                    .collect(),
                exclusions: vec![],
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 96,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn rasters_commute_with_hflip(a in scene_strategy()) {
        let (w, h) = (a.meta.width, a.meta.height);
        let f = hflip_annotations(&a);
        prop_assert_eq!(rasterize_cables(&f.cables, w, h, 5).unwrap(), rasterize_cables(&a.cables, w, h, 5).unwrap().hflip());
        prop_assert_eq!(rasterize_pylons(&f.pylons, w, h).unwrap(), rasterize_pylons(&a.pylons, w, h).unwrap().hflip());
        prop_assert_eq!(hflip_annotations(&f), a);
    }

    #[test]
    fn targets_commute_with_hflip_when_blocks_align(a in scene_strategy()) {
        let factor = 4;
        let t = gt_targets(&a, 128, factor, Remainder::Crop, 5).unwrap();
        let f = gt_targets(&hflip_annotations(&a), 128, factor, Remainder::Crop, 5).unwrap();
        prop_assert_eq!(f.cables, t.cables.hflip());
        prop_assert_eq!(f.pylons, t.pylons.hflip());
    }

    #[test]
    fn more_foreground_never_increases_distance(m in mask_strategy(20), extra in any::<u64>()) {
        let mut bigger = m.clone();
        let n = bigger.len();
        bigger.as_mut_slice()[(extra as usize) % n] = true;
        let (a, b) = (squared_edt(&m), squared_edt(&bigger));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!(y <= x);
        }
    }

    #[test]
    fn edt_is_one_lipschitz(m in mask_strategy(20)) {
        prop_assume!(m.count_ones() > 0);
        let d = edt(&m);
        let (w, h) = d.dims();
        for r in 0..h {
            for c in 0..w {
                if c + 1 < w { prop_assert!((d[(r, c)] - d[(r, c + 1)]).abs() <= 1.0 + 1e-12); }
                if r + 1 < h { prop_assert!((d[(r, c)] - d[(r + 1, c)]).abs() <= 1.0 + 1e-12); }
                if m[(r, c)] { prop_assert_eq!(d[(r, c)], 0.0); } else { prop_assert!(d[(r, c)] >= 1.0); }
            }
        }
    }

    #[test]
    fn normalized_targets_stay_in_range(m in mask_strategy(24), d_max in 1u32..40, factor in 1usize..5) {
        let dm = clamp_normalize(&edt(&m), d_max).unwrap();
        prop_assert!(dm.values().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        let pooled = minpool(&dm, factor).unwrap();
        prop_assert_eq!(pooled.dims(), (m.width().div_ceil(factor), m.height().div_ceil(factor)));
        prop_assert!(pooled.values().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        // Binarizing at d_max keeps exactly the cells closer than d_max.
        let b = binarize(&dm, d_max as f64).unwrap();
        let d = edt(&m);
        for (x, y) in b.as_slice().iter().zip(d.as_slice()) {
            prop_assert_eq!(*x, *y < d_max as f64);
        }
    }

    #[test]
    fn relaxed_scores_dominate_exact_ones((pred, gt) in pair_strategy(24)) {
        let (p, r, f1, _) = pixel_prf(&pred, &gt, None).unwrap();
        let (corr, comp, q, _) = ccq(&pred, &gt, None).unwrap();
        prop_assert!(corr >= p && comp >= r);
        prop_assert!(q <= corr.min(comp) + 1e-15);
        for v in [p, r, f1, corr, comp, q] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let rep = evaluate_binary(&gt, &gt, None).unwrap();
        prop_assert_eq!(rep.quality, 1.0);
    }

    #[test]
    fn distance_mask_rejects_out_of_range(v in prop_oneof![-10.0..-1e-9f64, 1.0 + 1e-9..10.0f64]) {
        prop_assert!(DistanceMask::new(Grid::new(2, 2, v), 128).is_err());
    }
}
