use std::collections::BTreeMap;

use powerline_core::annotations::rasterize_cables;
use powerline_core::sampler::{candidate_region, sample_patches};
use powerline_core::{AnnotationSet, BBox, ImageMeta, ObjectClass, Point, Polyline, SampleSpec};

fn scene(w: u32, h: u32) -> AnnotationSet {
    AnnotationSet {
        meta: ImageMeta {
            image_id: "scene-7".into(),
            width: w,
            height: h,
            recording_id: "r".into(),
            location_group: "l".into(),
        },
        cables: vec![Polyline::new(vec![Point::new(5.0, 60.5), Point::new(90.0, 20.5)]).unwrap()],
        pylons: vec![BBox::new(40.0, 40.0, 43.0, 44.0).unwrap()],
        exclusions: vec![],
    }
}

#[test]
fn centers_are_uniform_over_the_candidate_region() {
    let a = scene(96, 96);
    let spec = SampleSpec {
        patch_size: 16,
        max_center_distance: 2.0,
        target_classes: vec![ObjectClass::Pylons],
        seed: 99,
        count: 6000,
        ..SampleSpec::default()
    };
    let region = candidate_region(&a, &spec).unwrap();
    let cells = region.count_ones();
    assert!(cells > 20 && cells < 60, "{cells}");
    let mut hist: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for p in sample_patches(&a, &spec).unwrap() {
        *hist.entry(p.center()).or_default() += 1;
    }
    assert!(hist.keys().all(|&(x, y)| region[(y as usize, x as usize)]));
    let expected = spec.count as f64 / cells as f64;
    let chi2: f64 = region
        .indexed()
        .filter(|t| t.2)
        .map(|(r, c, _)| {
            let o = *hist.get(&(c as u32, r as u32)).unwrap_or(&0) as f64;
            (o - expected).powi(2) / expected
        })
        .sum();
    // Well above the 99.9th percentile of chi-square with <= 60 degrees of freedom.
    assert!(chi2 < 100.0, "chi2 = {chi2} over {cells} cells");
}

#[test]
fn every_center_is_near_an_object_and_patch_fits() {
    let a = scene(128, 100);
    for seed in 0..10 {
        let spec = SampleSpec {
            patch_size: 32,
            max_center_distance: 12.0,
            target_classes: vec![ObjectClass::Cables, ObjectClass::Pylons],
            seed,
            count: 200,
            ..SampleSpec::default()
        };
        let cables = rasterize_cables(&a.cables, 128, 100, 5).unwrap();
        let objects: Vec<(f64, f64)> = cables
            .indexed()
            .filter(|t| t.2)
            .map(|(r, c, _)| (c as f64, r as f64))
            .chain((40..43).flat_map(|x| (40..44).map(move |y| (x as f64, y as f64))))
            .collect();
        for p in sample_patches(&a, &spec).unwrap() {
            assert!(p.x0 + p.size <= 128 && p.y0 + p.size <= 100);
            let (cx, cy) = p.center();
            let d = objects
                .iter()
                .map(|&(x, y)| ((x - cx as f64).powi(2) + (y - cy as f64).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 12.0, "center ({cx}, {cy}) is {d} px away");
        }
    }
}

#[test]
fn draws_are_reproducible_and_prefix_stable() {
    let a = scene(96, 96);
    let spec = SampleSpec {
        patch_size: 16,
        max_center_distance: 8.0,
        seed: 5,
        count: 50,
        ..SampleSpec::default()
    };
    let all = sample_patches(&a, &spec).unwrap();
    assert_eq!(all, sample_patches(&a, &spec).unwrap());
    let few = sample_patches(
        &a,
        &SampleSpec {
            count: 10,
            ..spec.clone()
        },
    )
    .unwrap();
    assert_eq!(&all[..10], &few[..]);
    let other = sample_patches(&a, &SampleSpec { seed: 6, ..spec }).unwrap();
    assert_ne!(all, other);
}
