use std::collections::{BTreeMap, BTreeSet};

use powerline_core::metrics::{aggregate, fold_split, mean_std, MetricReport, Pooling, Scores};
use powerline_core::{AnnotationSet, ConfusionCounts, Dataset, ImageMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let recordings = rng.random_range(5..25);
    let locations = rng.random_range(3..30);
    let mut items = Vec::new();
    for r in 0..recordings {
        let loc = rng.random_range(0..locations);
        for i in 0..rng.random_range(1..12) {
            items.push(AnnotationSet {
                meta: ImageMeta {
                    image_id: format!("r{r}-{i}"),
                    width: 8,
                    height: 8,
                    recording_id: format!("r{r}"),
                    location_group: format!("loc{loc}"),
                },
                cables: vec![],
                pylons: vec![],
                exclusions: vec![],
            });
        }
    }
    Dataset::new(items).unwrap()
}

#[test]
fn groups_stay_together_and_folds_stay_balanced() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut checked = 0;
    for _ in 0..200 {
        let ds = random_dataset(&mut rng);
        let k = rng.random_range(2..6);
        let Ok(fa) = fold_split(&ds, k, rng.random()) else {
            continue;
        };
        checked += 1;
        let mut by_rec: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        let mut by_loc: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for a in &ds.items {
            let f = fa.fold_of(&a.meta.image_id).unwrap();
            by_rec.entry(&a.meta.recording_id).or_default().insert(f);
            by_loc.entry(&a.meta.location_group).or_default().insert(f);
        }
        assert!(by_rec.values().all(|s| s.len() == 1));
        assert!(by_loc.values().all(|s| s.len() == 1));

        // Largest-first greedy: no fold exceeds another by more than one unit.
        let sizes: Vec<usize> = fa.members().iter().map(|m| m.len()).collect();
        assert!(sizes.iter().all(|&s| s > 0));
        let largest_unit = largest_unit(&ds);
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(
            hi - lo <= largest_unit,
            "{sizes:?} with largest unit {largest_unit}"
        );
    }
    assert!(checked > 100);
}

/// Size of the largest set of images linked through recordings and locations.
fn largest_unit(ds: &Dataset) -> usize {
    let n = ds.items.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&ds.items[i].meta, &ds.items[j].meta);
            if a.recording_id == b.recording_id || a.location_group == b.location_group {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut count: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..n {
        *count.entry(find(&mut parent, i)).or_default() += 1;
    }
    count.into_values().max().unwrap_or(0)
}

#[test]
fn same_seed_same_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ds = random_dataset(&mut rng);
    if let Ok(a) = fold_split(&ds, 2, 9) {
        assert_eq!(a, fold_split(&ds, 2, 9).unwrap());
    }
}

fn counts(rng: &mut ChaCha8Rng, relaxed: bool) -> ConfusionCounts {
    let gt = rng.random_range(0..50);
    let tp = rng.random_range(0..=gt);
    ConfusionCounts {
        tp,
        fp: rng.random_range(0..20),
        fn_: gt - tp,
        gt,
        relaxed,
    }
}

#[test]
fn micro_pooling_equals_hand_summed_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let folds: Vec<Vec<MetricReport>> = (0..5)
        .map(|_| {
            (0..rng.random_range(1..6))
                .map(|_| {
                    let e = counts(&mut rng, false);
                    let mut r = counts(&mut rng, true);
                    r.gt = e.gt;
                    r.fn_ = r.fn_.min(r.gt);
                    MetricReport::from_counts(e, r)
                })
                .collect()
        })
        .collect();
    let agg = aggregate(&folds, Pooling::Micro).unwrap();
    for (fold, scores) in folds.iter().zip(&agg.folds) {
        let (mut tp, mut fp, mut gt) = (0u64, 0u64, 0u64);
        for r in fold {
            tp += r.exact.tp;
            fp += r.exact.fp;
            gt += r.exact.gt;
        }
        let p = match (tp + fp, gt) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (n, _) => tp as f64 / n as f64,
        };
        let r = match (gt, tp + fp) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (g, _) => tp as f64 / g as f64,
        };
        assert_eq!(scores.precision, p);
        assert_eq!(scores.recall, r);
    }
    let (mean, std) = mean_std(&agg.folds);
    assert_eq!(mean, agg.mean);
    assert_eq!(std, agg.std);
    let only: Vec<Scores> = vec![agg.folds[0]];
    let (m1, s1) = mean_std(&only);
    assert_eq!(m1, agg.folds[0]);
    assert_eq!(s1.as_array(), [0.0; 6]);
}
