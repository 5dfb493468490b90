//! Exact and relaxed segmentation scores, fold splitting and aggregation.
//!
//! Relaxed scores tolerate localization errors of one cell in the
//! 8-neighbourhood: a predicted cell next to a ground-truth cell is a true
//! positive, and a ground-truth cell next to a predicted cell is found.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::Dataset;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, DistanceMask, Grid};
use crate::targets::binarize;

/// Pixel counts behind a set of scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Ground-truth foreground cells. Equals `tp + fn` for exact counts; the
    /// relaxed true positives are counted on the prediction side, so it has
    /// to be carried separately there.
    pub gt: u64,
    pub relaxed: bool,
}

impl ConfusionCounts {
    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }

    /// Precision, or correctness for relaxed counts.
    pub fn precision(&self) -> f64 {
        match (self.predicted(), self.gt) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (p, _) => self.tp as f64 / p as f64,
        }
    }

    /// Recall, or completeness for relaxed counts.
    pub fn recall(&self) -> f64 {
        match (self.gt, self.predicted()) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (g, _) => (g - self.fn_) as f64 / g as f64,
        }
    }

    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        debug_assert_eq!(self.relaxed, other.relaxed);
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            gt: self.gt + other.gt,
            relaxed: self.relaxed,
        }
    }

    fn empty(relaxed: bool) -> Self {
        ConfusionCounts {
            relaxed,
            ..Default::default()
        }
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Quality from correctness and completeness:
/// `corr * comp / (corr + comp - corr * comp)`.
///
/// When relaxed true positives agree on both sides this is exactly
/// `TP / (TP + FP + FN)`. Unlike that ratio with prediction-side TP, it never
/// exceeds either of its inputs.
pub fn quality_score(correctness: f64, completeness: f64) -> f64 {
    let denom = correctness + completeness - correctness * completeness;
    if denom > 0.0 {
        // The exact value never exceeds either input; the clamp only removes
        // rounding in `denom` (e.g. `a + 1 - a != 1`).
        (correctness * completeness / denom)
            .min(correctness)
            .min(completeness)
    } else {
        0.0
    }
}

/// The six scores without their counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correctness: f64,
    pub completeness: f64,
    pub quality: f64,
}

impl Scores {
    pub const NAMES: [&'static str; 6] = [
        "precision",
        "recall",
        "f1",
        "correctness",
        "completeness",
        "quality",
    ];

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.precision,
            self.recall,
            self.f1,
            self.correctness,
            self.completeness,
            self.quality,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Scores {
            precision: v[0],
            recall: v[1],
            f1: v[2],
            correctness: v[3],
            completeness: v[4],
            quality: v[5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correctness: f64,
    pub completeness: f64,
    pub quality: f64,
    pub exact: ConfusionCounts,
    pub relaxed: ConfusionCounts,
}

impl MetricReport {
    pub fn from_counts(exact: ConfusionCounts, relaxed: ConfusionCounts) -> Self {
        let (precision, recall) = (exact.precision(), exact.recall());
        let (correctness, completeness) = (relaxed.precision(), relaxed.recall());
        MetricReport {
            precision,
            recall,
            f1: f1_score(precision, recall),
            correctness,
            completeness,
            quality: quality_score(correctness, completeness),
            exact,
            relaxed,
        }
    }

    pub fn scores(&self) -> Scores {
        Scores {
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            correctness: self.correctness,
            completeness: self.completeness,
            quality: self.quality,
        }
    }

    /// Scores of the summed counts.
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Self {
        let (mut exact, mut relaxed) =
            (ConfusionCounts::empty(false), ConfusionCounts::empty(true));
        for r in reports {
            exact = exact.merge(&r.exact);
            relaxed = relaxed.merge(&r.relaxed);
        }
        MetricReport::from_counts(exact, relaxed)
    }
}

/// Chebyshev radius-1 dilation; no wraparound at the borders.
pub fn dilate8(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = Grid::new(w, h, false);
    for (r, c, v) in mask.indexed() {
        if !v {
            continue;
        }
        for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                out[(rr, cc)] = true;
            }
        }
    }
    out
}

fn apply_ignore(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&BinaryMask>,
) -> Result<(BinaryMask, BinaryMask)> {
    pred.ensure_same_dims(gt)?;
    match ignore {
        Some(ig) => Ok((pred.difference(ig)?, gt.difference(ig)?)),
        None => Ok((pred.clone(), gt.clone())),
    }
}

/// Exact pixel counts with ignored cells removed from both masks.
pub fn exact_counts(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&BinaryMask>,
) -> Result<ConfusionCounts> {
    let (pred, gt) = apply_ignore(pred, gt, ignore)?;
    let tp = pred.intersection(&gt)?.count_ones() as u64;
    let predicted = pred.count_ones() as u64;
    let positives = gt.count_ones() as u64;
    Ok(ConfusionCounts {
        tp,
        fp: predicted - tp,
        fn_: positives - tp,
        gt: positives,
        relaxed: false,
    })
}

/// Relaxed counts: TP = |pred ∩ dilate8(gt)|, FN = |gt \ dilate8(pred)|.
/// Ignored cells are deleted before dilating.
pub fn relaxed_counts(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&BinaryMask>,
) -> Result<ConfusionCounts> {
    let (pred, gt) = apply_ignore(pred, gt, ignore)?;
    let tp = pred.intersection(&dilate8(&gt))?.count_ones() as u64;
    let fn_ = gt.difference(&dilate8(&pred))?.count_ones() as u64;
    Ok(ConfusionCounts {
        tp,
        fp: pred.count_ones() as u64 - tp,
        fn_,
        gt: gt.count_ones() as u64,
        relaxed: true,
    })
}

/// `(precision, recall, f1, counts)`.
pub fn pixel_prf(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&BinaryMask>,
) -> Result<(f64, f64, f64, ConfusionCounts)> {
    let c = exact_counts(pred, gt, ignore)?;
    let (p, r) = (c.precision(), c.recall());
    Ok((p, r, f1_score(p, r), c))
}

/// `(correctness, completeness, quality, counts)`.
pub fn ccq(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&BinaryMask>,
) -> Result<(f64, f64, f64, ConfusionCounts)> {
    let c = relaxed_counts(pred, gt, ignore)?;
    let (corr, comp) = (c.precision(), c.recall());
    Ok((corr, comp, quality_score(corr, comp), c))
}

/// Exact and relaxed scores of two binary masks.
pub fn evaluate_binary(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: Option<&BinaryMask>,
) -> Result<MetricReport> {
    Ok(MetricReport::from_counts(
        exact_counts(pred, gt, ignore)?,
        relaxed_counts(pred, gt, ignore)?,
    ))
}

/// Binarizes both distance masks at `threshold` input pixels and scores them.
/// `exclusions` must already be at the masks' resolution.
pub fn evaluate_image(
    pred: &DistanceMask,
    gt: &DistanceMask,
    threshold: f64,
    exclusions: Option<&BinaryMask>,
) -> Result<MetricReport> {
    pred.values().ensure_same_dims(gt.values())?;
    if let Some(ex) = exclusions {
        pred.values().ensure_same_dims(ex)?;
    }
    evaluate_binary(
        &binarize(pred, threshold)?,
        &binarize(gt, threshold)?,
        exclusions,
    )
}

/// How per-image results become one score per fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Sum counts over the fold's images, then score.
    #[default]
    Micro,
    /// Score each image, then average.
    Macro,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Pooling::Micro),
            "macro" => Ok(Pooling::Macro),
            other => Err(Error::invalid(format!("unknown pooling mode `{other}`"))),
        }
    }
}

/// Per-fold scores with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub folds: Vec<Scores>,
    pub mean: Scores,
    pub std: Scores,
}

pub fn fold_scores(reports: &[MetricReport], pooling: Pooling) -> Scores {
    match pooling {
        Pooling::Micro => MetricReport::pooled(reports).scores(),
        Pooling::Macro => {
            if reports.is_empty() {
                return MetricReport::pooled(reports).scores();
            }
            let mut acc = [0.0; 6];
            for r in reports {
                for (a, v) in acc.iter_mut().zip(r.scores().as_array()) {
                    *a += v;
                }
            }
            Scores::from_array(acc.map(|a| a / reports.len() as f64))
        }
    }
}

/// Aggregates per-image reports grouped by fold.
pub fn aggregate(folds: &[Vec<MetricReport>], pooling: Pooling) -> Result<Aggregate> {
    if folds.is_empty() {
        return Err(Error::invalid("cannot aggregate zero folds"));
    }
    let per_fold: Vec<Scores> = folds.iter().map(|f| fold_scores(f, pooling)).collect();
    let (mean, std) = mean_std(&per_fold);
    Ok(Aggregate {
        folds: per_fold,
        mean,
        std,
    })
}

/// Mean and population standard deviation of each score.
pub fn mean_std(values: &[Scores]) -> (Scores, Scores) {
    let n = values.len() as f64;
    let mut mean = [0.0; 6];
    for s in values {
        for (m, v) in mean.iter_mut().zip(s.as_array()) {
            *m += v;
        }
    }
    let mean = mean.map(|m| m / n);
    let mut var = [0.0; 6];
    for s in values {
        for ((acc, v), m) in var.iter_mut().zip(s.as_array()).zip(mean) {
            *acc += (v - m) * (v - m);
        }
    }
    (
        Scores::from_array(mean),
        Scores::from_array(var.map(|v| (v / n).sqrt())),
    )
}

/// Fold index per image id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, image_id: &str) -> Option<usize> {
        self.folds.get(image_id).copied()
    }

    /// Image ids per fold, in id order.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k];
        for (id, &f) in &self.folds {
            out[f].push(id.as_str());
        }
        out
    }
}

/// Splits images into `k` folds without separating a recording or a location
/// group. Units (recordings linked through shared location groups) are placed
/// largest first into the currently smallest fold; the seed only breaks ties
/// between equally sized units.
pub fn fold_split(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let recordings: BTreeSet<&str> = ds
        .items
        .iter()
        .map(|a| a.meta.recording_id.as_str())
        .collect();
    if recordings.len() < k {
        return Err(Error::invalid(format!(
            "{} recordings cannot fill {k} folds",
            recordings.len()
        )));
    }

    // Union recordings that share a location group.
    let rec_index: BTreeMap<&str, usize> = recordings
        .iter()
        .enumerate()
        .map(|(i, r)| (*r, i))
        .collect();
    let mut parent: Vec<usize> = (0..recordings.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut first_rec_of_loc: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &ds.items {
        let r = rec_index[a.meta.recording_id.as_str()];
        let l = *first_rec_of_loc
            .entry(a.meta.location_group.as_str())
            .or_insert(r);
        let (ra, rb) = (find(&mut parent, r), find(&mut parent, l));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut units: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for a in &ds.items {
        let root = find(&mut parent, rec_index[a.meta.recording_id.as_str()]);
        units
            .entry(root)
            .or_default()
            .push(a.meta.image_id.as_str());
    }
    if units.len() < k {
        return Err(Error::invalid(format!(
            "recordings share locations so that only {} independent groups remain for {k} folds",
            units.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ordered: Vec<(usize, u64, Vec<&str>)> = units
        .into_values()
        .map(|ids| (ids.len(), rng.random::<u64>(), ids))
        .collect();
    ordered.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut sizes = vec![0usize; k];
    let mut folds = BTreeMap::new();
    for (size, _, ids) in ordered {
        let target = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
        sizes[target] += size;
        for id in ids {
            folds.insert(id.to_string(), target);
        }
    }
    Ok(FoldAssignment { k, folds })
}
