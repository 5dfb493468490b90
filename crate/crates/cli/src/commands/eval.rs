use std::collections::BTreeMap;

use powerline_core::annotations::rasterize_exclusions;
use powerline_core::io::{read_distance_mask, read_json, write_atomic};
use powerline_core::metrics::{
    aggregate, evaluate_image, fold_split, Aggregate, MetricReport, Pooling,
};
use powerline_core::targets::{coarse_dims, downsample_any, Remainder};
use powerline_core::{AnnotationSet, BinaryMask, ClassPair, DistanceMask, Error, ObjectClass};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::report::render_csv;
use super::{create_dir, load_dataset, mask_path, path_value, require_file, write_json_file};
use crate::config::{MissingPolicy, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image_id: String,
    pub fold: usize,
    pub missing_prediction: bool,
    pub cables: MetricReport,
    pub pylons: MetricReport,
}

impl ImageResult {
    pub fn get(&self, class: ObjectClass) -> &MetricReport {
        match class {
            ObjectClass::Cables => &self.cables,
            ObjectClass::Pylons => &self.pylons,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    /// Fold index of each entry in `folds`; folds without images are left out.
    pub fold_ids: Vec<usize>,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pooling: Pooling,
    pub folds: usize,
    pub thresholds: ClassPair<f64>,
    pub missing_policy: MissingPolicy,
    /// Images without a prediction file for at least one class.
    pub missing: Vec<String>,
    /// Images left out under the `skip` policy.
    pub skipped: Vec<String>,
    pub images: Vec<ImageResult>,
    pub aggregate: ClassPair<ClassAggregate>,
}

fn assign_folds(
    cfg: &RunConfig,
    ds: &powerline_core::Dataset,
) -> CliResult<(usize, BTreeMap<String, usize>)> {
    if let Some(path) = &cfg.folds_file {
        require_file(path, "fold assignment")?;
        let map: BTreeMap<String, usize> = read_json(path)?;
        for a in &ds.items {
            if !map.contains_key(&a.meta.image_id) {
                return Err(CliError::Config(format!(
                    "image `{}` has no fold in {}",
                    a.meta.image_id,
                    path.display()
                )));
            }
        }
        let k = map.values().max().map_or(1, |m| m + 1);
        return Ok((k, map));
    }
    if cfg.folds == 1 {
        return Ok((
            1,
            ds.items
                .iter()
                .map(|a| (a.meta.image_id.clone(), 0))
                .collect(),
        ));
    }
    let fa = fold_split(ds, cfg.folds, cfg.seed)?;
    Ok((fa.k, fa.folds))
}

/// Exclusion boxes at the resolution of `gt`, matching whichever remainder
/// rule produced it.
fn coarse_exclusions(
    a: &AnnotationSet,
    gt: &DistanceMask,
    factor: u32,
) -> CliResult<Option<BinaryMask>> {
    if a.exclusions.is_empty() {
        return Ok(None);
    }
    let (w, h) = (a.meta.width as usize, a.meta.height as usize);
    let f = factor as usize;
    let remainder = [Remainder::Crop, Remainder::Pad]
        .into_iter()
        .find(|&r| coarse_dims(w, h, f, r) == gt.dims())
        .ok_or(Error::Dimension {
            expected: coarse_dims(w, h, f, Remainder::Crop),
            found: gt.dims(),
        })?;
    let full = rasterize_exclusions(&a.exclusions, a.meta.width, a.meta.height)?;
    Ok(Some(downsample_any(&full, f, remainder)?))
}

enum Outcome {
    Scored(Box<ImageResult>),
    Skipped(String),
}

fn evaluate_one(cfg: &RunConfig, a: &AnnotationSet, fold: usize) -> CliResult<Outcome> {
    let id = &a.meta.image_id;
    let (targets, predictions) = (cfg.targets_path(), cfg.predictions_path());
    let mut missing = false;
    let mut reports = Vec::with_capacity(2);
    for class in ObjectClass::ALL {
        let gt_path = mask_path(&targets, id, class);
        require_file(&gt_path, "target mask")?;
        let (gt, meta) = read_distance_mask(&gt_path)?;
        let pred_path = mask_path(&predictions, id, class);
        let pred = if pred_path.is_file() {
            read_distance_mask(&pred_path)?.0
        } else {
            missing = true;
            match cfg.missing {
                MissingPolicy::Fail => {
                    return Err(CliError::MissingInput {
                        path: pred_path,
                        what: "prediction mask".into(),
                    })
                }
                MissingPolicy::Skip => return Ok(Outcome::Skipped(id.clone())),
                MissingPolicy::Empty => {
                    DistanceMask::filled(gt.width(), gt.height(), 1.0, gt.d_max())?
                }
            }
        };
        let exclusions = match class {
            ObjectClass::Pylons => coarse_exclusions(a, &gt, meta.factor)?,
            ObjectClass::Cables => None,
        };
        reports.push(evaluate_image(
            &pred,
            &gt,
            cfg.threshold_for(class),
            exclusions.as_ref(),
        )?);
    }
    Ok(Outcome::Scored(Box::new(ImageResult {
        image_id: id.clone(),
        fold,
        missing_prediction: missing,
        cables: reports[0],
        pylons: reports[1],
    })))
}

pub fn cmd_eval(cfg: &RunConfig) -> CliResult<Value> {
    let ds = load_dataset(cfg)?;
    let (k, folds) = assign_folds(cfg, &ds)?;
    let outcomes: Vec<Outcome> = ds
        .items
        .par_iter()
        .map(|a| evaluate_one(cfg, a, folds[&a.meta.image_id]))
        .collect::<CliResult<_>>()?;

    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Scored(r) => images.push(*r),
            Outcome::Skipped(id) => skipped.push(id),
        }
    }
    let mut missing: Vec<String> = images
        .iter()
        .filter(|r| r.missing_prediction)
        .map(|r| r.image_id.clone())
        .chain(skipped.iter().cloned())
        .collect();
    missing.sort();

    let per_class = |class: ObjectClass| -> CliResult<ClassAggregate> {
        let mut by_fold: Vec<Vec<MetricReport>> = vec![Vec::new(); k];
        for r in &images {
            by_fold[r.fold].push(*r.get(class));
        }
        let fold_ids: Vec<usize> = (0..k).filter(|&f| !by_fold[f].is_empty()).collect();
        let filled: Vec<Vec<MetricReport>> =
            by_fold.into_iter().filter(|f| !f.is_empty()).collect();
        if filled.is_empty() {
            return Err(CliError::Config("no images left to evaluate".into()));
        }
        Ok(ClassAggregate {
            fold_ids,
            aggregate: aggregate(&filled, cfg.pooling)?,
        })
    };
    let report = EvalReport {
        pooling: cfg.pooling,
        folds: k,
        thresholds: ClassPair::new(cfg.cable_threshold, cfg.pylon_threshold),
        missing_policy: cfg.missing,
        missing,
        skipped,
        aggregate: ClassPair::new(
            per_class(ObjectClass::Cables)?,
            per_class(ObjectClass::Pylons)?,
        ),
        images,
    };

    create_dir(&cfg.output)?;
    let json_path = cfg.output.join("eval.json");
    let csv_path = cfg.output.join("eval.csv");
    write_json_file(&json_path, &report)?;
    write_atomic(&csv_path, render_csv(&report)?.as_bytes())?;
    Ok(json!({
        "report": path_value(&json_path),
        "csv": path_value(&csv_path),
        "images": report.images.len(),
        "missing": report.missing.len(),
        "skipped": report.skipped.len(),
        "quality": {
            "cables": report.aggregate.cables.aggregate.mean.quality,
            "pylons": report.aggregate.pylons.aggregate.mean.quality,
        },
    }))
}
