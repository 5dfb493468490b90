use powerline_core::annotations::to_document;
use powerline_core::io::write_atomic;
use powerline_core::metrics::fold_split;
use powerline_core::sampler::sample_patches;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{create_dir, load_dataset, path_value, write_json_file};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::synth::{synth_dataset, SynthSpec};

pub fn cmd_synth(cfg: &RunConfig) -> CliResult<Value> {
    let ds = synth_dataset(&SynthSpec::from_config(cfg))?;
    create_dir(&cfg.output)?;
    let path = cfg.output.join("annotations.json");
    write_atomic(&path, to_document(&ds).as_bytes())?;
    let count =
        |f: fn(&powerline_core::AnnotationSet) -> usize| ds.items.iter().map(f).sum::<usize>();
    Ok(json!({
        "annotations": path_value(&path),
        "images": ds.len(),
        "cables": count(|a| a.cables.len()),
        "pylons": count(|a| a.pylons.len()),
        "exclusions": count(|a| a.exclusions.len()),
    }))
}

/// Writes `{image_id: fold}`.
pub fn cmd_fold_split(cfg: &RunConfig) -> CliResult<Value> {
    let ds = load_dataset(cfg)?;
    let fa = fold_split(&ds, cfg.folds, cfg.seed)?;
    create_dir(&cfg.output)?;
    let path = cfg.output.join("folds.json");
    write_json_file(&path, &fa.folds)?;
    let sizes: Vec<usize> = fa.members().iter().map(|m| m.len()).collect();
    Ok(json!({ "folds": path_value(&path), "k": fa.k, "fold_sizes": sizes }))
}

#[derive(Debug, Serialize)]
struct PatchRecord {
    image_id: String,
    x0: u32,
    y0: u32,
    size: u32,
}

pub fn cmd_sample(cfg: &RunConfig) -> CliResult<Value> {
    let ds = load_dataset(cfg)?;
    let spec = cfg.sample_spec();
    let per_image: Vec<Vec<PatchRecord>> = ds
        .items
        .par_iter()
        .map(|a| -> CliResult<Vec<PatchRecord>> {
            Ok(sample_patches(a, &spec)?
                .into_iter()
                .map(|p| PatchRecord {
                    image_id: a.meta.image_id.clone(),
                    x0: p.x0,
                    y0: p.y0,
                    size: p.size,
                })
                .collect())
        })
        .collect::<CliResult<_>>()?;
    let without = per_image.iter().filter(|p| p.is_empty()).count();
    let records: Vec<PatchRecord> = per_image.into_iter().flatten().collect();
    create_dir(&cfg.output)?;
    let path = cfg.output.join("patches.json");
    write_json_file(&path, &records)?;
    Ok(json!({
        "patches": path_value(&path),
        "count": records.len(),
        "images_without_candidates": without,
    }))
}
