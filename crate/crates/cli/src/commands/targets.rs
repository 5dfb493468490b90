use powerline_core::io::write_distance_mask;
use powerline_core::pipeline::degraded_oracle;
use powerline_core::targets::gt_targets;
use powerline_core::ObjectClass;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{create_dir, derive_seed, load_dataset, mask_path, path_value, write_json_file};
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Serialize)]
struct MaskEntry {
    image_id: String,
    object_class: ObjectClass,
    file: String,
    width: usize,
    height: usize,
}

/// Writes cable and pylon distance masks for every annotated image. With
/// `as_predictions`, writes seeded degraded copies (`noise_sigma`, `dropout`)
/// into the predictions directory instead.
pub fn cmd_gen_targets(cfg: &RunConfig, as_predictions: bool) -> CliResult<Value> {
    let ds = load_dataset(cfg)?;
    let dir = if as_predictions {
        cfg.predictions_path()
    } else {
        cfg.targets_path()
    };
    create_dir(&dir)?;

    let entries: Vec<Vec<MaskEntry>> = ds
        .items
        .par_iter()
        .map(|a| -> CliResult<Vec<MaskEntry>> {
            let t = gt_targets(
                a,
                cfg.d_max,
                cfg.factor as usize,
                cfg.remainder,
                cfg.cable_thickness,
            )?;
            let mut out = Vec::with_capacity(2);
            for class in ObjectClass::ALL {
                let id = &a.meta.image_id;
                let mut dm = t.get(class).clone();
                if as_predictions {
                    dm = degraded_oracle(
                        &dm,
                        cfg.noise_sigma,
                        cfg.dropout,
                        derive_seed(cfg.seed, id, class),
                    )?;
                }
                let path = mask_path(&dir, id, class);
                write_distance_mask(&path, &dm, cfg.factor)?;
                out.push(MaskEntry {
                    image_id: id.clone(),
                    object_class: class,
                    file: path.file_name().unwrap().to_string_lossy().into_owned(),
                    width: dm.width(),
                    height: dm.height(),
                });
            }
            Ok(out)
        })
        .collect::<CliResult<_>>()?;
    let entries: Vec<MaskEntry> = entries.into_iter().flatten().collect();

    let manifest = dir.join("manifest.json");
    let mut doc = json!({
        "kind": if as_predictions { "predictions" } else { "targets" },
        "d_max": cfg.d_max,
        "factor": cfg.factor,
        "remainder": cfg.remainder,
        "cable_thickness": cfg.cable_thickness,
        "masks": entries,
    });
    if as_predictions {
        doc["noise_sigma"] = json!(cfg.noise_sigma);
        doc["dropout"] = json!(cfg.dropout);
        doc["seed"] = json!(cfg.seed);
    }
    write_json_file(&manifest, &doc)?;
    Ok(json!({
        "directory": path_value(&dir),
        "manifest": path_value(&manifest),
        "masks": doc["masks"].as_array().map(|m| m.len()).unwrap_or(0),
    }))
}
