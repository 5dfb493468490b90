//! One function per subcommand. Each returns a JSON summary of what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use powerline_core::annotations::parse_annotations;
use powerline_core::io::read_distance_mask;
use powerline_core::sampler::stable_hash;
use powerline_core::{Dataset, DistanceMask, ObjectClass};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

mod data;
mod eval;
mod loss_check;
mod pipeline_sim;
mod report;
mod targets;

pub use data::{cmd_fold_split, cmd_sample, cmd_synth};
pub use eval::{cmd_eval, EvalReport, ImageResult};
pub use loss_check::cmd_loss_check;
pub use pipeline_sim::{cmd_pipeline_sim, FrameEntry, FrameManifest};
pub use report::{cmd_report, render_csv, render_table, ReportFormat};
pub use targets::cmd_gen_targets;

/// `<dir>/<image_id>.<class>.png`
pub fn mask_path(dir: &Path, image_id: &str, class: ObjectClass) -> PathBuf {
    dir.join(format!("{image_id}.{}.png", class.as_str()))
}

/// Per-image, per-class seed so results do not depend on processing order.
pub fn derive_seed(seed: u64, image_id: &str, class: ObjectClass) -> u64 {
    seed ^ stable_hash(format!("{image_id}/{}", class.as_str()).as_bytes())
}

pub(crate) fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            path: path.to_path_buf(),
            what: what.to_string(),
        })
    }
}

/// Reads a distance mask and checks its sidecar against the configured `d_max`.
pub(crate) fn read_mask_checked(path: &Path, d_max: u32, what: &str) -> CliResult<DistanceMask> {
    require_file(path, what)?;
    let (dm, meta) = read_distance_mask(path)?;
    if meta.d_max != d_max {
        return Err(CliError::Config(format!(
            "{} was written with d_max {}, config says {d_max}",
            path.display(),
            meta.d_max
        )));
    }
    Ok(dm)
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let path = cfg.annotations_path()?;
    require_file(path, "annotation file")?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_annotations(&text)?)
}

pub(crate) fn write_json_file(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    Ok(powerline_core::io::write_json(path, value)?)
}

pub(crate) fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}
