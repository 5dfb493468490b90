use std::path::PathBuf;

use powerline_core::io::write_plane;
use powerline_core::losses::composite_loss_terms;
use powerline_core::losses::gradcheck::check_composite;
use powerline_core::{DistanceMask, ObjectClass};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{create_dir, path_value, read_mask_checked, write_json_file};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn load(p: &Option<PathBuf>, key: &str, d_max: u32) -> CliResult<DistanceMask> {
    let path = p
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("`{key}` is required for loss-check")))?;
    read_mask_checked(path, d_max, key)
}

/// Composite loss of one prediction/target pair, its per-term breakdown and
/// gradient planes, optionally verified by central differences.
pub fn cmd_loss_check(cfg: &RunConfig) -> CliResult<Value> {
    let loss_cfg = cfg.loss_config();
    let pc = load(&cfg.pred_cables, "pred_cables", cfg.d_max)?;
    let pp = load(&cfg.pred_pylons, "pred_pylons", cfg.d_max)?;
    let gc = load(&cfg.gt_cables, "gt_cables", cfg.d_max)?;
    let gp = load(&cfg.gt_pylons, "gt_pylons", cfg.d_max)?;
    let (value, terms) = composite_loss_terms(&pc, &pp, &gc, &gp, &loss_cfg)?;

    create_dir(&cfg.output)?;
    let grad_c = cfg.output.join("grad_cables.bin");
    let grad_p = cfg.output.join("grad_pylons.bin");
    write_plane(&grad_c, &value.grad_cables)?;
    write_plane(&grad_p, &value.grad_pylons)?;

    let mut record = json!({
        "scalar": value.scalar,
        "terms": terms,
        "config": loss_cfg,
        "gradients": { "cables": path_value(&grad_c), "pylons": path_value(&grad_p) },
    });
    if cfg.fd_check {
        let (w, h) = pc.dims();
        let all: Vec<(ObjectClass, usize, usize)> = ObjectClass::ALL
            .iter()
            .flat_map(|&k| (0..h).flat_map(move |r| (0..w).map(move |c| (k, r, c))))
            .collect();
        let cells: Vec<_> = if all.len() <= cfg.fd_cells {
            all
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut picked = sample(&mut rng, all.len(), cfg.fd_cells).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| all[i]).collect()
        };
        let rep = check_composite(&pc, &pp, &gc, &gp, &loss_cfg, cfg.fd_step, Some(&cells))?;
        record["gradcheck"] = json!(rep);
    }
    let path = cfg.output.join("loss_check.json");
    write_json_file(&path, &record)?;
    record["record"] = path_value(&path);
    Ok(record)
}
