use std::path::{Path, PathBuf};

use powerline_core::annotations::{rasterize_cables, rasterize_pylons};
use powerline_core::io::{read_flow, read_gray_frame, read_json, write_binary_mask};
use powerline_core::pipeline::{
    degraded_oracle, run_stream, stitched_dims, CoarseMapPredictor, FlowSource, Frame, FrameOutput,
};
use powerline_core::targets::{gt_targets, Remainder};
use powerline_core::{ClassPair, DistanceMask, FlowField, Grid, ObjectClass};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    create_dir, derive_seed, path_value, read_mask_checked, require_file, write_json_file,
};
use crate::config::{FlowMode, PredictorMode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::synth::{synth_image, SynthSpec};

/// Frame list for `pipeline-sim`. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameManifest {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub id: String,
    /// Grayscale frame, required for estimated flow.
    #[serde(default)]
    pub image: Option<PathBuf>,
    /// Coarse cable mask: ground truth for the oracle predictor, the
    /// prediction itself for the file predictor.
    #[serde(default)]
    pub cables: Option<PathBuf>,
    #[serde(default)]
    pub pylons: Option<PathBuf>,
    /// Flow from the previous frame, required for external flow from the
    /// second frame on.
    #[serde(default)]
    pub flow: Option<PathBuf>,
}

struct Stream {
    width: u32,
    height: u32,
    frames: Vec<Frame>,
    /// Coarse maps per frame, before any degradation.
    maps: Vec<ClassPair<DistanceMask>>,
    flows: FlowSource,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_manifest(cfg: &RunConfig, path: &Path) -> CliResult<Stream> {
    require_file(path, "frame manifest")?;
    let m: FrameManifest = read_json(path)?;
    if m.frames.is_empty() {
        return Err(CliError::Config(format!(
            "{} lists no frames",
            path.display()
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let coarse = stitched_dims(m.width, m.height, cfg.out_factor);
    let need = |p: &Option<PathBuf>, what: &str, id: &str| -> CliResult<PathBuf> {
        p.as_deref()
            .map(|p| resolve(base, p))
            .ok_or_else(|| CliError::Config(format!("frame `{id}` has no {what}")))
    };

    let maps = m
        .frames
        .par_iter()
        .map(|f| -> CliResult<ClassPair<DistanceMask>> {
            let mut pair = Vec::with_capacity(2);
            for (class, p) in [
                (ObjectClass::Cables, &f.cables),
                (ObjectClass::Pylons, &f.pylons),
            ] {
                let path = need(p, &format!("{class} mask"), &f.id)?;
                let dm = read_mask_checked(&path, cfg.d_max, "coarse mask")?;
                if dm.dims() != coarse {
                    return Err(CliError::Config(format!(
                        "{} is {}x{}, expected {}x{} for a {}x{} frame at out_factor {}",
                        path.display(),
                        dm.width(),
                        dm.height(),
                        coarse.0,
                        coarse.1,
                        m.width,
                        m.height,
                        cfg.out_factor
                    )));
                }
                pair.push(dm);
            }
            let pylons = pair.pop().unwrap();
            Ok(ClassPair::new(pair.pop().unwrap(), pylons))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let frames = m
        .frames
        .par_iter()
        .map(|f| -> CliResult<Frame> {
            let image = match (&f.image, cfg.flow) {
                (Some(p), _) => {
                    let p = resolve(base, p);
                    require_file(&p, "frame image")?;
                    Some(read_gray_frame(&p)?)
                }
                (None, FlowMode::Estimated) => {
                    return Err(CliError::Config(format!(
                        "frame `{}` has no image, needed for estimated flow",
                        f.id
                    )))
                }
                (None, _) => None,
            };
            Ok(Frame {
                id: f.id.clone(),
                image,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let flows = match cfg.flow {
        FlowMode::Zero => FlowSource::Zero,
        FlowMode::Estimated => FlowSource::Estimated,
        FlowMode::External => {
            let fields = m
                .frames
                .iter()
                .enumerate()
                .map(|(t, f)| -> CliResult<FlowField> {
                    if t == 0 && f.flow.is_none() {
                        return Ok(FlowField::zeros(coarse.0, coarse.1));
                    }
                    let p = need(&f.flow, "flow field", &f.id)?;
                    require_file(&p, "flow field")?;
                    Ok(read_flow(&p)?)
                })
                .collect::<CliResult<Vec<_>>>()?;
            FlowSource::External(fields)
        }
    };
    Ok(Stream {
        width: m.width,
        height: m.height,
        frames,
        maps,
        flows,
    })
}

/// A static synthetic scene seen `frames` times.
fn synthetic_stream(cfg: &RunConfig) -> CliResult<Stream> {
    if cfg.predictor == PredictorMode::Files {
        return Err(CliError::Config(
            "the file predictor needs a frame manifest".into(),
        ));
    }
    if cfg.flow == FlowMode::External {
        return Err(CliError::Config(
            "external flow needs a frame manifest".into(),
        ));
    }
    if cfg.frames == 0 {
        return Err(CliError::Config("frames must be at least 1".into()));
    }
    let (w, h) = (cfg.frame_width, cfg.frame_height);
    let spec = SynthSpec {
        images: 1,
        width: w,
        height: h,
        ..SynthSpec::from_config(cfg)
    };
    let scene = synth_image(&spec, 0);
    let gt = gt_targets(
        &scene,
        cfg.d_max,
        cfg.out_factor as usize,
        Remainder::Crop,
        cfg.cable_thickness,
    )?;
    let image = if cfg.flow == FlowMode::Estimated {
        let cables = rasterize_cables(&scene.cables, w, h, cfg.cable_thickness)?;
        let pylons = rasterize_pylons(&scene.pylons, w, h)?;
        Some(Grid::from_fn(w as usize, h as usize, |r, c| {
            if cables[(r, c)] || pylons[(r, c)] {
                0.1
            } else {
                // Textured background so block matching has something to lock onto.
                0.55 + 0.25 * ((c as f32 * 0.37).sin() * (r as f32 * 0.23).cos())
            }
        }))
    } else {
        None
    };
    let frames = (0..cfg.frames)
        .map(|t| Frame {
            id: format!("frame{t:04}"),
            image: image.clone(),
        })
        .collect();
    Ok(Stream {
        width: w,
        height: h,
        frames,
        maps: vec![gt; cfg.frames],
        flows: match cfg.flow {
            FlowMode::Estimated => FlowSource::Estimated,
            _ => FlowSource::Zero,
        },
    })
}

fn frame_summary(frame: &Frame, out: &FrameOutput) -> Value {
    let mean =
        |m: &DistanceMask| m.values().as_slice().iter().sum::<f64>() / m.values().len() as f64;
    let mut v = json!({
        "id": frame.id,
        "foreground": { "cables": out.masks.cables.count_ones(), "pylons": out.masks.pylons.count_ones() },
        "mean_fused": { "cables": mean(&out.fused.cables), "pylons": mean(&out.fused.pylons) },
    });
    if let Some(f) = &out.flow {
        let n = f.dx().len() as f64;
        let mdx = f.dx().as_slice().iter().sum::<f64>() / n;
        let mdy = f.dy().as_slice().iter().sum::<f64>() / n;
        v["mean_flow"] = json!([mdx, mdy]);
    }
    v
}

/// Streams frames through split, predict, stitch, warp, fuse and threshold,
/// writing full-resolution binary masks per frame and a run summary.
pub fn cmd_pipeline_sim(cfg: &RunConfig) -> CliResult<Value> {
    let stream = match &cfg.manifest {
        Some(p) => load_manifest(cfg, p)?,
        None => synthetic_stream(cfg)?,
    };
    let maps = match cfg.predictor {
        PredictorMode::Files => stream.maps,
        PredictorMode::Oracle => stream
            .maps
            .par_iter()
            .zip(&stream.frames)
            .map(|(pair, f)| {
                pair.as_ref().clone().try_map(|class, m| {
                    degraded_oracle(
                        m,
                        cfg.noise_sigma,
                        cfg.dropout,
                        derive_seed(cfg.seed, &f.id, class),
                    )
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    let predictor = CoarseMapPredictor {
        maps,
        out_factor: cfg.out_factor,
    };
    let pcfg = cfg.pipeline_config();
    let outputs = run_stream(
        &stream.frames,
        stream.width,
        stream.height,
        &predictor,
        stream.flows,
        &pcfg,
    )?;

    let dir = cfg.output.join("frames");
    create_dir(&dir)?;
    stream
        .frames
        .par_iter()
        .zip(&outputs)
        .try_for_each(|(f, out)| -> CliResult<()> {
            for class in ObjectClass::ALL {
                let path = dir.join(format!("{}.{}.png", f.id, class.as_str()));
                write_binary_mask(&path, out.masks.get(class))?;
            }
            Ok(())
        })?;

    let layout = powerline_core::pipeline::pad_split(stream.width, stream.height, pcfg.patch)?;
    let coarse = stitched_dims(stream.width, stream.height, pcfg.out_factor);
    let summary = json!({
        "config": pcfg,
        "predictor": cfg.predictor,
        "flow": cfg.flow,
        "frame": [stream.width, stream.height],
        "coarse": [coarse.0, coarse.1],
        "layout": {
            "cols": layout.cols,
            "rows": layout.rows,
            "pad_right": layout.pad_right,
            "pad_bottom": layout.pad_bottom,
            "patches": layout.patches.len(),
        },
        "frames": stream.frames.iter().zip(&outputs).map(|(f, o)| frame_summary(f, o)).collect::<Vec<_>>(),
    });
    let path = cfg.output.join("run_summary.json");
    write_json_file(&path, &summary)?;
    Ok(json!({
        "summary": path_value(&path),
        "frames_dir": path_value(&dir),
        "frames": outputs.len(),
        "coarse": [coarse.0, coarse.1],
    }))
}
