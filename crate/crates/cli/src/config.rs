//! Run configuration: one flat TOML file, one key per line.
//!
//! Layering, lowest to highest precedence: built-in defaults, the file given
//! with `--config`, `--set KEY=VALUE` overrides, then dedicated flags.

use std::path::{Path, PathBuf};

use powerline_core::losses::LossConfig;
use powerline_core::metrics::Pooling;
use powerline_core::targets::Remainder;
use powerline_core::{ObjectClass, PipelineConfig, SampleSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// What `eval` does when a prediction file is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Score the image as if nothing had been detected.
    #[default]
    Empty,
    Skip,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    #[default]
    Zero,
    Estimated,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorMode {
    /// Degraded copies of the ground-truth masks.
    #[default]
    Oracle,
    /// Mask files used as predictions as they are.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub output: PathBuf,

    pub annotations: Option<PathBuf>,
    /// Defaults to `<output>/targets`.
    pub targets_dir: Option<PathBuf>,
    /// Defaults to `<output>/predictions`.
    pub predictions_dir: Option<PathBuf>,
    /// JSON `{image_id: fold}`; computed from the annotations when absent.
    pub folds_file: Option<PathBuf>,

    // targets
    pub d_max: u32,
    pub factor: u32,
    pub remainder: Remainder,
    pub cable_thickness: u32,

    // evaluation
    pub cable_threshold: f64,
    pub pylon_threshold: f64,
    pub pooling: Pooling,
    pub folds: usize,
    pub missing: MissingPolicy,

    // loss
    pub epsilon: f64,
    pub lambda: f64,
    pub malis_window: usize,
    pub use_lif_weights: bool,
    pub use_malis: bool,
    pub pred_cables: Option<PathBuf>,
    pub pred_pylons: Option<PathBuf>,
    pub gt_cables: Option<PathBuf>,
    pub gt_pylons: Option<PathBuf>,
    pub fd_check: bool,
    pub fd_step: f64,
    /// Upper bound on cells checked per class in finite-difference mode.
    pub fd_cells: usize,

    // sampling
    pub patch_size: u32,
    pub max_center_distance: f64,
    pub target_classes: Vec<ObjectClass>,
    pub samples_per_image: usize,

    // pipeline simulation
    pub manifest: Option<PathBuf>,
    pub predictor: PredictorMode,
    pub flow: FlowMode,
    pub patch: u32,
    pub batch: usize,
    pub out_factor: u32,
    pub fuse_weight: f64,
    pub threshold: f64,
    pub flow_downsample: u32,
    pub flow_block: u32,
    pub flow_radius: u32,
    pub frame_width: u32,
    pub frame_height: u32,
    pub frames: usize,
    pub noise_sigma: f64,
    pub dropout: f64,

    // synthetic data
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub recordings: usize,
    pub locations: usize,
    pub max_cables: usize,
    pub exclusion_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        let sample = SampleSpec::default();
        let pipe = PipelineConfig::default();
        RunConfig {
            seed: 0,
            jobs: 0,
            output: PathBuf::from("out"),
            annotations: None,
            targets_dir: None,
            predictions_dir: None,
            folds_file: None,
            d_max: powerline_core::DEFAULT_D_MAX,
            factor: 16,
            remainder: Remainder::Crop,
            cable_thickness: sample.cable_thickness,
            cable_threshold: 32.0,
            pylon_threshold: 32.0,
            pooling: Pooling::Micro,
            folds: 5,
            missing: MissingPolicy::Empty,
            epsilon: loss.epsilon,
            lambda: loss.lambda,
            malis_window: loss.malis_window,
            use_lif_weights: loss.use_lif_weights,
            use_malis: loss.use_malis,
            pred_cables: None,
            pred_pylons: None,
            gt_cables: None,
            gt_pylons: None,
            fd_check: false,
            fd_step: 1e-4,
            fd_cells: 256,
            patch_size: sample.patch_size,
            max_center_distance: sample.max_center_distance,
            target_classes: sample.target_classes,
            samples_per_image: sample.count,
            manifest: None,
            predictor: PredictorMode::Oracle,
            flow: FlowMode::Zero,
            patch: pipe.patch,
            batch: pipe.batch,
            out_factor: pipe.out_factor,
            fuse_weight: pipe.fuse_weight,
            threshold: pipe.threshold,
            flow_downsample: pipe.flow_downsample,
            flow_block: pipe.flow_block,
            flow_radius: pipe.flow_radius,
            frame_width: 4096,
            frame_height: 3000,
            frames: 8,
            noise_sigma: 0.05,
            dropout: 0.1,
            images: 20,
            width: 512,
            height: 384,
            recordings: 10,
            locations: 8,
            max_cables: 3,
            exclusion_rate: 0.3,
        }
    }
}

impl RunConfig {
    /// Builds a configuration from an optional file plus `(key, value)`
    /// overrides, where each value is written in TOML syntax. Bare words that
    /// are not valid TOML are taken as strings.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            table.insert(key.clone(), parse_value(raw));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let d_max = self.d_max as f64;
        for (name, t) in [
            ("cable_threshold", self.cable_threshold),
            ("pylon_threshold", self.pylon_threshold),
            ("threshold", self.threshold),
        ] {
            if !(t > 0.0 && t <= d_max) {
                return Err(CliError::Config(format!(
                    "{name} = {t} outside (0, {d_max}]"
                )));
            }
        }
        if self.factor == 0 || self.folds == 0 {
            return Err(CliError::Config(
                "factor and folds must be at least 1".into(),
            ));
        }
        if self.fd_step.is_nan() || self.fd_step <= 0.0 {
            return Err(CliError::Config("fd_step must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.exclusion_rate) {
            return Err(CliError::Config("exclusion_rate outside [0, 1]".into()));
        }
        self.loss_config().validate()?;
        self.sample_spec().validate()?;
        self.pipeline_config().validate()?;
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            epsilon: self.epsilon,
            lambda: self.lambda,
            d_max: self.d_max,
            malis_window: self.malis_window,
            use_lif_weights: self.use_lif_weights,
            use_malis: self.use_malis,
        }
    }

    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            patch_size: self.patch_size,
            max_center_distance: self.max_center_distance,
            target_classes: self.target_classes.clone(),
            seed: self.seed,
            count: self.samples_per_image,
            cable_thickness: self.cable_thickness,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            patch: self.patch,
            batch: self.batch,
            out_factor: self.out_factor,
            fuse_weight: self.fuse_weight,
            threshold: self.threshold,
            d_max: self.d_max,
            flow_downsample: self.flow_downsample,
            flow_block: self.flow_block,
            flow_radius: self.flow_radius,
        }
    }

    pub fn threshold_for(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Cables => self.cable_threshold,
            ObjectClass::Pylons => self.pylon_threshold,
        }
    }

    pub fn targets_path(&self) -> PathBuf {
        self.targets_dir
            .clone()
            .unwrap_or_else(|| self.output.join("targets"))
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.predictions_dir
            .clone()
            .unwrap_or_else(|| self.output.join("predictions"))
    }

    pub fn annotations_path(&self) -> CliResult<&Path> {
        self.annotations.as_deref().ok_or_else(|| {
            CliError::Config("no annotations file configured (set `annotations`)".into())
        })
    }

    /// The whole configuration as a TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// `KEY=VALUE` from the command line.
pub fn split_assignment(s: &str) -> CliResult<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got `{s}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Config(format!("empty key in `{s}`")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
