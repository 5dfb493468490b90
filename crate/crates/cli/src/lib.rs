//! Batch workflows over the `powerline-core` algorithms: target generation,
//! evaluation, loss checks, fold splits, patch sampling, stream simulation and
//! synthetic data.
//!
//! Every subcommand reads one flat TOML configuration. Values are layered as
//! built-in defaults, then the `--config` file, then `--set KEY=VALUE`, then
//! the dedicated flags.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod synth;

use commands::ReportFormat;
use config::{split_assignment, RunConfig};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "powerline",
    version,
    about = "Cable and pylon detection workflows"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Overrides one configuration key; the value is read as TOML, falling
    /// back to a plain string.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distance-mask targets for every annotated image.
    GenTargets {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        factor: Option<u32>,
        /// Write degraded copies into the predictions directory instead.
        #[arg(long)]
        predictions: bool,
    },
    /// Per-image, per-fold and aggregate scores.
    Eval {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// `micro` or `macro`.
        #[arg(long)]
        pooling: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        /// `empty`, `skip` or `fail`.
        #[arg(long)]
        missing: Option<String>,
    },
    /// Composite loss, its terms and gradients for one mask pair.
    LossCheck {
        #[arg(long)]
        pred_cables: Option<PathBuf>,
        #[arg(long)]
        pred_pylons: Option<PathBuf>,
        #[arg(long)]
        gt_cables: Option<PathBuf>,
        #[arg(long)]
        gt_pylons: Option<PathBuf>,
        /// Also compare against central differences.
        #[arg(long)]
        fd_check: bool,
    },
    /// Recording-grouped k-fold assignment.
    FoldSplit {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Training patch positions.
    Sample {
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Video stream simulation.
    PipelineSim {
        /// JSON frame manifest; without one a synthetic scene is streamed.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Seeded synthetic annotation set.
    Synth {
        #[arg(long)]
        images: Option<usize>,
    },
    /// Renders a stored evaluation report.
    Report {
        /// `eval.json` written by `eval`.
        input: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: ReportFormat,
    },
    /// Prints the merged configuration.
    Config,
}

fn toml_str(p: &std::path::Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn path(&mut self, key: &str, v: &Option<PathBuf>) {
        if let Some(p) = v {
            self.0.push((key.into(), toml_str(p)));
        }
    }

    fn value(&mut self, key: &str, v: Option<impl ToString>) {
        if let Some(v) = v {
            self.0.push((key.into(), v.to_string()));
        }
    }

    fn flag(&mut self, key: &str, on: bool) {
        if on {
            self.0.push((key.into(), "true".into()));
        }
    }
}

/// Merged configuration for `cli`.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let g = &cli.global;
    let mut o = Overrides(
        g.set
            .iter()
            .map(|s| split_assignment(s))
            .collect::<CliResult<_>>()?,
    );
    o.value("seed", g.seed);
    o.value("jobs", g.jobs);
    o.path("output", &g.output);
    match &cli.command {
        Command::GenTargets {
            annotations,
            factor,
            ..
        } => {
            o.path("annotations", annotations);
            o.value("factor", *factor);
        }
        Command::Eval {
            annotations,
            targets,
            predictions,
            pooling,
            folds,
            missing,
        } => {
            o.path("annotations", annotations);
            o.path("targets_dir", targets);
            o.path("predictions_dir", predictions);
            o.value(
                "pooling",
                pooling.as_deref().map(|s| toml::Value::String(s.into())),
            );
            o.value("folds", *folds);
            o.value(
                "missing",
                missing.as_deref().map(|s| toml::Value::String(s.into())),
            );
        }
        Command::LossCheck {
            pred_cables,
            pred_pylons,
            gt_cables,
            gt_pylons,
            fd_check,
        } => {
            o.path("pred_cables", pred_cables);
            o.path("pred_pylons", pred_pylons);
            o.path("gt_cables", gt_cables);
            o.path("gt_pylons", gt_pylons);
            o.flag("fd_check", *fd_check);
        }
        Command::FoldSplit { annotations, folds } => {
            o.path("annotations", annotations);
            o.value("folds", *folds);
        }
        Command::Sample { annotations } => o.path("annotations", annotations),
        Command::PipelineSim { manifest, frames } => {
            o.path("manifest", manifest);
            o.value("frames", *frames);
        }
        Command::Synth { images } => o.value("images", *images),
        Command::Report { .. } | Command::Config => {}
    }
    RunConfig::load(g.config.as_deref(), &o.0)
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

/// Runs a parsed command line and returns what should go to stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    if let Command::Report { input, format } = &cli.command {
        return commands::cmd_report(input, *format);
    }
    let cfg = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| {
        let summary = match &cli.command {
            Command::GenTargets { predictions, .. } => {
                commands::cmd_gen_targets(&cfg, *predictions)?
            }
            Command::Eval { .. } => commands::cmd_eval(&cfg)?,
            Command::LossCheck { .. } => commands::cmd_loss_check(&cfg)?,
            Command::FoldSplit { .. } => commands::cmd_fold_split(&cfg)?,
            Command::Sample { .. } => commands::cmd_sample(&cfg)?,
            Command::PipelineSim { .. } => commands::cmd_pipeline_sim(&cfg)?,
            Command::Synth { .. } => commands::cmd_synth(&cfg)?,
            Command::Config => return Ok(cfg.to_toml()),
            Command::Report { .. } => unreachable!("handled above"),
        };
        Ok(pretty(&summary))
    })
}

/// Parses `args` (program name first) and runs the command. Help and version
/// requests come back as `Ok` text.
pub fn run_with_args<I, T>(args: I) -> CliResult<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) if !e.use_stderr() => Ok(e.to_string()),
        Err(e) => Err(CliError::Usage(e.to_string().trim_end().to_string())),
    }
}
