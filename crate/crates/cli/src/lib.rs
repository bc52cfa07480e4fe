//! Pipeline driver: `synth -> calibrate -> filter -> assemble -> evaluate`,
//! plus `verify` for the run manifests. Stages talk only through files in
//! the output directory, so each can be rerun on its own.

pub mod config;
pub mod manifest;
pub mod stages;
pub mod svg;
pub mod synth;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use formsmith_core::{seed, Error, ErrorKind, Result};

use crate::config::PipelineConfig;

/// File names inside the output directory.
pub mod files {
    pub const ITEMS: &str = "items.csv";
    pub const EMBEDDINGS: &str = "embeddings.csv";
    pub const RESPONSES: &str = "responses.csv";
    pub const LAB_FORM: &str = "lab_form.txt";
    pub const TRUTH_ITEMS: &str = "truth_items.csv";
    pub const TRUTH_PARTICIPANTS: &str = "truth_participants.csv";
    pub const TRUTH_MODEL: &str = "truth_model.json";
    pub const CALIBRATION: &str = "calibration.csv";
    pub const CALIBRATION_PARTIAL: &str = "calibration.partial.csv";
    pub const EMPIRICAL: &str = "empirical_calibration.csv";
    pub const DRAWS: &str = "draws.jsonl";
    pub const RT_BINS: &str = "rt_bins.json";
    pub const KEPT: &str = "kept.txt";
    pub const FILTER_SUMMARY: &str = "filter_summary.json";
    pub const FORMS: &str = "forms.json";
    pub const FORM_RESPONSES: &str = "form_responses.csv";
    pub const SCORES: &str = "scores.csv";
}

#[derive(Debug, Parser)]
#[command(name = "formsmith", version, about = "Item calibration and parallel test-form assembly")]
pub struct Cli {
    /// TOML pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `paths.output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample a synthetic item bank, participants and lab responses.
    Synth,
    /// Simulate responses to each item and aggregate item parameters.
    Calibrate,
    /// Apply the configured item filters in order.
    Filter,
    /// Assemble parallel forms matched to the lab form.
    Assemble,
    /// Score forms, compare them and fit IRT.
    Evaluate,
    /// Recompute the digests recorded in every manifest.
    Verify,
}

impl Command {
    pub fn stage_name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Calibrate => "calibrate",
            Command::Filter => "filter",
            Command::Assemble => "assemble",
            Command::Evaluate => "evaluate",
            Command::Verify => "verify",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::External => 5,
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

/// Resolved config plus where to read and write.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub config_hash: String,
    /// Absolute output directory.
    pub out: PathBuf,
    base: PathBuf,
}

impl Context {
    /// `base` is where relative config paths resolve (the config file's
    /// directory). `out` overrides `paths.output`.
    pub fn new(config: PipelineConfig, base: &Path, out: Option<&Path>) -> Result<Self> {
        let base = absolute(base)?;
        let out = match out {
            Some(o) => absolute(o)?,
            None => base.join(&config.paths.output),
        };
        Ok(Context {
            config_hash: config.digest(),
            config,
            out,
            base,
        })
    }

    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let (mut config, base) = match &cli.config {
            Some(path) => {
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
                (PipelineConfig::load(path)?, base)
            }
            None => (PipelineConfig::default(), PathBuf::from(".")),
        };
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        Context::new(config, &base, cli.out.as_deref())
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive_named(self.config.seed, stage)
    }

    /// Path of an input: the configured `paths.<key>` when set, otherwise
    /// `default_name` in the output directory. Must exist.
    pub fn input(&self, key: &str, default_name: &str) -> Result<PathBuf> {
        let path = self.input_path(key, default_name);
        if !path.is_file() {
            return Err(Error::Config {
                key: format!("paths.{key}"),
                message: format!("input file {} does not exist", path.display()),
            });
        }
        Ok(path)
    }

    fn input_path(&self, key: &str, default_name: &str) -> PathBuf {
        let p = &self.config.paths;
        let configured = match key {
            "items" => &p.items,
            "responses" => &p.responses,
            "embeddings" => &p.embeddings,
            "lab_form" => &p.lab_form,
            "truth_items" => &p.truth_items,
            "truth_participants" => &p.truth_participants,
            "truth_model" => &p.truth_model,
            "form_responses" => &p.form_responses,
            _ => &None,
        };
        match configured {
            Some(c) => self.base.join(c),
            None => self.out.join(default_name),
        }
    }

    pub fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })
    }
}

/// Runs one subcommand to completion.
pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::from_cli(cli)?;
    run_command(&ctx, cli.command)
}

pub fn run_command(ctx: &Context, command: Command) -> Result<()> {
    match command {
        Command::Synth => synth::run(ctx).map(drop),
        Command::Calibrate => stages::calibrate::run(ctx).map(drop),
        Command::Filter => stages::filter::run(ctx).map(drop),
        Command::Assemble => stages::assemble::run(ctx).map(drop),
        Command::Evaluate => stages::evaluate::run(ctx).map(drop),
        Command::Verify => stages::verify(ctx),
    }
}

/// Runs every stage in order.
pub fn run_pipeline(ctx: &Context) -> Result<()> {
    for c in [
        Command::Synth,
        Command::Calibrate,
        Command::Filter,
        Command::Assemble,
        Command::Evaluate,
    ] {
        run_command(ctx, c)?;
    }
    Ok(())
}
