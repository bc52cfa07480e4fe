//! Pipeline configuration: one TOML document with a section per stage.
//!
//! Every key has a default, so an empty document is a valid config. The
//! committed `configs/reference.toml` lists every key with its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use formsmith_core::assembly::{AssemblyConfig, Feature, ReuseMode};
use formsmith_core::item_bank::GUESSER_THRESHOLD_MS;
use formsmith_core::psychometrics::IrtOptions;
use formsmith_core::simulator::external::ExternalConfig;
use formsmith_core::simulator::{DEFAULT_MAX_CONTEXT, DEFAULT_N_PARTICIPANTS};
use formsmith_core::{Error, Result};

fn config_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub simulator: SimulatorConfig,
    pub filter: FilterConfig,
    pub assembly: AssemblySection,
    pub evaluate: EvaluateConfig,
    pub report: ReportConfig,
}

/// Input locations. Unset inputs default to the file of the same role in
/// the output directory, as written by the previous stage. Relative paths
/// resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub items: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Ordered lab item ids, one per line.
    pub lab_form: Option<PathBuf>,
    /// Planted item parameters (reference simulator only).
    pub truth_items: Option<PathBuf>,
    pub truth_participants: Option<PathBuf>,
    pub truth_model: Option<PathBuf>,
    /// Observed responses on the lab and assembled forms. When unset,
    /// `evaluate` simulates a fresh population instead.
    pub form_responses: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            items: None,
            responses: None,
            embeddings: None,
            lab_form: None,
            truth_items: None,
            truth_participants: None,
            truth_model: None,
            form_responses: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_lab_items: usize,
    pub n_generated: usize,
    pub n_participants: usize,
    pub lab_ambiguous_fraction: f64,
    pub generated_ambiguous_fraction: f64,
    /// Generated items that copy an earlier generated item.
    pub duplicate_fraction: f64,
    pub guesser_fraction: f64,
    pub embedding_dim: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Session length for the synthetic lab study.
    pub time_limit_ms: f64,
    pub discrimination_min: f64,
    pub discrimination_max: f64,
    pub clean_difficulty_mean: f64,
    pub clean_difficulty_sd: f64,
    pub ambiguous_difficulty_mean: f64,
    pub ambiguous_difficulty_sd: f64,
    pub base_log_rt_mean: f64,
    pub base_log_rt_sd: f64,
    pub ability_sd: f64,
    pub speed_sd: f64,
    pub per_word_log_rt: f64,
    pub noise_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_lab_items: 130,
            n_generated: 1000,
            n_participants: 500,
            lab_ambiguous_fraction: 0.0,
            generated_ambiguous_fraction: 0.2,
            duplicate_fraction: 0.05,
            guesser_fraction: 0.02,
            embedding_dim: 64,
            min_words: 3,
            max_words: 12,
            time_limit_ms: 180_000.0,
            discrimination_min: 1.0,
            discrimination_max: 2.5,
            clean_difficulty_mean: -2.2,
            clean_difficulty_sd: 0.3,
            ambiguous_difficulty_mean: -0.6,
            ambiguous_difficulty_sd: 0.3,
            base_log_rt_mean: 1500f64.ln(),
            base_log_rt_sd: 0.15,
            ability_sd: 1.0,
            speed_sd: 0.4,
            per_word_log_rt: 0.08,
            noise_sd: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatorKind {
    #[default]
    Reference,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub kind: SimulatorKind,
    /// Sampled participants per item.
    pub n_participants: usize,
    pub max_context: usize,
    pub guesser_threshold_ms: f64,
    /// Also simulate the lab items (needed for the simulator-vs-actual table
    /// and for matching lab and generated items on the same scale).
    pub calibrate_lab: bool,
    pub external: Option<ExternalConfig>,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            kind: SimulatorKind::Reference,
            n_participants: DEFAULT_N_PARTICIPANTS,
            max_context: DEFAULT_MAX_CONTEXT,
            guesser_threshold_ms: GUESSER_THRESHOLD_MS,
            calibrate_lab: true,
            external: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterName {
    Accuracy,
    RtBand,
    Dedup,
    Ambiguity,
}

impl FilterName {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterName::Accuracy => "accuracy",
            FilterName::RtBand => "rt_band",
            FilterName::Dedup => "dedup",
            FilterName::Ambiguity => "ambiguity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Items are kept when accuracy is strictly greater.
    pub accuracy_threshold: f64,
    /// `false` skips the rt_band stage even when it is listed.
    pub rt_band: bool,
    pub dedup_floor: f64,
    pub filter_order: Vec<FilterName>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            accuracy_threshold: 0.85,
            rt_band: true,
            dedup_floor: 0.5,
            filter_order: vec![FilterName::Accuracy, FilterName::RtBand, FilterName::Dedup],
        }
    }
}

/// Assembly options. The optimizer seed is derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblySection {
    /// Number of parallel forms `d`.
    pub copies: usize,
    pub features: Vec<Feature>,
    pub learning_rate: f64,
    pub steps: usize,
    pub lambda_distance: f64,
    pub lambda_reuse: f64,
    pub lambda_cosine: f64,
    pub cosine_threshold: f64,
    pub reuse_mode: ReuseMode,
    pub init_scale: f64,
}

impl Default for AssemblySection {
    fn default() -> Self {
        let c = AssemblyConfig::default();
        AssemblySection {
            copies: 2,
            features: vec![Feature::MedianRt],
            learning_rate: c.learning_rate,
            steps: c.steps,
            lambda_distance: c.lambda_distance,
            lambda_reuse: c.lambda_reuse,
            lambda_cosine: c.lambda_cosine,
            cosine_threshold: c.cosine_threshold,
            reuse_mode: c.reuse_mode,
            init_scale: c.init_scale,
        }
    }
}

impl AssemblySection {
    pub fn to_config(&self, seed: u64) -> AssemblyConfig {
        AssemblyConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            lambda_distance: self.lambda_distance,
            lambda_reuse: self.lambda_reuse,
            lambda_cosine: self.lambda_cosine,
            cosine_threshold: self.cosine_threshold,
            reuse_mode: self.reuse_mode,
            init_scale: self.init_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Size of the fresh simulated population.
    pub n_participants: usize,
    /// Per-form session length.
    pub time_limit_ms: f64,
    /// Items with fewer responses are left out of the IRT fit.
    pub min_item_responses: usize,
    pub irt: IrtOptions,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            n_participants: 300,
            time_limit_ms: 180_000.0,
            min_item_responses: 20,
            irt: IrtOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub formats: Vec<ReportFormat>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            formats: vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
        }
    }
}

impl ReportConfig {
    pub fn wants(&self, f: ReportFormat) -> bool {
        self.formats.contains(&f)
    }
}

fn check(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_error(key, message))
    }
}

fn fraction(v: f64, key: &str) -> Result<()> {
    check((0.0..=1.0).contains(&v), key, "must lie in [0, 1]")
}

fn non_negative(v: f64, key: &str) -> Result<()> {
    check(v >= 0.0 && v.is_finite(), key, "must be finite and non-negative")
}

fn positive(v: f64, key: &str) -> Result<()> {
    check(v > 0.0 && v.is_finite(), key, "must be finite and positive")
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        check(self.n_lab_items >= 1, "synth.n_lab_items", "must be at least 1")?;
        check(self.n_generated >= 1, "synth.n_generated", "must be at least 1")?;
        check(self.n_participants >= 1, "synth.n_participants", "must be at least 1")?;
        fraction(self.lab_ambiguous_fraction, "synth.lab_ambiguous_fraction")?;
        fraction(self.generated_ambiguous_fraction, "synth.generated_ambiguous_fraction")?;
        fraction(self.duplicate_fraction, "synth.duplicate_fraction")?;
        fraction(self.guesser_fraction, "synth.guesser_fraction")?;
        check(self.embedding_dim >= 2, "synth.embedding_dim", "must be at least 2")?;
        check(self.min_words >= 3, "synth.min_words", "must be at least 3")?;
        check(self.max_words >= self.min_words, "synth.max_words", "must be at least synth.min_words")?;
        positive(self.time_limit_ms, "synth.time_limit_ms")?;
        positive(self.discrimination_min, "synth.discrimination_min")?;
        check(
            self.discrimination_max.is_finite() && self.discrimination_max >= self.discrimination_min,
            "synth.discrimination_max",
            "must be finite and at least synth.discrimination_min",
        )?;
        for (key, v) in [
            ("synth.clean_difficulty_mean", self.clean_difficulty_mean),
            ("synth.ambiguous_difficulty_mean", self.ambiguous_difficulty_mean),
            ("synth.base_log_rt_mean", self.base_log_rt_mean),
        ] {
            check(v.is_finite(), key, "must be finite")?;
        }
        for (key, v) in [
            ("synth.clean_difficulty_sd", self.clean_difficulty_sd),
            ("synth.ambiguous_difficulty_sd", self.ambiguous_difficulty_sd),
            ("synth.base_log_rt_sd", self.base_log_rt_sd),
            ("synth.ability_sd", self.ability_sd),
            ("synth.speed_sd", self.speed_sd),
            ("synth.per_word_log_rt", self.per_word_log_rt),
        ] {
            non_negative(v, key)?;
        }
        positive(self.noise_sd, "synth.noise_sd")
    }
}

impl SimulatorConfig {
    fn validate(&self) -> Result<()> {
        check(self.n_participants >= 2, "simulator.n_participants", "must be at least 2")?;
        non_negative(self.guesser_threshold_ms, "simulator.guesser_threshold_ms")?;
        match (&self.kind, &self.external) {
            (SimulatorKind::External, None) => Err(config_error(
                "simulator.external",
                "required when simulator.kind = \"external\"",
            )),
            (_, Some(ext)) => {
                check(!ext.endpoint.trim().is_empty(), "simulator.external.endpoint", "must not be empty")?;
                check(ext.batch_size >= 1, "simulator.external.batch_size", "must be at least 1")?;
                check(ext.max_in_flight >= 1, "simulator.external.max_in_flight", "must be at least 1")?;
                check(ext.timeout_ms >= 1, "simulator.external.timeout_ms", "must be at least 1")
            }
            _ => Ok(()),
        }
    }
}

impl FilterConfig {
    fn validate(&self) -> Result<()> {
        fraction(self.accuracy_threshold, "filter.accuracy_threshold")?;
        positive(self.dedup_floor, "filter.dedup_floor")
    }
}

impl AssemblySection {
    fn validate(&self) -> Result<()> {
        check(self.copies >= 1, "assembly.copies", "must be at least 1")?;
        check(!self.features.is_empty(), "assembly.features", "must name at least one feature")?;
        self.to_config(0).validate()
    }
}

impl EvaluateConfig {
    fn validate(&self) -> Result<()> {
        check(self.n_participants >= 2, "evaluate.n_participants", "must be at least 2")?;
        positive(self.time_limit_ms, "evaluate.time_limit_ms")?;
        check(self.min_item_responses >= 2, "evaluate.min_item_responses", "must be at least 2")?;
        check(self.irt.quadrature_nodes >= 2, "evaluate.irt.quadrature_nodes", "must be at least 2")?;
        check(self.irt.max_cycles >= 1, "evaluate.irt.max_cycles", "must be at least 1")?;
        positive(self.irt.tolerance, "evaluate.irt.tolerance")?;
        if let Some(a) = self.irt.fixed_discrimination {
            positive(a, "evaluate.irt.fixed_discrimination")?;
        }
        Ok(())
    }
}

impl PipelineConfig {
    /// Parses a TOML document. Errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error("<document>", e.to_string()))?;
        let config: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let key = if key == "." { "<document>".to_string() } else { key };
            config_error(key, e.into_inner().message().trim().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.simulator.validate()?;
        self.filter.validate()?;
        self.assembly.validate()?;
        self.evaluate.validate()
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
