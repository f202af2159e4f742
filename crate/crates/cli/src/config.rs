//! Run configuration: defaults, then the TOML file section, then flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crysgen::metrics::{EvalMode, MatchTolerances};
use crysgen::sampler::SamplerConfig;
use crysgen::trainer::TrainConfig;

use crate::error::CliError;

/// Fingerprint distance used when no calibration set is given: the 99%
/// quantile of held-out to nearest-train distances on the synthetic
/// perovskite corpus (1.106 to 1.116 across corpus seeds 0 to 2).
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// JSON-lines crystal records.
    Records,
    /// CSV with a `cif` column holding text-dialect records.
    Csv,
    /// Generated perovskite corpus; no input file.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Both,
    Diffusion,
    Proposer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gen,
    Csp,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Gen => EvalMode::Gen,
            Mode::Csp => EvalMode::Csp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProposerChoice {
    /// The n-gram sidecar written by `train`.
    Markov,
    /// Replays records from `proposer_file`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub synthetic_size: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            input: None,
            format: InputFormat::Records,
            synthetic_size: 2000,
            out: PathBuf::from("data"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub component: Component,
    pub markov_order: usize,
    pub max_attempts: u32,
    pub trainer: TrainConfig,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data/train.jsonl"),
            out: PathBuf::from("model"),
            component: Component::Both,
            markov_order: crysgen::proposer::DEFAULT_MARKOV_ORDER,
            max_attempts: crysgen::proposer::DEFAULT_MAX_ATTEMPTS,
            trainer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCmdConfig {
    pub model: PathBuf,
    pub out: PathBuf,
    pub n: usize,
    pub mode: Mode,
    pub proposer: ProposerChoice,
    pub proposer_file: Option<PathBuf>,
    pub max_attempts: u32,
    /// `composition=<formula>` or `spacegroup=<number>`.
    pub condition: Option<String>,
    /// Ground-truth records whose compositions drive `csp` mode.
    pub targets: Option<PathBuf>,
    pub sampler: SamplerConfig,
}

impl Default for SampleCmdConfig {
    fn default() -> Self {
        Self {
            model: PathBuf::from("model"),
            out: PathBuf::from("samples"),
            n: 10,
            mode: Mode::Gen,
            proposer: ProposerChoice::Markov,
            proposer_file: None,
            max_attempts: crysgen::proposer::DEFAULT_MAX_ATTEMPTS,
            condition: None,
            targets: None,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateCmdConfig {
    pub gen: PathBuf,
    pub reference: PathBuf,
    pub out: PathBuf,
    pub mode: Mode,
    pub tolerances: MatchTolerances,
    /// Fixed coverage threshold; ignored when `calibrate_from` is set.
    pub coverage_threshold: f64,
    /// Training records used to calibrate the coverage threshold.
    pub calibrate_from: Option<PathBuf>,
    pub calibrate_quantile: f64,
    pub emit_hist: bool,
    pub hist_bins: usize,
    /// One target formula per line, paired with the generated records.
    pub targets: Option<PathBuf>,
}

impl Default for EvaluateCmdConfig {
    fn default() -> Self {
        Self {
            gen: PathBuf::from("samples/generated.jsonl"),
            reference: PathBuf::from("data/test.jsonl"),
            out: PathBuf::from("report"),
            mode: Mode::Gen,
            tolerances: MatchTolerances::default(),
            coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
            calibrate_from: None,
            calibrate_quantile: 0.99,
            emit_hist: false,
            hist_bins: 30,
            targets: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub ingest: IngestConfig,
    pub train: TrainCmdConfig,
    pub sample: SampleCmdConfig,
    pub evaluate: EvaluateCmdConfig,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}
