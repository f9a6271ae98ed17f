//! The merged run configuration.
//!
//! Every field starts unset and can be filled from exactly one effective
//! source: a command-line flag when given, else a config-file entry, else
//! the accessor's default. Config files are line-based `key=value` text with
//! `#` comments; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sspcab_core::model::{Placement, ScoreMode};
use sspcab_core::sspcab::ReconLoss;

use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub placement: Option<Placement>,
    pub k_prime: Option<usize>,
    pub dilation: Option<usize>,
    pub reduction: Option<usize>,
    pub loss: Option<ReconLoss>,
    pub score_mode: Option<ScoreMode>,
    pub anomaly_fraction: Option<f64>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub encoder_channels: Option<Vec<usize>>,
    pub instances: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub maps: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value for '{key}': {e}"))
}

/// Parses a comma-separated channel list such as `16,32,64`. Shared by the
/// config-file reader and the matching command-line flag.
pub fn parse_channels(value: &str) -> Result<Vec<usize>, String> {
    let channels = value
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| format!("bad value for 'encoder_channels': {e}"))?;
    if channels.is_empty() {
        return Err("encoder_channels must list at least one stage".to_string());
    }
    Ok(channels)
}

impl RunConfig {
    /// Parses a config file. Later entries for the same key override earlier
    /// ones; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config {}:{}: expected key=value, got '{line}'",
                    path.display(),
                    line_no + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|msg| {
                CliError::Usage(format!("config {}:{}: {msg}", path.display(), line_no + 1))
            })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = Some(parse_as(key, value)?),
            "epochs" => self.epochs = Some(parse_as(key, value)?),
            "batch_size" => self.batch_size = Some(parse_as(key, value)?),
            "learning_rate" => self.learning_rate = Some(parse_as(key, value)?),
            "lambda" => self.lambda = Some(parse_as(key, value)?),
            "placement" => self.placement = Some(parse_as(key, value)?),
            "kprime" => self.k_prime = Some(parse_as(key, value)?),
            "dilation" => self.dilation = Some(parse_as(key, value)?),
            "reduction" => self.reduction = Some(parse_as(key, value)?),
            "loss" => self.loss = Some(parse_as(key, value)?),
            "score_mode" => self.score_mode = Some(parse_as(key, value)?),
            "anomaly_fraction" => self.anomaly_fraction = Some(parse_as(key, value)?),
            "n_train" => self.n_train = Some(parse_as(key, value)?),
            "n_test" => self.n_test = Some(parse_as(key, value)?),
            "encoder_channels" => self.encoder_channels = Some(parse_channels(value)?),
            "instances" => self.instances = Some(parse_as(key, value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "data" => self.data = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "scores" => self.scores = Some(PathBuf::from(value)),
            "maps" => self.maps = Some(PathBuf::from(value)),
            "loss_log" => self.loss_log = Some(PathBuf::from(value)),
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    // Defaults mirror the library's: a 10-epoch Adam run at batch 16 on the
    // default block geometry (sub-kernel 1, dilation 1, reduction 8, MSE)
    // with loss weight 0.1 and late placement.

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(10)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(16)
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(1e-3)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(0.1)
    }

    pub fn placement(&self) -> Placement {
        self.placement.unwrap_or(Placement::Late)
    }

    pub fn k_prime(&self) -> usize {
        self.k_prime.unwrap_or(1)
    }

    pub fn dilation(&self) -> usize {
        self.dilation.unwrap_or(1)
    }

    pub fn reduction(&self) -> usize {
        self.reduction.unwrap_or(8)
    }

    pub fn loss(&self) -> ReconLoss {
        self.loss.unwrap_or(ReconLoss::Mse)
    }

    pub fn score_mode_or(&self, fallback: ScoreMode) -> ScoreMode {
        self.score_mode.unwrap_or(fallback)
    }

    pub fn anomaly_fraction(&self) -> f64 {
        self.anomaly_fraction.unwrap_or(0.5)
    }

    pub fn n_train(&self) -> usize {
        self.n_train.unwrap_or(500)
    }

    pub fn n_test(&self) -> usize {
        self.n_test.unwrap_or(100)
    }

    pub fn encoder_channels(&self) -> Vec<usize> {
        self.encoder_channels
            .clone()
            .unwrap_or_else(|| vec![16, 32, 64])
    }

    pub fn instances(&self) -> usize {
        self.instances.unwrap_or(100)
    }

    fn require<'a>(path: &'a Option<PathBuf>, flag: &str, key: &str) -> Result<&'a Path, CliError> {
        path.as_deref().ok_or_else(|| {
            CliError::Usage(format!("missing {flag} (or config key '{key}')"))
        })
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        Self::require(&self.out, "--out", "out")
    }

    pub fn require_data(&self) -> Result<&Path, CliError> {
        Self::require(&self.data, "--data", "data")
    }

    pub fn require_checkpoint(&self) -> Result<&Path, CliError> {
        Self::require(&self.checkpoint, "--checkpoint", "checkpoint")
    }

    pub fn require_scores(&self) -> Result<&Path, CliError> {
        Self::require(&self.scores, "--scores", "scores")
    }
}
