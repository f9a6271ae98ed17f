//! `sspcab` — train and evaluate a convolutional auto-encoder with a
//! self-supervised masked-convolution attention block on a synthetic
//! anomaly-detection corpus.
//!
//! Every subcommand reads an optional `--config` key=value file, overlays
//! the command-line flags on top of it, and hands the resolved settings to
//! the matching library routine. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use sspcab_cli::commands::{cmd_eval, cmd_gradcheck, cmd_score, cmd_synth, cmd_train, resolve};
use sspcab_cli::config::{parse_channels, RunConfig};
use sspcab_cli::CliError;

#[derive(Parser)]
#[command(
    name = "sspcab",
    version,
    about = "Masked-convolution attention auto-encoder: synthesize, train, score, evaluate, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the deterministic synthetic corpus (train + test manifests).
    Synth(SynthArgs),
    /// Train on a train-split manifest; writes a checkpoint and a loss CSV.
    Train(TrainArgs),
    /// Score every frame of a manifest with a trained checkpoint.
    Score(ScoreArgs),
    /// Compute metrics from a score file and print the report.
    Eval(EvalArgs),
    /// Run the verification suites: finite-difference gradients,
    /// kernel-masking invariance, dense-kernel oracle.
    Gradcheck(GradcheckArgs),
}

/// Flags shared by every subcommand. A flag given here overrides the same
/// key in the config file.
#[derive(Args)]
struct Common {
    /// key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (corpus dir / checkpoint / score file / report).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = resolve(self.config.as_ref())?;
        if let Some(v) = self.seed {
            cfg.seed = Some(v);
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        Ok(cfg)
    }
}

fn parse_flag<T: FromStr<Err = String>>(flag: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|e| CliError::Usage(format!("bad value for {flag}: {e}")))
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Normal training frames to generate.
    #[arg(long)]
    n_train: Option<usize>,
    /// Test frames to generate.
    #[arg(long)]
    n_test: Option<usize>,
    /// Fraction of test frames carrying an anomaly, in [0, 1].
    #[arg(long)]
    anomaly_fraction: Option<f64>,
}

impl SynthArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = self.common.resolve()?;
        if let Some(v) = self.n_train {
            cfg.n_train = Some(v);
        }
        if let Some(v) = self.n_test {
            cfg.n_test = Some(v);
        }
        if let Some(v) = self.anomaly_fraction {
            cfg.anomaly_fraction = Some(v);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Train-split manifest path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Weight of the block's reconstruction loss in the total.
    #[arg(long)]
    lambda: Option<f64>,
    /// Block placement: none, early, middle, or late.
    #[arg(long)]
    placement: Option<String>,
    /// Sub-kernel size k' of the masked convolution.
    #[arg(long = "kprime")]
    k_prime: Option<usize>,
    /// Dilation d of the masked convolution.
    #[arg(long)]
    dilation: Option<usize>,
    /// Channel-attention reduction ratio.
    #[arg(long)]
    reduction: Option<usize>,
    /// Block reconstruction loss: mse or mae.
    #[arg(long)]
    loss: Option<String>,
    /// Encoder stage widths, comma-separated (e.g. 16,32,64).
    #[arg(long)]
    encoder_channels: Option<String>,
    /// Loss CSV path (default: checkpoint path with .losses.csv).
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = self.common.resolve()?;
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = self.epochs {
            cfg.epochs = Some(v);
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = Some(v);
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = Some(v);
        }
        if let Some(v) = self.lambda {
            cfg.lambda = Some(v);
        }
        if let Some(v) = &self.placement {
            cfg.placement = Some(parse_flag("--placement", v)?);
        }
        if let Some(v) = self.k_prime {
            cfg.k_prime = Some(v);
        }
        if let Some(v) = self.dilation {
            cfg.dilation = Some(v);
        }
        if let Some(v) = self.reduction {
            cfg.reduction = Some(v);
        }
        if let Some(v) = &self.loss {
            cfg.loss = Some(parse_flag("--loss", v)?);
        }
        if let Some(v) = &self.encoder_channels {
            cfg.encoder_channels =
                Some(parse_channels(v).map_err(CliError::Usage)?);
        }
        if let Some(v) = &self.loss_log {
            cfg.loss_log = Some(v.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manifest of frames to score.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Frame score from the anomaly map: mean or max.
    #[arg(long)]
    score_mode: Option<String>,
    /// Directory for per-frame anomaly-map PGMs (plus a scale sidecar).
    #[arg(long)]
    maps: Option<PathBuf>,
}

impl ScoreArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = self.common.resolve()?;
        if let Some(v) = &self.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &self.score_mode {
            cfg.score_mode = Some(parse_flag("--score-mode", v)?);
        }
        if let Some(v) = &self.maps {
            cfg.maps = Some(v.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Score file to evaluate (written by `score`).
    #[arg(long)]
    scores: Option<PathBuf>,
}

impl EvalArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = self.common.resolve()?;
        if let Some(v) = &self.scores {
            cfg.scores = Some(v.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Random instances per checked component.
    #[arg(long)]
    instances: Option<usize>,
    /// Fault injection: corrupt this component's analytic gradient; the
    /// run must then fail naming it.
    #[arg(long)]
    corrupt: Option<String>,
}

impl GradcheckArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = self.common.resolve()?;
        if let Some(v) = self.instances {
            cfg.instances = Some(v);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(&args.resolve()?),
        Command::Train(args) => cmd_train(&args.resolve()?),
        Command::Score(args) => cmd_score(&args.resolve()?),
        Command::Eval(args) => cmd_eval(&args.resolve()?),
        Command::Gradcheck(args) => cmd_gradcheck(&args.resolve()?, args.corrupt.clone()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
