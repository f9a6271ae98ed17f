//! The five commands, each a thin orchestration of library calls.

use std::path::{Path, PathBuf};

use sspcab_core::dataio::{
    load_manifest, manifest_tensors, save_raster, synth_generate, DataError, RasterImage, Split,
};
use sspcab_core::metrics::{evaluate, parse_score_file, score_line, MetricError};
use sspcab_core::model::{frame_score, AeConfig, AutoEncoder, ModelError};
use sspcab_core::numcore::Tensor;
use sspcab_core::trainer::{
    fit, load_checkpoint, save_checkpoint, CheckpointError, OptimState, Optimizer, TrainConfig,
    TrainError,
};
use sspcab_core::verify::{
    dense_oracle_suite, gradient_suite, masking_invariance_suite, GradSuiteOptions, VerifyError,
};

use crate::config::RunConfig;
use crate::CliError;

// Error mapping: malformed inputs and contract violations are usage/config
// errors (exit 2); I/O failures and numeric breakdowns are runtime errors
// (exit 1).

fn data_err(e: DataError) -> CliError {
    match e {
        DataError::InvalidArg { .. }
        | DataError::EmptyManifest { .. }
        | DataError::ManifestSyntax { .. }
        | DataError::ProtocolViolation { .. }
        | DataError::MaskMismatch { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::Config(_) => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) => CliError::Usage(e.to_string()),
        TrainError::Model(ModelError::Config(_)) => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn ckpt_err(e: CheckpointError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn metric_err(e: MetricError) -> CliError {
    match e {
        MetricError::Parse { .. } | MetricError::Empty => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn verify_err(e: VerifyError) -> CliError {
    match e {
        VerifyError::UnknownComponent { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// `synth`: generate the deterministic synthetic corpus with manifests.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.require_out()?;
    let (train_m, test_m) = synth_generate(
        out,
        cfg.n_train(),
        cfg.n_test(),
        cfg.anomaly_fraction(),
        cfg.seed(),
    )
    .map_err(data_err)?;
    let anomalies = test_m.entries.iter().filter(|e| e.label == 1).count();
    println!(
        "wrote {} train and {} test frames ({} anomalous) under {}",
        train_m.entries.len(),
        test_m.entries.len(),
        anomalies,
        out.display()
    );
    Ok(())
}

/// Builds the model configuration for a training corpus, taking the input
/// geometry from the first sample.
fn ae_config(cfg: &RunConfig, sample: &Tensor) -> Result<AeConfig, CliError> {
    let dims = sample.shape();
    let mut ae = AeConfig::for_input(dims[0], dims[1], dims[2]);
    ae.encoder_channels = cfg.encoder_channels();
    ae.placement = cfg.placement();
    ae.lambda = cfg.lambda();
    ae.score_mode = cfg.score_mode_or(ae.score_mode);
    ae.block.k_prime = cfg.k_prime();
    ae.block.dilation = cfg.dilation();
    ae.block.reduction = cfg.reduction();
    ae.block.loss = cfg.loss();
    ae.validate().map_err(model_err)?;
    Ok(ae)
}

/// `train`: fit on a train-split manifest, write checkpoint + loss-log CSV.
pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest(cfg.require_data()?).map_err(data_err)?;
    if manifest.split != Split::Train {
        return Err(CliError::Usage(
            "training requires a train-split manifest (one-class protocol)".to_string(),
        ));
    }
    let tensors = manifest_tensors(&manifest).map_err(data_err)?;

    let ae = ae_config(cfg, &tensors[0])?;
    let mut model = AutoEncoder::build(ae, cfg.seed()).map_err(model_err)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs(),
        batch_size: cfg.batch_size(),
        learning_rate: cfg.learning_rate(),
        optimizer: Optimizer::adam_default(),
        seed: cfg.seed(),
    };

    let mut state = OptimState::new();
    let log = fit(&mut model, &tensors, &train_cfg, &mut state).map_err(train_err)?;
    for e in &log.epochs {
        println!(
            "epoch {} L_total={:.6} L_F={:.6} L_SSPCAB={:.6}",
            e.epoch, e.total, e.recon, e.block
        );
    }

    let out = cfg.require_out()?;
    save_checkpoint(&model, &train_cfg, &state, out).map_err(ckpt_err)?;
    let log_path = cfg
        .loss_log
        .clone()
        .unwrap_or_else(|| out.with_extension("losses.csv"));
    write_file(&log_path, &log.to_csv())?;
    println!(
        "checkpoint {} ; loss log {}",
        out.display(),
        log_path.display()
    );
    Ok(())
}

/// Writes one anomaly map as an 8-bit PGM, linearly rescaled to 0..255, and
/// appends the applied scale to the sidecar text.
fn write_map(dir: &Path, index: usize, map: &Tensor, sidecar: &mut String) -> Result<(), CliError> {
    let dims = map.shape();
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let normalized: Vec<f64> = map
        .data()
        .iter()
        .map(|&v| if range > 0.0 { (v - lo) / range } else { 0.0 })
        .collect();
    let img = RasterImage::from_tensor(
        &Tensor::new(vec![dims[0], dims[1], 1], normalized)
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    )
    .map_err(data_err)?;
    let name = format!("map_{index:05}.pgm");
    save_raster(&img, &dir.join(&name)).map_err(data_err)?;
    sidecar.push_str(&format!("{name} min {lo} max {hi}\n"));
    Ok(())
}

/// `score`: load a checkpoint, score every manifest frame, write the score
/// file (and optional rescaled anomaly-map PGMs with a scale sidecar).
pub fn cmd_score(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, _, _) = load_checkpoint(cfg.require_checkpoint()?).map_err(ckpt_err)?;
    let manifest = load_manifest(cfg.require_data()?).map_err(data_err)?;
    let tensors = manifest_tensors(&manifest).map_err(data_err)?;
    let mode = cfg.score_mode_or(model.config().score_mode);

    if let Some(dir) = &cfg.maps {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }

    let mut text = String::new();
    let mut sidecar = String::new();
    for (frame, (entry, t)) in manifest.entries.iter().zip(&tensors).enumerate() {
        let x = Tensor::stack(std::slice::from_ref(t))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let map = model.anomaly_map(&x).map_err(model_err)?;
        let score = frame_score(&map, mode).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push_str(&score_line(&entry.group, frame, score, entry.label));
        if let Some(dir) = &cfg.maps {
            write_map(dir, frame, &map, &mut sidecar)?;
        }
    }

    let out = cfg.require_out()?;
    write_file(out, &text)?;
    if let Some(dir) = &cfg.maps {
        write_file(&dir.join("maps.scale"), &sidecar)?;
        println!(
            "scored {} frames -> {} ; maps -> {}",
            manifest.entries.len(),
            out.display(),
            dir.display()
        );
    } else {
        println!("scored {} frames -> {}", manifest.entries.len(), out.display());
    }
    Ok(())
}

/// `eval`: turn a score file into the metrics report (stdout, optionally a
/// file).
pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.require_scores()?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let set = parse_score_file(&text).map_err(metric_err)?;
    let report = evaluate(&set).map_err(metric_err)?;
    let rendered = report.render();
    print!("{rendered}");
    if let Some(out) = &cfg.out {
        write_file(out, &rendered)?;
    }
    Ok(())
}

/// `gradcheck`: run the verification suites — finite-difference gradients
/// for every component, kernel-masking invariance, and the dense-kernel
/// oracle — and fail naming the offending component.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt: Option<String>) -> Result<(), CliError> {
    let opts = GradSuiteOptions {
        instances: cfg.instances(),
        base_seed: cfg.seed(),
        corrupt,
        ..GradSuiteOptions::default()
    };
    let reports = gradient_suite(&opts).map_err(verify_err)?;
    let mut failed: Vec<String> = Vec::new();
    for report in &reports {
        println!("{}", report.summary_line());
        if !report.passed() {
            failed.push(report.name.to_string());
        }
    }

    let masking = masking_invariance_suite(cfg.instances(), cfg.seed()).map_err(verify_err)?;
    println!(
        "{:<12} {}  {} positions, {} violations  ({} instances)",
        "masking",
        if masking.passed() { "pass" } else { "FAIL" },
        masking.positions_checked,
        masking.violations,
        masking.instances
    );
    if !masking.passed() {
        failed.push("masking".to_string());
    }

    let dense = dense_oracle_suite(cfg.instances(), cfg.seed()).map_err(verify_err)?;
    let dense_ok = dense.max_abs_diff <= 1e-12;
    println!(
        "{:<12} {}  max_abs_diff={:.3e}  ({} instances)",
        "dense_oracle",
        if dense_ok { "pass" } else { "FAIL" },
        dense.max_abs_diff,
        dense.instances
    );
    if !dense_ok {
        failed.push("dense_oracle".to_string());
    }

    if failed.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "verification failed: {}",
            failed.join(", ")
        )))
    }
}

/// Resolves the effective configuration: the config file (when given)
/// overridden by whatever the flags set.
pub fn resolve(config_path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match config_path {
        Some(path) => RunConfig::from_file(path),
        None => Ok(RunConfig::default()),
    }
}
