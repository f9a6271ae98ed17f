//! Seeded training loop, SGD/Adam optimizers, and versioned binary
//! checkpoints.
//!
//! Determinism is a hard contract here: given the same seed, config and data,
//! training produces bit-identical parameters, and a run that is
//! checkpointed and resumed matches an uninterrupted one exactly. The shuffle
//! order of epoch `e` therefore depends only on `(seed, e)`, never on how
//! many times the process was restarted.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{
    AeConfig, AutoEncoder, BlockConfig, ModelError, Placement, ScoreCombiner, ScoreMode,
};
use crate::numcore::{NumError, Tensor};
use crate::sspcab::ReconLoss;

/// Gradient-descent flavour. Adam keeps per-parameter moment estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam_default(),
            seed,
        }
    }

    fn validate(&self, dataset_len: usize) -> Result<(), TrainError> {
        if dataset_len == 0 {
            return Err(TrainError::Config("dataset is empty".to_string()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".to_string()));
        }
        if self.batch_size > dataset_len {
            return Err(TrainError::Config(format!(
                "batch_size {} exceeds dataset size {dataset_len}",
                self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Mutable optimizer state carried across epochs and checkpoints.
#[derive(Debug, Clone)]
pub struct OptimState {
    /// Per-parameter (first, second) moment estimates; allocated on the first
    /// Adam step, absent for SGD.
    pub moments: Option<Vec<(Tensor, Tensor)>>,
    /// Number of optimizer steps taken (drives Adam bias correction).
    pub step: u64,
    /// Number of completed epochs (drives resume).
    pub epochs_done: usize,
}

impl OptimState {
    pub fn new() -> Self {
        OptimState {
            moments: None,
            step: 0,
            epochs_done: 0,
        }
    }
}

impl Default for OptimState {
    fn default() -> Self {
        Self::new()
    }
}

/// Mean losses over one epoch (weighted by batch size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub block: f64,
}

/// Per-epoch loss history of one `fit` call.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    /// Plot-ready CSV with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_total,L_F,L_SSPCAB\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.total, e.recon, e.block));
        }
        out
    }
}

/// Errors from training.
#[derive(Debug)]
pub enum TrainError {
    Config(String),
    /// Loss became NaN/inf; names the 1-based epoch and batch.
    NonFiniteLoss { epoch: usize, batch: usize },
    Model(ModelError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Config(msg) => write!(f, "training configuration error: {msg}"),
            TrainError::NonFiniteLoss { epoch, batch } => write!(
                f,
                "non-finite loss at epoch {epoch}, batch {batch}; aborting"
            ),
            TrainError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            TrainError::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<NumError> for TrainError {
    fn from(e: NumError) -> Self {
        TrainError::Model(ModelError::Num(e))
    }
}

/// Runs epochs `state.epochs_done .. cfg.epochs` over `data` (rank-3 samples
/// `(h, w, c)`), updating the model in place. Resuming from a checkpointed
/// `state` continues the exact same trajectory.
pub fn fit(
    model: &mut AutoEncoder,
    data: &[Tensor],
    cfg: &TrainConfig,
    state: &mut OptimState,
) -> Result<TrainLog, TrainError> {
    cfg.validate(data.len())?;
    let sample_shape = [
        model.config().height,
        model.config().width,
        model.config().channels,
    ];
    for (i, sample) in data.iter().enumerate() {
        sample.expect_shape(&format!("training sample {i}"), &sample_shape)?;
    }

    let mut log = TrainLog::default();
    for epoch in state.epochs_done..cfg.epochs {
        // Shuffle order is a pure function of (seed, epoch): stream `epoch+1`
        // of the seeded generator, independent of restarts.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = (0.0, 0.0, 0.0);
        let mut seen = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let members: Vec<Tensor> = chunk.iter().map(|&i| data[i].clone()).collect();
            let batch = Tensor::stack(&members)?;
            let (breakdown, grads) = model.total_loss_with_grads(&batch)?;
            if !breakdown.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: batch_idx + 1,
                });
            }
            let mut params = model.params_mut();
            optim_step(&mut params, &grads, state, cfg)?;

            let n = chunk.len() as f64;
            sums.0 += breakdown.total * n;
            sums.1 += breakdown.recon * n;
            sums.2 += breakdown.block * n;
            seen += chunk.len();
        }

        let n = seen as f64;
        log.epochs.push(EpochStats {
            epoch: epoch + 1,
            total: sums.0 / n,
            recon: sums.1 / n,
            block: sums.2 / n,
        });
        state.epochs_done = epoch + 1;
    }
    Ok(log)
}

/// One optimizer update over aligned `(params, grads)` lists.
pub fn optim_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Tensor],
    state: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() {
        return Err(TrainError::Config(format!(
            "parameter count {} vs gradient count {}",
            params.len(),
            grads.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        g.expect_shape(&format!("gradient for {name}"), p.shape())?;
    }
    state.step += 1;

    match cfg.optimizer {
        Optimizer::Sgd => {
            for ((_, p), g) in params.iter_mut().zip(grads) {
                p.add_scaled(g, -cfg.learning_rate)?;
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            if state.moments.is_none() {
                state.moments = Some(
                    params
                        .iter()
                        .map(|(_, p)| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
                        .collect(),
                );
            }
            let moments = state.moments.as_mut().unwrap();
            if moments.len() != params.len() {
                return Err(TrainError::Config(format!(
                    "optimizer state tracks {} parameters, model has {}",
                    moments.len(),
                    params.len()
                )));
            }
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for (((_, p), g), (m, v)) in params.iter_mut().zip(grads).zip(moments.iter_mut()) {
                let pd = p.data_mut();
                let md = m.data_mut();
                let vd = v.data_mut();
                for ((pv, mv), (vv, gv)) in pd
                    .iter_mut()
                    .zip(md.iter_mut())
                    .zip(vd.iter_mut().zip(g.data()))
                {
                    *mv = beta1 * *mv + (1.0 - beta1) * gv;
                    *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"SSPC";
const VERSION: u32 = 1;

/// Errors from checkpoint I/O; every format error names the byte offset.
#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    BadMagic { offset: usize },
    UnsupportedVersion { version: u32, offset: usize },
    Truncated { offset: usize, needed: usize },
    Corrupt { offset: usize, message: String },
    Model(ModelError),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint I/O error: {e}"),
            CheckpointError::BadMagic { offset } => {
                write!(f, "not a checkpoint file (bad magic at byte {offset})")
            }
            CheckpointError::UnsupportedVersion { version, offset } => write!(
                f,
                "unsupported checkpoint version {version} (at byte {offset})"
            ),
            CheckpointError::Truncated { offset, needed } => write!(
                f,
                "checkpoint truncated at byte {offset} ({needed} more bytes expected)"
            ),
            CheckpointError::Corrupt { offset, message } => {
                write!(f, "corrupt checkpoint at byte {offset}: {message}")
            }
            CheckpointError::Model(e) => write!(f, "checkpoint does not fit the model: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CheckpointError::Io(e) => Some(e),
            CheckpointError::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

impl From<ModelError> for CheckpointError {
    fn from(e: ModelError) -> Self {
        CheckpointError::Model(e)
    }
}

fn render_config(ae: &AeConfig, train: &TrainConfig, state: &OptimState) -> String {
    let mut s = String::new();
    s.push_str(&format!("height={}\n", ae.height));
    s.push_str(&format!("width={}\n", ae.width));
    s.push_str(&format!("channels={}\n", ae.channels));
    let enc: Vec<String> = ae.encoder_channels.iter().map(|c| c.to_string()).collect();
    s.push_str(&format!("encoder_channels={}\n", enc.join(",")));
    s.push_str(&format!("placement={}\n", ae.placement));
    s.push_str(&format!("lambda={}\n", ae.lambda));
    s.push_str(&format!("score_mode={}\n", ae.score_mode));
    s.push_str(&format!("w_recon={}\n", ae.score_combiner.w_recon));
    s.push_str(&format!("w_block={}\n", ae.score_combiner.w_block));
    s.push_str(&format!("kprime={}\n", ae.block.k_prime));
    s.push_str(&format!("dilation={}\n", ae.block.dilation));
    s.push_str(&format!("reduction={}\n", ae.block.reduction));
    s.push_str(&format!("loss={}\n", ae.block.loss));
    s.push_str(&format!("epochs={}\n", train.epochs));
    s.push_str(&format!("batch_size={}\n", train.batch_size));
    s.push_str(&format!("learning_rate={}\n", train.learning_rate));
    s.push_str(&format!("optimizer={}\n", train.optimizer.name()));
    if let Optimizer::Adam {
        beta1,
        beta2,
        epsilon,
    } = train.optimizer
    {
        s.push_str(&format!("beta1={beta1}\n"));
        s.push_str(&format!("beta2={beta2}\n"));
        s.push_str(&format!("epsilon={epsilon}\n"));
    }
    s.push_str(&format!("seed={}\n", train.seed));
    s.push_str(&format!("step={}\n", state.step));
    s.push_str(&format!("epochs_done={}\n", state.epochs_done));
    s.push_str(&format!(
        "has_moments={}\n",
        if state.moments.is_some() { 1 } else { 0 }
    ));
    s
}

struct ConfigMap {
    entries: std::collections::BTreeMap<String, String>,
    offset: usize,
}

impl ConfigMap {
    fn parse(text: &str, offset: usize) -> Result<Self, CheckpointError> {
        let mut entries = std::collections::BTreeMap::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CheckpointError::Corrupt {
                offset,
                message: format!("config line without '=': {line}"),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ConfigMap { entries, offset })
    }

    fn get(&self, key: &str) -> Result<&str, CheckpointError> {
        self.entries
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| CheckpointError::Corrupt {
                offset: self.offset,
                message: format!("missing config key '{key}'"),
            })
    }

    fn parse_as<T: FromStr>(&self, key: &str) -> Result<T, CheckpointError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.parse().map_err(|e| CheckpointError::Corrupt {
            offset: self.offset,
            message: format!("bad value for '{key}': {e}"),
        })
    }
}

/// Serializes model + training config + optimizer state. The format is
/// self-describing: magic, version, length-prefixed config text, then named
/// tensor records with little-endian 64-bit values.
pub fn save_checkpoint(
    model: &AutoEncoder,
    train: &TrainConfig,
    state: &OptimState,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let config = render_config(model.config(), train, state);
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());

    let params = model.params();
    let mut records: Vec<(String, &Tensor)> = params
        .iter()
        .map(|(n, t)| (n.clone(), *t))
        .collect();
    if let Some(moments) = &state.moments {
        if moments.len() != params.len() {
            return Err(CheckpointError::Model(ModelError::Config(format!(
                "optimizer state tracks {} parameters, model has {}",
                moments.len(),
                params.len()
            ))));
        }
        for ((name, _), (m, v)) in params.iter().zip(moments) {
            records.push((format!("optim.m.{name}"), m));
            records.push((format!("optim.v.{name}"), v));
        }
    }

    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, tensor) in records {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &value in tensor.data() {
            buf.extend_from_slice(&value.to_le_bytes());
        }
    }

    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated {
                offset: self.buf.len(),
                needed: self.pos + n - self.buf.len(),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let bytes = self.take(4)?;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let bytes = self.take(8)?;
        Ok(f64::from_le_bytes(bytes.try_into().unwrap()))
    }
}

/// Restores a model, its training config, and the optimizer state.
pub fn load_checkpoint(path: &Path) -> Result<(AutoEncoder, TrainConfig, OptimState), CheckpointError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let magic_offset = r.pos;
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic {
            offset: magic_offset,
        });
    }
    let version_offset = r.pos;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            version,
            offset: version_offset,
        });
    }

    let config_len = r.u32()? as usize;
    let config_offset = r.pos;
    let config_text =
        std::str::from_utf8(r.take(config_len)?).map_err(|e| CheckpointError::Corrupt {
            offset: config_offset,
            message: format!("config text is not UTF-8: {e}"),
        })?;
    let cfg = ConfigMap::parse(config_text, config_offset)?;

    let encoder_channels = cfg
        .get("encoder_channels")?
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CheckpointError::Corrupt {
            offset: config_offset,
            message: format!("bad encoder_channels: {e}"),
        })?;
    let ae = AeConfig {
        height: cfg.parse_as("height")?,
        width: cfg.parse_as("width")?,
        channels: cfg.parse_as("channels")?,
        encoder_channels,
        placement: cfg.parse_as::<Placement>("placement")?,
        lambda: cfg.parse_as("lambda")?,
        score_mode: cfg.parse_as::<ScoreMode>("score_mode")?,
        score_combiner: ScoreCombiner {
            w_recon: cfg.parse_as("w_recon")?,
            w_block: cfg.parse_as("w_block")?,
        },
        block: BlockConfig {
            k_prime: cfg.parse_as("kprime")?,
            dilation: cfg.parse_as("dilation")?,
            reduction: cfg.parse_as("reduction")?,
            loss: cfg.parse_as::<ReconLoss>("loss")?,
        },
    };
    let optimizer = match cfg.get("optimizer")? {
        "sgd" => Optimizer::Sgd,
        "adam" => Optimizer::Adam {
            beta1: cfg.parse_as("beta1")?,
            beta2: cfg.parse_as("beta2")?,
            epsilon: cfg.parse_as("epsilon")?,
        },
        other => {
            return Err(CheckpointError::Corrupt {
                offset: config_offset,
                message: format!("unknown optimizer '{other}'"),
            })
        }
    };
    let train = TrainConfig {
        epochs: cfg.parse_as("epochs")?,
        batch_size: cfg.parse_as("batch_size")?,
        learning_rate: cfg.parse_as("learning_rate")?,
        optimizer,
        seed: cfg.parse_as("seed")?,
    };
    let step: u64 = cfg.parse_as("step")?;
    let epochs_done: usize = cfg.parse_as("epochs_done")?;
    let has_moments: u8 = cfg.parse_as("has_moments")?;

    let n_tensors = r.u32()? as usize;
    let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = r.u32()? as usize;
        let name_offset = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| CheckpointError::Corrupt {
                offset: name_offset,
                message: format!("tensor name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let shape_offset = r.pos;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt {
            offset: shape_offset,
            message: format!("tensor '{name}': {e}"),
        })?;
        tensors.push((name, tensor));
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Corrupt {
            offset: r.pos,
            message: format!("{} trailing bytes after last tensor", buf.len() - r.pos),
        });
    }

    let mut model = AutoEncoder::build(ae, train.seed)?;
    let model_params: Vec<(String, Tensor)> = tensors
        .iter()
        .filter(|(n, _)| !n.starts_with("optim."))
        .cloned()
        .collect();
    model.set_params_by_name(&model_params)?;

    let moments = if has_moments == 1 {
        let lookup: std::collections::HashMap<&str, &Tensor> = tensors
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        let mut moments = Vec::new();
        for (name, param) in model.params() {
            let m = lookup
                .get(format!("optim.m.{name}").as_str())
                .ok_or_else(|| CheckpointError::Corrupt {
                    offset: buf.len(),
                    message: format!("missing optimizer moment for '{name}'"),
                })?;
            let v = lookup
                .get(format!("optim.v.{name}").as_str())
                .ok_or_else(|| CheckpointError::Corrupt {
                    offset: buf.len(),
                    message: format!("missing optimizer variance for '{name}'"),
                })?;
            m.expect_shape(&format!("optim.m.{name}"), param.shape())
                .map_err(ModelError::Num)?;
            v.expect_shape(&format!("optim.v.{name}"), param.shape())
                .map_err(ModelError::Num)?;
            moments.push(((*m).clone(), (*v).clone()));
        }
        Some(moments)
    } else {
        None
    };

    Ok((
        model,
        train,
        OptimState {
            moments,
            step,
            epochs_done,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_model(placement: Placement, seed: u64) -> AutoEncoder {
        let mut cfg = AeConfig::for_input(8, 8, 1);
        cfg.encoder_channels = vec![2, 3, 4];
        cfg.placement = placement;
        cfg.block.reduction = 2;
        AutoEncoder::build(cfg, seed).unwrap()
    }

    fn tiny_data(n: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let data = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
                Tensor::new(vec![8, 8, 1], data).unwrap()
            })
            .collect()
    }

    fn params_snapshot(model: &AutoEncoder) -> Vec<Vec<f64>> {
        model.params().iter().map(|(_, t)| t.data().to_vec()).collect()
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let mut model = tiny_model(Placement::Late, 1);
        let before = params_snapshot(&model);
        let data = tiny_data(4, 2);
        let mut cfg = TrainConfig::with_seed(3);
        cfg.epochs = 0;
        cfg.batch_size = 2;
        let log = fit(&mut model, &data, &cfg, &mut OptimState::new()).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(params_snapshot(&model), before);
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let data = tiny_data(6, 4);
        let mut cfg = TrainConfig::with_seed(5);
        cfg.epochs = 2;
        cfg.batch_size = 3;

        let run = || {
            let mut model = tiny_model(Placement::Late, 6);
            fit(&mut model, &data, &cfg, &mut OptimState::new()).unwrap();
            params_snapshot(&model)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sgd_hand_case() {
        let mut t = Tensor::filled(&[1], 1.0);
        let mut params = vec![("p".to_string(), &mut t)];
        let grads = vec![Tensor::filled(&[1], 2.0)];
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 0.1,
            optimizer: Optimizer::Sgd,
            seed: 0,
        };
        let mut state = OptimState::new();
        optim_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert!((t.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn sgd_zero_gradient_leaves_parameters_unchanged() {
        let mut t = Tensor::filled(&[3], 0.5);
        let mut params = vec![("p".to_string(), &mut t)];
        let grads = vec![Tensor::zeros(&[3])];
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd,
            ..TrainConfig::with_seed(0)
        };
        optim_step(&mut params, &grads, &mut OptimState::new(), &cfg).unwrap();
        assert!(t.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn adam_first_step_magnitude_matches_hand_formula() {
        // With g = 1 everywhere, bias correction gives m_hat = v_hat = 1, so
        // the first update is exactly lr / (1 + epsilon).
        let mut t = Tensor::zeros(&[2]);
        let mut params = vec![("p".to_string(), &mut t)];
        let grads = vec![Tensor::filled(&[2], 1.0)];
        let cfg = TrainConfig::with_seed(0);
        let mut state = OptimState::new();
        optim_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let expected = -cfg.learning_rate / (1.0 + 1e-8);
        for &v in t.iter() {
            assert!((v - expected).abs() < 1e-18);
        }
    }

    #[test]
    fn optim_step_rejects_shape_mismatch() {
        let mut t = Tensor::zeros(&[2]);
        let mut params = vec![("p".to_string(), &mut t)];
        let grads = vec![Tensor::zeros(&[3])];
        let cfg = TrainConfig::with_seed(0);
        assert!(optim_step(&mut params, &grads, &mut OptimState::new(), &cfg).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let mut model = tiny_model(Placement::None, 7);
        let mut data = tiny_data(2, 8);
        data[0].data_mut()[5] = f64::NAN;
        let mut cfg = TrainConfig::with_seed(9);
        cfg.epochs = 1;
        cfg.batch_size = 2;
        match fit(&mut model, &data, &cfg, &mut OptimState::new()) {
            Err(TrainError::NonFiniteLoss { epoch: 1, batch: 1 }) => {}
            other => panic!("expected NonFiniteLoss at epoch 1 batch 1, got {other:?}"),
        }
    }

    #[test]
    fn batch_size_larger_than_dataset_is_rejected() {
        let mut model = tiny_model(Placement::None, 10);
        let data = tiny_data(2, 11);
        let mut cfg = TrainConfig::with_seed(12);
        cfg.batch_size = 5;
        assert!(matches!(
            fit(&mut model, &data, &cfg, &mut OptimState::new()),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        let mut model = tiny_model(Placement::Late, 13);
        let data = tiny_data(4, 14);
        let mut cfg = TrainConfig::with_seed(15);
        cfg.epochs = 1;
        cfg.batch_size = 2;
        let mut state = OptimState::new();
        fit(&mut model, &data, &cfg, &mut state).unwrap();

        save_checkpoint(&model, &cfg, &state, &path).unwrap();
        let (restored, cfg2, state2) = load_checkpoint(&path).unwrap();

        assert_eq!(cfg, cfg2);
        assert_eq!(state.step, state2.step);
        assert_eq!(state.epochs_done, state2.epochs_done);
        for ((na, ta), (nb, tb)) in model.params().iter().zip(restored.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na} differs after round trip");
        }
        let (sm, rm) = (state.moments.unwrap(), state2.moments.unwrap());
        for ((m1, v1), (m2, v2)) in sm.iter().zip(rm.iter()) {
            assert_eq!(m1.data(), m2.data());
            assert_eq!(v1.data(), v2.data());
        }

        // identical forward outputs on a probe input
        let probe = Tensor::stack(&tiny_data(1, 16)).unwrap();
        let a = model.forward(&probe).unwrap().reconstruction;
        let b = restored.forward(&probe).unwrap().reconstruction;
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let data = tiny_data(6, 17);
        let make_cfg = |epochs| {
            let mut c = TrainConfig::with_seed(18);
            c.epochs = epochs;
            c.batch_size = 2;
            c
        };

        // uninterrupted: 3 epochs straight
        let mut full = tiny_model(Placement::Late, 19);
        let mut full_state = OptimState::new();
        fit(&mut full, &data, &make_cfg(3), &mut full_state).unwrap();

        // interrupted: 1 epoch, checkpoint, restore, 2 more
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resume.ckpt");
        let mut part = tiny_model(Placement::Late, 19);
        let mut part_state = OptimState::new();
        fit(&mut part, &data, &make_cfg(1), &mut part_state).unwrap();
        save_checkpoint(&part, &make_cfg(3), &part_state, &path).unwrap();
        let (mut resumed, resumed_cfg, mut resumed_state) = load_checkpoint(&path).unwrap();
        assert_eq!(resumed_state.epochs_done, 1);
        fit(&mut resumed, &data, &resumed_cfg, &mut resumed_state).unwrap();

        for ((na, ta), (_, tb)) in full.params().iter().zip(resumed.params().iter()) {
            assert_eq!(ta.data(), tb.data(), "{na} diverged after resume");
        }
        assert_eq!(full_state.step, resumed_state.step);
    }

    #[test]
    fn truncated_checkpoint_is_rejected_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let model = tiny_model(Placement::None, 20);
        let cfg = TrainConfig::with_seed(21);
        save_checkpoint(&model, &cfg, &OptimState::new(), &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_checkpoint(&path) {
            Err(CheckpointError::Truncated { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();

        let p1 = dir.path().join("magic.ckpt");
        std::fs::write(&p1, b"NOPE").unwrap();
        assert!(matches!(
            load_checkpoint(&p1),
            Err(CheckpointError::BadMagic { offset: 0 })
        ));

        let p2 = dir.path().join("version.ckpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SSPC");
        bytes.extend_from_slice(&99u32.to_le_bytes());
        std::fs::write(&p2, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&p2),
            Err(CheckpointError::UnsupportedVersion {
                version: 99,
                offset: 4
            })
        ));
    }

    #[test]
    fn csv_log_has_contract_header() {
        let log = TrainLog {
            epochs: vec![EpochStats {
                epoch: 1,
                total: 0.5,
                recon: 0.4,
                block: 1.0,
            }],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,L_total,L_F,L_SSPCAB\n"));
        assert!(csv.contains("1,0.5,0.4,1"));
    }
}
