//! Convolutional auto-encoder with an optional SSPCAB slot, the joint
//! training objective, and inference-time anomaly scoring.
//!
//! The backbone is a plain encoder/decoder: three stride-2 convolutions down,
//! three upsample+convolution stages back up, and a linear head convolution.
//! The block can replace activations right after the first encoder stage
//! (`early`), at the bottleneck (`middle`), or just before the head (`late`).
//! The training objective adds the block's self-supervised reconstruction
//! loss to the auto-encoder's own: `L_total = L_recon + lambda * L_block`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numcore::{
    conv2d_backward, conv2d_forward, relu, relu_backward, upsample2x_backward, upsample2x_nearest,
    ConvParams, NumError, Tensor,
};
use crate::sspcab::{
    sspcab_backward, sspcab_forward_cached, ReconLoss, SspcabBlock, SspcabCache,
};

/// Keeps the backbone initialization identical whether or not a block is
/// present: block parameters are drawn from a separate stream derived from
/// the user seed, so `placement=none` and `placement=late` models share
/// bit-identical backbone weights under the same seed.
const BLOCK_SEED_SALT: u64 = 0x6d61_736b_6564_u64;

/// Errors raised by model construction and use.
#[derive(Debug)]
pub enum ModelError {
    /// Invalid or inconsistent configuration.
    Config(String),
    /// Numeric/shape failure from the layer stack.
    Num(NumError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config(msg) => write!(f, "configuration error: {msg}"),
            ModelError::Num(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ModelError::Num(e) => Some(e),
            _ => None,
        }
    }
}

impl From<NumError> for ModelError {
    fn from(e: NumError) -> Self {
        ModelError::Num(e)
    }
}

/// Where (if anywhere) the block sits in the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    None,
    /// After the first encoder stage (half resolution).
    Early,
    /// After the bottleneck (lowest resolution).
    Middle,
    /// Right before the head convolution (full resolution).
    Late,
}

impl FromStr for Placement {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Placement::None),
            "early" => Ok(Placement::Early),
            "middle" => Ok(Placement::Middle),
            "late" => Ok(Placement::Late),
            other => Err(format!(
                "unknown placement '{other}' (expected none, early, middle or late)"
            )),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Placement::None => "none",
            Placement::Early => "early",
            Placement::Middle => "middle",
            Placement::Late => "late",
        };
        f.write_str(s)
    }
}

/// How a per-pixel anomaly map collapses to one score per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Spatial mean of the map.
    Mean,
    /// Spatial max after 3x3 box smoothing (robust to single-pixel spikes).
    Max,
}

impl FromStr for ScoreMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(ScoreMode::Mean),
            "max" => Ok(ScoreMode::Max),
            other => Err(format!("unknown score mode '{other}' (expected mean or max)")),
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Mean => "mean",
            ScoreMode::Max => "max",
        })
    }
}

/// Mixing weights for the two error maps that can feed the anomaly map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreCombiner {
    pub w_recon: f64,
    pub w_block: f64,
}

impl Default for ScoreCombiner {
    fn default() -> Self {
        ScoreCombiner {
            w_recon: 1.0,
            w_block: 0.0,
        }
    }
}

/// Geometry and loss of the block itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub k_prime: usize,
    pub dilation: usize,
    pub reduction: usize,
    pub loss: ReconLoss,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            k_prime: 1,
            dilation: 1,
            reduction: 8,
            loss: ReconLoss::Mse,
        }
    }
}

/// Full model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub encoder_channels: Vec<usize>,
    pub placement: Placement,
    pub lambda: f64,
    pub score_mode: ScoreMode,
    pub score_combiner: ScoreCombiner,
    pub block: BlockConfig,
}

impl AeConfig {
    /// Defaults for a given input geometry: encoder channels 16/32/64,
    /// late placement, lambda 0.1, mean scoring from the reconstruction map.
    pub fn for_input(height: usize, width: usize, channels: usize) -> Self {
        AeConfig {
            height,
            width,
            channels,
            encoder_channels: vec![16, 32, 64],
            placement: Placement::Late,
            lambda: 0.1,
            score_mode: ScoreMode::Mean,
            score_combiner: ScoreCombiner::default(),
            block: BlockConfig::default(),
        }
    }

    /// Channel count seen by the block at the configured placement.
    pub fn block_channels(&self) -> Option<usize> {
        let enc = &self.encoder_channels;
        match self.placement {
            Placement::None => None,
            Placement::Early | Placement::Late => Some(enc[0]),
            Placement::Middle => Some(*enc.last().unwrap()),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(ModelError::Config(format!(
                "input dims must be positive, got {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        if self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(ModelError::Config(format!(
                "input height and width must be multiples of 8, got {}x{}",
                self.height, self.width
            )));
        }
        if self.encoder_channels.is_empty() {
            return Err(ModelError::Config(
                "encoder_channels must be non-empty".to_string(),
            ));
        }
        if self.encoder_channels.iter().any(|&c| c == 0) {
            return Err(ModelError::Config(
                "encoder_channels must all be positive".to_string(),
            ));
        }
        let stages = self.encoder_channels.len();
        let factor = 1usize << stages;
        if self.height % factor != 0 || self.width % factor != 0 {
            return Err(ModelError::Config(format!(
                "{stages} stride-2 stages need input dims divisible by {factor}, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ModelError::Config(format!(
                "lambda must be a non-negative finite number, got {}",
                self.lambda
            )));
        }
        if self.score_combiner.w_recon < 0.0 || self.score_combiner.w_block < 0.0 {
            return Err(ModelError::Config(
                "score combiner weights must be non-negative".to_string(),
            ));
        }
        if self.score_combiner.w_block > 0.0 && self.placement == Placement::None {
            return Err(ModelError::Config(
                "score combiner uses the block error map but placement is none".to_string(),
            ));
        }
        if self.block.k_prime == 0 {
            return Err(ModelError::Config(
                "block sub-kernel size must be positive".to_string(),
            ));
        }
        if let Some(c) = self.block_channels() {
            let r = self.block.reduction;
            if r == 0 || c % r != 0 {
                return Err(ModelError::Config(format!(
                    "block sees {c} channels at placement {}, not divisible by reduction {r}",
                    self.placement
                )));
            }
        }
        Ok(())
    }
}

/// One element of the layer stack.
#[derive(Debug, Clone)]
enum Layer {
    Conv { name: String, params: ConvParams },
    Relu,
    Upsample,
    Block(SspcabBlock),
}

/// Per-layer forward intermediates for the backward pass.
enum LayerTrace {
    Conv { input: Tensor },
    Relu { input: Tensor },
    Upsample,
    Block {
        input: Tensor,
        cache: SspcabCache,
        output: Tensor,
    },
}

/// Forward results: the reconstruction plus, when a block is present, the
/// tensors its self-supervised loss compares.
#[derive(Debug, Clone)]
pub struct AeOutputs {
    pub reconstruction: Tensor,
    pub block_input: Option<Tensor>,
    pub block_output: Option<Tensor>,
}

/// The three components of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub block: f64,
}

/// The auto-encoder: an ordered layer stack plus its configuration.
#[derive(Debug, Clone)]
pub struct AutoEncoder {
    config: AeConfig,
    layers: Vec<Layer>,
}

impl AutoEncoder {
    /// Builds the stack with deterministic seeded initialization. The same
    /// `(config, seed)` always yields bit-identical parameters, and the
    /// backbone draws are independent of whether a block is configured.
    pub fn build(config: AeConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let enc = &config.encoder_channels;
        let stages = enc.len();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(5 * stages + 2);
        let mut c_prev = config.channels;
        for (idx, &ch) in enc.iter().enumerate() {
            layers.push(Layer::Conv {
                name: format!("enc{}", idx + 1),
                params: ConvParams::init(ch, 3, 3, c_prev, 2, 1, &mut rng),
            });
            layers.push(Layer::Relu);
            c_prev = ch;
        }
        for idx in 0..stages {
            // mirrored channel ladder, e.g. 64 -> 32 -> 16 -> 16
            let out_ch = if idx < stages - 1 {
                enc[stages - 2 - idx]
            } else {
                enc[0]
            };
            layers.push(Layer::Upsample);
            layers.push(Layer::Conv {
                name: format!("dec{}", idx + 1),
                params: ConvParams::init(out_ch, 3, 3, c_prev, 1, 1, &mut rng),
            });
            layers.push(Layer::Relu);
            c_prev = out_ch;
        }
        layers.push(Layer::Conv {
            name: "head".to_string(),
            params: ConvParams::init(config.channels, 3, 3, c_prev, 1, 1, &mut rng),
        });

        if let Some(block_c) = config.block_channels() {
            let slot = match config.placement {
                Placement::Early => 2,
                Placement::Middle => 2 * stages,
                Placement::Late => layers.len() - 1,
                Placement::None => unreachable!(),
            };
            let mut block_rng = ChaCha8Rng::seed_from_u64(seed ^ BLOCK_SEED_SALT);
            let block = SspcabBlock::init(
                block_c,
                config.block.k_prime,
                config.block.dilation,
                config.block.reduction,
                &mut block_rng,
            )?;
            layers.insert(slot, Layer::Block(block));
        }

        Ok(AutoEncoder { config, layers })
    }

    pub fn config(&self) -> &AeConfig {
        &self.config
    }

    /// Most recent block reconstruction loss, if a block has run.
    pub fn last_block_loss(&self) -> Option<f64> {
        self.layers.iter().find_map(|l| match l {
            Layer::Block(b) => b.last_loss,
            _ => None,
        })
    }

    fn expect_input(&self, x: &Tensor) -> Result<(), ModelError> {
        let xd = x.expect_rank("model input", 4)?;
        if xd[1] != self.config.height || xd[2] != self.config.width || xd[3] != self.config.channels
        {
            return Err(ModelError::Num(NumError::ShapeMismatch {
                context: "model input vs configured geometry".to_string(),
                expected: vec![xd[0], self.config.height, self.config.width, self.config.channels],
                actual: xd.to_vec(),
            }));
        }
        Ok(())
    }

    fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Vec<LayerTrace>), ModelError> {
        self.expect_input(x)?;
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            match layer {
                Layer::Conv { params, .. } => {
                    let out = conv2d_forward(&cur, params)?;
                    trace.push(LayerTrace::Conv { input: cur });
                    cur = out;
                }
                Layer::Relu => {
                    let out = relu(&cur);
                    trace.push(LayerTrace::Relu { input: cur });
                    cur = out;
                }
                Layer::Upsample => {
                    cur = upsample2x_nearest(&cur)?;
                    trace.push(LayerTrace::Upsample);
                }
                Layer::Block(block) => {
                    let (out, cache) = sspcab_forward_cached(&cur, block)?;
                    trace.push(LayerTrace::Block {
                        input: cur,
                        cache,
                        output: out.clone(),
                    });
                    cur = out;
                }
            }
        }
        Ok((cur, trace))
    }

    /// Runs the stack, returning the reconstruction and (when a block is
    /// present) the block's input and output.
    pub fn forward(&self, x: &Tensor) -> Result<AeOutputs, ModelError> {
        let (reconstruction, trace) = self.forward_traced(x)?;
        let (block_input, block_output) = trace
            .iter()
            .find_map(|t| match t {
                LayerTrace::Block { input, output, .. } => {
                    Some((Some(input.clone()), Some(output.clone())))
                }
                _ => None,
            })
            .unwrap_or((None, None));
        Ok(AeOutputs {
            reconstruction,
            block_input,
            block_output,
        })
    }

    /// Smallest absolute nonzero pre-activation feeding any rectifier in the
    /// stack (backbone ReLUs, the block's post-conv ReLU, and the attention
    /// bottleneck). Finite-difference gradient checks are only trustworthy
    /// when this margin comfortably exceeds the probe step, so verification
    /// redraws instances that land too close to a kink.
    ///
    /// Exact zeros are excluded deliberately: they arise when a rectifier's
    /// entire input patch is already dead (all-zero), which pins the value at
    /// zero under any parameter perturbation — both the analytic and the
    /// numeric gradient agree it is exactly zero, so no kink is crossed.
    pub fn relu_margin(&self, x: &Tensor) -> Result<f64, ModelError> {
        let (_, trace) = self.forward_traced(x)?;
        let mut margin = f64::INFINITY;
        let fold = |m: f64, t: &Tensor| {
            t.iter()
                .filter(|&&v| v != 0.0)
                .fold(m, |acc, &v| acc.min(v.abs()))
        };
        for step in &trace {
            match step {
                LayerTrace::Relu { input } => margin = fold(margin, input),
                LayerTrace::Block { cache, .. } => {
                    margin = fold(margin, &cache.conv_out);
                    margin = fold(margin, &cache.se_cache.pre1);
                }
                _ => {}
            }
        }
        Ok(margin)
    }

    /// `L_total = L_recon + lambda * L_block` on a batch; updates the block's
    /// cached `last_loss`.
    pub fn total_loss(&mut self, x: &Tensor) -> Result<LossBreakdown, ModelError> {
        let (breakdown, _) = self.loss_inner(x, self.config.lambda, false)?;
        self.record_block_loss(&breakdown);
        Ok(breakdown)
    }

    /// Loss plus gradients for every parameter, in [`Self::params`] order.
    pub fn total_loss_with_grads(
        &mut self,
        x: &Tensor,
    ) -> Result<(LossBreakdown, Vec<Tensor>), ModelError> {
        let (breakdown, grads) = self.loss_inner(x, self.config.lambda, true)?;
        self.record_block_loss(&breakdown);
        Ok((breakdown, grads.expect("gradients requested")))
    }

    /// Loss and gradients of the reconstruction term alone, as if the block
    /// loss were absent (equivalently, lambda = 0).
    pub fn recon_loss_with_grads(&self, x: &Tensor) -> Result<(f64, Vec<Tensor>), ModelError> {
        let (breakdown, grads) = self.loss_inner(x, 0.0, true)?;
        Ok((breakdown.recon, grads.expect("gradients requested")))
    }

    fn record_block_loss(&mut self, breakdown: &LossBreakdown) {
        let block_loss = breakdown.block;
        for layer in &mut self.layers {
            if let Layer::Block(b) = layer {
                b.last_loss = Some(block_loss);
            }
        }
    }

    fn loss_inner(
        &self,
        x: &Tensor,
        lambda: f64,
        want_grads: bool,
    ) -> Result<(LossBreakdown, Option<Vec<Tensor>>), ModelError> {
        let (x_out, trace) = self.forward_traced(x)?;
        let recon = ReconLoss::Mse.value(&x_out, x)?;

        let block_pair = trace.iter().find_map(|t| match t {
            LayerTrace::Block { input, output, .. } => Some((input, output)),
            _ => None,
        });
        let block_loss = match block_pair {
            Some((input, output)) => self.config.block.loss.value(output, input)?,
            None => 0.0,
        };
        let total = if lambda != 0.0 {
            recon + lambda * block_loss
        } else {
            recon
        };
        let breakdown = LossBreakdown {
            total,
            recon,
            block: block_loss,
        };
        if !want_grads {
            return Ok((breakdown, None));
        }

        // Reverse walk. Parameter slots are indexed in forward order.
        let slots = self.param_slot_offsets();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.param_count()];
        let mut g = ReconLoss::Mse.grad_x_hat(&x_out, x)?;
        for (layer_idx, (layer, tr)) in self.layers.iter().zip(&trace).enumerate().rev() {
            match (layer, tr) {
                (Layer::Conv { params, .. }, LayerTrace::Conv { input }) => {
                    let cg = conv2d_backward(input, params, &g)?;
                    let base = slots[layer_idx];
                    grads[base] = Some(cg.weights);
                    grads[base + 1] = Some(cg.bias);
                    g = cg.x;
                }
                (Layer::Relu, LayerTrace::Relu { input }) => {
                    g = relu_backward(input, &g)?;
                }
                (Layer::Upsample, LayerTrace::Upsample) => {
                    g = upsample2x_backward(&g)?;
                }
                (
                    Layer::Block(block),
                    LayerTrace::Block {
                        input,
                        cache,
                        output,
                    },
                ) => {
                    // The block output feeds both the next layer and the
                    // self-supervised loss; its input doubles as the loss
                    // target (gradient is the exact negation because the
                    // loss depends only on the residual).
                    let loss_grad = if lambda != 0.0 {
                        Some(self.config.block.loss.grad_x_hat(output, input)?)
                    } else {
                        None
                    };
                    if let Some(ref lg) = loss_grad {
                        g.add_scaled(lg, lambda)?;
                    }
                    let bg = sspcab_backward(input, block, cache, &g)?;
                    let base = slots[layer_idx];
                    grads[base] = Some(bg.sub_kernels);
                    grads[base + 1] = Some(bg.w1);
                    grads[base + 2] = Some(bg.w2);
                    g = bg.x;
                    if let Some(ref lg) = loss_grad {
                        g.add_scaled(lg, -lambda)?;
                    }
                }
                _ => unreachable!("trace desynchronized from layer stack"),
            }
        }

        let grads = grads
            .into_iter()
            .map(|g| g.expect("every parameter slot filled"))
            .collect();
        Ok((breakdown, Some(grads)))
    }

    fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv { .. } => 2,
                Layer::Block(_) => 3,
                _ => 0,
            })
            .sum()
    }

    fn param_slot_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut next = 0;
        for layer in &self.layers {
            offsets.push(next);
            next += match layer {
                Layer::Conv { .. } => 2,
                Layer::Block(_) => 3,
                _ => 0,
            };
        }
        offsets
    }

    /// Named immutable views of every parameter tensor, in a stable order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, params } => {
                    out.push((format!("{name}.weights"), &params.weights));
                    out.push((format!("{name}.bias"), &params.bias));
                }
                Layer::Block(block) => {
                    out.push(("block.kernels".to_string(), &block.conv.sub_kernels));
                    out.push(("block.w1".to_string(), &block.se.w1.weights));
                    out.push(("block.w2".to_string(), &block.se.w2.weights));
                }
                _ => {}
            }
        }
        out
    }

    /// Named mutable views, same order as [`Self::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { name, params } => {
                    out.push((format!("{name}.weights"), &mut params.weights));
                    out.push((format!("{name}.bias"), &mut params.bias));
                }
                Layer::Block(block) => {
                    out.push(("block.kernels".to_string(), &mut block.conv.sub_kernels));
                    out.push(("block.w1".to_string(), &mut block.se.w1.weights));
                    out.push(("block.w2".to_string(), &mut block.se.w2.weights));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites parameters positionally (shapes must match exactly).
    pub fn set_params_ordered(&mut self, values: &[Tensor]) -> Result<(), ModelError> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for ((name, slot), value) in slots.iter_mut().zip(values) {
            value.expect_shape(name, slot.shape())?;
            **slot = value.clone();
        }
        Ok(())
    }

    /// Overwrites parameters by name, e.g. when restoring a checkpoint.
    /// Every model parameter must be supplied exactly once.
    pub fn set_params_by_name(&mut self, entries: &[(String, Tensor)]) -> Result<(), ModelError> {
        let mut slots = self.params_mut();
        let mut filled = vec![false; slots.len()];
        for (name, value) in entries {
            let idx = slots
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| ModelError::Config(format!("unknown parameter '{name}'")))?;
            if filled[idx] {
                return Err(ModelError::Config(format!(
                    "parameter '{name}' supplied twice"
                )));
            }
            value.expect_shape(name, slots[idx].1.shape())?;
            *slots[idx].1 = value.clone();
            filled[idx] = true;
        }
        if let Some(idx) = filled.iter().position(|&f| !f) {
            return Err(ModelError::Config(format!(
                "parameter '{}' missing from supplied set",
                slots[idx].0
            )));
        }
        Ok(())
    }

    /// Per-pixel anomaly map for a single image `(1, h, w, c)`: a weighted
    /// sum of the reconstruction error map and (optionally) the block's own
    /// reconstruction error map, bilinearly resized to the input resolution.
    pub fn anomaly_map(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.expect_input(x)?;
        if x.shape()[0] != 1 {
            return Err(ModelError::Config(format!(
                "anomaly_map expects a single image, got batch of {}",
                x.shape()[0]
            )));
        }
        let combiner = self.config.score_combiner;
        if combiner.w_block > 0.0 && self.config.placement == Placement::None {
            return Err(ModelError::Config(
                "score combiner uses the block error map but placement is none".to_string(),
            ));
        }
        let outputs = self.forward(x)?;
        let (h, w) = (self.config.height, self.config.width);

        let mut map = Tensor::zeros(&[h, w]);
        if combiner.w_recon != 0.0 {
            let recon_map = channel_mean_sq_err(&outputs.reconstruction, x)?;
            map.add_scaled(&recon_map, combiner.w_recon)?;
        }
        if combiner.w_block > 0.0 {
            let (bi, bo) = (
                outputs.block_input.as_ref().expect("placement checked"),
                outputs.block_output.as_ref().expect("placement checked"),
            );
            let block_map = channel_mean_sq_err(bo, bi)?;
            let resized = bilinear_resize(&block_map, h, w)?;
            map.add_scaled(&resized, combiner.w_block)?;
        }
        Ok(map)
    }
}

/// Channel-mean squared error per spatial position of two `(1, h, w, c)`
/// tensors, as an `(h, w)` map.
fn channel_mean_sq_err(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    a.expect_shape("error map operands", b.shape())?;
    let d = a.expect_rank("error map operands", 4)?;
    let (h, w, c) = (d[1], d[2], d[3]);
    let mut map = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for ch in 0..c {
                let r = a.at4(0, i, j, ch) - b.at4(0, i, j, ch);
                acc += r * r;
            }
            *map.at2_mut(i, j) = acc / c as f64;
        }
    }
    Ok(map)
}

/// Bilinear resize of an `(h, w)` map with half-pixel-centre sampling.
/// Identity when sizes already match.
pub fn bilinear_resize(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, NumError> {
    let d = src.expect_rank("bilinear_resize input", 2)?;
    let (h, w) = (d[0], d[1]);
    if h == out_h && w == out_w {
        return Ok(src.clone());
    }
    let mut out = Tensor::zeros(&[out_h, out_w]);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for i in 0..out_h {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for j in 0..out_w {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let top = src.at2(y0, x0) * (1.0 - wx) + src.at2(y0, x1) * wx;
            let bot = src.at2(y1, x0) * (1.0 - wx) + src.at2(y1, x1) * wx;
            *out.at2_mut(i, j) = top * (1.0 - wy) + bot * wy;
        }
    }
    Ok(out)
}

/// Collapses an `(h, w)` anomaly map to a single frame score.
pub fn frame_score(map: &Tensor, mode: ScoreMode) -> Result<f64, NumError> {
    let d = map.expect_rank("frame_score map", 2)?;
    match mode {
        ScoreMode::Mean => Ok(map.mean()),
        ScoreMode::Max => {
            let (h, w) = (d[0], d[1]);
            let mut best = f64::NEG_INFINITY;
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for di in -1i64..=1 {
                        for dj in -1i64..=1 {
                            let ii = i as i64 + di;
                            let jj = j as i64 + dj;
                            if ii >= 0 && ii < h as i64 && jj >= 0 && jj < w as i64 {
                                acc += map.at2(ii as usize, jj as usize);
                            }
                        }
                    }
                    best = best.max(acc / 9.0);
                }
            }
            Ok(best)
        }
    }
}
