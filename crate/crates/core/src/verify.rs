//! Whole-library verification runners: seeded finite-difference sweeps over
//! every differentiable component, the masked-kernel support invariance
//! check, and the dense-kernel equivalence oracle.
//!
//! These are library functions (not test-only code) so the command-line
//! `gradcheck` command and the acceptance tests drive the exact same sweeps.
//! Each instance derives its own RNG stream from `(base_seed, component,
//! instance, attempt)`, so failures are reproducible in isolation.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{AeConfig, AutoEncoder, ModelError, Placement};
use crate::numcore::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, grad_check, relu, relu_backward,
    sigmoid, sigmoid_backward, upsample2x_backward, upsample2x_nearest, ConvParams, FcParams,
    GradCheckReport, NumError, Tensor, DEFAULT_STEP, DEFAULT_TOL,
};
use crate::sspcab::{
    dense_equivalent_kernel, masked_conv_backward, masked_conv_forward, se_backward, se_forward,
    sspcab_backward, sspcab_forward, sspcab_forward_cached, MaskedConvParams, SeParams,
    SspcabBlock,
};

/// Minimum absolute rectifier pre-activation an instance must exhibit before
/// its finite differences are trusted. Central differences step `1e-5` in
/// each direction; requiring a margin of ten steps keeps every probe on one
/// side of the kink, where the analytic subgradient is exact.
pub const KINK_MARGIN: f64 = 1e-4;

/// How many fresh draws an instance gets before the sweep gives up. Margins
/// below [`KINK_MARGIN`] occur with probability on the order of `1e-2` per
/// draw, so exhausting this budget indicates a bug, not bad luck.
const MAX_REDRAWS: usize = 16;

/// Every component the gradient suite covers, in execution order.
pub const COMPONENTS: &[&str] = &[
    "conv2d",
    "fc",
    "relu",
    "sigmoid",
    "upsample",
    "masked_conv",
    "se",
    "sspcab",
    "ae_none",
    "ae_early",
    "ae_middle",
    "ae_late",
];

/// Errors from the verification runners.
#[derive(Debug)]
pub enum VerifyError {
    Num(NumError),
    Model(ModelError),
    /// A corruption target that names no known component.
    UnknownComponent { name: String },
    /// An instance kept landing within [`KINK_MARGIN`] of a rectifier kink.
    RedrawBudget {
        component: &'static str,
        instance: usize,
        attempts: usize,
    },
}

impl fmt::Display for VerifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyError::Num(e) => write!(f, "{e}"),
            VerifyError::Model(e) => write!(f, "{e}"),
            VerifyError::UnknownComponent { name } => {
                write!(f, "unknown component '{name}' (expected one of: ")?;
                for (i, c) in COMPONENTS.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
            VerifyError::RedrawBudget {
                component,
                instance,
                attempts,
            } => write!(
                f,
                "component {component}, instance {instance}: no draw cleared the \
                 rectifier margin after {attempts} attempts"
            ),
        }
    }
}

impl std::error::Error for VerifyError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            VerifyError::Num(e) => Some(e),
            VerifyError::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<NumError> for VerifyError {
    fn from(e: NumError) -> Self {
        VerifyError::Num(e)
    }
}

impl From<ModelError> for VerifyError {
    fn from(e: ModelError) -> Self {
        VerifyError::Model(e)
    }
}

/// Settings for [`gradient_suite`].
#[derive(Debug, Clone)]
pub struct GradSuiteOptions {
    /// Random instances per component.
    pub instances: usize,
    pub base_seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Relative-error tolerance.
    pub tol: f64,
    /// Fault injection: deliberately corrupt this component's analytic
    /// gradient so the sweep MUST flag it. Proves the harness has teeth.
    pub corrupt: Option<String>,
}

impl Default for GradSuiteOptions {
    fn default() -> Self {
        GradSuiteOptions {
            instances: 100,
            base_seed: 0,
            step: DEFAULT_STEP,
            tol: DEFAULT_TOL,
            corrupt: None,
        }
    }
}

/// Aggregated result of one component's sweep.
#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub instances: usize,
    /// Instances redrawn for landing too close to a rectifier kink.
    pub redraws: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    /// One human-readable line, e.g.
    /// `conv2d       pass  max_rel_err=3.1e-7  (100 instances, 0 redraws)`.
    pub fn summary_line(&self) -> String {
        format!(
            "{:<12} {}  max_rel_err={:.3e}  ({} instances, {} redraws)",
            self.name,
            if self.passed() { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.instances,
            self.redraws
        )
    }
}

/// splitmix64 finalizer: consecutive indices map to unrelated seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one `(component, instance, attempt)` triple.
fn derive_seed(base: u64, component: u64, instance: u64, attempt: u64) -> u64 {
    mix(mix(mix(base ^ mix(component)) ^ mix(instance)) ^ mix(attempt))
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("verify tensors have positive dims")
}

/// Scalar objective: project the output onto fixed random weights. Every
/// output element then influences the scalar, so no gradient path is missed.
fn weighted_sum(y: &Tensor, weights: &Tensor) -> f64 {
    y.iter().zip(weights.iter()).map(|(a, b)| a * b).sum()
}

fn min_abs(t: &Tensor) -> f64 {
    t.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()))
}

/// Fault injection: nudge the first element of the first analytic gradient
/// far enough that any sane tolerance trips.
fn corrupt_first(grads: &mut [Tensor]) {
    if let Some(first) = grads.first_mut() {
        if let Some(v) = first.data_mut().first_mut() {
            *v = v.mul_add(2.0, 0.5);
        }
    }
}

/// `Ok(None)` means "instance unusable (kink too close), redraw".
type InstanceResult = Result<Option<GradCheckReport>, VerifyError>;

fn check_conv2d(rng: &mut ChaCha8Rng, opts: &GradSuiteOptions, corrupt: bool) -> InstanceResult {
    let c_in = rng.gen_range(1..=2);
    let c_out = rng.gen_range(1..=3);
    let stride = rng.gen_range(1..=2);
    let padding = rng.gen_range(0..=1);
    let x = random_tensor(&[1, 5, 5, c_in], rng);
    let p = ConvParams::init(c_out, 3, 3, c_in, stride, padding, rng);

    let y = conv2d_forward(&x, &p)?;
    let proj = random_tensor(y.shape(), rng);
    let back = conv2d_backward(&x, &p, &proj)?;

    let params = vec![x, p.weights.clone(), p.bias.clone()];
    let mut analytic = vec![back.x, back.weights, back.bias];
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let f = move |ps: &[Tensor]| {
        let p = ConvParams::new(ps[1].clone(), ps[2].clone(), stride, padding)
            .expect("conv shapes fixed by construction");
        weighted_sum(&conv2d_forward(&ps[0], &p).expect("conv shapes fixed"), &proj)
    };
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

fn check_fc(rng: &mut ChaCha8Rng, opts: &GradSuiteOptions, corrupt: bool) -> InstanceResult {
    let n = rng.gen_range(1..=3);
    let in_dim = rng.gen_range(2..=5);
    let out_dim = rng.gen_range(2..=4);
    let z = random_tensor(&[n, in_dim], rng);
    let w = random_tensor(&[out_dim, in_dim], rng);
    let b = random_tensor(&[out_dim], rng);
    let p = FcParams::new(w.clone(), Some(b.clone()))?;

    let y = fc_forward(&z, &p)?;
    let proj = random_tensor(y.shape(), rng);
    let back = fc_backward(&z, &p, &proj)?;

    let params = vec![z, w, b];
    let mut analytic = vec![back.z, back.weights, back.bias.expect("bias configured")];
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let f = move |ps: &[Tensor]| {
        let p = FcParams::new(ps[1].clone(), Some(ps[2].clone()))
            .expect("fc shapes fixed by construction");
        weighted_sum(&fc_forward(&ps[0], &p).expect("fc shapes fixed"), &proj)
    };
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

fn check_relu(rng: &mut ChaCha8Rng, opts: &GradSuiteOptions, corrupt: bool) -> InstanceResult {
    let x = random_tensor(&[2, 3, 3, 2], rng);
    if min_abs(&x) < KINK_MARGIN {
        return Ok(None);
    }
    let proj = random_tensor(x.shape(), rng);
    let mut analytic = vec![relu_backward(&x, &proj)?];
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let params = vec![x];
    let f = move |ps: &[Tensor]| weighted_sum(&relu(&ps[0]), &proj);
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

fn check_sigmoid(rng: &mut ChaCha8Rng, opts: &GradSuiteOptions, corrupt: bool) -> InstanceResult {
    let x = random_tensor(&[2, 3, 3, 2], rng);
    let proj = random_tensor(x.shape(), rng);
    let mut analytic = vec![sigmoid_backward(&sigmoid(&x), &proj)?];
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let params = vec![x];
    let f = move |ps: &[Tensor]| weighted_sum(&sigmoid(&ps[0]), &proj);
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

fn check_upsample(rng: &mut ChaCha8Rng, opts: &GradSuiteOptions, corrupt: bool) -> InstanceResult {
    let x = random_tensor(&[1, 3, 3, 2], rng);
    let proj = random_tensor(&[1, 6, 6, 2], rng);
    let mut analytic = vec![upsample2x_backward(&proj)?];
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let params = vec![x];
    let f = move |ps: &[Tensor]| {
        weighted_sum(
            &upsample2x_nearest(&ps[0]).expect("rank fixed by construction"),
            &proj,
        )
    };
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

fn check_masked_conv(
    rng: &mut ChaCha8Rng,
    opts: &GradSuiteOptions,
    corrupt: bool,
) -> InstanceResult {
    let c = rng.gen_range(1..=2);
    let k_prime = rng.gen_range(1..=2);
    let dilation = rng.gen_range(0..=2);
    let side = rng.gen_range(5..=8);
    let x = random_tensor(&[1, side, side, c], rng);
    let p = MaskedConvParams::init(c, k_prime, dilation, rng);

    let y = masked_conv_forward(&x, &p)?;
    let proj = random_tensor(y.shape(), rng);
    let back = masked_conv_backward(&x, &p, &proj)?;

    let params = vec![x, p.sub_kernels.clone()];
    let mut analytic = vec![back.x, back.sub_kernels];
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let f = move |ps: &[Tensor]| {
        let p = MaskedConvParams::new(k_prime, dilation, ps[1].clone())
            .expect("kernel shape fixed by construction");
        weighted_sum(
            &masked_conv_forward(&ps[0], &p).expect("shapes fixed"),
            &proj,
        )
    };
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

fn check_se(rng: &mut ChaCha8Rng, opts: &GradSuiteOptions, corrupt: bool) -> InstanceResult {
    let c = 2 * rng.gen_range(1..=2);
    let reduction = rng.gen_range(1..=2);
    let z = random_tensor(&[1, 4, 4, c], rng);
    let p = SeParams::init(c, reduction, rng)?;

    let (y, cache) = se_forward(&z, &p)?;
    if min_abs(&cache.pre1) < KINK_MARGIN {
        return Ok(None);
    }
    let proj = random_tensor(y.shape(), rng);
    let back = se_backward(&p, &cache, &proj)?;

    let params = vec![z, p.w1.weights.clone(), p.w2.weights.clone()];
    let mut analytic = vec![back.z, back.w1, back.w2];
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let f = move |ps: &[Tensor]| {
        let w1 = FcParams::new(ps[1].clone(), None).expect("w1 shape fixed");
        let w2 = FcParams::new(ps[2].clone(), None).expect("w2 shape fixed");
        let p = SeParams::new(reduction, w1, w2).expect("attention shapes fixed");
        weighted_sum(&se_forward(&ps[0], &p).expect("shapes fixed").0, &proj)
    };
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

fn check_sspcab(rng: &mut ChaCha8Rng, opts: &GradSuiteOptions, corrupt: bool) -> InstanceResult {
    let c = 2;
    let k_prime = 1;
    let dilation = rng.gen_range(0..=1);
    let reduction = rng.gen_range(1..=2);
    let x = random_tensor(&[1, 6, 6, c], rng);
    let block = SspcabBlock::init(c, k_prime, dilation, reduction, rng)?;

    let (y, cache) = sspcab_forward_cached(&x, &block)?;
    if min_abs(&cache.conv_out) < KINK_MARGIN || min_abs(&cache.se_cache.pre1) < KINK_MARGIN {
        return Ok(None);
    }
    let proj = random_tensor(y.shape(), rng);
    let back = sspcab_backward(&x, &block, &cache, &proj)?;

    let params = vec![
        x,
        block.conv.sub_kernels.clone(),
        block.se.w1.weights.clone(),
        block.se.w2.weights.clone(),
    ];
    let mut analytic = vec![back.x, back.sub_kernels, back.w1, back.w2];
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let f = move |ps: &[Tensor]| {
        let conv = MaskedConvParams::new(k_prime, dilation, ps[1].clone())
            .expect("kernel shape fixed");
        let w1 = FcParams::new(ps[2].clone(), None).expect("w1 shape fixed");
        let w2 = FcParams::new(ps[3].clone(), None).expect("w2 shape fixed");
        let se = SeParams::new(reduction, w1, w2).expect("attention shapes fixed");
        let block = SspcabBlock::new(conv, se).expect("channel counts agree");
        weighted_sum(&sspcab_forward(&ps[0], &block).expect("shapes fixed"), &proj)
    };
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

/// Smallest full model that exercises every layer kind without degenerate
/// geometry: 16x16 input and two encoder stages keep the bottleneck at 4x4,
/// large enough that the masked kernel's corners (offset 2 at the default
/// dilation) still land inside the map at the middle placement.
fn tiny_config(placement: Placement) -> AeConfig {
    let mut cfg = AeConfig::for_input(16, 16, 1);
    cfg.encoder_channels = vec![2, 4];
    cfg.placement = placement;
    cfg.lambda = 0.1;
    cfg.block.reduction = 2;
    cfg
}

fn check_ae(
    rng: &mut ChaCha8Rng,
    opts: &GradSuiteOptions,
    corrupt: bool,
    placement: Placement,
) -> InstanceResult {
    let mut model = AutoEncoder::build(tiny_config(placement), rng.gen())?;
    // The training init scales weights by 1/sqrt(fan_in); across seven
    // layers that decays activations to ~1e-5, parking every rectifier
    // pre-activation inside the probe step. Gradients are a pointwise
    // property, so check them at O(1) draws where margins are healthy.
    let drawn: Vec<Tensor> = model
        .params()
        .iter()
        .map(|(_, t)| {
            let mut d = random_tensor(t.shape(), rng);
            d.scale(0.5);
            d
        })
        .collect();
    model.set_params_ordered(&drawn)?;
    let x = random_tensor(&[1, 16, 16, 1], rng);
    if model.relu_margin(&x)? < KINK_MARGIN {
        return Ok(None);
    }

    let (_, mut analytic) = model.total_loss_with_grads(&x)?;
    if corrupt {
        corrupt_first(&mut analytic);
    }
    let params: Vec<Tensor> = model.params().into_iter().map(|(_, t)| t.clone()).collect();
    let f = move |ps: &[Tensor]| {
        let mut m = model.clone();
        m.set_params_ordered(ps).expect("parameter order fixed");
        m.total_loss(&x).expect("shapes fixed").total
    };
    Ok(Some(grad_check(f, &params, &analytic, opts.step, opts.tol)?))
}

fn run_component<F>(
    name: &'static str,
    component_idx: u64,
    opts: &GradSuiteOptions,
    check: F,
) -> Result<ComponentReport, VerifyError>
where
    F: Fn(&mut ChaCha8Rng, &GradSuiteOptions, bool) -> InstanceResult,
{
    let corrupt = opts.corrupt.as_deref() == Some(name);
    let mut max_rel_err = 0.0_f64;
    let mut redraws = 0usize;
    for instance in 0..opts.instances {
        let mut attempt = 0u64;
        let report = loop {
            let seed = derive_seed(opts.base_seed, component_idx, instance as u64, attempt);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match check(&mut rng, opts, corrupt)? {
                Some(report) => break report,
                None => {
                    redraws += 1;
                    attempt += 1;
                    if attempt as usize > MAX_REDRAWS {
                        return Err(VerifyError::RedrawBudget {
                            component: name,
                            instance,
                            attempts: attempt as usize,
                        });
                    }
                }
            }
        };
        max_rel_err = max_rel_err.max(report.max_rel_err);
    }
    Ok(ComponentReport {
        name,
        instances: opts.instances,
        redraws,
        max_rel_err,
        tol: opts.tol,
    })
}

/// Runs the finite-difference sweep over every component in [`COMPONENTS`]:
/// each primitive layer, the masked convolution, the attention module, the
/// full block, and the complete model at all four placements.
pub fn gradient_suite(opts: &GradSuiteOptions) -> Result<Vec<ComponentReport>, VerifyError> {
    if let Some(name) = &opts.corrupt {
        if !COMPONENTS.contains(&name.as_str()) {
            return Err(VerifyError::UnknownComponent { name: name.clone() });
        }
    }
    let mut reports = Vec::with_capacity(COMPONENTS.len());
    reports.push(run_component("conv2d", 0, opts, check_conv2d)?);
    reports.push(run_component("fc", 1, opts, check_fc)?);
    reports.push(run_component("relu", 2, opts, check_relu)?);
    reports.push(run_component("sigmoid", 3, opts, check_sigmoid)?);
    reports.push(run_component("upsample", 4, opts, check_upsample)?);
    reports.push(run_component("masked_conv", 5, opts, check_masked_conv)?);
    reports.push(run_component("se", 6, opts, check_se)?);
    reports.push(run_component("sspcab", 7, opts, check_sspcab)?);
    reports.push(run_component("ae_none", 8, opts, |r, o, c| {
        check_ae(r, o, c, Placement::None)
    })?);
    reports.push(run_component("ae_early", 9, opts, |r, o, c| {
        check_ae(r, o, c, Placement::Early)
    })?);
    reports.push(run_component("ae_middle", 10, opts, |r, o, c| {
        check_ae(r, o, c, Placement::Middle)
    })?);
    reports.push(run_component("ae_late", 11, opts, |r, o, c| {
        check_ae(r, o, c, Placement::Late)
    })?);
    Ok(reports)
}

/// Result of [`masking_invariance_suite`].
#[derive(Debug, Clone)]
pub struct MaskingReport {
    pub instances: usize,
    /// Input positions whose perturbation changed the probed output at all.
    pub violations: usize,
    pub positions_checked: usize,
}

impl MaskingReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.positions_checked > 0
    }
}

/// Input positions allowed to influence output `(i, j)`: the four k'-by-k'
/// corner patches at row/column offsets between `d+1` and `d+k'` on each
/// side. Derived here from the receptive-field contract, independent of how
/// the convolution indexes its kernels.
fn corner_support(
    i: usize,
    j: usize,
    k_prime: usize,
    dilation: usize,
    h: usize,
    w: usize,
) -> HashSet<(usize, usize)> {
    let near = (dilation + 1) as isize;
    let far = (dilation + k_prime) as isize;
    let mut support = HashSet::new();
    for dr in near..=far {
        for dc in near..=far {
            for (sr, sc) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
                let r = i as isize + sr * dr;
                let c = j as isize + sc * dc;
                if r >= 0 && (r as usize) < h && c >= 0 && (c as usize) < w {
                    support.insert((r as usize, c as usize));
                }
            }
        }
    }
    support
}

/// Checks that the masked convolution's output depends on nothing outside
/// the four corner patches: for each seeded instance, one output location is
/// probed while every non-support input position is overwritten with random
/// garbage; the probed output must be bit-identical every time. Geometry
/// sweeps `(k', d)` over `{1,2,3} x {0,1,2}`.
pub fn masking_invariance_suite(
    instances: usize,
    base_seed: u64,
) -> Result<MaskingReport, VerifyError> {
    let mut violations = 0usize;
    let mut positions_checked = 0usize;
    for instance in 0..instances {
        let k_prime = 1 + instance % 3;
        let dilation = (instance / 3) % 3;
        let c = 1 + instance % 2;
        let side = 2 * (k_prime + dilation) + 3; // receptive field plus margin

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, 100, instance as u64, 0));
        let x = random_tensor(&[1, side, side, c], &mut rng);
        let p = MaskedConvParams::init(c, k_prime, dilation, &mut rng);
        let y = masked_conv_forward(&x, &p)?;

        let oi = rng.gen_range(0..side);
        let oj = rng.gen_range(0..side);
        let support = corner_support(oi, oj, k_prime, dilation, side, side);
        let baseline: Vec<u64> = (0..c).map(|ch| y.at4(0, oi, oj, ch).to_bits()).collect();

        for pi in 0..side {
            for pj in 0..side {
                if support.contains(&(pi, pj)) {
                    continue;
                }
                let mut perturbed = x.clone();
                for ch in 0..c {
                    *perturbed.at4_mut(0, pi, pj, ch) = rng.gen_range(-10.0..10.0);
                }
                let y2 = masked_conv_forward(&perturbed, &p)?;
                positions_checked += 1;
                let unchanged = (0..c).all(|ch| y2.at4(0, oi, oj, ch).to_bits() == baseline[ch]);
                if !unchanged {
                    violations += 1;
                }
            }
        }
    }
    Ok(MaskingReport {
        instances,
        violations,
        positions_checked,
    })
}

/// Result of [`dense_oracle_suite`].
#[derive(Debug, Clone)]
pub struct DenseOracleReport {
    pub instances: usize,
    pub max_abs_diff: f64,
}

/// Cross-checks the sub-kernel convolution against an ordinary dense
/// convolution run with [`dense_equivalent_kernel`], over the same `(k', d)`
/// sweep as the masking suite. Returns the worst absolute difference.
pub fn dense_oracle_suite(
    instances: usize,
    base_seed: u64,
) -> Result<DenseOracleReport, VerifyError> {
    let mut max_abs_diff = 0.0_f64;
    for instance in 0..instances {
        let k_prime = 1 + instance % 3;
        let dilation = (instance / 3) % 3;
        let c = 1 + instance % 2;
        let side = 2 * (k_prime + dilation) + 3;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, 101, instance as u64, 0));
        let x = random_tensor(&[1, side, side, c], &mut rng);
        let p = MaskedConvParams::init(c, k_prime, dilation, &mut rng);

        let masked = masked_conv_forward(&x, &p)?;
        let dense = conv2d_forward(&x, &dense_equivalent_kernel(&p))?;
        for (a, b) in masked.iter().zip(dense.iter()) {
            max_abs_diff = max_abs_diff.max((a - b).abs());
        }
    }
    Ok(DenseOracleReport {
        instances,
        max_abs_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_opts(instances: usize) -> GradSuiteOptions {
        GradSuiteOptions {
            instances,
            base_seed: 11,
            ..GradSuiteOptions::default()
        }
    }

    #[test]
    fn gradient_suite_passes_on_small_sample() {
        let reports = gradient_suite(&quick_opts(3)).unwrap();
        assert_eq!(reports.len(), COMPONENTS.len());
        for report in &reports {
            assert!(report.passed(), "{}", report.summary_line());
        }
    }

    #[test]
    fn corrupt_hook_flags_exactly_the_named_component() {
        let mut opts = quick_opts(1);
        opts.corrupt = Some("se".to_string());
        let reports = gradient_suite(&opts).unwrap();
        for report in &reports {
            assert_eq!(
                report.passed(),
                report.name != "se",
                "{}",
                report.summary_line()
            );
        }
    }

    #[test]
    fn corrupt_hook_rejects_unknown_names() {
        let mut opts = quick_opts(1);
        opts.corrupt = Some("hourglass".to_string());
        match gradient_suite(&opts) {
            Err(VerifyError::UnknownComponent { name }) => assert_eq!(name, "hourglass"),
            other => panic!("expected unknown-component error, got {other:?}"),
        }
    }

    #[test]
    fn derived_seeds_do_not_collide_on_neighbours() {
        let a = derive_seed(0, 1, 2, 0);
        let b = derive_seed(0, 1, 3, 0);
        let c = derive_seed(0, 2, 2, 0);
        let d = derive_seed(0, 1, 2, 1);
        assert!(a != b && a != c && a != d && b != c);
    }

    #[test]
    fn corner_support_of_unit_subkernels_is_four_points() {
        // k'=1, d=1: corners sit exactly 2 away diagonally
        let support = corner_support(5, 5, 1, 1, 11, 11);
        let expected: HashSet<(usize, usize)> =
            [(3, 3), (3, 7), (7, 3), (7, 7)].into_iter().collect();
        assert_eq!(support, expected);
    }

    #[test]
    fn corner_support_clips_at_image_edges() {
        // output pixel in the top-left corner: only the bottom-right patch
        // stays fully inside
        let support = corner_support(0, 0, 1, 0, 8, 8);
        assert_eq!(support, [(1, 1)].into_iter().collect());
    }

    #[test]
    fn masking_invariance_holds_across_geometry_sweep() {
        let report = masking_invariance_suite(9, 5).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.instances, 9);
        assert!(report.positions_checked > 0);
    }

    #[test]
    fn dense_oracle_agrees_across_geometry_sweep() {
        let report = dense_oracle_suite(9, 6).unwrap();
        assert!(
            report.max_abs_diff <= 1e-12,
            "max diff {}",
            report.max_abs_diff
        );
    }

    #[test]
    fn summary_line_carries_verdict() {
        let report = ComponentReport {
            name: "conv2d",
            instances: 4,
            redraws: 1,
            max_rel_err: 2e-7,
            tol: 1e-4,
        };
        let line = report.summary_line();
        assert!(line.contains("conv2d") && line.contains("pass"));
    }
}
