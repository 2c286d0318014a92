//! Loss assembly, SGD calibration of transform parameters, and synthetic
//! layer-data generation.
//!
//! The training objective is the quantized-layer reconstruction error plus a
//! KL uniformity regularizer on rotated activations. Gradients flow through
//! the quantizer with the straight-through convention and through the
//! histogram via its soft surrogate. Training is full-batch and bit
//! deterministic for a fixed seed.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::butterfly;
use crate::composite::{self, CayleyParams, CompositeParams};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::quant::{self, QuantScheme};
use crate::transform::{ParamGrads, Transform, TransformParams};
use crate::{analyze, Error, Result};

/// Additive smoothing applied to histogram bins before the KL.
const KL_EPSILON: f64 = 1e-8;

/// Outlier channel fraction and magnitude for the synthetic archetypes,
/// sized so that direct 2-bit quantization loses most of the base signal.
const OUTLIER_CHANNEL_FRACTION: f64 = 0.05;
const OUTLIER_MAGNITUDE: f64 = 10.0;

/// Synthetic activation families mimicking layer-specific outlier patterns:
/// positive tails, negative regions, boundary-magnitude spikes, or plain
/// Gaussian (no outliers).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archetype {
    PositiveTail,
    NegativeRegion,
    Boundary,
    Gaussian,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::PositiveTail,
        Archetype::NegativeRegion,
        Archetype::Boundary,
        Archetype::Gaussian,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Archetype::PositiveTail => "positive-tail",
            Archetype::NegativeRegion => "negative-region",
            Archetype::Boundary => "boundary",
            Archetype::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Archetype::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!(
                    "unknown archetype {s:?}; valid archetypes: {}",
                    names.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Archetype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameter initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitKind {
    #[default]
    Identity,
    Hadamard,
    Random,
}

impl InitKind {
    pub fn name(&self) -> &'static str {
        match self {
            InitKind::Identity => "identity",
            InitKind::Hadamard => "hadamard",
            InitKind::Random => "random",
        }
    }
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(InitKind::Identity),
            "hadamard" => Ok(InitKind::Hadamard),
            "random" => Ok(InitKind::Random),
            _ => Err(Error::Config(format!(
                "unknown init {s:?}; valid inits: identity, hadamard, random"
            ))),
        }
    }
}

impl std::fmt::Display for InitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer weights plus activation samples used for calibration.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    weights: DenseMatrix,
    samples: Vec<DenseVector>,
    archetype_tag: Option<String>,
}

impl CalibrationSet {
    pub fn new(
        weights: DenseMatrix,
        samples: Vec<DenseVector>,
        archetype_tag: Option<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("calibration samples"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.dim() != weights.cols() {
                return Err(Error::Shape(format!(
                    "sample {i} has dim {}, weights have {} columns",
                    s.dim(),
                    weights.cols()
                )));
            }
        }
        Ok(Self { weights, samples, archetype_tag })
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn samples(&self) -> &[DenseVector] {
        &self.samples
    }

    pub fn archetype_tag(&self) -> Option<&str> {
        self.archetype_tag.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Calibration hyperparameters. Defaults: 500 steps of SGD from identity
/// init at lr 0.01 with cosine decay, λ_uniform = 0.1, 2-bit scheme, soft
/// histogram temperature 0.25 (in level units).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr0: f64,
    pub lambda_uniform: f64,
    pub scheme: QuantScheme,
    pub init: InitKind,
    pub seed: u64,
    pub soft_tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr0: 0.01,
            lambda_uniform: 0.1,
            scheme: QuantScheme::new(2).expect("2 bits is valid"),
            init: InitKind::Identity,
            seed: 0,
            soft_tau: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.lambda_uniform < 0.0 {
            return Err(Error::Config(format!(
                "lambda_uniform must be >= 0, got {}",
                self.lambda_uniform
            )));
        }
        if !(self.soft_tau > 0.0) {
            return Err(Error::Temperature(self.soft_tau));
        }
        Ok(())
    }
}

/// Loss trajectory and summary statistics of one calibration run.
///
/// Curves hold steps+1 entries (step 0 is the pre-update evaluation). The
/// `final_*` fields describe the returned best-so-far parameters, not
/// necessarily the last step.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub recon_curve: Vec<f64>,
    pub uniform_curve: Vec<f64>,
    pub final_total: f64,
    pub final_recon: f64,
    pub final_uniform: f64,
    pub final_coherence: f64,
    pub best_step: usize,
    pub wall_time_seconds: f64,
}

impl TrainReport {
    /// Fraction of the total loss improvement reached by step k.
    pub fn convergence_fraction_at(&self, k: usize) -> Result<f64> {
        analyze::convergence_fraction(&self.loss_curve, k)
    }
}

/// KL divergence of a histogram from the uniform distribution over its bins,
/// with additive ε-smoothing so empty bins stay finite.
pub fn kl_from_uniform(p: &[f64]) -> f64 {
    kl_and_bin_grads(p).0
}

/// KL plus ∂KL/∂p per bin (used to chain through the soft histogram).
fn kl_and_bin_grads(p: &[f64]) -> (f64, Vec<f64>) {
    let k = p.len() as f64;
    let norm = 1.0 + k * KL_EPSILON;
    let mut kl = 0.0;
    let mut grads = Vec::with_capacity(p.len());
    for &pi in p {
        let pt = (pi + KL_EPSILON) / norm;
        let log_ratio = (pt * k).ln();
        kl += pt * log_ratio;
        grads.push((log_ratio + 1.0) / norm);
    }
    (kl.max(0.0), grads)
}

/// Rows of W·Qᵀ, i.e. each weight row run through the forward transform.
fn rotate_weight_rows(w: &DenseMatrix, t: &dyn Transform) -> Result<DenseMatrix> {
    let mut entries = Vec::with_capacity(w.rows() * w.cols());
    for i in 0..w.rows() {
        let row = DenseVector::new(w.row(i).to_vec())?;
        entries.extend(t.forward(&row)?.into_vec());
    }
    DenseMatrix::new(w.rows(), w.cols(), entries)
}

/// ‖W·x - Dequant(Quant(W·Bᵀ))·Dequant(Quant(B·x))‖₂² for one sample.
pub fn recon_loss(
    w: &DenseMatrix,
    x: &DenseVector,
    t: &dyn Transform,
    scheme: &QuantScheme,
) -> Result<f64> {
    if x.dim() != w.cols() {
        return Err(Error::Shape(format!(
            "sample dim {} vs weight cols {}",
            x.dim(),
            w.cols()
        )));
    }
    let rotated = rotate_weight_rows(w, t)?;
    let (wq, _) = quant::fake_quant_matrix_with_mask(&rotated, scheme)?;
    let z = t.forward(x)?;
    let xq = DenseVector::new(quant::fake_quant(z.as_slice(), scheme)?)?;
    let wx = linalg::mat_vec(w, x)?;
    let y = linalg::mat_vec(&wq, &xq)?;
    let mut acc = 0.0;
    for (a, b) in wx.as_slice().iter().zip(y.as_slice()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc)
}

/// KL of the soft bin histogram of a rotated sample against uniform.
pub fn uniform_loss(
    x_rot: &DenseVector,
    scale: f64,
    scheme: &QuantScheme,
    tau: f64,
) -> Result<f64> {
    let hist = quant::soft_histogram(x_rot.as_slice(), scale, scheme.bits, tau)?;
    Ok(kl_from_uniform(&hist))
}

/// Mean reconstruction loss plus λ times the mean uniformity loss over the
/// calibration samples, in fixed sample order. Returns (total, recon,
/// uniform) where total = recon + λ·uniform.
pub fn total_loss(
    w: &DenseMatrix,
    samples: &[DenseVector],
    t: &dyn Transform,
    config: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("total_loss samples"));
    }
    config.validate()?;
    let rotated = rotate_weight_rows(w, t)?;
    let (wq, _) = quant::fake_quant_matrix_with_mask(&rotated, &config.scheme)?;
    let mut recon_sum = 0.0;
    let mut uniform_sum = 0.0;
    for x in samples {
        let z = t.forward(x)?;
        let xq = DenseVector::new(quant::fake_quant(z.as_slice(), &config.scheme)?)?;
        let wx = linalg::mat_vec(w, x)?;
        let y = linalg::mat_vec(&wq, &xq)?;
        for (a, b) in wx.as_slice().iter().zip(y.as_slice()) {
            let d = a - b;
            recon_sum += d * d;
        }
        let s = quant::compute_scale(z.as_slice(), config.scheme.bits)?;
        uniform_sum += uniform_loss(&z, s, &config.scheme, config.soft_tau)?;
    }
    let n = samples.len() as f64;
    let recon = recon_sum / n;
    let uniform = uniform_sum / n;
    Ok((recon + config.lambda_uniform * uniform, recon, uniform))
}

/// Cosine-decayed learning rate: lr0·0.5·(1 + cos(π·step/total)).
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Step { step, total: total_steps });
    }
    if total_steps == 0 {
        return Ok(lr0);
    }
    let ratio = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * ratio).cos()))
}

struct BatchLosses {
    total: f64,
    recon: f64,
    uniform: f64,
}

/// One fake-quantized scale group with everything its VJP needs.
struct FqGroup {
    values: Vec<f64>,
    codes: Vec<i32>,
    scale: f64,
    /// Index of the scale-setting entry; None for the all-zero sentinel.
    argmax: Option<usize>,
}

fn fq_group(x: &[f64], bits: u8) -> Result<FqGroup> {
    let scale = quant::compute_scale(x, bits)?;
    let codes = quant::quantize(x, scale, bits)?;
    let values = quant::dequantize(&codes, scale);
    let max_abs = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let argmax = if max_abs == 0.0 {
        None
    } else {
        x.iter().position(|&v| v.abs() == max_abs)
    };
    Ok(FqGroup { values, codes, scale, argmax })
}

/// Accumulate ∂L/∂x for one group given ∂L/∂(dequantized values).
///
/// round() is straight-through (clip-masked); the absmax scale is
/// differentiated exactly: s = |x_j*|/qmax, so the scale-setting entry
/// receives sign(x_j*)/qmax times the code-weighted gradient sum. At coarse
/// bit-widths this term carries the rotation benefit (shrinking the maximum
/// refines the grid for every entry), which the mask alone cannot see.
fn fq_group_vjp(group: &FqGroup, x: &[f64], grad_values: &[f64], bits: u8, grad_x: &mut [f64]) {
    let qmax = ((1i32 << (bits - 1)) - 1) as f64;
    let qmin_f = -(1i32 << (bits - 1)) as f64;
    let mut scale_dot = 0.0;
    for j in 0..x.len() {
        let pre = x[j] / group.scale;
        if pre > qmin_f && pre < qmax {
            grad_x[j] += grad_values[j];
        }
        scale_dot += grad_values[j] * group.codes[j] as f64;
    }
    if let Some(j) = group.argmax {
        grad_x[j] += scale_dot * x[j].signum() / qmax;
    }
}

/// One full-batch pass: losses, and parameter gradients when requested.
///
/// The rotated-weight fake-quant (shared across samples) is computed once;
/// its value-space gradient accumulates per sample and is backpropagated
/// through each weight row's quantizer and the transform at the end.
fn batch_pass(
    cal: &CalibrationSet,
    params: &TransformParams,
    config: &TrainConfig,
    with_grads: bool,
) -> Result<(BatchLosses, Option<ParamGrads>)> {
    let w = cal.weights();
    let scheme = &config.scheme;
    let (m, n) = (w.rows(), w.cols());
    let num_samples = cal.samples().len() as f64;
    let bypass = scheme.bypass;

    let rotated = rotate_weight_rows(w, params)?;
    let mut wq = DenseMatrix::zeros(m, n);
    let mut wgroups: Vec<FqGroup> = Vec::new();
    if bypass {
        wq = rotated.clone();
    } else {
        for i in 0..m {
            let g = fq_group(rotated.row(i), scheme.bits)?;
            wq.row_mut(i).copy_from_slice(&g.values);
            wgroups.push(g);
        }
    }

    let mut acc = params.zero_grads();
    let mut grad_wq = if with_grads { Some(DenseMatrix::zeros(m, n)) } else { None };
    let mut recon_sum = 0.0;
    let mut uniform_sum = 0.0;

    for x in cal.samples() {
        let z = params.forward(x)?;
        let (xq_vals, zgroup) = if bypass {
            (z.as_slice().to_vec(), None)
        } else {
            let g = fq_group(z.as_slice(), scheme.bits)?;
            (g.values.clone(), Some(g))
        };
        let xq = DenseVector::new(xq_vals)?;
        let wx = linalg::mat_vec(w, x)?;
        let y = linalg::mat_vec(&wq, &xq)?;
        let e: Vec<f64> = y
            .as_slice()
            .iter()
            .zip(wx.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        recon_sum += e.iter().map(|d| d * d).sum::<f64>();

        let s = match &zgroup {
            Some(g) => g.scale,
            None => quant::compute_scale(z.as_slice(), scheme.bits)?,
        };
        let hist = quant::soft_histogram(z.as_slice(), s, scheme.bits, config.soft_tau)?;
        let (kl, bin_grads) = kl_and_bin_grads(&hist);
        uniform_sum += kl;

        if with_grads {
            // Activation path: ∂recon/∂x̂q = 2·Wqᵀe, pulled through the
            // quantizer VJP, plus λ times the soft-histogram KL gradient.
            let e_vec = DenseVector::new(e.clone())?;
            let wqt_e = linalg::transpose_mat_vec(&wq, &e_vec)?;
            let mut g_z = vec![0.0; n];
            let g_xq: Vec<f64> = wqt_e.as_slice().iter().map(|&v| 2.0 * v).collect();
            match &zgroup {
                Some(g) => fq_group_vjp(g, z.as_slice(), &g_xq, scheme.bits, &mut g_z),
                None => g_z.copy_from_slice(&g_xq),
            }
            let unif_grad = quant::soft_histogram_backward(
                z.as_slice(),
                s,
                scheme.bits,
                config.soft_tau,
                &bin_grads,
            )?;
            for (gz, ug) in g_z.iter_mut().zip(&unif_grad) {
                *gz += config.lambda_uniform * ug;
            }
            params.backward_accumulate(x, &DenseVector::new(g_z)?, &mut acc)?;

            // Weight path: ∂recon/∂Ŵq[i,j] = 2·e_i·x̂q_j, accumulated over
            // samples in value space.
            let gw = grad_wq.as_mut().expect("grads requested");
            for i in 0..m {
                let row = gw.row_mut(i);
                let scale = 2.0 * e[i];
                for j in 0..n {
                    row[j] += scale * xq.as_slice()[j];
                }
            }
        }
    }

    let grads = if with_grads {
        let gw = grad_wq.expect("grads requested");
        for i in 0..m {
            let mut g_v = vec![0.0; n];
            if bypass {
                g_v.copy_from_slice(gw.row(i));
            } else {
                fq_group_vjp(&wgroups[i], rotated.row(i), gw.row(i), scheme.bits, &mut g_v);
            }
            let wrow = DenseVector::new(w.row(i).to_vec())?;
            params.backward_accumulate(&wrow, &DenseVector::new(g_v)?, &mut acc)?;
        }
        acc.scale(1.0 / num_samples);
        Some(acc)
    } else {
        None
    };

    let recon = recon_sum / num_samples;
    let uniform = uniform_sum / num_samples;
    let total = recon + config.lambda_uniform * uniform;
    Ok((BatchLosses { total, recon, uniform }, grads))
}

fn init_params(n: usize, config: &TrainConfig) -> Result<TransformParams> {
    const RANDOM_INIT_SCALE: f64 = 0.1;
    if n.is_power_of_two() {
        let b = match config.init {
            InitKind::Identity => butterfly::init_identity(n)?,
            InitKind::Hadamard => butterfly::init_hadamard(n)?,
            InitKind::Random => butterfly::init_random(n, config.seed, RANDOM_INIT_SCALE)?,
        };
        Ok(TransformParams::Butterfly(b))
    } else {
        let (d1, d2) = composite::choose_factorization(n)?;
        let (q1, b2) = match config.init {
            InitKind::Identity => (CayleyParams::zeros(d1)?, butterfly::init_identity(d2)?),
            InitKind::Hadamard => (CayleyParams::zeros(d1)?, butterfly::init_hadamard(d2)?),
            InitKind::Random => (
                CayleyParams::random(d1, config.seed.wrapping_add(1), RANDOM_INIT_SCALE)?,
                butterfly::init_random(d2, config.seed, RANDOM_INIT_SCALE)?,
            ),
        };
        Ok(TransformParams::Composite(CompositeParams::new(q1, b2)?))
    }
}

/// Full-batch SGD on transform parameters with a cosine learning-rate
/// schedule. Returns the best-so-far parameters over the trajectory (the
/// straight-through gradient is biased, so the last step need not be the
/// best) together with the loss report.
pub fn train(cal: &CalibrationSet, config: &TrainConfig) -> Result<(TransformParams, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let mut params = init_params(cal.dim(), config)?;

    let steps = config.steps;
    let mut loss_curve = Vec::with_capacity(steps + 1);
    let mut recon_curve = Vec::with_capacity(steps + 1);
    let mut uniform_curve = Vec::with_capacity(steps + 1);

    let (mut losses, mut grads) = batch_pass(cal, &params, config, steps > 0)?;
    if !losses.total.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }
    loss_curve.push(losses.total);
    recon_curve.push(losses.recon);
    uniform_curve.push(losses.uniform);

    let mut best_params = params.clone();
    let mut best = (0usize, losses.total, losses.recon, losses.uniform);

    for t in 0..steps {
        let mut g = grads.take().expect("gradients computed for every update step");
        // Normalized steps: the raw gradient magnitude tracks the loss scale
        // (a raw squared norm), so lr is calibrated in radians of maximum
        // per-step angle change instead.
        let gmax = g.max_abs();
        if gmax > 0.0 {
            g.scale(1.0 / gmax);
        }
        let lr = cosine_lr(t, steps, config.lr0)?;
        params.sgd_step(&g, lr);

        let (next, next_grads) = batch_pass(cal, &params, config, t + 1 < steps)?;
        losses = next;
        grads = next_grads;
        if !losses.total.is_finite() {
            return Err(Error::Diverged { step: t + 1 });
        }
        loss_curve.push(losses.total);
        recon_curve.push(losses.recon);
        uniform_curve.push(losses.uniform);
        if losses.total < best.1 {
            best = (t + 1, losses.total, losses.recon, losses.uniform);
            best_params = params.clone();
        }
    }

    let final_coherence = analyze::coherence(&Transform::materialize(&best_params)?)?;
    let report = TrainReport {
        loss_curve,
        recon_curve,
        uniform_curve,
        final_total: best.1,
        final_recon: best.2,
        final_uniform: best.3,
        final_coherence,
        best_step: best.0,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best_params, report))
}

/// Synthetic calibration data for one outlier archetype.
///
/// Base activations are i.i.d. standard normal. A fixed random 5% channel
/// subset (at least one channel) receives archetype outliers: positive-tail
/// adds +|N(0,1)|·10, negative-region adds -|N(0,1)|·10, boundary pins the
/// channel to ±10 with alternating sign, gaussian adds nothing. Weights are
/// n×n standard normal scaled by 1/√n. Draw order is fixed (weights,
/// channel subset, then samples), so output is bit-identical per seed.
pub fn gen_synthetic(
    archetype: Archetype,
    n: usize,
    m_samples: usize,
    seed: u64,
) -> Result<CalibrationSet> {
    if n < 2 {
        return Err(Error::Shape(format!("gen_synthetic: n must be >= 2, got {n}")));
    }
    if m_samples < 1 {
        return Err(Error::Empty("gen_synthetic: m_samples must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let w_entries: Vec<f64> = (0..n * n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * inv_sqrt_n
        })
        .collect();
    let weights = DenseMatrix::new(n, n, w_entries)?;

    let num_outlier = ((n as f64 * OUTLIER_CHANNEL_FRACTION).round() as usize).max(1);
    let mut channels = rand::seq::index::sample(&mut rng, n, num_outlier).into_vec();
    channels.sort_unstable();

    let mut samples = Vec::with_capacity(m_samples);
    for sample_idx in 0..m_samples {
        let mut v = linalg::normal_vec(&mut rng, n);
        match archetype {
            Archetype::Gaussian => {}
            Archetype::PositiveTail => {
                for &ch in &channels {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    v[ch] += OUTLIER_MAGNITUDE * g.abs();
                }
            }
            Archetype::NegativeRegion => {
                for &ch in &channels {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    v[ch] -= OUTLIER_MAGNITUDE * g.abs();
                }
            }
            Archetype::Boundary => {
                for (rank, &ch) in channels.iter().enumerate() {
                    let sign = if (sample_idx + rank) % 2 == 0 { 1.0 } else { -1.0 };
                    v[ch] = sign * OUTLIER_MAGNITUDE;
                }
            }
        }
        samples.push(DenseVector::new(v)?);
    }
    CalibrationSet::new(weights, samples, Some(archetype.name().to_string()))
}
