//! Symmetric uniform b-bit quantization with grouping, fake quantization with
//! a straight-through gradient contract, and hard/soft bin histograms.
//!
//! Integer levels span [-2^{b-1}, 2^{b-1}-1] with scale s = max|x|/(2^{b-1}-1)
//! and half-away-from-zero rounding. All-zero groups take the sentinel scale
//! 1.0 (any positive sentinel dequantizes identically to zero).

use crate::linalg::DenseMatrix;
use crate::{Error, Result};

/// Scale-group policy along a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// One scale for the whole tensor.
    PerTensor,
    /// One scale per matrix row (output channel).
    PerRow,
    /// One scale per contiguous group of the given size.
    PerGroup(usize),
}

/// Tie-break rule for `round`. Only half-away-from-zero is defined; the enum
/// exists so persisted configs name the convention explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
}

/// Bit-width and grouping policy for a quantization pass.
///
/// Weights and activations carry separate groupings: per-row weights and
/// per-tensor (per-sample) activations by default. `bypass` turns fake
/// quantization into the identity, used to check computational invariance
/// without rounding in the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantScheme {
    pub bits: u8,
    pub weights: Grouping,
    pub activations: Grouping,
    pub rounding: Rounding,
    pub bypass: bool,
}

impl QuantScheme {
    /// Symmetric uniform scheme with default groupings.
    pub fn new(bits: u8) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return Err(Error::Config(format!("bits must be in 2..=8, got {bits}")));
        }
        Ok(Self {
            bits,
            weights: Grouping::PerRow,
            activations: Grouping::PerTensor,
            rounding: Rounding::HalfAwayFromZero,
            bypass: false,
        })
    }

    /// Identity fake-quant (test mode); bit-width kept for histogram shapes.
    pub fn passthrough(bits: u8) -> Result<Self> {
        let mut s = Self::new(bits)?;
        s.bypass = true;
        Ok(s)
    }

    pub fn qmin(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    pub fn num_bins(&self) -> usize {
        1 << self.bits
    }
}

/// Quantized codes for one scale group.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub codes: Vec<i32>,
    pub scale: f64,
}

impl QuantizedBlock {
    /// Quantize one group of values with its own scale.
    pub fn from_values(x: &[f64], bits: u8) -> Result<Self> {
        let scale = compute_scale(x, bits)?;
        let codes = quantize(x, scale, bits)?;
        Ok(Self { codes, scale })
    }

    pub fn dequantize(&self) -> Vec<f64> {
        dequantize(&self.codes, self.scale)
    }
}

/// s = max|x| / (2^{b-1} - 1); sentinel 1.0 for all-zero input.
pub fn compute_scale(x: &[f64], bits: u8) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Empty("compute_scale input"));
    }
    if !(2..=8).contains(&bits) {
        return Err(Error::Config(format!("bits must be in 2..=8, got {bits}")));
    }
    let max_abs = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(1.0);
    }
    let qmax = ((1i32 << (bits - 1)) - 1) as f64;
    Ok(max_abs / qmax)
}

#[inline]
fn clip_code(v: f64, bits: u8) -> i32 {
    let qmin = -(1i32 << (bits - 1));
    let qmax = (1i32 << (bits - 1)) - 1;
    // f64::round is half-away-from-zero.
    let r = v.round();
    if r < qmin as f64 {
        qmin
    } else if r > qmax as f64 {
        qmax
    } else {
        r as i32
    }
}

/// codes = clip(round(x/s), -2^{b-1}, 2^{b-1}-1).
pub fn quantize(x: &[f64], scale: f64, bits: u8) -> Result<Vec<i32>> {
    if !(scale > 0.0) {
        return Err(Error::Scale(scale));
    }
    Ok(x.iter().map(|&v| clip_code(v / scale, bits)).collect())
}

/// Entrywise s·q.
pub fn dequantize(codes: &[i32], scale: f64) -> Vec<f64> {
    codes.iter().map(|&q| q as f64 * scale).collect()
}

fn group_ranges(len: usize, grouping: Grouping) -> Result<Vec<(usize, usize)>> {
    match grouping {
        Grouping::PerTensor => Ok(vec![(0, len)]),
        Grouping::PerRow => Err(Error::Grouping(
            "per-row grouping needs a matrix, got a flat vector".into(),
        )),
        Grouping::PerGroup(g) => {
            if g == 0 || len % g != 0 {
                return Err(Error::Grouping(format!(
                    "group size {g} does not divide length {len}"
                )));
            }
            Ok((0..len / g).map(|i| (i * g, (i + 1) * g)).collect())
        }
    }
}

fn fake_quant_group(x: &[f64], bits: u8, out: &mut [f64], mask: &mut [f64]) -> Result<()> {
    let block = QuantizedBlock::from_values(x, bits)?;
    let qmin = -(1i32 << (bits - 1)) as f64;
    let qmax = ((1i32 << (bits - 1)) - 1) as f64;
    for (i, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        *o = block.codes[i] as f64 * block.scale;
        // Straight-through: gradient passes only where the pre-round value
        // sits strictly inside the clip range.
        let pre = v / block.scale;
        mask[i] = if pre > qmin && pre < qmax { 1.0 } else { 0.0 };
    }
    Ok(())
}

/// Quantize-then-dequantize over the activation grouping, returning the
/// values and the straight-through gradient mask (1 inside the clip range,
/// 0 for clipped entries).
pub fn fake_quant_with_mask(x: &[f64], scheme: &QuantScheme) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::Empty("fake_quant input"));
    }
    if scheme.bypass {
        return Ok((x.to_vec(), vec![1.0; x.len()]));
    }
    let mut out = vec![0.0; x.len()];
    let mut mask = vec![0.0; x.len()];
    for (lo, hi) in group_ranges(x.len(), scheme.activations)? {
        fake_quant_group(&x[lo..hi], scheme.bits, &mut out[lo..hi], &mut mask[lo..hi])?;
    }
    Ok((out, mask))
}

/// `fake_quant_with_mask` without the mask.
pub fn fake_quant(x: &[f64], scheme: &QuantScheme) -> Result<Vec<f64>> {
    Ok(fake_quant_with_mask(x, scheme)?.0)
}

/// Fake-quantize a matrix under the weight grouping (per-row scales by
/// default), returning values and the straight-through mask.
pub fn fake_quant_matrix_with_mask(
    w: &DenseMatrix,
    scheme: &QuantScheme,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if scheme.bypass {
        let ones = DenseMatrix::new(w.rows(), w.cols(), vec![1.0; w.rows() * w.cols()])?;
        return Ok((w.clone(), ones));
    }
    let (rows, cols) = (w.rows(), w.cols());
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut mask = DenseMatrix::zeros(rows, cols);
    match scheme.weights {
        Grouping::PerTensor => {
            let mut o = vec![0.0; rows * cols];
            let mut m = vec![0.0; rows * cols];
            fake_quant_group(w.entries(), scheme.bits, &mut o, &mut m)?;
            out = DenseMatrix::new(rows, cols, o)?;
            mask = DenseMatrix::new(rows, cols, m)?;
        }
        Grouping::PerRow => {
            for i in 0..rows {
                fake_quant_group(w.row(i), scheme.bits, out.row_mut(i), mask.row_mut(i))?;
            }
        }
        Grouping::PerGroup(g) => {
            if g == 0 || cols % g != 0 {
                return Err(Error::Grouping(format!(
                    "group size {g} does not divide row length {cols}"
                )));
            }
            for i in 0..rows {
                for k in 0..cols / g {
                    let (lo, hi) = (k * g, (k + 1) * g);
                    let row_in: Vec<f64> = w.row(i)[lo..hi].to_vec();
                    let mut o = vec![0.0; g];
                    let mut m = vec![0.0; g];
                    fake_quant_group(&row_in, scheme.bits, &mut o, &mut m)?;
                    out.row_mut(i)[lo..hi].copy_from_slice(&o);
                    mask.row_mut(i)[lo..hi].copy_from_slice(&m);
                }
            }
        }
    }
    Ok((out, mask))
}

pub fn fake_quant_matrix(w: &DenseMatrix, scheme: &QuantScheme) -> Result<DenseMatrix> {
    Ok(fake_quant_matrix_with_mask(w, scheme)?.0)
}

/// Normalized counts over the 2^b bins (bin i holds code qmin + i). Sums to
/// 1 exactly: the last nonzero-count bin absorbs the rounding residue.
pub fn hard_histogram(codes: &[i32], bits: u8) -> Result<Vec<f64>> {
    if codes.is_empty() {
        return Err(Error::Empty("hard_histogram input"));
    }
    let qmin = -(1i32 << (bits - 1));
    let qmax = (1i32 << (bits - 1)) - 1;
    let bins = 1usize << bits;
    let mut counts = vec![0usize; bins];
    for &c in codes {
        if c < qmin || c > qmax {
            return Err(Error::Shape(format!("code {c} outside [{qmin}, {qmax}]")));
        }
        counts[(c - qmin) as usize] += 1;
    }
    let total = codes.len() as f64;
    let mut hist = vec![0.0; bins];
    let last_nonzero = counts.iter().rposition(|&c| c > 0).expect("nonempty");
    let mut acc = 0.0;
    for i in 0..bins {
        if i == last_nonzero {
            hist[i] = 1.0 - acc;
        } else {
            hist[i] = counts[i] as f64 / total;
            acc += hist[i];
        }
    }
    Ok(hist)
}

fn soft_levels(bits: u8) -> Vec<f64> {
    let qmin = -(1i32 << (bits - 1));
    (0..1usize << bits).map(|i| (qmin + i as i32) as f64).collect()
}

/// Per-sample softmax responsibilities over the quantization levels.
///
/// Sample i contributes softmax_k of -(x_i/s - level_k)²/τ; rows sum to 1.
fn soft_responsibilities(x: &[f64], scale: f64, bits: u8, tau: f64) -> Vec<Vec<f64>> {
    let levels = soft_levels(bits);
    x.iter()
        .map(|&v| {
            let u = v / scale;
            let exps: Vec<f64> = levels.iter().map(|&l| -(u - l) * (u - l) / tau).collect();
            let m = exps.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let w: Vec<f64> = exps.iter().map(|&e| (e - m).exp()).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Differentiable histogram over the 2^b bins: the mean of per-sample
/// softmaxes of -(x/s - level)²/τ. Converges to [`hard_histogram`] of the
/// quantized codes as τ → 0 (up to rounding ties).
pub fn soft_histogram(x: &[f64], scale: f64, bits: u8, tau: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("soft_histogram input"));
    }
    if !(scale > 0.0) {
        return Err(Error::Scale(scale));
    }
    if !(tau > 0.0) {
        return Err(Error::Temperature(tau));
    }
    let bins = 1usize << bits;
    let mut hist = vec![0.0; bins];
    for row in soft_responsibilities(x, scale, bits, tau) {
        for (h, w) in hist.iter_mut().zip(row) {
            *h += w;
        }
    }
    let n = x.len() as f64;
    for h in hist.iter_mut() {
        *h /= n;
    }
    Ok(hist)
}

/// ∂L/∂x for L expressed through the soft histogram, given ∂L/∂bin.
///
/// The scale is treated as a constant (the same straight-through convention
/// as fake quantization).
pub fn soft_histogram_backward(
    x: &[f64],
    scale: f64,
    bits: u8,
    tau: f64,
    grad_bins: &[f64],
) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("soft_histogram input"));
    }
    if !(scale > 0.0) {
        return Err(Error::Scale(scale));
    }
    if !(tau > 0.0) {
        return Err(Error::Temperature(tau));
    }
    let bins = 1usize << bits;
    if grad_bins.len() != bins {
        return Err(Error::Shape(format!(
            "grad_bins has {} entries, expected {}",
            grad_bins.len(),
            bins
        )));
    }
    let levels = soft_levels(bits);
    let n = x.len() as f64;
    let resp = soft_responsibilities(x, scale, bits, tau);
    let mut grad_x = vec![0.0; x.len()];
    for (i, (&v, row)) in x.iter().zip(&resp).enumerate() {
        let u = v / scale;
        // de_k/du for e_k = -(u - level_k)²/τ.
        let de: Vec<f64> = levels.iter().map(|&l| -2.0 * (u - l) / tau).collect();
        let mean_de: f64 = row.iter().zip(&de).map(|(&w, &d)| w * d).sum();
        let mut acc = 0.0;
        for k in 0..bins {
            acc += grad_bins[k] * row[k] * (de[k] - mean_de);
        }
        grad_x[i] = acc / (n * scale);
    }
    Ok(grad_x)
}
