//! Learnable butterfly transform: log₂(n) layers of stride-doubling Givens
//! rotations with fixed per-unit reflection signs.
//!
//! Layer i (1-based) pairs indices (j, j + 2^{i-1}); each pair is rotated by a
//! learnable angle θ and then flipped by fixed signs (σ₁, σ₂). The sign flags
//! extend pure rotations (determinant +1) with reflections, which is what lets
//! the transform reproduce Hadamard matrices exactly. Forward application
//! costs exactly (n/2)·log₂(n) Givens units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::DenseVector;
use crate::{Error, Result};

/// Pairing convention identifier carried by persisted transforms.
pub const PAIRING_CONVENTION: &str = "stride-doubling-v1";

/// Parameters of a butterfly transform on a power-of-two dimension.
///
/// Angles are stored unconstrained in radians (gradients are periodic and
/// smooth, so no wrapping). Signs are fixed at construction and never
/// trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterflyParams {
    n: usize,
    /// `angles[layer][pair]`, layer 0 = stride 1, `n/2` entries per layer.
    angles: Vec<Vec<f64>>,
    /// `signs[layer][pair]` = (σ₁, σ₂), each ±1.
    signs: Vec<Vec<(f64, f64)>>,
}

/// Index pairs rotated together in one butterfly layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairList {
    /// 1-based layer index.
    pub layer_index: usize,
    /// (lo, hi) with hi - lo = 2^{layer_index-1}, ascending in lo.
    pub pairs: Vec<(usize, usize)>,
}

/// Number of learnable rotation angles: n·log₂(n)/2.
pub fn param_count(n: usize) -> Result<usize> {
    if !n.is_power_of_two() {
        return Err(Error::Dimension(n));
    }
    Ok(n / 2 * n.trailing_zeros() as usize)
}

/// Index pairs for one layer: (j, j + 2^{layer-1}) for every j whose bit
/// (layer-1) is zero, listed in ascending j.
pub fn pairing(n: usize, layer: usize) -> Result<PairList> {
    if !n.is_power_of_two() {
        return Err(Error::Dimension(n));
    }
    let max = n.trailing_zeros() as usize;
    if layer < 1 || layer > max {
        return Err(Error::Layer { layer, max });
    }
    let stride = 1usize << (layer - 1);
    let mut pairs = Vec::with_capacity(n / 2);
    let mut base = 0;
    while base < n {
        for j in base..base + stride {
            pairs.push((j, j + stride));
        }
        base += stride * 2;
    }
    Ok(PairList { layer_index: layer, pairs })
}

/// One signed Givens unit: (a', b') = diag(σ₁, σ₂)·G(θ)·(a, b) with
/// G(θ) = [[cosθ, -sinθ], [sinθ, cosθ]].
#[inline]
pub fn givens_apply(theta: f64, signs: (f64, f64), a: f64, b: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (signs.0 * (a * c - b * s), signs.1 * (a * s + b * c))
}

impl ButterflyParams {
    fn from_parts(n: usize, angles: Vec<Vec<f64>>, signs: Vec<Vec<(f64, f64)>>) -> Self {
        debug_assert!(n.is_power_of_two());
        Self { n, angles, signs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_layers(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    pub fn pairing_convention(&self) -> &'static str {
        PAIRING_CONVENTION
    }

    /// `angles[layer][pair]`; layer 0 applies first (stride 1).
    pub fn angles(&self) -> &[Vec<f64>] {
        &self.angles
    }

    pub fn angles_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.angles
    }

    pub fn signs(&self) -> &[Vec<(f64, f64)>] {
        &self.signs
    }

    /// Total learnable angle count.
    pub fn num_params(&self) -> usize {
        self.angles.iter().map(Vec::len).sum()
    }

    /// Gradient-shaped buffer of zeros.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.angles.iter().map(|l| vec![0.0; l.len()]).collect()
    }

    /// Rebuild from flat layer-major arrays (persistence path). Signs come in
    /// unit-major (σ₁, σ₂) pairs and must be ±1.
    pub fn from_flat(n: usize, flat_angles: &[f64], flat_signs: &[i8]) -> Result<Self> {
        let expected = param_count(n)?;
        if flat_angles.len() != expected {
            return Err(Error::Shape(format!(
                "expected {} angles for n={}, got {}",
                expected,
                n,
                flat_angles.len()
            )));
        }
        if flat_signs.len() != 2 * expected {
            return Err(Error::Shape(format!(
                "expected {} sign entries for n={}, got {}",
                2 * expected,
                n,
                flat_signs.len()
            )));
        }
        let layers = n.trailing_zeros() as usize;
        let per_layer = n / 2;
        let mut angles = Vec::with_capacity(layers);
        let mut signs = Vec::with_capacity(layers);
        for l in 0..layers {
            let a = flat_angles[l * per_layer..(l + 1) * per_layer].to_vec();
            let mut s = Vec::with_capacity(per_layer);
            for k in 0..per_layer {
                let idx = 2 * (l * per_layer + k);
                let pair = (flat_signs[idx], flat_signs[idx + 1]);
                if pair.0.abs() != 1 || pair.1.abs() != 1 {
                    return Err(Error::Shape(format!(
                        "sign entries must be ±1, got ({}, {})",
                        pair.0, pair.1
                    )));
                }
                s.push((pair.0 as f64, pair.1 as f64));
            }
            angles.push(a);
            signs.push(s);
        }
        Ok(Self::from_parts(n, angles, signs))
    }

    /// Flat layer-major angle array (persistence path).
    pub fn flat_angles(&self) -> Vec<f64> {
        self.angles.iter().flatten().copied().collect()
    }

    /// Flat unit-major (σ₁, σ₂) sign array (persistence path).
    pub fn flat_signs(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(2 * self.num_params());
        for layer in &self.signs {
            for &(s1, s2) in layer {
                out.push(s1 as i8);
                out.push(s2 as i8);
            }
        }
        out
    }
}

fn uniform_signs(n: usize, value: (f64, f64)) -> Vec<Vec<(f64, f64)>> {
    let layers = n.trailing_zeros() as usize;
    (0..layers).map(|_| vec![value; n / 2]).collect()
}

/// All angles zero, all signs +1: B = I.
pub fn init_identity(n: usize) -> Result<ButterflyParams> {
    param_count(n)?;
    let layers = n.trailing_zeros() as usize;
    let angles = (0..layers).map(|_| vec![0.0; n / 2]).collect();
    Ok(ButterflyParams::from_parts(n, angles, uniform_signs(n, (1.0, 1.0))))
}

/// Every unit θ = -π/4 with signs (+1, -1), so each unit equals H₂ and the
/// full transform materializes to the orthonormal Hadamard matrix.
pub fn init_hadamard(n: usize) -> Result<ButterflyParams> {
    param_count(n)?;
    let layers = n.trailing_zeros() as usize;
    let theta = -std::f64::consts::FRAC_PI_4;
    let angles = (0..layers).map(|_| vec![theta; n / 2]).collect();
    Ok(ButterflyParams::from_parts(n, angles, uniform_signs(n, (1.0, -1.0))))
}

/// Angles drawn from Uniform(-scale, scale) in layer-major order, signs +1.
pub fn init_random(n: usize, seed: u64, scale: f64) -> Result<ButterflyParams> {
    param_count(n)?;
    if scale <= 0.0 {
        return Err(Error::Config(format!("random init scale must be > 0, got {scale}")));
    }
    let layers = n.trailing_zeros() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles = (0..layers)
        .map(|_| (0..n / 2).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect();
    Ok(ButterflyParams::from_parts(n, angles, uniform_signs(n, (1.0, 1.0))))
}

#[inline]
fn layer_units<F: FnMut(usize, usize, usize)>(n: usize, layer: usize, mut f: F) {
    // Unit k couples (lo, lo + stride); enumeration is ascending in lo.
    let stride = 1usize << layer;
    let mut k = 0;
    let mut base = 0;
    while base < n {
        for lo in base..base + stride {
            f(k, lo, lo + stride);
            k += 1;
        }
        base += stride * 2;
    }
}

fn apply_layers(params: &ButterflyParams, x: &mut [f64], count: &mut u64) {
    for layer in 0..params.num_layers() {
        let angles = &params.angles[layer];
        let signs = &params.signs[layer];
        layer_units(params.n, layer, |k, lo, hi| {
            let (a, b) = givens_apply(angles[k], signs[k], x[lo], x[hi]);
            x[lo] = a;
            x[hi] = b;
            *count += 1;
        });
    }
}

fn apply_layers_transposed(params: &ButterflyParams, y: &mut [f64]) {
    for layer in (0..params.num_layers()).rev() {
        let angles = &params.angles[layer];
        let signs = &params.signs[layer];
        layer_units(params.n, layer, |k, lo, hi| {
            let (s, c) = angles[k].sin_cos();
            let a = signs[k].0 * y[lo];
            let b = signs[k].1 * y[hi];
            y[lo] = c * a + s * b;
            y[hi] = -s * a + c * b;
        });
    }
}

fn check_dim(params: &ButterflyParams, v: &DenseVector) -> Result<()> {
    if v.dim() != params.n {
        return Err(Error::Shape(format!(
            "vector dim {} does not match transform dim {}",
            v.dim(),
            params.n
        )));
    }
    Ok(())
}

/// y = B·x, applying the stride-1 layer first.
pub fn butterfly_forward(params: &ButterflyParams, x: &DenseVector) -> Result<DenseVector> {
    Ok(butterfly_forward_counted(params, x)?.0)
}

/// Forward apply with an instrumented Givens-unit count, which is always
/// (n/2)·log₂(n).
pub fn butterfly_forward_counted(
    params: &ButterflyParams,
    x: &DenseVector,
) -> Result<(DenseVector, u64)> {
    check_dim(params, x)?;
    let mut v = x.as_slice().to_vec();
    let mut count = 0;
    apply_layers(params, &mut v, &mut count);
    Ok((DenseVector::new(v)?, count))
}

/// y = Bᵀ·x: transposed layers in reverse order (highest stride first).
/// Inverts `butterfly_forward` exactly up to rounding.
pub fn butterfly_transpose(params: &ButterflyParams, y: &DenseVector) -> Result<DenseVector> {
    check_dim(params, y)?;
    let mut v = y.as_slice().to_vec();
    apply_layers_transposed(params, &mut v);
    DenseVector::new(v)
}

/// Analytic backpropagation through the butterfly.
///
/// Recomputes the forward pass from `x` (checkpoint-free) and returns
/// (∂L/∂θ in `angles` shape, ∂L/∂x = Bᵀ·grad_out). The per-unit angle
/// derivative uses ∂G/∂θ = [[-sinθ, -cosθ], [cosθ, -sinθ]] composed with the
/// fixed signs.
pub fn butterfly_backward(
    params: &ButterflyParams,
    x: &DenseVector,
    grad_out: &DenseVector,
) -> Result<(Vec<Vec<f64>>, DenseVector)> {
    check_dim(params, x)?;
    check_dim(params, grad_out)?;
    let layers = params.num_layers();

    // Cache each layer's input.
    let mut layer_inputs = Vec::with_capacity(layers);
    let mut v = x.as_slice().to_vec();
    for layer in 0..layers {
        layer_inputs.push(v.clone());
        let angles = &params.angles[layer];
        let signs = &params.signs[layer];
        layer_units(params.n, layer, |k, lo, hi| {
            let (a, b) = givens_apply(angles[k], signs[k], v[lo], v[hi]);
            v[lo] = a;
            v[hi] = b;
        });
    }

    let mut grad_angles = params.zero_grads();
    let mut g = grad_out.as_slice().to_vec();
    for layer in (0..layers).rev() {
        let input = &layer_inputs[layer];
        let angles = &params.angles[layer];
        let signs = &params.signs[layer];
        let grads = &mut grad_angles[layer];
        layer_units(params.n, layer, |k, lo, hi| {
            let (s, c) = angles[k].sin_cos();
            let (s1, s2) = signs[k];
            let (ua, ub) = (input[lo], input[hi]);
            let (ga, gb) = (g[lo], g[hi]);
            grads[k] = ga * s1 * (-ua * s - ub * c) + gb * s2 * (ua * c - ub * s);
            g[lo] = s1 * c * ga + s2 * s * gb;
            g[hi] = -s1 * s * ga + s2 * c * gb;
        });
    }
    Ok((grad_angles, DenseVector::new(g)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{self, DenseMatrix, DenseVector};
    use rand_distr::{Distribution, StandardNormal};

    fn vect(entries: &[f64]) -> DenseVector {
        DenseVector::new(entries.to_vec()).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DenseVector {
        DenseVector::new((0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    fn materialized(params: &ButterflyParams) -> DenseMatrix {
        linalg::materialize(|x| butterfly_forward(params, x), params.n()).unwrap()
    }

    #[test]
    fn pairing_n8_matches_stride_doubling() {
        let l1 = pairing(8, 1).unwrap();
        assert_eq!(l1.pairs, vec![(0, 1), (2, 3), (4, 5), (6, 7)]);
        let l2 = pairing(8, 2).unwrap();
        assert_eq!(l2.pairs, vec![(0, 2), (1, 3), (4, 6), (5, 7)]);
        let l3 = pairing(8, 3).unwrap();
        assert_eq!(l3.pairs, vec![(0, 4), (1, 5), (2, 6), (3, 7)]);
    }

    #[test]
    fn pairing_layer_out_of_range() {
        assert!(matches!(pairing(8, 0), Err(Error::Layer { layer: 0, max: 3 })));
        assert!(matches!(pairing(8, 4), Err(Error::Layer { layer: 4, max: 3 })));
    }

    #[test]
    fn pairing_partitions_indices() {
        for layer in 1..=5 {
            let pl = pairing(32, layer).unwrap();
            let mut seen = vec![false; 32];
            for &(lo, hi) in &pl.pairs {
                assert!(lo < hi);
                assert_eq!(hi - lo, 1 << (layer - 1));
                assert!(!seen[lo] && !seen[hi]);
                seen[lo] = true;
                seen[hi] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn givens_identity_and_quarter_turn() {
        assert_eq!(givens_apply(0.0, (1.0, 1.0), 3.0, 4.0), (3.0, 4.0));
        let (a, b) = givens_apply(std::f64::consts::FRAC_PI_2, (1.0, 1.0), 1.0, 0.0);
        assert!(a.abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn givens_hadamard_unit_matches_h2_columns() {
        let theta = -std::f64::consts::FRAC_PI_4;
        let s = 1.0 / std::f64::consts::SQRT_2;
        let (a, b) = givens_apply(theta, (1.0, -1.0), 1.0, 0.0);
        assert!((a - s).abs() < 1e-15 && (b - s).abs() < 1e-15);
        let (a, b) = givens_apply(theta, (1.0, -1.0), 0.0, 1.0);
        assert!((a - s).abs() < 1e-15 && (b + s).abs() < 1e-15);
        // Same unit, checked against hadamard_direct(2) entrywise.
        let h2 = linalg::hadamard_direct(2).unwrap();
        let m = linalg::materialize(
            |x| {
                let (p, q) = givens_apply(theta, (1.0, -1.0), x.as_slice()[0], x.as_slice()[1]);
                DenseVector::new(vec![p, q])
            },
            2,
        )
        .unwrap();
        assert!(m.max_abs_diff(&h2) < 1e-15);
    }

    #[test]
    fn forward_identity_params_is_exact() {
        let params = init_identity(8).unwrap();
        let x = vect(&[0.5, -1.5, 2.0, 0.0, 3.25, -0.125, 7.0, -9.0]);
        let y = butterfly_forward(&params, &x).unwrap();
        assert_eq!(y.as_slice(), x.as_slice());
    }

    #[test]
    fn forward_hadamard_init_n8_spreads_e0() {
        let params = init_hadamard(8).unwrap();
        let y = butterfly_forward(&params, &DenseVector::basis(8, 0)).unwrap();
        let expected = 1.0 / (8.0f64).sqrt();
        for &e in y.as_slice() {
            assert!((e - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..1000 {
            let params = init_random(64, trial, 3.0).unwrap();
            let x = random_vec(&mut rng, 64);
            let y = butterfly_forward(&params, &x).unwrap();
            let rel = (y.norm2() - x.norm2()).abs() / x.norm2();
            assert!(rel <= 1e-12, "trial {trial}: rel {rel}");
        }
    }

    #[test]
    fn forward_shape_error() {
        let params = init_identity(8).unwrap();
        let err = butterfly_forward(&params, &vect(&[1.0; 4])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn transpose_inverts_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let params = init_random(32, seed, 3.0).unwrap();
            let x = random_vec(&mut rng, 32);
            let y = butterfly_forward(&params, &x).unwrap();
            let back = butterfly_transpose(&params, &y).unwrap();
            assert!(back.max_abs_diff(&x) <= 1e-10);
        }
    }

    #[test]
    fn transpose_of_hadamard_equals_forward() {
        // H₄ is symmetric, so Bᵀ and B agree on every input.
        let params = init_hadamard(4).unwrap();
        for j in 0..4 {
            let e = DenseVector::basis(4, j);
            let f = butterfly_forward(&params, &e).unwrap();
            let t = butterfly_transpose(&params, &e).unwrap();
            assert!(f.max_abs_diff(&t) <= 1e-12);
        }
    }

    #[test]
    fn hadamard_init_materializes_to_hadamard_direct() {
        for n in [2usize, 4, 8, 128] {
            let params = init_hadamard(n).unwrap();
            let m = materialized(&params);
            let h = linalg::hadamard_direct(n).unwrap();
            assert!(m.max_abs_diff(&h) <= 1e-12, "n={n}");
        }
    }

    #[test]
    fn init_counts_and_errors() {
        assert_eq!(param_count(8).unwrap(), 12);
        assert_eq!(param_count(128).unwrap(), 448);
        assert_eq!(param_count(4096).unwrap(), 24576);
        assert!(matches!(param_count(6), Err(Error::Dimension(6))));
        assert!(matches!(init_identity(12), Err(Error::Dimension(12))));
        assert_eq!(init_hadamard(128).unwrap().num_params(), 448);
    }

    #[test]
    fn init_random_is_deterministic_and_scaled() {
        let a = init_random(16, 9, 0.1).unwrap();
        let b = init_random(16, 9, 0.1).unwrap();
        assert_eq!(a, b);
        let c = init_random(16, 10, 0.1).unwrap();
        assert_ne!(a, c);
        for layer in a.angles() {
            for &t in layer {
                assert!(t.abs() < 0.1);
            }
        }
    }

    #[test]
    fn work_bound_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in [2usize, 8, 64, 1024] {
            let params = init_random(n, 1, 0.5).unwrap();
            let x = random_vec(&mut rng, n);
            let (_, count) = butterfly_forward_counted(&params, &x).unwrap();
            assert_eq!(count as usize, n / 2 * n.trailing_zeros() as usize);
        }
    }

    #[test]
    fn materialized_is_orthogonal_for_random_params() {
        for seed in 0..10 {
            let params = init_random(64, seed, 3.0).unwrap();
            let m = materialized(&params);
            assert!(m.orthogonality_residual() <= 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn backward_stationary_at_identity() {
        // L = yᵀy/2 with x = e₀ and all θ = 0: rotating e₀ does not change
        // the loss to first order, so the angle gradient is exactly zero.
        let params = init_identity(2).unwrap();
        let x = DenseVector::basis(2, 0);
        let y = butterfly_forward(&params, &x).unwrap();
        let (grads, _) = butterfly_backward(&params, &x, &y).unwrap();
        assert_eq!(grads[0][0], 0.0);
    }

    #[test]
    fn backward_matches_givens_derivative_at_zero() {
        // At θ=0 the unit derivative is [[0,-1],[1,0]], so
        // ∂L/∂θ = g·(∂G/∂θ)·u = g₁·(-u₂) + g₂·u₁.
        let params = init_identity(2).unwrap();
        let x = vect(&[3.0, 5.0]);
        let g = vect(&[0.25, -2.0]);
        let (grads, grad_x) = butterfly_backward(&params, &x, &g).unwrap();
        assert_eq!(grads[0][0], 0.25 * (-5.0) + (-2.0) * 3.0);
        // Identity transform: grad_x == grad_out.
        assert_eq!(grad_x.as_slice(), g.as_slice());
    }

    #[test]
    fn backward_grad_x_is_transpose_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = init_random(16, 3, 2.0).unwrap();
        let x = random_vec(&mut rng, 16);
        let g = random_vec(&mut rng, 16);
        let (_, grad_x) = butterfly_backward(&params, &x, &g).unwrap();
        let expected = butterfly_transpose(&params, &g).unwrap();
        assert_eq!(grad_x.as_slice(), expected.as_slice());
    }

    /// Central-difference oracle for ∂L/∂θ with a fixed quadratic loss.
    fn finite_diff_check(n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_random(n, seed.wrapping_add(77), 2.0).unwrap();
        let x = random_vec(&mut rng, n);
        let lin: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let quad: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let loss = |p: &ButterflyParams| -> f64 {
            let y = butterfly_forward(p, &x).unwrap();
            y.as_slice()
                .iter()
                .zip(lin.iter().zip(&quad))
                .map(|(&yi, (&c, &d))| c * yi + 0.5 * d * yi * yi)
                .sum()
        };
        let y = butterfly_forward(&params, &x).unwrap();
        let grad_out = DenseVector::new(
            y.as_slice()
                .iter()
                .zip(lin.iter().zip(&quad))
                .map(|(&yi, (&c, &d))| c + d * yi)
                .collect(),
        )
        .unwrap();
        let (analytic, _) = butterfly_backward(&params, &x, &grad_out).unwrap();

        let h = 1e-5;
        let mut max_abs_grad = 0.0f64;
        let mut max_err = 0.0f64;
        for layer in 0..params.num_layers() {
            for k in 0..n / 2 {
                let mut plus = params.clone();
                plus.angles_mut()[layer][k] += h;
                let mut minus = params.clone();
                minus.angles_mut()[layer][k] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                max_abs_grad = max_abs_grad.max(fd.abs());
                max_err = max_err.max((analytic[layer][k] - fd).abs());
            }
        }
        max_err / max_abs_grad.max(1e-8)
    }

    #[test]
    fn backward_matches_central_differences() {
        for seed in 0..5 {
            let rel = finite_diff_check(16, seed);
            assert!(rel <= 1e-5, "seed {seed}: rel err {rel}");
        }
    }

    #[test]
    fn computational_invariance_without_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 16;
        let m = 10;
        let params = init_random(n, 8, 2.0).unwrap();
        let w = DenseMatrix::new(m, n, linalg::normal_vec(&mut rng, m * n)).unwrap();
        let x = random_vec(&mut rng, n);
        let wx = linalg::mat_vec(&w, &x).unwrap();
        // (W·Bᵀ) row i = B·(row i of W).
        let mut rotated_rows = Vec::new();
        for i in 0..m {
            rotated_rows
                .extend(butterfly_forward(&params, &vect(w.row(i))).unwrap().into_vec());
        }
        let wbt = DenseMatrix::new(m, n, rotated_rows).unwrap();
        let bx = butterfly_forward(&params, &x).unwrap();
        let back = linalg::mat_vec(&wbt, &bx).unwrap();
        let bound = 1e-10 * w.frobenius_norm() * x.norm2();
        assert!(wx.max_abs_diff(&back) <= bound);
    }

    #[test]
    fn flat_round_trip() {
        let params = init_hadamard(16).unwrap();
        let rebuilt =
            ButterflyParams::from_flat(16, &params.flat_angles(), &params.flat_signs()).unwrap();
        assert_eq!(params, rebuilt);
        assert!(matches!(
            ButterflyParams::from_flat(16, &[0.0; 3], &[1; 6]),
            Err(Error::Shape(_))
        ));
    }
}
