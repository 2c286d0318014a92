//! Orthogonal transforms for dimensions that are not a power of two.
//!
//! A composite transform is the Kronecker product Q₁ ⊗ Q₂ where Q₁ is a dense
//! Cayley-parameterized orthogonal d₁×d₁ block and Q₂ is a butterfly transform
//! on the power-of-two factor d₂. Vectors are reshaped row-major to d₁×d₂ with
//! Q₁ acting on the slow (row) axis; this convention is part of the persisted
//! file format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::butterfly::{self, ButterflyParams};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::{Error, Result};

/// Skew-symmetric parameters of a Cayley-map orthogonal matrix
/// Q = (I - A)(I + A)⁻¹.
///
/// `skew` holds the strict upper triangle of A row-major; the lower triangle
/// is implied by Aᵀ = -A.
#[derive(Debug, Clone, PartialEq)]
pub struct CayleyParams {
    d: usize,
    skew: Vec<f64>,
}

impl CayleyParams {
    pub fn new(d: usize, skew: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Shape("cayley: d must be >= 1".into()));
        }
        let expected = d * (d - 1) / 2;
        if skew.len() != expected {
            return Err(Error::Shape(format!(
                "cayley: expected {} skew parameters for d={}, got {}",
                expected,
                d,
                skew.len()
            )));
        }
        if let Some(pos) = skew.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("skew entry {pos}")));
        }
        Ok(Self { d, skew })
    }

    /// A = 0, so Q = I.
    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(d, vec![0.0; d * (d - 1) / 2])
    }

    /// Skew entries drawn from Uniform(-scale, scale), deterministic per seed.
    pub fn random(d: usize, seed: u64, scale: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skew = (0..d * (d - 1) / 2)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Self::new(d, skew)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn skew(&self) -> &[f64] {
        &self.skew
    }

    pub fn skew_mut(&mut self) -> &mut [f64] {
        &mut self.skew
    }

    pub fn num_params(&self) -> usize {
        self.skew.len()
    }

    /// Flat row-major index of strict-upper entry (p, q), p < q.
    fn index(&self, p: usize, q: usize) -> usize {
        debug_assert!(p < q && q < self.d);
        p * self.d - p * (p + 1) / 2 + (q - p - 1)
    }

    /// The full skew-symmetric A.
    fn skew_matrix(&self) -> DenseMatrix {
        let d = self.d;
        let mut a = DenseMatrix::zeros(d, d);
        for p in 0..d {
            for q in (p + 1)..d {
                let v = self.skew[self.index(p, q)];
                a.set(p, q, v);
                a.set(q, p, -v);
            }
        }
        a
    }
}

/// Q = (I - A)(I + A)⁻¹. Always orthogonal: I + A is invertible for every
/// real skew-symmetric A.
pub fn cayley_materialize(p: &CayleyParams) -> Result<DenseMatrix> {
    let d = p.d;
    let a = p.skew_matrix();
    let mut i_plus = DenseMatrix::identity(d);
    let mut i_minus = DenseMatrix::identity(d);
    for r in 0..d {
        for c in 0..d {
            let v = a.get(r, c);
            i_plus.set(r, c, i_plus.get(r, c) + v);
            i_minus.set(r, c, i_minus.get(r, c) - v);
        }
    }
    let inv = linalg::lu_solve(&i_plus, &DenseMatrix::identity(d)).map_err(|e| {
        Error::Internal(format!("cayley: I+A reported singular, which is impossible: {e}"))
    })?;
    linalg::mat_mul(&i_minus, &inv)
}

/// ∂L/∂(strict upper triangle of A) from ∂L/∂Q.
///
/// Uses the differential dQ = -(I + Q)·dA·(I + A)⁻¹, giving the unconstrained
/// matrix gradient Ĝ = -(I + Q)ᵀ·G·(I - A)⁻¹; the skew parameter gradient is
/// its antisymmetric part, Ĝ - Ĝᵀ, restricted to the upper triangle.
pub fn cayley_backward(p: &CayleyParams, grad_q: &DenseMatrix) -> Result<Vec<f64>> {
    let d = p.d;
    if grad_q.rows() != d || grad_q.cols() != d {
        return Err(Error::Shape(format!(
            "cayley_backward: grad is {}x{}, expected {}x{}",
            grad_q.rows(),
            grad_q.cols(),
            d,
            d
        )));
    }
    let q = cayley_materialize(p)?;
    let a = p.skew_matrix();
    let mut i_plus = DenseMatrix::identity(d);
    for r in 0..d {
        for c in 0..d {
            i_plus.set(r, c, i_plus.get(r, c) + a.get(r, c));
        }
    }
    // Z = G·(I - A)⁻¹, via (I + A)·Zᵀ = Gᵀ since (I - A)ᵀ = I + A.
    let zt = linalg::lu_solve(&i_plus, &grad_q.transpose()).map_err(|e| {
        Error::Internal(format!("cayley_backward: I+A reported singular: {e}"))
    })?;
    let z = zt.transpose();
    // Ĝ = -(I + Q)ᵀ·Z.
    let mut iq_t = q.transpose();
    for r in 0..d {
        iq_t.set(r, r, iq_t.get(r, r) + 1.0);
    }
    let prod = linalg::mat_mul(&iq_t, &z)?;
    let mut grads = vec![0.0; p.skew.len()];
    for r in 0..d {
        for c in (r + 1)..d {
            grads[p.index(r, c)] = -(prod.get(r, c) - prod.get(c, r));
        }
    }
    Ok(grads)
}

/// Kronecker-composite transform Q₁ ⊗ Q₂ on dimension d = d₁·d₂.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeParams {
    d1: usize,
    d2: usize,
    q1: CayleyParams,
    b2: ButterflyParams,
}

impl CompositeParams {
    pub fn new(q1: CayleyParams, b2: ButterflyParams) -> Result<Self> {
        Ok(Self { d1: q1.d(), d2: b2.n(), q1, b2 })
    }

    pub fn d(&self) -> usize {
        self.d1 * self.d2
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn q1(&self) -> &CayleyParams {
        &self.q1
    }

    pub fn q1_mut(&mut self) -> &mut CayleyParams {
        &mut self.q1
    }

    pub fn b2(&self) -> &ButterflyParams {
        &self.b2
    }

    pub fn b2_mut(&mut self) -> &mut ButterflyParams {
        &mut self.b2
    }

    /// Total learnable parameters: d₁(d₁-1)/2 skew plus d₂·log₂(d₂)/2 angles.
    pub fn num_params(&self) -> usize {
        self.q1.num_params() + self.b2.num_params()
    }

    fn check_dim(&self, v: &DenseVector) -> Result<()> {
        if v.dim() != self.d() {
            return Err(Error::Shape(format!(
                "vector dim {} does not match composite dim {}x{}",
                v.dim(),
                self.d1,
                self.d2
            )));
        }
        Ok(())
    }
}

/// y = (Q₁ ⊗ Q₂)·x.
///
/// Reshapes x row-major to X (d₁×d₂), computes Y = Q₁·X·B₂ᵀ by butterfly-
/// forwarding each row and then applying the materialized Q₁ on the row axis,
/// and flattens Y row-major.
pub fn kron_apply(c: &CompositeParams, x: &DenseVector) -> Result<DenseVector> {
    c.check_dim(x)?;
    let (d1, d2) = (c.d1, c.d2);
    let q1 = cayley_materialize(&c.q1)?;
    let xs = x.as_slice();

    let mut z = Vec::with_capacity(d1 * d2);
    for k in 0..d1 {
        let row = DenseVector::new(xs[k * d2..(k + 1) * d2].to_vec())?;
        z.extend(butterfly::butterfly_forward(&c.b2, &row)?.into_vec());
    }

    let mut y = vec![0.0; d1 * d2];
    for i in 0..d1 {
        for k in 0..d1 {
            let coeff = q1.get(i, k);
            for j in 0..d2 {
                y[i * d2 + j] += coeff * z[k * d2 + j];
            }
        }
    }
    DenseVector::new(y)
}

/// x = (Q₁ ⊗ Q₂)ᵀ·y: Q₁ᵀ on the row axis first, then per-row butterfly
/// transpose (the exact arithmetic mirror of the backward pass).
pub fn kron_transpose(c: &CompositeParams, y: &DenseVector) -> Result<DenseVector> {
    c.check_dim(y)?;
    let (d1, d2) = (c.d1, c.d2);
    let q1 = cayley_materialize(&c.q1)?;
    let ys = y.as_slice();

    let mut t = vec![0.0; d1 * d2];
    for i in 0..d1 {
        for k in 0..d1 {
            let coeff = q1.get(k, i);
            for j in 0..d2 {
                t[i * d2 + j] += coeff * ys[k * d2 + j];
            }
        }
    }
    let mut x = Vec::with_capacity(d1 * d2);
    for k in 0..d1 {
        let row = DenseVector::new(t[k * d2..(k + 1) * d2].to_vec())?;
        x.extend(butterfly::butterfly_transpose(&c.b2, &row)?.into_vec());
    }
    DenseVector::new(x)
}

/// Gradients of both factors and the input for y = (Q₁ ⊗ Q₂)·x.
pub fn kron_backward(
    c: &CompositeParams,
    x: &DenseVector,
    grad_out: &DenseVector,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, DenseVector)> {
    c.check_dim(x)?;
    c.check_dim(grad_out)?;
    let (d1, d2) = (c.d1, c.d2);
    let q1 = cayley_materialize(&c.q1)?;
    let xs = x.as_slice();
    let gs = grad_out.as_slice();

    // Recompute Z (rows = B₂·x_k).
    let mut z = Vec::with_capacity(d1 * d2);
    for k in 0..d1 {
        let row = DenseVector::new(xs[k * d2..(k + 1) * d2].to_vec())?;
        z.extend(butterfly::butterfly_forward(&c.b2, &row)?.into_vec());
    }

    // ∂L/∂Q₁ = grad_Y·Zᵀ.
    let mut grad_q1 = DenseMatrix::zeros(d1, d1);
    for i in 0..d1 {
        for k in 0..d1 {
            let mut acc = 0.0;
            for j in 0..d2 {
                acc += gs[i * d2 + j] * z[k * d2 + j];
            }
            grad_q1.set(i, k, acc);
        }
    }
    let skew_grads = cayley_backward(&c.q1, &grad_q1)?;

    // grad_Z = Q₁ᵀ·grad_Y.
    let mut grad_z = vec![0.0; d1 * d2];
    for i in 0..d1 {
        for k in 0..d1 {
            let coeff = q1.get(k, i);
            for j in 0..d2 {
                grad_z[i * d2 + j] += coeff * gs[k * d2 + j];
            }
        }
    }

    let mut angle_grads = c.b2.zero_grads();
    let mut grad_x = Vec::with_capacity(d1 * d2);
    for k in 0..d1 {
        let row = DenseVector::new(xs[k * d2..(k + 1) * d2].to_vec())?;
        let grow = DenseVector::new(grad_z[k * d2..(k + 1) * d2].to_vec())?;
        let (g_angles, g_row) = butterfly::butterfly_backward(&c.b2, &row, &grow)?;
        for (acc, layer) in angle_grads.iter_mut().zip(g_angles) {
            for (a, g) in acc.iter_mut().zip(layer) {
                *a += g;
            }
        }
        grad_x.extend(g_row.into_vec());
    }
    Ok((skew_grads, angle_grads, DenseVector::new(grad_x)?))
}

/// Balanced power-of-two factorization d = d₁·d₂.
///
/// Powers of two map to (1, d). Otherwise d₂ is the smallest power-of-two
/// divisor of d with d₁ = d/d₂ ≤ d₂, which reproduces 5120 → 40×128. Odd d
/// (and even d with no balanced split, like 6 = 3·2) has no such
/// factorization and errors; callers must then supply one explicitly.
pub fn choose_factorization(d: usize) -> Result<(usize, usize)> {
    if d == 0 {
        return Err(Error::Shape("choose_factorization: d must be >= 1".into()));
    }
    if d.is_power_of_two() {
        return Ok((1, d));
    }
    let max_k = d.trailing_zeros();
    for k in 1..=max_k {
        let d2 = 1usize << k;
        let d1 = d / d2;
        if d1 <= d2 {
            return Ok((d1, d2));
        }
    }
    Err(Error::NoPow2Factor(d))
}
