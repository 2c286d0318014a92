//! Transform strategies behind a common trait.
//!
//! Fixed baselines (identity, Hadamard, Haar-random) and learned transforms
//! (butterfly or Kronecker composite) all implement [`Transform`], so
//! evaluation code is generic over the rotation in play. Fixed strategies are
//! registered by name and built at runtime from CLI keywords.

use crate::butterfly::{self, ButterflyParams};
use crate::composite::{self, CompositeParams};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::{Error, Result};

/// An orthogonal transform strategy on a fixed dimension.
pub trait Transform {
    fn dim(&self) -> usize;

    /// Method label used in comparison tables and coherence profiles.
    fn label(&self) -> &str;

    /// y = Q·x.
    fn forward(&self, x: &DenseVector) -> Result<DenseVector>;

    /// y = Qᵀ·x.
    fn transpose(&self, x: &DenseVector) -> Result<DenseVector>;

    /// Learnable parameter count (0 for fixed strategies).
    fn num_learnable_params(&self) -> usize;

    /// Dense matrix whose column j is `forward(e_j)`.
    fn materialize(&self) -> Result<DenseMatrix> {
        linalg::materialize(|x| self.forward(x), self.dim())
    }
}

/// Learnable transform parameters: a butterfly for power-of-two dimensions or
/// a Cayley⊗butterfly composite otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformParams {
    Butterfly(ButterflyParams),
    Composite(CompositeParams),
}

/// Gradient buffer shaped like [`TransformParams`]. `skew` is empty for the
/// pure butterfly case.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub skew: Vec<f64>,
    pub angles: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.skew {
            *g *= factor;
        }
        for layer in &mut self.angles {
            for g in layer {
                *g *= factor;
            }
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.skew.iter_mut().zip(&other.skew) {
            *a += b;
        }
        for (la, lb) in self.angles.iter_mut().zip(&other.angles) {
            for (a, b) in la.iter_mut().zip(lb) {
                *a += b;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let s = self.skew.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        self.angles
            .iter()
            .flatten()
            .fold(s, |m, g| m.max(g.abs()))
    }
}

impl TransformParams {
    pub fn dim(&self) -> usize {
        match self {
            Self::Butterfly(p) => p.n(),
            Self::Composite(c) => c.d(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Self::Butterfly(p) => p.num_params(),
            Self::Composite(c) => c.num_params(),
        }
    }

    pub fn forward(&self, x: &DenseVector) -> Result<DenseVector> {
        match self {
            Self::Butterfly(p) => butterfly::butterfly_forward(p, x),
            Self::Composite(c) => composite::kron_apply(c, x),
        }
    }

    pub fn transpose(&self, y: &DenseVector) -> Result<DenseVector> {
        match self {
            Self::Butterfly(p) => butterfly::butterfly_transpose(p, y),
            Self::Composite(c) => composite::kron_transpose(c, y),
        }
    }

    pub fn zero_grads(&self) -> ParamGrads {
        match self {
            Self::Butterfly(p) => ParamGrads { skew: Vec::new(), angles: p.zero_grads() },
            Self::Composite(c) => ParamGrads {
                skew: vec![0.0; c.q1().num_params()],
                angles: c.b2().zero_grads(),
            },
        }
    }

    /// Backpropagate one sample, adding parameter gradients into `acc` and
    /// returning ∂L/∂x.
    pub fn backward_accumulate(
        &self,
        x: &DenseVector,
        grad_out: &DenseVector,
        acc: &mut ParamGrads,
    ) -> Result<DenseVector> {
        match self {
            Self::Butterfly(p) => {
                let (angle_grads, grad_x) = butterfly::butterfly_backward(p, x, grad_out)?;
                for (a, layer) in acc.angles.iter_mut().zip(angle_grads) {
                    for (dst, g) in a.iter_mut().zip(layer) {
                        *dst += g;
                    }
                }
                Ok(grad_x)
            }
            Self::Composite(c) => {
                let (skew_grads, angle_grads, grad_x) = composite::kron_backward(c, x, grad_out)?;
                for (dst, g) in acc.skew.iter_mut().zip(skew_grads) {
                    *dst += g;
                }
                for (a, layer) in acc.angles.iter_mut().zip(angle_grads) {
                    for (dst, g) in a.iter_mut().zip(layer) {
                        *dst += g;
                    }
                }
                Ok(grad_x)
            }
        }
    }

    /// One gradient-descent step; sign flags are never updated.
    pub fn sgd_step(&mut self, grads: &ParamGrads, lr: f64) {
        match self {
            Self::Butterfly(p) => {
                for (layer, glayer) in p.angles_mut().iter_mut().zip(&grads.angles) {
                    for (theta, g) in layer.iter_mut().zip(glayer) {
                        *theta -= lr * g;
                    }
                }
            }
            Self::Composite(c) => {
                for (s, g) in c.q1_mut().skew_mut().iter_mut().zip(&grads.skew) {
                    *s -= lr * g;
                }
                for (layer, glayer) in c.b2_mut().angles_mut().iter_mut().zip(&grads.angles) {
                    for (theta, g) in layer.iter_mut().zip(glayer) {
                        *theta -= lr * g;
                    }
                }
            }
        }
    }
}

impl Transform for TransformParams {
    fn dim(&self) -> usize {
        TransformParams::dim(self)
    }

    fn label(&self) -> &str {
        "butterfly-learned"
    }

    fn forward(&self, x: &DenseVector) -> Result<DenseVector> {
        TransformParams::forward(self, x)
    }

    fn transpose(&self, y: &DenseVector) -> Result<DenseVector> {
        TransformParams::transpose(self, y)
    }

    fn num_learnable_params(&self) -> usize {
        self.num_params()
    }
}

/// The do-nothing baseline.
pub struct IdentityTransform {
    n: usize,
}

impl IdentityTransform {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Transform for IdentityTransform {
    fn dim(&self) -> usize {
        self.n
    }

    fn label(&self) -> &str {
        "identity"
    }

    fn forward(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.dim() != self.n {
            return Err(Error::Shape(format!("identity: dim {} != {}", x.dim(), self.n)));
        }
        Ok(x.clone())
    }

    fn transpose(&self, x: &DenseVector) -> Result<DenseVector> {
        self.forward(x)
    }

    fn num_learnable_params(&self) -> usize {
        0
    }
}

/// Fixed orthonormal Hadamard transform, applied in O(n log n). H is
/// symmetric, so transpose application equals forward application.
pub struct HadamardTransform {
    n: usize,
}

impl HadamardTransform {
    pub fn new(n: usize) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::Dimension(n));
        }
        Ok(Self { n })
    }
}

impl Transform for HadamardTransform {
    fn dim(&self) -> usize {
        self.n
    }

    fn label(&self) -> &str {
        "hadamard"
    }

    fn forward(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.dim() != self.n {
            return Err(Error::Shape(format!("hadamard: dim {} != {}", x.dim(), self.n)));
        }
        let mut v = x.as_slice().to_vec();
        linalg::hadamard_apply(&mut v);
        DenseVector::new(v)
    }

    fn transpose(&self, x: &DenseVector) -> Result<DenseVector> {
        self.forward(x)
    }

    fn num_learnable_params(&self) -> usize {
        0
    }
}

/// Haar-random orthogonal baseline, held as an explicit matrix.
pub struct RandomOrthogonalTransform {
    q: DenseMatrix,
}

impl RandomOrthogonalTransform {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        Ok(Self { q: linalg::haar_orthogonal(n, seed)? })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.q
    }
}

impl Transform for RandomOrthogonalTransform {
    fn dim(&self) -> usize {
        self.q.rows()
    }

    fn label(&self) -> &str {
        "random"
    }

    fn forward(&self, x: &DenseVector) -> Result<DenseVector> {
        linalg::mat_vec(&self.q, x)
    }

    fn transpose(&self, x: &DenseVector) -> Result<DenseVector> {
        linalg::transpose_mat_vec(&self.q, x)
    }

    fn num_learnable_params(&self) -> usize {
        0
    }

    fn materialize(&self) -> Result<DenseMatrix> {
        Ok(self.q.clone())
    }
}

type Builder = fn(usize, u64) -> Result<Box<dyn Transform>>;

fn build_identity(n: usize, _seed: u64) -> Result<Box<dyn Transform>> {
    Ok(Box::new(IdentityTransform::new(n)))
}

fn build_hadamard(n: usize, _seed: u64) -> Result<Box<dyn Transform>> {
    Ok(Box::new(HadamardTransform::new(n)?))
}

fn build_random(n: usize, seed: u64) -> Result<Box<dyn Transform>> {
    Ok(Box::new(RandomOrthogonalTransform::new(n, seed)?))
}

/// Fixed strategies selectable by name.
pub fn registry() -> &'static [(&'static str, Builder)] {
    &[
        ("hadamard", build_hadamard),
        ("identity", build_identity),
        ("random", build_random),
    ]
}

/// Build a registered fixed strategy by name.
pub fn build_method(name: &str, n: usize, seed: u64) -> Result<Box<dyn Transform>> {
    for (key, builder) in registry() {
        if *key == name {
            return builder(n, seed);
        }
    }
    let names: Vec<&str> = registry().iter().map(|(k, _)| *k).collect();
    Err(Error::Config(format!(
        "unknown method {name:?}; valid methods: {}",
        names.join(", ")
    )))
}
