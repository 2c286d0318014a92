//! Minimal dense linear algebra used by every other module.
//!
//! All arithmetic is in `f64` with reductions in fixed index order, so results
//! are reproducible bit-for-bit across runs and platforms. Randomness comes
//! from ChaCha8 seeded with an explicit `u64`; the generator is part of the
//! file-format contract because regenerated examples must match everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Pivot magnitudes below this are treated as singular in [`lu_solve`].
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// Row-major dense matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    /// Build from row-major entries, validating length and finiteness.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry at flat index {pos}"
            )));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.cols + j] = v;
    }

    /// Row `i` as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.entries[j * self.rows + i] = self.entries[i * self.cols + j];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// max_ij |self - other|, for tolerance checks.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// max_ij |selfᵀ·self - I|; the orthogonality residual.
    pub fn orthogonality_residual(&self) -> f64 {
        let gram = mat_mul(&self.transpose(), self).expect("square product");
        gram.max_abs_diff(&Self::identity(self.cols))
    }
}

/// Dense vector of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    entries: Vec<f64>,
}

impl DenseVector {
    /// Build from entries, validating finiteness.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("vector"));
        }
        if let Some(pos) = entries.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {pos}")));
        }
        Ok(Self { entries })
    }

    /// Standard basis vector e_j of dimension n.
    pub fn basis(n: usize, j: usize) -> Self {
        let mut v = vec![0.0; n];
        v[j] = 1.0;
        Self { entries: v }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }

    pub fn norm2(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// y = A·x with the inner reduction in fixed ascending-j order.
pub fn mat_vec(a: &DenseMatrix, x: &DenseVector) -> Result<DenseVector> {
    if a.cols != x.dim() {
        return Err(Error::Shape(format!(
            "mat_vec: {}x{} matrix times dim-{} vector",
            a.rows,
            a.cols,
            x.dim()
        )));
    }
    let xs = x.as_slice();
    let mut y = Vec::with_capacity(a.rows);
    for i in 0..a.rows {
        let row = a.row(i);
        let mut acc = 0.0;
        for j in 0..a.cols {
            acc += row[j] * xs[j];
        }
        y.push(acc);
    }
    DenseVector::new(y)
}

/// y = Aᵀ·x, without forming the transpose.
pub fn transpose_mat_vec(a: &DenseMatrix, x: &DenseVector) -> Result<DenseVector> {
    if a.rows != x.dim() {
        return Err(Error::Shape(format!(
            "transpose_mat_vec: {}x{} matrix transpose times dim-{} vector",
            a.rows,
            a.cols,
            x.dim()
        )));
    }
    let xs = x.as_slice();
    let mut y = vec![0.0; a.cols];
    for i in 0..a.rows {
        let row = a.row(i);
        let xi = xs[i];
        for j in 0..a.cols {
            y[j] += row[j] * xi;
        }
    }
    DenseVector::new(y)
}

/// C = A·B (ikj loop order, fixed reduction order per output row).
pub fn mat_mul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "mat_mul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.entries[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let crow = &mut c.entries[i * b.cols..(i + 1) * b.cols];
            for j in 0..b.cols {
                crow[j] += aik * brow[j];
            }
        }
    }
    for e in &c.entries {
        if !e.is_finite() {
            return Err(Error::NonFinite("mat_mul output".into()));
        }
    }
    Ok(c)
}

/// Solve A·X = B via LU with partial pivoting.
pub fn lu_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != a.cols {
        return Err(Error::Shape(format!("lu_solve: A is {}x{}, not square", a.rows, a.cols)));
    }
    if b.rows != a.rows {
        return Err(Error::Shape(format!(
            "lu_solve: B has {} rows, expected {}",
            b.rows, a.rows
        )));
    }
    let n = a.rows;
    let mut lu = a.entries.clone();
    let mut x = b.clone();

    for k in 0..n {
        // Partial pivot: largest magnitude in column k at or below the diagonal.
        let mut pivot_row = k;
        let mut pivot_mag = lu[k * n + k].abs();
        for i in (k + 1)..n {
            let mag = lu[i * n + k].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = i;
            }
        }
        if pivot_mag < SINGULAR_PIVOT {
            return Err(Error::Singular { pivot: pivot_mag });
        }
        if pivot_row != k {
            for j in 0..n {
                lu.swap(k * n + j, pivot_row * n + j);
            }
            for j in 0..x.cols {
                let t = x.get(k, j);
                x.set(k, j, x.get(pivot_row, j));
                x.set(pivot_row, j, t);
            }
        }
        let pivot = lu[k * n + k];
        for i in (k + 1)..n {
            let factor = lu[i * n + k] / pivot;
            lu[i * n + k] = factor;
            for j in (k + 1)..n {
                lu[i * n + j] -= factor * lu[k * n + j];
            }
            for j in 0..x.cols {
                let v = x.get(i, j) - factor * x.get(k, j);
                x.set(i, j, v);
            }
        }
    }

    // Back substitution on the upper triangle.
    for j in 0..x.cols {
        for i in (0..n).rev() {
            let mut acc = x.get(i, j);
            for k in (i + 1)..n {
                acc -= lu[i * n + k] * x.get(k, j);
            }
            x.set(i, j, acc / lu[i * n + i]);
        }
    }
    for e in &x.entries {
        if !e.is_finite() {
            return Err(Error::NonFinite("lu_solve output".into()));
        }
    }
    Ok(x)
}

/// Orthonormal Hadamard matrix H_n from the recursion
/// H_{2n} = (1/√2)·[[H_n, H_n], [H_n, -H_n]].
///
/// The ±1 sign pattern is built by doubling and the 1/√n normalization is
/// applied once, so every entry is ±(1/√n) to the last bit.
pub fn hadamard_direct(n: usize) -> Result<DenseMatrix> {
    if !n.is_power_of_two() {
        return Err(Error::Dimension(n));
    }
    let mut signs = vec![1.0f64];
    let mut size = 1;
    while size < n {
        let next = size * 2;
        let mut g = vec![0.0; next * next];
        for i in 0..size {
            for j in 0..size {
                let v = signs[i * size + j];
                g[i * next + j] = v;
                g[i * next + j + size] = v;
                g[(i + size) * next + j] = v;
                g[(i + size) * next + j + size] = -v;
            }
        }
        signs = g;
        size = next;
    }
    let scale = 1.0 / (n as f64).sqrt();
    for e in signs.iter_mut() {
        *e *= scale;
    }
    DenseMatrix::new(n, n, signs)
}

/// In-place orthonormal Walsh-Hadamard transform (stride-doubling recursion).
///
/// Matches the column order of [`hadamard_direct`]; O(n log n).
pub fn hadamard_apply(x: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
    let mut stride = 1;
    while stride < n {
        let mut base = 0;
        while base < n {
            for j in base..base + stride {
                let a = x[j];
                let b = x[j + stride];
                x[j] = (a + b) * inv_sqrt2;
                x[j + stride] = (a - b) * inv_sqrt2;
            }
            base += stride * 2;
        }
        stride *= 2;
    }
}

/// Deterministic Haar-distributed orthogonal matrix.
///
/// QR-decomposes an n×n matrix of standard Gaussians (ChaCha8 stream for the
/// given seed, row-major draw order) and flips Q's columns so R's diagonal is
/// positive, which makes the output Haar-distributed.
pub fn haar_orthogonal(n: usize, seed: u64) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(Error::Shape("haar_orthogonal: n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = vec![0.0f64; n * n];
    for e in m.iter_mut() {
        *e = StandardNormal.sample(&mut rng);
    }

    // Householder QR, accumulating Q explicitly.
    let mut q = DenseMatrix::identity(n);
    let mut r = m;
    let mut v = vec![0.0f64; n];
    for k in 0..n {
        let mut norm = 0.0;
        for i in k..n {
            let e = r[i * n + k];
            norm += e * e;
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let head = r[k * n + k];
        let alpha = if head >= 0.0 { -norm } else { norm };
        let mut vnorm = 0.0;
        for i in k..n {
            let e = if i == k { r[i * n + k] - alpha } else { r[i * n + k] };
            v[i] = e;
            vnorm += e * e;
        }
        let vnorm = vnorm.sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for e in v[k..n].iter_mut() {
            *e /= vnorm;
        }
        // Apply H = I - 2vvᵀ on the left of R ...
        for j in k..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * r[i * n + j];
            }
            for i in k..n {
                r[i * n + j] -= 2.0 * v[i] * dot;
            }
        }
        // ... and on the right of Q (Q accumulates H_0·H_1·...).
        for i in 0..n {
            let mut dot = 0.0;
            for j in k..n {
                dot += q.entries[i * n + j] * v[j];
            }
            for j in k..n {
                q.entries[i * n + j] -= 2.0 * dot * v[j];
            }
        }
    }

    // Sign-correct: positive R diagonal.
    for j in 0..n {
        if r[j * n + j] < 0.0 {
            for i in 0..n {
                q.entries[i * n + j] = -q.entries[i * n + j];
            }
        }
    }
    Ok(q)
}

/// Materialize an implicit vector transform as a dense matrix: column j of
/// the result is `apply(e_j)`.
pub fn materialize<F>(apply: F, n: usize) -> Result<DenseMatrix>
where
    F: Fn(&DenseVector) -> Result<DenseVector>,
{
    let mut m = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = apply(&DenseVector::basis(n, j))?;
        if col.dim() != n {
            return Err(Error::Shape(format!(
                "materialize: apply returned dim {} for dim-{} input",
                col.dim(),
                n
            )));
        }
        for i in 0..n {
            m.set(i, j, col.as_slice()[i]);
        }
    }
    Ok(m)
}

/// Standard-normal draws in a fixed order, shared by the synthetic-data
/// generator and random initializers.
pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, entries: &[f64]) -> DenseMatrix {
        DenseMatrix::new(rows, cols, entries.to_vec()).unwrap()
    }

    fn vect(entries: &[f64]) -> DenseVector {
        DenseVector::new(entries.to_vec()).unwrap()
    }

    #[test]
    fn mat_vec_identity() {
        let y = mat_vec(&DenseMatrix::identity(3), &vect(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn mat_vec_permutation_is_exact() {
        let p = mat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let y = mat_vec(&p, &vect(&[5.0, 7.0])).unwrap();
        assert_eq!(y.as_slice(), &[7.0, 5.0]);
    }

    #[test]
    fn mat_vec_h4_first_column() {
        let h4 = hadamard_direct(4).unwrap();
        let y = mat_vec(&h4, &DenseVector::basis(4, 0)).unwrap();
        for &e in y.as_slice() {
            assert!((e - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn mat_vec_shape_error() {
        let err = mat_vec(&DenseMatrix::identity(3), &vect(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn lu_solve_identity_and_diagonal() {
        let b = mat(2, 1, &[3.0, 4.0]);
        let x = lu_solve(&DenseMatrix::identity(2), &b).unwrap();
        assert_eq!(x.entries(), &[3.0, 4.0]);

        let a = mat(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let x = lu_solve(&a, &DenseMatrix::identity(2)).unwrap();
        assert_eq!(x.entries(), &[0.5, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn lu_solve_cayley_image() {
        // (I - A)(I + A)⁻¹ for A = [[0,1],[-1,0]] is the quarter-turn rotation.
        let i_plus_a = mat(2, 2, &[1.0, 1.0, -1.0, 1.0]);
        let i_minus_a = mat(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        // Solve (I+A)·Y = I, then multiply by (I-A) on the left.
        let y = lu_solve(&i_plus_a, &DenseMatrix::identity(2)).unwrap();
        let q = mat_mul(&i_minus_a, &y).unwrap();
        let expected = mat(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(q.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn lu_solve_singular() {
        let a = mat(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = lu_solve(&a, &DenseMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn lu_solve_recovers_solution_on_well_conditioned_systems() {
        // A = Q·diag(1..2)·Qᵀ is orthogonal-similar to a benign diagonal,
        // so cond(A) ≤ 2.
        for seed in 0..5u64 {
            let n = 24;
            let q = haar_orthogonal(n, seed).unwrap();
            let mut d = DenseMatrix::zeros(n, n);
            for i in 0..n {
                d.set(i, i, 1.0 + i as f64 / n as f64);
            }
            let a = mat_mul(&mat_mul(&q, &d).unwrap(), &q.transpose()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x0 = DenseMatrix::new(n, 2, normal_vec(&mut rng, n * 2)).unwrap();
            let b = mat_mul(&a, &x0).unwrap();
            let x = lu_solve(&a, &b).unwrap();
            let rel = x.max_abs_diff(&x0) / x0.frobenius_norm();
            assert!(rel < 1e-8, "relative error {rel}");
        }
    }

    #[test]
    fn hadamard_direct_base_cases() {
        let h1 = hadamard_direct(1).unwrap();
        assert_eq!(h1.entries(), &[1.0]);

        let h2 = hadamard_direct(2).unwrap();
        let s = 1.0 / std::f64::consts::SQRT_2;
        let expected = mat(2, 2, &[s, s, s, -s]);
        assert!(h2.max_abs_diff(&expected) < 1e-15);

        let h4 = hadamard_direct(4).unwrap();
        #[rustfmt::skip]
        let expected = mat(4, 4, &[
            0.5,  0.5,  0.5,  0.5,
            0.5, -0.5,  0.5, -0.5,
            0.5,  0.5, -0.5, -0.5,
            0.5, -0.5, -0.5,  0.5,
        ]);
        assert!(h4.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn hadamard_direct_rejects_non_power_of_two() {
        assert!(matches!(hadamard_direct(3), Err(Error::Dimension(3))));
        assert!(matches!(hadamard_direct(0), Err(Error::Dimension(0))));
    }

    #[test]
    fn hadamard_is_orthogonal() {
        for n in [2usize, 8, 64, 256] {
            let h = hadamard_direct(n).unwrap();
            assert!(h.orthogonality_residual() <= 1e-10, "n={n}");
        }
    }

    #[test]
    fn hadamard_apply_matches_direct() {
        let n = 8;
        let h = hadamard_direct(n).unwrap();
        let m = materialize(
            |x| {
                let mut v = x.as_slice().to_vec();
                hadamard_apply(&mut v);
                DenseVector::new(v)
            },
            n,
        )
        .unwrap();
        assert!(m.max_abs_diff(&h) <= 1e-12);
    }

    #[test]
    fn haar_orthogonal_n1() {
        let q = haar_orthogonal(1, 3).unwrap();
        assert!((q.get(0, 0).abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn haar_orthogonal_deterministic() {
        let a = haar_orthogonal(16, 42).unwrap();
        let b = haar_orthogonal(16, 42).unwrap();
        assert_eq!(a.entries(), b.entries());
        let c = haar_orthogonal(16, 43).unwrap();
        assert_ne!(a.entries(), c.entries());
    }

    #[test]
    fn haar_orthogonal_is_orthogonal() {
        let q = haar_orthogonal(64, 7).unwrap();
        assert!(q.orthogonality_residual() <= 1e-10);
    }

    #[test]
    fn materialize_identity_and_negation() {
        let id = materialize(|x| Ok(x.clone()), 3).unwrap();
        assert!(id.max_abs_diff(&DenseMatrix::identity(3)) == 0.0);

        let neg = materialize(
            |x| DenseVector::new(x.as_slice().iter().map(|e| -e).collect()),
            2,
        )
        .unwrap();
        let expected = mat(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        assert!(neg.max_abs_diff(&expected) == 0.0);
    }

    #[test]
    fn materialize_rejects_dim_change() {
        let err = materialize(|_| DenseVector::new(vec![1.0, 2.0]), 3).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            DenseVector::new(vec![f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }
}
