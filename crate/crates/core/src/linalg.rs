//! Dense symmetric linear algebra.
//!
//! Small matrices (the d×d covariance-sized objects and the blocks produced by
//! quantifier elimination) are diagonalized with cyclic Jacobi rotations.
//! Moment matrices, which reach a few hundred rows, go through a Householder
//! based solver instead; both paths produce the same sorted, sign-normalized
//! [`EigDecomp`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue accepted when inverting (or inverse square-rooting) a matrix.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-12;

/// Matrices up to this dimension use the Jacobi path.
const JACOBI_MAX_DIM: usize = 48;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Symmetric matrix with full row-major storage. `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct SymMat {
    dim: usize,
    data: Vec<f64>,
}

impl From<SymMat> for Vec<Vec<f64>> {
    fn from(m: SymMat) -> Self {
        m.rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMat {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMat::from_rows(&rows)
    }
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMat dimension must be positive");
        SymMat {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = v;
        }
        m
    }

    /// Builds a matrix from its upper triangle: `f(i, j)` is called for `i <= j` only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from explicit rows; the rows must be exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("matrix rows must be square".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMat {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Symmetrizes an arbitrary square row-major buffer by averaging with its transpose.
    pub fn from_square_averaged(dim: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), dim * dim);
        Self::from_fn(dim, |i, j| 0.5 * (data[i * dim + j] + data[j * dim + i]))
    }

    /// Outer product `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Writes both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &SymMat) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &SymMat, f: impl Fn(f64, f64) -> f64) -> SymMat {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        SymMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.mat_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Frobenius inner product `⟨A, B⟩ = tr(AB)`.
    pub fn inner(&self, other: &SymMat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `C A Cᵀ` for a general square `C`.
    pub fn congruence(&self, c: &Matrix) -> SymMat {
        assert_eq!(c.cols, self.dim);
        let ca = c.mul_sym(self);
        let out = c.rows;
        let mut data = vec![0.0; out * out];
        for i in 0..out {
            for j in 0..out {
                data[i * out + j] = (0..self.dim).map(|k| ca.get(i, k) * c.get(j, k)).sum();
            }
        }
        SymMat::from_square_averaged(out, &data)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(*sym_eig(self)?.values.last().expect("non-empty"))
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(sym_eig(self)?.values[0])
    }

    /// Spectral norm `max |λ|`.
    pub fn spectral_norm(&self) -> Result<f64> {
        let e = sym_eig(self)?;
        Ok(e.values.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
    }
}

/// General dense row-major matrix; used for congruences and eigenvector bases.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        Matrix::from_fn(self.rows, other.cols, |i, j| {
            (0..self.cols).map(|k| self.get(i, k) * other.get(k, j)).sum()
        })
    }

    fn mul_sym(&self, s: &SymMat) -> Matrix {
        assert_eq!(self.cols, s.dim());
        Matrix::from_fn(self.rows, s.dim(), |i, j| {
            (0..self.cols).map(|k| self.get(i, k) * s.get(k, j)).sum()
        })
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Eigendecomposition `A = Q Λ Qᵀ` with eigenvalues sorted in descending order.
///
/// Each eigenvector column is sign-normalized so its first non-negligible
/// component is positive.
#[derive(Clone, Debug)]
pub struct EigDecomp {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigDecomp {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Rebuilds `Q f(Λ) Qᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMat {
        let n = self.dim();
        let scaled: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        let q = &self.vectors;
        SymMat::from_fn(n, |i, j| {
            (0..n).map(|k| q.get(i, k) * scaled[k] * q.get(j, k)).sum()
        })
    }

    pub fn reconstruct(&self) -> SymMat {
        self.reconstruct_with(|v| v)
    }
}

/// Symmetric eigendecomposition.
pub fn sym_eig(a: &SymMat) -> Result<EigDecomp> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = a.dim();
    let (values, vectors) = if n <= JACOBI_MAX_DIM {
        jacobi_eig(a.as_slice(), n)
    } else {
        householder_eig(a.as_slice(), n)?
    };
    Ok(sorted_normalized(values, vectors, n))
}

/// Jacobi eigendecomposition regardless of size; exposed so the two paths can be cross-checked.
pub fn sym_eig_jacobi(a: &SymMat) -> Result<EigDecomp> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = a.dim();
    let (values, vectors) = jacobi_eig(a.as_slice(), n);
    Ok(sorted_normalized(values, vectors, n))
}

fn sorted_normalized(values: Vec<f64>, vectors: Vec<f64>, n: usize) -> EigDecomp {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let scale = vectors.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut q = Matrix::zeros(n, n);
    let mut sorted = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        sorted.push(values[src]);
        let first = (0..n)
            .map(|r| vectors[r * n + src])
            .find(|v| v.abs() > 1e-12 * scale)
            .unwrap_or(1.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            q.data[r * n + col] = sign * vectors[r * n + src];
        }
    }
    EigDecomp {
        values: sorted,
        vectors: q,
    }
}

/// Cyclic Jacobi rotations on a row-major copy. Returns unsorted eigenvalues and
/// the row-major eigenvector matrix (eigenvectors in columns).
fn jacobi_eig(src: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = src.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off <= 1e-32 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

fn householder_eig(src: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| src[i * n + j]);
    let evd = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let values = (0..n).map(|i| s[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vectors[i * n + j] = u[(i, j)];
        }
    }
    Ok((values, vectors))
}

/// Frobenius-nearest PSD matrix: negative eigenvalues are clipped to zero.
pub fn psd_project(a: &SymMat) -> Result<SymMat> {
    let e = sym_eig(a)?;
    Ok(e.reconstruct_with(|v| v.max(0.0)))
}

/// In-place PSD projection of a row-major symmetric buffer. Returns the
/// smallest eigenvalue before projection.
///
/// Only the smaller of the positive and negative spectral parts is rebuilt,
/// so a nearly-PSD input costs one eigendecomposition plus a thin update.
pub fn psd_project_in_place(data: &mut [f64], n: usize) -> Result<f64> {
    debug_assert_eq!(data.len(), n * n);
    if n <= JACOBI_MAX_DIM {
        let (values, vectors) = jacobi_eig(data, n);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            for i in 0..n {
                for j in i..n {
                    let v: f64 = (0..n)
                        .filter(|&k| values[k] > 0.0)
                        .map(|k| vectors[i * n + k] * values[k] * vectors[j * n + k])
                        .sum();
                    data[i * n + j] = v;
                    data[j * n + i] = v;
                }
            }
        }
        return Ok(min);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| data[i * n + j]);
    let evd = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    // ascending order
    let min = s[0];
    if min >= 0.0 {
        return Ok(min);
    }
    let negatives = (0..n).take_while(|&k| s[k] < 0.0).count();
    if negatives <= n / 2 {
        let w = faer::Mat::<f64>::from_fn(n, negatives, |i, k| u[(i, k)] * (-s[k]).sqrt());
        let update = &w * w.transpose();
        for i in 0..n {
            for j in i..n {
                let v = 0.5 * (data[i * n + j] + data[j * n + i]) + update[(i, j)];
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
    } else {
        let positives = n - negatives;
        let w = faer::Mat::<f64>::from_fn(n, positives, |i, k| {
            u[(i, negatives + k)] * s[negatives + k].sqrt()
        });
        let rebuilt = &w * w.transpose();
        for i in 0..n {
            for j in i..n {
                let v = rebuilt[(i, j)];
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
    }
    Ok(min)
}

/// Supported matrix powers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatPower {
    Half,
    NegHalf,
    NegOne,
}

impl MatPower {
    fn exponent(self) -> f64 {
        match self {
            MatPower::Half => 0.5,
            MatPower::NegHalf => -0.5,
            MatPower::NegOne => -1.0,
        }
    }
}

/// `Q Λ^p Qᵀ` for PSD `A`. Negative powers require the smallest eigenvalue to
/// be at least `floor`.
pub fn mat_pow(a: &SymMat, power: MatPower, floor: f64) -> Result<SymMat> {
    let e = sym_eig(a)?;
    let min = *e.values.last().expect("non-empty");
    let slack = 1e-10 * (1.0 + a.frobenius_norm());
    match power {
        MatPower::Half => {
            if min < -slack {
                return Err(Error::InvalidInput(format!(
                    "square root of a matrix with eigenvalue {min:e}"
                )));
            }
            Ok(e.reconstruct_with(|v| v.max(0.0).sqrt()))
        }
        MatPower::NegHalf | MatPower::NegOne => {
            if min < floor {
                return Err(Error::SingularMatrix {
                    min_eigenvalue: min,
                    floor,
                });
            }
            let p = power.exponent();
            Ok(e.reconstruct_with(|v| v.powf(p)))
        }
    }
}

/// Mahalanobis length `‖Σ^{-1/2} v‖₂`.
pub fn mahalanobis(v: &[f64], sigma: &SymMat, floor: f64) -> Result<f64> {
    if v.len() != sigma.dim() {
        return Err(Error::InvalidInput("vector/matrix dimension mismatch".into()));
    }
    let e = sym_eig(sigma)?;
    let min = *e.values.last().expect("non-empty");
    if min < floor {
        return Err(Error::SingularMatrix {
            min_eigenvalue: min,
            floor,
        });
    }
    let total: f64 = (0..v.len())
        .map(|k| {
            let proj: f64 = (0..v.len()).map(|i| e.vectors.get(i, k) * v[i]).sum();
            proj * proj / e.values[k]
        })
        .sum();
    Ok(total.sqrt())
}

/// `B^{-1/2} A B^{-1/2}`.
pub fn whiten(a: &SymMat, b: &SymMat, floor: f64) -> Result<SymMat> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    let b_inv_half = mat_pow(b, MatPower::NegHalf, floor)?;
    Ok(a.congruence(&b_inv_half.to_matrix()))
}

/// Relative Frobenius error `‖B^{-1/2} A B^{-1/2} − I‖_F`.
pub fn rel_frobenius(a: &SymMat, b: &SymMat, floor: f64) -> Result<f64> {
    let w = whiten(a, b, floor)?;
    Ok(w.sub(&SymMat::identity(a.dim())).frobenius_norm())
}

/// Relative spectral error `‖B^{-1/2} A B^{-1/2} − I‖₂`.
pub fn rel_spectral(a: &SymMat, b: &SymMat, floor: f64) -> Result<f64> {
    let w = whiten(a, b, floor)?;
    w.sub(&SymMat::identity(a.dim())).spectral_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_sym(n: usize, seed: u64) -> SymMat {
        // small LCG keeps the unit tests independent of the sampling module
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        SymMat::from_fn(n, |_, _| next())
    }

    fn random_psd(n: usize, seed: u64) -> SymMat {
        let g = random_sym(n, seed).to_matrix();
        SymMat::identity(n).scale(0.1).congruence(&g).add(&SymMat::identity(n).scale(0.05))
    }

    fn check_decomp(a: &SymMat, e: &EigDecomp) {
        let n = a.dim();
        let err = e.reconstruct().sub(a).frobenius_norm();
        assert!(err <= 1e-10 * (1.0 + a.frobenius_norm()), "reconstruction {err}");
        let qtq = e.vectors.transpose().mul(&e.vectors);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq.get(i, j) - want).abs() < 1e-10);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = sym_eig(&SymMat::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        let e = sym_eig(&SymMat::from_diag(&[3.0, -1.0])).unwrap();
        assert_eq!(e.values, vec![3.0, -1.0]);
    }

    #[test]
    fn eig_two_by_two_matches_characteristic_polynomial() {
        // λ² − 4λ + 3 = 0 → λ ∈ {3, 1}
        let a = SymMat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors.get(0, 0) - s).abs() < 1e-12);
        assert!((e.vectors.get(1, 0) - s).abs() < 1e-12);
        check_decomp(&a, &e);
    }

    #[test]
    fn eig_rejects_non_finite() {
        let mut a = SymMat::identity(2);
        a.set(0, 1, f64::NAN);
        assert!(matches!(sym_eig(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        assert!(SymMat::from_rows(&[vec![1.0, 2.0], vec![2.5, 1.0]]).is_err());
    }

    #[test]
    fn jacobi_and_householder_agree() {
        let a = random_sym(90, 3);
        let h = sym_eig(&a).unwrap();
        let j = sym_eig_jacobi(&a).unwrap();
        check_decomp(&a, &h);
        check_decomp(&a, &j);
        for (x, y) in h.values.iter().zip(&j.values) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn psd_projection_examples() {
        let p = psd_project(&SymMat::from_diag(&[1.0, -2.0])).unwrap();
        assert!(p.max_abs_diff(&SymMat::from_diag(&[1.0, 0.0])) < 1e-14);
        let swap = SymMat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = psd_project(&swap).unwrap();
        let want = SymMat::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(p.max_abs_diff(&want) < 1e-14);
        let a = random_psd(5, 11);
        assert!(psd_project(&a).unwrap().max_abs_diff(&a) < 1e-10);
    }

    #[test]
    fn in_place_projection_matches_reference() {
        for (n, seed) in [(6, 1), (60, 2), (120, 5)] {
            let a = random_sym(n, seed);
            let reference = psd_project(&a).unwrap();
            let mut buf = a.as_slice().to_vec();
            let min = psd_project_in_place(&mut buf, n).unwrap();
            assert!(min < 0.0);
            let got = SymMat::from_rows(&buf.chunks(n).map(|r| r.to_vec()).collect::<Vec<_>>())
                .unwrap();
            assert!(got.max_abs_diff(&reference) < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn powers_of_simple_matrices() {
        let i = SymMat::identity(3);
        assert!(mat_pow(&i, MatPower::NegHalf, DEFAULT_EIGEN_FLOOR)
            .unwrap()
            .max_abs_diff(&i)
            < 1e-14);
        let d = mat_pow(&SymMat::from_diag(&[4.0, 9.0]), MatPower::Half, DEFAULT_EIGEN_FLOOR).unwrap();
        assert!(d.max_abs_diff(&SymMat::from_diag(&[2.0, 3.0])) < 1e-14);
        let d = mat_pow(&SymMat::from_diag(&[4.0]), MatPower::NegOne, DEFAULT_EIGEN_FLOOR).unwrap();
        assert!((d.get(0, 0) - 0.25).abs() < 1e-15);
        let err = mat_pow(&SymMat::from_diag(&[1.0, 0.0]), MatPower::NegHalf, DEFAULT_EIGEN_FLOOR);
        assert!(matches!(err, Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn mahalanobis_examples() {
        let v = [3.0, -4.0];
        let m = mahalanobis(&v, &SymMat::identity(2), DEFAULT_EIGEN_FLOOR).unwrap();
        assert!((m - 5.0).abs() < 1e-14);
        let m = mahalanobis(&[2.0, 0.0], &SymMat::from_diag(&[4.0, 1.0]), DEFAULT_EIGEN_FLOOR).unwrap();
        assert!((m - 1.0).abs() < 1e-14);
        // [[2,1],[1,2]]^{-1} = (1/3)[[2,-1],[-1,2]]; (1,1) lies on the λ=3 eigenvector,
        // so vᵀΣ⁻¹v = 2/3.
        let s = SymMat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let m = mahalanobis(&[1.0, 1.0], &s, DEFAULT_EIGEN_FLOOR).unwrap();
        assert!((m - (2.0f64 / 3.0).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn relative_frobenius_examples() {
        let b = random_psd(3, 4);
        assert!(rel_frobenius(&b, &b, DEFAULT_EIGEN_FLOOR).unwrap() < 1e-10);
        let t = 0.3;
        let d = 4;
        let a = SymMat::identity(d).scale(1.0 + t);
        let r = rel_frobenius(&a, &SymMat::identity(d), DEFAULT_EIGEN_FLOOR).unwrap();
        assert!((r - t * (d as f64).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_is_idempotent_and_psd(seed in 0u64..10_000, n in 1usize..8) {
            let a = random_sym(n, seed);
            let p = psd_project(&a).unwrap();
            prop_assert!(p.min_eigenvalue().unwrap() >= -1e-10);
            let pp = psd_project(&p).unwrap();
            prop_assert!(pp.max_abs_diff(&p) < 1e-10);
        }

        #[test]
        fn square_root_squares_back(seed in 0u64..10_000, n in 1usize..7) {
            let a = random_psd(n, seed);
            let r = mat_pow(&a, MatPower::Half, DEFAULT_EIGEN_FLOOR).unwrap().to_matrix();
            let back = r.mul(&r);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((back.get(i, j) - a.get(i, j)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn relative_frobenius_is_congruence_invariant(seed in 0u64..10_000) {
            let a = random_psd(3, seed);
            let b = random_psd(3, seed + 7919);
            let c = random_sym(3, seed + 104729).to_matrix();
            let c = Matrix::from_fn(3, 3, |i, j| c.get(i, j) + if i == j { 2.0 } else { 0.0 });
            let before = rel_frobenius(&a, &b, DEFAULT_EIGEN_FLOOR).unwrap();
            let after = rel_frobenius(&a.congruence(&c), &b.congruence(&c), DEFAULT_EIGEN_FLOOR).unwrap();
            prop_assert!((before - after).abs() < 1e-8 * (1.0 + before));
        }
    }
}
