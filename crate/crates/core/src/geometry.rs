//! Log-Euclidean geometry on the cone of symmetric positive-definite matrices.
//!
//! Under the Log-Euclidean metric, `P_N` is flat: the matrix logarithm maps it
//! isometrically onto `Sym(N)`, and [`ve`] maps `Sym(N)` isometrically onto
//! `R^q` with `q = N(N+1)/2`. Distances, means and the group operation
//! `X ⊙ Y = exp(log X + log Y)` all reduce to Euclidean operations on
//! `ve(log X)`.
//!
//! The `ve` ordering is fixed: diagonal entries in index order, then the
//! strictly upper entries `(i, j)`, `i < j`, in row-major order, each scaled by
//! `√2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor for SPD validation.
pub const SPD_EPS: f64 = 1e-12;

/// Largest eigenvalue accepted by [`sym_exp`].
pub const EXP_CAP: f64 = 700.0;

/// Dimension `q = N(N+1)/2` of `Sym(N)`.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`sym_dim`]; `None` when `q` is not triangular.
pub fn matrix_dim(q: usize) -> Option<usize> {
    let n = ((((8 * q + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (sym_dim(n) == q).then_some(n)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// A real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        Ok(SymMatrix(symmetrize(&m)))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        SymmetricEigen::new(self.0.clone())
    }
}

/// A symmetric positive-definite matrix, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Symmetrizes and validates `m`. Rejects matrices whose smallest
    /// eigenvalue is below `SPD_EPS * max(1, largest eigenvalue)`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let s = symmetrize(&m);
        let eig = SymmetricEigen::new(s.clone()).eigenvalues;
        let min = eig.min();
        let max = eig.max();
        let tol = SPD_EPS * max.max(1.0);
        if !(min >= tol) {
            return Err(Error::NotSpd { min_eig: min, tol });
        }
        Ok(SpdMatrix(s))
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Wraps a matrix already known to be SPD (e.g. built from positive
    /// eigenvalues). Only symmetrizes.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        SpdMatrix(symmetrize(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Matrix inverse via eigendecomposition.
    pub fn inverse(&self) -> SpdMatrix {
        let e = SymmetricEigen::new(self.0.clone());
        let inv = e.eigenvalues.map(|l| 1.0 / l);
        SpdMatrix::from_trusted(recompose(&e.eigenvectors, &inv))
    }
}

/// `ve(Y)`: the isometric coordinates of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VecRep {
    n: usize,
    values: DVector<f64>,
}

impl VecRep {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        let n = matrix_dim(values.len()).ok_or(Error::BadLength(values.len()))?;
        Ok(VecRep { n, values })
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        VecRep::new(DVector::from_column_slice(v))
    }

    /// Matrix dimension `N`.
    pub fn matrix_dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }
}

fn recompose(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (mut col, &v) in scaled.column_iter_mut().zip(values.iter()) {
        col *= v;
    }
    symmetrize(&(scaled * vectors.transpose()))
}

/// Principal matrix logarithm of an SPD matrix.
pub fn sym_log(x: &SpdMatrix) -> SymMatrix {
    let e = SymmetricEigen::new(x.0.clone());
    let logs = e.eigenvalues.map(f64::ln);
    SymMatrix(recompose(&e.eigenvectors, &logs))
}

/// Matrix exponential of a symmetric matrix.
pub fn sym_exp(y: &SymMatrix) -> Result<SpdMatrix> {
    let e = y.eigen();
    if let Some(&big) = e.eigenvalues.iter().find(|&&l| l > EXP_CAP || l.is_nan()) {
        return Err(Error::Overflow(big));
    }
    let exps = e.eigenvalues.map(f64::exp);
    let min = exps.min();
    if !(min > 0.0) {
        return Err(Error::NotSpd {
            min_eig: min,
            tol: 0.0,
        });
    }
    Ok(SpdMatrix::from_trusted(recompose(&e.eigenvectors, &exps)))
}

pub fn ve(y: &SymMatrix) -> VecRep {
    let n = y.dim();
    let m = &y.0;
    let mut v = Vec::with_capacity(sym_dim(n));
    v.extend((0..n).map(|i| m[(i, i)]));
    for i in 0..n {
        for j in (i + 1)..n {
            v.push(std::f64::consts::SQRT_2 * m[(i, j)]);
        }
    }
    VecRep {
        n,
        values: DVector::from_vec(v),
    }
}

pub fn ve_inv(v: &VecRep) -> SymMatrix {
    let n = v.n;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = v.values[i];
    }
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            let x = v.values[k] / std::f64::consts::SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    SymMatrix(m)
}

/// `ve_inv` on a raw slice; fails with `BadLength` for non-triangular lengths.
pub fn ve_inv_slice(v: &[f64]) -> Result<SymMatrix> {
    Ok(ve_inv(&VecRep::from_slice(v)?))
}

/// `X̃ = ve(log X)`.
pub fn log_vec(x: &SpdMatrix) -> DVector<f64> {
    ve(&sym_log(x)).values
}

/// Inverse of [`log_vec`]: `exp(ve_inv(v))`.
pub fn exp_vec(v: &DVector<f64>) -> Result<SpdMatrix> {
    sym_exp(&ve_inv(&VecRep::new(v.clone())?))
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Log-Euclidean distance `‖log X − log Y‖_F`.
pub fn dist_le(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    Ok((sym_log(x).0 - sym_log(y).0).norm())
}

/// Sample Fréchet mean under the Log-Euclidean metric, `exp(mean log Xᵢ)`.
pub fn frechet_mean_le(xs: &[SpdMatrix]) -> Result<SpdMatrix> {
    let first = xs.first().ok_or(Error::EmptyInput)?;
    let n = first.dim();
    let mut acc = DMatrix::zeros(n, n);
    for x in xs {
        check_same_dim(n, x.dim())?;
        acc += sym_log(x).0;
    }
    acc /= xs.len() as f64;
    sym_exp(&SymMatrix(acc))
}

/// Group operation `C ⊙ X = exp(log C + log X)`.
pub fn le_compose(c: &SpdMatrix, x: &SpdMatrix) -> Result<SpdMatrix> {
    check_same_dim(c.dim(), x.dim())?;
    sym_exp(&SymMatrix(sym_log(c).0 + sym_log(x).0))
}
