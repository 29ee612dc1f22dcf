//! Dense complex matrices and the Hermitian machinery built on top of them.
//!
//! Everything here is a value type: constructors validate, operations return
//! new values. Matrices are stored by `nalgebra` (column-major), but every
//! serialized form and every composite index follows row-major, A-major
//! conventions: the entry `(i_A, i_B)` of a Kronecker product sits at row
//! `i_A * d_B + i_B`.

use std::ops::Mul;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest row or column count a tensor product may produce by default.
pub const DEFAULT_MAX_COMPOSITE_DIM: usize = 256;

/// Allowed anti-Hermitian defect before a matrix is rejected as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Residual bound for eigenvector orthonormality and reconstruction.
pub const EIGEN_TOL: f64 = 1e-10;

/// Trace and positivity slack for density matrices.
pub const DENSITY_TOL: f64 = 1e-10;

/// A finite, non-empty complex matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<[f64; 2]>>", into = "Vec<Vec<[f64; 2]>>")]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Shape("matrix must have at least one row and column".into()));
        }
        if let Some(pos) = matrix.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            let (c, r) = (pos / matrix.nrows(), pos % matrix.nrows());
            return Err(Error::Domain(format!("non-finite entry at ({r}, {c})")));
        }
        Ok(Self(matrix))
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: &[C64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("rows have unequal lengths".into()));
        }
        let data: Vec<C64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(rows.len(), cols, &data)
    }

    /// Real row-major data, a convenience for tests and examples.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| C64::new(x, 0.0)));
        Self::new(DMatrix::from_diagonal(&d))
    }

    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<C64>) -> Self {
        debug_assert!(matrix.nrows() > 0 && matrix.ncols() > 0);
        Self(matrix)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.diagonal().iter().sum()
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self(&self.0 * factor)
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    /// Largest entrywise modulus of `self - other`.
    ///
    /// Panics if the shapes differ.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols() != other.rows() {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(Self(&self.0 * &other.0))
    }

    /// Row-major `[re, im]` pairs, the on-disk matrix encoding.
    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        (0..self.rows())
            .map(|r| (0..self.cols()).map(|c| [self.0[(r, c)].re, self.0[(r, c)].im]).collect())
            .collect()
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl TryFrom<Vec<Vec<[f64; 2]>>> for ComplexMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect())
            .collect();
        Self::from_rows(&rows)
    }
}

impl From<ComplexMatrix> for Vec<Vec<[f64; 2]>> {
    fn from(m: ComplexMatrix) -> Self {
        m.to_rows()
    }
}

pub(crate) fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Largest deviation of `m` from `scale * I`.
pub(crate) fn identity_defect(m: &DMatrix<C64>, scale: f64) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let target = if r == c { scale } else { 0.0 };
            worst = worst.max((m[(r, c)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..m.ncols() {
        for r in 0..=c {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()).scale(0.5)
}

fn check_hermitian(m: &ComplexMatrix) -> Result<DMatrix<C64>> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "Hermitian operator must be square, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let defect = hermitian_defect(&m.0);
    let allowed = HERMITIAN_TOL * m.max_abs().max(1.0);
    if defect > allowed {
        return Err(Error::Contract(format!(
            "matrix is not Hermitian (defect {defect:e} > {allowed:e})"
        )));
    }
    Ok(hermitize(&m.0))
}

/// A self-adjoint operator; near-Hermitian input is symmetrized on construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComplexMatrix", into = "ComplexMatrix")]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
}

impl HermitianOperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let sym = check_hermitian(&matrix)?;
        Ok(Self { matrix: ComplexMatrix(sym) })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(ComplexMatrix::from_real_diagonal(diag)?)
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        spectral_decompose(self)
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let d = self.dim();
        let m = &self.matrix.0 + DMatrix::<C64>::identity(d, d) * C64::new(shift, 0.0);
        Self { matrix: ComplexMatrix(m) }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { matrix: ComplexMatrix(self.matrix.0.scale(factor)) }
    }

    /// `self ⊗ I + I ⊗ other`, the non-interacting sum on the composite space.
    pub fn kron_sum(&self, other: &HermitianOperator) -> Result<Self> {
        let left = tensor_product(&self.matrix, &ComplexMatrix::identity(other.dim()))?;
        let right = tensor_product(&ComplexMatrix::identity(self.dim()), &other.matrix)?;
        Ok(Self { matrix: ComplexMatrix(left.0 + right.0) })
    }
}

impl TryFrom<ComplexMatrix> for HermitianOperator {
    type Error = Error;

    fn try_from(m: ComplexMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<HermitianOperator> for ComplexMatrix {
    fn from(h: HermitianOperator) -> Self {
        h.matrix
    }
}

/// Eigenvalues in ascending order (repeated per multiplicity) with an
/// orthonormal set of eigenvectors stored as columns.
///
/// Inside a degenerate block the eigenvectors are an arbitrary orthonormal
/// choice, so per-label quantities are only canonical for simple spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: ComplexMatrix,
}

impl Spectrum {
    /// Assembles a spectrum from known parts, checking order and orthonormality.
    pub fn from_parts(eigenvalues: Vec<f64>, eigenvectors: ComplexMatrix) -> Result<Self> {
        let d = eigenvalues.len();
        if eigenvectors.rows() != d || eigenvectors.cols() != d {
            return Err(Error::Shape(format!(
                "{d} eigenvalues need a {d}x{d} eigenvector matrix, got {}x{}",
                eigenvectors.rows(),
                eigenvectors.cols()
            )));
        }
        if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Structure("eigenvalues must be ascending".into()));
        }
        let residual = identity_defect(&(eigenvectors.0.adjoint() * &eigenvectors.0), 1.0);
        if residual > EIGEN_TOL {
            return Err(Error::Structure(format!(
                "eigenvectors are not orthonormal (defect {residual:e})"
            )));
        }
        Ok(Self { eigenvalues, eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvectors as the columns of a unitary matrix.
    pub fn eigenvectors(&self) -> &ComplexMatrix {
        &self.eigenvectors
    }

    pub fn vector(&self, i: usize) -> DVector<C64> {
        self.eigenvectors.0.column(i).into_owned()
    }

    pub fn projector(&self, i: usize) -> DMatrix<C64> {
        let v = self.vector(i);
        &v * v.adjoint()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// `Σ_i f(a_i) |a_i⟩⟨a_i|`; fails if `f` is not finite on some eigenvalue.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<HermitianOperator> {
        let mut values = Vec::with_capacity(self.dim());
        for &a in &self.eigenvalues {
            let v = f(a);
            if !v.is_finite() {
                return Err(Error::Range(format!(
                    "function value {v} at eigenvalue {a} is not finite"
                )));
            }
            values.push(C64::new(v, 0.0));
        }
        let v = &self.eigenvectors.0;
        let m = v * DMatrix::from_diagonal(&DVector::from_vec(values)) * v.adjoint();
        Ok(HermitianOperator { matrix: ComplexMatrix(hermitize(&m)) })
    }

    /// `Σ_i a_i |a_i⟩⟨a_i|`.
    pub fn reconstruct(&self) -> DMatrix<C64> {
        let v = &self.eigenvectors.0;
        let d = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|&a| C64::new(a, 0.0)));
        v * DMatrix::from_diagonal(&d) * v.adjoint()
    }
}

fn is_diagonal(m: &DMatrix<C64>) -> bool {
    (0..m.ncols()).all(|c| (0..m.nrows()).all(|r| r == c || m[(r, c)] == C64::new(0.0, 0.0)))
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
///
/// Exactly diagonal input keeps the standard basis (stably sorted), so
/// diagonal observables get canonical labels.
pub fn spectral_decompose(a: &HermitianOperator) -> Result<Spectrum> {
    let m = &a.matrix.0;
    let d = m.nrows();

    let (values, vectors) = if is_diagonal(m) {
        (m.diagonal().iter().map(|z| z.re).collect::<Vec<_>>(), DMatrix::identity(d, d))
    } else {
        let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 1000 * d.max(1))
            .ok_or(Error::Convergence { residual: f64::NAN })?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let eigenvectors = DMatrix::from_fn(d, d, |r, c| vectors[(r, order[c])]);

    let spectrum = Spectrum { eigenvalues, eigenvectors: ComplexMatrix(eigenvectors) };
    let ortho = identity_defect(&(spectrum.eigenvectors.0.adjoint() * &spectrum.eigenvectors.0), 1.0);
    let recon = max_abs_diff(&spectrum.reconstruct(), m) / a.matrix.max_abs().max(1.0);
    let residual = ortho.max(recon);
    if !(residual <= EIGEN_TOL) {
        return Err(Error::Convergence { residual });
    }
    Ok(spectrum)
}

/// `f(A) = Σ_i f(a_i) |a_i⟩⟨a_i|`.
pub fn operator_function(a: &HermitianOperator, f: impl Fn(f64) -> f64) -> Result<HermitianOperator> {
    spectral_decompose(a)?.map(f)
}

/// Kronecker product `X ⊗ Y` with the A-major index `i_X * rows(Y) + i_Y`.
pub fn tensor_product(x: &ComplexMatrix, y: &ComplexMatrix) -> Result<ComplexMatrix> {
    tensor_product_with_limit(x, y, DEFAULT_MAX_COMPOSITE_DIM)
}

pub fn tensor_product_with_limit(x: &ComplexMatrix, y: &ComplexMatrix, max_dim: usize) -> Result<ComplexMatrix> {
    let rows = x.rows() * y.rows();
    let cols = x.cols() * y.cols();
    let dim = rows.max(cols);
    if dim > max_dim {
        return Err(Error::Size { dim, max: max_dim });
    }
    Ok(ComplexMatrix(x.0.kronecker(&y.0)))
}

/// Hilbert–Schmidt inner product `Tr(X† Y)`.
pub fn hs_inner(x: &ComplexMatrix, y: &ComplexMatrix) -> Result<C64> {
    if x.0.shape() != y.0.shape() {
        return Err(Error::Shape(format!(
            "inner product of {}x{} and {}x{} matrices",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    Ok(x.0.iter().zip(y.0.iter()).map(|(a, b)| a.conj() * b).sum())
}

/// A Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComplexMatrix", into = "ComplexMatrix")]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let sym = ComplexMatrix(check_hermitian(&matrix)?);
        let trace = sym.trace().re;
        if (trace - 1.0).abs() > DENSITY_TOL {
            return Err(Error::Contract(format!("density matrix has trace {trace}")));
        }
        let min_eig = spectral_decompose(&HermitianOperator { matrix: sym.clone() })?.min();
        if min_eig < -DENSITY_TOL {
            return Err(Error::Contract(format!(
                "density matrix has negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { matrix: sym })
    }

    pub(crate) fn new_unchecked(matrix: DMatrix<C64>) -> Self {
        Self { matrix: ComplexMatrix(matrix) }
    }

    /// The completely mixed state `I/d`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self::new_unchecked(DMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0))
    }

    pub fn pure(state: &DVector<C64>) -> Result<Self> {
        let norm = state.norm();
        if state.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(Error::Domain("state vector must be non-zero and finite".into()));
        }
        let v = state / C64::new(norm, 0.0);
        Ok(Self::new_unchecked(&v * v.adjoint()))
    }

    /// `Σ_i p_i |v_i⟩⟨v_i|` over the eigenvectors of `basis`.
    pub fn diagonal_in(basis: &Spectrum, probabilities: &[f64]) -> Result<Self> {
        if probabilities.len() != basis.dim() {
            return Err(Error::Shape(format!(
                "{} probabilities for a {}-dimensional basis",
                probabilities.len(),
                basis.dim()
            )));
        }
        let v = &basis.eigenvectors.0;
        let d = DVector::from_iterator(probabilities.len(), probabilities.iter().map(|&p| C64::new(p, 0.0)));
        Self::new(ComplexMatrix(v * DMatrix::from_diagonal(&d) * v.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(spectral_decompose(&HermitianOperator { matrix: self.matrix.clone() })?.min())
    }

    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        Ok(Self::new_unchecked(tensor_product(&self.matrix, &other.matrix)?.0))
    }
}

impl TryFrom<ComplexMatrix> for DensityMatrix {
    type Error = Error;

    fn try_from(m: ComplexMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<DensityMatrix> for ComplexMatrix {
    fn from(d: DensityMatrix) -> Self {
        d.matrix
    }
}
