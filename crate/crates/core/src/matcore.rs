//! Dense complex linear algebra for the small, mostly Hermitian matrices that
//! show up in the filters and in the full-tensor oracle.
//!
//! Two representations are used. [`ComplexMatrix`] is a dynamically sized
//! square matrix used for anything that is not 2×2 (slice unitaries, the
//! oracle's 2^(N+1)-dimensional operators, tensor products). [`Mat2`] is the
//! fixed-size 2×2 matrix used in the per-step filter recursions, where heap
//! allocation would dominate the cost.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;

/// Hermiticity tolerance on the largest entry of `A - A*`.
pub const TOL_HERM: f64 = 1e-10;
/// Most negative eigenvalue still accepted as positive semidefinite.
pub const TOL_PSD: f64 = 1e-10;
/// Eigenvalues at or below `TOL_SUPP_REL * max eigenvalue` are outside the support.
pub const TOL_SUPP_REL: f64 = 1e-12;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn sigma_x() -> Mat2 {
    Mat2::new(ZERO, ONE, ONE, ZERO)
}

pub fn sigma_y() -> Mat2 {
    Mat2::new(ZERO, -I, I, ZERO)
}

pub fn sigma_z() -> Mat2 {
    Mat2::new(ONE, ZERO, ZERO, -ONE)
}

/// Lowering operator; annihilates the vacuum `[0 1]^T`.
pub fn sigma_minus() -> Mat2 {
    Mat2::new(ZERO, ZERO, ONE, ZERO)
}

pub fn sigma_plus() -> Mat2 {
    Mat2::new(ZERO, ONE, ZERO, ZERO)
}

pub fn diag2(a: f64, b: f64) -> Mat2 {
    Mat2::new(re(a), ZERO, ZERO, re(b))
}

/// Builds a real 2×2 matrix from row-major entries.
pub fn real2(a: f64, b: f64, c: f64, d: f64) -> Mat2 {
    Mat2::new(re(a), re(b), re(c), re(d))
}

#[inline]
pub fn trace2(a: &Mat2) -> f64 {
    (a[(0, 0)] + a[(1, 1)]).re
}

/// Real part of `Tr(a b)` without forming the product.
#[inline]
pub fn trace_product2(a: &Mat2, b: &Mat2) -> f64 {
    (a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(1, 0)] + a[(1, 0)] * b[(0, 1)] + a[(1, 1)] * b[(1, 1)])
        .re
}

pub fn max_abs2(a: &Mat2) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_hermitian2(a: &Mat2, tol: f64) -> bool {
    max_abs2(&(a - a.adjoint())) <= tol
}

/// Smallest eigenvalue of the Hermitian part of a 2×2 matrix, in closed form.
pub fn min_eigenvalue2(a: &Mat2) -> f64 {
    let p = a[(0, 0)].re;
    let q = a[(1, 1)].re;
    let off = 0.5 * (a[(0, 1)] + a[(1, 0)].conj());
    let mid = 0.5 * (p + q);
    let half = 0.5 * (p - q);
    mid - (half * half + off.norm_sqr()).sqrt()
}

pub fn is_psd2(a: &Mat2) -> bool {
    is_hermitian2(a, TOL_HERM) && min_eigenvalue2(a) >= -TOL_PSD
}

/// Result of a Hermitian eigendecomposition, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEigen {
    /// Rebuilds `V f(Λ) V*`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let v = &self.eigenvectors.0;
        let n = v.nrows();
        let mut scaled = v.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let s = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        ComplexMatrix(scaled * v.adjoint())
    }

    /// Rebuilds `V f(Λ) V*` for a complex-valued spectral function.
    pub fn apply_complex(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let v = &self.eigenvectors.0;
        let n = v.nrows();
        let mut scaled = v.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let s = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        ComplexMatrix(scaled * v.adjoint())
    }
}

/// Square dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix{}", self.0)
    }
}

impl ComplexMatrix {
    pub fn new(inner: DMatrix<C64>) -> Result<Self> {
        if inner.nrows() != inner.ncols() || inner.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix must be square with dim >= 1, got {}x{}",
                inner.nrows(),
                inner.ncols()
            )));
        }
        Ok(Self(inner))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(dim, dim, f))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, |i, j| if i == j { re(diag[i]) } else { ZERO })
    }

    /// Row-major construction.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("rows do not form a square matrix".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn inner(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (&self.0 - self.0.adjoint()).iter().all(|z| z.norm() <= tol)
    }

    pub fn is_psd(&self) -> bool {
        match self.eig_hermitian() {
            Ok(e) => e.eigenvalues.first().is_some_and(|&m| m >= -TOL_PSD),
            Err(_) => false,
        }
    }

    pub fn to_mat2(&self) -> Result<Mat2> {
        if self.dim() != 2 {
            return Err(Error::InvalidInput(format!("expected 2x2, got dim {}", self.dim())));
        }
        Ok(Mat2::new(self.0[(0, 0)], self.0[(0, 1)], self.0[(1, 0)], self.0[(1, 1)]))
    }

    /// Eigendecomposition `A = V diag(λ) V*` of a Hermitian matrix, eigenvalues ascending.
    pub fn eig_hermitian(&self) -> Result<HermitianEigen> {
        self.check_finite()?;
        if !self.is_hermitian(TOL_HERM * self.max_abs().max(1.0)) {
            return Err(Error::InvalidInput("eig_hermitian: matrix is not Hermitian".into()));
        }
        let sym = (&self.0 + self.0.adjoint()) * re(0.5);
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let n = self.dim();
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok(HermitianEigen { eigenvalues, eigenvectors: ComplexMatrix(vecs) })
    }

    /// Matrix exponential. Hermitian input goes through the eigendecomposition,
    /// anything else through scaling-and-squaring.
    pub fn mat_exp(&self) -> Result<Self> {
        self.check_finite()?;
        if self.is_hermitian(TOL_HERM * self.max_abs().max(1.0)) {
            Ok(self.eig_hermitian()?.apply(f64::exp))
        } else {
            Ok(Self(self.0.clone().exp()))
        }
    }

    /// Logarithm restricted to the support of a Hermitian PSD matrix.
    ///
    /// Eigenvalues at or below `tol_supp` are treated as outside the support and
    /// contribute nothing; the caller decides what a support violation means.
    pub fn mat_log_psd(&self, tol_supp: f64) -> Result<Self> {
        let eig = self.eig_hermitian()?;
        Ok(eig.apply(|x| if x > tol_supp { x.ln() } else { 0.0 }))
    }

    /// Default support threshold `TOL_SUPP_REL * max eigenvalue`.
    pub fn support_tolerance(&self) -> Result<f64> {
        let eig = self.eig_hermitian()?;
        let top = eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
        Ok(TOL_SUPP_REL * top)
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput("matrix has non-finite entries".into()))
        }
    }
}

impl From<Mat2> for ComplexMatrix {
    fn from(m: Mat2) -> Self {
        Self(DMatrix::from_fn(2, 2, |i, j| m[(i, j)]))
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: Self) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

/// Hermitian eigendecomposition of a 2×2 matrix.
pub fn eig_hermitian2(a: &Mat2) -> Result<([f64; 2], Mat2)> {
    let eig = ComplexMatrix::from(*a).eig_hermitian()?;
    let v = eig.eigenvectors.to_mat2()?;
    Ok(([eig.eigenvalues[0], eig.eigenvalues[1]], v))
}
