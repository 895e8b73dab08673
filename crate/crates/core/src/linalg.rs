//! Dense complex linear algebra helpers.
//!
//! nalgebra dispatches `f64` matrix products to a fast gemm kernel but falls
//! back to a naive loop for `Complex<f64>`. The product helpers here split
//! complex matrices into real and imaginary parts and recombine a handful of
//! real gemms, which is substantially faster at the sizes this crate targets
//! (N, n up to ~1024).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Below this dimension the split-gemm machinery is not worth the copies.
const SPLIT_GEMM_MIN_DIM: usize = 48;

pub fn split_parts(m: &CMat) -> (RMat, RMat) {
    (m.map(|c| c.re), m.map(|c| c.im))
}

pub fn join_parts(re: &RMat, im: &RMat) -> CMat {
    RMat::zip_map(re, im, |r, i| C64::new(r, i))
}

/// Complex matrix product `a * b` via four real gemms.
pub fn cmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "cmul: inner dimensions");
    if a.nrows().min(a.ncols()).min(b.ncols()) < SPLIT_GEMM_MIN_DIM {
        return a * b;
    }
    let (ar, ai) = split_parts(a);
    let (br, bi) = split_parts(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    join_parts(&re, &im)
}

/// Complex product `a * b^*` via four real gemms.
pub fn cmul_adjoint(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.ncols(), "cmul_adjoint: inner dimensions");
    if a.nrows().min(a.ncols()).min(b.nrows()) < SPLIT_GEMM_MIN_DIM {
        return a * b.adjoint();
    }
    let (ar, ai) = split_parts(a);
    let (br, bi) = split_parts(b);
    // (ar + i ai)(br^T - i bi^T)
    let re = &ar * br.transpose() + &ai * bi.transpose();
    let im = &ai * br.transpose() - &ar * bi.transpose();
    join_parts(&re, &im)
}

/// Gram matrix `m m^*`, exactly Hermitian by construction (the real part is
/// symmetrized and the imaginary part antisymmetrized, so the diagonal has
/// imaginary part identically zero).
pub fn hermitian_gram(m: &CMat) -> CMat {
    let n = m.nrows();
    let (p, q) = split_parts(m);
    let s1 = &p * p.transpose();
    let s2 = &q * q.transpose();
    let s3 = &q * p.transpose();
    let mut g = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let re = 0.5 * (s1[(i, j)] + s1[(j, i)] + s2[(i, j)] + s2[(j, i)]);
            let im = s3[(i, j)] - s3[(j, i)];
            g[(i, j)] = C64::new(re, im);
        }
    }
    g
}

pub fn frobenius_norm(m: &CMat) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Ascending eigenvalues and matching eigenvectors of a Hermitian matrix.
pub fn hermitian_eig(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Hermitian PSD square root via eigendecomposition. Eigenvalues slightly
/// negative from rounding are clamped to zero; anything below `-1e-10 * max`
/// is rejected.
pub fn hermitian_sqrt(m: &CMat) -> Result<CMat> {
    let (values, vectors) = hermitian_eig(m);
    let scale = values.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    let mut roots = Vec::with_capacity(values.len());
    for &v in &values {
        if v < -1e-10 * scale {
            return Err(Error::Numerical(format!(
                "matrix is not positive semidefinite (eigenvalue {v:.3e})"
            )));
        }
        roots.push(v.max(0.0).sqrt());
    }
    let d = CMat::from_diagonal(&CVec::from_iterator(
        roots.len(),
        roots.iter().map(|&r| C64::new(r, 0.0)),
    ));
    Ok(cmul(&cmul(&vectors, &d), &vectors.adjoint()))
}

/// Factorization of `g - z I` for a Hermitian PSD `g`.
///
/// For real negative `z` the shifted matrix is Hermitian positive definite
/// and a Cholesky factorization is used; otherwise a dense LU.
pub enum ShiftedFactor {
    Chol(Cholesky<C64, Dyn>),
    Lu(LU<C64, Dyn, Dyn>),
}

impl ShiftedFactor {
    pub fn new(gram: &CMat, z: C64) -> Result<Self> {
        let n = gram.nrows();
        let mut shifted = gram.clone();
        for i in 0..n {
            shifted[(i, i)] -= z;
        }
        if z.im == 0.0 && z.re < 0.0 {
            if let Some(chol) = Cholesky::new(shifted.clone()) {
                return Ok(ShiftedFactor::Chol(chol));
            }
            // fall through to LU; can only happen if gram is not PSD
        }
        let lu = shifted.lu();
        if lu.determinant() == C64::new(0.0, 0.0) {
            return Err(Error::LinearSolve(format!(
                "shifted Gram matrix numerically singular at z = {z}"
            )));
        }
        Ok(ShiftedFactor::Lu(lu))
    }

    pub fn solve_vec(&self, v: &CVec) -> Result<CVec> {
        match self {
            ShiftedFactor::Chol(c) => Ok(c.solve(v)),
            ShiftedFactor::Lu(lu) => lu
                .solve(v)
                .ok_or_else(|| Error::LinearSolve("LU solve failed".into())),
        }
    }

    pub fn inverse(&self) -> Result<CMat> {
        match self {
            ShiftedFactor::Chol(c) => Ok(c.inverse()),
            ShiftedFactor::Lu(lu) => lu
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::LinearSolve("LU inversion failed".into())),
        }
    }
}

/// Dense inverse of a general complex matrix.
pub fn inverse(m: &CMat) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::LinearSolve("matrix inversion failed".into()))
}
