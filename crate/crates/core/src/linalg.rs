//! Small dense linear algebra shared by every module: decompositions with a
//! fixed ordering convention, matrix functions and the site-ordering utility.
//!
//! # Site ordering
//!
//! Site 0 is the most significant tensor factor. A dense vector on modes
//! `(n_0, ..., n_{d-1})` is stored row-major, so the flat index of
//! `(i_0, ..., i_{d-1})` is `((i_0 * n_1 + i_1) * n_2 + i_2) ...` and a local
//! operator at site `k` embeds as `I_{n_0} ⊗ ... ⊗ M ⊗ ... ⊗ I_{n_{d-1}}`.
//! [`flat_index`] and [`embed_local`] are the only places that encode this.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Flat row-major index of a multi-index.
pub fn flat_index(modes: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(modes.len(), idx.len());
    idx.iter().zip(modes).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Inverse of [`flat_index`].
pub fn multi_index(modes: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; modes.len()];
    for k in (0..modes.len()).rev() {
        idx[k] = flat % modes[k];
        flat /= modes[k];
    }
    idx
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == ZERO {
                continue;
            }
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Dense embedding of a local operator acting on `site`.
pub fn embed_local(modes: &[usize], site: usize, m: &CMat) -> CMat {
    let mut out = CMat::identity(1, 1);
    for (k, &n) in modes.iter().enumerate() {
        let f = if k == site { m.clone() } else { CMat::identity(n, n) };
        out = kron(&out, &f);
    }
    out
}

/// Dense embedding of a product of local operators on distinct sites.
pub fn embed_product(modes: &[usize], factors: &[(usize, CMat)]) -> CMat {
    let mut out = CMat::identity(1, 1);
    for (k, &n) in modes.iter().enumerate() {
        let mut f = CMat::identity(n, n);
        for (s, m) in factors {
            if *s == k {
                f = m * f;
            }
        }
        out = kron(&out, &f);
    }
    out
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn frob(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

/// Thin QR: `m = q * r` with `q` having orthonormal columns.
pub fn qr_thin(m: CMat) -> (CMat, CMat) {
    let qr = m.qr();
    (qr.q(), qr.r())
}

pub(crate) fn to_faer(m: &CMat) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub(crate) fn from_faer(m: faer::MatRef<'_, C64>) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values sorted in decreasing order: `m = u diag(s) vt`.
pub fn svd_sorted(m: CMat) -> (CMat, Vec<f64>, CMat) {
    let (nr, nc) = m.shape();
    let k = nr.min(nc);
    if k == 0 {
        return (CMat::zeros(nr, k), Vec::new(), CMat::zeros(k, nc));
    }
    let svd = to_faer(&m).thin_svd().expect("SVD converged");
    let u = from_faer(svd.U());
    let vt = from_faer(svd.V()).adjoint();
    let s = svd.S().column_vector().iter().map(|z| z.re).collect();
    (u, s, vt)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues in decreasing order.
/// The input is symmetrized first.
pub fn herm_eig(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let h = hermitian_part(m);
    let eig = to_faer(&h).self_adjoint_eigen(faer::Side::Lower).expect("eigensolver converged");
    let vals: Vec<f64> = eig.S().column_vector().iter().map(|z| z.re).collect();
    let vecs = eig.U();
    let vecs = CMat::from_fn(n, n, |i, j| vecs[(i, n - 1 - j)]);
    (vals.into_iter().rev().collect(), vecs)
}

fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return CMat::zeros(0, 0);
    }
    let norm = one_norm(a);
    if norm == 0.0 {
        return CMat::identity(n, n);
    }
    let theta13 = 5.371920351148152;
    let s = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
    let a = a * c(0.5f64.powi(s));
    let id = CMat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| c(PADE13[k]);
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9)) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8)) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Principal logarithm of a normal matrix (unitary in practice). An
/// eigenvalue on the negative real axis maps to `ln|λ| + iπ`.
pub fn logm_normal(u: &CMat) -> CMat {
    let n = u.nrows();
    let schur = nalgebra::Schur::new(u.clone());
    let (q, t) = schur.unpack();
    let mut d = CMat::zeros(n, n);
    for k in 0..n {
        let z = t[(k, k)];
        let mut arg = z.arg();
        if z.re < 0.0 && z.im.abs() <= 1e-14 * z.norm() {
            arg = std::f64::consts::PI;
        }
        d[(k, k)] = C64::new(z.norm().ln(), arg);
    }
    &q * d * q.adjoint()
}

pub fn matvec(m: &CMat, v: &[C64]) -> Vec<C64> {
    let x = DVector::from_column_slice(v);
    (m * x).iter().copied().collect()
}

/// Pauli-style single-site operators on a two-level site with level 0 = |↑⟩.
pub mod spin {
    use super::*;

    /// σ⁺ = |↑⟩⟨↓|.
    pub fn raising() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
    }

    /// σ⁻ = |↓⟩⟨↑|.
    pub fn lowering() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO])
    }

    pub fn sigma_x() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }
}

/// Truncated bosonic ladder operators.
pub mod ladder {
    use super::*;

    /// Annihilation `a = Σ_j √j |j-1⟩⟨j|` on `n` levels.
    pub fn annihilation(n: usize) -> CMat {
        let mut a = CMat::zeros(n, n);
        for j in 1..n {
            a[(j - 1, j)] = c((j as f64).sqrt());
        }
        a
    }

    pub fn number(n: usize) -> CMat {
        CMat::from_diagonal(&DVector::from_fn(n, |j, _| c(j as f64)))
    }
}
