//! Tensor trains (matrix product states) with exact arithmetic,
//! canonicalization and deterministic SVD truncation.
//!
//! A core has shape `(left, phys, right)` and is stored column-major with
//! flat index `a + left * (i + phys * b)`. With that layout the left
//! unfolding `(left * phys) x right` and the right unfolding
//! `left x (phys * right)` are both plain reinterpretations of the buffer.
//!
//! Canonical-form convention: [`TensorTrain::svd_sweep`] and
//! [`TensorTrain::from_dense`] return left-canonical trains whose
//! orthogonality center is the last site.

use nalgebra::DMatrixView;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_modes, Error, Result};
use crate::linalg::{c, qr_thin, svd_sorted, CMat, C64, ONE, ZERO};

/// Default cap on dense tensor sizes, in elements.
pub const DENSE_CAP: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Core {
    left: usize,
    phys: usize,
    right: usize,
    data: Vec<C64>,
}

impl Core {
    pub fn zeros(left: usize, phys: usize, right: usize) -> Self {
        Self { left, phys, right, data: vec![ZERO; left * phys * right] }
    }

    pub fn from_data(left: usize, phys: usize, right: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), left * phys * right, "core buffer has the wrong length");
        Self { left, phys, right, data }
    }

    /// Core whose left unfolding is `m` (shape `(left * phys) x right`).
    pub fn from_left_unfolding(m: &CMat, left: usize, phys: usize) -> Self {
        assert_eq!(m.nrows(), left * phys);
        Self::from_data(left, phys, m.ncols(), m.as_slice().to_vec())
    }

    /// Core whose right unfolding is `m` (shape `left x (phys * right)`).
    pub fn from_right_unfolding(m: &CMat, phys: usize, right: usize) -> Self {
        assert_eq!(m.ncols(), phys * right);
        Self::from_data(m.nrows(), phys, right, m.as_slice().to_vec())
    }

    pub fn left(&self) -> usize {
        self.left
    }
    pub fn phys(&self) -> usize {
        self.phys
    }
    pub fn right(&self) -> usize {
        self.right
    }
    pub fn data(&self) -> &[C64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, a: usize, i: usize, b: usize) -> usize {
        a + self.left * (i + self.phys * b)
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> C64 {
        self.data[self.idx(a, i, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: C64) {
        let k = self.idx(a, i, b);
        self.data[k] = v;
    }

    pub fn left_unfolding(&self) -> CMat {
        CMat::from_column_slice(self.left * self.phys, self.right, &self.data)
    }

    pub fn left_view(&self) -> DMatrixView<'_, C64> {
        DMatrixView::from_slice(&self.data, self.left * self.phys, self.right)
    }

    pub fn right_unfolding(&self) -> CMat {
        CMat::from_column_slice(self.left, self.phys * self.right, &self.data)
    }

    pub fn right_view(&self) -> DMatrixView<'_, C64> {
        DMatrixView::from_slice(&self.data, self.left, self.phys * self.right)
    }

    /// The matrix `X(:, i, :)`.
    pub fn slice(&self, i: usize) -> CMat {
        CMat::from_fn(self.left, self.right, |a, b| self.get(a, i, b))
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, alpha: C64) {
        self.data.iter_mut().for_each(|z| *z *= alpha);
    }

    /// Apply a local matrix to the physical index: `W(:, i, :) = Σ_l m(i, l) X(:, l, :)`.
    pub fn apply_local(&self, m: &CMat) -> Core {
        assert_eq!(m.ncols(), self.phys);
        let nout = m.nrows();
        let mut out = Core::zeros(self.left, nout, self.right);
        for b in 0..self.right {
            for l in 0..self.phys {
                for i in 0..nout {
                    let s = m[(i, l)];
                    if s == ZERO {
                        continue;
                    }
                    for a in 0..self.left {
                        let v = self.get(a, l, b);
                        let k = out.idx(a, i, b);
                        out.data[k] += s * v;
                    }
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// A dense order-d tensor stored row-major (site 0 slowest).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub modes: Vec<usize>,
    pub data: Vec<C64>,
}

impl DenseTensor {
    pub fn new(modes: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let size: usize = modes.iter().product();
        if modes.is_empty() || modes.contains(&0) {
            return Err(Error::InvalidArgument("tensor must have positive mode sizes".into()));
        }
        if size != data.len() {
            return Err(Error::Shape(format!("{} elements for modes {:?}", data.len(), modes)));
        }
        Ok(Self { modes, data })
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::vec_norm(&self.data)
    }

    pub fn distance(&self, other: &DenseTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Per-sweep truncation tolerance.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepTolerance {
    /// Total Frobenius error budget, split evenly as `tol / sqrt(d - 1)` per bond.
    Total(f64),
    /// Per-bond budgets (length `d - 1`); bond `k` discards singular values
    /// whose squared sum is at most `tol_k^2`.
    PerCore(Vec<f64>),
}

impl SweepTolerance {
    fn per_bond(&self, nbonds: usize) -> Vec<f64> {
        match self {
            SweepTolerance::Total(t) => {
                let each = if nbonds == 0 { 0.0 } else { t / (nbonds as f64).sqrt() };
                vec![each; nbonds]
            }
            SweepTolerance::PerCore(v) => {
                assert_eq!(v.len(), nbonds, "one tolerance per bond is required");
                v.clone()
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruncationReport {
    /// Accumulated squared discarded singular values.
    pub discarded_weight: f64,
    pub final_bonds: Vec<usize>,
    /// True when `max_bond` forced a smaller rank than the tolerance allowed.
    pub capped: bool,
}

impl TruncationReport {
    /// Frobenius norm of the truncation error of a canonical sweep.
    pub fn error(&self) -> f64 {
        self.discarded_weight.sqrt()
    }
}

/// Rank kept for decreasing singular values `s` under a squared-tail budget.
/// Never returns 0 for a nonempty spectrum; exact ties at the cut are kept.
pub(crate) fn truncation_rank(s: &[f64], tol_sq: f64, max_bond: Option<usize>) -> (usize, bool) {
    if s.is_empty() {
        return (0, false);
    }
    let mut r = s.len();
    let mut tail = 0.0;
    while r > 1 {
        let next = tail + s[r - 1] * s[r - 1];
        if next > tol_sq {
            break;
        }
        tail = next;
        r -= 1;
    }
    while r < s.len() && s[r] == s[r - 1] && s[r] > 0.0 {
        r += 1;
    }
    match max_bond {
        Some(m) if m.max(1) < r => (m.max(1), true),
        _ => (r, false),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Core>,
    center: Option<usize>,
}

impl TensorTrain {
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidArgument("a tensor train needs at least one core".into()));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(Error::Shape("boundary bond dimensions must be 1".into()));
        }
        for w in cores.windows(2) {
            if w[0].right != w[1].left {
                return Err(Error::Shape(format!("bond mismatch {} vs {}", w[0].right, w[1].left)));
            }
        }
        if cores.iter().any(|c| c.phys == 0) {
            return Err(Error::Shape("mode sizes must be positive".into()));
        }
        Ok(Self { cores, center: None })
    }

    #[allow(dead_code)]
    pub(crate) fn from_parts(cores: Vec<Core>, center: Option<usize>) -> Self {
        debug_assert!(Self::new(cores.clone()).is_ok());
        Self { cores, center }
    }

    /// Rank-1 tensor `v_0 ⊗ v_1 ⊗ ...`.
    pub fn product(vectors: &[Vec<C64>]) -> Result<Self> {
        let cores = vectors.iter().map(|v| Core::from_data(1, v.len(), 1, v.clone())).collect();
        Self::new(cores)
    }

    /// Computational basis state with the given level at each site.
    pub fn basis_state(modes: &[usize], levels: &[usize]) -> Result<Self> {
        if modes.len() != levels.len() || levels.iter().zip(modes).any(|(l, n)| l >= n) {
            return Err(Error::InvalidArgument(format!("levels {levels:?} do not fit modes {modes:?}")));
        }
        let vecs: Vec<Vec<C64>> = modes
            .iter()
            .zip(levels)
            .map(|(&n, &l)| (0..n).map(|i| if i == l { ONE } else { ZERO }).collect())
            .collect();
        let mut tt = Self::product(&vecs)?;
        tt.center = Some(modes.len() - 1);
        Ok(tt)
    }

    /// The zero tensor, stored with all bonds equal to 1.
    pub fn zeros(modes: &[usize]) -> Self {
        let cores = modes.iter().map(|&n| Core::zeros(1, n, 1)).collect();
        Self { cores, center: None }
    }

    /// Random train with i.i.d. complex Gaussian entries; interior bonds are
    /// `bond` clipped to the largest rank the modes admit.
    pub fn random<R: Rng + ?Sized>(modes: &[usize], bond: usize, rng: &mut R) -> Self {
        let bonds = clipped_bonds(modes, &vec![bond; modes.len().saturating_sub(1)]);
        let cores = (0..modes.len())
            .map(|k| {
                let (l, r) = (bonds[k], bonds[k + 1]);
                let data = (0..l * modes[k] * r)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        C64::new(re, im)
                    })
                    .collect();
                Core::from_data(l, modes[k], r, data)
            })
            .collect();
        Self { cores, center: None }
    }

    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &Core {
        &self.cores[k]
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    pub fn ortho_center(&self) -> Option<usize> {
        self.center
    }

    pub fn modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.phys).collect()
    }

    /// Bond dimensions `(b_0, ..., b_d)` including the unit boundaries.
    pub fn bonds(&self) -> Vec<usize> {
        let mut b = Vec::with_capacity(self.cores.len() + 1);
        b.push(1);
        b.extend(self.cores.iter().map(|c| c.right));
        b
    }

    pub fn max_bond(&self) -> usize {
        self.cores.iter().map(|c| c.right).max().unwrap_or(1)
    }

    pub fn is_finite(&self) -> bool {
        self.cores.iter().all(Core::is_finite)
    }

    /// Replace one core; the shape must be unchanged.
    pub fn with_core(&self, k: usize, core: Core) -> Self {
        let old = &self.cores[k];
        assert_eq!((old.left, old.right), (core.left, core.right), "bond dimensions must not change");
        let mut cores = self.cores.clone();
        cores[k] = core;
        let center = match self.center {
            Some(c) if c == k => Some(c),
            _ => None,
        };
        Self { cores, center }
    }

    pub fn from_dense(x: &DenseTensor, tol: f64) -> Result<Self> {
        Self::from_dense_capped(x, tol, DENSE_CAP)
    }

    /// TT-SVD of a dense tensor with total Frobenius error at most `tol`.
    pub fn from_dense_capped(x: &DenseTensor, tol: f64, cap: usize) -> Result<Self> {
        if x.data.len() > cap {
            return Err(Error::DenseCap { size: x.data.len(), cap });
        }
        if !(tol >= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be nonnegative".into()));
        }
        let d = x.modes.len();
        let per_bond = if d > 1 { tol / ((d - 1) as f64).sqrt() } else { 0.0 };
        let mut cores = Vec::with_capacity(d);
        let mut rest = CMat::from_row_slice(1, x.data.len(), &x.data);
        let mut left = 1;
        for k in 0..d - 1 {
            let n = x.modes[k];
            let tail = rest.ncols() / n;
            let m = CMat::from_fn(left * n, tail, |row, col| {
                let (a, i) = (row % left, row / left);
                rest[(a, i * tail + col)]
            });
            let (u, s, vt) = svd_sorted(m);
            let (r, _) = truncation_rank(&s, per_bond * per_bond, None);
            let u = u.columns(0, r).into_owned();
            cores.push(Core::from_left_unfolding(&u, left, n));
            rest = CMat::from_fn(r, tail, |i, j| c(s[i]) * vt[(i, j)]);
            left = r;
        }
        let n = x.modes[d - 1];
        cores.push(Core::from_data(left, n, 1, rest.as_slice().to_vec()));
        Ok(Self { cores, center: Some(d - 1) })
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_capped(DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseTensor> {
        let modes = self.modes();
        let size = modes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX);
        if size > cap {
            return Err(Error::DenseCap { size, cap });
        }
        let mut m = CMat::from_element(1, 1, ONE);
        for core in &self.cores {
            let t = &m * core.right_view();
            let (rows, n, br) = (m.nrows(), core.phys, core.right);
            m = CMat::from_fn(rows * n, br, |ri, b| t[(ri / n, ri % n + n * b)]);
        }
        Ok(DenseTensor { modes, data: m.as_slice().to_vec() })
    }

    /// Exact sum via block cores; bonds add, nothing is truncated.
    pub fn add(&self, other: &TensorTrain) -> Result<TensorTrain> {
        check_modes(&self.modes(), &other.modes())?;
        let d = self.len();
        if d == 1 {
            let (x, y) = (&self.cores[0], &other.cores[0]);
            let data = x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect();
            return Ok(Self { cores: vec![Core::from_data(1, x.phys, 1, data)], center: None });
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let (x, y) = (&self.cores[k], &other.cores[k]);
            let n = x.phys;
            let l = if k == 0 { 1 } else { x.left + y.left };
            let r = if k == d - 1 { 1 } else { x.right + y.right };
            let mut z = Core::zeros(l, n, r);
            let (xl_off, yl_off) = (0, if k == 0 { 0 } else { x.left });
            let (xr_off, yr_off) = (0, if k == d - 1 { 0 } else { x.right });
            for b in 0..x.right {
                for i in 0..n {
                    for a in 0..x.left {
                        z.set(a + xl_off, i, b + xr_off, x.get(a, i, b));
                    }
                }
            }
            for b in 0..y.right {
                for i in 0..n {
                    for a in 0..y.left {
                        z.set(a + yl_off, i, b + yr_off, y.get(a, i, b));
                    }
                }
            }
            cores.push(z);
        }
        Ok(Self { cores, center: None })
    }

    /// `alpha * self`; the factor is absorbed into the orthogonality center
    /// (or the first core when there is none).
    pub fn scaled(&self, alpha: C64) -> TensorTrain {
        let mut out = self.clone();
        if alpha == ONE {
            return out;
        }
        let k = self.center.unwrap_or(0);
        out.cores[k].scale(alpha);
        out
    }

    /// `⟨self, other⟩ = Σ conj(other) * self`.
    pub fn inner(&self, other: &TensorTrain) -> Result<C64> {
        check_modes(&self.modes(), &other.modes())?;
        let mut env = CMat::from_element(1, 1, ONE);
        for (x, y) in self.cores.iter().zip(&other.cores) {
            env = contract_env(&env, x, y);
        }
        Ok(env[(0, 0)])
    }

    pub fn norm(&self) -> f64 {
        match self.center {
            Some(c) => self.cores[c].frob_norm(),
            None => self.inner(self).expect("same modes").re.max(0.0).sqrt(),
        }
    }

    /// Gauge transform so that `center` is the orthogonality center.
    pub fn canonicalize(&self, center: usize) -> TensorTrain {
        assert!(center < self.len(), "center out of range");
        if self.center == Some(center) {
            return self.clone();
        }
        let d = self.len();
        let (lstart, rstart) = match self.center {
            Some(c) if c < center => (c, center),
            Some(c) => (center, c),
            None => (0, d - 1),
        };
        let mut cores = self.cores.clone();
        for k in lstart..center {
            let (l, n) = (cores[k].left, cores[k].phys);
            let (q, r) = qr_thin(cores[k].left_unfolding());
            cores[k] = Core::from_left_unfolding(&q, l, n);
            let next = &cores[k + 1];
            let merged = &r * next.right_view();
            cores[k + 1] = Core::from_right_unfolding(&merged, next.phys, next.right);
        }
        for k in (center + 1..=rstart).rev() {
            let (n, rr) = (cores[k].phys, cores[k].right);
            let (q, r) = qr_thin(cores[k].right_unfolding().adjoint());
            cores[k] = Core::from_right_unfolding(&q.adjoint(), n, rr);
            let prev = &cores[k - 1];
            let merged = prev.left_view() * r.adjoint();
            cores[k - 1] = Core::from_left_unfolding(&merged, prev.left, prev.phys);
        }
        Self { cores, center: Some(center) }
    }

    /// Single SVD truncation sweep. The train is first brought to
    /// right-canonical form, then swept left to right; the result is
    /// left-canonical with its center on the last site.
    pub fn svd_sweep(&self, tol: &SweepTolerance, max_bond: Option<usize>) -> (TensorTrain, TruncationReport) {
        let d = self.len();
        let per_bond = tol.per_bond(d - 1);
        let mut x = self.canonicalize(0);
        let mut report = TruncationReport::default();
        for k in 0..d - 1 {
            let (l, n) = (x.cores[k].left, x.cores[k].phys);
            let (u, s, vt) = svd_sorted(x.cores[k].left_unfolding());
            let (r, capped) = truncation_rank(&s, per_bond[k] * per_bond[k], max_bond);
            report.capped |= capped;
            report.discarded_weight += s[r..].iter().map(|v| v * v).sum::<f64>();
            x.cores[k] = Core::from_left_unfolding(&u.columns(0, r).into_owned(), l, n);
            let carry = CMat::from_fn(r, vt.ncols(), |i, j| c(s[i]) * vt[(i, j)]);
            let next = &x.cores[k + 1];
            let merged = carry * next.right_view();
            x.cores[k + 1] = Core::from_right_unfolding(&merged, next.phys, next.right);
        }
        x.center = Some(d - 1);
        report.final_bonds = x.bonds();
        (x, report)
    }
}

/// One step of a left-to-right overlap: `env` has shape `(b_y, b_x)` and the
/// result contracts in one more core pair (conjugating `y`).
pub(crate) fn contract_env(env: &CMat, x: &Core, y: &Core) -> CMat {
    let t = env * x.right_view();
    let t = DMatrixView::from_slice(t.as_slice(), y.left * x.phys, x.right);
    y.left_view().ad_mul(&t)
}

/// Interior bond dimensions clipped to what the modes can support; returns
/// the full list `(1, b_1, ..., b_{d-1}, 1)`.
pub fn clipped_bonds(modes: &[usize], requested: &[usize]) -> Vec<usize> {
    let d = modes.len();
    let mut out = vec![1; d + 1];
    for k in 1..d {
        let left: usize = modes[..k].iter().fold(1usize, |a, &n| a.saturating_mul(n));
        let right: usize = modes[k..].iter().fold(1usize, |a, &n| a.saturating_mul(n));
        out[k] = requested[k - 1].max(1).min(left).min(right);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vec_norm;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn dense_inner(x: &DenseTensor, y: &DenseTensor) -> C64 {
        x.data.iter().zip(&y.data).map(|(a, b)| a * b.conj()).sum()
    }

    fn e(n: usize, k: usize) -> Vec<C64> {
        (0..n).map(|i| if i == k { ONE } else { ZERO }).collect()
    }

    #[test]
    fn product_state_compresses_to_unit_bonds() {
        let x = TensorTrain::product(&[e(2, 0), e(2, 0), e(2, 0)]).unwrap();
        let dense = x.to_dense().unwrap();
        let y = TensorTrain::from_dense(&dense, 0.0).unwrap();
        assert_eq!(y.bonds(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn dense_round_trip_is_exact() {
        let mut r = rng(1);
        let data: Vec<C64> = (0..24).map(|_| C64::new(r.random::<f64>() - 0.5, r.random::<f64>())).collect();
        let x = DenseTensor::new(vec![2, 3, 4], data).unwrap();
        let tt = TensorTrain::from_dense(&x, 0.0).unwrap();
        assert!(tt.to_dense().unwrap().distance(&x) < 1e-12);
        assert_eq!(tt.ortho_center(), Some(2));
    }

    #[test]
    fn bell_tensor_has_bond_two() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = DenseTensor::new(vec![2, 2], vec![c(s), ZERO, ZERO, c(s)]).unwrap();
        let tt = TensorTrain::from_dense(&x, 0.0).unwrap();
        assert_eq!(tt.bonds(), vec![1, 2, 1]);
    }

    #[test]
    fn dense_cap_is_enforced() {
        let x = DenseTensor::new(vec![4, 4], vec![ZERO; 16]).unwrap();
        assert!(matches!(TensorTrain::from_dense_capped(&x, 0.0, 8), Err(Error::DenseCap { .. })));
        let tt = TensorTrain::zeros(&[4, 4, 4]);
        assert!(matches!(tt.to_dense_capped(10), Err(Error::DenseCap { .. })));
    }

    #[test]
    fn single_core_to_dense_is_the_core() {
        let v = vec![c(1.0), c(2.0), C64::new(0.0, 3.0)];
        let tt = TensorTrain::product(&[v.clone()]).unwrap();
        assert_eq!(tt.to_dense().unwrap().data, v);
    }

    #[test]
    fn identity_cores_give_product_tensor() {
        let tt = TensorTrain::product(&[vec![ONE, ONE], vec![ONE, ZERO]]).unwrap();
        assert_eq!(tt.to_dense().unwrap().data, vec![ONE, ZERO, ONE, ZERO]);
    }

    #[test]
    fn adding_negation_gives_zero_with_doubled_bonds() {
        let x = TensorTrain::random(&[2, 2, 2], 2, &mut rng(2));
        let z = x.add(&x.scaled(c(-1.0))).unwrap();
        assert_eq!(z.bonds(), vec![1, 4, 4, 1]);
        assert!(z.to_dense().unwrap().norm() < 1e-12);
    }

    #[test]
    fn bond_rule_is_additive() {
        let mut r = rng(3);
        let mk = |bonds: &[usize], r: &mut ChaCha20Rng| {
            let cores = (0..3)
                .map(|k| {
                    let data = (0..bonds[k] * 2 * bonds[k + 1]).map(|_| C64::new(r.random(), 0.0)).collect();
                    Core::from_data(bonds[k], 2, bonds[k + 1], data)
                })
                .collect();
            TensorTrain::new(cores).unwrap()
        };
        let x = mk(&[1, 2, 3, 1], &mut r);
        let y = mk(&[1, 4, 1, 1], &mut r);
        assert_eq!(x.add(&y).unwrap().bonds(), vec![1, 6, 4, 1]);
    }

    #[test]
    fn add_rejects_mode_mismatch() {
        let x = TensorTrain::zeros(&[2, 2]);
        let y = TensorTrain::zeros(&[2, 3]);
        assert!(matches!(x.add(&y), Err(Error::ModeMismatch { .. })));
        assert!(x.inner(&y).is_err());
    }

    #[test]
    fn scaling_matches_dense() {
        let x = TensorTrain::random(&[2, 3, 2], 3, &mut rng(4));
        assert_eq!(x.scaled(ONE), x);
        assert!(x.scaled(ZERO).to_dense().unwrap().norm() == 0.0);
        let alpha = C64::new(2.0, 3.0);
        let dx = x.to_dense().unwrap();
        let ds = x.scaled(alpha).to_dense().unwrap();
        for (a, b) in ds.data.iter().zip(&dx.data) {
            assert!((a - alpha * b).norm() < 1e-12);
        }
    }

    #[test]
    fn inner_products_of_basis_states() {
        let a = TensorTrain::basis_state(&[2, 2], &[0, 0]).unwrap();
        let b = TensorTrain::basis_state(&[2, 2], &[1, 0]).unwrap();
        assert_eq!(a.inner(&a).unwrap(), ONE);
        assert_eq!(a.inner(&b).unwrap(), ZERO);
    }

    #[test]
    fn inner_matches_dense_contraction() {
        let mut r = rng(5);
        let x = TensorTrain::random(&[2, 2, 2, 2], 3, &mut r);
        let y = TensorTrain::random(&[2, 2, 2, 2], 3, &mut r);
        let got = x.inner(&y).unwrap();
        let want = dense_inner(&x.to_dense().unwrap(), &y.to_dense().unwrap());
        assert!((got - want).norm() < 1e-12 * want.norm().max(1.0));
    }

    #[test]
    fn norms() {
        let u = TensorTrain::basis_state(&[2, 3], &[1, 2]).unwrap();
        assert_relative_eq!(u.norm(), 1.0);
        assert_relative_eq!(u.scaled(c(3.0)).norm(), 3.0);
        let x = TensorTrain::random(&[3, 2, 4], 3, &mut rng(6));
        let canon = x.canonicalize(1);
        assert_relative_eq!(x.norm(), canon.norm(), max_relative = 1e-12);
    }

    #[test]
    fn canonicalize_preserves_tensor_and_is_idempotent() {
        let x = TensorTrain::random(&[2, 3, 2, 2], 4, &mut rng(7));
        let dx = x.to_dense().unwrap();
        let right = x.canonicalize(3);
        let left = right.canonicalize(0);
        assert!(right.to_dense().unwrap().distance(&dx) < 1e-12 * dx.norm());
        assert!(left.to_dense().unwrap().distance(&dx) < 1e-12 * dx.norm());
        assert_eq!(left.canonicalize(0), left);
        assert_relative_eq!(left.norm(), right.norm(), max_relative = 1e-13);
        // Orthogonality of the unfoldings around the center.
        let mid = x.canonicalize(2);
        for k in 0..2 {
            let u = mid.core(k).left_unfolding();
            let g = u.adjoint() * &u;
            assert!(crate::linalg::frob(&(g.clone() - CMat::identity(g.nrows(), g.nrows()))) < 1e-12);
        }
        let v = mid.core(3).right_unfolding();
        let g = &v * v.adjoint();
        assert!(crate::linalg::frob(&(g.clone() - CMat::identity(g.nrows(), g.nrows()))) < 1e-12);
    }

    #[test]
    fn sweep_with_zero_tol_keeps_the_tensor() {
        let x = TensorTrain::random(&[2, 2, 2, 2], 2, &mut rng(8));
        let (y, rep) = x.svd_sweep(&SweepTolerance::Total(0.0), None);
        assert!(y.to_dense().unwrap().distance(&x.to_dense().unwrap()) < 1e-12 * x.norm());
        assert_eq!(y.bonds(), vec![1, 2, 2, 2, 1]);
        assert_eq!(y.ortho_center(), Some(3));
        assert!(rep.discarded_weight < 1e-24);
    }

    #[test]
    fn sweep_recovers_rank_after_doubling() {
        let x = TensorTrain::random(&[2, 3, 3, 2], 2, &mut rng(9));
        let doubled = x.add(&x).unwrap();
        let (y, _) = doubled.svd_sweep(&SweepTolerance::Total(1e-12 * x.norm()), None);
        assert_eq!(y.bonds(), x.bonds());
        let want: Vec<C64> = x.to_dense().unwrap().data.iter().map(|z| z * 2.0).collect();
        let got = y.to_dense().unwrap().data;
        assert!(vec_norm(&got.iter().zip(&want).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-11);
    }

    fn random_mat(rows: usize, cols: usize, r: &mut ChaCha20Rng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| C64::new(r.sample(StandardNormal), r.sample(StandardNormal)))
    }

    /// Order-4 tensor whose middle unfolding has singular values `10^-k`.
    fn planted(seed: u64) -> TensorTrain {
        let mut r = rng(seed);
        let (n, rank) = (4, 4);
        let (u, _) = qr_thin(random_mat(n * n, rank, &mut r));
        let (v, _) = qr_thin(random_mat(n * n, rank, &mut r));
        let s = CMat::from_fn(rank, rank, |i, j| if i == j { c(10f64.powi(-(i as i32))) } else { ZERO });
        let full = u * s * v.adjoint();
        let data: Vec<C64> = full.transpose().as_slice().to_vec();
        TensorTrain::from_dense(&DenseTensor::new(vec![n, n, n, n], data).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn sweep_error_is_within_tolerance_on_planted_decay() {
        for seed in 0..5 {
            let x = planted(seed);
            let (y, rep) = x.svd_sweep(&SweepTolerance::Total(1e-4), None);
            let err = y.to_dense().unwrap().distance(&x.to_dense().unwrap());
            assert!(err <= 1e-4, "err {err}");
            assert_relative_eq!(err, rep.error(), max_relative = 1e-6, epsilon = 1e-14);
            assert!(y.max_bond() < x.max_bond());
        }
    }

    #[test]
    fn per_core_tolerances_and_cap() {
        let x = planted(11);
        let d = x.len();
        let (y, rep) = x.svd_sweep(&SweepTolerance::PerCore(vec![1e-3; d - 1]), Some(2));
        assert!(y.max_bond() <= 2);
        assert!(rep.capped);
        assert!(rep.final_bonds.iter().zip(x.bonds()).all(|(a, b)| *a <= b));
    }

    #[test]
    fn truncation_rank_rules() {
        assert_eq!(truncation_rank(&[1.0, 0.5, 0.1], 0.0, None), (3, false));
        assert_eq!(truncation_rank(&[1.0, 0.5, 0.1], 0.011, None), (2, false));
        assert_eq!(truncation_rank(&[0.0, 0.0], 0.0, None), (1, false));
        // Exact ties at the cut are kept together.
        assert_eq!(truncation_rank(&[1.0, 0.1, 0.1], 0.011, None), (3, false));
        assert_eq!(truncation_rank(&[1.0, 0.5, 0.1], 0.0, Some(1)), (1, true));
    }

    #[test]
    fn zero_tensor_is_accepted_everywhere() {
        let z = TensorTrain::zeros(&[2, 3, 2]);
        assert_eq!(z.norm(), 0.0);
        let (y, _) = z.svd_sweep(&SweepTolerance::Total(0.0), None);
        assert_eq!(y.bonds(), vec![1, 1, 1, 1]);
        assert_eq!(y.norm(), 0.0);
        assert_eq!(z.canonicalize(1).norm(), 0.0);
    }

    fn arb_tt() -> impl Strategy<Value = (Vec<usize>, usize, u64)> {
        (prop::collection::vec(1usize..=4, 1..=6), 1usize..=3, any::<u64>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn sweep_error_never_exceeds_tolerance((modes, bond, seed) in arb_tt(), tol_exp in -6i32..0) {
            let mut r = rng(seed);
            let x = TensorTrain::random(&modes, bond, &mut r);
            let y = TensorTrain::random(&modes, bond, &mut r).scaled(c(0.05));
            let sum = x.add(&y).unwrap();
            let tol = 10f64.powi(tol_exp) * sum.norm();
            let (z, rep) = sum.svd_sweep(&SweepTolerance::Total(tol), None);
            let err = z.to_dense().unwrap().distance(&sum.to_dense().unwrap());
            prop_assert!(!rep.capped);
            prop_assert!(err <= tol * (1.0 + 1e-10) + 1e-13 * sum.norm());
        }

        #[test]
        fn add_and_inner_are_consistent((modes, bond, seed) in arb_tt()) {
            let mut r = rng(seed);
            let x = TensorTrain::random(&modes, bond, &mut r);
            let y = TensorTrain::random(&modes, bond, &mut r);
            let dx = x.to_dense().unwrap();
            let dy = y.to_dense().unwrap();
            let ds = x.add(&y).unwrap().to_dense().unwrap();
            for ((s, a), b) in ds.data.iter().zip(&dx.data).zip(&dy.data) {
                prop_assert!((s - a - b).norm() <= 1e-12 * (1.0 + a.norm() + b.norm()));
            }
            let ip = x.inner(&y).unwrap();
            prop_assert!(ip.norm() <= x.norm() * y.norm() * (1.0 + 1e-12));
            let center = (seed as usize) % modes.len();
            let cx = x.canonicalize(center);
            prop_assert!(cx.to_dense().unwrap().distance(&dx) <= 1e-12 * dx.norm().max(1.0));
            prop_assert!((cx.norm() - dx.norm()).abs() <= 1e-13 * dx.norm().max(1.0));
        }
    }
}
