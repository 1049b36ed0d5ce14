//! Matrix product operators.
//!
//! A core has shape `(left, rows, cols, right)` with flat index
//! `a + left * (i + rows * (j + cols * b))`. Fusing `(i, j)` into one index
//! `i + rows * j` turns the core into a TT core with `rows * cols` physical
//! entries without copying, which is how compression and dense conversion
//! are done.

use crate::error::{check_modes, Error, Result};
use crate::linalg::{CMat, C64, ZERO};
use crate::rand_round::{self, SketchPolicy};
use crate::tt::{Core, DenseTensor, SweepTolerance, TensorTrain, TruncationReport, DENSE_CAP};

#[derive(Clone, Debug, PartialEq)]
pub struct MpoCore {
    left: usize,
    rows: usize,
    cols: usize,
    right: usize,
    data: Vec<C64>,
}

impl MpoCore {
    pub fn zeros(left: usize, rows: usize, cols: usize, right: usize) -> Self {
        Self { left, rows, cols, right, data: vec![ZERO; left * rows * cols * right] }
    }

    /// Bond-1 core holding a local matrix.
    pub fn local(m: &CMat) -> Self {
        let mut core = Self::zeros(1, m.nrows(), m.ncols(), 1);
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                core.set(0, i, j, 0, m[(i, j)]);
            }
        }
        core
    }

    pub fn left(&self) -> usize {
        self.left
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn right(&self) -> usize {
        self.right
    }

    #[inline]
    pub fn idx(&self, a: usize, i: usize, j: usize, b: usize) -> usize {
        a + self.left * (i + self.rows * (j + self.cols * b))
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, j: usize, b: usize) -> C64 {
        self.data[self.idx(a, i, j, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, j: usize, b: usize, v: C64) {
        let k = self.idx(a, i, j, b);
        self.data[k] = v;
    }

    /// The local matrix `H(a, :, :, b)`.
    pub fn block(&self, a: usize, b: usize) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| self.get(a, i, j, b))
    }

    fn fused(&self) -> Core {
        Core::from_data(self.left, self.rows * self.cols, self.right, self.data.clone())
    }

    fn from_fused(core: &Core, rows: usize, cols: usize) -> Self {
        Self { left: core.left(), rows, cols, right: core.right(), data: core.data().to_vec() }
    }

    /// Core of the product `H x` at one site; the combined bond index is
    /// `a_h + left_h * a_x`.
    pub fn apply_to_core(&self, x: &Core) -> Core {
        assert_eq!(self.cols, x.phys());
        let (hl, hr, xl, xr) = (self.left, self.right, x.left(), x.right());
        let mut z = Core::zeros(hl * xl, self.rows, hr * xr);
        for bx in 0..xr {
            for bh in 0..hr {
                for j in 0..self.cols {
                    for ax in 0..xl {
                        let xv = x.get(ax, j, bx);
                        if xv == ZERO {
                            continue;
                        }
                        for i in 0..self.rows {
                            for ah in 0..hl {
                                let hv = self.get(ah, i, j, bh);
                                if hv == ZERO {
                                    continue;
                                }
                                let k = z.idx(ah + hl * ax, i, bh + hr * bx);
                                z.data_mut()[k] += hv * xv;
                            }
                        }
                    }
                }
            }
        }
        z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mpo {
    cores: Vec<MpoCore>,
}

/// How `H x` is compressed after (or while) being formed.
#[derive(Clone, Debug, PartialEq)]
pub enum ApplyMethod {
    /// Form the exact product, then run an SVD sweep.
    Deterministic,
    /// Randomize-then-orthogonalize on the implicit product; the sketch bond
    /// follows `sketch` applied to the product's bond.
    Randomized { sketch: SketchPolicy, seed: u64 },
}

impl Mpo {
    pub fn new(cores: Vec<MpoCore>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidArgument("an MPO needs at least one core".into()));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(Error::Shape("boundary bond dimensions must be 1".into()));
        }
        for w in cores.windows(2) {
            if w[0].right != w[1].left {
                return Err(Error::Shape(format!("bond mismatch {} vs {}", w[0].right, w[1].left)));
            }
        }
        Ok(Self { cores })
    }

    pub fn identity(modes: &[usize]) -> Self {
        Self { cores: modes.iter().map(|&n| MpoCore::local(&CMat::identity(n, n))).collect() }
    }

    /// `I ⊗ ... ⊗ m ⊗ ... ⊗ I` with `m` at `site`.
    pub fn from_local(site: usize, m: &CMat, modes: &[usize]) -> Result<Self> {
        Self::from_product(&[(site, m.clone())], modes)
    }

    /// Bond-1 operator with the given local factors (identity elsewhere).
    /// Factors on the same site are multiplied in the order given.
    pub fn from_product(factors: &[(usize, CMat)], modes: &[usize]) -> Result<Self> {
        let mut locals: Vec<CMat> = modes.iter().map(|&n| CMat::identity(n, n)).collect();
        for (site, m) in factors {
            let n = *modes.get(*site).ok_or_else(|| Error::InvalidArgument(format!("site {site} out of range")))?;
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Shape(format!("local matrix {}x{} at a site of size {n}", m.nrows(), m.ncols())));
            }
            locals[*site] = &locals[*site] * m;
        }
        Ok(Self { cores: locals.iter().map(MpoCore::local).collect() })
    }

    /// Operator from a dense matrix indexed by row-major flat indices.
    pub fn from_dense(m: &CMat, modes: &[usize], tol: f64) -> Result<Self> {
        let n: usize = modes.iter().product();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Shape(format!("{}x{} matrix for modes {modes:?}", m.nrows(), m.ncols())));
        }
        let fused_modes: Vec<usize> = modes.iter().map(|&k| k * k).collect();
        let mut data = vec![ZERO; n * n];
        let mut ri = vec![0usize; modes.len()];
        for row in 0..n {
            let mut cj = vec![0usize; modes.len()];
            for col in 0..n {
                let mut f = 0;
                for k in 0..modes.len() {
                    f = f * fused_modes[k] + ri[k] + modes[k] * cj[k];
                }
                data[f] = m[(row, col)];
                increment(&mut cj, modes);
            }
            increment(&mut ri, modes);
        }
        let tt = TensorTrain::from_dense(&DenseTensor::new(fused_modes, data)?, tol)?;
        Ok(Self::from_fused(&tt, modes, modes))
    }

    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn cores(&self) -> &[MpoCore] {
        &self.cores
    }

    pub fn row_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.rows).collect()
    }

    pub fn col_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.cols).collect()
    }

    pub fn bonds(&self) -> Vec<usize> {
        let mut b = vec![1];
        b.extend(self.cores.iter().map(|c| c.right));
        b
    }

    pub fn max_bond(&self) -> usize {
        self.cores.iter().map(|c| c.right).max().unwrap_or(1)
    }

    pub fn to_fused(&self) -> TensorTrain {
        TensorTrain::new(self.cores.iter().map(MpoCore::fused).collect()).expect("valid MPO")
    }

    fn from_fused(tt: &TensorTrain, rows: &[usize], cols: &[usize]) -> Self {
        let cores = tt.cores().iter().enumerate().map(|(k, c)| MpoCore::from_fused(c, rows[k], cols[k])).collect();
        Self { cores }
    }

    pub fn frob_norm(&self) -> f64 {
        self.to_fused().norm()
    }

    pub fn scaled(&self, alpha: C64) -> Mpo {
        let mut out = self.clone();
        out.cores[0].data.iter_mut().for_each(|z| *z *= alpha);
        out
    }

    /// Exact `H x`; bonds multiply.
    pub fn apply(&self, x: &TensorTrain) -> Result<TensorTrain> {
        check_modes(&self.col_modes(), &x.modes())?;
        TensorTrain::new(self.cores.iter().zip(x.cores()).map(|(h, c)| h.apply_to_core(c)).collect())
    }

    /// Exact operator product `self * other`; bonds multiply.
    pub fn mul(&self, other: &Mpo) -> Result<Mpo> {
        check_modes(&self.col_modes(), &other.row_modes())?;
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(a, b)| {
                let (al, ar, bl, br) = (a.left, a.right, b.left, b.right);
                let mut z = MpoCore::zeros(al * bl, a.rows, b.cols, ar * br);
                for rb in 0..br {
                    for ra in 0..ar {
                        for lb in 0..bl {
                            for la in 0..al {
                                let prod = a.block(la, ra) * b.block(lb, rb);
                                for j in 0..b.cols {
                                    for i in 0..a.rows {
                                        z.set(la + al * lb, i, j, ra + ar * rb, prod[(i, j)]);
                                    }
                                }
                            }
                        }
                    }
                }
                z
            })
            .collect();
        Ok(Mpo { cores })
    }

    /// Exact sum via block cores; bonds add.
    pub fn add(&self, other: &Mpo) -> Result<Mpo> {
        check_modes(&self.row_modes(), &other.row_modes())?;
        check_modes(&self.col_modes(), &other.col_modes())?;
        let sum = self.to_fused().add(&other.to_fused())?;
        Ok(Self::from_fused(&sum, &self.row_modes(), &self.col_modes()))
    }

    /// SVD compression in the operator Frobenius norm.
    pub fn compress(&self, tol: f64) -> (Mpo, TruncationReport) {
        self.compress_capped(tol, None)
    }

    pub fn compress_capped(&self, tol: f64, max_bond: Option<usize>) -> (Mpo, TruncationReport) {
        let (tt, rep) = self.to_fused().svd_sweep(&SweepTolerance::Total(tol), max_bond);
        (Self::from_fused(&tt, &self.row_modes(), &self.col_modes()), rep)
    }

    pub fn to_dense(&self) -> Result<CMat> {
        let rows = self.row_modes();
        let cols = self.col_modes();
        let (nr, nc): (usize, usize) = (rows.iter().product(), cols.iter().product());
        if nr.saturating_mul(nc) > DENSE_CAP {
            return Err(Error::DenseCap { size: nr.saturating_mul(nc), cap: DENSE_CAP });
        }
        let dense = self.to_fused().to_dense()?;
        let d = rows.len();
        let mut out = CMat::zeros(nr, nc);
        let mut ri = vec![0usize; d];
        for row in 0..nr {
            let mut cj = vec![0usize; d];
            for col in 0..nc {
                let mut f = 0;
                for k in 0..d {
                    f = f * (rows[k] * cols[k]) + ri[k] + rows[k] * cj[k];
                }
                out[(row, col)] = dense.data[f];
                increment(&mut cj, &cols);
            }
            increment(&mut ri, &rows);
        }
        Ok(out)
    }

    /// `H x` compressed to Frobenius error `tol`.
    pub fn apply_compressed(
        &self,
        x: &TensorTrain,
        tol: f64,
        method: &ApplyMethod,
        max_bond: Option<usize>,
    ) -> Result<(TensorTrain, TruncationReport)> {
        match method {
            ApplyMethod::Deterministic => Ok(self.apply(x)?.svd_sweep(&SweepTolerance::Total(tol), max_bond)),
            ApplyMethod::Randomized { sketch, seed } => {
                rand_round::randomized_apply(self, x, &SweepTolerance::Total(tol), sketch, *seed, max_bond)
            }
        }
    }

    /// Sum of weighted products of local operators, compressed along the way
    /// with a relative tolerance `rel_tol`.
    pub fn sum_of_products(modes: &[usize], terms: &[(C64, Vec<(usize, CMat)>)], rel_tol: f64) -> Result<Mpo> {
        let mut acc: Option<Mpo> = None;
        for (coeff, factors) in terms {
            let term = Mpo::from_product(factors, modes)?.scaled(*coeff);
            acc = Some(match acc {
                None => term,
                Some(a) => {
                    let sum = a.add(&term)?;
                    if sum.max_bond() > 8 {
                        let scale = sum.frob_norm();
                        sum.compress(rel_tol * scale).0
                    } else {
                        sum
                    }
                }
            });
        }
        let out = acc.unwrap_or_else(|| Mpo::identity(modes).scaled(ZERO));
        let scale = out.frob_norm();
        Ok(out.compress(rel_tol * scale).0)
    }
}

fn increment(idx: &mut [usize], modes: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < modes[k] {
            return;
        }
        idx[k] = 0;
    }
}
