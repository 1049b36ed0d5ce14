//! Rank truncation of a density matrix `ρ = V V†` whose columns are tensor
//! trains: norm screening, Gram eigendecomposition, rank selection, then
//! error-budgeted linear combinations of the surviving columns.
//!
//! Error accounting follows the density-matrix Frobenius norm throughout.
//! Output column `i` with exact value `x_i` (norm `σ_i`) and TT error `e_i`
//! contributes at most `2 σ_i ‖e_i‖ + ‖e_i‖²`.

use serde::{Deserialize, Serialize};

use crate::error::{check_modes, Error, Result};
use crate::linalg::{herm_eig, CMat, C64, ZERO};
use crate::rand_round::{make_sketch, randomized_round_many, residual_sq, SketchPolicy};
use crate::tt::{SweepTolerance, TensorTrain};

/// `V` in `ρ = V V†`; every column shares the same modes.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorMatrix {
    modes: Vec<usize>,
    columns: Vec<TensorTrain>,
}

impl FactorMatrix {
    pub fn new(modes: Vec<usize>, columns: Vec<TensorTrain>) -> Result<Self> {
        for c in &columns {
            check_modes(&modes, &c.modes())?;
        }
        Ok(Self { modes, columns })
    }

    pub fn empty(modes: Vec<usize>) -> Self {
        Self { modes, columns: Vec::new() }
    }

    pub fn from_column(column: TensorTrain) -> Self {
        Self { modes: column.modes(), columns: vec![column] }
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[TensorTrain] {
        &self.columns
    }

    pub fn into_columns(self) -> Vec<TensorTrain> {
        self.columns
    }

    pub fn push(&mut self, column: TensorTrain) -> Result<()> {
        check_modes(&self.modes, &column.modes())?;
        self.columns.push(column);
        Ok(())
    }

    pub fn extend(&mut self, other: FactorMatrix) -> Result<()> {
        check_modes(&self.modes, &other.modes)?;
        self.columns.extend(other.columns);
        Ok(())
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.columns.iter().map(TensorTrain::norm).collect()
    }

    /// `tr ρ = Σ_i ‖v_i‖²`.
    pub fn trace(&self) -> f64 {
        self.columns.iter().map(|c| c.norm().powi(2)).sum()
    }

    pub fn max_bond(&self) -> usize {
        self.columns.iter().map(TensorTrain::max_bond).max().unwrap_or(1)
    }

    pub fn scaled(&self, alpha: C64) -> FactorMatrix {
        Self { modes: self.modes.clone(), columns: self.columns.iter().map(|c| c.scaled(alpha)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.columns.iter().all(TensorTrain::is_finite)
    }

    /// Dense `N x r` factor.
    pub fn to_dense(&self) -> Result<CMat> {
        let n: usize = self.modes.iter().product();
        let mut out = CMat::zeros(n, self.columns.len());
        for (j, c) in self.columns.iter().enumerate() {
            let v = c.to_dense()?;
            out.column_mut(j).copy_from_slice(&v.data);
        }
        Ok(out)
    }

    /// Dense `ρ = V V†`.
    pub fn density(&self) -> Result<CMat> {
        let v = self.to_dense()?;
        Ok(&v * v.adjoint())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinCombMethod {
    #[default]
    Randomized,
    TtsvdIterative,
    TtsvdAdaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressOptions {
    pub alpha_screen: f64,
    pub alpha_svd: f64,
    pub method: LinCombMethod,
    pub sketch: SketchPolicy,
    pub seed: u64,
    /// Gram eigenvalues below `eig_floor * λ_max` are treated as zero.
    pub eig_floor: f64,
    /// Check each randomized output against its budget and redo it
    /// deterministically when the check fails or cannot be resolved.
    pub verify_randomized: bool,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            alpha_screen: 0.7,
            alpha_svd: 0.7,
            method: LinCombMethod::Randomized,
            sketch: SketchPolicy::default(),
            seed: 0,
            eig_floor: 0.0,
            verify_randomized: true,
        }
    }
}

impl CompressOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_screen", self.alpha_screen), ("alpha_svd", self.alpha_svd)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.eig_floor >= 0.0) {
            return Err(Error::InvalidArgument("eig_floor must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CompressReport {
    pub rank_in: usize,
    pub rank_out: usize,
    pub screened: usize,
    pub spent_screen: f64,
    pub spent_svd: f64,
    /// Bound on the density error of the linear combinations,
    /// `Σ_i 2 σ_i ‖e_i‖ + ‖e_i‖²`.
    pub bound_tt: f64,
    /// Randomized outputs recomputed deterministically.
    pub fallbacks: usize,
}

impl CompressReport {
    pub fn total_bound(&self) -> f64 {
        self.spent_screen + self.spent_svd + self.bound_tt
    }
}

/// Drops the longest tail of smallest columns whose squared norms sum to at
/// most `budget`. Columns come back sorted by decreasing norm; at least one
/// column survives when the trace is positive.
pub fn norm_screen(x: &FactorMatrix, budget: f64) -> (FactorMatrix, f64) {
    let norms: Vec<f64> = x.columns.iter().map(|c| c.norm().powi(2)).collect();
    let (keep, spent) = screen_indices(&norms, budget);
    let columns = keep.iter().map(|&j| x.columns[j].clone()).collect();
    (FactorMatrix { modes: x.modes.clone(), columns }, spent)
}

fn screen_indices(norms_sq: &[f64], budget: f64) -> (Vec<usize>, f64) {
    let mut order: Vec<usize> = (0..norms_sq.len()).collect();
    order.sort_by(|&a, &b| norms_sq[b].total_cmp(&norms_sq[a]));
    let total: f64 = norms_sq.iter().sum();
    let min_keep = usize::from(total > 0.0 && !order.is_empty());
    let mut kept = order.len();
    let mut spent = 0.0;
    while kept > min_keep {
        let next = spent + norms_sq[order[kept - 1]];
        if next > budget {
            break;
        }
        spent = next;
        kept -= 1;
    }
    order.truncate(kept);
    (order, spent)
}

/// `W = X† X`, i.e. `W(i, j) = ⟨x_j, x_i⟩`, symmetrized.
pub fn gram(x: &FactorMatrix) -> CMat {
    generic_gram(&x.columns)
}

fn generic_gram(cols: &[TensorTrain]) -> CMat {
    let r = cols.len();
    let mut w = CMat::zeros(r, r);
    for i in 0..r {
        w[(i, i)] = C64::new(cols[i].norm().powi(2), 0.0);
        for j in i + 1..r {
            let v = cols[j].inner(&cols[i]).expect("shared modes");
            w[(i, j)] = v;
            w[(j, i)] = v.conj();
        }
    }
    w
}

/// Smallest `r ≥ 1` whose eigenvalue tail is at most `budget`, and that tail.
pub fn select_rank(eigs_desc: &[f64], budget: f64) -> (usize, f64) {
    let mut r = eigs_desc.len();
    let mut tail = 0.0;
    while r > 1 {
        let next = tail + eigs_desc[r - 1].max(0.0);
        if next > budget {
            break;
        }
        tail = next;
        r -= 1;
    }
    (r, tail)
}

/// Per-output TT error allowed when the density budget for that output is
/// `budget`: the positive root of `e² + 2 σ e = budget`.
pub fn column_error_budget(sigma: f64, budget: f64) -> f64 {
    if budget <= 0.0 {
        return 0.0;
    }
    budget / (sigma + (sigma * sigma + budget).sqrt())
}

/// A set of columns the compression pipeline can screen, Gram and combine.
pub(crate) trait ColumnSet {
    fn modes(&self) -> Vec<usize>;
    fn count(&self) -> usize;
    fn norms_sq(&self) -> Vec<f64>;
    fn gram_of(&self, keep: &[usize]) -> CMat;
    /// Output `i` approximates `Σ_j coeffs[(j, i)] x_{keep[j]}` within the
    /// density budget `tau_tt / r`; returns the columns and the achieved bound.
    fn combine(
        &self,
        keep: &[usize],
        coeffs: &CMat,
        sigmas: &[f64],
        tau_tt: f64,
        opts: &CompressOptions,
    ) -> Result<(Vec<TensorTrain>, f64, usize)>;
}

impl ColumnSet for FactorMatrix {
    fn modes(&self) -> Vec<usize> {
        self.modes.clone()
    }
    fn count(&self) -> usize {
        self.columns.len()
    }
    fn norms_sq(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.norm().powi(2)).collect()
    }
    fn gram_of(&self, keep: &[usize]) -> CMat {
        let cols: Vec<TensorTrain> = keep.iter().map(|&j| self.columns[j].clone()).collect();
        generic_gram(&cols)
    }
    fn combine(
        &self,
        keep: &[usize],
        coeffs: &CMat,
        sigmas: &[f64],
        tau_tt: f64,
        opts: &CompressOptions,
    ) -> Result<(Vec<TensorTrain>, f64, usize)> {
        let cols: Vec<TensorTrain> = keep.iter().map(|&j| self.columns[j].clone()).collect();
        match opts.method {
            LinCombMethod::TtsvdIterative => linear_combinations_ttsvd(&cols, coeffs, sigmas, tau_tt, false).map(|(c, b)| (c, b, 0)),
            LinCombMethod::TtsvdAdaptive => linear_combinations_ttsvd(&cols, coeffs, sigmas, tau_tt, true).map(|(c, b)| (c, b, 0)),
            LinCombMethod::Randomized => linear_combinations_randomized(&cols, coeffs, sigmas, tau_tt, opts),
        }
    }
}

/// Compresses `X X†` to Frobenius error at most `tau`.
pub fn tt_compress(x: &FactorMatrix, tau: f64, opts: &CompressOptions) -> Result<(FactorMatrix, CompressReport)> {
    compress_columns(x, tau, opts)
}

pub(crate) fn compress_columns<S: ColumnSet>(set: &S, tau: f64, opts: &CompressOptions) -> Result<(FactorMatrix, CompressReport)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("compression tolerance must be positive, got {tau}")));
    }
    opts.validate()?;
    let modes = set.modes();
    let mut report = CompressReport { rank_in: set.count(), ..Default::default() };
    if set.count() == 0 {
        return Ok((FactorMatrix::empty(modes), report));
    }
    let norms = set.norms_sq();
    let (keep, spent_screen) = screen_indices(&norms, opts.alpha_screen * tau);
    report.screened = set.count() - keep.len();
    report.spent_screen = spent_screen;
    if keep.is_empty() {
        return Ok((FactorMatrix::empty(modes), report));
    }
    let tau0 = tau - spent_screen;

    let w = set.gram_of(&keep);
    let (mut eigs, vecs) = herm_eig(&w);
    let lmax = eigs.first().copied().unwrap_or(0.0).max(0.0);
    for e in eigs.iter_mut() {
        if *e < opts.eig_floor * lmax || *e < 0.0 {
            *e = 0.0;
        }
    }
    let (r, spent_svd) = select_rank(&eigs, opts.alpha_svd * tau0);
    report.spent_svd = spent_svd;
    let tau_tt = tau0 - spent_svd;
    let sigmas: Vec<f64> = eigs[..r].iter().map(|e| e.sqrt()).collect();
    let coeffs = vecs.columns(0, r).into_owned();

    let (cols, bound, fallbacks) = set.combine(&keep, &coeffs, &sigmas, tau_tt, opts)?;
    report.bound_tt = bound;
    report.fallbacks = fallbacks;
    report.rank_out = cols.len();
    let out = FactorMatrix { modes, columns: cols };
    if !out.is_finite() {
        return Err(Error::NonFinite { stage: "tt_compress".into() });
    }
    Ok((out, report))
}

/// Linear combinations as chains of pairwise sums, each followed by an SVD
/// sweep. Non-adaptive mode splits every column's budget evenly over its
/// sums; adaptive mode carries unspent budget forward, both across the sums
/// of one column and across columns.
pub fn linear_combinations_ttsvd(
    cols: &[TensorTrain],
    coeffs: &CMat,
    sigmas: &[f64],
    tau_tt: f64,
    adaptive: bool,
) -> Result<(Vec<TensorTrain>, f64)> {
    let (r0, r) = coeffs.shape();
    if r0 != cols.len() || sigmas.len() != r {
        return Err(Error::Shape(format!("coefficients {r0}x{r} for {} columns and {} sigmas", cols.len(), sigmas.len())));
    }
    let per_term = tau_tt.max(0.0) / r.max(1) as f64;
    let mut used = 0.0;
    let mut out = Vec::with_capacity(r);
    for i in 0..r {
        let budget = if adaptive { ((i + 1) as f64 * per_term - used).max(0.0) } else { per_term };
        let eps = column_error_budget(sigmas[i], budget);
        let (y, err) = ttsvd_sum(cols, coeffs.column(i).as_slice(), eps, adaptive);
        used += 2.0 * sigmas[i] * err + err * err;
        out.push(y);
    }
    Ok((out, used))
}

/// `Σ_j c_j x_j` by sequential sums with TT error at most `eps`; returns
/// the sum and a bound on its error.
fn ttsvd_sum(cols: &[TensorTrain], c: &[C64], eps: f64, adaptive: bool) -> (TensorTrain, f64) {
    let terms: Vec<usize> = (0..cols.len()).filter(|&j| c[j] != ZERO).collect();
    let Some((&first, rest)) = terms.split_first() else {
        return (TensorTrain::zeros(&cols[0].modes()), 0.0);
    };
    let mut y = cols[first].scaled(c[first]);
    if rest.is_empty() {
        return (y, 0.0);
    }
    let base = eps / rest.len() as f64;
    let mut spent = 0.0;
    for (step, &j) in rest.iter().enumerate() {
        let tol = if adaptive { ((step + 1) as f64 * base - spent).max(0.0) } else { base };
        let sum = y.add(&cols[j].scaled(c[j])).expect("shared modes");
        let (t, rep) = sum.svd_sweep(&SweepTolerance::Total(tol), None);
        spent += rep.error();
        y = t;
    }
    (y, spent)
}

fn linear_combinations_randomized(
    cols: &[TensorTrain],
    coeffs: &CMat,
    sigmas: &[f64],
    tau_tt: f64,
    opts: &CompressOptions,
) -> Result<(Vec<TensorTrain>, f64, usize)> {
    let r = coeffs.ncols();
    let per_term = tau_tt.max(0.0) / r.max(1) as f64;
    let eps: Vec<f64> = sigmas.iter().map(|&s| column_error_budget(s, per_term)).collect();
    let modes = cols[0].modes();
    let max_in = cols.iter().map(TensorTrain::max_bond).max().unwrap_or(1);
    let omega = make_sketch(&modes, opts.sketch.bond(max_in), opts.seed);
    // Rounding noise of the a-posteriori check, known before any work is done.
    let resolvable: Vec<bool> = sigmas
        .iter()
        .zip(&eps)
        .map(|(&s, &e)| !opts.verify_randomized || e * e > 64.0 * f64::EPSILON * 2.0 * s * s * cols.len() as f64)
        .collect();
    let tols: Vec<SweepTolerance> = eps.iter().map(|&e| SweepTolerance::Total(0.9 * e)).collect();
    let rand_cols: Vec<usize> = (0..r).filter(|&i| resolvable[i]).collect();
    let sub = CMat::from_fn(coeffs.nrows(), rand_cols.len(), |j, k| coeffs[(j, rand_cols[k])]);
    let sub_tols: Vec<SweepTolerance> = rand_cols.iter().map(|&i| tols[i].clone()).collect();
    let mut rand_out = randomized_round_many(cols, &sub, &omega, &sub_tols, None)?.into_iter();

    let mut out = Vec::with_capacity(r);
    let mut bound = 0.0;
    let mut fallbacks = 0;
    for i in 0..r {
        let c: Vec<C64> = coeffs.column(i).iter().copied().collect();
        let accepted = if resolvable[i] {
            let (y, rep) = rand_out.next().expect("one output per randomized column");
            if opts.verify_randomized {
                let (est, floor) = residual_sq(cols, &c, sigmas[i] * sigmas[i], &y)?;
                let err = (est + floor).sqrt();
                (err <= eps[i]).then_some((y, err))
            } else {
                // Without a check only the sweep's own discard is known.
                let err = rep.error();
                Some((y, err))
            }
        } else {
            None
        };
        let (y, err) = match accepted {
            Some(v) => v,
            None => {
                fallbacks += 1;
                ttsvd_sum(cols, &c, eps[i], true)
            }
        };
        bound += 2.0 * sigmas[i] * err + err * err;
        out.push(y);
    }
    Ok((out, bound, fallbacks))
}
