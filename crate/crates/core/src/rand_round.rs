//! Randomize-then-orthogonalize rounding for linear combinations of tensor
//! trains and for MPO-TT products.
//!
//! Inputs are sketched right to left against a random tensor train `ω`; the
//! resulting partial contractions depend only on the inputs, so one table
//! serves every output combination. Each output is then formed by a single
//! left-to-right sweep of QR factorizations and finished with an SVD sweep.

use std::borrow::Cow;

use nalgebra::DMatrixView;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_modes, Error, Result};
use crate::linalg::{qr_thin, CMat, C64, ONE, ZERO};
use crate::mpo::Mpo;
use crate::tt::{clipped_bonds, contract_env, Core, SweepTolerance, TensorTrain, TruncationReport};

/// Sketch bond selection relative to the largest input bond.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchPolicy {
    Factor(f64),
    Fixed(usize),
}

impl Default for SketchPolicy {
    fn default() -> Self {
        SketchPolicy::Factor(1.2)
    }
}

impl SketchPolicy {
    pub fn bond(&self, max_input_bond: usize) -> usize {
        match *self {
            SketchPolicy::Factor(f) => ((f * max_input_bond as f64).ceil() as usize).max(1),
            SketchPolicy::Fixed(b) => b.max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchTensor {
    pub tt: TensorTrain,
    pub seed: u64,
}

/// Gaussian sketch with a uniform interior bond (clipped to what the modes
/// admit). Entries are complex standard normal scaled by `1/sqrt(b_k)` where
/// `b_k` is the core's right bond.
pub fn make_sketch(modes: &[usize], bond: usize, seed: u64) -> SketchTensor {
    make_sketch_bonds(modes, &vec![bond; modes.len().saturating_sub(1)], seed)
}

pub fn make_sketch_bonds(modes: &[usize], bonds: &[usize], seed: u64) -> SketchTensor {
    let bonds = clipped_bonds(modes, bonds);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let cores = (0..modes.len())
        .map(|k| {
            let (l, r) = (bonds[k], bonds[k + 1]);
            let scale = half / (r as f64).sqrt();
            let data = (0..l * modes[k] * r)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(re * scale, im * scale)
                })
                .collect();
            Core::from_data(l, modes[k], r, data)
        })
        .collect();
    SketchTensor { tt: TensorTrain::new(cores).expect("consistent sketch bonds"), seed }
}

/// Anything that can hand out tensor-train cores one site at a time.
pub trait CoreSource {
    fn modes(&self) -> Vec<usize>;
    fn site_core(&self, k: usize) -> Cow<'_, Core>;
    fn max_bond(&self) -> usize;
}

impl CoreSource for TensorTrain {
    fn modes(&self) -> Vec<usize> {
        TensorTrain::modes(self)
    }
    fn site_core(&self, k: usize) -> Cow<'_, Core> {
        Cow::Borrowed(self.core(k))
    }
    fn max_bond(&self) -> usize {
        TensorTrain::max_bond(self)
    }
}

impl<T: CoreSource + ?Sized> CoreSource for &T {
    fn modes(&self) -> Vec<usize> {
        (**self).modes()
    }
    fn site_core(&self, k: usize) -> Cow<'_, Core> {
        (**self).site_core(k)
    }
    fn max_bond(&self) -> usize {
        (**self).max_bond()
    }
}

/// The product `H x`, formed one core at a time on request.
pub struct ProductSource<'a> {
    pub h: &'a Mpo,
    pub x: &'a TensorTrain,
}

impl CoreSource for ProductSource<'_> {
    fn modes(&self) -> Vec<usize> {
        self.h.row_modes()
    }
    fn site_core(&self, k: usize) -> Cow<'_, Core> {
        Cow::Owned(self.h.cores()[k].apply_to_core(self.x.core(k)))
    }
    fn max_bond(&self) -> usize {
        let hb = self.h.bonds();
        self.x.bonds().iter().zip(&hb).map(|(a, b)| a * b).max().unwrap_or(1)
    }
}

/// Right-to-left contractions `p[k]` of shape `(b_k^x, b_k^ω)` for
/// `k = 0..=d`, with `p[d] = [[1]]` and `p[0] = ⟨x, ω⟩`.
pub fn partial_contractions_rl<S: CoreSource + ?Sized>(x: &S, omega: &SketchTensor) -> Result<Vec<CMat>> {
    check_modes(&x.modes(), &omega.tt.modes())?;
    let d = omega.tt.len();
    let mut p = vec![CMat::zeros(0, 0); d + 1];
    p[d] = CMat::from_element(1, 1, ONE);
    for k in (0..d).rev() {
        let xc = x.site_core(k);
        let w = omega.tt.core(k);
        // m[(α, i), b] = Σ_β conj(ω[α, i, β]) p[b, β]
        let m = w.left_view().map(|z| z.conj()) * p[k + 1].transpose();
        let m = DMatrixView::from_slice(m.as_slice(), w.left(), w.phys() * xc.right());
        p[k] = xc.right_view() * m.transpose();
    }
    Ok(p)
}

/// Rounds each column of `coeffs` (shape `R₀ x r`) applied to `columns`:
/// output `i` approximates `Σ_j coeffs[(j, i)] x_j`. The sketch contractions
/// are computed once and shared by all outputs.
pub fn randomized_round_many<S: CoreSource>(
    columns: &[S],
    coeffs: &CMat,
    omega: &SketchTensor,
    tols: &[SweepTolerance],
    max_bond: Option<usize>,
) -> Result<Vec<(TensorTrain, TruncationReport)>> {
    if coeffs.nrows() != columns.len() {
        return Err(Error::Shape(format!("{} coefficient rows for {} columns", coeffs.nrows(), columns.len())));
    }
    if tols.len() != coeffs.ncols() {
        return Err(Error::Shape(format!("{} tolerances for {} outputs", tols.len(), coeffs.ncols())));
    }
    let modes = omega.tt.modes();
    for col in columns {
        check_modes(&col.modes(), &modes)?;
    }
    let tables: Vec<Vec<CMat>> = columns.iter().map(|x| partial_contractions_rl(x, omega)).collect::<Result<_>>()?;
    let d = modes.len();
    let mut out = Vec::with_capacity(coeffs.ncols());
    for (i, tol) in tols.iter().enumerate() {
        let active: Vec<usize> = (0..columns.len()).filter(|&j| coeffs[(j, i)] != ZERO).collect();
        if active.is_empty() {
            let z = TensorTrain::zeros(&modes);
            let rep = TruncationReport { final_bonds: z.bonds(), ..Default::default() };
            out.push((z, rep));
            continue;
        }
        let mut envs: Vec<CMat> = active.iter().map(|_| CMat::from_element(1, 1, ONE)).collect();
        let mut cores = Vec::with_capacity(d);
        let mut bo = 1;
        for k in 0..d {
            let n = modes[k];
            let local: Vec<CMat> = active
                .iter()
                .zip(&envs)
                .map(|(&j, env)| {
                    let xc = columns[j].site_core(k);
                    let t = env * xc.right_view();
                    CMat::from_column_slice(bo * n, xc.right(), t.as_slice())
                })
                .collect();
            if k == d - 1 {
                let mut last = CMat::zeros(bo * n, 1);
                for (&j, t) in active.iter().zip(&local) {
                    last += t * coeffs[(j, i)];
                }
                cores.push(Core::from_left_unfolding(&last, bo, n));
                break;
            }
            let bw = omega.tt.core(k).right();
            let mut s = CMat::zeros(bo * n, bw);
            for ((&j, t), _) in active.iter().zip(&local).zip(&envs) {
                s += (t * &tables[j][k + 1]) * coeffs[(j, i)];
            }
            let (q, _) = qr_thin(s);
            for (env, t) in envs.iter_mut().zip(&local) {
                *env = q.ad_mul(t);
            }
            cores.push(Core::from_left_unfolding(&q, bo, n));
            bo = q.ncols();
        }
        let y = TensorTrain::new(cores)?.canonicalize(d - 1);
        out.push(y.svd_sweep(tol, max_bond));
    }
    Ok(out)
}

/// Randomized compression of `H x` without forming the product train.
pub fn randomized_apply(
    h: &Mpo,
    x: &TensorTrain,
    tol: &SweepTolerance,
    sketch: &SketchPolicy,
    seed: u64,
    max_bond: Option<usize>,
) -> Result<(TensorTrain, TruncationReport)> {
    check_modes(&h.col_modes(), &x.modes())?;
    let src = ProductSource { h, x };
    let omega = make_sketch(&src.modes(), sketch.bond(src.max_bond()), seed);
    let mut res = randomized_round_many(&[src], &CMat::from_element(1, 1, ONE), &omega, std::slice::from_ref(tol), max_bond)?;
    Ok(res.pop().expect("one output"))
}

/// `⟨a, b⟩` for implicit trains.
pub fn source_inner<A: CoreSource + ?Sized, B: CoreSource + ?Sized>(a: &A, b: &B) -> Result<C64> {
    let modes = a.modes();
    check_modes(&modes, &b.modes())?;
    let mut env = CMat::from_element(1, 1, ONE);
    for k in 0..modes.len() {
        env = contract_env(&env, &a.site_core(k), &b.site_core(k));
    }
    Ok(env[(0, 0)])
}

/// Squared distance `‖s - y‖²` for `s = Σ_j c_j x_j`, given `‖s‖²`, via
/// inner products only. Returns the estimate and a rounding-error floor
/// below which the estimate carries no information.
pub fn residual_sq<S: CoreSource>(columns: &[S], c: &[C64], s_norm_sq: f64, y: &TensorTrain) -> Result<(f64, f64)> {
    let mut cross = ZERO;
    for (x, &cj) in columns.iter().zip(c) {
        if cj != ZERO {
            cross += cj * source_inner(x, y)?;
        }
    }
    let y_sq = y.norm().powi(2);
    let est = s_norm_sq + y_sq - 2.0 * cross.re;
    let floor = 64.0 * f64::EPSILON * (s_norm_sq + y_sq) * (columns.len() as f64).max(1.0);
    Ok((est.max(0.0), floor))
}
