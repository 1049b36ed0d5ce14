//! Site-local jump operators and the compression of `[L_1 v, ..., L_P v]`.
//!
//! All members `L_j v` of a family share every core of `v` except one, so
//! the family stores `v` once in mixed-canonical pieces: left-orthogonal
//! cores `U_k`, right-orthogonal cores `V_k` and the center cores `C_k`
//! such that `v = U_1 ... U_{k-1} C_k V_{k+1} ... V_d` for every `k`.

use std::cell::Cell;

use serde::Serialize;

use crate::dm_compress::{column_error_budget, compress_columns, tt_compress, ColumnSet, CompressOptions, CompressReport, FactorMatrix};
use crate::error::{check_modes, Error, Result};
use crate::linalg::{qr_thin, CMat, C64, ZERO};
use crate::tt::{contract_env, Core, SweepTolerance, TensorTrain};

#[derive(Clone, Debug, PartialEq)]
pub struct JumpOp {
    pub site: usize,
    pub matrix: CMat,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct JumpOperatorSet {
    pub ops: Vec<JumpOp>,
}

impl JumpOperatorSet {
    pub fn new(ops: Vec<JumpOp>) -> Self {
        Self { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn validate(&self, modes: &[usize]) -> Result<()> {
        for op in &self.ops {
            let n = *modes
                .get(op.site)
                .ok_or_else(|| Error::Model(format!("jump operator on site {} of a {}-site chain", op.site, modes.len())))?;
            if op.matrix.shape() != (n, n) {
                return Err(Error::Shape(format!("jump operator {:?} on a site of size {n}", op.matrix.shape())));
            }
        }
        Ok(())
    }
}

/// `L v` for `L` acting on one site; only that core changes.
pub fn apply_jump(m: &CMat, site: usize, v: &TensorTrain) -> Result<TensorTrain> {
    let n = *v.modes().get(site).ok_or_else(|| Error::InvalidArgument(format!("site {site} out of range")))?;
    if m.shape() != (n, n) {
        return Err(Error::Shape(format!("{:?} local matrix on a site of size {n}", m.shape())));
    }
    Ok(v.with_core(site, v.core(site).apply_local(m)))
}

#[derive(Clone, Debug)]
pub struct SharedJumpFamily {
    modes: Vec<usize>,
    u: Vec<Core>,
    c: Vec<Core>,
    v: Vec<Core>,
    ops: Vec<JumpOp>,
    /// `L̂_j C_{k_j}` per member.
    centers: Vec<Core>,
    contractions: Cell<usize>,
}

impl SharedJumpFamily {
    pub fn new(base: &TensorTrain, ops: &JumpOperatorSet) -> Result<Self> {
        let modes = base.modes();
        ops.validate(&modes)?;
        let d = modes.len();
        let right = base.canonicalize(0);
        let v: Vec<Core> = right.cores().to_vec();
        let mut u = Vec::with_capacity(d);
        let mut c = Vec::with_capacity(d);
        let mut center = v[0].clone();
        for k in 0..d {
            c.push(center.clone());
            if k + 1 == d {
                u.push(center.clone());
                break;
            }
            let (l, n) = (center.left(), center.phys());
            let (q, r) = qr_thin(center.left_unfolding());
            u.push(Core::from_left_unfolding(&q, l, n));
            let next = &v[k + 1];
            center = Core::from_right_unfolding(&(r * next.right_view()), next.phys(), next.right());
        }
        let centers = ops.ops.iter().map(|op| c[op.site].apply_local(&op.matrix)).collect();
        Ok(Self { modes, u, c, v, ops: ops.ops.clone(), centers, contractions: Cell::new(0) })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    /// The member `L_j v` as a standalone train.
    pub fn member(&self, j: usize) -> TensorTrain {
        let s = self.ops[j].site;
        let cores = (0..self.modes.len())
            .map(|k| match k.cmp(&s) {
                std::cmp::Ordering::Less => self.u[k].clone(),
                std::cmp::Ordering::Equal => self.centers[j].clone(),
                std::cmp::Ordering::Greater => self.v[k].clone(),
            })
            .collect();
        TensorTrain::new(cores).expect("consistent gauge")
    }

    pub fn member_norm_sq(&self, j: usize) -> f64 {
        self.centers[j].frob_norm().powi(2)
    }

    /// Number of core contractions performed by Gram computations so far.
    pub fn contraction_count(&self) -> usize {
        self.contractions.get()
    }

    fn env_step(&self, env: &CMat, x: &Core, y: &Core) -> CMat {
        self.contractions.set(self.contractions.get() + 1);
        contract_env(env, x, y)
    }

    /// Gram matrix `W(a, b) = ⟨L_b v, L_a v⟩` over a subset of members.
    pub fn gram_subset(&self, idx: &[usize]) -> CMat {
        let m = idx.len();
        let mut w = CMat::zeros(m, m);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&a| self.ops[idx[a]].site);
        for (pos, &a) in order.iter().enumerate() {
            let ja = idx[a];
            let sa = self.ops[ja].site;
            let ca = &self.centers[ja];
            w[(a, a)] = C64::new(self.member_norm_sq(ja), 0.0);
            // Same-site partners: both members differ from v in one shared core.
            let mut later = Vec::new();
            for &b in &order[pos + 1..] {
                let jb = idx[b];
                if self.ops[jb].site == sa {
                    let ip = core_inner(&self.centers[jb], ca);
                    w[(a, b)] = ip;
                    w[(b, a)] = ip.conj();
                } else {
                    later.push(b);
                }
            }
            if later.is_empty() {
                continue;
            }
            // Walk right from site sa; ja's member carries V cores, the
            // partner still carries U cores until its own site.
            let mut p = self.env_step(&CMat::identity(ca.left(), ca.left()), ca, &self.u[sa]);
            let mut site = sa + 1;
            for &b in &later {
                let jb = idx[b];
                let sb = self.ops[jb].site;
                while site < sb {
                    p = self.env_step(&p, &self.v[site], &self.u[site]);
                    site += 1;
                }
                let fin = self.env_step(&p, &self.v[sb], &self.centers[jb]);
                // Remaining cores are V on both sides and contract to the identity.
                let ip: C64 = (0..fin.nrows()).map(|i| fin[(i, i)]).sum();
                // `fin` pairs x = member ja with y = member jb: ⟨L_ja v, L_jb v⟩ = W(b, a).
                w[(b, a)] = ip;
                w[(a, b)] = ip.conj();
            }
        }
        w
    }

    pub fn shared_gram(&self) -> CMat {
        self.gram_subset(&(0..self.len()).collect::<Vec<_>>())
    }

    /// `Σ_j c_j L_j v` over a subset of members, with bonds at most the sum of
    /// the left- and right-canonical bonds of `v`.
    pub fn lincomb_subset(&self, idx: &[usize], coeffs: &[C64]) -> Result<TensorTrain> {
        if idx.len() != coeffs.len() {
            return Err(Error::Shape(format!("{} coefficients for {} members", coeffs.len(), idx.len())));
        }
        let d = self.modes.len();
        let mut w: Vec<Option<Core>> = vec![None; d];
        for (&j, &cj) in idx.iter().zip(coeffs) {
            if cj == ZERO {
                continue;
            }
            let s = self.ops[j].site;
            let mut term = self.centers[j].clone();
            term.scale(cj);
            w[s] = Some(match w[s].take() {
                None => term,
                Some(mut acc) => {
                    acc.data_mut().iter_mut().zip(term.data()).for_each(|(a, b)| *a += b);
                    acc
                }
            });
        }
        let wk = |k: usize| w[k].clone().unwrap_or_else(|| Core::zeros(self.c[k].left(), self.modes[k], self.c[k].right()));
        if d == 1 {
            return TensorTrain::new(vec![wk(0)]);
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let n = self.modes[k];
            let (vk, uk, wcore) = (&self.v[k], &self.u[k], wk(k));
            if k == 0 {
                let (bv, bu) = (vk.right(), uk.right());
                let mut y = Core::zeros(1, n, bv + bu);
                for i in 0..n {
                    for b in 0..bv {
                        y.set(0, i, b, wcore.get(0, i, b));
                    }
                    for b in 0..bu {
                        y.set(0, i, bv + b, uk.get(0, i, b));
                    }
                }
                cores.push(y);
            } else if k == d - 1 {
                let (lv, lu) = (vk.left(), uk.left());
                let mut y = Core::zeros(lv + lu, n, 1);
                for i in 0..n {
                    for a in 0..lv {
                        y.set(a, i, 0, vk.get(a, i, 0));
                    }
                    for a in 0..lu {
                        y.set(lv + a, i, 0, wcore.get(a, i, 0));
                    }
                }
                cores.push(y);
            } else {
                let (lv, lu, rv, ru) = (vk.left(), uk.left(), vk.right(), uk.right());
                let mut y = Core::zeros(lv + lu, n, rv + ru);
                for i in 0..n {
                    for b in 0..rv {
                        for a in 0..lv {
                            y.set(a, i, b, vk.get(a, i, b));
                        }
                        for a in 0..lu {
                            y.set(lv + a, i, b, wcore.get(a, i, b));
                        }
                    }
                    for b in 0..ru {
                        for a in 0..lu {
                            y.set(lv + a, i, rv + b, uk.get(a, i, b));
                        }
                    }
                }
                cores.push(y);
            }
        }
        TensorTrain::new(cores)
    }

    pub fn shared_lincomb(&self, coeffs: &[C64]) -> Result<TensorTrain> {
        self.lincomb_subset(&(0..self.len()).collect::<Vec<_>>(), coeffs)
    }
}

fn core_inner(x: &Core, y: &Core) -> C64 {
    x.data().iter().zip(y.data()).map(|(a, b)| a * b.conj()).sum()
}

impl ColumnSet for SharedJumpFamily {
    fn modes(&self) -> Vec<usize> {
        self.modes.clone()
    }
    fn count(&self) -> usize {
        self.len()
    }
    fn norms_sq(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.member_norm_sq(j)).collect()
    }
    fn gram_of(&self, keep: &[usize]) -> CMat {
        self.gram_subset(keep)
    }
    fn combine(
        &self,
        keep: &[usize],
        coeffs: &CMat,
        sigmas: &[f64],
        tau_tt: f64,
        _opts: &CompressOptions,
    ) -> Result<(Vec<TensorTrain>, f64, usize)> {
        let r = coeffs.ncols();
        let per_term = tau_tt.max(0.0) / r.max(1) as f64;
        let mut out = Vec::with_capacity(r);
        let mut bound = 0.0;
        for i in 0..r {
            let c: Vec<C64> = coeffs.column(i).iter().copied().collect();
            let exact = self.lincomb_subset(keep, &c)?;
            let eps = column_error_budget(sigmas[i], per_term);
            let (y, rep) = exact.svd_sweep(&SweepTolerance::Total(eps), None);
            let e = rep.error();
            bound += 2.0 * sigmas[i] * e + e * e;
            out.push(y);
        }
        Ok((out, bound, 0))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct JumpCompressReport {
    pub stage1_columns: usize,
    pub stage2: CompressReport,
    pub bound: f64,
}

/// Two-stage compression of `[L_1 v_1, ..., L_P v_1, ..., L_P v_r]`: each
/// column's family is compressed with budget `tau / (2 r)` using the shared
/// structure, then the concatenation is compressed with `tau / 2`.
pub fn tt_compress_l(
    v: &FactorMatrix,
    ops: &JumpOperatorSet,
    tau: f64,
    opts: &CompressOptions,
) -> Result<(FactorMatrix, JumpCompressReport)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("compression tolerance must be positive, got {tau}")));
    }
    let modes = v.modes().to_vec();
    ops.validate(&modes)?;
    let mut report = JumpCompressReport::default();
    if v.is_empty() || ops.is_empty() {
        return Ok((FactorMatrix::empty(modes), report));
    }
    let per_col = tau / (2.0 * v.rank() as f64);
    let mut stage1 = FactorMatrix::empty(modes.clone());
    for col in v.columns() {
        let fam = SharedJumpFamily::new(col, ops)?;
        let (part, rep) = compress_columns(&fam, per_col, opts)?;
        report.bound += rep.total_bound();
        stage1.extend(part)?;
    }
    report.stage1_columns = stage1.rank();
    if stage1.trace() == 0.0 {
        return Ok((FactorMatrix::from_column(TensorTrain::zeros(&modes)), report));
    }
    let (out, rep2) = tt_compress(&stage1, tau / 2.0, opts)?;
    report.bound += rep2.total_bound();
    report.stage2 = rep2;
    Ok((out, report))
}

/// Exact (uncompressed) `[L_1 v_1, ..., L_P v_r]`, column-major over `v`.
pub fn apply_all(v: &FactorMatrix, ops: &JumpOperatorSet) -> Result<FactorMatrix> {
    let mut out = FactorMatrix::empty(v.modes().to_vec());
    for col in v.columns() {
        for op in &ops.ops {
            out.push(apply_jump(&op.matrix, op.site, col)?)?;
        }
    }
    check_modes(out.modes(), v.modes())?;
    Ok(out)
}
