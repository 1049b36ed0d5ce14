//! Dense reference solutions for small systems.
//!
//! `ρ` is an `N x N` matrix; vectorization stacks columns, so
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.

use faer::{Mat, Scale};

use crate::error::{Error, Result};
use crate::flow::build_h_eff;
use crate::integrator::ButcherTableau;
use crate::linalg::{c, dagger, embed_local, expm, frob, from_faer, herm_eig, kron, to_faer, CMat, C64, I};
use crate::models::LindbladModel;

/// Largest Hilbert-space dimension the oracle accepts.
pub const ORACLE_CAP: usize = 256;
/// Largest dimension for which the `N² x N²` superoperator is formed.
pub const SUPEROPERATOR_CAP: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLindbladian {
    h_eff: CMat,
    jumps: Vec<CMat>,
}

impl DenseLindbladian {
    /// From a Hamiltonian and dense jump operators.
    pub fn new(h: &CMat, jumps: Vec<CMat>) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n || jumps.iter().any(|l| l.shape() != (n, n)) {
            return Err(Error::Shape("Hamiltonian and jumps must be square of equal size".into()));
        }
        if n > ORACLE_CAP {
            return Err(Error::DenseCap { size: n, cap: ORACLE_CAP });
        }
        let mut h_eff = h.clone();
        for l in &jumps {
            h_eff -= dagger(l) * l * (I * 0.5);
        }
        Ok(Self { h_eff, jumps })
    }

    pub fn dim(&self) -> usize {
        self.h_eff.nrows()
    }

    /// `H - (i/2) Σ L†L`.
    pub fn h_eff(&self) -> &CMat {
        &self.h_eff
    }

    pub fn jumps(&self) -> &[CMat] {
        &self.jumps
    }

    /// `𝓛ρ = -i(H_eff ρ - ρ H_eff†) + Σ L ρ L†`.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let hr = &self.h_eff * rho;
        let mut out = (&hr - rho * self.h_eff.adjoint()) * (-I);
        for l in &self.jumps {
            out += l * rho * l.adjoint();
        }
        out
    }

    /// Explicit superoperator under column stacking.
    pub fn matrix(&self) -> Result<CMat> {
        let n = self.dim();
        if n > SUPEROPERATOR_CAP {
            return Err(Error::DenseCap { size: n * n, cap: SUPEROPERATOR_CAP * SUPEROPERATOR_CAP });
        }
        let id = CMat::identity(n, n);
        let mut m = kron(&id, &self.h_eff) * (-I) + kron(&self.h_eff.conjugate(), &id) * I;
        for l in &self.jumps {
            m += kron(&l.conjugate(), l);
        }
        Ok(m)
    }

    fn norm_bound(&self) -> f64 {
        2.0 * spectral_bound(&self.h_eff) + self.jumps.iter().map(|l| spectral_bound(l).powi(2)).sum::<f64>()
    }
}

/// `sqrt(‖A‖₁ ‖A‖_∞)`, an upper bound on the spectral norm.
fn spectral_bound(a: &CMat) -> f64 {
    let col = (0..a.ncols()).map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
    let row = (0..a.nrows()).map(|i| a.row(i).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
    (col * row).sqrt()
}

fn check_dim(model: &LindbladModel) -> Result<usize> {
    let n: usize = model.modes.iter().product();
    if n > ORACLE_CAP {
        return Err(Error::DenseCap { size: n, cap: ORACLE_CAP });
    }
    Ok(n)
}

/// Dense generator for control interval `k`.
pub fn dense_lindbladian(model: &LindbladModel, k: usize) -> Result<DenseLindbladian> {
    check_dim(model)?;
    let h = model.hamiltonian_at(k).to_dense()?;
    let jumps = model.jumps.ops.iter().map(|op| embed_local(&model.modes, op.site, &op.matrix)).collect();
    DenseLindbladian::new(&h, jumps)
}

/// `exp(𝓛 t) ρ₀` by a Taylor series of the action on substeps small enough
/// that the series converges to roundoff.
pub fn dense_propagate(rho0: &CMat, l: &DenseLindbladian, t: f64) -> Result<CMat> {
    if rho0.shape() != (l.dim(), l.dim()) {
        return Err(Error::Shape(format!("ρ is {:?}, generator acts on {}", rho0.shape(), l.dim())));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("propagation time must be nonnegative, got {t}")));
    }
    // A = -i H_eff, so 𝓛ρ = A ρ + ρ A† + Σ L ρ L†.
    let a = to_faer(&(&l.h_eff * (-I)));
    let a_adj = a.adjoint().to_owned();
    let jumps: Vec<(Mat<C64>, Mat<C64>)> = l.jumps.iter().map(|j| (to_faer(j), to_faer(&j.adjoint()))).collect();
    let apply = |rho: &Mat<C64>| -> Mat<C64> {
        let mut out = &a * rho + rho * &a_adj;
        for (j, jd) in &jumps {
            out += j * rho * jd;
        }
        out
    };
    let nu = l.norm_bound();
    let m = (t * nu).ceil().max(1.0) as usize;
    let dt = t / m as f64;
    let mut rho = to_faer(rho0);
    for _ in 0..m {
        let mut term = rho.clone();
        let mut acc = rho.clone();
        for k in 1..60 {
            term = Scale(c(dt / k as f64)) * apply(&term);
            acc += &term;
            if term.norm_l2() <= 1e-17 * acc.norm_l2() {
                break;
            }
        }
        rho = acc;
    }
    Ok(from_faer(rho.as_ref()))
}

/// Exact solution of a model with piecewise-constant controls from `t0` to `t1`.
pub fn dense_evolve(model: &LindbladModel, rho0: &CMat, t0: f64, t1: f64) -> Result<CMat> {
    check_dim(model)?;
    let mut rho = rho0.clone();
    let mut t = t0;
    while t < t1 {
        let end = match &model.controls {
            Some(p) => {
                let k = model.interval_at(t + 1e-12 * p.interval_length);
                if k + 1 == p.intervals.len() {
                    t1
                } else {
                    ((k + 1) as f64 * p.interval_length).min(t1)
                }
            }
            None => t1,
        };
        let k = model.interval_at(0.5 * (t + end));
        rho = dense_propagate(&rho, &dense_lindbladian(model, k)?, end - t)?;
        t = end;
    }
    Ok(rho)
}

/// Smallest set of columns `X W_k` whose density is within `tau` of `X X†`
/// in Frobenius norm; `tau = 0` drops only numerically zero directions.
pub fn dense_truncate(x: &CMat, tau: f64) -> CMat {
    if x.ncols() == 0 {
        return x.clone();
    }
    let (vals, vecs) = herm_eig(&(x.adjoint() * x));
    let lmax = vals[0].max(0.0);
    let mut keep = vals.len();
    let mut tail = 0.0;
    while keep > 1 {
        let lam = vals[keep - 1].max(0.0);
        if lam <= 1e-15 * lmax || tail + lam * lam <= tau * tau {
            tail += lam * lam;
            keep -= 1;
        } else {
            break;
        }
    }
    x * vecs.columns(0, keep)
}

fn hcat(blocks: &[CMat]) -> CMat {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// One step of the factor scheme on a dense `N x r` factor with flows
/// supplied by `flow(dt)` and truncation `tau` per compression.
pub fn dense_kraus_step_with<F>(v: &CMat, jumps: &[CMat], tab: &ButcherTableau, h: f64, tau: f64, mut flow: F) -> Result<CMat>
where
    F: FnMut(f64) -> Result<CMat>,
{
    tab.validate()?;
    let s = tab.stages();
    let lv = |x: &CMat| -> Vec<CMat> { jumps.iter().map(|l| l * x).collect() };
    let mut stages: Vec<CMat> = Vec::with_capacity(s);
    for i in 0..s {
        let mut blocks = vec![flow(tab.c[i] * h)? * v];
        for j in 0..i {
            if tab.a[i][j] > 0.0 {
                let e = flow((tab.c[i] - tab.c[j]) * h)? * c((tab.a[i][j] * h).sqrt());
                blocks.extend(lv(&stages[j]).iter().map(|w| &e * w));
            }
        }
        stages.push(dense_truncate(&hcat(&blocks), tau));
    }
    let mut blocks = vec![flow(h)? * v];
    for i in 0..s {
        if tab.b[i] > 0.0 {
            let e = flow((1.0 - tab.c[i]) * h)? * c((tab.b[i] * h).sqrt());
            blocks.extend(lv(&stages[i]).iter().map(|w| &e * w));
        }
    }
    let out = dense_truncate(&hcat(&blocks), tau);
    let nrm = frob(&out);
    if !(nrm > 0.0) || !nrm.is_finite() {
        return Err(Error::ZeroFactor);
    }
    Ok(out * c(1.0 / nrm))
}

/// [`dense_kraus_step_with`] using exact exponentials of `H_eff` for the
/// interval containing the step midpoint `t + h/2`.
pub fn dense_kraus_step(v: &CMat, model: &LindbladModel, tab: &ButcherTableau, t: f64, h: f64, tau: f64) -> Result<CMat> {
    check_dim(model)?;
    let k = model.interval_at(t + 0.5 * h);
    let h_eff = build_h_eff(model, k).to_dense()?;
    let jumps: Vec<CMat> = model.jumps.ops.iter().map(|op| embed_local(&model.modes, op.site, &op.matrix)).collect();
    dense_kraus_step_with(v, &jumps, tab, h, tau, |dt| Ok(expm(&(&h_eff * (-I * dt)))))
}

/// Smallest eigenvalue of the Hermitian part of `rho`.
pub fn min_eigenvalue(rho: &CMat) -> f64 {
    herm_eig(rho).0.last().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_part, spin, C64};
    use crate::models::heisenberg_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_mat(n: usize, m: usize, rng: &mut ChaCha20Rng) -> CMat {
        CMat::from_fn(n, m, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_state(n: usize, r: usize, rng: &mut ChaCha20Rng) -> CMat {
        let v = random_mat(n, r, rng);
        let rho = &v * v.adjoint();
        let tr = rho.trace().re;
        rho * c(1.0 / tr)
    }

    fn vec_cols(m: &CMat) -> Vec<C64> {
        m.as_slice().to_vec()
    }

    fn amplitude_damping(t_decay: f64) -> DenseLindbladian {
        DenseLindbladian::new(&CMat::zeros(2, 2), vec![spin::lowering() * c(1.0 / t_decay.sqrt())]).unwrap()
    }

    #[test]
    fn closed_system_superoperator_is_commutator() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let h = hermitian_part(&random_mat(3, 3, &mut rng));
        let l = DenseLindbladian::new(&h, vec![]).unwrap();
        let id = CMat::identity(3, 3);
        let want = (kron(&id, &h) - kron(&h.transpose(), &id)) * (-I);
        assert!(frob(&(l.matrix().unwrap() - want)) < 1e-14);
    }

    #[test]
    fn amplitude_damping_generator() {
        let t = 5.0;
        let m = amplitude_damping(t).matrix().unwrap();
        // vec order: (0,0), (1,0), (0,1), (1,1)
        let g = 1.0 / t;
        let mut want = CMat::zeros(4, 4);
        want[(0, 0)] = c(-g);
        want[(3, 0)] = c(g);
        want[(1, 1)] = c(-g / 2.0);
        want[(2, 2)] = c(-g / 2.0);
        assert!(frob(&(m - want)) < 1e-15);
    }

    #[test]
    fn superoperator_matches_action() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let model = heisenberg_model(3, 7.0).unwrap();
        let l = dense_lindbladian(&model, 0).unwrap();
        let rho = random_state(8, 3, &mut rng);
        let m = l.matrix().unwrap();
        let got = &m * nalgebra::DVector::from_vec(vec_cols(&rho));
        let want = l.apply(&rho);
        for (a, b) in got.iter().zip(want.as_slice()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn action_matches_term_by_term() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let model = heisenberg_model(3, 7.0).unwrap();
        let l = dense_lindbladian(&model, 0).unwrap();
        let rho = random_state(8, 2, &mut rng);
        let h = model.hamiltonian.to_dense().unwrap();
        let mut want = (&h * &rho - &rho * &h) * (-I);
        for j in 0..3 {
            let lj = embed_local(&[2, 2, 2], j, &spin::lowering()) * c(1.0 / 7f64.sqrt());
            let ld = dagger(&lj);
            want += &lj * &rho * &ld - (&ld * &lj * &rho + &rho * &ld * &lj) * c(0.5);
        }
        assert!(frob(&(l.apply(&rho) - want)) < 1e-13);
    }

    #[test]
    fn trace_and_hermiticity_preserved() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let model = heisenberg_model(3, 2.0).unwrap();
        let l = dense_lindbladian(&model, 0).unwrap();
        let m = l.matrix().unwrap();
        // vec(I)† 𝓛 = 0
        let vid = nalgebra::DVector::from_vec(vec_cols(&CMat::identity(8, 8)));
        let left = m.adjoint() * vid;
        assert!(left.norm() < 1e-12);
        for _ in 0..100 {
            let x = hermitian_part(&random_mat(8, 8, &mut rng));
            let y = l.apply(&x);
            assert!(y.trace().norm() < 1e-12);
            assert!(frob(&(&y - dagger(&y))) < 1e-12);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let l = dense_lindbladian(&heisenberg_model(2, 3.0).unwrap(), 0).unwrap();
        let rho = random_state(4, 2, &mut rng);
        assert_eq!(dense_propagate(&rho, &l, 0.0).unwrap(), rho);
    }

    #[test]
    fn amplitude_damping_closed_form() {
        let t_decay = 3.0;
        let l = amplitude_damping(t_decay);
        let mut rho = CMat::zeros(2, 2);
        rho[(0, 0)] = c(0.7);
        rho[(1, 1)] = c(0.3);
        rho[(0, 1)] = C64::new(0.2, 0.1);
        rho[(1, 0)] = C64::new(0.2, -0.1);
        for t in [0.1, 1.0, 7.5] {
            let got = dense_propagate(&rho, &l, t).unwrap();
            let e = (-t / t_decay).exp();
            assert!((got[(0, 0)] - c(0.7 * e)).norm() < 1e-13);
            assert!((got[(1, 1)] - c(1.0 - 0.7 * e)).norm() < 1e-13);
            assert!((got[(0, 1)] - rho[(0, 1)] * e.sqrt()).norm() < 1e-13);
        }
    }

    #[test]
    fn propagation_matches_superoperator_exponential() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let l = dense_lindbladian(&heisenberg_model(2, 1.5).unwrap(), 0).unwrap();
        let rho = random_state(4, 4, &mut rng);
        let e = expm(&(l.matrix().unwrap() * c(0.8)));
        let want = &e * nalgebra::DVector::from_vec(vec_cols(&rho));
        let got = dense_propagate(&rho, &l, 0.8).unwrap();
        for (a, b) in got.as_slice().iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn semigroup_property() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let l = dense_lindbladian(&heisenberg_model(4, 2.0).unwrap(), 0).unwrap();
        let rho = random_state(16, 3, &mut rng);
        let a = dense_propagate(&dense_propagate(&rho, &l, 0.4).unwrap(), &l, 0.9).unwrap();
        let b = dense_propagate(&rho, &l, 1.3).unwrap();
        assert!(frob(&(a - &b)) < 1e-10);
        assert!(min_eigenvalue(&b) >= -1e-10);
        assert!((b.trace() - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let m = heisenberg_model(9, 2.0).unwrap();
        assert!(matches!(dense_lindbladian(&m, 0), Err(Error::DenseCap { .. })));
        let l = dense_lindbladian(&heisenberg_model(5, 2.0).unwrap(), 0).unwrap();
        assert!(l.matrix().is_err());
    }

    #[test]
    fn truncation_respects_tolerance() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut x = random_mat(10, 6, &mut rng);
        for j in 0..6 {
            let s = 10f64.powi(-(j as i32));
            x.column_mut(j).scale_mut(s);
        }
        let rho = &x * x.adjoint();
        for tau in [0.0, 1e-8, 1e-4, 1e-2] {
            let y = dense_truncate(&x, tau);
            let err = frob(&(&rho - &y * y.adjoint()));
            assert!(err <= tau + 1e-13, "tau {tau}: {err}");
        }
        assert_eq!(dense_truncate(&x, 0.0).ncols(), 6);
        assert!(dense_truncate(&x, 1e-2).ncols() < 6);
    }

    #[test]
    fn kraus_step_without_jumps_is_unitary_conjugation() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let model = heisenberg_model(3, f64::INFINITY).unwrap();
        let v = random_mat(8, 2, &mut rng);
        let v = &v * c(1.0 / frob(&v));
        let h = model.hamiltonian.to_dense().unwrap();
        let u = expm(&(&h * (-I * 0.1)));
        for tab in [ButcherTableau::midpoint(), ButcherTableau::rk4()] {
            let out = dense_kraus_step(&v, &model, &tab, 0.0, 0.1, 0.0).unwrap();
            let want = &u * &v * v.adjoint() * dagger(&u);
            assert!(frob(&(&out * out.adjoint() - want)) < 1e-13);
        }
    }

    #[test]
    fn kraus_step_local_error_is_third_order() {
        let model = heisenberg_model(3, 2.0).unwrap();
        let l = dense_lindbladian(&model, 0).unwrap();
        let mut v = CMat::zeros(8, 1);
        v[(0b010, 0)] = c(0.6);
        v[(0b101, 0)] = C64::new(0.0, 0.8);
        let rho = &v * v.adjoint();
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let out = dense_kraus_step(&v, &model, &ButcherTableau::midpoint(), 0.0, h, 0.0).unwrap();
                let exact = dense_propagate(&rho, &l, h).unwrap();
                frob(&(&out * out.adjoint() - exact))
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 3.0).abs() < 0.3, "slope {slope} from {errs:?}");
        }
        let out = dense_kraus_step(&v, &model, &ButcherTableau::rk4(), 0.0, 0.1, 0.0).unwrap();
        assert!(((&out * out.adjoint()).trace() - c(1.0)).norm() < 1e-13);
    }
}
