//! Positivity-preserving Runge–Kutta stepping of `ρ = V V†`.
//!
//! Every stage value is a factor matrix; Lindblad jump contributions enter as
//! extra columns `√(a_ij h) L V^j`, so each stage density is PSD by
//! construction. Compression keeps the rank and TT bonds in check.

use serde::{Deserialize, Serialize};

use crate::dm_compress::{tt_compress, CompressOptions, FactorMatrix};
use crate::error::{Error, Result};
use crate::flow::{mix_seed, schrodinger_solve, FlowCache, FlowOptions, FlowOperator};
use crate::jump_ops::tt_compress_l;
use crate::linalg::c;
use crate::models::LindbladModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ButcherTableau {
    /// Row-major `s x s`, strictly lower triangular.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub order: u32,
}

impl ButcherTableau {
    pub fn euler() -> Self {
        Self { a: vec![vec![0.0]], b: vec![1.0], c: vec![0.0], order: 1 }
    }

    pub fn midpoint() -> Self {
        Self { a: vec![vec![0.0, 0.0], vec![0.5, 0.0]], b: vec![0.0, 1.0], c: vec![0.0, 0.5], order: 2 }
    }

    pub fn rk4() -> Self {
        Self {
            a: vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![0.0, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
            order: 4,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "euler" => Ok(Self::euler()),
            "midpoint" => Ok(Self::midpoint()),
            "rk4" => Ok(Self::rk4()),
            other => Err(Error::Tableau(format!("unknown tableau '{other}' (expected euler, midpoint or rk4)"))),
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.b.len();
        if s == 0 {
            return Err(Error::Tableau("no stages".into()));
        }
        if self.c.len() != s || self.a.len() != s || self.a.iter().any(|row| row.len() != s) {
            return Err(Error::Tableau(format!("A, b and c must describe {s} stages")));
        }
        if self.order == 0 {
            return Err(Error::Tableau("order must be positive".into()));
        }
        let all = self.a.iter().flatten().chain(&self.b).chain(&self.c);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::Tableau("non-finite coefficient".into()));
        }
        for (i, row) in self.a.iter().enumerate() {
            if row[i..].iter().any(|&x| x != 0.0) {
                return Err(Error::Tableau(format!("row {i} of A is not strictly lower triangular")));
            }
            if row.iter().any(|&x| x < 0.0) {
                return Err(Error::Tableau(format!("row {i} of A has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - self.c[i]).abs() > 1e-12 {
                return Err(Error::Tableau(format!("row {i} of A sums to {sum}, c = {}", self.c[i])));
            }
        }
        if self.b.iter().any(|&x| x < 0.0) {
            return Err(Error::Tableau("negative weight in b".into()));
        }
        let sum: f64 = self.b.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Tableau(format!("weights sum to {sum}")));
        }
        Ok(())
    }
}

/// Per-step truncation budget as a function of the step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TolPolicy {
    Fixed { tau: f64 },
    /// `τ_step = h^(p+1)` with `p` the tableau order.
    Order,
    /// `τ_step = κ h`: error rate `κ` per unit time.
    Rate { kappa: f64 },
}

impl TolPolicy {
    pub fn tau_step(&self, h: f64, order: u32) -> f64 {
        match *self {
            TolPolicy::Fixed { tau } => tau,
            TolPolicy::Order => h.powi(order as i32 + 1),
            TolPolicy::Rate { kappa } => kappa * h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TolPolicy::Fixed { tau } if !(tau > 0.0) => Err(Error::InvalidArgument(format!("tau must be positive, got {tau}"))),
            TolPolicy::Rate { kappa } if !(kappa > 0.0) => {
                Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepOptions {
    pub compress: CompressOptions,
    pub flow: FlowOptions,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub step: u64,
    /// Time at the end of the step.
    pub time: f64,
    pub tau_step: f64,
    /// Columns entering the final compression.
    pub rank_before: usize,
    pub rank_after: usize,
    pub stage_ranks: Vec<usize>,
    pub max_bond: usize,
    /// `Tr(V V†)` before normalization.
    pub trace: f64,
    /// Sum of every truncation error bound reported during the step.
    pub spent: f64,
    pub fallbacks: usize,
    pub seconds_jump: f64,
    pub seconds_compress: f64,
    pub seconds_flow: f64,
}

#[cfg(not(target_arch = "wasm32"))]
struct Clock(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Clock {
    fn start() -> Self {
        Self(std::time::Instant::now())
    }
    fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(target_arch = "wasm32")]
struct Clock;

#[cfg(target_arch = "wasm32")]
impl Clock {
    fn start() -> Self {
        Self
    }
    fn secs(&self) -> f64 {
        0.0
    }
}

/// Scales `V` so that `Σ ‖v_i‖² = 1`.
pub fn trace_normalize(v: &FactorMatrix) -> Result<FactorMatrix> {
    let tr = v.trace();
    if !tr.is_finite() {
        return Err(Error::NonFinite { stage: "trace normalization".into() });
    }
    if tr == 0.0 {
        return Err(Error::ZeroFactor);
    }
    Ok(v.scaled(c(1.0 / tr.sqrt())))
}

fn check_finite(v: &FactorMatrix, stage: impl FnOnce() -> String) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage: stage() })
    }
}

/// Stepper holding the model's flow-operator cache.
#[derive(Debug)]
pub struct Integrator {
    cache: FlowCache,
    tableau: ButcherTableau,
    opts: StepOptions,
    steps: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<FactorMatrix>,
    pub stats: Vec<StepStats>,
}

impl Integrator {
    pub fn new(model: &LindbladModel, tableau: ButcherTableau, opts: StepOptions) -> Result<Self> {
        tableau.validate()?;
        opts.compress.validate()?;
        Ok(Self { cache: FlowCache::new(model, opts.flow.clone())?, tableau, opts, steps: 0 })
    }

    pub fn model(&self) -> &LindbladModel {
        self.cache.model()
    }

    pub fn tableau(&self) -> &ButcherTableau {
        &self.tableau
    }

    pub fn options(&self) -> &StepOptions {
        &self.opts
    }

    /// Steps taken so far; feeds the per-step seed.
    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    fn flow(&mut self, k: usize, h: f64, stats: &mut StepStats) -> Result<std::sync::Arc<FlowOperator>> {
        let clock = Clock::start();
        let f = self.cache.get(k, h);
        stats.seconds_flow += clock.secs();
        f
    }

    fn solve(&self, f: &FlowOperator, v: &FactorMatrix, scale: f64, tol: f64, seed: u64, stats: &mut StepStats) -> Result<FactorMatrix> {
        let clock = Clock::start();
        let (out, rep) = schrodinger_solve(f, v, c(scale), tol, &self.opts.flow, seed)?;
        stats.seconds_flow += clock.secs();
        stats.spent += rep.error;
        Ok(out)
    }

    fn compress(&self, x: &FactorMatrix, tau: f64, seed: u64, stats: &mut StepStats) -> Result<FactorMatrix> {
        let clock = Clock::start();
        let (out, rep) = tt_compress(x, tau, &self.opts.compress.with_seed(seed))?;
        stats.seconds_compress += clock.secs();
        stats.spent += rep.total_bound();
        stats.fallbacks += rep.fallbacks;
        Ok(out)
    }

    fn jumps(&self, v: &FactorMatrix, tau: f64, seed: u64, stats: &mut StepStats) -> Result<FactorMatrix> {
        let clock = Clock::start();
        let (out, rep) = tt_compress_l(v, &self.model().jumps, tau, &self.opts.compress.with_seed(seed))?;
        stats.seconds_jump += clock.secs();
        stats.spent += rep.bound;
        stats.fallbacks += rep.stage2.fallbacks;
        Ok(out)
    }

    /// One step from time `t` to `t + h` with total truncation budget `tau_step`.
    pub fn step(&mut self, v: &FactorMatrix, t: f64, h: f64, tau_step: f64) -> Result<(FactorMatrix, StepStats)> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
        }
        if !(tau_step > 0.0) {
            return Err(Error::InvalidArgument(format!("tau_step must be positive, got {tau_step}")));
        }
        if v.modes() != self.model().modes.as_slice() {
            return Err(Error::ModeMismatch { left: self.model().modes.clone(), right: v.modes().to_vec() });
        }
        let tab = self.tableau.clone();
        let s = tab.stages();
        let tau = tau_step / (3.0 * (s as f64 + 1.0));
        let k = self.model().interval_at(t + 0.5 * h);
        let has_jumps = !self.model().jumps.is_empty();
        let base = mix_seed(self.opts.seed, &[self.steps]);
        let mut stats = StepStats { step: self.steps, time: t + h, tau_step, ..Default::default() };

        let needs_w = |j: usize| has_jumps && (tab.b[j] > 0.0 || (j + 1..s).any(|i| tab.a[i][j] > 0.0));
        let mut stages: Vec<FactorMatrix> = Vec::with_capacity(s);
        let mut w: Vec<Option<FactorMatrix>> = Vec::with_capacity(s);
        for i in 0..s {
            let sd = |kind: u64, j: usize| mix_seed(base, &[i as u64, kind, j as u64]);
            let f = self.flow(k, tab.c[i] * h, &mut stats)?;
            let mut x = self.solve(&f, v, 1.0, tau, sd(0, 0), &mut stats)?;
            if i > 0 {
                let prev = &stages[i - 1];
                let wj = if needs_w(i - 1) { Some(self.jumps(prev, tau, sd(1, i - 1), &mut stats)?) } else { None };
                w.push(wj);
            }
            for j in 0..i {
                let a = tab.a[i][j];
                let Some(wj) = w[j].as_ref().filter(|_| a > 0.0) else { continue };
                let f = self.flow(k, (tab.c[i] - tab.c[j]) * h, &mut stats)?;
                let y = self.solve(&f, wj, (a * h).sqrt(), tau / i as f64, sd(2, j), &mut stats)?;
                x.extend(y)?;
            }
            check_finite(&x, || format!("stage {i} assembly"))?;
            let vi = self.compress(&x, tau, sd(3, 0), &mut stats)?;
            check_finite(&vi, || format!("stage {i} compression"))?;
            stats.stage_ranks.push(vi.rank());
            stages.push(vi);
        }

        let sd = |kind: u64, j: usize| mix_seed(base, &[s as u64, kind, j as u64]);
        let f = self.flow(k, h, &mut stats)?;
        let mut x = self.solve(&f, v, 1.0, tau, sd(0, 0), &mut stats)?;
        let ws = if needs_w(s - 1) { Some(self.jumps(&stages[s - 1], tau, sd(1, s - 1), &mut stats)?) } else { None };
        w.push(ws);
        for (i, wi) in w.iter().enumerate() {
            let b = tab.b[i];
            let Some(wi) = wi.as_ref().filter(|_| b > 0.0) else { continue };
            let f = self.flow(k, (1.0 - tab.c[i]) * h, &mut stats)?;
            let y = self.solve(&f, wi, (b * h).sqrt(), tau / s as f64, sd(2, i), &mut stats)?;
            x.extend(y)?;
        }
        check_finite(&x, || "final stage assembly".into())?;
        stats.rank_before = x.rank();
        let out = self.compress(&x, tau, sd(3, 0), &mut stats)?;
        check_finite(&out, || "final compression".into())?;
        stats.trace = out.trace();
        let out = trace_normalize(&out)?;
        stats.rank_after = out.rank();
        stats.max_bond = out.max_bond();
        self.steps += 1;
        Ok((out, stats))
    }

    /// Integrates from `t = 0` to `t_final`. The last step is shortened when
    /// `t_final` is not a multiple of `h`. Snapshots are taken every
    /// `snapshot_every` steps, plus the initial and final states.
    pub fn run(
        &mut self,
        v0: &FactorMatrix,
        h: f64,
        t_final: f64,
        policy: TolPolicy,
        snapshot_every: usize,
    ) -> Result<Trajectory> {
        self.run_with(v0, h, t_final, policy, snapshot_every, |_, _, _| {})
    }

    /// [`Integrator::run`] with a callback after every step.
    pub fn run_with<F>(
        &mut self,
        v0: &FactorMatrix,
        h: f64,
        t_final: f64,
        policy: TolPolicy,
        snapshot_every: usize,
        mut on_step: F,
    ) -> Result<Trajectory>
    where
        F: FnMut(f64, &FactorMatrix, &StepStats),
    {
        if !(t_final > 0.0) || !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("need positive h and T, got h = {h}, T = {t_final}")));
        }
        policy.validate()?;
        let n_steps = step_count(h, t_final);
        let every = snapshot_every.max(1);
        let mut traj = Trajectory::default();
        let mut v = trace_normalize(v0)?;
        traj.times.push(0.0);
        traj.snapshots.push(v.clone());
        for n in 0..n_steps {
            let t = n as f64 * h;
            let dt = if n + 1 == n_steps { t_final - t } else { h };
            let tau = policy.tau_step(dt, self.tableau.order);
            let (next, st) = self.step(&v, t, dt, tau)?;
            v = next;
            on_step(t + dt, &v, &st);
            traj.stats.push(st);
            if (n + 1) % every == 0 || n + 1 == n_steps {
                traj.times.push(t + dt);
                traj.snapshots.push(v.clone());
            }
        }
        Ok(traj)
    }
}

/// Number of steps of size `h` covering `[0, t_final]`, tolerant of roundoff
/// in `t_final / h`.
pub fn step_count(h: f64, t_final: f64) -> usize {
    let q = t_final / h;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.max(1.0) {
        (r as usize).max(1)
    } else {
        q.ceil() as usize
    }
}

/// One step of a throwaway integrator.
pub fn step(
    v: &FactorMatrix,
    model: &LindbladModel,
    tab: &ButcherTableau,
    h: f64,
    tau_step: f64,
    opts: &StepOptions,
) -> Result<(FactorMatrix, StepStats)> {
    Integrator::new(model, tab.clone(), opts.clone())?.step(v, 0.0, h, tau_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob, CMat, C64};
    use crate::models::{heisenberg_model, product_state};
    use crate::oracle::{dense_kraus_step_with, dense_lindbladian, dense_propagate, min_eigenvalue};
    use crate::tt::TensorTrain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_factor(modes: &[usize], r: usize, bond: usize, seed: u64) -> FactorMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let cols = (0..r).map(|_| TensorTrain::random(modes, bond, &mut rng)).collect();
        trace_normalize(&FactorMatrix::new(modes.to_vec(), cols).unwrap()).unwrap()
    }

    #[test]
    fn shipped_tableaus_validate() {
        for t in [ButcherTableau::euler(), ButcherTableau::midpoint(), ButcherTableau::rk4()] {
            t.validate().unwrap();
        }
        assert_eq!(ButcherTableau::by_name("rk4").unwrap().order, 4);
        assert!(ButcherTableau::by_name("heun3").is_err());
    }

    #[test]
    fn invalid_tableaus_are_rejected() {
        let mut t = ButcherTableau::midpoint();
        t.a[0][1] = 0.5;
        assert!(t.validate().is_err());
        let mut t = ButcherTableau::midpoint();
        t.c[1] = 0.4;
        assert!(t.validate().is_err());
        let mut t = ButcherTableau::midpoint();
        t.b = vec![0.5, 0.6];
        assert!(t.validate().is_err());
        let t = ButcherTableau { a: vec![vec![0.0, 0.0], vec![-0.5, 0.0]], b: vec![0.0, 1.0], c: vec![0.0, -0.5], order: 2 };
        assert!(t.validate().is_err());
    }

    #[test]
    fn tolerance_policies() {
        assert_eq!(TolPolicy::Fixed { tau: 1e-6 }.tau_step(0.1, 2), 1e-6);
        assert!((TolPolicy::Order.tau_step(0.1, 2) - 1e-3).abs() < 1e-18);
        assert!((TolPolicy::Rate { kappa: 1e-5 }.tau_step(0.01, 2) - 1e-7).abs() < 1e-20);
        assert!(TolPolicy::Rate { kappa: 0.0 }.validate().is_err());
    }

    #[test]
    fn step_count_handles_roundoff() {
        assert_eq!(step_count(0.1, 1.0), 10);
        assert_eq!(step_count(1e-3, 1.0), 1000);
        assert_eq!(step_count(0.3, 1.0), 4);
    }

    #[test]
    fn normalize_scales_column_norms() {
        let modes = vec![2, 2];
        let a = TensorTrain::basis_state(&modes, &[0, 0]).unwrap().scaled(c(3.0));
        let b = TensorTrain::basis_state(&modes, &[1, 1]).unwrap().scaled(c(4.0));
        let v = trace_normalize(&FactorMatrix::new(modes, vec![a, b]).unwrap()).unwrap();
        let n = v.column_norms();
        assert!((n[0] - 0.6).abs() < 1e-15 && (n[1] - 0.8).abs() < 1e-15);
        let again = trace_normalize(&v).unwrap();
        assert!(frob(&(again.to_dense().unwrap() - v.to_dense().unwrap())) < 1e-15);
        assert!(matches!(trace_normalize(&FactorMatrix::empty(vec![2])), Err(Error::ZeroFactor)));
    }

    #[test]
    fn normalize_random_factor_has_unit_trace() {
        let v = random_factor(&[2, 3, 2], 3, 2, 1);
        let rho = v.density().unwrap();
        assert!((rho.trace() - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn closed_system_step_is_pure_propagation() {
        let model = heisenberg_model(4, f64::INFINITY).unwrap();
        let v = product_state(&[0, 1, 1, 0], &model.modes).unwrap();
        let h = model.hamiltonian.to_dense().unwrap();
        let u = crate::linalg::expm(&(h * C64::new(0.0, -0.05)));
        for tab in [ButcherTableau::midpoint(), ButcherTableau::rk4()] {
            let (out, st) = step(&v, &model, &tab, 0.05, 1e-8, &StepOptions::default()).unwrap();
            assert_eq!(out.rank(), 1);
            assert!((out.trace() - 1.0).abs() < 1e-14);
            let psi = &u * v.to_dense().unwrap();
            let rho = out.density().unwrap();
            // Strang splitting error only
            assert!(frob(&(rho - &psi * psi.adjoint())) < 1e-4);
            assert_eq!(st.rank_after, 1);
        }
    }

    #[test]
    fn amplitude_damping_matches_closed_form() {
        let t_decay = 0.5;
        let model = heisenberg_model(1, t_decay).unwrap();
        let v0 = product_state(&[0], &[2]).unwrap();
        let mut it = Integrator::new(&model, ButcherTableau::midpoint(), StepOptions::default()).unwrap();
        let traj = it.run(&v0, 1e-3, 1.0, TolPolicy::Order, 1000).unwrap();
        let rho = traj.snapshots.last().unwrap().density().unwrap();
        let e = (-1.0f64 / t_decay).exp();
        assert!((rho[(0, 0)].re - e).abs() < 1e-5, "{} vs {e}", rho[(0, 0)].re);
        assert!((rho[(1, 1)].re - (1.0 - e)).abs() < 1e-5);
    }

    #[test]
    fn step_matches_dense_replication_with_same_flows() {
        let model = heisenberg_model(4, 3.0).unwrap();
        let v = random_factor(&model.modes, 2, 2, 2);
        let tau_step = 1e-6;
        let tab = ButcherTableau::midpoint();
        let mut it = Integrator::new(&model, tab.clone(), StepOptions::default()).unwrap();
        let (out, st) = it.step(&v, 0.0, 0.05, tau_step).unwrap();
        assert!(st.spent <= tau_step);
        let jumps: Vec<CMat> =
            model.jumps.ops.iter().map(|op| crate::linalg::embed_local(&model.modes, op.site, &op.matrix)).collect();
        let mut cache = FlowCache::new(&model, FlowOptions::default()).unwrap();
        let dense = dense_kraus_step_with(&v.to_dense().unwrap(), &jumps, &tab, 0.05, 0.0, |dt| {
            cache.get(0, dt).and_then(|f| f.to_dense())
        })
        .unwrap();
        let diff = frob(&(out.density().unwrap() - &dense * dense.adjoint()));
        assert!(diff <= 2.0 * tau_step, "{diff}");
    }

    #[test]
    fn reported_spending_stays_within_budget() {
        let model = heisenberg_model(5, 2.0).unwrap();
        let mut v = random_factor(&model.modes, 3, 2, 3);
        let mut it = Integrator::new(&model, ButcherTableau::rk4(), StepOptions::default()).unwrap();
        for n in 0..5 {
            let (next, st) = it.step(&v, n as f64 * 0.05, 0.05, 1e-4).unwrap();
            assert!(st.spent <= st.tau_step, "{} > {}", st.spent, st.tau_step);
            assert!(st.rank_after <= st.rank_before);
            v = next;
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let model = heisenberg_model(4, 2.0).unwrap();
        let v0 = product_state(&[0, 1, 1, 0], &model.modes).unwrap();
        let run = || {
            let mut it = Integrator::new(&model, ButcherTableau::midpoint(), StepOptions { seed: 9, ..Default::default() }).unwrap();
            it.run(&v0, 0.05, 0.5, TolPolicy::Fixed { tau: 1e-6 }, 1).unwrap()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn single_step_run_equals_step() {
        let model = heisenberg_model(3, 2.0).unwrap();
        let v0 = product_state(&[0, 1, 0], &model.modes).unwrap();
        let tab = ButcherTableau::midpoint();
        let opts = StepOptions::default();
        let mut it = Integrator::new(&model, tab.clone(), opts.clone()).unwrap();
        let traj = it.run(&v0, 0.1, 0.1, TolPolicy::Fixed { tau: 1e-8 }, 1).unwrap();
        assert_eq!(traj.snapshots.len(), 2);
        let (one, _) = step(&v0, &model, &tab, 0.1, 1e-8, &opts).unwrap();
        assert_eq!(traj.snapshots[1], one);
    }

    #[test]
    fn closed_run_keeps_trace_and_purity() {
        let model = heisenberg_model(4, f64::INFINITY).unwrap();
        let v0 = product_state(&[0, 0, 1, 1], &model.modes).unwrap();
        let mut it = Integrator::new(&model, ButcherTableau::midpoint(), StepOptions::default()).unwrap();
        let traj = it.run(&v0, 0.05, 1.0, TolPolicy::Order, 1).unwrap();
        for v in &traj.snapshots {
            let rho = v.density().unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-10);
            assert!(((&rho * &rho).trace().re - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn dissipative_run_stays_positive() {
        let model = heisenberg_model(4, 1.0).unwrap();
        let v0 = product_state(&[0, 1, 0, 1], &model.modes).unwrap();
        let mut it = Integrator::new(&model, ButcherTableau::rk4(), StepOptions::default()).unwrap();
        let traj = it.run(&v0, 0.1, 2.0, TolPolicy::Fixed { tau: 1e-6 }, 1).unwrap();
        for v in &traj.snapshots {
            let rho = v.density().unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-12);
            assert!(min_eigenvalue(&rho) >= -1e-10);
        }
        let exact = dense_propagate(
            &traj.snapshots[0].density().unwrap(),
            &dense_lindbladian(&model, 0).unwrap(),
            2.0,
        )
        .unwrap();
        assert!(frob(&(traj.snapshots.last().unwrap().density().unwrap() - exact)) < 1e-2);
    }

    #[test]
    fn mismatched_modes_are_rejected() {
        let model = heisenberg_model(3, 2.0).unwrap();
        let v = product_state(&[0, 0], &[2, 2]).unwrap();
        let mut it = Integrator::new(&model, ButcherTableau::midpoint(), StepOptions::default()).unwrap();
        assert!(it.step(&v, 0.0, 0.1, 1e-6).is_err());
        assert!(it.step(&product_state(&[0, 0, 0], &[2, 2, 2]).unwrap(), 0.0, -0.1, 1e-6).is_err());
    }
}
