//! Physical systems: Hamiltonians as sums of local products, jump sets,
//! piecewise-constant controls and initial states.
//!
//! Units: angular frequency in rad/ns, times in ns.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dm_compress::FactorMatrix;
use crate::error::{Error, Result};
use crate::jump_ops::{JumpOp, JumpOperatorSet};
use crate::linalg::{c, dagger, embed_product, expm, frob, kron, ladder, logm_normal, spin, svd_sorted, CMat, C64, I, ONE, ZERO};
use crate::mpo::Mpo;
use crate::tt::TensorTrain;

/// Largest dense Hilbert space `to_dense` will build.
pub const DENSE_OPERATOR_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct ProductTerm {
    pub coeff: C64,
    /// Local factors on distinct sites.
    pub factors: Vec<(usize, CMat)>,
}

impl ProductTerm {
    pub fn sites(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.factors.iter().map(|f| f.0).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// `Σ_t coeff_t ⊗_k F_{t,k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSum {
    pub modes: Vec<usize>,
    pub terms: Vec<ProductTerm>,
}

impl OperatorSum {
    pub fn new(modes: Vec<usize>) -> Self {
        Self { modes, terms: Vec::new() }
    }

    pub fn push(&mut self, coeff: C64, factors: Vec<(usize, CMat)>) -> Result<()> {
        let mut seen = Vec::new();
        for (site, m) in &factors {
            let n = *self
                .modes
                .get(*site)
                .ok_or_else(|| Error::Model(format!("term on site {site} of a {}-site system", self.modes.len())))?;
            if m.shape() != (n, n) {
                return Err(Error::Shape(format!("{:?} factor on a site of size {n}", m.shape())));
            }
            if seen.contains(site) {
                return Err(Error::Model(format!("repeated site {site} in one product term")));
            }
            seen.push(*site);
        }
        if coeff != ZERO {
            self.terms.push(ProductTerm { coeff, factors });
        }
        Ok(())
    }

    /// Adds a general operator on sites `(p, q)` by splitting it into a sum of
    /// products. `m` is indexed by `i_p * n_q + i_q`.
    pub fn push_two_site(&mut self, p: usize, q: usize, m: &CMat) -> Result<()> {
        let (np, nq) = (self.modes[p], self.modes[q]);
        if m.shape() != (np * nq, np * nq) {
            return Err(Error::Shape(format!("{:?} two-site operator for sizes {np}x{nq}", m.shape())));
        }
        // Realign to (i_p j_p) x (i_q j_q) and take the operator Schmidt form.
        let mut r = CMat::zeros(np * np, nq * nq);
        for ip in 0..np {
            for iq in 0..nq {
                for jp in 0..np {
                    for jq in 0..nq {
                        r[(ip * np + jp, iq * nq + jq)] = m[(ip * nq + iq, jp * nq + jq)];
                    }
                }
            }
        }
        let (u, s, vt) = svd_sorted(r);
        let cutoff = 1e-15 * s.first().copied().unwrap_or(0.0);
        for (k, &sk) in s.iter().enumerate() {
            if sk <= cutoff {
                break;
            }
            let a = CMat::from_fn(np, np, |i, j| u[(i * np + j, k)]);
            let b = CMat::from_fn(nq, nq, |i, j| vt[(k, i * nq + j)]);
            self.push(c(sk), vec![(p, a), (q, b)])?;
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &OperatorSum) -> Result<()> {
        if other.modes != self.modes {
            return Err(Error::ModeMismatch { left: self.modes.clone(), right: other.modes.clone() });
        }
        self.terms.extend(other.terms.iter().cloned());
        Ok(())
    }

    pub fn scaled(&self, alpha: C64) -> OperatorSum {
        let terms = self.terms.iter().map(|t| ProductTerm { coeff: t.coeff * alpha, factors: t.factors.clone() }).collect();
        OperatorSum { modes: self.modes.clone(), terms }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.modes.iter().product()
    }

    pub fn to_dense(&self) -> Result<CMat> {
        let n = self.dim();
        if n > DENSE_OPERATOR_CAP {
            return Err(Error::DenseCap { size: n, cap: DENSE_OPERATOR_CAP });
        }
        let mut out = CMat::zeros(n, n);
        for t in &self.terms {
            out += embed_product(&self.modes, &t.factors) * t.coeff;
        }
        Ok(out)
    }

    /// Compressed MPO; `rel_tol` is relative to the operator's Frobenius norm.
    pub fn to_mpo(&self, rel_tol: f64) -> Result<Mpo> {
        let terms: Vec<(C64, Vec<(usize, CMat)>)> = self.terms.iter().map(|t| (t.coeff, t.factors.clone())).collect();
        Mpo::sum_of_products(&self.modes, &terms, rel_tol)
    }

    /// Whether every term acts on at most two adjacent sites.
    pub fn is_nearest_neighbor(&self) -> bool {
        self.terms.iter().all(|t| {
            let s = t.sites();
            s.len() <= 1 || (s.len() == 2 && s[1] == s[0] + 1)
        })
    }

    /// Local operator on `sites` (consecutive) as a dense matrix of the
    /// sub-chain, for terms supported inside it.
    pub fn local_block(&self, sites: &[usize], terms: &[&ProductTerm]) -> CMat {
        let sub: Vec<usize> = sites.iter().map(|&s| self.modes[s]).collect();
        let n: usize = sub.iter().product();
        let mut out = CMat::zeros(n, n);
        for t in terms {
            let local: Vec<(usize, CMat)> = t
                .factors
                .iter()
                .map(|(s, m)| (sites.iter().position(|x| x == s).expect("term inside block"), m.clone()))
                .collect();
            out += embed_product(&sub, &local) * t.coeff;
        }
        out
    }
}

/// Which flow-operator construction a model uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowMethod {
    /// Dense exponential split into an MPO; small systems only.
    Exact,
    /// Nearest-neighbor operator splitting, order 1 or 2.
    Tebd { order: u8 },
    /// Truncated Taylor series of the MPO generator.
    Taylor { n_terms: usize },
    /// Three-part splitting for alternating qudit/resonator chains.
    QuditResonator,
}

/// Extra Hamiltonian terms switched per time interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseTerms {
    pub interval_length: f64,
    pub intervals: Vec<OperatorSum>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LindbladModel {
    pub modes: Vec<usize>,
    pub hamiltonian: OperatorSum,
    pub controls: Option<PiecewiseTerms>,
    pub jumps: JumpOperatorSet,
    pub flow: FlowMethod,
}

impl LindbladModel {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.modes.iter().any(|&n| n == 0) {
            return Err(Error::Model(format!("invalid mode sizes {:?}", self.modes)));
        }
        if self.hamiltonian.modes != self.modes {
            return Err(Error::ModeMismatch { left: self.modes.clone(), right: self.hamiltonian.modes.clone() });
        }
        self.jumps.validate(&self.modes)?;
        if let Some(p) = &self.controls {
            if !(p.interval_length > 0.0) || p.intervals.is_empty() {
                return Err(Error::Model("piecewise controls need a positive interval length and at least one interval".into()));
            }
            for s in &p.intervals {
                if s.modes != self.modes {
                    return Err(Error::ModeMismatch { left: self.modes.clone(), right: s.modes.clone() });
                }
            }
        }
        match self.flow {
            FlowMethod::Tebd { order } if order != 1 && order != 2 => {
                return Err(Error::Model(format!("TEBD order must be 1 or 2, got {order}")));
            }
            FlowMethod::Taylor { n_terms: 0 } => return Err(Error::Model("Taylor flow needs at least one term".into())),
            _ => {}
        }
        Ok(())
    }

    pub fn n_intervals(&self) -> usize {
        self.controls.as_ref().map_or(1, |p| p.intervals.len())
    }

    /// Interval containing time `t`; times past the schedule use the last one.
    pub fn interval_at(&self, t: f64) -> usize {
        match &self.controls {
            None => 0,
            Some(p) => ((t / p.interval_length).floor().max(0.0) as usize).min(p.intervals.len() - 1),
        }
    }

    /// Hamiltonian during interval `k`.
    pub fn hamiltonian_at(&self, k: usize) -> OperatorSum {
        let mut h = self.hamiltonian.clone();
        if let Some(p) = &self.controls {
            let idx = k.min(p.intervals.len() - 1);
            h.extend(&p.intervals[idx]).expect("validated modes");
        }
        h
    }
}

fn decay_jumps(site: usize, n: usize, t_decay: f64, out: &mut Vec<JumpOp>) {
    if t_decay.is_finite() {
        out.push(JumpOp { site, matrix: ladder::annihilation(n) * c(1.0 / t_decay.sqrt()) });
    }
}

fn dephase_jumps(site: usize, n: usize, t_dephase: f64, out: &mut Vec<JumpOp>) {
    if t_dephase.is_finite() {
        out.push(JumpOp { site, matrix: ladder::number(n) * c(1.0 / t_dephase.sqrt()) });
    }
}

/// XX chain `Σ σ⁺_j σ⁻_{j+1} + σ⁻_j σ⁺_{j+1}` with `L_j = σ⁻_j / √T`.
/// `t_decay = ∞` gives a closed system.
pub fn heisenberg_model(d: usize, t_decay: f64) -> Result<LindbladModel> {
    if d == 0 {
        return Err(Error::Model("need at least one spin".into()));
    }
    if !(t_decay > 0.0) {
        return Err(Error::Model(format!("decay time must be positive, got {t_decay}")));
    }
    let modes = vec![2; d];
    let mut h = OperatorSum::new(modes.clone());
    for j in 0..d.saturating_sub(1) {
        h.push(ONE, vec![(j, spin::raising()), (j + 1, spin::lowering())])?;
        h.push(ONE, vec![(j, spin::lowering()), (j + 1, spin::raising())])?;
    }
    let mut ops = Vec::new();
    if t_decay.is_finite() {
        for j in 0..d {
            ops.push(JumpOp { site: j, matrix: spin::lowering() * c(1.0 / t_decay.sqrt()) });
        }
    }
    let flow = if d == 1 { FlowMethod::Exact } else { FlowMethod::Tebd { order: 2 } };
    let m = LindbladModel { modes, hamiltonian: h, controls: None, jumps: JumpOperatorSet::new(ops), flow };
    m.validate()?;
    Ok(m)
}

/// Mean and standard deviation of a normally distributed parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn fixed(mean: f64) -> Self {
        Self { mean, std: 0.0 }
    }

    pub fn draw(&self, rng: &mut ChaCha20Rng) -> f64 {
        if self.std == 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.std).expect("finite spread").sample(rng)
    }
}

/// Transmon-array device parameters: couplings and decoherence times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    /// Coupling strength in rad/ns.
    pub coupling: Spread,
    /// ns.
    pub t_decay: Spread,
    /// ns.
    pub t_dephase: Spread,
    pub seed: u64,
}

impl DeviceParams {
    /// Mock-circuit table: J/2π = 2.3 ± 5.4 MHz, T_decay = 95 ± 5 µs,
    /// T_dephase = 100 ± 10 µs.
    pub fn heavy_hex_defaults(seed: u64) -> Self {
        let mhz = 2.0 * PI * 1e-3;
        Self {
            coupling: Spread { mean: 2.3 * mhz, std: 5.4 * mhz },
            t_decay: Spread { mean: 95_000.0, std: 5_000.0 },
            t_dephase: Spread { mean: 100_000.0, std: 10_000.0 },
            seed,
        }
    }
}

/// Qubit connectivity as an edge list over MPS site indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub n_qubits: usize,
    pub edges: Vec<(usize, usize)>,
}

/// SWAP gates per interval of length `t_gate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSchedule {
    pub t_gate: f64,
    pub intervals: Vec<Vec<(usize, usize)>>,
}

/// Layout and gate schedule stored together in one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitFile {
    pub layout: Layout,
    pub schedule: GateSchedule,
    /// Qubits initially excited.
    #[serde(default)]
    pub excited: Vec<usize>,
}

impl CircuitFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Two-level `J (a_p a_q† + a_p† a_q)` on the sub-space of sites `(p, q)`.
pub fn jaynes_cummings(j: f64) -> CMat {
    let a = ladder::annihilation(2);
    let ad = dagger(&a);
    (kron(&a, &ad) + kron(&ad, &a)) * c(j)
}

pub fn swap_unitary() -> CMat {
    let mut u = CMat::zeros(4, 4);
    for (i, j) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
        u[(i, j)] = ONE;
    }
    u
}

/// `H_SWAP = -(1/(i T)) log(U_SWAP) - H_JC`, so that
/// `exp(-i T (H_SWAP + H_JC)) = U_SWAP`.
pub fn swap_hamiltonian(j: f64, t_gate: f64) -> CMat {
    let log_u = logm_normal(&swap_unitary());
    log_u * (I / t_gate) - jaynes_cummings(j)
}

/// Jaynes–Cummings coupled qubits with SWAP-gate controls and decay plus
/// dephasing on every qubit. Parameters are drawn under `params.seed` in the
/// order: couplings (edge order), then per-qubit decay and dephasing times.
pub fn heavy_hex_model(layout: &Layout, params: &DeviceParams, schedule: &GateSchedule) -> Result<LindbladModel> {
    let n = layout.n_qubits;
    if n < 2 {
        return Err(Error::Model("need at least two qubits".into()));
    }
    let modes = vec![2; n];
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let mut couplings = BTreeMap::new();
    for &(p, q) in &layout.edges {
        if p >= n || q >= n || p == q {
            return Err(Error::Model(format!("edge ({p}, {q}) invalid for {n} qubits")));
        }
        let key = (p.min(q), p.max(q));
        if couplings.contains_key(&key) {
            return Err(Error::Model(format!("duplicate edge {key:?}")));
        }
        couplings.insert(key, params.coupling.draw(&mut rng));
    }
    let mut ops = Vec::new();
    for q in 0..n {
        let td = params.t_decay.draw(&mut rng);
        let tp = params.t_dephase.draw(&mut rng);
        if !(td > 0.0 && tp > 0.0) {
            return Err(Error::Model(format!("non-positive decoherence time drawn for qubit {q}")));
        }
        decay_jumps(q, 2, td, &mut ops);
        dephase_jumps(q, 2, tp, &mut ops);
    }

    let a = ladder::annihilation(2);
    let ad = dagger(&a);
    let mut h = OperatorSum::new(modes.clone());
    for (&(p, q), &j) in &couplings {
        h.push(c(j), vec![(p, a.clone()), (q, ad.clone())])?;
        h.push(c(j), vec![(p, ad.clone()), (q, a.clone())])?;
    }

    let controls = if schedule.intervals.is_empty() {
        None
    } else {
        if !(schedule.t_gate > 0.0) {
            return Err(Error::Model("gate time must be positive".into()));
        }
        let mut intervals = Vec::new();
        for (k, pairs) in schedule.intervals.iter().enumerate() {
            let mut used = Vec::new();
            let mut part = OperatorSum::new(modes.clone());
            for &(p, q) in pairs {
                if p >= n || q >= n || p == q {
                    return Err(Error::Model(format!("gate ({p}, {q}) invalid for {n} qubits")));
                }
                if used.contains(&p) || used.contains(&q) {
                    return Err(Error::Model(format!("overlapping gate pairs in interval {k}")));
                }
                used.extend([p, q]);
                let j = couplings.get(&(p.min(q), p.max(q))).copied().unwrap_or(0.0);
                // The swap is symmetric, so the site order inside the pair is irrelevant.
                h_swap_push(&mut part, p.min(q), p.max(q), j, schedule.t_gate)?;
            }
            intervals.push(part);
        }
        Some(PiecewiseTerms { interval_length: schedule.t_gate, intervals })
    };

    let m = LindbladModel { modes, hamiltonian: h, controls, jumps: JumpOperatorSet::new(ops), flow: FlowMethod::Taylor { n_terms: 12 } };
    m.validate()?;
    Ok(m)
}

fn h_swap_push(part: &mut OperatorSum, p: usize, q: usize, j: f64, t_gate: f64) -> Result<()> {
    part.push_two_site(p, q, &swap_hamiltonian(j, t_gate))
}

/// Self- and cross-Kerr parameters of an alternating qudit/resonator chain.
/// Qudit `j` sits at site `2j`, resonator `j` at `2j + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuditResonatorParams {
    pub n_qudits: usize,
    pub qudit_levels: usize,
    pub resonator_levels: usize,
    /// Per-qudit self-Kerr, rad/ns.
    pub xi_qudit: Vec<f64>,
    /// Resonator self-Kerr, rad/ns.
    pub xi_resonator: f64,
    /// Qudit–resonator cross-Kerr for edges `(2j, 2j+1)` and `(2j+1, 2j+2)` in
    /// chain order, rad/ns.
    pub xi_qr: Vec<f64>,
    /// Qudit–qudit cross-Kerr across each resonator, rad/ns.
    pub xi_qq: Vec<f64>,
    /// ns.
    pub qudit_t_decay: f64,
    pub qudit_t_dephase: f64,
    pub resonator_t_decay: f64,
    /// Standard deviation of decoherence draws relative to the mean.
    pub rel_std: f64,
    pub seed: u64,
}

impl QuditResonatorParams {
    /// Device table values with alternating qudit types; every value/2π in GHz.
    pub fn device_defaults(n_qudits: usize, seed: u64) -> Self {
        let ghz = 2.0 * PI;
        let xi_qudit = (0..n_qudits).map(|j| if j % 2 == 0 { 0.220 } else { 0.225 } * ghz).collect();
        let mut xi_qr = Vec::new();
        for j in 0..n_qudits.saturating_sub(1) {
            for q in [j, j + 1] {
                xi_qr.push(if q % 2 == 0 { 2.49e-3 } else { 2.52e-3 } * ghz);
            }
        }
        Self {
            n_qudits,
            qudit_levels: 4,
            resonator_levels: 10,
            xi_qudit,
            xi_resonator: 2.83e-3 * ghz,
            xi_qr,
            xi_qq: vec![1e-6 * ghz; n_qudits.saturating_sub(1)],
            qudit_t_decay: 95_000.0,
            qudit_t_dephase: 50_000.0,
            resonator_t_decay: 400.0,
            rel_std: 0.01,
            seed,
        }
    }

    pub fn modes(&self) -> Vec<usize> {
        (0..2 * self.n_qudits - 1).map(|s| if s % 2 == 0 { self.qudit_levels } else { self.resonator_levels }).collect()
    }
}

/// Piecewise-constant complex control amplitudes per site and interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTable {
    pub t_signal: f64,
    pub n_intervals: usize,
    pub values: BTreeMap<(usize, usize), C64>,
}

#[derive(Deserialize)]
struct ControlRow {
    transmon_index: usize,
    interval_index: usize,
    re: f64,
    im: f64,
}

impl ControlTable {
    pub fn zero(t_signal: f64, n_intervals: usize) -> Self {
        Self { t_signal, n_intervals, values: BTreeMap::new() }
    }

    pub fn get(&self, site: usize, interval: usize) -> C64 {
        self.values.get(&(site, interval)).copied().unwrap_or(ZERO)
    }

    /// Reads `transmon_index,interval_index,re,im` rows. Missing entries are zero.
    pub fn from_csv<R: std::io::Read>(reader: R, t_signal: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut values = BTreeMap::new();
        let mut n_intervals = 0;
        for row in rdr.deserialize::<ControlRow>() {
            let row = row.map_err(|e| Error::Config(format!("control table: {e}")))?;
            if values.insert((row.transmon_index, row.interval_index), C64::new(row.re, row.im)).is_some() {
                return Err(Error::Config(format!(
                    "control table: duplicate entry for transmon {} interval {}",
                    row.transmon_index, row.interval_index
                )));
            }
            n_intervals = n_intervals.max(row.interval_index + 1);
        }
        Ok(Self { t_signal, n_intervals, values })
    }

    pub fn load(path: &Path, t_signal: f64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv(f, t_signal)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("transmon_index,interval_index,re,im\n");
        for (&(q, k), v) in &self.values {
            s.push_str(&format!("{q},{k},{:.15e},{:.15e}\n", v.re, v.im));
        }
        s
    }

    /// Smooth synthetic pulses sampled at interval midpoints.
    pub fn synthetic(sites: &[usize], n_intervals: usize, t_signal: f64, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let total = n_intervals as f64 * t_signal;
        let mut values = BTreeMap::new();
        for &q in sites {
            let phase: f64 = unit.sample(&mut rng);
            let freq = 1.0 + 0.5 * unit.sample(&mut rng).abs();
            for k in 0..n_intervals {
                let t = (k as f64 + 0.5) * t_signal;
                let env = (PI * t / total).sin();
                let z = C64::from_polar(amplitude * env, 2.0 * PI * freq * t / total + phase);
                values.insert((q, k), z);
            }
        }
        Self { t_signal, n_intervals, values }
    }
}

/// `H_d = -Σ ξ_q/2 a†a†aa - Σ ξ_pq n_p n_q` plus controls
/// `Σ d_q a_q + conj(d_q) a_q†`; qudits decay and dephase, resonators only
/// decay. Decoherence times are drawn under `params.seed` site by site.
pub fn qudit_resonator_model(params: &QuditResonatorParams, controls: &ControlTable) -> Result<LindbladModel> {
    let nq = params.n_qudits;
    if nq < 2 {
        return Err(Error::Model("need at least two qudits".into()));
    }
    if params.xi_qudit.len() != nq || params.xi_qr.len() != 2 * (nq - 1) || params.xi_qq.len() != nq - 1 {
        return Err(Error::Model("Kerr parameter lengths do not match the number of qudits".into()));
    }
    let modes = params.modes();
    let d = modes.len();
    let mut h = OperatorSum::new(modes.clone());
    for (s, &n) in modes.iter().enumerate() {
        let xi = if s % 2 == 0 { params.xi_qudit[s / 2] } else { params.xi_resonator };
        let num = ladder::number(n);
        let kerr = &num * (&num - CMat::identity(n, n));
        h.push(c(-xi / 2.0), vec![(s, kerr)])?;
    }
    for s in 0..d - 1 {
        h.push(c(-params.xi_qr[s]), vec![(s, ladder::number(modes[s])), (s + 1, ladder::number(modes[s + 1]))])?;
    }
    for j in 0..nq - 1 {
        let (p, q) = (2 * j, 2 * j + 2);
        h.push(c(-params.xi_qq[j]), vec![(p, ladder::number(modes[p])), (q, ladder::number(modes[q]))])?;
    }

    if controls.n_intervals == 0 || !(controls.t_signal > 0.0) {
        return Err(Error::Model("control table needs at least one interval of positive length".into()));
    }
    if let Some((&(q, k), _)) = controls.values.iter().find(|((q, k), _)| *q >= d || *k >= controls.n_intervals) {
        return Err(Error::Model(format!("control entry (transmon {q}, interval {k}) outside the chain or schedule")));
    }
    let mut intervals = Vec::with_capacity(controls.n_intervals);
    for k in 0..controls.n_intervals {
        let mut part = OperatorSum::new(modes.clone());
        for (s, &n) in modes.iter().enumerate() {
            let z = controls.get(s, k);
            if z != ZERO {
                let a = ladder::annihilation(n);
                part.push(ONE, vec![(s, &a * z + dagger(&a) * z.conj())])?;
            }
        }
        intervals.push(part);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let mut ops = Vec::new();
    for (s, &n) in modes.iter().enumerate() {
        let spread = |mean: f64| Spread { mean, std: params.rel_std * mean };
        if s % 2 == 0 {
            let td = spread(params.qudit_t_decay).draw(&mut rng);
            let tp = spread(params.qudit_t_dephase).draw(&mut rng);
            decay_jumps(s, n, td, &mut ops);
            dephase_jumps(s, n, tp, &mut ops);
        } else {
            let td = spread(params.resonator_t_decay).draw(&mut rng);
            decay_jumps(s, n, td, &mut ops);
        }
    }

    let m = LindbladModel {
        modes,
        hamiltonian: h,
        controls: Some(PiecewiseTerms { interval_length: controls.t_signal, intervals }),
        jumps: JumpOperatorSet::new(ops),
        flow: FlowMethod::QuditResonator,
    };
    m.validate()?;
    Ok(m)
}

/// Parses a level string: digits `0-9` or spin arrows (`↑` = 0, `↓` = 1).
pub fn parse_levels(s: &str) -> Result<Vec<usize>> {
    s.chars()
        .filter(|ch| !matches!(ch, '|' | '⟩' | '>' | ' '))
        .map(|ch| match ch {
            '↑' => Ok(0),
            '↓' => Ok(1),
            _ => ch.to_digit(10).map(|d| d as usize).ok_or_else(|| Error::Config(format!("bad level character {ch:?}"))),
        })
        .collect()
}

/// Rank-1 factor of a product basis state.
pub fn product_state(levels: &[usize], modes: &[usize]) -> Result<FactorMatrix> {
    if levels.len() != modes.len() {
        return Err(Error::InvalidArgument(format!("{} levels for {} sites", levels.len(), modes.len())));
    }
    if let Some(k) = levels.iter().zip(modes).position(|(l, n)| l >= n) {
        return Err(Error::InvalidArgument(format!("level {} at site {k} of size {}", levels[k], modes[k])));
    }
    Ok(FactorMatrix::from_column(TensorTrain::basis_state(modes, levels)?))
}

/// Maximum deviation from Hermiticity, `‖H - H†‖_F`.
pub fn hermiticity_defect(h: &OperatorSum) -> Result<f64> {
    let m = h.to_dense()?;
    Ok(frob(&(&m - dagger(&m))))
}

/// `exp(-i t H)` for a dense matrix.
pub fn dense_flow(h: &CMat, t: f64) -> CMat {
    expm(&(h * (-I * t)))
}
