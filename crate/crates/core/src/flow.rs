//! Approximate flow operators `exp(-i h H_eff)` as sequences of MPOs, and the
//! column-wise Schrödinger solve built on them.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dm_compress::FactorMatrix;
use crate::error::{check_modes, Error, Result};
use crate::linalg::{dagger, expm, frob, CMat, C64, I, ONE};
use crate::models::{FlowMethod, LindbladModel, OperatorSum, ProductTerm};
use crate::mpo::{ApplyMethod, Mpo, MpoCore};
use crate::rand_round::SketchPolicy;
use crate::tt::TensorTrain;

/// Largest Hilbert space for [`FlowMethod::Exact`].
pub const EXACT_FLOW_CAP: usize = 256;

/// `H + (1/2i) Σ L†L` for interval `k`.
pub fn build_h_eff(model: &LindbladModel, k: usize) -> OperatorSum {
    let mut h = model.hamiltonian_at(k);
    add_dissipation(&mut h, model);
    h
}

/// Time-independent part of the effective Hamiltonian (no controls).
pub fn static_h_eff(model: &LindbladModel) -> OperatorSum {
    let mut h = model.hamiltonian.clone();
    add_dissipation(&mut h, model);
    h
}

fn add_dissipation(h: &mut OperatorSum, model: &LindbladModel) {
    for op in &model.jumps.ops {
        let ll = dagger(&op.matrix) * &op.matrix;
        h.push(C64::new(0.0, -0.5), vec![(op.site, ll)]).expect("validated jump operator");
    }
}

/// Nearest-neighbor blocks `C_{k,k+1}`, each acting on sites `k` and `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSiteTermList {
    pub modes: Vec<usize>,
    pub terms: Vec<(usize, CMat)>,
}

impl TwoSiteTermList {
    pub fn new(modes: Vec<usize>, terms: Vec<(usize, CMat)>) -> Result<Self> {
        let d = modes.len();
        for (k, m) in &terms {
            if *k + 1 >= d {
                return Err(Error::InvalidArgument(format!("block ({k}, {}) outside a {d}-site chain", k + 1)));
            }
            let n = modes[*k] * modes[*k + 1];
            if m.shape() != (n, n) {
                return Err(Error::Shape(format!("{:?} block on sites of size {n}", m.shape())));
            }
        }
        Ok(Self { modes, terms })
    }

    /// Groups the terms of `h` into blocks. A single-site term at site `s`
    /// joins block `(s-1, s)`; site 0 joins block `(0, 1)`.
    pub fn from_operator_sum(h: &OperatorSum) -> Result<Self> {
        let d = h.modes.len();
        if d < 2 {
            return Err(Error::Model("operator splitting needs at least two sites".into()));
        }
        let mut grouped: Vec<Vec<&ProductTerm>> = vec![Vec::new(); d - 1];
        for t in &h.terms {
            let s = t.sites();
            let k = match s.as_slice() {
                [] => 0,
                [0] => 0,
                [s0] => s0 - 1,
                [a, b] if *b == a + 1 => *a,
                _ => return Err(Error::Model(format!("term on sites {s:?} is not nearest-neighbor"))),
            };
            grouped[k].push(t);
        }
        let terms = grouped
            .iter()
            .enumerate()
            .filter(|(_, g)| !g.is_empty())
            .map(|(k, g)| (k, h.local_block(&[k, k + 1], g)))
            .collect();
        Self::new(h.modes.clone(), terms)
    }

    pub fn to_dense(&self) -> Result<CMat> {
        let mut sum = OperatorSum::new(self.modes.clone());
        for (k, m) in &self.terms {
            sum.push_two_site(*k, *k + 1, m)?;
        }
        sum.to_dense()
    }

    fn merged(&self) -> Vec<(usize, CMat)> {
        let mut map: Vec<Option<CMat>> = vec![None; self.modes.len()];
        for (k, m) in &self.terms {
            map[*k] = Some(match map[*k].take() {
                Some(acc) => acc + m,
                None => m.clone(),
            });
        }
        map.into_iter().enumerate().filter_map(|(k, m)| m.map(|m| (k, m))).collect()
    }
}

/// MPO factors applied first to last, valid for one interval and step.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowOperator {
    pub modes: Vec<usize>,
    pub factors: Vec<Mpo>,
    pub interval: usize,
    pub step: f64,
}

impl FlowOperator {
    pub fn identity(modes: Vec<usize>, interval: usize) -> Self {
        Self { modes, factors: Vec::new(), interval, step: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn max_bond(&self) -> usize {
        self.factors.iter().map(Mpo::max_bond).max().unwrap_or(1)
    }

    /// Dense product `F_last ⋯ F_0`.
    pub fn to_dense(&self) -> Result<CMat> {
        let n: usize = self.modes.iter().product();
        let mut u = CMat::identity(n, n);
        for f in &self.factors {
            u = f.to_dense()? * u;
        }
        Ok(u)
    }
}

/// MPO of a product of exponentials of disjoint blocks of consecutive sites.
fn block_product(modes: &[usize], blocks: &[(usize, CMat)], h: f64) -> Result<Mpo> {
    let mut cores: Vec<MpoCore> = modes.iter().map(|&n| MpoCore::local(&CMat::identity(n, n))).collect();
    for (start, gen) in blocks {
        let e = expm(&(gen * (-I * h)));
        let mut width = 0;
        let mut dim = 1;
        while dim < e.nrows() {
            dim *= modes[start + width];
            width += 1;
        }
        let sub = &modes[*start..start + width];
        let small = Mpo::from_dense(&e, sub, 1e-15 * frob(&e))?;
        for (j, core) in small.cores().iter().enumerate() {
            cores[start + j] = core.clone();
        }
    }
    Mpo::new(cores)
}

/// Lie (order 1) or Strang (order 2) splitting over odd and even blocks.
/// Block `k` belongs to the first partition when `k` is even.
pub fn tebd_build(terms: &TwoSiteTermList, h: f64, order: u8, tol: f64) -> Result<FlowOperator> {
    if order != 1 && order != 2 {
        return Err(Error::InvalidArgument(format!("TEBD order must be 1 or 2, got {order}")));
    }
    let modes = terms.modes.clone();
    if h == 0.0 || terms.terms.is_empty() {
        return Ok(FlowOperator::identity(modes, 0));
    }
    let merged = terms.merged();
    let a: Vec<(usize, CMat)> = merged.iter().filter(|(k, _)| k % 2 == 0).cloned().collect();
    let b: Vec<(usize, CMat)> = merged.iter().filter(|(k, _)| k % 2 == 1).cloned().collect();
    let compress = |m: Mpo| if tol > 0.0 { m.compress(tol).0 } else { m };
    let factors = match (a.is_empty(), b.is_empty()) {
        (false, true) => vec![compress(block_product(&modes, &a, h)?)],
        (true, false) => vec![compress(block_product(&modes, &b, h)?)],
        _ if order == 1 => vec![compress(block_product(&modes, &a, h)?), compress(block_product(&modes, &b, h)?)],
        _ => {
            let half = compress(block_product(&modes, &a, h / 2.0)?);
            vec![half.clone(), compress(block_product(&modes, &b, h)?), half]
        }
    };
    Ok(FlowOperator { modes, factors, interval: 0, step: h })
}

/// Truncated Taylor series `Σ_{k≤n} (-i h H)^k / k!`, compressed term by term.
pub fn taylor_flow(h_eff: &Mpo, h: f64, n_terms: usize, tol: f64) -> Result<Mpo> {
    if n_terms == 0 {
        return Err(Error::InvalidArgument("Taylor flow needs at least one term".into()));
    }
    let modes = h_eff.row_modes();
    check_modes(&modes, &h_eff.col_modes())?;
    let gen = h_eff.scaled(-I * h);
    let mut u = Mpo::identity(&modes);
    let mut du = u.clone();
    for k in 1..=n_terms {
        du = gen.mul(&du)?.scaled(C64::new(1.0 / k as f64, 0.0)).compress(tol).0;
        u = u.add(&du)?.compress(tol).0;
    }
    Ok(u)
}

/// Three-site blocks `[2b, 2b+1, 2b+2]` of an alternating chain with even-`b`
/// blocks in the first group. Returns the two groups of dense generators.
fn qudit_resonator_blocks(h: &OperatorSum) -> Result<(Vec<(usize, CMat)>, Vec<(usize, CMat)>)> {
    let d = h.modes.len();
    if d < 3 || d % 2 == 0 {
        return Err(Error::Model(format!("qudit/resonator splitting needs an odd chain of at least 3 sites, got {d}")));
    }
    let n_blocks = (d - 1) / 2;
    let mut grouped: Vec<Vec<&ProductTerm>> = vec![Vec::new(); n_blocks];
    let order: Vec<usize> = (0..n_blocks).step_by(2).chain((1..n_blocks).step_by(2)).collect();
    for t in &h.terms {
        let s = t.sites();
        let (lo, hi) = (s.first().copied().unwrap_or(0), s.last().copied().unwrap_or(0));
        let b = order
            .iter()
            .copied()
            .find(|&b| lo >= 2 * b && hi <= 2 * b + 2)
            .ok_or_else(|| Error::Model(format!("term on sites {s:?} does not fit a three-site block")))?;
        grouped[b].push(t);
    }
    let mut odd = Vec::new();
    let mut even = Vec::new();
    for (b, g) in grouped.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        let m = h.local_block(&[2 * b, 2 * b + 1, 2 * b + 2], g);
        if b % 2 == 0 {
            odd.push((2 * b, m));
        } else {
            even.push((2 * b, m));
        }
    }
    Ok((odd, even))
}

/// Device factor `exp(-i h/2 H₁) exp(-i h H₂) exp(-i h/2 H₁)` for the static
/// effective Hamiltonian, compressed once.
pub fn qudit_resonator_device(h_static: &OperatorSum, h: f64, tol: f64) -> Result<Mpo> {
    let (h2, h1) = qudit_resonator_blocks(h_static)?;
    let modes = &h_static.modes;
    let outer = block_product(modes, &h1, h / 2.0)?;
    let inner = block_product(modes, &h2, h)?;
    let u = outer.mul(&inner)?.mul(&outer)?;
    Ok(if tol > 0.0 { u.compress(tol).0 } else { u })
}

/// `exp(-i h/2 H₃) U_d exp(-i h/2 H₃)` with single-site controls `H₃`.
pub fn qudit_resonator_flow(device: &Mpo, controls: &OperatorSum, h: f64, interval: usize) -> Result<FlowOperator> {
    let modes = device.row_modes();
    check_modes(&modes, &controls.modes)?;
    let mut locals: Vec<CMat> = modes.iter().map(|&n| CMat::zeros(n, n)).collect();
    for t in &controls.terms {
        match t.factors.as_slice() {
            [(s, m)] => locals[*s] += m * t.coeff,
            _ => return Err(Error::Model("control terms must act on a single site".into())),
        }
    }
    let factor = if controls.is_empty() {
        device.clone()
    } else {
        let half: Vec<(usize, CMat)> = locals.iter().enumerate().map(|(s, m)| (s, expm(&(m * (-I * h / 2.0))))).collect();
        let e3 = Mpo::from_product(&half, &modes)?;
        e3.mul(device)?.mul(&e3)?
    };
    Ok(FlowOperator { modes, factors: vec![factor], interval, step: h })
}

/// Dense `exp(-i h H_eff)` split into an MPO.
pub fn exact_flow(h_eff: &OperatorSum, h: f64) -> Result<Mpo> {
    let n = h_eff.dim();
    if n > EXACT_FLOW_CAP {
        return Err(Error::DenseCap { size: n, cap: EXACT_FLOW_CAP });
    }
    let e = expm(&(h_eff.to_dense()? * (-I * h)));
    Mpo::from_dense(&e, &h_eff.modes, 1e-15 * frob(&e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowOptions {
    /// MPO compression tolerance relative to `‖I‖_F`.
    pub mpo_rel_tol: f64,
    /// Randomized MPO–MPS rounding when the uncompressed bond exceeds this.
    pub randomized_threshold: usize,
    pub sketch: SketchPolicy,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { mpo_rel_tol: 1e-13, randomized_threshold: 32, sketch: SketchPolicy::default() }
    }
}

/// Builds flow operators on demand and keeps them per `(interval, step)`.
#[derive(Debug)]
pub struct FlowCache {
    model: LindbladModel,
    opts: FlowOptions,
    flows: HashMap<(usize, u64), Arc<FlowOperator>>,
    devices: HashMap<u64, Arc<Mpo>>,
    generators: HashMap<usize, Arc<Mpo>>,
}

impl FlowCache {
    pub fn new(model: &LindbladModel, opts: FlowOptions) -> Result<Self> {
        model.validate()?;
        Ok(Self { model: model.clone(), opts, flows: HashMap::new(), devices: HashMap::new(), generators: HashMap::new() })
    }

    pub fn model(&self) -> &LindbladModel {
        &self.model
    }

    pub fn options(&self) -> &FlowOptions {
        &self.opts
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    fn abs_tol(&self) -> f64 {
        let n: f64 = self.model.modes.iter().map(|&n| n as f64).product();
        self.opts.mpo_rel_tol * n.sqrt()
    }

    /// Flow for step `h` during interval `k`.
    pub fn get(&mut self, k: usize, h: f64) -> Result<Arc<FlowOperator>> {
        let k = if self.model.controls.is_some() { k.min(self.model.n_intervals() - 1) } else { 0 };
        let key = (k, h.to_bits());
        if let Some(f) = self.flows.get(&key) {
            return Ok(Arc::clone(f));
        }
        let modes = self.model.modes.clone();
        let flow = if h == 0.0 {
            FlowOperator::identity(modes, k)
        } else {
            let tol = self.abs_tol();
            match self.model.flow.clone() {
                FlowMethod::Exact => {
                    FlowOperator { modes, factors: vec![exact_flow(&build_h_eff(&self.model, k), h)?], interval: k, step: h }
                }
                FlowMethod::Tebd { order } => {
                    let terms = TwoSiteTermList::from_operator_sum(&build_h_eff(&self.model, k))?;
                    FlowOperator { interval: k, ..tebd_build(&terms, h, order, tol)? }
                }
                FlowMethod::Taylor { n_terms } => {
                    let gen = match self.generators.get(&k) {
                        Some(g) => Arc::clone(g),
                        None => {
                            let g = Arc::new(build_h_eff(&self.model, k).to_mpo(1e-15)?);
                            self.generators.insert(k, Arc::clone(&g));
                            g
                        }
                    };
                    FlowOperator { modes, factors: vec![taylor_flow(&gen, h, n_terms, tol)?], interval: k, step: h }
                }
                FlowMethod::QuditResonator => {
                    let device = match self.devices.get(&h.to_bits()) {
                        Some(u) => Arc::clone(u),
                        None => {
                            let u = Arc::new(qudit_resonator_device(&static_h_eff(&self.model), h, tol)?);
                            self.devices.insert(h.to_bits(), Arc::clone(&u));
                            u
                        }
                    };
                    let controls = match &self.model.controls {
                        Some(p) => p.intervals[k].clone(),
                        None => OperatorSum::new(modes),
                    };
                    qudit_resonator_flow(&device, &controls, h, k)?
                }
            }
        };
        let flow = Arc::new(flow);
        self.flows.insert(key, Arc::clone(&flow));
        Ok(flow)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SolveReport {
    /// Sum of discarded Frobenius norms over all columns and factors.
    pub error: f64,
    pub max_bond: usize,
    pub randomized: usize,
}

/// splitmix64 finalizer for deriving independent sketch seeds.
pub(crate) fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Applies `flow` to every column of `scale · V`; each column's error is at
/// most `tol / r` split evenly over the factors.
pub fn schrodinger_solve(
    flow: &FlowOperator,
    v: &FactorMatrix,
    scale: C64,
    tol: f64,
    opts: &FlowOptions,
    seed: u64,
) -> Result<(FactorMatrix, SolveReport)> {
    check_modes(&flow.modes, v.modes())?;
    let mut report = SolveReport::default();
    if flow.is_identity() {
        let out = if scale == ONE { v.clone() } else { v.scaled(scale) };
        report.max_bond = out.max_bond();
        return Ok((out, report));
    }
    let r = v.rank().max(1);
    let per = tol / (r * flow.factors.len()) as f64;
    let mut cols = Vec::with_capacity(v.rank());
    for (j, col) in v.columns().iter().enumerate() {
        let mut x: TensorTrain = if scale == ONE { col.clone() } else { col.scaled(scale) };
        for (f, m) in flow.factors.iter().enumerate() {
            let method = if m.max_bond() * x.max_bond() > opts.randomized_threshold {
                report.randomized += 1;
                ApplyMethod::Randomized { sketch: opts.sketch, seed: mix_seed(seed, &[j as u64, f as u64]) }
            } else {
                ApplyMethod::Deterministic
            };
            let (y, rep) = m.apply_compressed(&x, per, &method, None)?;
            report.error += rep.error();
            x = y;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { stage: "Schrödinger solve".into() });
        }
        report.max_bond = report.max_bond.max(x.max_bond());
        cols.push(x);
    }
    Ok((FactorMatrix::new(v.modes().to_vec(), cols)?, report))
}
