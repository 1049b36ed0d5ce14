//! wasm-bindgen bindings for the browser page in `www/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use wasm_bindgen::prelude::*;

use tt_lindblad::dm_compress::tt_compress;
use tt_lindblad::linalg::{c, frob};
use tt_lindblad::models::{heisenberg_model, parse_levels, product_state, LindbladModel};
use tt_lindblad::observables::{purity, site_probability};
use tt_lindblad::{ButcherTableau, CompressOptions, FactorMatrix, Integrator, StepOptions, TensorTrain, TolPolicy};

fn js_err(e: tt_lindblad::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A dissipative Heisenberg chain advanced step by step.
#[wasm_bindgen]
pub struct Chain {
    integrator: Integrator,
    state: FactorMatrix,
    time: f64,
    h: f64,
    kappa: f64,
    rank: usize,
    max_bond: usize,
}

#[wasm_bindgen]
impl Chain {
    /// `initial` is a spin string such as `"↑↓↓↓↓↑"`; `kappa` is the
    /// truncation error allowed per unit time.
    #[wasm_bindgen(constructor)]
    pub fn new(initial: &str, t_decay: f64, h: f64, kappa: f64) -> Result<Chain, JsError> {
        let levels = parse_levels(initial).map_err(js_err)?;
        if levels.is_empty() || levels.len() > 16 {
            return Err(JsError::new("use between 1 and 16 spins"));
        }
        if !(h > 0.0 && kappa > 0.0) {
            return Err(JsError::new("h and kappa must be positive"));
        }
        let model: LindbladModel = heisenberg_model(levels.len(), t_decay).map_err(js_err)?;
        let state = product_state(&levels, &model.modes).map_err(js_err)?;
        let integrator = Integrator::new(&model, ButcherTableau::midpoint(), StepOptions::default()).map_err(js_err)?;
        Ok(Chain { integrator, state, time: 0.0, h, kappa, rank: 1, max_bond: 1 })
    }

    pub fn advance(&mut self, steps: usize) -> Result<(), JsError> {
        let tau = TolPolicy::Rate { kappa: self.kappa }.tau_step(self.h, 2);
        for _ in 0..steps {
            let (next, st) = self.integrator.step(&self.state, self.time, self.h, tau).map_err(js_err)?;
            self.state = next;
            self.time += self.h;
            self.rank = st.rank_after;
            self.max_bond = st.max_bond;
        }
        Ok(())
    }

    /// Probability of spin up at every site.
    pub fn populations(&self) -> Result<Vec<f64>, JsError> {
        (0..self.state.modes().len()).map(|s| site_probability(&self.state, s, 0).map_err(js_err)).collect()
    }

    pub fn purity(&self) -> f64 {
        purity(&self.state)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    #[wasm_bindgen(js_name = maxBond)]
    pub fn max_bond(&self) -> usize {
        self.max_bond
    }
}

/// Excited-state population of one decaying qubit after `steps` steps,
/// returned as `[computed, exact]`.
#[wasm_bindgen(js_name = amplitudeDamping)]
pub fn amplitude_damping(t_decay: f64, h: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    let model = heisenberg_model(1, t_decay).map_err(js_err)?;
    let v0 = product_state(&[0], &[2]).map_err(js_err)?;
    let mut it = Integrator::new(&model, ButcherTableau::midpoint(), StepOptions::default()).map_err(js_err)?;
    let t = h * steps as f64;
    let traj = it.run(&v0, h, t, TolPolicy::Order, steps.max(1)).map_err(js_err)?;
    let last = traj.snapshots.last().expect("final snapshot");
    let p = site_probability(last, 0, 0).map_err(js_err)?;
    Ok(vec![p, (-t / t_decay).exp()])
}

/// Compresses a random rank-`cols` factor on `sites` qubits with budget
/// `tau`. Returns `[rank_in, rank_out, error, tau]`.
#[wasm_bindgen(js_name = compressRandom)]
pub fn compress_random(sites: usize, cols: usize, tau: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    if !(1..=8).contains(&sites) || cols == 0 || !(tau > 0.0) {
        return Err(JsError::new("need 1 to 8 sites, at least one column and a positive budget"));
    }
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    let modes = vec![2; sites];
    let columns = (0..cols)
        .map(|_| {
            let t = TensorTrain::random(&modes, 2, &mut r);
            let scale = 10f64.powf(-r.random_range(0.0..4.0));
            t.scaled(c(scale / t.norm()))
        })
        .collect();
    let x = FactorMatrix::new(modes, columns).map_err(js_err)?;
    let (y, _) = tt_compress(&x, tau, &CompressOptions { seed, ..CompressOptions::default() }).map_err(js_err)?;
    let err = frob(&(x.density().map_err(js_err)? - y.density().map_err(js_err)?));
    Ok(vec![x.rank() as f64, y.rank() as f64, err, tau])
}
