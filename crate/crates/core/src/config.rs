//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dm_compress::{CompressOptions, FactorMatrix};
use crate::error::{Error, Result};
use crate::flow::FlowOptions;
use crate::integrator::{step_count, ButcherTableau, StepOptions, TolPolicy};
use crate::models::{
    heavy_hex_model, heisenberg_model, parse_levels, product_state, qudit_resonator_model, CircuitFile, ControlTable,
    DeviceParams, FlowMethod, LindbladModel, QuditResonatorParams,
};
use crate::tt::TensorTrain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Heisenberg {
        sites: usize,
        /// Omit for a closed chain.
        #[serde(default)]
        t_decay: Option<f64>,
        /// Overrides the default flow construction.
        #[serde(default)]
        flow: Option<FlowMethod>,
    },
    HeavyHex {
        /// Layout, gate schedule and excited qubits; relative paths resolve
        /// against the config file.
        circuit: PathBuf,
        #[serde(default)]
        params: Option<DeviceParams>,
        #[serde(default)]
        seed: u64,
    },
    QuditResonator {
        n_qudits: usize,
        #[serde(default)]
        resonator_levels: Option<usize>,
        #[serde(default)]
        seed: u64,
        controls: ControlSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    None { n_intervals: usize, t_signal: f64 },
    Synthetic { n_intervals: usize, t_signal: f64, amplitude: f64, seed: u64 },
    File { path: PathBuf, t_signal: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TableauSpec {
    Named(String),
    Inline(ButcherTableau),
}

impl TableauSpec {
    pub fn resolve(&self) -> Result<ButcherTableau> {
        let t = match self {
            TableauSpec::Named(n) => ButcherTableau::by_name(n)?,
            TableauSpec::Inline(t) => t.clone(),
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub tableau: TableauSpec,
    pub h: f64,
    pub t_final: f64,
    pub tolerance: TolPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// One column per listed site (all sites when omitted).
    SiteProbability {
        level: usize,
        #[serde(default)]
        sites: Option<Vec<usize>>,
    },
    Population { state: String },
    Purity,
    /// One column per listed subsystem (all when omitted).
    EnergyLevel {
        #[serde(default)]
        sites: Option<Vec<usize>>,
    },
}

impl ObservableSpec {
    pub fn file_stem(&self) -> String {
        match self {
            ObservableSpec::SiteProbability { level, .. } => format!("site_probability_{level}"),
            ObservableSpec::Population { state } => {
                let clean: String = state.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
                format!("population_{clean}")
            }
            ObservableSpec::Purity => "purity".into(),
            ObservableSpec::EnergyLevel { .. } => "energy_level".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Steps between snapshots; by default every step up to 1000 steps,
    /// otherwise at most 1000 rows.
    pub snapshot_every: Option<usize>,
    pub stats: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), snapshot_every: None, stats: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Level string such as `"↑↓↓↑"` or `"0010"`; defaults to all zeros.
    #[serde(default)]
    pub initial_state: Option<String>,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub compress: CompressOptions,
    #[serde(default)]
    pub flow: FlowOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub observables: Vec<ObservableSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let it = &self.integrator;
        if !(it.h > 0.0 && it.h.is_finite()) {
            return Err(config_err(format!("integrator.h must be positive, got {}", it.h)));
        }
        if !(it.t_final > 0.0 && it.t_final.is_finite()) {
            return Err(config_err(format!("integrator.t_final must be positive, got {}", it.t_final)));
        }
        it.tableau.resolve().map_err(|e| config_err(e.to_string()))?;
        it.tolerance.validate().map_err(|e| config_err(e.to_string()))?;
        self.compress.validate().map_err(|e| config_err(e.to_string()))?;
        if self.output.snapshot_every == Some(0) {
            return Err(config_err("output.snapshot_every must be positive"));
        }
        if let ModelSpec::QuditResonator { controls, .. } = &self.model {
            let t_signal = match controls {
                ControlSpec::None { t_signal, .. }
                | ControlSpec::Synthetic { t_signal, .. }
                | ControlSpec::File { t_signal, .. } => *t_signal,
            };
            let q = t_signal / it.h;
            if !(t_signal > 0.0) || (q - q.round()).abs() > 1e-9 * q.max(1.0) {
                return Err(config_err(format!("h = {} must divide the control interval {t_signal}", it.h)));
            }
        }
        Ok(())
    }

    pub fn tableau(&self) -> Result<ButcherTableau> {
        self.integrator.tableau.resolve()
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions { compress: self.compress.clone(), flow: self.flow.clone(), seed: self.seed }
    }

    pub fn n_steps(&self) -> usize {
        step_count(self.integrator.h, self.integrator.t_final)
    }

    pub fn snapshot_every(&self) -> usize {
        self.output.snapshot_every.unwrap_or_else(|| self.n_steps().div_ceil(1000).max(1))
    }

    /// Builds the model and the initial factor.
    pub fn build(&self) -> Result<(LindbladModel, FactorMatrix)> {
        let (model, default_levels) = match &self.model {
            ModelSpec::Heisenberg { sites, t_decay, flow } => {
                let mut m = heisenberg_model(*sites, t_decay.unwrap_or(f64::INFINITY))?;
                if let Some(f) = flow {
                    m.flow = f.clone();
                }
                (m, None)
            }
            ModelSpec::HeavyHex { circuit, params, seed } => {
                let file = CircuitFile::load(&self.resolve(circuit))?;
                let params = params.clone().unwrap_or_else(|| DeviceParams::heavy_hex_defaults(*seed));
                let m = heavy_hex_model(&file.layout, &params, &file.schedule)?;
                let mut levels = vec![0; file.layout.n_qubits];
                for &q in &file.excited {
                    if q >= levels.len() {
                        return Err(config_err(format!("excited qubit {q} out of range")));
                    }
                    levels[q] = 1;
                }
                (m, Some(levels))
            }
            ModelSpec::QuditResonator { n_qudits, resonator_levels, seed, controls } => {
                let mut params = QuditResonatorParams::device_defaults(*n_qudits, *seed);
                if let Some(n) = resonator_levels {
                    params.resonator_levels = *n;
                }
                let qudits: Vec<usize> = (0..*n_qudits).map(|j| 2 * j).collect();
                let table = match controls {
                    ControlSpec::None { n_intervals, t_signal } => ControlTable::zero(*t_signal, *n_intervals),
                    ControlSpec::Synthetic { n_intervals, t_signal, amplitude, seed } => {
                        ControlTable::synthetic(&qudits, *n_intervals, *t_signal, *amplitude, *seed)
                    }
                    ControlSpec::File { path, t_signal } => ControlTable::load(&self.resolve(path), *t_signal)?,
                };
                (qudit_resonator_model(&params, &table)?, None)
            }
        };
        let levels = match (&self.initial_state, default_levels) {
            (Some(s), _) => parse_levels(s)?,
            (None, Some(l)) => l,
            (None, None) => vec![0; model.modes.len()],
        };
        let v0 = product_state(&levels, &model.modes).map_err(|e| config_err(format!("initial_state: {e}")))?;
        Ok((model, v0))
    }

    /// Product states referenced by population observables.
    pub fn population_state(&self, state: &str, modes: &[usize]) -> Result<TensorTrain> {
        let levels = parse_levels(state)?;
        let v = product_state(&levels, modes).map_err(|e| config_err(format!("population state: {e}")))?;
        Ok(v.into_columns().remove(0))
    }
}
