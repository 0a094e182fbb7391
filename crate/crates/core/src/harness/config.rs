use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSource, Spectrum};
use crate::error::{Error, Result};
use crate::noise::{ObservationNoiseSpec, ProcessNoiseKind, ProcessNoiseSpec};
use crate::solvers::{ApcSpectrum, BfgsStep, Method, SolverConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    Observation,
    Process,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::None, NoiseKind::Observation, NoiseKind::Process];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Observation => "observation",
            NoiseKind::Process => "process",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown noise `{s}` (expected none, observation or process)")))
    }
}

/// Where solver parameters come from before overrides are applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tuning {
    /// Published values for ash608 and gr_30_30, rate-optimal tuning for any
    /// other dataset.
    #[default]
    Published,
    /// Rate-optimal tuning computed from the spectrum, for every dataset.
    Rate,
}

impl FromStr for Tuning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "published" => Ok(Tuning::Published),
            "rate" => Ok(Tuning::Rate),
            _ => Err(Error::Config(format!(
                "unknown tuning `{s}` (expected published or rate)"
            ))),
        }
    }
}

/// Per-run overrides of the solver parameters; unset fields keep the
/// defaults for the dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub eta_apc: Option<f64>,
    pub bfgs_step: Option<BfgsStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSettings {
    /// Entries are drawn from `uniform(-half_width, half_width)`.
    pub half_width: f64,
    /// Bound used in the error bounds; defaults to the closed-form
    /// expectation for the largest agent.
    #[serde(default)]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSettings {
    #[serde(flatten)]
    pub kind: ProcessNoiseKind,
    #[serde(default)]
    pub omega: Option<f64>,
}

fn default_agents() -> usize {
    10
}
fn default_max_iterations() -> usize {
    100_000
}
fn default_stop_window() -> usize {
    20
}
fn default_stop_tol() -> f64 {
    1e-4
}
fn default_one() -> usize {
    1
}

/// Everything needed to reproduce one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `ash608`, `gr_30_30`, `synthetic:N,d,cond,seed` or a `.mtx` path.
    pub dataset: String,
    pub method: Method,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default)]
    pub params: ParamOverrides,
    /// Observation-noise settings; defaults depend on the dataset.
    #[serde(default)]
    pub observation: Option<ObservationSettings>,
    /// Process-noise settings; defaults depend on the dataset and method.
    #[serde(default)]
    pub process: Option<ProcessSettings>,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_stop_window")]
    pub stop_window: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    /// Monte Carlo repetitions; repetition `r` uses seed `seed + r`.
    #[serde(default = "default_one")]
    pub reps: usize,
    /// Keep every `record_every`-th trace row (the last row is always kept).
    #[serde(default = "default_one")]
    pub record_every: usize,
    /// Directory searched for `<name>.mtx` before the built-in matrices.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(dataset: impl Into<String>, method: Method, noise: NoiseKind) -> Self {
        Self {
            dataset: dataset.into(),
            method,
            noise,
            tuning: Tuning::Published,
            params: ParamOverrides::default(),
            observation: None,
            process: None,
            agents: default_agents(),
            seed: 0,
            max_iterations: default_max_iterations(),
            stop_window: default_stop_window(),
            stop_tol: default_stop_tol(),
            reps: 1,
            record_every: 1,
            data_dir: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn source(&self) -> Result<DatasetSource> {
        DatasetSource::parse(&self.dataset)
    }

    pub fn validate(&self) -> Result<()> {
        self.source()?;
        if self.agents == 0 {
            return Err(Error::Config("agents must be at least 1".into()));
        }
        if self.stop_window == 0 || self.stop_tol.is_nan() || self.stop_tol <= 0.0 {
            return Err(Error::Config("stop_window and stop_tol must be positive".into()));
        }
        if self.max_iterations == 0 || self.reps == 0 || self.record_every == 0 {
            return Err(Error::Config(
                "max_iterations, reps and record_every must be positive".into(),
            ));
        }
        if let Some(o) = &self.observation {
            if o.half_width.is_nan() || o.half_width < 0.0 || o.half_width.is_infinite() {
                return Err(Error::Config(format!(
                    "invalid observation half_width {}",
                    o.half_width
                )));
            }
        }
        if let Some(p) = &self.process {
            self.process_spec_with(p, 0).validate()?;
        }
        Ok(())
    }

    /// Seed of Monte Carlo repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    fn published(&self, label: &str) -> Option<SolverConfig> {
        match self.tuning {
            Tuning::Published => SolverConfig::table_i(self.method, label),
            Tuning::Rate => None,
        }
    }

    /// Published parameters for the two benchmark datasets, rate-optimal
    /// tuning otherwise, then the overrides.
    pub fn solver_config(&self, label: &str, spectrum: &Spectrum, apc: Option<&ApcSpectrum>) -> Result<SolverConfig> {
        let mut cfg = match self.published(label) {
            Some(c) => c,
            None => SolverConfig::tuned(self.method, spectrum, apc)?,
        };
        let p = &self.params;
        if let Some(v) = p.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = p.delta {
            cfg.delta = v;
        }
        if let Some(v) = p.beta {
            cfg.beta = v;
        }
        if let Some(v) = p.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = p.eta_apc {
            cfg.eta_apc = v;
        }
        if let Some(v) = p.bfgs_step {
            cfg.bfgs_step = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Whether the APC projector spectrum is needed to pick parameters.
    pub fn needs_apc_spectrum(&self, label: &str) -> bool {
        self.method == Method::Apc
            && self.published(label).is_none()
            && (self.params.gamma.is_none() || self.params.eta_apc.is_none())
    }

    /// Default observation noise: `uniform(-0.25, 0.25)` on ash608 and
    /// `uniform(-0.15, 0.15)` on gr_30_30 (and anything else).
    pub fn observation_settings(&self, label: &str) -> ObservationSettings {
        self.observation.unwrap_or(ObservationSettings {
            half_width: if label == "ash608" { 0.25 } else { 0.15 },
            eta: None,
        })
    }

    pub fn observation_spec(&self, label: &str, rep: usize) -> ObservationNoiseSpec {
        let s = self.observation_settings(label);
        ObservationNoiseSpec {
            half_width: s.half_width,
            eta: s.eta,
            seed: self.rep_seed(rep),
        }
    }

    /// Default process noise: rounding to four decimals for IPG, GD, NAG and
    /// HBM; `uniform(0, 5e-5)` for APC; `uniform(0, 9e-5)` (ash608) or
    /// `uniform(0, 2e-6)` (otherwise) for BFGS.
    pub fn process_settings(&self, label: &str) -> ProcessSettings {
        self.process.unwrap_or_else(|| {
            let kind = match self.method {
                Method::Ipg | Method::Gd | Method::Nag | Method::Hbm => ProcessNoiseKind::RoundOff { decimals: 4 },
                Method::Apc => ProcessNoiseKind::Uniform { low: 0.0, high: 5e-5 },
                Method::Bfgs => ProcessNoiseKind::Uniform {
                    low: 0.0,
                    high: if label == "ash608" { 9e-5 } else { 2e-6 },
                },
            };
            ProcessSettings { kind, omega: None }
        })
    }

    fn process_spec_with(&self, s: &ProcessSettings, rep: usize) -> ProcessNoiseSpec {
        ProcessNoiseSpec {
            kind: s.kind,
            omega: s.omega,
            seed: self.rep_seed(rep),
        }
    }

    pub fn process_spec(&self, label: &str, rep: usize) -> ProcessNoiseSpec {
        self.process_spec_with(&self.process_settings(label), rep)
    }
}

/// A batch of runs. Explicit `[[run]]` tables come first, followed by the
/// cartesian product of every `[[sweep]]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub run: Vec<RunConfig>,
    #[serde(default)]
    pub sweep: Vec<Sweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub datasets: Vec<String>,
    pub methods: Vec<Method>,
    pub noises: Vec<NoiseKind>,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub reps: usize,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_one")]
    pub record_every: usize,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

impl GridConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    /// Runs in file order, sweeps expanded noise-major, then dataset, then
    /// method.
    pub fn expand(&self) -> Vec<RunConfig> {
        let mut out = self.run.clone();
        for sw in &self.sweep {
            for &noise in &sw.noises {
                for ds in &sw.datasets {
                    for &method in &sw.methods {
                        out.push(RunConfig {
                            seed: sw.seed,
                            tuning: sw.tuning,
                            reps: sw.reps,
                            agents: sw.agents,
                            max_iterations: sw.max_iterations,
                            record_every: sw.record_every,
                            data_dir: sw.data_dir.clone(),
                            ..RunConfig::new(ds.clone(), method, noise)
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_gets_published_defaults() {
        let cfg = RunConfig::from_toml_str("dataset = \"ash608\"\nmethod = \"ipg\"\n").unwrap();
        assert_eq!(cfg.agents, 10);
        assert_eq!(cfg.stop_window, 20);
        assert_eq!(cfg.stop_tol, 1e-4);
        assert_eq!(cfg.max_iterations, 100_000);
        assert_eq!(cfg.noise, NoiseKind::None);
        assert_eq!(cfg.observation_settings("ash608").half_width, 0.25);
        assert_eq!(cfg.observation_settings("gr_30_30").half_width, 0.15);
        assert_eq!(
            cfg.process_settings("ash608").kind,
            ProcessNoiseKind::RoundOff { decimals: 4 }
        );
    }

    #[test]
    fn process_defaults_per_method() {
        let apc = RunConfig::new("gr_30_30", Method::Apc, NoiseKind::Process);
        assert_eq!(
            apc.process_settings("gr_30_30").kind,
            ProcessNoiseKind::Uniform { low: 0.0, high: 5e-5 }
        );
        let bfgs = RunConfig::new("ash608", Method::Bfgs, NoiseKind::Process);
        assert_eq!(
            bfgs.process_settings("ash608").kind,
            ProcessNoiseKind::Uniform { low: 0.0, high: 9e-5 }
        );
        assert_eq!(
            bfgs.process_settings("gr_30_30").kind,
            ProcessNoiseKind::Uniform { low: 0.0, high: 2e-6 }
        );
    }

    #[test]
    fn full_toml_round_trip() {
        let text = r#"
dataset = "synthetic:40,6,10,3"
method = "hbm"
noise = "process"
seed = 7
reps = 3
[params]
alpha = 0.05
beta = 0.5
[process]
kind = "uniform"
low = 0.0
high = 1e-4
omega = 0.01
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.params.alpha, Some(0.05));
        assert_eq!(cfg.process.unwrap().omega, Some(0.01));
        let back = RunConfig::from_toml_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn tuning_switch_selects_parameter_source() {
        use crate::dataset::{compute_spectrum, CollectiveData};
        let a = nalgebra::DMatrix::from_fn(6, 2, |i, j| if i % 2 == j { 2.0 } else { 0.5 });
        let spec = compute_spectrum(&CollectiveData::with_unit_solution("s", a).unwrap()).unwrap();
        let mut cfg = RunConfig::from_toml_str("dataset = \"gr_30_30\"\nmethod = \"gd\"\n").unwrap();
        assert_eq!(cfg.solver_config("gr_30_30", &spec, None).unwrap().alpha, 0.014);
        cfg.tuning = Tuning::Rate;
        let tuned = cfg.solver_config("gr_30_30", &spec, None).unwrap().alpha;
        assert_eq!(tuned, 2.0 / (spec.lambda_1 + spec.lambda_d));
        assert_eq!("RATE".parse::<Tuning>().unwrap(), Tuning::Rate);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::from_toml_str("dataset = \"x\"\nmethod = \"ipg\"\n").is_err());
        assert!(RunConfig::from_toml_str("dataset = \"ash608\"\nmethod = \"sgd\"\n").is_err());
        assert!(RunConfig::from_toml_str("dataset = \"ash608\"\nmethod = \"ipg\"\nagents = 0\n").is_err());
        assert!(RunConfig::from_toml_str("dataset = \"ash608\"\nmethod = \"ipg\"\ntypo = 1\n").is_err());
    }

    #[test]
    fn sweep_expansion_order() {
        let grid = GridConfig::from_toml_str(
            r#"
[[run]]
dataset = "ash608"
method = "gd"

[[sweep]]
datasets = ["ash608", "gr_30_30"]
methods = ["ipg", "bfgs"]
noises = ["observation"]
reps = 4
"#,
        )
        .unwrap();
        let runs = grid.expand();
        assert_eq!(runs.len(), 5);
        assert_eq!(runs[0].method, Method::Gd);
        let cells: Vec<(String, Method)> = runs[1..].iter().map(|r| (r.dataset.clone(), r.method)).collect();
        assert_eq!(
            cells,
            vec![
                ("ash608".into(), Method::Ipg),
                ("ash608".into(), Method::Bfgs),
                ("gr_30_30".into(), Method::Ipg),
                ("gr_30_30".into(), Method::Bfgs)
            ]
        );
        assert!(runs[1..]
            .iter()
            .all(|r| r.reps == 4 && r.noise == NoiseKind::Observation));
        assert!(GridConfig::from_toml_str("").unwrap().expand().is_empty());
    }
}
