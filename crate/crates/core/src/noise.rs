//! Observation noise on the agents' outputs and process noise on the server's
//! iterates.
//!
//! Every draw comes from a ChaCha stream keyed by `(seed, domain, id, t)`, so
//! a value depends only on what it corrupts and when, never on the order in
//! which agents or columns are evaluated.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::AgentShard;
use crate::error::{Error, Result};

const DOMAIN_OBSERVATION: u64 = 1;
const DOMAIN_PROCESS: u64 = 2;

/// Process-noise variable ids. Column `j` of a matrix-valued iterate uses
/// `base + j`.
pub mod var {
    pub const X: u64 = 0;
    pub const PREV_X: u64 = 1;
    pub const K_BASE: u64 = 1 << 20;
    pub const M_BASE: u64 = 2 << 20;
    pub const LOCAL_BASE: u64 = 3 << 20;
}

/// Counter-based stream for one `(seed, domain, id, t)` key.
pub fn keyed_rng(seed: u64, domain: u64, id: u64, t: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, domain, id, t]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn uniform(rng: &mut ChaCha8Rng, low: f64, high: f64) -> f64 {
    if high > low {
        rng.random_range(low..high)
    } else {
        low
    }
}

/// `E|U|` for `U ~ uniform(low, high)`.
fn mean_abs_uniform(low: f64, high: f64) -> f64 {
    if high <= low {
        low.abs()
    } else if low >= 0.0 || high <= 0.0 {
        (low + high).abs() / 2.0
    } else {
        (low * low + high * high) / (2.0 * (high - low))
    }
}

/// Entrywise `uniform(-half_width, half_width)` noise added once to each
/// agent's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationNoiseSpec {
    pub half_width: f64,
    /// Bound on `E ||w_b^i||_1` used in the bound formulas. Defaults to the
    /// largest closed-form per-agent expectation.
    #[serde(default)]
    pub eta: Option<f64>,
    pub seed: u64,
}

/// What one observation-noise draw did to the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationReport {
    /// Realized `||w_b^i||_1` per agent.
    pub realized_l1: Vec<f64>,
    /// Closed-form `E ||w_b^i||_1 = n_i a / 2` per agent.
    pub expected_l1: Vec<f64>,
}

impl ObservationReport {
    pub fn max_realized(&self) -> f64 {
        self.realized_l1.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_expected(&self) -> f64 {
        self.expected_l1.iter().copied().fold(0.0, f64::max)
    }
}

impl ObservationNoiseSpec {
    pub fn new(half_width: f64, seed: u64) -> Self {
        Self {
            half_width,
            eta: None,
            seed,
        }
    }

    /// The configured `eta`, or `max_i n_i a / 2`.
    pub fn eta(&self, shards: &[AgentShard]) -> f64 {
        self.eta.unwrap_or_else(|| {
            shards
                .iter()
                .map(|s| s.n_rows() as f64 * mean_abs_uniform(-self.half_width, self.half_width))
                .fold(0.0, f64::max)
        })
    }

    /// Noise on global row `row`.
    pub fn row_noise(&self, row: usize) -> f64 {
        let mut rng = keyed_rng(self.seed, DOMAIN_OBSERVATION, row as u64, 0);
        uniform(&mut rng, -self.half_width, self.half_width)
    }
}

/// Sets `b_io = b_i + w` on every shard. Noise is keyed by global row index.
pub fn draw_observation_noise(spec: &ObservationNoiseSpec, shards: &mut [AgentShard]) -> Result<ObservationReport> {
    if spec.half_width.is_nan() || spec.half_width < 0.0 {
        return Err(Error::Config(format!(
            "observation noise half-width must be >= 0, got {}",
            spec.half_width
        )));
    }
    let mut realized = Vec::with_capacity(shards.len());
    let mut expected = Vec::with_capacity(shards.len());
    for shard in shards.iter_mut() {
        let w = DVector::from_fn(shard.n_rows(), |k, _| spec.row_noise(shard.row_offset() + k));
        realized.push(w.lp_norm(1));
        expected.push(shard.n_rows() as f64 * mean_abs_uniform(-spec.half_width, spec.half_width));
        let b_obs = shard.b() + w;
        shard.set_observed(b_obs)?;
    }
    Ok(ObservationReport {
        realized_l1: realized,
        expected_l1: expected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessNoiseKind {
    /// Round every entry to `decimals` places, half away from zero.
    RoundOff { decimals: u32 },
    /// Add an independent `uniform(low, high)` draw to every entry.
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoiseSpec {
    #[serde(flatten)]
    pub kind: ProcessNoiseKind,
    /// Bound on the expected l1 norm of each corrupted vector. Defaults to
    /// [`ProcessNoiseSpec::omega_bound`].
    #[serde(default)]
    pub omega: Option<f64>,
    pub seed: u64,
}

impl ProcessNoiseSpec {
    pub fn round_off(decimals: u32) -> Self {
        Self {
            kind: ProcessNoiseKind::RoundOff { decimals },
            omega: None,
            seed: 0,
        }
    }

    pub fn uniform(low: f64, high: f64, seed: u64) -> Self {
        Self {
            kind: ProcessNoiseKind::Uniform { low, high },
            omega: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProcessNoiseKind::RoundOff { decimals } if decimals > 15 => Err(Error::Config(format!(
                "round-off to {decimals} decimals is below f64 resolution"
            ))),
            ProcessNoiseKind::Uniform { low, high } if !low.is_finite() || !high.is_finite() || high < low => {
                Err(Error::Config(format!("invalid uniform noise range ({low}, {high})")))
            }
            _ => Ok(()),
        }
    }

    /// Worst-case l1 norm of the noise on a `d`-vector for round-off
    /// (`d q / 2` for quantum `q`), or its exact expectation for uniform noise.
    pub fn omega_bound(&self, d: usize) -> f64 {
        match self.kind {
            ProcessNoiseKind::RoundOff { decimals } => d as f64 * 0.5 * 10f64.powi(-(decimals as i32)),
            ProcessNoiseKind::Uniform { low, high } => d as f64 * mean_abs_uniform(low, high),
        }
    }

    /// Configured `omega`, else [`Self::omega_bound`].
    pub fn omega(&self, d: usize) -> f64 {
        self.omega.unwrap_or_else(|| self.omega_bound(d))
    }

    /// Closed-form expected l1 norm on a `d`-vector; for round-off this assumes
    /// the rounded values are spread evenly over the quantum (`d q / 4`).
    pub fn expected_l1(&self, d: usize) -> f64 {
        match self.kind {
            ProcessNoiseKind::RoundOff { decimals } => d as f64 * 0.25 * 10f64.powi(-(decimals as i32)),
            ProcessNoiseKind::Uniform { low, high } => d as f64 * mean_abs_uniform(low, high),
        }
    }

    /// Corrupts `v` in place as variable `variable` at iteration `t`.
    pub fn corrupt_slice(&self, v: &mut [f64], variable: u64, t: u64) {
        match self.kind {
            ProcessNoiseKind::RoundOff { decimals } => {
                let scale = 10f64.powi(decimals as i32);
                for x in v.iter_mut() {
                    *x = round_half_away(*x, scale);
                }
            }
            ProcessNoiseKind::Uniform { low, high } => {
                if low == 0.0 && high == 0.0 {
                    return;
                }
                let mut rng = keyed_rng(self.seed, DOMAIN_PROCESS, variable, t);
                for x in v.iter_mut() {
                    *x += uniform(&mut rng, low, high);
                }
            }
        }
    }

    pub fn corrupt_vector(&self, v: &mut DVector<f64>, variable: u64, t: u64) {
        self.corrupt_slice(v.as_mut_slice(), variable, t);
    }

    /// Corrupts column `j` of `m` as variable `base + j`.
    pub fn corrupt_matrix(&self, m: &mut DMatrix<f64>, base: u64, t: u64) {
        for (j, mut col) in m.column_iter_mut().enumerate() {
            self.corrupt_slice(col.as_mut_slice(), base + j as u64, t);
        }
    }
}

fn round_half_away(x: f64, scale: f64) -> f64 {
    let scaled = x * scale;
    if !scaled.is_finite() {
        return x;
    }
    // `f64::round` rounds half away from zero; the product can land a hair
    // off an exact tie, so snap near-ties before rounding.
    let floor = scaled.floor();
    let frac = scaled - floor;
    let r = if (frac - 0.5).abs() < 1e-9 {
        if scaled >= 0.0 {
            floor + 1.0
        } else {
            floor
        }
    } else {
        scaled.round()
    };
    r / scale
}

/// `(x°, K°)` for the current clean iterate.
pub fn corrupt_process(
    spec: &ProcessNoiseSpec,
    x: &DVector<f64>,
    k: &DMatrix<f64>,
    t: u64,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut xo = x.clone();
    let mut ko = k.clone();
    spec.corrupt_vector(&mut xo, var::X, t);
    spec.corrupt_matrix(&mut ko, var::K_BASE, t);
    (xo, ko)
}

/// Mean l1 norm of a sample of noise vectors.
pub fn estimate_noise_level<'a, I>(draws: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let (count, total) = draws
        .into_iter()
        .fold((0usize, 0.0), |(c, s), w| (c + 1, s + w.lp_norm(1)));
    if count == 0 {
        return Err(Error::EmptySample);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{partition, CollectiveData};

    fn shards(rows: usize, m: usize) -> Vec<AgentShard> {
        let a = DMatrix::from_fn(rows, 2, |i, j| (i + 2 * j + 1) as f64);
        partition(&CollectiveData::with_unit_solution("t", a).unwrap(), m).unwrap()
    }

    #[test]
    fn zero_width_observation_noise_is_identity() {
        let mut s = shards(6, 2);
        let report = draw_observation_noise(&ObservationNoiseSpec::new(0.0, 3), &mut s).unwrap();
        for sh in &s {
            assert_eq!(sh.b_obs().unwrap(), sh.b());
        }
        assert_eq!(report.max_realized(), 0.0);
    }

    #[test]
    fn observation_noise_is_bounded_and_keyed_by_row() {
        let spec = ObservationNoiseSpec::new(0.25, 11);
        let mut a = shards(20, 4);
        let mut b = shards(20, 5);
        draw_observation_noise(&spec, &mut a).unwrap();
        draw_observation_noise(&spec, &mut b).unwrap();
        let flat = |s: &[AgentShard]| -> Vec<f64> {
            s.iter()
                .flat_map(|sh| (sh.b_obs().unwrap() - sh.b()).iter().copied().collect::<Vec<_>>())
                .collect()
        };
        let (wa, wb) = (flat(&a), flat(&b));
        assert_eq!(wa, wb);
        assert!(wa.iter().all(|w| w.abs() < 0.25));
    }

    #[test]
    fn eta_closed_form() {
        let s = shards(608, 10);
        let spec = ObservationNoiseSpec::new(0.25, 0);
        assert!((spec.eta(&s) - 61.0 * 0.125).abs() < 1e-12);
        let fixed = ObservationNoiseSpec {
            eta: Some(8.23),
            ..spec
        };
        assert_eq!(fixed.eta(&s), 8.23);
    }

    #[test]
    fn round_off_four_places() {
        let spec = ProcessNoiseSpec::round_off(4);
        let mut v = DVector::from_vec(vec![0.12344999, -1.00005, 5e-5, -5e-5, 2.4e-5]);
        spec.corrupt_vector(&mut v, var::X, 0);
        assert_eq!(v.as_slice(), &[0.1234, -1.0001, 0.0001, -0.0001, 0.0]);
    }

    #[test]
    fn round_off_error_is_within_half_quantum() {
        let spec = ProcessNoiseSpec::round_off(4);
        let v = DVector::from_fn(500, |i, _| ((i as f64) * 0.7311).sin() * 3.0);
        let mut r = v.clone();
        spec.corrupt_vector(&mut r, var::X, 0);
        assert!((r - v).amax() <= 0.5e-4 + 1e-15);
    }

    #[test]
    fn zero_uniform_is_identity() {
        let spec = ProcessNoiseSpec::uniform(0.0, 0.0, 9);
        let k = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let x = DVector::from_vec(vec![0.5, -0.25, 2.0]);
        let (xo, ko) = corrupt_process(&spec, &x, &k, 4);
        assert_eq!(xo, x);
        assert_eq!(ko, k);
    }

    #[test]
    fn uniform_process_noise_is_deterministic_per_key() {
        let spec = ProcessNoiseSpec::uniform(0.0, 1e-3, 5);
        let mut a = DVector::zeros(4);
        let mut b = DVector::zeros(4);
        spec.corrupt_vector(&mut a, var::X, 7);
        spec.corrupt_vector(&mut b, var::X, 7);
        assert_eq!(a, b);
        let mut c = DVector::zeros(4);
        spec.corrupt_vector(&mut c, var::X, 8);
        assert_ne!(a, c);
        assert!(a.iter().all(|&w| (0.0..1e-3).contains(&w)));
    }

    #[test]
    fn omega_conventions() {
        assert!((ProcessNoiseSpec::round_off(4).omega(900) - 0.045).abs() < 1e-15);
        assert!((ProcessNoiseSpec::round_off(4).expected_l1(188) - 4.7e-3).abs() < 1e-15);
        assert!((ProcessNoiseSpec::uniform(0.0, 5e-5, 0).omega(900) - 0.0225).abs() < 1e-15);
        assert!((ProcessNoiseSpec::uniform(-0.1, 0.1, 0).omega(10) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn noise_level_estimate() {
        assert!(matches!(
            estimate_noise_level(std::iter::empty()),
            Err(Error::EmptySample)
        ));
        let z = [DVector::zeros(5), DVector::zeros(5)];
        assert_eq!(estimate_noise_level(&z).unwrap(), 0.0);
        let w = [DVector::from_vec(vec![1.0, -1.0]), DVector::from_vec(vec![0.5, 0.5])];
        assert_eq!(estimate_noise_level(&w).unwrap(), 1.5);
    }

    #[test]
    fn invalid_specs() {
        assert!(ProcessNoiseSpec::uniform(1.0, 0.0, 0).validate().is_err());
        assert!(ProcessNoiseSpec::round_off(20).validate().is_err());
        assert!(draw_observation_noise(&ObservationNoiseSpec::new(-1.0, 0), &mut shards(4, 2)).is_err());
    }
}
