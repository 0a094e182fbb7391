//! Error bounds for IPG under observation and process noise, and helpers for
//! checking them against Monte Carlo trajectories.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Spectrum;
use crate::error::{Error, Result};

/// Scalars every bound is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lambda_1: f64,
    pub lambda_d: f64,
    pub varrho: f64,
    /// Contraction rate of the pre-conditioner iteration.
    pub rho: f64,
    pub alpha: f64,
    pub delta: f64,
    /// Per-agent bound on the expected l1 norm of the observation noise.
    pub eta: f64,
    /// Bound on the expected l1 norm of each process-noise vector.
    pub omega: f64,
    pub m: usize,
    pub d: usize,
    /// `||K(0) - K*||_F`
    pub k_tilde0_fro: f64,
    /// `||K(0) - K*||_2`
    pub k_tilde0_spec: f64,
    /// `||x(0) - x*||`
    pub z0_norm: f64,
}

impl BoundInputs {
    /// Fills the inputs from a spectrum and an initial point, with
    /// `rho = max(|1 - alpha lambda_1|, |1 - alpha lambda_d|)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_spectrum(
        spectrum: &Spectrum,
        alpha: f64,
        delta: f64,
        m: usize,
        k0: &DMatrix<f64>,
        x0: &DVector<f64>,
        x_star: &DVector<f64>,
        eta: f64,
        omega: f64,
    ) -> Result<Self> {
        let d = x_star.len();
        if k0.shape() != (d, d) || x0.len() != d || spectrum.k_star.shape() != (d, d) {
            return Err(Error::Dimension("bound inputs disagree on d".into()));
        }
        let k_tilde = k0 - &spectrum.k_star;
        let k_tilde0_spec = k_tilde.clone().svd(false, false).singular_values.max();
        Ok(Self {
            lambda_1: spectrum.lambda_1,
            lambda_d: spectrum.lambda_d,
            varrho: spectrum.varrho,
            rho: spectrum.richardson_rate(alpha),
            alpha,
            delta,
            eta,
            omega,
            m,
            d,
            k_tilde0_fro: k_tilde.norm(),
            k_tilde0_spec,
            z0_norm: (x0 - x_star).norm(),
        })
    }

    fn check_lambda_d(&self) -> Result<()> {
        if self.lambda_d > 0.0 {
            Ok(())
        } else {
            Err(Error::RankDeficient {
                lambda_1: self.lambda_1,
                lambda_d: self.lambda_d,
            })
        }
    }

    fn check_rho(&self) -> Result<()> {
        if (0.0..1.0).contains(&self.rho) {
            Ok(())
        } else {
            Err(Error::NotContractive(self.rho))
        }
    }
}

/// `rho^n` with `0^0 = 1`.
fn pow(rho: f64, n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        rho.powf(n as f64)
    }
}

/// `sum_{i=0}^{t} rho^i`
fn geometric_sum(rho: f64, t: usize) -> f64 {
    if (rho - 1.0).abs() < f64::EPSILON {
        (t + 1) as f64
    } else {
        (1.0 - pow(rho, t + 1)) / (1.0 - rho)
    }
}

/// Bound on `E||z(t+1)||` given the realized `||z(t)||` under observation
/// noise:
/// `(1 - delta + delta lambda_1 ||K~(0)||_F rho^{t+1}) ||z(t)||
///  + delta eta m sqrt(lambda_1) ||K~(0)||_F rho^{t+1} + delta eta m / sqrt(lambda_d)`.
pub fn theorem1_step_bound(inputs: &BoundInputs, z_t_norm: f64, t: usize) -> Result<f64> {
    inputs.check_lambda_d()?;
    inputs.check_rho()?;
    let BoundInputs {
        lambda_1,
        lambda_d,
        delta,
        eta,
        m,
        k_tilde0_fro,
        ..
    } = *inputs;
    let decay = k_tilde0_fro * pow(inputs.rho, t + 1);
    let m = m as f64;
    Ok((1.0 - delta + delta * lambda_1 * decay) * z_t_norm
        + delta * eta * m * lambda_1.sqrt() * decay
        + delta * eta * m / lambda_d.sqrt())
}

/// `delta eta m / sqrt(lambda_d)`, the limit of the observation-noise bound.
pub fn theorem1_asymptote(inputs: &BoundInputs) -> Result<f64> {
    inputs.check_lambda_d()?;
    Ok(inputs.delta * inputs.eta * inputs.m as f64 / inputs.lambda_d.sqrt())
}

/// `delta eta m sqrt(lambda_1)`, the corresponding bound for plain GD.
pub fn gd_observation_asymptote(inputs: &BoundInputs) -> Result<f64> {
    inputs.check_lambda_d()?;
    Ok(inputs.delta * inputs.eta * inputs.m as f64 * inputs.lambda_1.sqrt())
}

/// `u(t) = 1 - delta + delta lambda_1 (rho^t ||K~(0)||_2 + omega sqrt(d) sum_{i=0}^t rho^i)`
pub fn u_of_t(inputs: &BoundInputs, t: usize) -> f64 {
    let BoundInputs {
        lambda_1,
        rho,
        delta,
        omega,
        d,
        k_tilde0_spec,
        ..
    } = *inputs;
    1.0 - delta + delta * lambda_1 * (pow(rho, t) * k_tilde0_spec + omega * (d as f64).sqrt() * geometric_sum(rho, t))
}

/// `lim u(t) = 1 - delta + delta omega / omega_bd` for `rho < 1`.
pub fn u_limit(inputs: &BoundInputs) -> f64 {
    let gates = theorem2_gates(inputs);
    1.0 - inputs.delta + inputs.delta * inputs.omega / gates.omega_bd
}

/// Thresholds under which the process-noise bound has a finite limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Gates {
    /// `||K~(0)|| / (||K~(0)|| + omega sqrt(d))`
    pub rho_bd: f64,
    /// `(1 - rho) / (lambda_1 sqrt(d))`
    pub omega_bd: f64,
    /// `rho < rho_bd` and `omega < omega_bd`.
    pub satisfied: bool,
}

pub fn theorem2_gates(inputs: &BoundInputs) -> Theorem2Gates {
    let sd = (inputs.d as f64).sqrt();
    let k = inputs.k_tilde0_spec;
    let rho_bd = if k + inputs.omega * sd > 0.0 {
        k / (k + inputs.omega * sd)
    } else {
        1.0
    };
    let omega_bd = (1.0 - inputs.rho) / (inputs.lambda_1 * sd);
    Theorem2Gates {
        rho_bd,
        omega_bd,
        satisfied: inputs.rho < rho_bd && inputs.omega < omega_bd,
    }
}

/// `B(t) = prod_{k=1}^t u(k) ||z(0)|| + (1 + sum_{j=1}^t prod_{k=j}^t u(k)) omega`
/// for `t = 0..=t_max`.
///
/// Both terms obey `B(t) = u(t) B(t-1) + omega` with `B(0) = ||z(0)|| + omega`,
/// so the whole series costs one multiply-add per step and never forms a
/// long product on its own. A truly divergent bound shows up as `inf`.
pub fn theorem2_series(inputs: &BoundInputs, t_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_max + 1);
    let mut b = inputs.z0_norm + inputs.omega;
    out.push(b);
    for t in 1..=t_max {
        b = u_of_t(inputs, t) * b + inputs.omega;
        out.push(b);
    }
    out
}

/// Single value of [`theorem2_series`].
pub fn theorem2_bound(inputs: &BoundInputs, t: usize) -> f64 {
    let mut b = inputs.z0_norm + inputs.omega;
    for k in 1..=t {
        b = u_of_t(inputs, k) * b + inputs.omega;
    }
    b
}

/// `omega / (delta (1 - omega / omega_bd))`, or `inf` when `omega >= omega_bd`.
pub fn theorem2_limit(inputs: &BoundInputs) -> f64 {
    let gates = theorem2_gates(inputs);
    let ratio = inputs.omega / gates.omega_bd;
    if ratio < 1.0 {
        inputs.omega / (inputs.delta * (1.0 - ratio))
    } else {
        f64::INFINITY
    }
}

/// `omega / (1 - ||I - step A^T A||_2)` for GD with step `step` under process
/// noise.
pub fn gd_process_asymptote(lambda_1: f64, lambda_d: f64, step: f64, omega: f64) -> Result<f64> {
    let c = (1.0 - step * lambda_1).abs().max((1.0 - step * lambda_d).abs());
    if c >= 1.0 {
        return Err(Error::NotContractive(c));
    }
    Ok(omega / (1.0 - c))
}

/// `||x - x*||`
pub fn estimation_error(x: &DVector<f64>, x_star: &DVector<f64>) -> f64 {
    (x - x_star).norm()
}

/// Sample mean, standard deviation and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub se: f64,
}

impl SampleStats {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std = var.sqrt();
        Ok(Self {
            n,
            mean,
            std,
            se: std / (n as f64).sqrt(),
        })
    }
}

/// Per-iteration comparison of bounds with Monte Carlo error statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTraceRow {
    pub t: usize,
    /// Mean over repetitions of the one-step bound evaluated at each
    /// repetition's own `||z(t-1)||`; absent at `t = 0`.
    pub theorem1_rhs: Option<f64>,
    pub u: f64,
    pub theorem2_rhs: f64,
    pub empirical_mean: f64,
    pub empirical_max: f64,
    pub empirical_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrace {
    pub rows: Vec<BoundTraceRow>,
}

impl BoundTrace {
    /// Builds the trace from error trajectories `errors[rep][t]`, truncated to
    /// the shortest repetition.
    pub fn from_trajectories(inputs: &BoundInputs, errors: &[Vec<f64>]) -> Result<Self> {
        let len = errors.iter().map(Vec::len).min().ok_or(Error::EmptySample)?;
        let t2 = theorem2_series(inputs, len.saturating_sub(1));
        let mut rows = Vec::with_capacity(len);
        for t in 0..len {
            let col: Vec<f64> = errors.iter().map(|e| e[t]).collect();
            let stats = SampleStats::from_samples(&col)?;
            let theorem1_rhs = if t == 0 {
                None
            } else {
                let b: Vec<f64> = errors
                    .iter()
                    .map(|e| theorem1_step_bound(inputs, e[t - 1], t - 1))
                    .collect::<Result<_>>()?;
                Some(b.iter().sum::<f64>() / b.len() as f64)
            };
            rows.push(BoundTraceRow {
                t,
                theorem1_rhs,
                u: u_of_t(inputs, t),
                theorem2_rhs: t2[t],
                empirical_mean: stats.mean,
                empirical_max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                empirical_se: stats.se,
            });
        }
        Ok(Self { rows })
    }
}

/// Outcome of checking `E[||z(t+1)|| | z(t)] <= bound` at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub t: usize,
    /// Mean of `bound(z_r(t), t) - ||z_r(t+1)||` over repetitions `r`.
    pub mean_slack: f64,
    pub se: f64,
    /// `mean_slack >= -sigmas * se`
    pub ok: bool,
}

/// One-step conditional check of [`theorem1_step_bound`] at every `t`, from
/// error trajectories `errors[rep][t]`.
pub fn theorem1_step_checks(inputs: &BoundInputs, errors: &[Vec<f64>], sigmas: f64) -> Result<Vec<StepCheck>> {
    let len = errors.iter().map(Vec::len).min().ok_or(Error::EmptySample)?;
    (0..len.saturating_sub(1))
        .map(|t| {
            let slack: Vec<f64> = errors
                .iter()
                .map(|e| theorem1_step_bound(inputs, e[t], t).map(|b| b - e[t + 1]))
                .collect::<Result<_>>()?;
            let s = SampleStats::from_samples(&slack)?;
            Ok(StepCheck {
                t,
                mean_slack: s.mean,
                se: s.se,
                ok: s.mean >= -sigmas * s.se,
            })
        })
        .collect()
}
