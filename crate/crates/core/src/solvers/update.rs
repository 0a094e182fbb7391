//! Pure server updates: each takes the current state and the aggregated agent
//! replies and returns the next state. Under process noise every freshly
//! computed iterate is corrupted before it is stored.

use nalgebra::{DMatrix, DVector};

use super::{Aux, ServerState, SolverConfig};
use crate::error::{Error, Result};
use crate::noise::{var, ProcessNoiseSpec};

/// Curvature pairs with `s^T y <= CURVATURE_TOL * |s| |y|` are not used.
const CURVATURE_TOL: f64 = 1e-12;

fn corrupt_vec(noise: Option<&ProcessNoiseSpec>, mut v: DVector<f64>, id: u64, t: usize) -> DVector<f64> {
    if let Some(n) = noise {
        n.corrupt_vector(&mut v, id, t as u64);
    }
    v
}

/// Corrupts a fresh estimate and reports the l1 norm of the noise added.
fn corrupt_x(noise: Option<&ProcessNoiseSpec>, clean: DVector<f64>, t: usize) -> (DVector<f64>, f64) {
    match noise {
        Some(n) => {
            let mut v = clean.clone();
            n.corrupt_vector(&mut v, var::X, t as u64);
            let l1 = (&v - clean).lp_norm(1);
            (v, l1)
        }
        None => (clean, 0.0),
    }
}

fn corrupt_mat(noise: Option<&ProcessNoiseSpec>, mut m: DMatrix<f64>, base: u64, t: usize) -> DMatrix<f64> {
    if let Some(n) = noise {
        n.corrupt_matrix(&mut m, base, t as u64);
    }
    m
}

fn check_len(v: &DVector<f64>, d: usize, what: &str) -> Result<()> {
    if v.len() != d {
        return Err(Error::Dimension(format!("{what} has length {}, expected {d}", v.len())));
    }
    Ok(())
}

fn prev_iterate(state: &ServerState) -> &DVector<f64> {
    match &state.aux {
        Aux::Momentum { prev } => prev,
        _ => &state.x,
    }
}

/// One IPG round from `G = sum g^i` and `R = sum R^i` (`None` keeps `K`
/// frozen).
///
/// `K(t+1) = K(t) - alpha R`, corrupted to `K°(t+1)`; then
/// `x(t+1) = x(t) - delta K°(t+1) G`, corrupted to `x°(t+1)`. Without noise
/// the corruption steps are the identity.
pub fn ipg_update(
    state: &ServerState,
    g: &DVector<f64>,
    r: Option<&DMatrix<f64>>,
    cfg: &SolverConfig,
    noise: Option<&ProcessNoiseSpec>,
) -> Result<ServerState> {
    let d = state.x.len();
    check_len(g, d, "aggregated gradient")?;
    let k = state
        .k
        .as_ref()
        .ok_or_else(|| Error::Config("IPG state carries no pre-conditioner".into()))?;
    let t1 = state.t + 1;
    let k_next = match r {
        Some(r) => {
            if r.shape() != (d, d) {
                return Err(Error::Dimension(format!(
                    "R sum is {:?}, expected {d} x {d}",
                    r.shape()
                )));
            }
            corrupt_mat(noise, k - r * cfg.alpha, var::K_BASE, t1)
        }
        None => k.clone(),
    };
    let step = &k_next * g;
    let (x, x_noise_l1) = corrupt_x(noise, &state.x - step * cfg.delta, t1);
    Ok(ServerState {
        t: t1,
        x,
        k: Some(k_next),
        aux: Aux::None,
        x_noise_l1,
    })
}

/// `x(t+1) = x(t) - alpha G`
pub fn gd_update(
    state: &ServerState,
    g: &DVector<f64>,
    cfg: &SolverConfig,
    noise: Option<&ProcessNoiseSpec>,
) -> Result<ServerState> {
    check_len(g, state.x.len(), "aggregated gradient")?;
    let t1 = state.t + 1;
    let (x, x_noise_l1) = corrupt_x(noise, &state.x - g * cfg.alpha, t1);
    Ok(ServerState {
        t: t1,
        x,
        k: None,
        aux: Aux::None,
        x_noise_l1,
    })
}

/// `x(t+1) = x(t) - alpha G + beta (x(t) - x(t-1))`
pub fn hbm_update(
    state: &ServerState,
    g: &DVector<f64>,
    cfg: &SolverConfig,
    noise: Option<&ProcessNoiseSpec>,
) -> Result<ServerState> {
    check_len(g, state.x.len(), "aggregated gradient")?;
    let t1 = state.t + 1;
    let momentum = (&state.x - prev_iterate(state)) * cfg.beta;
    let (x, x_noise_l1) = corrupt_x(noise, &state.x - g * cfg.alpha + momentum, t1);
    Ok(ServerState {
        t: t1,
        x,
        k: None,
        aux: Aux::Momentum { prev: state.x.clone() },
        x_noise_l1,
    })
}

/// The point NAG broadcasts: `y(t) = x(t) + beta (x(t) - x(t-1))`.
pub fn nag_extrapolate(state: &ServerState, cfg: &SolverConfig, noise: Option<&ProcessNoiseSpec>) -> DVector<f64> {
    let y = &state.x + (&state.x - prev_iterate(state)) * cfg.beta;
    corrupt_vec(noise, y, var::PREV_X, state.t)
}

/// `x(t+1) = y(t) - alpha G`, with `G` the aggregated gradient at `y(t)`.
pub fn nag_update(
    state: &ServerState,
    y: &DVector<f64>,
    g: &DVector<f64>,
    cfg: &SolverConfig,
    noise: Option<&ProcessNoiseSpec>,
) -> Result<ServerState> {
    check_len(g, state.x.len(), "aggregated gradient")?;
    check_len(y, state.x.len(), "extrapolated point")?;
    let t1 = state.t + 1;
    let (x, x_noise_l1) = corrupt_x(noise, y - g * cfg.alpha, t1);
    Ok(ServerState {
        t: t1,
        x,
        k: None,
        aux: Aux::Momentum { prev: state.x.clone() },
        x_noise_l1,
    })
}

/// Rank-two inverse-Hessian update
/// `M+ = (I - r s y^T) M (I - r y s^T) + r s s^T` with `r = 1 / (s^T y)`.
///
/// Returns `None` when the curvature condition fails. `M` need not be
/// symmetric.
pub fn bfgs_inverse_update(m: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> Option<DMatrix<f64>> {
    let sy = s.dot(y);
    if !sy.is_finite() || sy <= CURVATURE_TOL * s.norm() * y.norm() {
        return None;
    }
    let r = 1.0 / sy;
    // Expanded: M - r (s (y^T M) + (M y) s^T) + (r^2 y^T M y + r) s s^T.
    let my = m * y;
    let ytm = m.tr_mul(y);
    let ymy = y.dot(&my);
    let mut out = m.clone();
    out.ger(-r, s, &ytm, 1.0);
    out.ger(-r, &my, s, 1.0);
    out.ger(r * r * ymy + r, s, s, 1.0);
    Some(out)
}

/// One BFGS round on the aggregated gradient `G(t)`: refresh `M` from the
/// previous curvature pair, then step along `p = -M G` by
/// `x(t+1) = x(t) + tau p`, where `step_length(p)` supplies `tau`.
pub fn bfgs_update<F>(
    state: &ServerState,
    g: &DVector<f64>,
    step_length: F,
    noise: Option<&ProcessNoiseSpec>,
) -> Result<ServerState>
where
    F: FnOnce(&DVector<f64>) -> Result<f64>,
{
    check_len(g, state.x.len(), "aggregated gradient")?;
    let Aux::Bfgs { m, prev, skipped } = &state.aux else {
        return Err(Error::Config(
            "BFGS state carries no inverse-Hessian approximation".into(),
        ));
    };
    let mut skipped = *skipped;
    let m = match prev {
        Some((xp, gp)) => match bfgs_inverse_update(m, &(&state.x - xp), &(g - gp)) {
            Some(next) => next,
            None => {
                skipped += 1;
                m.clone()
            }
        },
        None => m.clone(),
    };
    let t1 = state.t + 1;
    let p = -(&m * g);
    let tau = step_length(&p)?;
    let (x, x_noise_l1) = corrupt_x(noise, &state.x + p * tau, t1);
    Ok(ServerState {
        t: t1,
        x,
        x_noise_l1,
        k: None,
        aux: Aux::Bfgs {
            m: corrupt_mat(noise, m, var::M_BASE, t1),
            prev: Some((state.x.clone(), g.clone())),
            skipped,
        },
    })
}
