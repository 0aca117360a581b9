//! Dwell time for piecewise-constant references, from the decay of the
//! slow-time error after a single jump.

use serde::{Deserialize, Serialize};

use super::decay::{fit_log_linear, upper_envelope};
use super::gain::CampaignOptions;
use crate::analysis::{equilibrium_at, reference_equilibrium, EquilibriumCurve};
use crate::control::{ClosedLoopState, ControllerConfig, Plant, Reference};
use crate::error::{Error, Result};
use crate::sim::{simulate, SimConfig, Trajectory};

/// Minimum `R^2` of an accepted envelope fit.
pub const DWELL_FIT_R2_MIN: f64 = 0.9;

/// `ln(K1) / (gamma k)`.
pub fn dwell_time(gamma: f64, k1: f64, k: f64) -> f64 {
    k1.ln() / (gamma * k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellPairFit {
    pub r_from: f64,
    pub r_to: f64,
    /// Decay rate in slow time `s = k t`.
    pub gamma: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellEstimate {
    pub k: f64,
    /// Smallest fitted rate over the sample jumps.
    pub gamma: f64,
    /// Smallest `K1 >= 1` with `||e(s)|| <= K1 exp(-gamma s) ||e(0)||` on
    /// every sample jump.
    pub k1: f64,
    pub t_bar: f64,
    pub pairs: Vec<DwellPairFit>,
}

/// `||(u_I - u_r, x - Xi(u_I))||` along a trajectory.
pub(crate) fn slow_error(traj: &Trajectory, plant: &Plant, curve: &EquilibriumCurve, u_r: f64) -> Result<Vec<f64>> {
    traj.rows
        .iter()
        .map(|row| {
            let xi = equilibrium_at(plant, curve, row.u_i)?;
            let z2: f64 = row.x.iter().zip(&xi).map(|(a, b)| (a - b) * (a - b)).sum();
            let du = row.u_i - u_r;
            Ok((z2 + du * du).sqrt())
        })
        .collect()
}

/// Runs each `(r_from, r_to)` jump from the equilibrium of `r_from`, fits
/// the decay rate of the slow-time error on the final part of its
/// pre-convergence window and the overshoot constant over the whole window.
pub fn estimate_dwell(
    plant: &Plant,
    cfg: &ControllerConfig,
    curve: &EquilibriumCurve,
    sample_refs: &[(f64, f64)],
    opts: &CampaignOptions,
) -> Result<DwellEstimate> {
    cfg.validate()?;
    let k = cfg.k;
    let mut pairs = Vec::new();
    let mut windows: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for &(r_from, r_to) in sample_refs {
        let (u_from, x_from) = reference_equilibrium(plant, curve, r_from)?;
        let (u_to, _) = reference_equilibrium(plant, curve, r_to)?;
        let traj = simulate(plant, cfg, &opts.sim, &Reference::constant(r_to), &ClosedLoopState::new(x_from, u_from))?;
        let e = slow_error(&traj, plant, curve, u_to)?;
        let s: Vec<f64> = traj.rows.iter().map(|row| k * (row.t - traj.rows[0].t)).collect();
        let Some(last_above) = e.iter().rposition(|&v| v >= opts.decay.conv_eps) else {
            continue;
        };
        if e[0] == 0.0 {
            continue;
        }
        if e.last().is_none_or(|&v| !(v < opts.decay.conv_eps)) {
            return Err(Error::FitFailed { r_squared: f64::NAN });
        }
        let s_start = (1.0 - opts.decay.window_fraction) * s[last_above];
        let first = s.partition_point(|&v| v < s_start).min(last_above);
        let env = upper_envelope(&e[first..=last_above]);
        let fit = fit_log_linear(&s[first..=last_above], &env).ok_or(Error::FitFailed { r_squared: f64::NAN })?;
        if fit.r_squared < DWELL_FIT_R2_MIN || !(fit.slope < 0.0) {
            return Err(Error::FitFailed {
                r_squared: fit.r_squared,
            });
        }
        pairs.push(DwellPairFit {
            r_from,
            r_to,
            gamma: -fit.slope,
            r_squared: fit.r_squared,
        });
        windows.push((s[..=last_above].to_vec(), e[..=last_above].to_vec()));
    }
    if pairs.is_empty() {
        return Err(Error::Precondition("dwell estimation needs at least one jump between distinct references".into()));
    }
    let gamma = pairs.iter().map(|p| p.gamma).fold(f64::INFINITY, f64::min);
    let k1 = windows
        .iter()
        .flat_map(|(s, e)| s.iter().zip(e).map(move |(&si, &ei)| ei * (gamma * si).exp() / e[0]))
        .fold(1.0, f64::max);
    Ok(DwellEstimate {
        k,
        gamma,
        k1,
        t_bar: dwell_time(gamma, k1, k),
        pairs,
    })
}

/// `r_a` until `dwell`, `r_b` until `2 dwell`, then `r_a` again.
pub fn two_jump_reference(r_a: f64, r_b: f64, dwell: f64) -> Result<Reference> {
    Reference::steps(vec![(0.0, r_a), (dwell, r_b), (2.0 * dwell, r_a)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpCheck {
    pub t_jump: f64,
    pub r_before: f64,
    /// `|y - r|` just before the jump.
    pub tracking_error: f64,
    /// `||x - Xi(u_I)||` at the jump.
    pub z_norm: f64,
    pub settled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellVerification {
    /// Shortest spacing between jumps.
    pub dwell: f64,
    pub jumps: Vec<JumpCheck>,
    pub final_tracking_error: f64,
    /// Every jump found the output within `tol` of the previous reference.
    pub all_settled: bool,
    /// `||z|| <= eps0` at every jump.
    pub basin_ok: bool,
}

/// Simulates `reference` from the equilibrium of its first value and checks
/// the tracking error and the boundary-layer deviation at every jump.
pub fn verify_dwell(
    plant: &Plant,
    cfg: &ControllerConfig,
    curve: &EquilibriumCurve,
    reference: &Reference,
    sim: &SimConfig,
    eps0: f64,
    tol: f64,
) -> Result<DwellVerification> {
    let segs = reference.segments();
    let (u0, x0) = reference_equilibrium(plant, curve, segs[0].1)?;
    let traj = simulate(plant, cfg, sim, reference, &ClosedLoopState::new(x0, u0))?;
    let mut jumps = Vec::new();
    for win in segs.windows(2) {
        let (t_jump, r_before) = (win[1].0, win[0].1);
        if t_jump >= sim.t_end {
            break;
        }
        let i = traj.rows.partition_point(|row| row.t < t_jump - 1e-9 * sim.h).min(traj.rows.len() - 1);
        let row = &traj.rows[i];
        let xi = equilibrium_at(plant, curve, row.u_i)?;
        let z_norm = row.x.iter().zip(&xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let tracking_error = (row.y - r_before).abs();
        jumps.push(JumpCheck {
            t_jump,
            r_before,
            tracking_error,
            z_norm,
            settled: tracking_error < tol,
        });
    }
    let last = traj.last().expect("trajectory has rows");
    let dwell = segs.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
    Ok(DwellVerification {
        dwell,
        all_settled: jumps.iter().all(|j| j.settled),
        basin_ok: jumps.iter().all(|j| j.z_norm <= eps0),
        final_tracking_error: (last.y - last.r).abs(),
        jumps,
    })
}
