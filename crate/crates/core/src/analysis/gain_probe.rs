//! Empirical probe of the asymptotic-gain property: open-loop runs with
//! bounded input perturbations around a constant input, measuring the
//! eventual state deviation from the matching equilibrium.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::equilibria::{solve_equilibrium, NewtonOptions};
use crate::control::Plant;
use crate::error::{Error, Result};
use crate::sim::{simulate_open_loop, PiecewiseLinear};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeOptions {
    pub h: f64,
    /// Spacing of the knots of the random piecewise-linear perturbation.
    pub knot_spacing: f64,
    /// Initial states are drawn uniformly from a box of this half-width
    /// around the equilibrium.
    pub ic_radius: f64,
    /// The limsup is approximated by the max over this final fraction of the
    /// horizon.
    pub tail_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            h: 1e-2,
            knot_spacing: 1.0,
            ic_radius: 1.0,
            tail_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    pub m: f64,
    /// Largest tail deviation over all trials.
    pub observed: f64,
    pub per_trial: Vec<f64>,
}

fn trial_rng(seed: u64, m_index: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((m_index as u64) << 32) | trial as u64);
    rng
}

/// For each perturbation amplitude `m`, runs `trials` open-loop simulations
/// with `u(t) = u0 + p(t)`, `|p| <= m`, from random initial states, and
/// records the tail maximum of `||x(t) - Xi(u0)||`.
pub fn probe_asymptotic_gain(
    plant: &Plant,
    u0: f64,
    m_values: &[f64],
    trials: usize,
    horizon: f64,
    opts: &ProbeOptions,
) -> Result<Vec<GainEntry>> {
    if m_values.iter().any(|&m| !(m >= 0.0)) {
        return Err(Error::config("campaign.ag_m_values", "amplitudes must be non-negative"));
    }
    if trials == 0 || !(horizon > opts.knot_spacing) {
        return Err(Error::config("campaign", "need trials >= 1 and horizon > knot spacing"));
    }
    let n = plant.dim();
    let seed = plant.closed_form_equilibrium(u0).transpose()?.unwrap_or_else(|| vec![0.0; n]);
    let (xi, _) = solve_equilibrium(plant, u0, &seed, &NewtonOptions::default())?;
    let knots = (horizon / opts.knot_spacing).ceil() as usize;
    let tail_start = (1.0 - opts.tail_fraction) * horizon;

    m_values
        .iter()
        .enumerate()
        .map(|(mi, &m)| {
            let per_trial = (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(opts.seed, mi, trial);
                    let x0: Vec<f64> = xi.iter().map(|&c| c + rng.gen_range(-1.0..=1.0) * opts.ic_radius).collect();
                    let times: Vec<f64> = (0..=knots).map(|j| j as f64 * opts.knot_spacing).collect();
                    let values: Vec<f64> = times.iter().map(|_| rng.gen_range(-1.0..=1.0) * m).collect();
                    let perturbation = PiecewiseLinear::new(times, values)?;
                    let run = simulate_open_loop(plant, &x0, |t| u0 + perturbation.eval(t), opts.h, horizon, 1)?;
                    Ok(run
                        .iter()
                        .filter(|(t, _)| *t >= tail_start)
                        .map(|(_, x)| x.iter().zip(&xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                        .fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(GainEntry {
                m,
                observed: per_trial.iter().copied().fold(0.0, f64::max),
                per_trial,
            })
        })
        .collect()
}

/// Asymptotic gain of the example plant, `m (m + 2 (u_max + delta) + 1)`.
pub fn example1_gamma(m: f64, u_max: f64, delta: f64) -> f64 {
    m * (m + 2.0 * (u_max + delta) + 1.0)
}
