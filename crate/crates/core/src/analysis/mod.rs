//! Numerical checks of the standing assumptions on a plant: stable
//! equilibria over `U_delta`, an increasing steady-state map, and an
//! empirical asymptotic gain. Also the linearized Routh bound, the reduced
//! model and the Lyapunov decrease monitors.

mod equilibria;
mod gain_probe;
mod linearized;
mod lyapunov;
mod reduced;
mod steady_state;

pub use equilibria::{
    check_assumption1, continue_equilibria, continue_equilibria_with, equilibrium_at, reference_equilibrium,
    solve_equilibrium, spectral_abscissa, steady_state_output, Assumption1Check, ContinuationOptions, EquilibriumCurve,
    EquilibriumSample, NewtonOptions, DEFAULT_MARGIN_TOL,
};
pub use gain_probe::{example1_gamma, probe_asymptotic_gain, GainEntry, ProbeOptions};
pub use linearized::{
    characteristic_polynomial, closed_loop_poles, companion_matrix, kappa_lin, linearized_stability, routh_bound,
    routh_hurwitz,
};
pub use lyapunov::{lyapunov_monitors, reduced_v_decrease, MonitorRow, MonitorSeries, VDecreaseCheck};
pub use reduced::{boundary_layer_rhs, reduced_model_rhs, simulate_reduced};
pub use steady_state::{min_secant_slope, steady_state_map, SampledMap, SteadyStateMap};

use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, Plant};
use crate::error::{Error, Result};

/// Settings of the asymptotic-gain probe inside [`analyze`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainProbeSettings {
    pub u0: f64,
    pub m_values: Vec<f64>,
    pub trials: usize,
    pub horizon: f64,
    pub options: ProbeOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub grid_size: usize,
    pub x_seed: Vec<f64>,
    pub margin_tol: f64,
    pub gain_probe: Option<GainProbeSettings>,
}

/// Outcome of the assumption checks, serialized as `assumptions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub plant: String,
    pub grid_size: usize,
    pub a1_pass: bool,
    pub max_spectral_abscissa: Option<f64>,
    pub a2_pass: bool,
    pub mu_hat: Option<f64>,
    pub y_range: Option<[f64; 2]>,
    /// Adjacent grid pair where `G` fails to increase.
    pub offending_pair: Option<[f64; 2]>,
    pub a3_u0: Option<f64>,
    pub a3_estimate: Vec<GainEntry>,
    pub notes: Vec<String>,
}

/// Runs continuation, the linearization test, the steady-state map and
/// (optionally) the gain probe. Returns the report and, when continuation
/// succeeded, the curve.
pub fn analyze(
    plant: &Plant,
    cfg: &ControllerConfig,
    opts: &AnalysisOptions,
) -> Result<(AssumptionReport, Option<EquilibriumCurve>)> {
    let mut report = AssumptionReport {
        plant: plant.name().to_string(),
        grid_size: opts.grid_size,
        a1_pass: false,
        max_spectral_abscissa: None,
        a2_pass: false,
        mu_hat: None,
        y_range: None,
        offending_pair: None,
        a3_u0: None,
        a3_estimate: Vec::new(),
        notes: Vec::new(),
    };

    let curve = match continue_equilibria(plant, cfg, opts.grid_size, &opts.x_seed) {
        Ok(curve) => curve,
        Err(Error::NewtonDiverged { u, residual }) => {
            report.notes.push(format!("equilibrium branch lost at u = {u} (residual {residual:e})"));
            return Ok((report, None));
        }
        Err(e) => return Err(e),
    };

    let a1 = check_assumption1(&curve, opts.margin_tol);
    report.a1_pass = a1.pass;
    report.max_spectral_abscissa = Some(a1.max_abscissa);
    if !a1.pass {
        report.notes.push(format!(
            "spectral abscissa {} exceeds -{} on the grid",
            a1.max_abscissa, opts.margin_tol
        ));
    }

    match steady_state_map(&curve, plant) {
        Ok(ss) => {
            report.a2_pass = true;
            report.mu_hat = Some(ss.mu_hat);
            report.y_range = Some([ss.y_min, ss.y_max]);
        }
        Err(Error::NonMonotone { u_a, u_b, slope }) => {
            report.mu_hat = Some(slope);
            report.offending_pair = Some([u_a, u_b]);
            report.notes.push(format!("G does not increase on [{u_a}, {u_b}]"));
        }
        Err(e) => return Err(e),
    }

    if let Some(probe) = &opts.gain_probe {
        if a1.pass {
            report.a3_u0 = Some(probe.u0);
            report.a3_estimate =
                probe_asymptotic_gain(plant, probe.u0, &probe.m_values, probe.trials, probe.horizon, &probe.options)?;
            report
                .notes
                .push("asymptotic gain is estimated from finite-horizon runs; it is evidence, not a proof".into());
        } else {
            report.notes.push("asymptotic-gain probe skipped: equilibria are not uniformly stable".into());
        }
    }
    Ok((report, Some(curve)))
}
