//! Empirical certification campaigns: the largest exponentially stable gain,
//! a dwell time for step references, convergence from far initial states and
//! the windup comparison.

mod decay;
mod dwell;
mod gain;
mod sweep;
mod windup;

pub use decay::{assess_convergence, fit_line, fit_log_linear, log_upper_hull, upper_envelope, ConvergenceAssessment, DecayCriteria, DecayFit};
pub use dwell::{
    dwell_time, estimate_dwell, two_jump_reference, verify_dwell, DwellEstimate, DwellPairFit, DwellVerification,
    JumpCheck, DWELL_FIT_R2_MIN,
};
pub use gain::{
    certify_gain, default_ic_grid, default_r_grid, evaluate_gain, trace_is_monotone, CampaignOptions, GainCertification,
    GainSearch, GainTrial, InitialCondition, RunOutcome,
};
pub use sweep::{far_initial_states, global_sweep, SweepReport};
pub use windup::{windup_ab, WindupReport, WindupRun, WindupScenario};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Supported,
    Violated,
    Inconclusive,
}

/// Per-claim verdicts. Claims that were not exercised are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    /// Every local run converges exponentially for gains up to `kappa_star`.
    pub local_stability: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_tracking: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_convergence: Option<Verdict>,
}

impl Verdicts {
    pub fn all_supported(&self) -> bool {
        self.local_stability == Verdict::Supported
            && self.step_tracking.is_none_or(|v| v == Verdict::Supported)
            && self.global_convergence.is_none_or(|v| v == Verdict::Supported)
    }
}

/// Settings a certificate was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub seed: u64,
    pub r_grid: Vec<f64>,
    pub ic_count: usize,
    pub eps0: f64,
    pub k_range: [f64; 2],
    pub bisect_tol: f64,
    pub scan_points: usize,
    pub h: f64,
    pub t_end: f64,
    pub conv_eps: f64,
    pub r2_min: f64,
    pub window_fraction: f64,
    pub gain_trace: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dwell_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dwell_tested: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far_ic_count: Option<usize>,
}

/// Outcome of a certification campaign, written as `certificate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub plant: String,
    pub kappa_star: f64,
    pub kappa_lin: Option<f64>,
    #[serde(rename = "T_bar")]
    pub t_bar: Option<f64>,
    pub fitted_gamma: Option<f64>,
    #[serde(rename = "fitted_K1")]
    pub fitted_k1: Option<f64>,
    pub mu_hat: Option<f64>,
    pub max_spectral_abscissa: Option<f64>,
    pub campaign: CampaignRecord,
    pub verdicts: Verdicts,
}
