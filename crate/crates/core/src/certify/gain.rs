//! Bisection for the largest gain at which every campaign run converges
//! exponentially.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decay::{assess_convergence, DecayCriteria};
use super::Verdict;
use crate::analysis::{equilibrium_at, reference_equilibrium, EquilibriumCurve};
use crate::control::{ClosedLoopState, ControllerConfig, Plant, Reference};
use crate::error::{Error, Result};
use crate::sim::{simulate, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub x: Vec<f64>,
    pub u_i: f64,
}

impl InitialCondition {
    pub fn state(&self) -> ClosedLoopState {
        ClosedLoopState::new(self.x.clone(), self.u_i)
    }
}

/// Simulation and decay settings shared by every run of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignOptions {
    pub sim: SimConfig,
    pub decay: DecayCriteria,
}

/// `n` equispaced references over `[y_min, y_max]`.
pub fn default_r_grid(y_min: f64, y_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (y_min + y_max)],
        _ => (0..n).map(|i| y_min + (y_max - y_min) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `nodes` points on the equilibrium curve over `U`, each followed by two
/// perturbations of its plant state in a seeded random direction, with
/// norms `eps0 / 2` and `eps0`.
pub fn default_ic_grid(
    plant: &Plant,
    curve: &EquilibriumCurve,
    cfg: &ControllerConfig,
    nodes: usize,
    eps0: f64,
    seed: u64,
) -> Result<Vec<InitialCondition>> {
    if nodes < 2 {
        return Err(Error::config("campaign.ic_nodes", "need at least 2 nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(3 * nodes);
    for i in 0..nodes {
        let u = cfg.u_min + (cfg.u_max - cfg.u_min) * i as f64 / (nodes - 1) as f64;
        let xi = equilibrium_at(plant, curve, u)?;
        out.push(InitialCondition { x: xi.clone(), u_i: u });
        for scale in [0.5, 1.0] {
            let dir = random_direction(&mut rng, xi.len());
            let x = xi.iter().zip(&dir).map(|(a, d)| a + scale * eps0 * d).collect();
            out.push(InitialCondition { x, u_i: u });
        }
    }
    Ok(out)
}

pub(crate) fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // rejection keeps the direction uniform on the sphere
        if norm > 1e-3 && norm <= 1.0 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Target of a constant-reference run: `(u_r, Xi(u_r))`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Target {
    pub r: f64,
    pub u_r: f64,
    pub x_r: Vec<f64>,
}

pub(crate) fn targets(plant: &Plant, curve: &EquilibriumCurve, r_grid: &[f64]) -> Result<Vec<Target>> {
    r_grid
        .iter()
        .map(|&r| {
            let (u_r, x_r) = reference_equilibrium(plant, curve, r)?;
            Ok(Target { r, u_r, x_r })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub k: f64,
    pub r_index: usize,
    pub ic_index: usize,
    pub converged: bool,
    pub exponential: bool,
    pub non_finite: bool,
    pub final_error: f64,
    pub t_conv: Option<f64>,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.converged && self.exponential
    }
}

pub(crate) fn run_case(
    plant: &Plant,
    cfg: &ControllerConfig,
    target: &Target,
    ic: &InitialCondition,
    (r_index, ic_index): (usize, usize),
    opts: &CampaignOptions,
) -> Result<RunOutcome> {
    let mut outcome = RunOutcome {
        k: cfg.k,
        r_index,
        ic_index,
        converged: false,
        exponential: false,
        non_finite: false,
        final_error: f64::INFINITY,
        t_conv: None,
        slope: None,
        r_squared: None,
    };
    let traj = match simulate(plant, cfg, &opts.sim, &Reference::constant(target.r), &ic.state()) {
        Ok(traj) => traj,
        Err(Error::NonFiniteState { .. }) => {
            outcome.non_finite = true;
            return Ok(outcome);
        }
        Err(e) => return Err(e),
    };
    let (t, e): (Vec<f64>, Vec<f64>) = traj
        .rows
        .iter()
        .map(|row| {
            let dx: f64 = row.x.iter().zip(&target.x_r).map(|(a, b)| (a - b) * (a - b)).sum();
            let du = row.u_i - target.u_r;
            (row.t, (dx + du * du).sqrt())
        })
        .unzip();
    let a = assess_convergence(&t, &e, &opts.decay);
    outcome.converged = a.converged;
    outcome.exponential = a.exponential;
    outcome.final_error = a.final_error;
    outcome.t_conv = a.t_conv;
    outcome.slope = a.fit.map(|f| f.slope);
    outcome.r_squared = a.fit.map(|f| f.r_squared);
    Ok(outcome)
}

/// Runs every `(r, ic)` pair at gain `k`. Results are sorted by
/// `(r_index, ic_index)` regardless of scheduling.
pub fn evaluate_gain(
    plant: &Plant,
    cfg: &ControllerConfig,
    curve: &EquilibriumCurve,
    r_grid: &[f64],
    ic_grid: &[InitialCondition],
    opts: &CampaignOptions,
) -> Result<Vec<RunOutcome>> {
    let targets = targets(plant, curve, r_grid)?;
    evaluate_targets(plant, cfg, &targets, ic_grid, opts)
}

pub(crate) fn evaluate_targets(
    plant: &Plant,
    cfg: &ControllerConfig,
    targets: &[Target],
    ic_grid: &[InitialCondition],
    opts: &CampaignOptions,
) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..targets.len()).flat_map(|ri| (0..ic_grid.len()).map(move |ii| (ri, ii))).collect();
    let mut out = jobs
        .par_iter()
        .map(|&(ri, ii)| run_case(plant, cfg, &targets[ri], &ic_grid[ii], (ri, ii), opts))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|o| (o.r_index, o.ic_index));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainSearch {
    pub k_lo: f64,
    pub k_hi: f64,
    /// Bisection stops when the bracket is narrower than `bisect_tol` times
    /// its lower end.
    pub bisect_tol: f64,
    /// Equispaced gains tested before bisection, endpoints included.
    pub scan_points: usize,
}

impl Default for GainSearch {
    fn default() -> Self {
        GainSearch {
            k_lo: 0.05,
            k_hi: 1.0,
            bisect_tol: 1e-3,
            scan_points: 6,
        }
    }
}

impl GainSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_lo > 0.0 && self.k_lo.is_finite()) {
            return Err(Error::config("campaign.k_range", format!("k_lo must be positive, got {}", self.k_lo)));
        }
        if !(self.k_hi > self.k_lo && self.k_hi.is_finite()) {
            return Err(Error::config("campaign.k_range", format!("need k_lo < k_hi, got [{}, {}]", self.k_lo, self.k_hi)));
        }
        if !(self.bisect_tol > 0.0) {
            return Err(Error::config("campaign.bisect_tol", "must be positive"));
        }
        if self.scan_points < 2 {
            return Err(Error::config("campaign.scan_points", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTrial {
    pub k: f64,
    pub pass: bool,
    pub failures: usize,
    /// First failing run in `(r_index, ic_index)` order.
    pub first_failure: Option<RunOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCertification {
    pub kappa_star: f64,
    pub verdict: Verdict,
    /// Every tested gain in the order tested.
    pub trace: Vec<GainTrial>,
    /// All runs of all tested gains.
    pub runs: Vec<RunOutcome>,
}

/// True when no tested gain passes above a tested gain that fails.
pub fn trace_is_monotone(trace: &[GainTrial]) -> bool {
    let min_fail = trace.iter().filter(|t| !t.pass).map(|t| t.k).fold(f64::INFINITY, f64::min);
    trace.iter().filter(|t| t.pass).all(|t| t.k < min_fail)
}

/// Scans `search.scan_points` gains over `[k_lo, k_hi]`, then bisects between
/// the last passing and first failing gain. A gain passes when every
/// `(r, ic)` run converges with an exponential tail.
///
/// A non-monotone scan gives an `Inconclusive` verdict with `kappa_star` set
/// to the top of the passing prefix.
pub fn certify_gain(
    plant: &Plant,
    cfg_template: &ControllerConfig,
    curve: &EquilibriumCurve,
    r_grid: &[f64],
    ic_grid: &[InitialCondition],
    search: &GainSearch,
    opts: &CampaignOptions,
) -> Result<GainCertification> {
    search.validate()?;
    if r_grid.is_empty() || ic_grid.is_empty() {
        return Err(Error::config("campaign", "r_grid and ic_grid must be non-empty"));
    }
    let targets = targets(plant, curve, r_grid)?;
    let mut trace = Vec::new();
    let mut runs = Vec::new();
    let mut test = |k: f64, trace: &mut Vec<GainTrial>| -> Result<bool> {
        let outcomes = evaluate_targets(plant, &cfg_template.with_gain(k), &targets, ic_grid, opts)?;
        let failures = outcomes.iter().filter(|o| !o.passed()).count();
        let first_failure = outcomes.iter().find(|o| !o.passed()).cloned();
        runs.extend(outcomes);
        trace.push(GainTrial {
            k,
            pass: failures == 0,
            failures,
            first_failure,
        });
        Ok(failures == 0)
    };

    let n = search.scan_points;
    let scan: Vec<f64> = (0..n)
        .map(|i| search.k_lo + (search.k_hi - search.k_lo) * i as f64 / (n - 1) as f64)
        .collect();
    let mut results = Vec::with_capacity(n);
    for &k in &scan {
        results.push(test(k, &mut trace)?);
    }
    if !results[0] {
        return Err(Error::NoPassingGain { k_lo: search.k_lo });
    }
    let prefix = results.iter().take_while(|&&p| p).count();
    if !trace_is_monotone(&trace) {
        return Ok(GainCertification {
            kappa_star: scan[prefix - 1],
            verdict: Verdict::Inconclusive,
            trace,
            runs,
        });
    }
    if prefix == n {
        return Ok(GainCertification {
            kappa_star: search.k_hi,
            verdict: Verdict::Supported,
            trace,
            runs,
        });
    }

    let (mut lo, mut hi) = (scan[prefix - 1], scan[prefix]);
    while hi - lo > search.bisect_tol * lo {
        let mid = 0.5 * (lo + hi);
        if test(mid, &mut trace)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let verdict = if trace_is_monotone(&trace) {
        Verdict::Supported
    } else {
        Verdict::Inconclusive
    };
    Ok(GainCertification {
        kappa_star: lo,
        verdict,
        trace,
        runs,
    })
}
