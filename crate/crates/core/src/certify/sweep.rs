//! Convergence runs from initial states far from the equilibrium curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gain::{evaluate_targets, random_direction, targets, CampaignOptions, InitialCondition, RunOutcome};
use super::Verdict;
use crate::analysis::EquilibriumCurve;
use crate::control::{ControllerConfig, Plant};
use crate::error::{Error, Result};

/// `count` plant states with norms drawn uniformly from
/// `[radius / 2, radius]` in uniform random directions. The integrator
/// states cycle through `u_values`.
pub fn far_initial_states(dim: usize, count: usize, radius: f64, u_values: &[f64], seed: u64) -> Result<Vec<InitialCondition>> {
    if u_values.is_empty() || !(radius > 0.0) || dim == 0 {
        return Err(Error::config("campaign.far_radius", "need radius > 0 and at least one integrator value"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|i| {
            let dir = random_direction(&mut rng, dim);
            let norm = rng.gen_range(0.5 * radius..=radius);
            InitialCondition {
                x: dir.into_iter().map(|d| d * norm).collect(),
                u_i: u_values[i % u_values.len()],
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub k: f64,
    pub verdict: Verdict,
    pub runs: Vec<RunOutcome>,
    /// First run (in `(r_index, ic_index)` order) that did not converge.
    pub offending: Option<RunOutcome>,
}

/// Runs every `(r, far_ic)` pair at gain `k`. Supported when all converge
/// with exponential tails; a run that blows up makes the verdict violated.
///
/// Requires a bounded output map or `tau_p = 0`.
pub fn global_sweep(
    plant: &Plant,
    cfg: &ControllerConfig,
    k: f64,
    curve: &EquilibriumCurve,
    far_ics: &[InitialCondition],
    r_grid: &[f64],
    opts: &CampaignOptions,
) -> Result<SweepReport> {
    if plant.output_bound().is_none() && cfg.tau_p != 0.0 {
        return Err(Error::Precondition(
            "global convergence needs a bounded output map or tau_p = 0".into(),
        ));
    }
    let targets = targets(plant, curve, r_grid)?;
    let runs = evaluate_targets(plant, &cfg.with_gain(k), &targets, far_ics, opts)?;
    let offending = runs.iter().find(|o| !o.passed()).cloned();
    Ok(SweepReport {
        k,
        verdict: if offending.is_none() {
            Verdict::Supported
        } else {
            Verdict::Violated
        },
        runs,
        offending,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::continue_equilibria;
    use crate::certify::decay::DecayCriteria;
    use crate::plants::{example1, linear_plant, Example1Config};
    use crate::sim::SimConfig;
    use nalgebra::DMatrix;

    fn opts(t_end: f64) -> CampaignOptions {
        CampaignOptions {
            sim: SimConfig {
                h: 1e-2,
                t_end,
                record_stride: 10,
                ..Default::default()
            },
            decay: DecayCriteria::default(),
        }
    }

    #[test]
    fn far_states_respect_radius() {
        let ics = far_initial_states(2, 20, 15.0, &[0.5, 2.0], 1).unwrap();
        assert_eq!(ics.len(), 20);
        for (i, ic) in ics.iter().enumerate() {
            let n = ic.x.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((7.5 - 1e-12..=15.0 + 1e-12).contains(&n));
            assert_eq!(ic.u_i, if i % 2 == 0 { 0.5 } else { 2.0 });
        }
    }

    #[test]
    fn converges_from_far_corner() {
        let plant = example1(&Example1Config::default()).unwrap();
        let cfg = ControllerConfig::new(0.05, 0.0, 0.5, 2.0, 0.1).unwrap();
        let curve = continue_equilibria(&plant, &cfg, 101, &[0.4, 0.16]).unwrap();
        let ic = InitialCondition { x: vec![10.0, 10.0], u_i: 0.5 };
        let rep = global_sweep(&plant, &cfg, 0.05, &curve, &[ic], &[1.0], &opts(600.0)).unwrap();
        assert_eq!(rep.verdict, Verdict::Supported, "{:?}", rep.offending);
    }

    #[test]
    fn high_gain_is_violated() {
        let plant = example1(&Example1Config::default()).unwrap();
        let cfg = ControllerConfig::new(0.05, 0.0, 0.5, 2.0, 0.1).unwrap();
        let curve = continue_equilibria(&plant, &cfg, 101, &[0.4, 0.16]).unwrap();
        let ic = InitialCondition { x: vec![3.0, 3.0], u_i: 0.5 };
        let rep = global_sweep(&plant, &cfg, 2.0, &curve, &[ic], &[1.0], &opts(200.0)).unwrap();
        assert_eq!(rep.verdict, Verdict::Violated);
        assert!(rep.offending.is_some());
    }

    #[test]
    fn unbounded_output_with_proportional_term_is_rejected() {
        let plant = linear_plant(DMatrix::from_element(1, 1, -1.0), vec![1.0], vec![1.0]).unwrap();
        let cfg = ControllerConfig::new(0.1, 0.2, 0.5, 2.0, 0.1).unwrap();
        let curve = continue_equilibria(&plant, &cfg, 11, &[0.0]).unwrap();
        let err = global_sweep(&plant, &cfg, 0.1, &curve, &[], &[1.0], &opts(10.0)).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
