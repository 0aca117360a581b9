//! Saturating integrator versus a classical integrator with an input clamp,
//! on the same reference excursion.

use serde::{Deserialize, Serialize};

use crate::analysis::{reference_equilibrium, EquilibriumCurve};
use crate::control::{ClosedLoopState, ControllerConfig, Plant, Reference};
use crate::error::{Error, Result};
use crate::sim::{simulate_with, IntegratorKind, SimConfig, Trajectory};

/// Reference held at `r_nominal`, moved to `r_excursion` on
/// `[t_on, t_on + duration)`, then back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindupScenario {
    pub r_nominal: f64,
    pub r_excursion: f64,
    pub t_on: f64,
    pub duration: f64,
    pub t_end: f64,
    /// Relative settling band, e.g. 0.01 for 1%.
    pub settle_band: f64,
}

impl WindupScenario {
    pub fn t_clear(&self) -> f64 {
        self.t_on + self.duration
    }

    pub fn reference(&self) -> Result<Reference> {
        Reference::steps(vec![(0.0, self.r_nominal), (self.t_on, self.r_excursion), (self.t_clear(), self.r_nominal)])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_on > 0.0 && self.duration > 0.0 && self.t_end > self.t_clear()) {
            return Err(Error::config("windup", "need 0 < t_on, duration > 0 and t_end > t_on + duration"));
        }
        if !(self.settle_band > 0.0) {
            return Err(Error::config("windup.settle_band", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindupRun {
    pub max_u_i: f64,
    pub max_abs_u_i: f64,
    /// Time after the excursion ends until `|y - r|` stays within the band;
    /// `None` when it never settles before `t_end`.
    pub settling_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindupReport {
    pub scenario: WindupScenario,
    pub saturating: WindupRun,
    pub classical: WindupRun,
}

impl WindupReport {
    /// The saturating run settles strictly faster (never-settling counts as
    /// infinitely slow).
    pub fn saturating_settles_faster(&self) -> bool {
        let t = |r: &WindupRun| r.settling_time.unwrap_or(f64::INFINITY);
        t(&self.saturating) < t(&self.classical)
    }
}

fn summarize(traj: &Trajectory, s: &WindupScenario) -> WindupRun {
    let band = s.settle_band * s.r_nominal.abs();
    let t_clear = s.t_clear();
    let last_outside = traj
        .rows
        .iter()
        .filter(|row| row.t >= t_clear && (row.y - row.r).abs() > band)
        .map(|row| row.t)
        .next_back();
    let settled_at_end = traj.last().is_some_and(|row| (row.y - row.r).abs() <= band);
    WindupRun {
        max_u_i: traj.max_u_i(),
        max_abs_u_i: traj.rows.iter().map(|row| row.u_i.abs()).fold(0.0, f64::max),
        settling_time: settled_at_end.then(|| last_outside.map_or(0.0, |t| t - t_clear)),
    }
}

/// Runs the scenario from the equilibrium of `r_nominal` with both
/// integrators at gain `k`.
pub fn windup_ab(
    plant: &Plant,
    cfg: &ControllerConfig,
    k: f64,
    curve: &EquilibriumCurve,
    scenario: &WindupScenario,
    h: f64,
) -> Result<WindupReport> {
    scenario.validate()?;
    let cfg = cfg.with_gain(k);
    let (u0, x0) = reference_equilibrium(plant, curve, scenario.r_nominal)?;
    let init = ClosedLoopState::new(x0, u0);
    let reference = scenario.reference()?;
    let sim = SimConfig {
        h,
        t_end: scenario.t_end,
        ..Default::default()
    };
    let sat = simulate_with(plant, &cfg, &sim, &reference, &init, IntegratorKind::Saturating)?;
    let cls = simulate_with(plant, &cfg, &sim, &reference, &init, IntegratorKind::Classical)?;
    Ok(WindupReport {
        scenario: *scenario,
        saturating: summarize(&sat, scenario),
        classical: summarize(&cls, scenario),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::continue_equilibria;
    use crate::plants::{example1, Example1Config};

    fn setup() -> (Plant, ControllerConfig, EquilibriumCurve) {
        let plant = example1(&Example1Config::default()).unwrap();
        let cfg = ControllerConfig::new(0.1, 0.0, 0.5, 2.0, 0.1).unwrap();
        let curve = continue_equilibria(&plant, &cfg, 101, &[0.4, 0.16]).unwrap();
        (plant, cfg, curve)
    }

    #[test]
    fn saturating_excursion_is_bounded() {
        let (plant, cfg, curve) = setup();
        let s = WindupScenario {
            r_nominal: 1.0,
            r_excursion: 6.0,
            t_on: 10.0,
            duration: 50.0,
            t_end: 200.0,
            settle_band: 0.01,
        };
        let rep = windup_ab(&plant, &cfg, 0.1, &curve, &s, 1e-2).unwrap();
        assert_eq!(rep.saturating.max_u_i, 2.0);
        assert!(rep.classical.max_u_i > 2.0);
        assert!(rep.saturating_settles_faster(), "{rep:?}");
    }

    #[test]
    fn small_excursion_gives_identical_runs() {
        let (plant, cfg, curve) = setup();
        let s = WindupScenario {
            r_nominal: 1.0,
            r_excursion: 1.2,
            t_on: 5.0,
            duration: 20.0,
            t_end: 100.0,
            settle_band: 0.01,
        };
        let rep = windup_ab(&plant, &cfg, 0.1, &curve, &s, 1e-2).unwrap();
        assert_eq!(rep.saturating, rep.classical);
    }
}
