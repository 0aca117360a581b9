//! Run configuration, read from TOML. Unknown keys are rejected and every
//! block is validated before anything runs.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certify::{DecayCriteria, GainSearch, InitialCondition, WindupScenario};
use crate::control::{ClosedLoopState, ControllerConfig, Plant, Reference};
use crate::error::{Error, Result};
use crate::plants::{example1, linear_plant, Example1Config};
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantBlock {
    /// `"example1"` or `"linear"`.
    pub name: String,
    /// Output saturation level of the example plant.
    pub eta: Option<f64>,
    /// State matrix of a linear plant, row by row.
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
}

impl PlantBlock {
    pub fn build(&self, ctrl: &ControllerConfig) -> Result<Plant> {
        let forbid = |present: bool, key: &str| {
            if present {
                Err(Error::config(format!("plant.{key}"), format!("not a parameter of plant `{}`", self.name)))
            } else {
                Ok(())
            }
        };
        match self.name.as_str() {
            "example1" => {
                forbid(self.a.is_some(), "a")?;
                forbid(self.b.is_some(), "b")?;
                forbid(self.c.is_some(), "c")?;
                let cfg = Example1Config {
                    eta: self.eta.unwrap_or(Example1Config::default().eta),
                    u_min: ctrl.u_min,
                    u_max: ctrl.u_max,
                    delta: ctrl.delta,
                };
                example1(&cfg)
            }
            "linear" => {
                forbid(self.eta.is_some(), "eta")?;
                let missing = |key: &str| Error::config(format!("plant.{key}"), "required for a linear plant");
                let rows = self.a.as_ref().ok_or_else(|| missing("a"))?;
                let n = rows.len();
                if n == 0 || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::config("plant.a", "must be a non-empty square matrix"));
                }
                let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                let b = self.b.clone().ok_or_else(|| missing("b"))?;
                let c = self.c.clone().ok_or_else(|| missing("c"))?;
                linear_plant(a, b, c).map_err(|e| match e {
                    Error::Dimension(m) => Error::config("plant", m),
                    other => other,
                })
            }
            other => Err(Error::config("plant.name", format!("unknown plant `{other}` (expected example1 or linear)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimBlock {
    pub h: f64,
    pub t_end: f64,
    pub event_tol: f64,
    pub record_stride: usize,
    pub conv_eps: f64,
    pub seed: u64,
}

impl Default for SimBlock {
    fn default() -> Self {
        let s = SimConfig::default();
        SimBlock {
            h: s.h,
            t_end: s.t_end,
            event_tol: s.event_tol,
            record_stride: s.record_stride,
            conv_eps: s.conv_eps,
            seed: 0,
        }
    }
}

impl SimBlock {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            h: self.h,
            t_end: self.t_end,
            event_tol: self.event_tol,
            record_stride: self.record_stride,
            conv_eps: self.conv_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    /// Plant state; defaults to the equilibrium at `u_i`.
    pub x: Option<Vec<f64>>,
    pub u_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBlock {
    /// `[t, r]` pairs; the first time must be 0.
    pub segments: Vec<[f64; 2]>,
}

impl ReferenceBlock {
    pub fn build(&self) -> Result<Reference> {
        Reference::steps(self.segments.iter().map(|s| (s[0], s[1])).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisBlock {
    pub grid_size: usize,
    /// Newton seed at the first grid node; defaults to the origin.
    pub x_seed: Option<Vec<f64>>,
    pub margin_tol: f64,
    pub probe: bool,
    /// Operating input of the gain probe; defaults to the middle of `U`.
    pub probe_u0: Option<f64>,
    pub probe_m: Vec<f64>,
    pub probe_trials: usize,
    pub probe_horizon: f64,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        AnalysisBlock {
            grid_size: 101,
            x_seed: None,
            margin_tol: crate::analysis::DEFAULT_MARGIN_TOL,
            probe: false,
            probe_u0: None,
            probe_m: vec![0.1, 0.2, 0.5],
            probe_trials: 8,
            probe_horizon: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignBlock {
    pub k_range: [f64; 2],
    pub bisect_tol: f64,
    pub scan_points: usize,
    /// Explicit references; otherwise `r_points` equispaced values over `Y`.
    pub r_grid: Option<Vec<f64>>,
    pub r_points: usize,
    /// Explicit initial states; otherwise `ic_nodes` curve points plus two
    /// perturbations of each.
    pub ic_grid: Option<Vec<InitialCondition>>,
    pub ic_nodes: usize,
    pub eps0: f64,
    pub h: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub r2_min: f64,
    pub window_fraction: f64,
    pub extend_window: bool,
    pub dwell: bool,
    /// Gain for the dwell estimate; defaults to half of `kappa_star`.
    pub dwell_k: Option<f64>,
    /// Jumps `[r_from, r_to]` used to fit the decay; defaults to neighbours
    /// on the reference grid, both directions.
    pub dwell_pairs: Option<Vec<[f64; 2]>>,
    /// Spacing of the verification jumps; raised to `T_bar` if shorter.
    pub dwell_spacing: f64,
    /// `[r_a, r_b]` of the verification reference; defaults to the points
    /// at one and two thirds of `Y`.
    pub dwell_refs: Option<[f64; 2]>,
    pub global: bool,
    /// Gain for the far-start sweep; defaults to half of `kappa_star`.
    pub global_k: Option<f64>,
    pub far_count: usize,
    pub far_radius: f64,
}

impl Default for CampaignBlock {
    fn default() -> Self {
        let g = GainSearch::default();
        let d = DecayCriteria::default();
        CampaignBlock {
            k_range: [g.k_lo, g.k_hi],
            bisect_tol: g.bisect_tol,
            scan_points: g.scan_points,
            r_grid: None,
            r_points: 9,
            ic_grid: None,
            ic_nodes: 11,
            eps0: 0.5,
            h: 1e-2,
            t_end: 400.0,
            record_stride: 10,
            r2_min: d.r2_min,
            window_fraction: d.window_fraction,
            extend_window: d.extend_window,
            dwell: true,
            dwell_k: None,
            dwell_pairs: None,
            dwell_spacing: 100.0,
            dwell_refs: None,
            global: true,
            global_k: None,
            far_count: 20,
            far_radius: 15.0,
        }
    }
}

impl CampaignBlock {
    pub fn search(&self) -> GainSearch {
        GainSearch {
            k_lo: self.k_range[0],
            k_hi: self.k_range[1],
            bisect_tol: self.bisect_tol,
            scan_points: self.scan_points,
        }
    }

    pub fn decay(&self, conv_eps: f64) -> DecayCriteria {
        DecayCriteria {
            conv_eps,
            r2_min: self.r2_min,
            window_fraction: self.window_fraction,
            extend_window: self.extend_window,
        }
    }

    pub fn sim(&self, sim: &SimBlock) -> SimConfig {
        SimConfig {
            h: self.h,
            t_end: self.t_end,
            event_tol: sim.event_tol,
            record_stride: self.record_stride,
            conv_eps: sim.conv_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search().validate()?;
        if !(self.eps0 > 0.0) {
            return Err(Error::config("campaign.eps0", "must be positive"));
        }
        if !(self.r2_min > 0.0 && self.r2_min <= 1.0) {
            return Err(Error::config("campaign.r2_min", "must lie in (0, 1]"));
        }
        if !(self.window_fraction > 0.0 && self.window_fraction <= 1.0) {
            return Err(Error::config("campaign.window_fraction", "must lie in (0, 1]"));
        }
        if self.r_grid.as_ref().map_or(self.r_points == 0, |g| g.is_empty()) {
            return Err(Error::config("campaign.r_grid", "needs at least one reference"));
        }
        if self.ic_grid.as_ref().is_some_and(|g| g.is_empty()) {
            return Err(Error::config("campaign.ic_grid", "needs at least one initial state"));
        }
        if !(self.dwell_spacing > 0.0) {
            return Err(Error::config("campaign.dwell_spacing", "must be positive"));
        }
        if self.global && !(self.far_radius > 0.0 && self.far_count > 0) {
            return Err(Error::config("campaign.far_radius", "far_radius and far_count must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindupBlock {
    pub k: Option<f64>,
    pub r_nominal: f64,
    pub r_excursion: f64,
    pub t_on: f64,
    pub duration: f64,
    pub t_end: f64,
    #[serde(default = "default_band")]
    pub settle_band: f64,
}

fn default_band() -> f64 {
    0.01
}

impl WindupBlock {
    pub fn scenario(&self) -> WindupScenario {
        WindupScenario {
            r_nominal: self.r_nominal,
            r_excursion: self.r_excursion,
            t_on: self.t_on,
            duration: self.duration,
            t_end: self.t_end,
            settle_band: self.settle_band,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    /// Write per-run campaign tables next to the certificate.
    pub campaign_csv: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: PathBuf::from("out"),
            campaign_csv: true,
        }
    }
}

/// A whole run description. Only `plant` and `controller` are mandatory;
/// each subcommand checks for the blocks it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantBlock,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub sim: SimBlock,
    pub initial: Option<InitialBlock>,
    pub reference: Option<ReferenceBlock>,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub campaign: CampaignBlock,
    pub windup: Option<WindupBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            Error::config("config", message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks every block that is present, independent of the subcommand.
    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.sim.sim_config().validate()?;
        self.plant(&self.controller)?;
        if let Some(r) = &self.reference {
            r.build()?;
        }
        self.campaign.validate()?;
        if let Some(w) = &self.windup {
            w.scenario().validate()?;
        }
        if self.analysis.grid_size < 2 {
            return Err(Error::config("analysis.grid_size", "must be at least 2"));
        }
        Ok(())
    }

    pub fn plant(&self, ctrl: &ControllerConfig) -> Result<Plant> {
        self.plant.build(ctrl)
    }

    pub fn reference(&self) -> Result<Reference> {
        self.reference
            .as_ref()
            .ok_or_else(|| Error::config("reference", "block is required"))?
            .build()
    }

    /// Initial closed-loop state; `x` defaults to `eq(u_i)`.
    pub fn initial_state<F>(&self, eq: F) -> Result<ClosedLoopState>
    where
        F: FnOnce(f64) -> Result<Vec<f64>>,
    {
        let init = self.initial.as_ref().ok_or_else(|| Error::config("initial", "block is required"))?;
        let x = match &init.x {
            Some(x) => x.clone(),
            None => eq(init.u_i)?,
        };
        Ok(ClosedLoopState::new(x, init.u_i))
    }
}
