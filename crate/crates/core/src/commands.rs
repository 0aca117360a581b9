//! Subcommand implementations shared by the binary and the tests. Each
//! command reads a [`RunConfig`], writes its files under the output
//! directory and reports an exit code.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    analyze, continue_equilibria, equilibrium_at, kappa_lin, steady_state_map, AnalysisOptions, EquilibriumCurve,
    GainProbeSettings, ProbeOptions,
};
use crate::certify::{
    certify_gain, default_ic_grid, default_r_grid, estimate_dwell, far_initial_states, global_sweep, two_jump_reference,
    verify_dwell, windup_ab, CampaignOptions, CampaignRecord, Certificate, DwellEstimate, DwellVerification,
    GainCertification, RunOutcome, SweepReport, Verdict, Verdicts, WindupReport,
};
use crate::config::RunConfig;
use crate::control::{ControllerConfig, Plant};
use crate::error::{Error, Result};
use crate::sim::{fmt_f64, simulate, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;
pub const EXIT_NOT_SUPPORTED: i32 = 4;

/// Exit code for a command that failed with `err`.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::InvalidInit { .. }
        | Error::Dimension(_)
        | Error::ReferenceOutOfRange { .. } => EXIT_CONFIG,
        Error::NonFiniteState { .. } => EXIT_NON_FINITE,
        Error::NoPassingGain { .. } => EXIT_NOT_SUPPORTED,
        _ => EXIT_FAILURE,
    }
}

/// Command-line overrides of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub code: i32,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
    files: Vec<PathBuf>,
}

impl Context {
    fn new(config_path: &Path, over: &Overrides) -> Result<Self> {
        let cfg = RunConfig::load(config_path)?;
        let out = over.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        let seed = over.seed.unwrap_or(cfg.sim.seed);
        fs::create_dir_all(&out)?;
        Ok(Context {
            cfg,
            out,
            seed,
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.files.push(p.clone());
        p
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    fn finish(self, code: i32) -> CommandOutcome {
        CommandOutcome {
            code,
            out_dir: self.out,
            files: self.files,
        }
    }
}

fn x_seed(cfg: &RunConfig, plant: &Plant) -> Vec<f64> {
    cfg.analysis.x_seed.clone().unwrap_or_else(|| vec![0.0; plant.dim()])
}

fn curve_for(cfg: &RunConfig, plant: &Plant, ctrl: &ControllerConfig) -> Result<EquilibriumCurve> {
    continue_equilibria(plant, ctrl, cfg.analysis.grid_size, &x_seed(cfg, plant))
}

/// Kappa from the Routh test of the example plant; other plants have none.
fn example_kappa_lin(plant: &Plant, ctrl: &ControllerConfig) -> Option<f64> {
    (plant.name() == "example1").then(|| kappa_lin(ctrl).ok()).flatten()
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub plant: String,
    pub t_final: f64,
    /// `|y - r|` at the final time.
    pub final_error: f64,
    /// Time after the last reference change until `|y - r|` stays within 1%
    /// of `|r|`; absent if it never does.
    pub settling_time: Option<f64>,
    pub max_u_i: f64,
    pub min_u_i: f64,
    pub rows: usize,
    pub events: usize,
}

impl SimulationSummary {
    pub fn from_trajectory(plant: &str, traj: &Trajectory) -> Self {
        let last = traj.last().expect("trajectory has rows");
        let t_ref = traj
            .events
            .iter()
            .filter(|e| e.kind == crate::sim::EventKind::RefStep)
            .map(|e| e.t)
            .next_back()
            .unwrap_or(traj.rows[0].t);
        let outside = |row: &crate::sim::TrajectoryRow| (row.y - row.r).abs() > 0.01 * row.r.abs();
        let settling_time = (!outside(last)).then(|| {
            traj.rows
                .iter()
                .filter(|row| row.t >= t_ref && outside(row))
                .map(|row| row.t - t_ref)
                .next_back()
                .unwrap_or(0.0)
        });
        SimulationSummary {
            plant: plant.to_string(),
            t_final: last.t,
            final_error: (last.y - last.r).abs(),
            settling_time,
            max_u_i: traj.max_u_i(),
            min_u_i: traj.min_u_i(),
            rows: traj.rows.len(),
            events: traj.events.len(),
        }
    }
}

/// Simulates the configured loop. Writes `trajectory.csv`, `events.csv` and
/// `summary.json`; a blown-up run keeps its partial trajectory and fails
/// with [`Error::NonFiniteState`].
pub fn cmd_simulate(config_path: &Path, over: &Overrides) -> Result<CommandOutcome> {
    let mut ctx = Context::new(config_path, over)?;
    let ctrl = ctx.cfg.controller;
    let plant = ctx.cfg.plant(&ctrl)?;
    let reference = ctx.cfg.reference()?;
    let init = ctx.cfg.initial_state(|u| match plant.closed_form_equilibrium(u) {
        Some(x) => x,
        None => equilibrium_at(&plant, &curve_for(&ctx.cfg, &plant, &ctrl)?, u),
    })?;
    let sim = ctx.cfg.sim.sim_config();
    let traj_path = ctx.path("trajectory.csv");
    let events_path = ctx.path("events.csv");
    match simulate(&plant, &ctrl, &sim, &reference, &init) {
        Ok(traj) => {
            traj.save(&traj_path, &events_path)?;
            ctx.write_json("summary.json", &SimulationSummary::from_trajectory(plant.name(), &traj))?;
            Ok(ctx.finish(EXIT_OK))
        }
        Err(Error::NonFiniteState { t, partial }) => {
            partial.save(&traj_path, &events_path)?;
            Err(Error::NonFiniteState { t, partial })
        }
        Err(e) => Err(e),
    }
}

/// Checks the standing assumptions. Writes `assumptions.json` and, when
/// continuation succeeds, `equilibrium_curve.csv`. Exit code 4 when an
/// assumption fails.
pub fn cmd_analyze(config_path: &Path, over: &Overrides) -> Result<CommandOutcome> {
    let mut ctx = Context::new(config_path, over)?;
    let ctrl = ctx.cfg.controller;
    let plant = ctx.cfg.plant(&ctrl)?;
    let a = &ctx.cfg.analysis;
    let opts = AnalysisOptions {
        grid_size: a.grid_size,
        x_seed: x_seed(&ctx.cfg, &plant),
        margin_tol: a.margin_tol,
        gain_probe: a.probe.then(|| GainProbeSettings {
            u0: a.probe_u0.unwrap_or(0.5 * (ctrl.u_min + ctrl.u_max)),
            m_values: a.probe_m.clone(),
            trials: a.probe_trials,
            horizon: a.probe_horizon,
            options: ProbeOptions {
                seed: ctx.seed,
                ..Default::default()
            },
        }),
    };
    let (report, curve) = analyze(&plant, &ctrl, &opts)?;
    ctx.write_json("assumptions.json", &report)?;
    if let Some(curve) = curve {
        let path = ctx.path("equilibrium_curve.csv");
        curve.write_csv(BufWriter::new(File::create(path)?))?;
    }
    let code = if report.a1_pass && report.a2_pass {
        EXIT_OK
    } else {
        EXIT_NOT_SUPPORTED
    };
    Ok(ctx.finish(code))
}

/// Everything a certification campaign produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub certificate: Certificate,
    pub gain: GainCertification,
    pub dwell: Option<std::result::Result<(DwellEstimate, DwellVerification), String>>,
    pub sweep: Option<SweepReport>,
    pub r_grid: Vec<f64>,
}

fn dwell_verdict(est: &DwellEstimate, v: &DwellVerification) -> Verdict {
    if v.all_settled && v.basin_ok && est.t_bar <= v.dwell {
        Verdict::Supported
    } else {
        Verdict::Violated
    }
}

/// Runs the certification campaign described by `cfg` without touching the
/// file system.
pub fn run_campaign(cfg: &RunConfig, seed: u64) -> Result<CampaignResult> {
    let ctrl = cfg.controller;
    let plant = cfg.plant(&ctrl)?;
    let camp = &cfg.campaign;
    let curve = curve_for(cfg, &plant, &ctrl)?;
    let ss = steady_state_map(&curve, &plant)?;
    let a1 = crate::analysis::check_assumption1(&curve, cfg.analysis.margin_tol);
    if !a1.pass {
        return Err(Error::Precondition(format!(
            "equilibria are not uniformly stable (spectral abscissa {})",
            a1.max_abscissa
        )));
    }

    let r_grid = camp.r_grid.clone().unwrap_or_else(|| default_r_grid(ss.y_min, ss.y_max, camp.r_points));
    let ic_grid = match &camp.ic_grid {
        Some(g) => g.clone(),
        None => default_ic_grid(&plant, &curve, &ctrl, camp.ic_nodes, camp.eps0, seed)?,
    };
    let opts = CampaignOptions {
        sim: camp.sim(&cfg.sim),
        decay: camp.decay(cfg.sim.conv_eps),
    };
    opts.sim.validate()?;
    let gain = certify_gain(&plant, &ctrl, &curve, &r_grid, &ic_grid, &camp.search(), &opts)?;
    let kappa_star = gain.kappa_star;

    let mut dwell_k = None;
    let mut dwell_tested = None;
    let dwell = if camp.dwell {
        let k = camp.dwell_k.unwrap_or(0.5 * kappa_star);
        dwell_k = Some(k);
        let pairs: Vec<(f64, f64)> = match &camp.dwell_pairs {
            Some(p) => p.iter().map(|p| (p[0], p[1])).collect(),
            None => r_grid.windows(2).flat_map(|w| [(w[0], w[1]), (w[1], w[0])]).collect(),
        };
        let ctrl_k = ctrl.with_gain(k);
        match estimate_dwell(&plant, &ctrl_k, &curve, &pairs, &opts) {
            Ok(est) => {
                let [r_a, r_b] = camp.dwell_refs.unwrap_or([
                    ss.y_min + (ss.y_max - ss.y_min) / 3.0,
                    ss.y_min + 2.0 * (ss.y_max - ss.y_min) / 3.0,
                ]);
                let spacing = camp.dwell_spacing.max(est.t_bar);
                dwell_tested = Some(spacing);
                let mut sim = opts.sim;
                sim.t_end = 3.0 * spacing;
                let v = verify_dwell(&plant, &ctrl_k, &curve, &two_jump_reference(r_a, r_b, spacing)?, &sim, camp.eps0, cfg.sim.conv_eps)?;
                Some(Ok((est, v)))
            }
            Err(e @ (Error::FitFailed { .. } | Error::Precondition(_))) => Some(Err(e.to_string())),
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let mut global_k = None;
    let mut far_ic_count = None;
    let bounded = plant.output_bound().is_some() || ctrl.tau_p == 0.0;
    let sweep = if camp.global && bounded {
        let k = camp.global_k.unwrap_or(0.5 * kappa_star);
        global_k = Some(k);
        let far = far_initial_states(plant.dim(), camp.far_count, camp.far_radius, &[ctrl.u_min, ctrl.u_max], seed)?;
        far_ic_count = Some(far.len());
        Some(global_sweep(&plant, &ctrl, k, &curve, &far, &r_grid, &opts)?)
    } else {
        None
    };

    let (t_bar, fitted_gamma, fitted_k1, step_tracking) = match &dwell {
        Some(Ok((est, v))) => (Some(est.t_bar), Some(est.gamma), Some(est.k1), Some(dwell_verdict(est, v))),
        Some(Err(_)) => (None, None, None, Some(Verdict::Inconclusive)),
        None => (None, None, None, None),
    };
    let certificate = Certificate {
        plant: plant.name().to_string(),
        kappa_star,
        kappa_lin: example_kappa_lin(&plant, &ctrl),
        t_bar,
        fitted_gamma,
        fitted_k1,
        mu_hat: Some(ss.mu_hat),
        max_spectral_abscissa: Some(a1.max_abscissa),
        campaign: CampaignRecord {
            seed,
            r_grid: r_grid.clone(),
            ic_count: ic_grid.len(),
            eps0: camp.eps0,
            k_range: camp.k_range,
            bisect_tol: camp.bisect_tol,
            scan_points: camp.scan_points,
            h: opts.sim.h,
            t_end: opts.sim.t_end,
            conv_eps: opts.decay.conv_eps,
            r2_min: opts.decay.r2_min,
            window_fraction: opts.decay.window_fraction,
            gain_trace: gain.trace.iter().map(|t| [t.k, if t.pass { 1.0 } else { 0.0 }]).collect(),
            dwell_k,
            dwell_tested,
            global_k,
            far_ic_count,
        },
        verdicts: Verdicts {
            local_stability: gain.verdict,
            step_tracking,
            global_convergence: sweep.as_ref().map(|s| s.verdict),
        },
    };
    Ok(CampaignResult {
        certificate,
        gain,
        dwell,
        sweep,
        r_grid,
    })
}

fn write_runs(path: &Path, runs: &[RunOutcome], r_grid: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k", "r_index", "r", "ic_index", "converged", "exponential", "non_finite", "final_error", "t_conv", "slope",
        "r_squared",
    ])?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for o in runs {
        w.write_record([
            fmt_f64(o.k),
            o.r_index.to_string(),
            fmt_f64(r_grid[o.r_index]),
            o.ic_index.to_string(),
            o.converged.to_string(),
            o.exponential.to_string(),
            o.non_finite.to_string(),
            fmt_f64(o.final_error),
            opt(o.t_conv),
            opt(o.slope),
            opt(o.r_squared),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the certification campaign. Writes `certificate.json` and, unless
/// disabled, the campaign tables. Exit code 4 unless every verdict is
/// supported.
pub fn cmd_certify(config_path: &Path, over: &Overrides) -> Result<CommandOutcome> {
    let mut ctx = Context::new(config_path, over)?;
    let result = run_campaign(&ctx.cfg, ctx.seed)?;
    ctx.write_json("certificate.json", &result.certificate)?;
    if ctx.cfg.output.campaign_csv {
        let p = ctx.path("gain_trace.csv");
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["k", "pass", "failures"])?;
        for t in &result.gain.trace {
            w.write_record([fmt_f64(t.k), t.pass.to_string(), t.failures.to_string()])?;
        }
        w.flush()?;
        let p = ctx.path("gain_runs.csv");
        write_runs(&p, &result.gain.runs, &result.r_grid)?;
        if let Some(Ok((est, v))) = &result.dwell {
            let p = ctx.path("dwell_fits.csv");
            let mut w = csv::Writer::from_path(p)?;
            w.write_record(["r_from", "r_to", "gamma", "r_squared"])?;
            for f in &est.pairs {
                w.write_record([fmt_f64(f.r_from), fmt_f64(f.r_to), fmt_f64(f.gamma), fmt_f64(f.r_squared)])?;
            }
            w.flush()?;
            let p = ctx.path("dwell_jumps.csv");
            let mut w = csv::Writer::from_path(p)?;
            w.write_record(["t_jump", "r_before", "tracking_error", "z_norm", "settled"])?;
            for j in &v.jumps {
                w.write_record([
                    fmt_f64(j.t_jump),
                    fmt_f64(j.r_before),
                    fmt_f64(j.tracking_error),
                    fmt_f64(j.z_norm),
                    j.settled.to_string(),
                ])?;
            }
            w.flush()?;
        }
        if let Some(s) = &result.sweep {
            let p = ctx.path("global_runs.csv");
            write_runs(&p, &s.runs, &result.r_grid)?;
        }
    }
    let code = if result.certificate.verdicts.all_supported() {
        EXIT_OK
    } else {
        EXIT_NOT_SUPPORTED
    };
    Ok(ctx.finish(code))
}

/// Contents of `sweep.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub k: f64,
    pub verdict: Verdict,
    pub runs: usize,
    pub far_radius: f64,
    pub offending: Option<RunOutcome>,
    pub windup: Option<WindupReport>,
}

/// Far-start convergence sweep at `campaign.global_k` (default: the
/// controller gain), plus the windup comparison when a `[windup]` block is
/// present. Writes `sweep.json` and `sweep_runs.csv`.
pub fn cmd_sweep(config_path: &Path, over: &Overrides) -> Result<CommandOutcome> {
    let mut ctx = Context::new(config_path, over)?;
    let cfg = ctx.cfg.clone();
    let ctrl = cfg.controller;
    let plant = cfg.plant(&ctrl)?;
    let camp = &cfg.campaign;
    let curve = curve_for(&cfg, &plant, &ctrl)?;
    let ss = steady_state_map(&curve, &plant)?;
    let r_grid = camp.r_grid.clone().unwrap_or_else(|| default_r_grid(ss.y_min, ss.y_max, camp.r_points));
    let opts = CampaignOptions {
        sim: camp.sim(&cfg.sim),
        decay: camp.decay(cfg.sim.conv_eps),
    };
    let k = camp.global_k.unwrap_or(ctrl.k);
    let far = far_initial_states(plant.dim(), camp.far_count, camp.far_radius, &[ctrl.u_min, ctrl.u_max], ctx.seed)?;
    let report = global_sweep(&plant, &ctrl, k, &curve, &far, &r_grid, &opts)?;
    let windup = match &cfg.windup {
        Some(w) => Some(windup_ab(&plant, &ctrl, w.k.unwrap_or(ctrl.k), &curve, &w.scenario(), cfg.sim.h)?),
        None => None,
    };
    let summary = SweepSummary {
        k,
        verdict: report.verdict,
        runs: report.runs.len(),
        far_radius: camp.far_radius,
        offending: report.offending.clone(),
        windup,
    };
    ctx.write_json("sweep.json", &summary)?;
    let p = ctx.path("sweep_runs.csv");
    write_runs(&p, &report.runs, &r_grid)?;
    let code = if report.verdict == Verdict::Supported {
        EXIT_OK
    } else {
        EXIT_NOT_SUPPORTED
    };
    Ok(ctx.finish(code))
}

/// Writes `manifest.txt`: one produced file name per line.
pub fn write_manifest(outcome: &CommandOutcome) -> Result<PathBuf> {
    let path = outcome.out_dir.join("manifest.txt");
    let mut w = BufWriter::new(File::create(&path)?);
    for f in &outcome.files {
        if let Some(name) = f.file_name() {
            writeln!(w, "{}", name.to_string_lossy())?;
        }
    }
    w.flush()?;
    Ok(path)
}
