//! Fixed-step integration of the discontinuous closed loop.
//!
//! Each base step is integrated with classical RK4 on one smooth branch of the
//! integrator dynamics: either *free* (`u_I' = w`) or *held* on a bound
//! (`u_I' = 0`). When a free step would carry `u_I` across a bound, the
//! crossing time is located by bisection, the step is split there and `u_I` is
//! projected onto the bound. A held step that ends with `w` pointing back into
//! the interval is split the same way at the release time. Reference switch
//! times are always step boundaries.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ClosedLoopState, ControllerConfig, Plant, Reference};
use crate::error::{Error, Result};

/// Upper limit on step splits inside one base step.
const MAX_SPLITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub h: f64,
    pub t_end: f64,
    pub event_tol: f64,
    pub record_stride: usize,
    pub conv_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h: 1e-3,
            t_end: 100.0,
            event_tol: 1e-10,
            record_stride: 1,
            conv_eps: 1e-6,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::config("sim.h", "must be > 0"));
        }
        if !(self.t_end > self.h) || !self.t_end.is_finite() {
            return Err(Error::config("sim.t_end", "must be finite and > sim.h"));
        }
        if !(self.event_tol > 0.0 && self.event_tol < self.h) {
            return Err(Error::config("sim.event_tol", "must satisfy 0 < event_tol < h"));
        }
        if self.record_stride == 0 {
            return Err(Error::config("sim.record_stride", "must be >= 1"));
        }
        if !(self.conv_eps > 0.0) {
            return Err(Error::config("sim.conv_eps", "must be > 0"));
        }
        Ok(())
    }
}

/// How the integral branch treats the bounds of `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    /// The saturating integrator.
    Saturating,
    /// Plain integrator, with the plant input clamped to `U` instead.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    HitUpper,
    HitLower,
    LeaveUpper,
    LeaveLower,
    RefStep,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::HitUpper => "hit_upper",
            EventKind::HitLower => "hit_lower",
            EventKind::LeaveUpper => "leave_upper",
            EventKind::LeaveLower => "leave_lower",
            EventKind::RefStep => "ref_step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    /// Integrator state at the event.
    pub u_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub u_i: f64,
    pub u: f64,
    pub y: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub events: Vec<Event>,
}

/// Formats a float with 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.x.len())
    }

    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn max_u_i(&self) -> f64 {
        self.rows.iter().map(|r| r.u_i).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_u_i(&self) -> f64 {
        self.rows.iter().map(|r| r.u_i).fold(f64::INFINITY, f64::min)
    }

    /// Writes `t,x1,...,xn,uI,u,y,r`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.dim();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend(["uI", "u", "y", "r"].map(String::from));
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = Vec::with_capacity(n + 5);
            rec.push(fmt_f64(row.t));
            rec.extend(row.x.iter().map(|&v| fmt_f64(v)));
            rec.extend([row.u_i, row.u, row.y, row.r].map(fmt_f64));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `t,kind`.
    pub fn write_events_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "kind"])?;
        for ev in &self.events {
            wtr.write_record([fmt_f64(ev.t), ev.kind.as_str().to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, trajectory_csv: &Path, events_csv: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(trajectory_csv)?)?;
        self.write_events_csv(std::fs::File::create(events_csv)?)?;
        Ok(())
    }
}

/// A system with one saturating-integrator state appended to `dim()` plant
/// states.
pub(crate) trait LoopModel {
    fn integrator_input(&self, t: f64, x: &[f64], u_i: f64) -> f64;
    fn plant_rhs(&self, t: f64, x: &[f64], u_i: f64, w: f64, dx: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Free,
    HeldUpper,
    HeldLower,
}

/// RK4 stepper with bound-crossing localization. Reused buffers make it
/// cheap to call per step; it is not shared between threads.
pub(crate) struct HybridStepper {
    n: usize,
    u_min: f64,
    u_max: f64,
    event_tol: f64,
    saturating: bool,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    trial: Vec<f64>,
}

impl HybridStepper {
    pub(crate) fn new(n: usize, u_min: f64, u_max: f64, event_tol: f64, saturating: bool) -> Self {
        let buf = || vec![0.0; n + 1];
        HybridStepper {
            n,
            u_min,
            u_max,
            event_tol,
            saturating,
            k1: buf(),
            k2: buf(),
            k3: buf(),
            k4: buf(),
            tmp: buf(),
            trial: buf(),
        }
    }

    fn deriv<M: LoopModel>(n: usize, model: &M, t: f64, y: &[f64], branch: Branch, out: &mut [f64]) {
        let (x, u_i) = (&y[..n], y[n]);
        let w = model.integrator_input(t, x, u_i);
        model.plant_rhs(t, x, u_i, w, &mut out[..n]);
        out[n] = match branch {
            Branch::Free => w,
            Branch::HeldUpper | Branch::HeldLower => 0.0,
        };
    }

    /// One RK4 step of length `dt` from `y`, result in `self.trial`.
    fn rk4<M: LoopModel>(&mut self, model: &M, t: f64, y: &[f64], dt: f64, branch: Branch) {
        let n = self.n;
        Self::deriv(n, model, t, y, branch, &mut self.k1);
        for i in 0..=n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k1[i];
        }
        Self::deriv(n, model, t + 0.5 * dt, &self.tmp, branch, &mut self.k2);
        for i in 0..=n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k2[i];
        }
        Self::deriv(n, model, t + 0.5 * dt, &self.tmp, branch, &mut self.k3);
        for i in 0..=n {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        Self::deriv(n, model, t + dt, &self.tmp, branch, &mut self.k4);
        for i in 0..=n {
            self.trial[i] = y[i] + dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        if !matches!(branch, Branch::Free) {
            self.trial[n] = y[n];
        }
    }

    fn crossed(&self, u_i: f64) -> Option<(f64, EventKind)> {
        if u_i > self.u_max {
            Some((self.u_max, EventKind::HitUpper))
        } else if u_i < self.u_min {
            Some((self.u_min, EventKind::HitLower))
        } else {
            None
        }
    }

    /// First interior extremum of the cubic Hermite interpolant of `u_I`
    /// over a step that lies outside the bounds, as a fraction of `dt`.
    /// Catches excursions that return inside before the step ends.
    fn excursion(&self, u0: f64, u1: f64, f0: f64, f1: f64, dt: f64) -> Option<f64> {
        let (d0, d1) = (dt * f0, dt * f1);
        let a = 6.0 * (u0 - u1) + 3.0 * (d0 + d1);
        let b = 6.0 * (u1 - u0) - 4.0 * d0 - 2.0 * d1;
        let c = d0;
        let p = |th: f64| {
            let (t2, t3) = (th * th, th * th * th);
            (2.0 * t3 - 3.0 * t2 + 1.0) * u0 + (t3 - 2.0 * t2 + th) * d0 + (3.0 * t2 - 2.0 * t3) * u1 + (t3 - t2) * d1
        };
        let mut roots = [f64::NAN; 2];
        if a.abs() < 1e-14 * (b.abs() + c.abs()).max(f64::MIN_POSITIVE) {
            if b != 0.0 {
                roots[0] = -c / b;
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                roots = [q / a, if q != 0.0 { c / q } else { f64::NAN }];
            }
        }
        roots.sort_by(|x, y| x.total_cmp(y));
        roots
            .into_iter()
            .filter(|th| *th > 0.0 && *th < 1.0)
            .find(|&th| self.crossed(p(th)).is_some())
    }

    fn released(branch: Branch, w: f64) -> bool {
        match branch {
            Branch::HeldUpper => w < 0.0,
            Branch::HeldLower => w > 0.0,
            Branch::Free => false,
        }
    }

    /// Shortest step in `(0, dt]` (to `event_tol`) after which `pred` holds,
    /// given that it holds at `dt`.
    fn bisect<M: LoopModel, P>(&mut self, model: &M, t: f64, y: &[f64], dt: f64, branch: Branch, pred: P) -> f64
    where
        P: Fn(&Self, &M, f64, &[f64]) -> bool,
    {
        let (mut lo, mut hi) = (0.0, dt);
        while hi - lo > self.event_tol {
            let mid = 0.5 * (lo + hi);
            self.rk4(model, t, y, mid, branch);
            let trial = std::mem::take(&mut self.trial);
            let hit = pred(self, model, t + mid, &trial);
            self.trial = trial;
            if hit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Advances `y` from `t0` to `t1`. Returns the time at which the state
    /// became non-finite, if it did.
    pub(crate) fn advance<M: LoopModel>(
        &mut self,
        model: &M,
        t0: f64,
        y: &mut [f64],
        t1: f64,
        events: &mut Vec<Event>,
    ) -> std::result::Result<(), f64> {
        let n = self.n;
        if !self.saturating {
            self.rk4(model, t0, y, t1 - t0, Branch::Free);
            y.copy_from_slice(&self.trial);
            return if y.iter().all(|v| v.is_finite()) { Ok(()) } else { Err(t1) };
        }

        let mut t = t0;
        let mut splits = 0;
        while t < t1 {
            let dt = t1 - t;
            let u_i = y[n];
            let w0 = model.integrator_input(t, &y[..n], u_i);
            let branch = if u_i >= self.u_max && w0 >= 0.0 {
                Branch::HeldUpper
            } else if u_i <= self.u_min && w0 <= 0.0 {
                Branch::HeldLower
            } else {
                Branch::Free
            };
            if branch == Branch::Free && (u_i >= self.u_max || u_i <= self.u_min) {
                let kind = if u_i >= self.u_max {
                    EventKind::LeaveUpper
                } else {
                    EventKind::LeaveLower
                };
                events.push(Event { t, kind, u_i });
            }
            self.rk4(model, t, y, dt, branch);

            let mut step = dt;
            let mut event = None;
            if splits < MAX_SPLITS {
                match branch {
                    Branch::Free => {
                        let mut hi = dt;
                        if self.crossed(self.trial[n]).is_none() {
                            let f1 = model.integrator_input(t1, &self.trial[..n], self.trial[n]);
                            if let Some(th) = self.excursion(u_i, self.trial[n], w0, f1, dt) {
                                self.rk4(model, t, y, th * dt, branch);
                                if self.crossed(self.trial[n]).is_some() {
                                    hi = th * dt;
                                } else {
                                    self.rk4(model, t, y, dt, branch);
                                }
                            }
                        }
                        if let Some((bound, kind)) = self.crossed(self.trial[n]) {
                            step = self.bisect(model, t, y, hi, branch, |s, _, _, yy| s.crossed(yy[n]).is_some());
                            self.rk4(model, t, y, step, branch);
                            self.trial[n] = bound;
                            event = Some(kind);
                        }
                    }
                    Branch::HeldUpper | Branch::HeldLower => {
                        let w_end = model.integrator_input(t1, &self.trial[..n], self.trial[n]);
                        if Self::released(branch, w_end) {
                            step = self.bisect(model, t, y, dt, branch, |_, m, tt, yy| {
                                Self::released(branch, m.integrator_input(tt, &yy[..n], yy[n]))
                            });
                            self.rk4(model, t, y, step, branch);
                            // the leave event is emitted when the next free step starts
                            splits += 1;
                        }
                    }
                }
            }

            y.copy_from_slice(&self.trial);
            y[n] = y[n].clamp(self.u_min, self.u_max);
            t = if step == dt { t1 } else { t + step };
            if !y.iter().all(|v| v.is_finite()) {
                return Err(t);
            }
            if let Some(kind) = event {
                events.push(Event { t, kind, u_i: y[n] });
                splits += 1;
            }
        }
        Ok(())
    }
}

struct ClosedLoopModel<'a> {
    plant: &'a Plant,
    cfg: &'a ControllerConfig,
    kind: IntegratorKind,
    r: f64,
}

impl ClosedLoopModel<'_> {
    #[inline]
    fn plant_input(&self, u_i: f64, w: f64) -> f64 {
        let u = u_i + self.cfg.tau_p * w;
        match self.kind {
            IntegratorKind::Saturating => u,
            IntegratorKind::Classical => u.clamp(self.cfg.u_min, self.cfg.u_max),
        }
    }

    fn row(&self, t: f64, y: &[f64]) -> TrajectoryRow {
        let n = self.plant.dim();
        let x = y[..n].to_vec();
        let out = self.plant.output(&x);
        let w = self.cfg.k * (self.r - out);
        TrajectoryRow {
            t,
            u: self.plant_input(y[n], w),
            x,
            u_i: y[n],
            y: out,
            r: self.r,
        }
    }
}

impl LoopModel for ClosedLoopModel<'_> {
    #[inline]
    fn integrator_input(&self, _t: f64, x: &[f64], _u_i: f64) -> f64 {
        self.cfg.k * (self.r - self.plant.output(x))
    }

    #[inline]
    fn plant_rhs(&self, _t: f64, x: &[f64], u_i: f64, w: f64, dx: &mut [f64]) {
        self.plant.rhs_into(x, self.plant_input(u_i, w), dx);
    }
}

/// Simulates the closed loop with the saturating integrator.
pub fn simulate(
    plant: &Plant,
    cfg: &ControllerConfig,
    sim: &SimConfig,
    reference: &Reference,
    init: &ClosedLoopState,
) -> Result<Trajectory> {
    simulate_with(plant, cfg, sim, reference, init, IntegratorKind::Saturating)
}

pub fn simulate_with(
    plant: &Plant,
    cfg: &ControllerConfig,
    sim: &SimConfig,
    reference: &Reference,
    init: &ClosedLoopState,
    kind: IntegratorKind,
) -> Result<Trajectory> {
    cfg.validate()?;
    sim.validate()?;
    let n = plant.dim();
    if init.x.len() != n {
        return Err(Error::Dimension(format!("initial state has length {}, plant has dimension {n}", init.x.len())));
    }
    if !cfg.contains(init.u_i) {
        return Err(Error::InvalidInit {
            u_i: init.u_i,
            u_min: cfg.u_min,
            u_max: cfg.u_max,
        });
    }
    if !init.t.is_finite() || init.t >= sim.t_end {
        return Err(Error::config("initial.t", "must be finite and < sim.t_end"));
    }
    if let Some((y_min, y_max)) = reference.admissible_range() {
        for &(_, r) in reference.segments() {
            if r < y_min || r > y_max {
                return Err(Error::ReferenceOutOfRange { r, y_min, y_max });
            }
        }
    }

    let t0 = init.t;
    let t_end = sim.t_end;
    let snap = 1e-9 * sim.h;
    let switches: Vec<f64> = reference.switch_times().filter(|&s| s > t0 + snap && s < t_end - snap).collect();

    let mut stepper = HybridStepper::new(n, cfg.u_min, cfg.u_max, sim.event_tol, kind == IntegratorKind::Saturating);
    let mut model = ClosedLoopModel {
        plant,
        cfg,
        kind,
        r: reference.value_at(t0),
    };
    let mut y: Vec<f64> = init.x.iter().copied().chain(std::iter::once(init.u_i)).collect();
    let mut traj = Trajectory::default();
    traj.rows.push(model.row(t0, &y));

    let mut t = t0;
    let mut base = 0usize;
    let mut next_switch = 0usize;
    while t < t_end {
        let base_next = (t0 + (base + 1) as f64 * sim.h).min(t_end);
        let mut target = base_next;
        let mut completes_base = true;
        let mut at_switch = false;
        if let Some(&s) = switches.get(next_switch) {
            if (s - base_next).abs() <= snap {
                target = s;
                at_switch = true;
            } else if s < base_next {
                target = s;
                completes_base = false;
                at_switch = true;
            }
        }
        let t_final = if t_end - target <= snap { t_end } else { target };

        model.r = reference.value_at(t);
        if let Err(t_bad) = stepper.advance(&model, t, &mut y, t_final, &mut traj.events) {
            traj.rows.push(model.row(t_bad, &y));
            return Err(Error::NonFiniteState {
                t: t_bad,
                partial: Box::new(traj),
            });
        }
        t = t_final;
        if completes_base {
            base += 1;
        }
        if at_switch {
            next_switch += 1;
            model.r = reference.value_at(t);
            traj.events.push(Event {
                t,
                kind: EventKind::RefStep,
                u_i: y[n],
            });
        }
        let record = at_switch || t >= t_end || (completes_base && base.is_multiple_of(sim.record_stride));
        if record && traj.rows.last().is_none_or(|row| row.t < t) {
            traj.rows.push(model.row(t, &y));
        }
    }
    Ok(traj)
}

/// Piecewise-linear scalar signal through `(times[i], values[i])`, held
/// constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::Dimension("need at least two knots and one value per knot".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("knot times must be strictly increasing".into()));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Domain("knots must be finite".into()));
        }
        Ok(PiecewiseLinear { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&tk| tk <= t).clamp(1, n - 1);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

struct IntegratorOnly<'a> {
    w: &'a PiecewiseLinear,
}

impl LoopModel for IntegratorOnly<'_> {
    fn integrator_input(&self, t: f64, _x: &[f64], _u_i: f64) -> f64 {
        self.w.eval(t)
    }

    fn plant_rhs(&self, _t: f64, _x: &[f64], _u_i: f64, _w: f64, _dx: &mut [f64]) {}
}

/// Runs the saturating integrator alone, driven by `w`. Returns `(t, u_I)` at
/// each knot of `w`. RK4 is exact on each linear piece, so the only error
/// comes from locating bound crossings and releases.
pub fn simulate_integrator_only(w: &PiecewiseLinear, u0: f64, cfg: &ControllerConfig) -> Result<Vec<(f64, f64)>> {
    if !cfg.contains(u0) {
        return Err(Error::InvalidInit {
            u_i: u0,
            u_min: cfg.u_min,
            u_max: cfg.u_max,
        });
    }
    let model = IntegratorOnly { w };
    let mut stepper = HybridStepper::new(0, cfg.u_min, cfg.u_max, 1e-13, true);
    let mut y = [u0];
    let mut events = Vec::new();
    let times = w.times();
    let mut out = Vec::with_capacity(times.len());
    out.push((times[0], u0));
    for win in times.windows(2) {
        stepper
            .advance(&model, win[0], &mut y, win[1], &mut events)
            .map_err(|t| Error::NonFiniteState {
                t,
                partial: Box::default(),
            })?;
        out.push((win[1], y[0]));
    }
    Ok(out)
}

/// Simulates the same scenario at steps `h, h/2, ..., h/2^levels` and returns
/// the sup-norm deviation of `(x, u_I)` between consecutive levels, measured
/// at the coarse record times.
pub fn refine_check(
    plant: &Plant,
    cfg: &ControllerConfig,
    sim: &SimConfig,
    reference: &Reference,
    init: &ClosedLoopState,
    levels: usize,
) -> Result<Vec<f64>> {
    if levels == 0 {
        return Err(Error::config("levels", "must be >= 1"));
    }
    let runs = (0..=levels)
        .map(|j| {
            let scale = 1usize << j;
            let s = SimConfig {
                h: sim.h / scale as f64,
                record_stride: sim.record_stride * scale,
                ..*sim
            };
            simulate(plant, cfg, &s, reference, init)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(runs
        .windows(2)
        .map(|pair| {
            let (coarse, fine) = (&pair[0], &pair[1]);
            let mut dev: f64 = 0.0;
            let mut j = 0;
            for row in &coarse.rows {
                while j < fine.rows.len() && fine.rows[j].t < row.t {
                    j += 1;
                }
                if let Some(other) = fine.rows.get(j).filter(|o| o.t == row.t) {
                    let d = row
                        .x
                        .iter()
                        .zip(&other.x)
                        .map(|(a, b)| (a - b).abs())
                        .fold((row.u_i - other.u_i).abs(), f64::max);
                    dev = dev.max(d);
                }
            }
            dev
        })
        .collect())
}

/// Open-loop RK4 integration of `x' = f(x, input(t))`. Returns `(t, x)` every
/// `stride` steps, including both ends.
pub fn simulate_open_loop<F>(
    plant: &Plant,
    x0: &[f64],
    input: F,
    h: f64,
    t_end: f64,
    stride: usize,
) -> Result<Vec<(f64, Vec<f64>)>>
where
    F: Fn(f64) -> f64,
{
    let n = plant.dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!("initial state has length {}, plant has dimension {n}", x0.len())));
    }
    let steps = (t_end / h).round() as usize;
    let stride = stride.max(1);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut out = vec![(0.0, x.clone())];
    for i in 0..steps {
        let t = i as f64 * h;
        plant.rhs_into(&x, input(t), &mut k1);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        plant.rhs_into(&tmp, input(t + 0.5 * h), &mut k2);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        plant.rhs_into(&tmp, input(t + 0.5 * h), &mut k3);
        for j in 0..n {
            tmp[j] = x[j] + h * k3[j];
        }
        plant.rhs_into(&tmp, input(t + h), &mut k4);
        for j in 0..n {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_next = (i + 1) as f64 * h;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                t: t_next,
                partial: Box::default(),
            });
        }
        if (i + 1) % stride == 0 || i + 1 == steps {
            out.push((t_next, x.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{example1, Example1Config};

    fn cfg() -> ControllerConfig {
        ControllerConfig::new(0.1, 0.2, 0.5, 2.0, 0.1).unwrap()
    }

    #[test]
    fn sim_config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            event_tol: 1e-2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            t_end: 1e-4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn equilibrium_start_stays_put() {
        let plant = example1(&Example1Config::default()).unwrap();
        let sim = SimConfig {
            t_end: 10.0,
            record_stride: 100,
            ..Default::default()
        };
        let traj = simulate(&plant, &cfg(), &sim, &Reference::constant(1.0), &ClosedLoopState::new(vec![1.0, 1.0], 1.0))
            .unwrap();
        for row in &traj.rows {
            assert!((row.x[0] - 1.0).abs() <= 1e-9 && (row.x[1] - 1.0).abs() <= 1e-9);
        }
        assert_eq!(traj.rows.last().unwrap().t, 10.0);
        assert!(traj.events.is_empty());
    }

    #[test]
    fn invalid_init_is_rejected() {
        let plant = example1(&Example1Config::default()).unwrap();
        let err = simulate(
            &plant,
            &cfg(),
            &SimConfig::default(),
            &Reference::constant(1.0),
            &ClosedLoopState::new(vec![1.0, 1.0], 2.5),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInit { .. }));
    }

    #[test]
    fn upper_clamp_holds_under_persistent_positive_drive() {
        // r = 4.5 > G(u_max) = 4: w stays positive, u_I must never leave u_max
        let plant = example1(&Example1Config::default()).unwrap();
        let sim = SimConfig {
            t_end: 30.0,
            ..Default::default()
        };
        let traj = simulate(&plant, &cfg(), &sim, &Reference::constant(4.5), &ClosedLoopState::new(vec![2.0, 4.0], 2.0))
            .unwrap();
        assert!(traj.rows.iter().all(|r| r.u_i == 2.0));
    }

    #[test]
    fn hit_events_sit_on_the_bound() {
        let plant = example1(&Example1Config::default()).unwrap();
        let sim = SimConfig {
            t_end: 60.0,
            ..Default::default()
        };
        let reference = Reference::steps(vec![(0.0, 4.6), (30.0, 0.1)]).unwrap();
        let traj = simulate(&plant, &cfg(), &sim, &reference, &ClosedLoopState::new(vec![1.0, 1.0], 1.0)).unwrap();
        let kinds: Vec<_> = traj.events.iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&EventKind::HitUpper));
        assert!(kinds.contains(&EventKind::LeaveUpper));
        assert!(kinds.contains(&EventKind::HitLower));
        assert!(kinds.contains(&EventKind::RefStep));
        for ev in &traj.events {
            match ev.kind {
                EventKind::HitUpper | EventKind::LeaveUpper => assert_eq!(ev.u_i, 2.0),
                EventKind::HitLower | EventKind::LeaveLower => assert_eq!(ev.u_i, 0.5),
                EventKind::RefStep => assert_eq!(ev.t, 30.0),
            }
        }
        assert!(traj.rows.iter().any(|r| r.t == 30.0 && r.r == 0.1));
        assert!(traj.rows.windows(2).all(|w| w[1].t > w[0].t));
        assert!(traj.rows.iter().all(|r| (0.5..=2.0).contains(&r.u_i)));
    }

    #[test]
    fn deterministic_bitwise() {
        let plant = example1(&Example1Config::default()).unwrap();
        let sim = SimConfig {
            t_end: 20.0,
            ..Default::default()
        };
        let reference = Reference::steps(vec![(0.0, 4.6), (10.0, 1.0)]).unwrap();
        let init = ClosedLoopState::new(vec![0.3, 2.0], 1.5);
        let a = simulate(&plant, &cfg(), &sim, &reference, &init).unwrap();
        let b = simulate(&plant, &cfg(), &sim, &reference, &init).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_state_keeps_partial_trajectory() {
        let plant = Plant::new("blowup", 1, |x: &[f64], _u: f64, dx: &mut [f64]| dx[0] = x[0] * x[0], |x: &[f64]| x[0])
            .unwrap();
        let c = ControllerConfig::new(0.1, 0.0, -1.0, 1.0, 0.1).unwrap();
        let sim = SimConfig {
            h: 1e-2,
            t_end: 10.0,
            ..Default::default()
        };
        let err = simulate(&plant, &c, &sim, &Reference::constant(0.0), &ClosedLoopState::new(vec![1.0], 0.0)).unwrap_err();
        match err {
            Error::NonFiniteState { t, partial } => {
                assert!(t > 0.9 && t < 1.1, "blow-up near t = 1, got {t}");
                assert!(partial.rows.len() > 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_layout() {
        let plant = example1(&Example1Config::default()).unwrap();
        let sim = SimConfig {
            h: 0.1,
            t_end: 0.3,
            event_tol: 1e-10,
            ..Default::default()
        };
        let traj = simulate(&plant, &cfg(), &sim, &Reference::constant(1.0), &ClosedLoopState::new(vec![1.0, 1.0], 1.0))
            .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,uI,u,y,r"));
        assert_eq!(lines.next(), Some("0.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0"));
        assert_eq!(text.lines().count(), 5);

        let mut ev = Vec::new();
        traj.write_events_csv(&mut ev).unwrap();
        assert_eq!(String::from_utf8(ev).unwrap(), "t,kind\n");
    }

    #[test]
    fn integrator_only_zero_input_is_constant() {
        let w = PiecewiseLinear::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 0.0]).unwrap();
        let out = simulate_integrator_only(&w, 1.3, &cfg()).unwrap();
        assert!(out.iter().all(|&(_, u)| u == 1.3));
    }

    #[test]
    fn integrator_only_ramp_freezes_at_bound() {
        // w = 1, u0 = u_max - 0.5: u = u0 + t until t = 0.5, then u_max
        let c = cfg();
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.025).collect();
        let w = PiecewiseLinear::new(times.clone(), vec![1.0; times.len()]).unwrap();
        let out = simulate_integrator_only(&w, c.u_max - 0.5, &c).unwrap();
        for (t, u) in out {
            let expected = if t < 0.5 { c.u_max - 0.5 + t } else { c.u_max };
            assert!((u - expected).abs() < 1e-12, "t={t} u={u} expected={expected}");
        }
    }

    #[test]
    fn excursion_inside_one_step_is_caught() {
        // unclamped, u would dip to 0.3 mid-interval and return to 0.8;
        // held at 0.5 it must end at 0.5 plus the positive area.
        let c = ControllerConfig::new(1.0, 0.0, 0.5, 2.0, 0.1).unwrap();
        let w = PiecewiseLinear::new(vec![0.0, 1.0], vec![-2.0, 2.0]).unwrap();
        let run = simulate_integrator_only(&w, 0.8, &c).unwrap();
        assert!((run[1].1 - 1.0).abs() < 1e-12, "{run:?}");
    }

    #[test]
    fn integrator_only_release_from_bound() {
        // held at u_max while w >= 0; w = 1 - t releases at t = 1, after
        // which u = u_max - (t-1)^2/2
        let c = cfg();
        let w = PiecewiseLinear::new(vec![0.0, 0.7, 1.6, 2.0], vec![1.0, 0.3, -0.6, -1.0]).unwrap();
        let out = simulate_integrator_only(&w, c.u_max, &c).unwrap();
        for (t, u) in out {
            let expected = if t <= 1.0 { c.u_max } else { c.u_max - 0.5 * (t - 1.0) * (t - 1.0) };
            assert!((u - expected).abs() < 1e-11, "t={t} u={u} expected={expected}");
        }
    }

    #[test]
    fn refine_check_equilibrium_is_exact() {
        let plant = example1(&Example1Config::default()).unwrap();
        let sim = SimConfig {
            h: 0.01,
            t_end: 5.0,
            ..Default::default()
        };
        let dev =
            refine_check(&plant, &cfg(), &sim, &Reference::constant(1.0), &ClosedLoopState::new(vec![1.0, 1.0], 1.0), 2)
                .unwrap();
        assert_eq!(dev.len(), 2);
        assert!(dev.iter().all(|&d| d <= 1e-12));
    }

    #[test]
    fn open_loop_linear_decay() {
        let plant = crate::plants::linear_plant(nalgebra::DMatrix::from_element(1, 1, -1.0), vec![1.0], vec![1.0]).unwrap();
        let out = simulate_open_loop(&plant, &[1.0], |_| 0.0, 0.01, 2.0, 10).unwrap();
        let (t, x) = out.last().unwrap();
        assert!((*t - 2.0).abs() < 1e-12);
        assert!((x[0] - (-2.0f64).exp()).abs() < 1e-9);
    }
}
