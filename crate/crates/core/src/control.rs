//! Plant and controller types, and the pointwise semantics of the saturating
//! integrator and of the closed-loop vector field.
//!
//! The saturating integrator has state `u_I` and input `w`. Its rate is `w`
//! while `u_I` is strictly inside `[u_min, u_max]`; on (or beyond) a bound
//! only the part of `w` pointing back into the interval is passed through.
//! Combined with a proportional branch of weight `tau_p`, and a common gain
//! `k` acting on the tracking error, the closed loop reads
//!
//! ```text
//! x'   = f(x, u_I + tau_p * k * (r - g(x)))
//! u_I' = S(u_I, k * (r - g(x)))
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `f(x, u, dx)`: writes the plant state derivative into `dx`.
pub type StateMap = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;
/// `g(x)`: scalar plant output.
pub type OutputMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Analytic `df/dx` at `(x, u)`.
pub type JacobianMap = Arc<dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync>;
/// Closed-form equilibrium map `u -> Xi(u)`.
pub type EquilibriumMap = Arc<dyn Fn(f64) -> Result<Vec<f64>> + Send + Sync>;

/// A single-input single-output plant `x' = f(x, u)`, `y = g(x)`.
///
/// The maps are opaque callables. `f` is expected to be C^2 and `g` locally
/// Lipschitz; neither property can be checked here, so they are recorded as
/// declared metadata only. Optional hooks (analytic Jacobian, closed-form
/// equilibria, output bound) are used by the analysis routines when present.
#[derive(Clone)]
pub struct Plant {
    name: String,
    dim: usize,
    f: StateMap,
    g: OutputMap,
    jacobian: Option<JacobianMap>,
    equilibrium: Option<EquilibriumMap>,
    output_bound: Option<f64>,
}

impl fmt::Debug for Plant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plant")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("closed_form_equilibrium", &self.equilibrium.is_some())
            .field("output_bound", &self.output_bound)
            .finish()
    }
}

impl Plant {
    pub fn new<F, G>(name: impl Into<String>, dim: usize, f: F, g: G) -> Result<Self>
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::config("plant.dim", "state dimension must be positive"));
        }
        Ok(Plant {
            name: name.into(),
            dim,
            f: Arc::new(f),
            g: Arc::new(g),
            jacobian: None,
            equilibrium: None,
            output_bound: None,
        })
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_equilibrium_map<E>(mut self, xi: E) -> Self
    where
        E: Fn(f64) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        self.equilibrium = Some(Arc::new(xi));
        self
    }

    /// Declares `sup |g| <= bound`.
    pub fn with_output_bound(mut self, bound: f64) -> Self {
        self.output_bound = Some(bound);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn output_bound(&self) -> Option<f64> {
        self.output_bound
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    #[inline]
    pub fn rhs_into(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        (self.f)(x, u, dx)
    }

    pub fn rhs(&self, x: &[f64], u: f64) -> Vec<f64> {
        let mut dx = vec![0.0; self.dim];
        (self.f)(x, u, &mut dx);
        dx
    }

    #[inline]
    pub fn output(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    /// `df/dx` at `(x, u)`: the analytic hook when present, central differences
    /// otherwise.
    pub fn jacobian(&self, x: &[f64], u: f64) -> DMatrix<f64> {
        match &self.jacobian {
            Some(jac) => jac(x, u),
            None => self.fd_jacobian(x, u),
        }
    }

    /// Central finite-difference `df/dx` with step `max(1e-6, 1e-6 |x_i|)`.
    pub fn fd_jacobian(&self, x: &[f64], u: f64) -> DMatrix<f64> {
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let step = f64::max(1e-6, 1e-6 * x[j].abs());
            xp[j] = x[j] + step;
            (self.f)(&xp, u, &mut fp);
            xp[j] = x[j] - step;
            (self.f)(&xp, u, &mut fm);
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        jac
    }

    /// Closed-form `Xi(u)` if the plant carries one.
    pub fn closed_form_equilibrium(&self, u: f64) -> Option<Result<Vec<f64>>> {
        self.equilibrium.as_ref().map(|xi| xi(u))
    }
}

/// Gains and saturation bounds of the PI controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub k: f64,
    pub tau_p: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub delta: f64,
}

impl ControllerConfig {
    pub fn new(k: f64, tau_p: f64, u_min: f64, u_max: f64, delta: f64) -> Result<Self> {
        let cfg = ControllerConfig {
            k,
            tau_p,
            u_min,
            u_max,
            delta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.k, self.tau_p, self.u_min, self.u_max, self.delta];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("controller", "all values must be finite"));
        }
        if self.k <= 0.0 {
            return Err(Error::config("controller.k", "must be > 0"));
        }
        if self.tau_p < 0.0 {
            return Err(Error::config("controller.tau_p", "must be >= 0"));
        }
        if self.u_min >= self.u_max {
            return Err(Error::config(
                "controller.u_min",
                format!("must be < controller.u_max ({} >= {})", self.u_min, self.u_max),
            ));
        }
        if self.delta <= 0.0 {
            return Err(Error::config("controller.delta", "must be > 0"));
        }
        Ok(())
    }

    pub fn with_gain(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    /// `U_delta = [u_min - delta, u_max + delta]`.
    pub fn widened_range(&self) -> (f64, f64) {
        (self.u_min - self.delta, self.u_max + self.delta)
    }

    pub fn contains(&self, u_i: f64) -> bool {
        (self.u_min..=self.u_max).contains(&u_i)
    }

    pub fn project(&self, u_i: f64) -> f64 {
        u_i.clamp(self.u_min, self.u_max)
    }
}

/// Piecewise-constant, right-continuous reference signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    segments: Vec<(f64, f64)>,
    admissible: Option<(f64, f64)>,
}

impl Reference {
    pub fn constant(r: f64) -> Self {
        Reference {
            segments: vec![(0.0, r)],
            admissible: None,
        }
    }

    /// Builds a step reference from `(switch_time, value)` pairs. The first
    /// switch time must be 0 and the times must be strictly increasing.
    pub fn steps(segments: Vec<(f64, f64)>) -> Result<Self> {
        match segments.first() {
            None => return Err(Error::config("reference.segments", "at least one segment is required")),
            Some(&(t0, _)) if t0 != 0.0 => {
                return Err(Error::config("reference.segments", "first switch time must be 0"))
            }
            _ => {}
        }
        for (i, w) in segments.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::config(
                    format!("reference.segments[{}]", i + 1),
                    "switch times must be strictly increasing",
                ));
            }
        }
        if segments.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::config("reference.segments", "values must be finite"));
        }
        Ok(Reference {
            segments,
            admissible: None,
        })
    }

    /// Declares the admissible output range `Y` and checks every value against it.
    pub fn with_admissible_range(mut self, y_min: f64, y_max: f64) -> Result<Self> {
        for &(_, r) in &self.segments {
            if r < y_min || r > y_max {
                return Err(Error::ReferenceOutOfRange { r, y_min, y_max });
            }
        }
        self.admissible = Some((y_min, y_max));
        Ok(self)
    }

    pub fn admissible_range(&self) -> Option<(f64, f64)> {
        self.admissible
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|&(ts, _)| ts <= t);
        self.segments[idx.saturating_sub(1)].1
    }

    /// Switch times strictly after 0.
    pub fn switch_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().skip(1).map(|&(t, _)| t)
    }
}

/// State of the closed loop: plant state, integrator state, time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopState {
    pub x: Vec<f64>,
    pub u_i: f64,
    pub t: f64,
}

impl ClosedLoopState {
    pub fn new(x: Vec<f64>, u_i: f64) -> Self {
        ClosedLoopState { x, u_i, t: 0.0 }
    }
}

/// Rate of the saturating integrator for state `u_i` and input `w`.
///
/// The bounds use weak inequalities, so the clamped branches apply on the
/// boundary itself.
#[inline]
pub fn sat_rate(u_i: f64, w: f64, cfg: &ControllerConfig) -> f64 {
    if u_i <= cfg.u_min {
        w.max(0.0)
    } else if u_i >= cfg.u_max {
        w.min(0.0)
    } else {
        w
    }
}

/// Closed-loop vector field evaluated at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopRates {
    pub dx: Vec<f64>,
    pub du_i: f64,
    /// Plant input `u_I + tau_p * w`.
    pub u: f64,
    /// Integrator input `k (r - g(x))`.
    pub w: f64,
}

pub fn closed_loop_rhs(s: &ClosedLoopState, plant: &Plant, cfg: &ControllerConfig, r: f64) -> LoopRates {
    let w = cfg.k * (r - plant.output(&s.x));
    let u = s.u_i + cfg.tau_p * w;
    LoopRates {
        dx: plant.rhs(&s.x, u),
        du_i: sat_rate(s.u_i, w, cfg),
        u,
        w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{example1, Example1Config};

    fn cfg() -> ControllerConfig {
        ControllerConfig::new(0.1, 0.2, 0.5, 2.0, 0.1).unwrap()
    }

    #[test]
    fn sat_rate_cuts_outward_drive_at_bounds() {
        let c = cfg();
        assert_eq!(sat_rate(c.u_max, 0.3, &c), 0.0);
        assert_eq!(sat_rate(c.u_min, -0.2, &c), 0.0);
        assert_eq!(sat_rate(1.0, -0.7, &c), -0.7);
        // inward drive passes on the bounds
        assert_eq!(sat_rate(c.u_max, -0.3, &c), -0.3);
        assert_eq!(sat_rate(c.u_min, 0.2, &c), 0.2);
        // beyond the bounds
        assert_eq!(sat_rate(c.u_max + 1.0, 0.3, &c), 0.0);
        assert_eq!(sat_rate(c.u_min - 1.0, -0.3, &c), 0.0);
    }

    #[test]
    fn sat_rate_zero_input_is_zero_everywhere() {
        let c = cfg();
        for u in [c.u_min - 0.1, c.u_min, 1.0, c.u_max, c.u_max + 0.1] {
            assert_eq!(sat_rate(u, 0.0, &c), 0.0);
        }
    }

    #[test]
    fn controller_config_rejects_bad_values() {
        assert!(ControllerConfig::new(0.0, 0.0, 0.5, 2.0, 0.1).is_err());
        assert!(ControllerConfig::new(0.1, -0.1, 0.5, 2.0, 0.1).is_err());
        assert!(ControllerConfig::new(0.1, 0.0, 2.0, 2.0, 0.1).is_err());
        assert!(ControllerConfig::new(0.1, 0.0, 0.5, 2.0, 0.0).is_err());
        let err = ControllerConfig::new(0.1, 0.0, 3.0, 2.0, 0.1).unwrap_err();
        assert!(err.to_string().starts_with("controller.u_min"));
    }

    #[test]
    fn reference_is_right_continuous() {
        let r = Reference::steps(vec![(0.0, 1.0), (5.0, 2.0), (7.0, 0.5)]).unwrap();
        assert_eq!(r.value_at(0.0), 1.0);
        assert_eq!(r.value_at(4.999), 1.0);
        assert_eq!(r.value_at(5.0), 2.0);
        assert_eq!(r.value_at(7.0), 0.5);
        assert_eq!(r.value_at(100.0), 0.5);
        assert_eq!(r.switch_times().collect::<Vec<_>>(), vec![5.0, 7.0]);
    }

    #[test]
    fn reference_validation() {
        assert!(Reference::steps(vec![]).is_err());
        assert!(Reference::steps(vec![(1.0, 1.0)]).is_err());
        assert!(Reference::steps(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        let r = Reference::steps(vec![(0.0, 1.0), (3.0, 5.0)]).unwrap();
        assert!(matches!(
            r.with_admissible_range(0.25, 4.0),
            Err(Error::ReferenceOutOfRange { .. })
        ));
    }

    #[test]
    fn closed_loop_rhs_at_example1_equilibrium() {
        let plant = example1(&Example1Config::default()).unwrap();
        for tau_p in [0.0, 0.2, 0.45] {
            let c = ControllerConfig { tau_p, ..cfg() };
            let rates = closed_loop_rhs(&ClosedLoopState::new(vec![1.0, 1.0], 1.0), &plant, &c, 1.0);
            assert_eq!(rates.dx, vec![0.0, 0.0]);
            assert_eq!(rates.du_i, 0.0);
            assert_eq!(rates.u, 1.0);
        }
    }

    #[test]
    fn closed_loop_rhs_off_equilibrium() {
        // x = (0,0), u_I = 1, k = 0.1, tau_p = 0, r = 1:
        // y = 0, w = 0.1, u = 1, dx = (-0 + 1, 0 - 0), du_I = 0.1
        let plant = example1(&Example1Config::default()).unwrap();
        let c = ControllerConfig { tau_p: 0.0, ..cfg() };
        let rates = closed_loop_rhs(&ClosedLoopState::new(vec![0.0, 0.0], 1.0), &plant, &c, 1.0);
        assert_eq!(rates.dx, vec![1.0, 0.0]);
        assert!((rates.du_i - 0.1).abs() < 1e-15);
        assert!((rates.w - 0.1).abs() < 1e-15);
    }

    #[test]
    fn closed_loop_rhs_linear_origin() {
        let plant = crate::plants::linear_plant(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let c = ControllerConfig::new(0.3, 0.1, -1.0, 1.0, 0.1).unwrap();
        let rates = closed_loop_rhs(&ClosedLoopState::new(vec![0.0, 0.0], 0.0), &plant, &c, 0.0);
        assert_eq!(rates.dx, vec![0.0, 0.0]);
        assert_eq!(rates.du_i, 0.0);
    }

    #[test]
    fn closed_loop_rhs_reduces_to_integral_control() {
        // tau_p = 0 and interior u_I: hand-built I-controller field
        let plant = example1(&Example1Config::default()).unwrap();
        let c = ControllerConfig { tau_p: 0.0, ..cfg() };
        for &(x1, x2, u_i, r) in &[(0.3, 0.7, 1.2, 2.0), (1.9, 3.1, 0.9, 0.5), (-2.0, 7.0, 1.99, 1.0)] {
            let rates = closed_loop_rhs(&ClosedLoopState::new(vec![x1, x2], u_i), &plant, &c, r);
            let y = f64::min(x2, 5.0);
            let expected_dx = vec![-x1 + u_i, x1 * x1 - x2];
            assert_eq!(rates.dx, expected_dx);
            assert_eq!(rates.du_i, c.k * (r - y));
        }
    }

    #[test]
    fn fd_jacobian_matches_analytic_hook() {
        let plant = example1(&Example1Config::default()).unwrap();
        for u0 in [0.4, 1.0, 1.7, 2.1] {
            let x = vec![u0, u0 * u0];
            let analytic = plant.jacobian(&x, u0);
            let fd = plant.fd_jacobian(&x, u0);
            assert!((analytic - fd).abs().max() < 1e-5);
        }
    }
}
