//! Two-time-scale pieces of the closed loop: the reduced (slow) model of the
//! integrator state in slow time `s = k t`, and the boundary-layer (fast)
//! plant dynamics at a frozen integrator state.

use super::steady_state::SampledMap;
use crate::control::{sat_rate, ControllerConfig, Plant};
use crate::error::{Error, Result};
use crate::sim::{HybridStepper, LoopModel};

/// `du_I/ds = S(u_I, r - G(u_I))`.
pub fn reduced_model_rhs(u_i: f64, r: f64, g: &SampledMap, cfg: &ControllerConfig) -> f64 {
    sat_rate(u_i, r - g.eval(u_i), cfg)
}

struct ReducedModel<'a> {
    g: &'a SampledMap,
    r: f64,
}

impl LoopModel for ReducedModel<'_> {
    fn integrator_input(&self, _t: f64, _x: &[f64], u_i: f64) -> f64 {
        self.r - self.g.eval(u_i)
    }

    fn plant_rhs(&self, _t: f64, _x: &[f64], _u_i: f64, _w: f64, _dx: &mut [f64]) {}
}

/// Integrates the reduced model with step `ds` up to `s_end`. Returns
/// `(s, u_I)` at every step.
pub fn simulate_reduced(
    g: &SampledMap,
    cfg: &ControllerConfig,
    r: f64,
    u0: f64,
    ds: f64,
    s_end: f64,
) -> Result<Vec<(f64, f64)>> {
    if !cfg.contains(u0) {
        return Err(Error::InvalidInit {
            u_i: u0,
            u_min: cfg.u_min,
            u_max: cfg.u_max,
        });
    }
    if !(ds > 0.0 && s_end > ds) {
        return Err(Error::config("ds", "need 0 < ds < s_end"));
    }
    let model = ReducedModel { g, r };
    let mut stepper = HybridStepper::new(0, cfg.u_min, cfg.u_max, 1e-12 * ds.max(1.0), true);
    let steps = (s_end / ds).round() as usize;
    let mut y = [u0];
    let mut events = Vec::new();
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, u0));
    for i in 0..steps {
        let (s0, s1) = (i as f64 * ds, (i + 1) as f64 * ds);
        stepper
            .advance(&model, s0, &mut y, s1, &mut events)
            .map_err(|t| Error::NonFiniteState {
                t,
                partial: Box::default(),
            })?;
        out.push((s1, y[0]));
    }
    Ok(out)
}

/// Boundary-layer field `dz/dt = f(z + Xi(u_I), u_I)` for the deviation
/// `z = x - Xi(u_I)` at frozen `u_I`.
pub fn boundary_layer_rhs(plant: &Plant, xi: &[f64], u_i: f64, z: &[f64]) -> Vec<f64> {
    let x: Vec<f64> = z.iter().zip(xi).map(|(a, b)| a + b).collect();
    plant.rhs(&x, u_i)
}
