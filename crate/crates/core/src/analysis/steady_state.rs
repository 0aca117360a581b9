//! The steady-state input/output map `G(u) = g(Xi(u))` and its monotonicity.

use serde::{Deserialize, Serialize};

use super::equilibria::{steady_state_output, EquilibriumCurve};
use crate::control::Plant;
use crate::error::{Error, Result};

/// Scalar map sampled on an increasing grid, evaluated by linear
/// interpolation (and linear extrapolation beyond the ends).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledMap {
    pub u: Vec<f64>,
    pub values: Vec<f64>,
}

impl SampledMap {
    pub fn new(u: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if u.len() < 2 || u.len() != values.len() {
            return Err(Error::Dimension("sampled map needs at least two nodes and one value per node".into()));
        }
        if u.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("sample nodes must be strictly increasing".into()));
        }
        Ok(SampledMap { u, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(lo: f64, hi: f64, nodes: usize, f: F) -> Result<Self> {
        let nodes = nodes.max(2);
        let u: Vec<f64> = (0..nodes)
            .map(|i| if i + 1 == nodes { hi } else { lo + (hi - lo) * i as f64 / (nodes - 1) as f64 })
            .collect();
        let values = u.iter().map(|&v| f(v)).collect();
        SampledMap::new(u, values)
    }

    /// Samples `G` of `plant` on `nodes` uniform points over the curve's range.
    pub fn from_plant(plant: &Plant, curve: &EquilibriumCurve, nodes: usize) -> Result<Self> {
        let lo = curve.samples[0].u;
        let hi = curve.samples[curve.samples.len() - 1].u;
        let nodes = nodes.max(2);
        let u: Vec<f64> = (0..nodes)
            .map(|i| if i + 1 == nodes { hi } else { lo + (hi - lo) * i as f64 / (nodes - 1) as f64 })
            .collect();
        let values = u.iter().map(|&v| steady_state_output(plant, curve, v)).collect::<Result<Vec<_>>>()?;
        SampledMap::new(u, values)
    }

    fn segment(&self, u: f64) -> usize {
        let n = self.u.len();
        self.u.partition_point(|&p| p <= u).clamp(1, n - 1)
    }

    pub fn eval(&self, u: f64) -> f64 {
        let i = self.segment(u);
        let (u0, u1) = (self.u[i - 1], self.u[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (u - u0) / (u1 - u0)
    }

    /// Root of `eval(u) = target` for an increasing map.
    pub fn inverse(&self, target: f64) -> Option<f64> {
        let i = (1..self.u.len()).find(|&i| self.values[i - 1] <= target && target <= self.values[i])?;
        let (u0, u1) = (self.u[i - 1], self.u[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        if v1 == v0 {
            return Some(u0);
        }
        Some(u0 + (target - v0) * (u1 - u0) / (v1 - v0))
    }
}

/// Sampled `G` with its monotonicity margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateMap {
    pub map: SampledMap,
    /// Minimum secant slope over adjacent samples.
    pub mu_hat: f64,
    /// Adjacent pair attaining `mu_hat`.
    pub worst_pair: (f64, f64),
    /// `[G(u_min), G(u_max)]`.
    pub y_min: f64,
    pub y_max: f64,
}

/// Minimum adjacent secant slope of `G` over the curve samples.
pub fn min_secant_slope(u: &[f64], g: &[f64]) -> (f64, usize) {
    (1..u.len())
        .map(|i| ((g[i] - g[i - 1]) / (u[i] - u[i - 1]), i))
        .fold((f64::INFINITY, 1), |acc, cur| if cur.0 < acc.0 { cur } else { acc })
}

/// `G` on the curve samples, `mu_hat` and `Y = [G(u_min), G(u_max)]`. Fails
/// with `NonMonotone` when `mu_hat <= 0`.
pub fn steady_state_map(curve: &EquilibriumCurve, plant: &Plant) -> Result<SteadyStateMap> {
    let u: Vec<f64> = curve.u_values().collect();
    let g: Vec<f64> = curve.samples.iter().map(|s| plant.output(&s.xi)).collect();
    let (mu_hat, i) = min_secant_slope(&u, &g);
    if !(mu_hat > 0.0) {
        return Err(Error::NonMonotone {
            u_a: u[i - 1],
            u_b: u[i],
            slope: mu_hat,
        });
    }
    Ok(SteadyStateMap {
        worst_pair: (u[i - 1], u[i]),
        y_min: steady_state_output(plant, curve, curve.u_min)?,
        y_max: steady_state_output(plant, curve, curve.u_max)?,
        map: SampledMap::new(u, g)?,
        mu_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::equilibria::continue_equilibria;
    use crate::control::ControllerConfig;
    use crate::plants::{example1, linear_plant, Example1Config};
    use nalgebra::DMatrix;

    #[test]
    fn example1_mu_and_output_range() {
        let plant = example1(&Example1Config::default()).unwrap();
        let cfg = ControllerConfig::new(0.1, 0.0, 0.5, 2.0, 0.1).unwrap();
        let curve = continue_equilibria(&plant, &cfg, 101, &[0.4, 0.16]).unwrap();
        let ss = steady_state_map(&curve, &plant).unwrap();
        assert!(ss.mu_hat >= 0.8 - 1e-6);
        // minimum secant sits on the first interval: 0.4 + 0.417 = 2*0.4 + spacing
        assert!((ss.mu_hat - (0.8 + 0.017)).abs() < 1e-12);
        assert_eq!(ss.worst_pair.0, 0.4);
        assert_eq!(ss.y_min, 0.25);
        assert_eq!(ss.y_max, 4.0);
    }

    #[test]
    fn linear_dc_gain_slope() {
        let plant = linear_plant(DMatrix::from_element(1, 1, -2.0), vec![1.0], vec![3.0]).unwrap();
        let cfg = ControllerConfig::new(0.1, 0.0, -1.0, 1.0, 0.1).unwrap();
        let curve = continue_equilibria(&plant, &cfg, 11, &[0.0]).unwrap();
        let ss = steady_state_map(&curve, &plant).unwrap();
        assert!((ss.mu_hat - 1.5).abs() < 1e-12);
        assert!((ss.y_min + 1.5).abs() < 1e-14 && (ss.y_max - 1.5).abs() < 1e-14);
    }

    #[test]
    fn decreasing_map_is_rejected() {
        let plant = linear_plant(DMatrix::from_element(1, 1, -1.0), vec![1.0], vec![-1.0]).unwrap();
        let cfg = ControllerConfig::new(0.1, 0.0, 0.5, 2.0, 0.1).unwrap();
        let curve = continue_equilibria(&plant, &cfg, 11, &[0.0]).unwrap();
        match steady_state_map(&curve, &plant) {
            Err(Error::NonMonotone { u_a, u_b, slope }) => {
                assert!(u_b > u_a);
                assert!((slope + 1.0).abs() < 1e-12);
            }
            other => panic!("expected NonMonotone, got {other:?}"),
        }
    }

    #[test]
    fn sampled_map_interpolation_and_inverse() {
        let m = SampledMap::from_fn(0.0, 2.0, 5, |u| u * u).unwrap();
        assert_eq!(m.eval(1.0), 1.0);
        assert!((m.eval(0.75) - 0.625).abs() < 1e-15);
        assert!((m.inverse(0.625).unwrap() - 0.75).abs() < 1e-15);
        assert!(m.inverse(5.0).is_none());
        assert!(SampledMap::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }
}
