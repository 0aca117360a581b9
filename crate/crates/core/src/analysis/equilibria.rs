//! Equilibrium continuation over `U_delta` and the linearization test for
//! uniform exponential stability of the plant equilibria.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, Plant};
use crate::error::{Error, Result};
use crate::sim::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Use the plant's analytic Jacobian hook when it has one.
    pub analytic_jacobian: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-12,
            max_iter: 50,
            analytic_jacobian: true,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Damped Newton solve of `f(x, u) = 0` from `seed`. Returns the root and its
/// residual `||f(x, u)||`.
pub fn solve_equilibrium(plant: &Plant, u: f64, seed: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, f64)> {
    let mut x = seed.to_vec();
    let mut fx = plant.rhs(&x, u);
    let mut res = norm(&fx);
    for _ in 0..=opts.max_iter {
        if !res.is_finite() {
            break;
        }
        if res <= opts.tol {
            return Ok((x, res));
        }
        let jac = if opts.analytic_jacobian {
            plant.jacobian(&x, u)
        } else {
            plant.fd_jacobian(&x, u)
        };
        let rhs = -DVector::from_column_slice(&fx);
        let Some(step) = jac.lu().solve(&rhs) else { break };

        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1.0 / 1024.0 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + alpha * di).collect();
            let f_trial = plant.rhs(&trial, u);
            let r_trial = norm(&f_trial);
            if r_trial < res {
                x = trial;
                fx = f_trial;
                res = r_trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res <= opts.tol {
        Ok((x, res))
    } else {
        Err(Error::NewtonDiverged { u, residual: res })
    }
}

/// Largest real part of the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSample {
    pub u: f64,
    pub xi: Vec<f64>,
    pub residual: f64,
    pub spectral_abscissa: f64,
}

/// Sampled equilibrium map `u -> Xi(u)` over `U_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCurve {
    pub samples: Vec<EquilibriumSample>,
    pub grid_size: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub delta: f64,
}

impl EquilibriumCurve {
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.xi.len())
    }

    pub fn u_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.u)
    }

    /// Linear interpolation of `Xi` between samples (clamped to the ends).
    pub fn interpolate(&self, u: f64) -> Vec<f64> {
        let s = &self.samples;
        let n = s.len();
        if u <= s[0].u {
            return s[0].xi.clone();
        }
        if u >= s[n - 1].u {
            return s[n - 1].xi.clone();
        }
        let i = s.partition_point(|p| p.u <= u).clamp(1, n - 1);
        let (a, b) = (&s[i - 1], &s[i]);
        let lam = (u - a.u) / (b.u - a.u);
        a.xi.iter().zip(&b.xi).map(|(p, q)| p + lam * (q - p)).collect()
    }

    /// Writes `u,x1..xn,residual,abscissa`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.dim();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["u".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend(["residual", "abscissa"].map(String::from));
        wtr.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![fmt_f64(s.u)];
            rec.extend(s.xi.iter().map(|&v| fmt_f64(v)));
            rec.push(fmt_f64(s.residual));
            rec.push(fmt_f64(s.spectral_abscissa));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContinuationOptions {
    pub newton: NewtonOptions,
    /// Sweep the grid from the top of `U_delta` downwards.
    pub descending: bool,
}

pub fn continue_equilibria(plant: &Plant, cfg: &ControllerConfig, grid_size: usize, x_seed: &[f64]) -> Result<EquilibriumCurve> {
    continue_equilibria_with(plant, cfg, grid_size, x_seed, &ContinuationOptions::default())
}

/// Solves `f(x, u) = 0` on a uniform grid over `U_delta`, warm-starting each
/// node from the previous one, and records the spectral abscissa of
/// `df/dx` at every node.
pub fn continue_equilibria_with(
    plant: &Plant,
    cfg: &ControllerConfig,
    grid_size: usize,
    x_seed: &[f64],
    opts: &ContinuationOptions,
) -> Result<EquilibriumCurve> {
    cfg.validate()?;
    if grid_size < 2 {
        return Err(Error::config("campaign.grid_size", "must be >= 2"));
    }
    if x_seed.len() != plant.dim() {
        return Err(Error::Dimension(format!("seed has length {}, plant has dimension {}", x_seed.len(), plant.dim())));
    }
    let (lo, hi) = cfg.widened_range();
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| if i + 1 == grid_size { hi } else { lo + (hi - lo) * i as f64 / (grid_size - 1) as f64 })
        .collect();
    let order: Vec<usize> = if opts.descending {
        (0..grid_size).rev().collect()
    } else {
        (0..grid_size).collect()
    };

    let mut samples: Vec<Option<EquilibriumSample>> = vec![None; grid_size];
    let mut warm = x_seed.to_vec();
    for idx in order {
        let u = grid[idx];
        let (xi, residual) = solve_equilibrium(plant, u, &warm, &opts.newton)?;
        let jac = if opts.newton.analytic_jacobian {
            plant.jacobian(&xi, u)
        } else {
            plant.fd_jacobian(&xi, u)
        };
        warm.clone_from(&xi);
        samples[idx] = Some(EquilibriumSample {
            u,
            xi,
            residual,
            spectral_abscissa: spectral_abscissa(&jac),
        });
    }
    Ok(EquilibriumCurve {
        samples: samples.into_iter().map(|s| s.expect("every node solved")).collect(),
        grid_size,
        u_min: cfg.u_min,
        u_max: cfg.u_max,
        delta: cfg.delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assumption1Check {
    pub pass: bool,
    /// Largest spectral abscissa over the grid.
    pub max_abscissa: f64,
    pub margin_tol: f64,
}

pub const DEFAULT_MARGIN_TOL: f64 = 1e-6;

/// Passes iff every sampled linearization has spectral abscissa
/// `<= -margin_tol`.
pub fn check_assumption1(curve: &EquilibriumCurve, margin_tol: f64) -> Assumption1Check {
    let max_abscissa = curve
        .samples
        .iter()
        .map(|s| s.spectral_abscissa)
        .fold(f64::NEG_INFINITY, f64::max);
    Assumption1Check {
        pass: max_abscissa <= -margin_tol,
        max_abscissa,
        margin_tol,
    }
}

/// `Xi(u)`: the closed form when the plant has one, otherwise Newton seeded
/// from the interpolated curve.
pub fn equilibrium_at(plant: &Plant, curve: &EquilibriumCurve, u: f64) -> Result<Vec<f64>> {
    if let Some(xi) = plant.closed_form_equilibrium(u) {
        return xi;
    }
    let seed = curve.interpolate(u);
    solve_equilibrium(plant, u, &seed, &NewtonOptions::default()).map(|(x, _)| x)
}

/// Steady-state output `G(u) = g(Xi(u))`.
pub fn steady_state_output(plant: &Plant, curve: &EquilibriumCurve, u: f64) -> Result<f64> {
    Ok(plant.output(&equilibrium_at(plant, curve, u)?))
}

/// Equilibrium `(u_r, Xi(u_r))` of the closed loop for reference `r`, i.e. the
/// root of `G(u) = r` inside `U_delta`.
pub fn reference_equilibrium(plant: &Plant, curve: &EquilibriumCurve, r: f64) -> Result<(f64, Vec<f64>)> {
    let g = |u: f64| steady_state_output(plant, curve, u).map(|y| y - r);
    let gs: Vec<f64> = curve.samples.iter().map(|s| plant.output(&s.xi) - r).collect();
    let bracket = (0..gs.len() - 1).find(|&i| gs[i] == 0.0 || gs[i] * gs[i + 1] <= 0.0);
    let Some(i) = bracket else {
        let (a, b) = (gs[0] + r, gs[gs.len() - 1] + r);
        return Err(Error::ReferenceOutOfRange {
            r,
            y_min: a.min(b),
            y_max: a.max(b),
        });
    };
    let (mut a, mut b) = (curve.samples[i].u, curve.samples[i + 1].u);
    let (mut fa, mut fb) = (g(a)?, g(b)?);
    if fa == 0.0 {
        return Ok((a, equilibrium_at(plant, curve, a)?));
    }
    if fb == 0.0 {
        return Ok((b, equilibrium_at(plant, curve, b)?));
    }
    // Illinois regula falsi on the bracket [a, b]
    for _ in 0..200 {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = g(c)?;
        if fc == 0.0 {
            return Ok((c, equilibrium_at(plant, curve, c)?));
        }
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
        } else {
            fa *= 0.5;
        }
        b = c;
        fb = fc;
        if (b - a).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            break;
        }
    }
    let u = if fa.abs() < fb.abs() { a } else { b };
    Ok((u, equilibrium_at(plant, curve, u)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{example1, linear_plant, Example1Config};

    fn cfg() -> ControllerConfig {
        ControllerConfig::new(0.1, 0.0, 0.5, 2.0, 0.1).unwrap()
    }

    #[test]
    fn example1_curve_matches_closed_form() {
        let plant = example1(&Example1Config::default()).unwrap();
        let curve = continue_equilibria(&plant, &cfg(), 101, &[0.4, 0.16]).unwrap();
        assert_eq!(curve.samples.len(), 101);
        assert_eq!(curve.samples[0].u, 0.4);
        assert_eq!(curve.samples[100].u, 2.1);
        for s in &curve.samples {
            assert!((s.xi[0] - s.u).abs() <= 1e-10);
            assert!((s.xi[1] - s.u * s.u).abs() <= 1e-10);
            assert!(s.residual <= 1e-12);
            assert!((s.spectral_abscissa + 1.0).abs() <= 1e-9);
        }
        assert!(curve.samples.windows(2).all(|w| w[1].u > w[0].u));
    }

    #[test]
    fn finite_difference_route_agrees() {
        let plant = example1(&Example1Config::default()).unwrap();
        let opts = ContinuationOptions {
            newton: NewtonOptions {
                analytic_jacobian: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let curve = continue_equilibria_with(&plant, &cfg(), 51, &[0.0, 0.0], &opts).unwrap();
        for s in &curve.samples {
            assert!((s.xi[1] - s.u * s.u).abs() <= 1e-10);
            assert!((s.spectral_abscissa + 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn continuation_is_order_independent() {
        let plant = example1(&Example1Config::default()).unwrap();
        let up = continue_equilibria(&plant, &cfg(), 41, &[0.4, 0.16]).unwrap();
        let down = continue_equilibria_with(
            &plant,
            &cfg(),
            41,
            &[2.1, 4.41],
            &ContinuationOptions {
                descending: true,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in up.samples.iter().zip(&down.samples) {
            assert_eq!(a.u, b.u);
            assert!(a.xi.iter().zip(&b.xi).all(|(p, q)| (p - q).abs() <= 1e-12));
        }
    }

    #[test]
    fn linear_curve_is_matrix_solve() {
        let plant = linear_plant(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]), vec![1.0, 0.0], vec![1.0, 0.0])
            .unwrap();
        let curve = continue_equilibria(&plant, &cfg(), 11, &[0.0, 0.0]).unwrap();
        for s in &curve.samples {
            assert!((s.xi[0] - s.u).abs() < 1e-14 && s.xi[1].abs() < 1e-14);
        }
        assert!(check_assumption1(&curve, DEFAULT_MARGIN_TOL).pass);
    }

    #[test]
    fn assumption1_thresholds() {
        let plant = example1(&Example1Config::default()).unwrap();
        let curve = continue_equilibria(&plant, &cfg(), 21, &[0.4, 0.16]).unwrap();
        let check = check_assumption1(&curve, DEFAULT_MARGIN_TOL);
        assert!(check.pass);
        assert_eq!(check.max_abscissa, -1.0);

        let unstable = linear_plant(DMatrix::from_element(1, 1, 1.0), vec![1.0], vec![1.0]).unwrap();
        let curve = continue_equilibria(&unstable, &cfg(), 5, &[0.0]).unwrap();
        assert!(!check_assumption1(&curve, DEFAULT_MARGIN_TOL).pass);

        let mut marginal = continue_equilibria(&plant, &cfg(), 5, &[0.4, 0.16]).unwrap();
        marginal.samples[2].spectral_abscissa = -1e-9;
        let check = check_assumption1(&marginal, DEFAULT_MARGIN_TOL);
        assert!(!check.pass);
        assert_eq!(check.max_abscissa, -1e-9);
    }

    #[test]
    fn newton_reports_divergence() {
        // x' = x^2 + 1 has no real equilibrium
        let plant = Plant::new("noroot", 1, |x: &[f64], _u: f64, dx: &mut [f64]| dx[0] = x[0] * x[0] + 1.0, |x: &[f64]| x[0])
            .unwrap();
        let err = continue_equilibria(&plant, &cfg(), 5, &[0.3]).unwrap_err();
        assert!(matches!(err, Error::NewtonDiverged { u, .. } if u == 0.4));
    }

    #[test]
    fn reference_equilibrium_inverts_steady_state_map() {
        let plant = example1(&Example1Config::default()).unwrap();
        let curve = continue_equilibria(&plant, &cfg(), 101, &[0.4, 0.16]).unwrap();
        for r in [0.25, 1.0, 2.25, 3.3, 4.0] {
            let (u_r, x_r) = reference_equilibrium(&plant, &curve, r).unwrap();
            assert!((u_r - r.sqrt()).abs() < 1e-14, "r={r} u_r={u_r}");
            assert!((x_r[1] - r).abs() < 1e-13);
        }
        assert!(matches!(
            reference_equilibrium(&plant, &curve, 4.5),
            Err(Error::ReferenceOutOfRange { .. })
        ));
    }

    #[test]
    fn curve_csv_header() {
        let plant = example1(&Example1Config::default()).unwrap();
        let curve = continue_equilibria(&plant, &cfg(), 3, &[0.4, 0.16]).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("u,x1,x2,residual,abscissa\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
