//! Linearized closed loop of the example plant.
//!
//! Around the equilibrium for input `u0` the example plant has transfer
//! function `2 u0 / (s + 1)^2`. In feedback with `k (tau_p + 1/s)` the
//! characteristic polynomial is
//! `s^3 + 2 s^2 + (1 + 2 u0 k tau_p) s + 2 u0 k`, which is Hurwitz iff
//! `k < 1 / (u0 (1 - 2 tau_p))` for `tau_p` in `[0, 1/2)`.

use nalgebra::{Complex, DMatrix};

use super::equilibria::spectral_abscissa;
use crate::control::ControllerConfig;
use crate::error::{Error, Result};

fn check_domain(u0: f64, tau_p: f64) -> Result<()> {
    if !(0.0..0.5).contains(&tau_p) {
        return Err(Error::Domain(format!("tau_p = {tau_p} must lie in [0, 0.5)")));
    }
    if !(u0 > 0.0) {
        return Err(Error::Domain(format!("u0 = {u0} must be positive")));
    }
    Ok(())
}

/// Largest stabilizing gain of the linearization at `u0`.
pub fn routh_bound(u0: f64, tau_p: f64) -> Result<f64> {
    check_domain(u0, tau_p)?;
    Ok(1.0 / (u0 * (1.0 - 2.0 * tau_p)))
}

/// Worst case of [`routh_bound`] over `U_delta`, attained at `u_max + delta`.
pub fn kappa_lin(cfg: &ControllerConfig) -> Result<f64> {
    routh_bound(cfg.u_max + cfg.delta, cfg.tau_p)
}

/// Monic coefficients `[1, a2, a1, a0]` of the closed-loop characteristic
/// polynomial.
pub fn characteristic_polynomial(u0: f64, k: f64, tau_p: f64) -> [f64; 4] {
    [1.0, 2.0, 1.0 + 2.0 * u0 * k * tau_p, 2.0 * u0 * k]
}

/// Companion matrix of a monic polynomial given highest degree first.
pub fn companion_matrix(coeffs: &[f64]) -> DMatrix<f64> {
    let n = coeffs.len() - 1;
    let lead = coeffs[0];
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = -coeffs[j + 1] / lead;
    }
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    m
}

pub fn closed_loop_poles(u0: f64, k: f64, tau_p: f64) -> Vec<Complex<f64>> {
    companion_matrix(&characteristic_polynomial(u0, k, tau_p))
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect()
}

/// Stability of the linearized loop from the eigenvalues of the companion
/// matrix.
pub fn linearized_stability(u0: f64, k: f64, tau_p: f64) -> bool {
    spectral_abscissa(&companion_matrix(&characteristic_polynomial(u0, k, tau_p))) < 0.0
}

/// Routh-Hurwitz test on a real polynomial (highest degree first). Returns
/// `true` iff every root lies in the open left half-plane. Zero pivots are
/// reported as not Hurwitz.
pub fn routh_hurwitz(coeffs: &[f64]) -> bool {
    let n = coeffs.len();
    if n < 2 {
        return true;
    }
    let width = n.div_ceil(2);
    let mut prev: Vec<f64> = coeffs.iter().step_by(2).copied().collect();
    let mut cur: Vec<f64> = coeffs.iter().skip(1).step_by(2).copied().collect();
    prev.resize(width, 0.0);
    cur.resize(width, 0.0);
    let sign = coeffs[0].signum();
    if prev[0] * sign <= 0.0 {
        return false;
    }
    for _ in 1..n {
        if cur[0] * sign <= 0.0 {
            return false;
        }
        let next: Vec<f64> = (0..width)
            .map(|j| {
                let a = prev.get(j + 1).copied().unwrap_or(0.0);
                let b = cur.get(j + 1).copied().unwrap_or(0.0);
                (cur[0] * a - prev[0] * b) / cur[0]
            })
            .collect();
        prev = cur;
        cur = next;
        if prev.iter().all(|&v| v == 0.0) {
            break;
        }
    }
    true
}
