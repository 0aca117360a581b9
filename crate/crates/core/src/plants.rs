//! Ready-made plants.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::control::Plant;
use crate::error::{Error, Result};

/// Symmetric saturation `B_eta`. The bounds are reached on `|z| >= eta`.
#[inline]
pub fn b_eta(z: f64, eta: f64) -> f64 {
    if z <= -eta {
        -eta
    } else if z >= eta {
        eta
    } else {
        z
    }
}

/// Parameters of the two-state example plant
/// `x1' = -x1 + u`, `x2' = x1^2 - x2`, `y = B_eta(x2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Config {
    pub eta: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub delta: f64,
}

impl Default for Example1Config {
    fn default() -> Self {
        Example1Config {
            eta: 5.0,
            u_min: 0.5,
            u_max: 2.0,
            delta: 0.1,
        }
    }
}

impl Example1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::config("plant.eta", "must be > 0"));
        }
        if !(self.u_min - self.delta > 0.0) {
            return Err(Error::config("plant", "requires u_min - delta > 0"));
        }
        let top = self.u_max + self.delta;
        if !(top * top < self.eta) {
            return Err(Error::config("plant.eta", "requires (u_max + delta)^2 < eta"));
        }
        Ok(())
    }
}

/// The example plant. Carries an analytic Jacobian, the closed-form
/// equilibrium map `Xi(u) = (u, u^2)` and the output bound `eta`.
pub fn example1(cfg: &Example1Config) -> Result<Plant> {
    cfg.validate()?;
    let eta = cfg.eta;
    let plant = Plant::new(
        "example1",
        2,
        |x: &[f64], u: f64, dx: &mut [f64]| {
            dx[0] = -x[0] + u;
            dx[1] = x[0] * x[0] - x[1];
        },
        move |x: &[f64]| b_eta(x[1], eta),
    )?
    .with_jacobian(|x: &[f64], _u: f64| DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 2.0 * x[0], -1.0]))
    .with_equilibrium_map(|u: f64| Ok(vec![u, u * u]))
    .with_output_bound(eta);
    Ok(plant)
}

/// Closed-form steady-state map of the example plant, `G(u) = u^2`.
pub fn example1_steady_state(u: f64) -> f64 {
    u * u
}

/// `x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", n, a.ncols())));
        }
        if b.len() != n || c.len() != n {
            return Err(Error::Dimension(format!(
                "B and C must have length {n}, got {} and {}",
                b.len(),
                c.len()
            )));
        }
        Ok(LinearPlant {
            a,
            b: DVector::from_vec(b),
            c: RowDVector::from_vec(c),
        })
    }

    /// `Xi(u) = (-A)^{-1} B u`.
    pub fn equilibrium(&self, u: f64) -> Result<Vec<f64>> {
        let lu = (-&self.a).lu();
        let sol = lu.solve(&(&self.b * u)).ok_or(Error::SingularA)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularA);
        }
        Ok(sol.iter().copied().collect())
    }

    /// DC gain `P(0) = C (-A)^{-1} B`.
    pub fn dc_gain(&self) -> Result<f64> {
        let xi = self.equilibrium(1.0)?;
        Ok(self.c.iter().zip(&xi).map(|(c, x)| c * x).sum())
    }

    pub fn into_plant(self, name: &str) -> Result<Plant> {
        let n = self.a.nrows();
        let a = self.a.clone();
        let b = self.b.clone();
        let c = self.c.clone();
        let a_jac = self.a.clone();
        let lin = self;
        let plant = Plant::new(
            name,
            n,
            move |x: &[f64], u: f64, dx: &mut [f64]| {
                for i in 0..n {
                    let mut acc = b[i] * u;
                    for j in 0..n {
                        acc += a[(i, j)] * x[j];
                    }
                    dx[i] = acc;
                }
            },
            move |x: &[f64]| c.iter().zip(x).map(|(ci, xi)| ci * xi).sum(),
        )?
        .with_jacobian(move |_x: &[f64], _u: f64| a_jac.clone())
        .with_equilibrium_map(move |u| lin.equilibrium(u));
        Ok(plant)
    }
}

pub fn linear_plant(a: DMatrix<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Plant> {
    LinearPlant::new(a, b, c)?.into_plant("linear")
}
