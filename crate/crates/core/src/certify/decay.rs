//! Detection of exponential convergence from sampled error norms.

use serde::{Deserialize, Serialize};

/// Least-squares line through `(t, ln e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares line `y = intercept + slope * t`. Needs two distinct `t`.
pub fn fit_line(t: &[f64], y: &[f64]) -> Option<DecayFit> {
    let n = t.len().min(y.len());
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean_t = t[..n].iter().sum::<f64>() / nf;
    let mean_y = y[..n].iter().sum::<f64>() / nf;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in t.iter().zip(y) {
        stt += (a - mean_t) * (a - mean_t);
        sty += (a - mean_t) * (b - mean_y);
        syy += (b - mean_y) * (b - mean_y);
    }
    if stt == 0.0 {
        return None;
    }
    let slope = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { (sty * sty) / (stt * syy) };
    Some(DecayFit {
        slope,
        intercept: mean_y - slope * mean_t,
        r_squared,
        points: n,
    })
}

/// Fits `ln e = intercept + slope * t` over the samples with `e > 0`.
pub fn fit_log_linear(t: &[f64], e: &[f64]) -> Option<DecayFit> {
    let (tt, ly): (Vec<f64>, Vec<f64>) = t.iter().zip(e).filter(|(_, &v)| v > 0.0).map(|(&a, &v)| (a, v.ln())).unzip();
    fit_line(&tt, &ly)
}

/// Running maximum from the right: `env[i] = max_{j >= i} e[j]`.
pub fn upper_envelope(e: &[f64]) -> Vec<f64> {
    let mut env = e.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    env
}

/// Least concave majorant of `(t, ln e)` evaluated at every `t` (`t`
/// increasing). For `e = exp(-a t) p(t)` with `p` periodic it is a line
/// through the successive peaks, where the running maximum would be a
/// staircase. Samples with `e <= 0` lie below any majorant and are skipped
/// when building the hull.
pub fn log_upper_hull(t: &[f64], e: &[f64]) -> Vec<f64> {
    let pts: Vec<(f64, f64)> = t.iter().zip(e).filter(|(_, &v)| v > 0.0).map(|(&a, &v)| (a, v.ln())).collect();
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b when it lies on or below the chord a-p
            if (b.1 - a.1) * (p.0 - a.0) <= (p.1 - a.1) * (b.0 - a.0) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut j = 0;
    t.iter()
        .map(|&ti| {
            if hull.is_empty() {
                return f64::NEG_INFINITY;
            }
            while j + 1 < hull.len() && hull[j + 1].0 < ti {
                j += 1;
            }
            if j + 1 == hull.len() || ti <= hull[j].0 {
                return hull[j].1;
            }
            let (a, b) = (hull[j], hull[j + 1]);
            a.1 + (b.1 - a.1) * (ti - a.0) / (b.0 - a.0)
        })
        .collect()
}

/// Thresholds for accepting a run as exponentially convergent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayCriteria {
    pub conv_eps: f64,
    pub r2_min: f64,
    /// Fraction of the pre-convergence window, counted from its end, used
    /// for the fit.
    pub window_fraction: f64,
    /// Also try windows of `(1 + f) / 2` and the whole pre-convergence
    /// window when the tail alone does not fit. A lightly damped run can
    /// converge within one oscillation period, leaving only an arc between
    /// two nodes of its error norm in the tail.
    pub extend_window: bool,
}

impl Default for DecayCriteria {
    fn default() -> Self {
        DecayCriteria {
            conv_eps: 1e-6,
            r2_min: 0.99,
            window_fraction: 0.5,
            extend_window: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceAssessment {
    /// The error ends below `conv_eps` and stays there.
    pub converged: bool,
    /// First sample time after which the error stays below `conv_eps`.
    pub t_conv: Option<f64>,
    pub fit: Option<DecayFit>,
    /// Converged with a negative-slope, high-R^2 log-envelope fit (or
    /// converged before any transient could be resolved).
    pub exponential: bool,
    pub final_error: f64,
}

/// Decides whether the sampled error `e(t)` converges exponentially.
///
/// The pre-convergence window runs from the first sample to the last one
/// with `e >= conv_eps`. Over the final `window_fraction` of that window the
/// log-envelope [`log_upper_hull`] is fitted by a line; the run is
/// exponential when the slope is negative and `R^2 >= r2_min`. With
/// `extend_window` two longer windows are tried before giving up; the
/// reported fit is the first passing one, else the best.
pub fn assess_convergence(t: &[f64], e: &[f64], criteria: &DecayCriteria) -> ConvergenceAssessment {
    let final_error = e.last().copied().unwrap_or(f64::NAN);
    let not_converged = ConvergenceAssessment {
        converged: false,
        t_conv: None,
        fit: None,
        exponential: false,
        final_error,
    };
    if e.is_empty() || !(final_error < criteria.conv_eps) || e.iter().any(|v| !v.is_finite()) {
        return not_converged;
    }
    let Some(last_above) = e.iter().rposition(|&v| v >= criteria.conv_eps) else {
        return ConvergenceAssessment {
            converged: true,
            t_conv: Some(t[0]),
            fit: None,
            exponential: true,
            final_error,
        };
    };
    let conv_idx = last_above + 1;
    let t_conv = t[conv_idx];
    let f0 = criteria.window_fraction.clamp(0.0, 1.0);
    let fractions: &[f64] = if criteria.extend_window {
        &[f0, 0.5 * (1.0 + f0), 1.0]
    } else {
        &[f0]
    };
    let mut best: Option<DecayFit> = None;
    let mut exponential = false;
    for &frac in fractions {
        let t_start = t[0] + (1.0 - frac) * (t[last_above] - t[0]);
        let first = t.partition_point(|&v| v < t_start).min(last_above);
        let env = log_upper_hull(&t[first..=last_above], &e[first..=last_above]);
        let fit = fit_line(&t[first..=last_above], &env);
        let pass = match fit {
            Some(f) if f.points >= 3 => f.slope < 0.0 && f.r_squared >= criteria.r2_min,
            // too few samples before convergence to resolve a transient
            _ => true,
        };
        if pass || best.is_none_or(|b| fit.is_some_and(|f| f.r_squared > b.r_squared)) {
            best = fit.or(best);
        }
        if pass {
            exponential = true;
            break;
        }
    }
    let fit = best;
    ConvergenceAssessment {
        converged: true,
        t_conv: Some(t_conv),
        fit,
        exponential,
        final_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_rate() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.5).collect();
        let e: Vec<f64> = t.iter().map(|&s| 3.0 * (-0.4 * s).exp()).collect();
        let fit = fit_log_linear(&t, &e).unwrap();
        assert!((fit.slope + 0.4).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_is_non_increasing() {
        let env = upper_envelope(&[1.0, 3.0, 2.0, 2.5, 0.1]);
        assert_eq!(env, vec![3.0, 3.0, 2.5, 2.5, 0.1]);
    }

    #[test]
    fn oscillating_decay_is_exponential() {
        let t: Vec<f64> = (0..4000).map(|i| i as f64 * 0.05).collect();
        let e: Vec<f64> = t.iter().map(|&s| (-0.1 * s).exp() * (1.0 + 0.8 * (0.7 * s).sin()).abs()).collect();
        let a = assess_convergence(&t, &e, &DecayCriteria::default());
        assert!(a.converged);
        assert!(a.exponential, "{:?}", a.fit);
    }

    #[test]
    fn stalled_error_is_not_converged() {
        let t: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let e = vec![1e-3; 100];
        let a = assess_convergence(&t, &e, &DecayCriteria::default());
        assert!(!a.converged && !a.exponential);
    }

    #[test]
    fn already_converged_passes() {
        let t = [0.0, 1.0, 2.0];
        let a = assess_convergence(&t, &[0.0, 0.0, 0.0], &DecayCriteria::default());
        assert!(a.converged && a.exponential);
        assert_eq!(a.t_conv, Some(0.0));
    }

    #[test]
    fn hull_of_decaying_oscillation_is_a_line() {
        let t: Vec<f64> = (0..2000).map(|i| i as f64 * 0.05).collect();
        let e: Vec<f64> = t.iter().map(|&s| (-0.3 * s).exp() * (1.2 + (0.2 * s).cos())).collect();
        let env = log_upper_hull(&t, &e);
        for (i, (&v, &w)) in env.iter().zip(&e).enumerate() {
            assert!(v >= w.ln() - 1e-12, "hull below data at {i}");
        }
        let fit = fit_line(&t, &env).unwrap();
        assert!(fit.r_squared > 0.999, "{fit:?}");
        assert!((fit.slope + 0.3).abs() < 0.01);
    }

    #[test]
    fn hull_interpolates_between_vertices() {
        let env = log_upper_hull(&[0.0, 1.0, 2.0], &[1.0, 1e-3, 1e-2]);
        assert!((env[1] - 0.5 * 1e-2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn growing_error_fails_the_fit() {
        let t: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
        let mut e: Vec<f64> = t.iter().map(|&s| 1e-3 * (0.2 * s).exp()).collect();
        e.push(1e-9);
        let mut tt = t.clone();
        tt.push(20.0);
        let a = assess_convergence(&tt, &e, &DecayCriteria::default());
        assert!(a.converged);
        assert!(!a.exponential, "{:?}", a.fit);
    }
}
