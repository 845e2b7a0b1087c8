//! Intelligent driver model and its stochastic variant.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::action::{accel_value, ACCEL_MAX, ACCEL_MIN, ACCEL_STEP, N_ACCEL, N_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    pub a_max: f64,
    pub v0: f64,
    pub delta: f64,
    pub b: f64,
    pub s0: f64,
    pub t_headway: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            a_max: 0.8,
            v0: 37.0,
            delta: 3.0,
            b: 1.3,
            s0: 0.1,
            t_headway: 0.8,
        }
    }
}

/// Free-road term `a_max (1 - (v/v0)^δ)`.
#[inline]
pub fn idm_free(v: f64, p: &IdmParams) -> f64 {
    p.a_max * (1.0 - (v / p.v0).powf(p.delta))
}

/// IDM acceleration. `lead` is `(gap, range_rate)` with range rate = lead
/// speed minus own speed. The result is not clamped.
#[inline]
pub fn idm_accel(v: f64, lead: Option<(f64, f64)>, p: &IdmParams) -> f64 {
    let free = idm_free(v, p);
    match lead {
        None => free,
        Some((gap, rr)) => {
            let approach = -rr;
            let s_star = p.s0 + (v * p.t_headway + v * approach / (2.0 * (p.a_max * p.b).sqrt())).max(0.0);
            let s = gap.max(1e-3);
            free - p.a_max * (s_star / s).powi(2)
        }
    }
}

#[inline]
pub fn clamp_accel(a: f64) -> f64 {
    a.clamp(ACCEL_MIN, ACCEL_MAX)
}

fn normal_cdf(x: f64, mean: f64, sigma: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (sigma * std::f64::consts::SQRT_2))
}

/// Longitudinal PMF whose acceleration bins hold the mass of `cdf` between
/// the midpoints of neighbouring actions; the end bins are open.
pub fn tabulate_pmf(cdf: impl Fn(f64) -> f64) -> [f64; N_ACTIONS] {
    let mut out = [0.0; N_ACTIONS];
    let mut prev = 0.0;
    for k in 1..=N_ACCEL {
        let upper = if k == N_ACCEL {
            1.0
        } else {
            cdf(accel_value(k) + 0.5 * ACCEL_STEP)
        };
        out[k] = (upper - prev).max(0.0);
        prev = upper.max(prev);
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|p| *p /= total);
    } else {
        out[crate::action::accel_index(0.0)] = 1.0;
    }
    out
}

/// Stochastic IDM as a PMF: Gaussian around the clamped IDM acceleration.
pub fn stochastic_idm_pmf(mean: f64, sigma: f64) -> [f64; N_ACTIONS] {
    let m = clamp_accel(mean);
    if sigma <= 0.0 {
        let mut out = [0.0; N_ACTIONS];
        out[crate::action::accel_index(m)] = 1.0;
        return out;
    }
    tabulate_pmf(|x| normal_cdf(x, m, sigma))
}

/// One draw of the continuous stochastic IDM.
pub fn stochastic_idm_accel<R: rand::Rng + ?Sized>(
    v: f64,
    lead: Option<(f64, f64)>,
    p: &IdmParams,
    sigma: f64,
    rng: &mut R,
) -> f64 {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    clamp_accel(idm_accel(v, lead, p) + sigma * z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities() {
        let p = IdmParams::default();
        assert!(idm_accel(37.0, None, &p).abs() < 1e-12);
        assert!((idm_accel(0.0, None, &p) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pmf_is_normalized_and_centered() {
        let pmf = stochastic_idm_pmf(0.0, 0.3);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(pmf[0], 0.0);
        assert_eq!(pmf[32], 0.0);
        let mean: f64 = (1..=31).map(|k| pmf[k] * accel_value(k)).sum();
        assert!(mean.abs() < 1e-9);
        let edge = stochastic_idm_pmf(-10.0, 0.3);
        assert!(edge[1] > 0.5);
    }
}
