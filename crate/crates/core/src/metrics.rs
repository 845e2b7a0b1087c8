//! Distribution distances, pooled histograms, lane-change and accident
//! rates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::histogram::Histogram;
use crate::sim::episode::{range_histogram, velocity_histogram, EpisodeResult};
use crate::sim::world::CollisionKind;

/// Hellinger distance `sqrt(sum (sqrt p - sqrt q)^2 / 2)`.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Dimension(format!("hellinger on grids of {} and {} bins", p.len(), q.len())));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-6 || v.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::Invalid(format!("{name} is not a PMF (sum {s})")));
        }
    }
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    Ok((0.5 * s).sqrt().min(1.0))
}

/// Hellinger distance between two histograms on the same edges.
pub fn hellinger_hist(a: &Histogram, b: &Histogram) -> Result<f64> {
    if !a.same_edges(b) {
        return Err(Error::Dimension("histograms have different edges".into()));
    }
    hellinger(&a.normalized(), &b.normalized())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledHistograms {
    pub velocity: Histogram,
    pub range: Histogram,
}

pub fn collect_histograms(episodes: &[EpisodeResult]) -> Result<PooledHistograms> {
    if episodes.is_empty() {
        return Err(Error::Invalid("no episodes to pool".into()));
    }
    let mut velocity = velocity_histogram();
    let mut range = range_histogram();
    for e in episodes {
        velocity.merge(&e.velocity)?;
        range.merge(&e.range)?;
    }
    Ok(PooledHistograms { velocity, range })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeRate {
    /// Kilometres per lane change; infinite when none happened.
    pub km_per_lane_change: f64,
    pub kilometres: f64,
    pub lane_changes: u64,
    /// Set when there were no lane changes.
    pub no_lane_changes: bool,
}

pub fn lane_change_rate_from(metres: f64, lane_changes: u64) -> LaneChangeRate {
    let km = metres / 1000.0;
    LaneChangeRate {
        km_per_lane_change: if lane_changes == 0 { f64::INFINITY } else { km / lane_changes as f64 },
        kilometres: km,
        lane_changes,
        no_lane_changes: lane_changes == 0,
    }
}

pub fn lane_change_rate(episodes: &[EpisodeResult]) -> LaneChangeRate {
    let m: f64 = episodes.iter().map(|e| e.distance_driven).sum();
    let n: u64 = episodes.iter().map(|e| e.lane_changes).sum();
    lane_change_rate_from(m, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    #[default]
    Normal,
    ClopperPearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccidentRate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub m: u64,
    pub n: u64,
    pub confidence: f64,
    pub method: CiMethod,
}

/// Two-sided standard normal quantile for `confidence`.
pub fn z_value(confidence: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(0.5 + 0.5 * confidence)
}

/// Accident rate `m / n` with a two-sided confidence interval.
pub fn accident_rate_counts(m: u64, n: u64, confidence: f64, method: CiMethod) -> Result<AccidentRate> {
    if n == 0 {
        return Err(Error::Invalid("accident rate needs at least one episode".into()));
    }
    if m > n || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Invalid(format!("bad accident counts {m}/{n} or confidence {confidence}")));
    }
    let p = m as f64 / n as f64;
    let (lo, hi) = match method {
        CiMethod::Normal => {
            let half = z_value(confidence) * (p * (1.0 - p) / n as f64).sqrt();
            ((p - half).max(0.0), (p + half).min(1.0))
        }
        CiMethod::ClopperPearson => {
            let alpha = 1.0 - confidence;
            let (mf, nf) = (m as f64, n as f64);
            let lo = if m == 0 {
                0.0
            } else {
                Beta::new(mf, nf - mf + 1.0)
                    .map_err(|e| Error::Invalid(e.to_string()))?
                    .inverse_cdf(alpha / 2.0)
            };
            let hi = if m == n {
                1.0
            } else {
                Beta::new(mf + 1.0, nf - mf)
                    .map_err(|e| Error::Invalid(e.to_string()))?
                    .inverse_cdf(1.0 - alpha / 2.0)
            };
            (lo, hi)
        }
    };
    Ok(AccidentRate {
        estimate: p,
        ci_low: lo,
        ci_high: hi,
        m,
        n,
        confidence,
        method,
    })
}

pub fn accident_rate(outcomes: &[bool], confidence: f64, method: CiMethod) -> Result<AccidentRate> {
    let m = outcomes.iter().filter(|o| **o).count() as u64;
    accident_rate_counts(m, outcomes.len() as u64, confidence, method)
}

/// Counts of accident types over episodes.
pub fn accident_types(episodes: &[EpisodeResult]) -> std::collections::BTreeMap<CollisionKind, u64> {
    let mut out = std::collections::BTreeMap::new();
    for k in episodes.iter().filter_map(|e| e.accident_type) {
        *out.entry(k).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(hellinger(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn published_rate_arithmetic() {
        let r = accident_rate_counts(276, 5_000_000, 0.9, CiMethod::Normal).unwrap();
        assert_eq!(r.estimate, 5.52e-5);
        assert!((z_value(0.9) - 1.6448536).abs() < 1e-6);
        let zero = accident_rate_counts(0, 100, 0.9, CiMethod::ClopperPearson).unwrap();
        assert_eq!((zero.estimate, zero.ci_low), (0.0, 0.0));
        assert!(accident_rate(&[], 0.9, CiMethod::Normal).is_err());
    }
}
