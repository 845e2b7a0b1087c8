//! Data-driven initial placement of vehicles on the ring.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::{SimRng, Vehicle, World, WorldParams};
use crate::empirical::is_inevitable_crash;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitParams {
    /// Width of the uniform offset that opens each free zone, m.
    pub d0: f64,
    /// Probability that the next vehicle is placed as the lead of the
    /// previous one.
    pub p_cf: f64,
    pub max_attempts: u32,
    /// Smallest gap left between the last and first vehicle of a lane, m.
    pub wrap_gap: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        InitParams {
            d0: 50.0,
            p_cf: 0.68,
            max_attempts: 1000,
            wrap_gap: 2.0,
        }
    }
}

/// Speed distribution and conditional (range, range-rate) distribution
/// given the follower's speed, as estimated from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitDistribution {
    pub speed_min: f64,
    pub speed_resolution: f64,
    pub speed_pmf: Vec<f64>,
    /// Follower-speed bin width of `pairs`.
    pub pair_speed_resolution: f64,
    pub range_resolution: f64,
    pub range_rate_resolution: f64,
    /// Per follower-speed bin: `(range center, range-rate center, weight)`.
    pub pairs: Vec<Vec<(f64, f64, f64)>>,
    /// Draw uniformly inside bins instead of using centers.
    pub jitter: bool,
}

impl InitDistribution {
    /// Everyone at one speed, pairs at one `(r, rr)`; useful for tests.
    pub fn degenerate(v: f64, r: f64, rr: f64) -> Self {
        InitDistribution {
            speed_min: v,
            speed_resolution: 1.0,
            speed_pmf: vec![1.0],
            pair_speed_resolution: 1000.0,
            range_resolution: 1.0,
            range_rate_resolution: 1.0,
            pairs: vec![vec![(r, rr, 1.0)]],
            jitter: false,
        }
    }
}

impl InitDistribution {
    /// Data-free placement for the synthetic generator: speeds around
    /// 31 m/s, ranges around 35 m, small range rates.
    pub fn synthetic() -> Self {
        let speed_pmf = (0..100)
            .map(|k| {
                let v = 20.1 + 0.2 * k as f64;
                (-0.5 * ((v - 31.0) / 2.5).powi(2)).exp()
            })
            .collect();
        let mut pairs = Vec::new();
        for r in 10..80 {
            for rr in -3..3 {
                let (rc, rrc) = (r as f64 + 0.5, rr as f64 + 0.5);
                let w = (-0.5 * ((rc - 35.0) / 12.0).powi(2) - 0.5 * (rrc / 1.2).powi(2)).exp();
                pairs.push((rc, rrc, w));
            }
        }
        InitDistribution {
            speed_min: 20.0,
            speed_resolution: 0.2,
            speed_pmf,
            pair_speed_resolution: 20.0,
            range_resolution: 1.0,
            range_rate_resolution: 1.0,
            pairs: vec![pairs],
            jitter: true,
        }
    }
}

/// Prepared sampler for an [`InitDistribution`].
#[derive(Debug, Clone)]
pub struct InitSampler {
    dist: InitDistribution,
    speed: WeightedIndex<f64>,
    pairs: Vec<Option<WeightedIndex<f64>>>,
    pooled: WeightedIndex<f64>,
    pooled_items: Vec<(f64, f64)>,
}

impl InitSampler {
    pub fn new(dist: InitDistribution) -> Result<Self> {
        let bad = |m: &str| Error::Init(format!("init distribution: {m}"));
        let speed = WeightedIndex::new(&dist.speed_pmf).map_err(|_| bad("speed weights"))?;
        let pairs = dist
            .pairs
            .iter()
            .map(|p| WeightedIndex::new(p.iter().map(|e| e.2)).ok())
            .collect();
        let pooled_items: Vec<(f64, f64)> = dist.pairs.iter().flatten().map(|e| (e.0, e.1)).collect();
        let pooled = WeightedIndex::new(dist.pairs.iter().flatten().map(|e| e.2))
            .map_err(|_| bad("no car-following pairs"))?;
        Ok(InitSampler {
            dist,
            speed,
            pairs,
            pooled,
            pooled_items,
        })
    }

    pub fn distribution(&self) -> &InitDistribution {
        &self.dist
    }

    pub fn speed(&self, rng: &mut SimRng) -> f64 {
        let k = self.speed.sample(rng);
        let lo = self.dist.speed_min + k as f64 * self.dist.speed_resolution;
        if self.dist.jitter {
            lo + rng.random::<f64>() * self.dist.speed_resolution
        } else {
            lo
        }
    }

    /// `(r, rr)` for a follower at speed `v`; pooled over speeds when the
    /// speed bin has no data.
    pub fn pair(&self, v: f64, rng: &mut SimRng) -> (f64, f64) {
        let d = &self.dist;
        let bin = ((v - d.speed_min) / d.pair_speed_resolution).floor();
        let slot = if bin >= 0.0 { self.pairs.get(bin as usize).and_then(|p| p.as_ref()) } else { None };
        let (r, rr) = match slot {
            Some(w) => {
                let e = d.pairs[bin as usize][w.sample(rng)];
                (e.0, e.1)
            }
            None => self.pooled_items[self.pooled.sample(rng)],
        };
        if d.jitter {
            let jr = (rng.random::<f64>() - 0.5) * d.range_resolution;
            let jrr = (rng.random::<f64>() - 0.5) * d.range_rate_resolution;
            ((r + jr).max(0.0), rr + jrr)
        } else {
            (r, rr)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InitStats {
    pub car_following_links: u64,
    pub free_links: u64,
    pub rejections: u64,
}

/// Places vehicles lane by lane. Each new vehicle is either the lead of the
/// previous one at a sampled range and range rate (probability `p_cf`) or
/// the start of a new free zone beyond the observation range.
pub fn init_world(
    params: &WorldParams,
    init: &InitParams,
    sampler: &InitSampler,
    rng: &mut SimRng,
) -> Result<(World, InitStats)> {
    params.validate()?;
    let len = params.vehicle_length;
    let (v_lo, v_hi) = (params.v_min, params.v_max);
    let mut vehicles = Vec::new();
    let mut stats = InitStats::default();
    for lane in 0..params.lanes {
        let x_first = rng.random::<f64>() * init.d0;
        let v_first = sampler.speed(rng).clamp(v_lo, v_hi - 1e-9);
        let start = vehicles.len();
        vehicles.push(Vehicle::background(0, lane, x_first, v_first));
        let limit = x_first + params.length - len - init.wrap_gap;
        let (mut x, mut v) = (x_first, v_first);
        loop {
            let cf = rng.random::<f64>() < init.p_cf;
            let mut placed = None;
            let mut fits = true;
            for _ in 0..init.max_attempts {
                let (x1, v1) = if cf {
                    let (r, rr) = sampler.pair(v, rng);
                    if is_inevitable_crash(r, rr) || !(v + rr >= v_lo && v + rr < v_hi) {
                        stats.rejections += 1;
                        continue;
                    }
                    (x + len + r, v + rr)
                } else {
                    let x1 = x + len + params.d_obs + rng.random::<f64>() * init.d0;
                    (x1, sampler.speed(rng).clamp(v_lo, v_hi - 1e-9))
                };
                if x1 > limit {
                    fits = false;
                    break;
                }
                placed = Some((x1, v1));
                break;
            }
            if !fits {
                break;
            }
            let Some((x1, v1)) = placed else {
                return Err(Error::Init(format!(
                    "no admissible placement on lane {lane} after {} attempts",
                    init.max_attempts
                )));
            };
            if cf {
                stats.car_following_links += 1;
            } else {
                stats.free_links += 1;
            }
            vehicles.push(Vehicle::background(0, lane, x1, v1));
            x = x1;
            v = v1;
        }
        // The ring closes on the first vehicle; drop trailing vehicles that
        // would start in an unavoidable collision with it.
        while vehicles.len() > start + 1 {
            let last = vehicles.last().unwrap();
            let gap = x_first + params.length - last.x - len;
            if !is_inevitable_crash(gap, v_first - last.v) {
                break;
            }
            vehicles.pop();
        }
    }
    for v in &mut vehicles {
        v.x = v.x.rem_euclid(params.length);
    }
    for (i, v) in vehicles.iter_mut().enumerate() {
        v.id = i as u64;
    }
    Ok((World::new(*params, vehicles)?, stats))
}
