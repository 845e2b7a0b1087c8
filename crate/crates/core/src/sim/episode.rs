//! Episodes: NDE statistics runs and fixed-distance AV tests.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::init::{init_world, InitParams, InitSampler};
use super::policy::{AvAgent, Policy};
use super::world::{CollisionKind, CollisionMode, SimRng, VehicleKind, World, WorldParams};
use crate::error::{Error, Result};
use crate::histogram::Histogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EpisodeMode {
    /// Warm up, then collect histograms over the collection window.
    Nde { warmup_s: f64, collect_s: f64 },
    /// Drive the AV until it covers `distance` metres, crashes, or runs out
    /// of time.
    Av { distance: f64, max_time_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub world: WorldParams,
    pub init: InitParams,
    pub mode: EpisodeMode,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        match self.mode {
            EpisodeMode::Nde { warmup_s, collect_s } => {
                if !(warmup_s >= 0.0) || !(collect_s > 0.0) {
                    return Err(Error::Invalid("collection window must be positive".into()));
                }
            }
            EpisodeMode::Av { distance, max_time_s } => {
                if !(distance > 0.0) || !(max_time_s > 0.0) {
                    return Err(Error::Invalid("AV distance and time limit must be positive".into()));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.init.p_cf) {
            return Err(Error::Invalid("p_cf must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub episode: u64,
    pub seed: u64,
    pub accident: bool,
    pub accident_type: Option<CollisionKind>,
    /// AV mode: AV distance. NDE mode: background distance in the
    /// collection window.
    pub distance_driven: f64,
    pub velocity: Histogram,
    pub range: Histogram,
    pub lane_changes: u64,
    pub background_collisions: u64,
    pub vehicle_steps: u64,
    pub vehicles: usize,
}

/// Velocity histogram: 0.2 m/s bins on [20, 40).
pub fn velocity_histogram() -> Histogram {
    Histogram::uniform(20.0, 40.0, 0.2).expect("static edges")
}

/// Range histogram: 1 m bins on [0, 115).
pub fn range_histogram() -> Histogram {
    Histogram::uniform(0.0, 115.0, 1.0).expect("static edges")
}

/// Independent stream for one episode of a run.
pub fn episode_rng(master_seed: u64, episode: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(master_seed);
    rng.set_stream(episode);
    rng
}

fn lead_gap(world: &World, i: usize) -> Option<f64> {
    let v = &world.vehicles[i];
    let (ahead, _) = world.lane_neighbors(v.lane as usize, v.x, i);
    let gap = ahead?.1 - world.params.vehicle_length;
    (gap >= 0.0 && gap < world.params.d_obs).then_some(gap)
}

pub fn run_episode(
    cfg: &EpisodeConfig,
    sampler: &InitSampler,
    policy: &dyn Policy,
    av: Option<&mut dyn AvAgent>,
    master_seed: u64,
    episode: u64,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    let mut rng = episode_rng(master_seed, episode);
    let (mut world, _) = init_world(&cfg.world, &cfg.init, sampler, &mut rng)?;
    let mut result = EpisodeResult {
        episode,
        seed: master_seed,
        accident: false,
        accident_type: None,
        distance_driven: 0.0,
        velocity: velocity_histogram(),
        range: range_histogram(),
        lane_changes: 0,
        background_collisions: 0,
        vehicle_steps: 0,
        vehicles: world.vehicles.len(),
    };
    let dt = cfg.world.dt;
    match cfg.mode {
        EpisodeMode::Nde { warmup_s, collect_s } => {
            let warm = (warmup_s / dt).round() as u64;
            let total = warm + (collect_s / dt).round() as u64;
            let mut odo0 = Vec::new();
            let mut lc0 = Vec::new();
            for t in 0..total {
                if t == warm {
                    odo0 = world.vehicles.iter().map(|v| v.odometer).collect();
                    lc0 = world.vehicles.iter().map(|v| v.lane_changes).collect();
                }
                world.decide(policy, None, &mut rng);
                if t >= warm {
                    for i in 0..world.vehicles.len() {
                        if world.vehicles[i].crashed {
                            continue;
                        }
                        result.velocity.add(world.vehicles[i].v);
                        if let Some(g) = lead_gap(&world, i) {
                            result.range.add(g);
                        }
                    }
                }
                let c = world.advance(CollisionMode::Freeze);
                result.background_collisions += c.len() as u64;
                result.vehicle_steps += world.active_count() as u64;
            }
            if total == warm {
                odo0 = world.vehicles.iter().map(|v| v.odometer).collect();
                lc0 = world.vehicles.iter().map(|v| v.lane_changes).collect();
            }
            for (k, v) in world.vehicles.iter().enumerate() {
                result.distance_driven += v.odometer - odo0[k];
                result.lane_changes += (v.lane_changes - lc0[k]) as u64;
            }
        }
        EpisodeMode::Av { distance, max_time_s } => {
            let Some(agent) = av else {
                return Err(Error::Invalid("AV mode needs an AV agent".into()));
            };
            if world.vehicles.is_empty() {
                return Err(Error::Init("no vehicles to turn into the AV".into()));
            }
            let k = rng.random_range(0..world.vehicles.len());
            world.vehicles[k].kind = VehicleKind::Av;
            let steps = (max_time_s / dt).round() as u64;
            for _ in 0..steps {
                world.decide(policy, Some(&mut *agent), &mut rng);
                let c = world.advance(CollisionMode::Freeze);
                result.vehicle_steps += world.active_count() as u64;
                if let Some(hit) = c.iter().find(|c| c.a == k || c.b == k) {
                    result.accident = true;
                    result.accident_type = Some(hit.kind);
                }
                result.background_collisions += c.iter().filter(|c| c.a != k && c.b != k).count() as u64;
                if result.accident || world.vehicles[k].odometer >= distance {
                    break;
                }
            }
            result.distance_driven = world.vehicles[k].odometer;
        }
    }
    Ok(result)
}

/// Runs `episodes` on `workers` threads. Every episode draws from its own
/// stream of the master seed, so results do not depend on the worker count.
pub fn run_episodes<A>(
    cfg: &EpisodeConfig,
    sampler: &InitSampler,
    policy: &dyn Policy,
    agent: Option<A>,
    master_seed: u64,
    episodes: std::ops::Range<u64>,
    workers: usize,
) -> Result<Vec<EpisodeResult>>
where
    A: AvAgent + Clone + Send + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        episodes
            .into_par_iter()
            .map(|e| {
                let mut a = agent.clone();
                run_episode(
                    cfg,
                    sampler,
                    policy,
                    a.as_mut().map(|a| a as &mut dyn AvAgent),
                    master_seed,
                    e,
                )
            })
            .collect()
    })
}
