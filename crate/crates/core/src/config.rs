//! Experiment configuration: one TOML file with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::lp::SolverOptions;
use crate::metrics::CiMethod;
use crate::ndd::{PipelineParams, SyntheticConfig};
use crate::refine::{Constraint, Objective, RefineOptions};
use crate::sim::episode::{EpisodeConfig, EpisodeMode};
use crate::sim::idm::IdmParams;
use crate::sim::init::InitParams;
use crate::sim::mobil::MobilParams;
use crate::sim::policy::{IdmMobilAgent, IdmPolicy, NdeSettings};
use crate::sim::world::WorldParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { seed: 1, workers: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// Moving-average window over the acceleration actions; odd.
    pub smoothing_window: usize,
    /// Rows with fewer samples are uncovered.
    pub min_samples: u64,
    /// Pseudo-count added to every free-driving state of the target.
    pub ff_target_floor: f64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            smoothing_window: 5,
            min_samples: 50,
            ff_target_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovConfig {
    /// Decision interval of the chain, s.
    pub dt: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig {
            dt: 1.0,
            tolerance: 1e-12,
            max_iters: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub objective: Objective,
    pub constraint: ConstraintKind,
    /// Penalty weight in soft mode.
    pub lambda: f64,
    pub max_states: usize,
    pub max_lp_iters: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            objective: Objective::L1,
            constraint: ConstraintKind::Hard,
            lambda: 100.0,
            max_states: 1500,
            max_lp_iters: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    /// Behavior-model driven background traffic.
    #[default]
    Nde,
    /// Deterministic IDM with MOBIL.
    Idm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub environment: Environment,
    pub idm: IdmParams,
    pub mobil: MobilParams,
    /// Standard deviation of the stochastic-IDM fallback, m/s².
    pub fallback_sigma: f64,
    /// Background decision interval in the data-driven environment, s.
    pub nde_interval: f64,
    /// Background decision interval in the IDM environment, s.
    pub idm_interval: f64,
    pub warmup_s: f64,
    pub collect_s: f64,
    pub av_distance: f64,
    pub av_max_time_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            environment: Environment::Nde,
            idm: IdmParams::default(),
            mobil: MobilParams::default(),
            fallback_sigma: 0.3,
            nde_interval: 1.0,
            idm_interval: 0.1,
            warmup_s: 600.0,
            collect_s: 300.0,
            av_distance: 400.0,
            av_max_time_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub confidence: f64,
    pub ci_method: CiMethod,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            confidence: 0.9,
            ci_method: CiMethod::Normal,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunConfig,
    pub grid: GridSpec,
    pub world: WorldParams,
    pub init: InitParams,
    pub ndd: PipelineParams,
    pub synthetic: SyntheticConfig,
    pub models: ModelsConfig,
    pub markov: MarkovConfig,
    pub refine: RefineConfig,
    pub sim: SimConfig,
    pub metrics: MetricsConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text)
    }

    /// Canonical TOML: every field, in declaration order.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Hex SHA-256 of the canonical TOML.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        self.world.validate()?;
        self.synthetic.truth.validate()?;
        for s in crate::model::Situation::ALL {
            self.grid.grid(s)?;
        }
        if self.models.smoothing_window % 2 == 0 {
            return bad(format!("smoothing_window must be odd, got {}", self.models.smoothing_window));
        }
        if (self.world.d_obs - self.grid.range_max).abs() > 1e-9
            || (self.world.d_obs - self.ndd.categorize.d_obs).abs() > 1e-9
        {
            return bad("world.d_obs, grid.range_max and ndd.categorize.d_obs must agree".into());
        }
        if (self.world.v_min - self.grid.speed_min).abs() > 1e-9 || (self.world.v_max - self.grid.speed_max).abs() > 1e-9 {
            return bad("world speed bounds must match the grid".into());
        }
        if let Some(l) = self.ndd.categorize.lanes {
            if l != self.world.lanes as u32 {
                return bad("ndd.categorize.lanes must match world.lanes".into());
            }
        }
        if (self.ndd.lane_change.lane_width - self.world.lane_width).abs() > 1e-9 {
            return bad("ndd.lane_change.lane_width must match world.lane_width".into());
        }
        if !(self.markov.dt > 0.0) || !(self.sim.nde_interval > 0.0) || !(self.sim.idm_interval > 0.0) {
            return bad("intervals must be positive".into());
        }
        if !(self.metrics.confidence > 0.0 && self.metrics.confidence < 1.0) {
            return bad("metrics.confidence must lie in (0, 1)".into());
        }
        if self.refine.constraint == ConstraintKind::Soft && !(self.refine.lambda > 0.0) {
            return bad("refine.lambda must be positive".into());
        }
        if self.run.workers == 0 {
            return bad("run.workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn refine_options(&self) -> RefineOptions {
        RefineOptions {
            objective: self.refine.objective,
            constraint: match self.refine.constraint {
                ConstraintKind::Hard => Constraint::Hard,
                ConstraintKind::Soft => Constraint::Soft {
                    lambda: self.refine.lambda,
                },
            },
            dt: self.markov.dt,
            max_states: self.refine.max_states,
            lp: SolverOptions {
                max_iters: self.refine.max_lp_iters,
                ..SolverOptions::default()
            },
            stationary_tol: self.markov.tolerance,
            stationary_iters: self.markov.max_iters,
            ..RefineOptions::default()
        }
    }

    pub fn nde_settings(&self) -> NdeSettings {
        NdeSettings {
            idm: self.sim.idm,
            mobil: self.sim.mobil,
            fallback_sigma: self.sim.fallback_sigma,
            vehicle_length: self.world.vehicle_length,
            interval: self.sim.nde_interval,
        }
    }

    pub fn idm_policy(&self) -> IdmPolicy {
        IdmPolicy {
            idm: self.sim.idm,
            mobil: self.sim.mobil,
            vehicle_length: self.world.vehicle_length,
            interval: self.sim.idm_interval,
        }
    }

    pub fn av_agent(&self) -> IdmMobilAgent {
        IdmMobilAgent {
            idm: self.sim.idm,
            mobil: self.sim.mobil,
            vehicle_length: self.world.vehicle_length,
        }
    }

    pub fn nde_episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            world: self.world,
            init: self.init,
            mode: EpisodeMode::Nde {
                warmup_s: self.sim.warmup_s,
                collect_s: self.sim.collect_s,
            },
        }
    }

    pub fn av_episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            world: self.world,
            init: self.init,
            mode: EpisodeMode::Av {
                distance: self.sim.av_distance,
                max_time_s: self.sim.av_max_time_s,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let c = Config::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        let back = Config::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = Config::from_toml("[run]\nseed = 9\n[world]\nlanes = 3\n").unwrap();
        assert_eq!(c.run.seed, 9);
        assert_eq!(c.init.p_cf, 0.68);
        assert!(Config::from_toml("[world]\nbogus = 1\n").is_err());
    }
}
