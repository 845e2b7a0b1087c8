//! Multi-lane ring-road simulation.

pub mod episode;
pub mod idm;
pub mod init;
pub mod mobil;
pub mod policy;
pub mod view;
pub mod world;

pub use episode::{run_episode, run_episodes, EpisodeConfig, EpisodeMode, EpisodeResult};
pub use idm::{idm_accel, stochastic_idm_accel, stochastic_idm_pmf, IdmParams};
pub use init::{init_world, InitDistribution, InitParams, InitSampler, InitStats};
pub use mobil::{mobil_decision, MobilParams};
pub use policy::{
    nde_action_distribution, AvAgent, AvCommand, ConstantAgent, ConstantLcPolicy, Decision, FixedPolicy,
    IdmMobilAgent, IdmPolicy, NdePolicy, NdeSettings, Policy,
};
pub use view::{Neighbor, SideView, SituationView};
pub use world::{Collision, CollisionKind, CollisionMode, SimRng, Vehicle, VehicleKind, World, WorldParams};
