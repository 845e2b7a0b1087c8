//! Core algorithms for building and refining naturalistic driving environments.
//!
//! The crate is organised bottom-up:
//!
//! * [`action`], [`grid`], [`model`], [`histogram`]: shared domain types
//! * [`ndd`]: trajectory ingestion, segmentation, lane-change detection, labeling
//!   and the synthetic ground-truth generator
//! * [`empirical`]: counting, crash-state exclusion, smoothing
//! * [`markov`]: transition kernels and stationary distributions
//! * [`lp`]: dense bounded-variable revised simplex
//! * [`refine`]: stationary-distribution matching of behavior models
//! * [`sim`]: the multi-lane ring-road simulator
//! * [`metrics`]: Hellinger distance, histograms, accident-rate estimation

pub mod action;
pub mod config;
pub mod empirical;
pub mod error;
pub mod grid;
pub mod histogram;
pub mod lp;
pub mod markov;
pub mod metrics;
pub mod model;
pub mod ndd;
pub mod refine;
pub mod sim;

pub use action::{accel_index, action_to_accel, Action, ActionSpace, Direction, N_ACTIONS};
pub use config::Config;
pub use error::{Error, Result};
pub use grid::{Axis, DiscreteState, GridKind, StateGrid};
pub use histogram::Histogram;
pub use model::{BehaviorModel, ModelRow, ModelSet, RowOrigin, Situation};
