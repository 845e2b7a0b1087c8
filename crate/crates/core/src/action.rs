//! The 33-element discrete action space.
//!
//! Index 0 is a left lane change, index 32 a right lane change, and indices
//! 1..=31 are longitudinal accelerations from -4.0 to 2.0 m/s² in 0.2 steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 33;
pub const N_ACCEL: usize = 31;
pub const LC_LEFT: usize = 0;
pub const LC_RIGHT: usize = 32;
pub const ACCEL_MIN: f64 = -4.0;
pub const ACCEL_MAX: f64 = 2.0;
pub const ACCEL_STEP: f64 = 0.2;

/// Index of the zero-acceleration action.
pub const ACCEL_ZERO: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn lc_index(self) -> usize {
        match self {
            Direction::Left => LC_LEFT,
            Direction::Right => LC_RIGHT,
        }
    }

    /// Axis value used by the lane-change context grids.
    pub fn axis_value(self) -> f64 {
        match self {
            Direction::Left => 0.0,
            Direction::Right => 1.0,
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    /// Lane index offset; lane 0 is the rightmost lane.
    pub fn lane_offset(self) -> i32 {
        match self {
            Direction::Left => 1,
            Direction::Right => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    LaneChange(Direction),
    Accel(f64),
}

/// Maps an action index to its meaning.
pub fn action_to_accel(index: usize) -> Result<Action> {
    match index {
        LC_LEFT => Ok(Action::LaneChange(Direction::Left)),
        LC_RIGHT => Ok(Action::LaneChange(Direction::Right)),
        1..=31 => Ok(Action::Accel(accel_value(index))),
        _ => Err(Error::ActionIndex(index)),
    }
}

/// Acceleration of a longitudinal action index. Panics outside 1..=31.
#[inline]
pub fn accel_value(index: usize) -> f64 {
    assert!((1..=N_ACCEL).contains(&index), "not an acceleration index: {index}");
    ACCEL_MIN + ACCEL_STEP * (index - 1) as f64
}

/// Nearest acceleration action for a continuous acceleration, saturating at
/// the ends of the range.
#[inline]
pub fn accel_index(accel: f64) -> usize {
    let k = ((accel - ACCEL_MIN) / ACCEL_STEP).round();
    if k.is_nan() || k < 0.0 {
        1
    } else if k >= (N_ACCEL - 1) as f64 {
        N_ACCEL
    } else {
        k as usize + 1
    }
}

#[inline]
pub fn is_lane_change(index: usize) -> bool {
    index == LC_LEFT || index == LC_RIGHT
}

/// Value type describing the fixed action space, mostly useful for metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub lc_left_index: usize,
    pub lc_right_index: usize,
    pub accel_min: f64,
    pub accel_max: f64,
    pub accel_step: f64,
}

impl Default for ActionSpace {
    fn default() -> Self {
        ActionSpace {
            lc_left_index: LC_LEFT,
            lc_right_index: LC_RIGHT,
            accel_min: ACCEL_MIN,
            accel_max: ACCEL_MAX,
            accel_step: ACCEL_STEP,
        }
    }
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        N_ACTIONS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn accelerations(&self) -> impl Iterator<Item = (usize, f64)> {
        (1..=N_ACCEL).map(|k| (k, accel_value(k)))
    }
}
