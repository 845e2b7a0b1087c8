//! What one vehicle observes, shared by the simulator and the data labeler so
//! both map situations to model states identically.

use serde::{Deserialize, Serialize};

use crate::action::Direction;
use crate::model::Situation;

/// Another vehicle relative to the observer.
///
/// `gap` is bumper to bumper; `range_rate` is the other vehicle's speed minus
/// the observer's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub gap: f64,
    pub range_rate: f64,
}

/// Vehicles ahead and behind in one adjacent lane.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SideView {
    pub lead: Option<Neighbor>,
    pub rear: Option<Neighbor>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SituationView {
    pub v: f64,
    /// Lead in the current lane, present only within the observation range.
    pub lead: Option<Neighbor>,
    /// Follower in the current lane.
    pub rear: Option<Neighbor>,
    /// `None` when there is no lane on that side.
    pub left: Option<SideView>,
    pub right: Option<SideView>,
}

/// State of one lane-change context: situation plus the values its grid
/// expects, starting with the direction axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcContext {
    pub situation: Situation,
    pub values: [f64; 8],
    pub len: usize,
}

impl LcContext {
    pub fn values(&self) -> &[f64] {
        &self.values[..self.len]
    }
}

impl SituationView {
    /// Longitudinal situation: car following iff a lead is observed.
    pub fn situation(&self) -> Situation {
        if self.lead.is_some() {
            Situation::CarFollowing
        } else {
            Situation::FreeDriving
        }
    }

    /// Values for the longitudinal grid: `[v]` or `[v, r, rr]`.
    pub fn longitudinal_values(&self) -> ([f64; 3], usize) {
        match self.lead {
            None => ([self.v, 0.0, 0.0], 1),
            Some(l) => ([self.v, l.gap, l.range_rate], 3),
        }
    }

    pub fn side(&self, dir: Direction) -> Option<&SideView> {
        match dir {
            Direction::Left => self.left.as_ref(),
            Direction::Right => self.right.as_ref(),
        }
    }

    /// Lane-change context toward `dir`. Requires a current-lane lead and an
    /// existing target lane.
    ///
    /// Cut-in: target-lane follower only. One adjacent: target-lane lead
    /// only. Two adjacent: both. Free lane change: neither.
    pub fn lc_context(&self, dir: Direction) -> Option<LcContext> {
        let lead = self.lead?;
        let side = self.side(dir)?;
        let v = self.v;
        let mut values = [0.0; 8];
        values[0] = dir.axis_value();
        values[1] = v;
        values[2] = v + lead.range_rate;
        values[3] = lead.gap;
        let (situation, len) = match (side.lead, side.rear) {
            (None, None) => (Situation::FreeLaneChange, 4),
            (None, Some(rear)) => {
                values[4] = v + rear.range_rate;
                values[5] = rear.gap;
                (Situation::CutIn, 6)
            }
            (Some(tl), None) => {
                values[4] = v + tl.range_rate;
                values[5] = tl.gap;
                (Situation::LcOneAdjacent, 6)
            }
            (Some(tl), Some(rear)) => {
                values[4] = v + tl.range_rate;
                values[5] = tl.gap;
                values[6] = v + rear.range_rate;
                values[7] = rear.gap;
                (Situation::LcTwoAdjacent, 8)
            }
        };
        Some(LcContext {
            situation,
            values,
            len,
        })
    }
}


/// Model state of the longitudinal situation. Speed is clamped to its axis;
/// range and range rate must lie inside theirs.
#[inline]
pub fn longitudinal_state(grid: &crate::grid::StateGrid, view: &SituationView) -> Option<u64> {
    let (vals, len) = view.longitudinal_values();
    if grid.dims() != len {
        return None;
    }
    let av = &grid.axes[0];
    let mut idx = av.discretize_clamped(vals[0]) as u64;
    for k in 1..len {
        let ax = &grid.axes[k];
        if !ax.contains(vals[k]) {
            return None;
        }
        idx = idx * ax.bins() as u64 + ax.discretize_clamped(vals[k]) as u64;
    }
    Some(idx)
}

/// Model state of a lane-change context. Speed axes are clamped; the
/// direction and range axes must contain their values.
#[inline]
pub fn context_state(grid: &crate::grid::StateGrid, ctx: &LcContext) -> Option<u64> {
    if grid.dims() != ctx.len {
        return None;
    }
    let mut idx = 0u64;
    for (k, ax) in grid.axes.iter().enumerate() {
        let v = ctx.values[k];
        let is_speed = k == 1 || k == 2 || (k >= 4 && k % 2 == 0);
        let bin = if is_speed {
            ax.discretize_clamped(v)
        } else if ax.contains(v) {
            ax.discretize_clamped(v)
        } else {
            return None;
        };
        idx = idx * ax.bins() as u64 + bin as u64;
    }
    Some(idx)
}
