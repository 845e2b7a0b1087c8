//! Labeling decision points with a situation, model state and action.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lane_change::LaneChangeEvent;
use super::record::TrajectoryRecord;
use super::segment::TrajectorySegment;
use crate::action::{accel_index, Direction};
use crate::error::Result;
use crate::grid::{GridSpec, StateGrid};
use crate::model::Situation;
use crate::sim::view::{context_state, longitudinal_state};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategorizeParams {
    /// Records are labeled only at multiples of this interval, s.
    pub decision_interval: f64,
    /// Number of lanes, when known; lane 0 is the rightmost. Without it
    /// both sides are assumed to exist.
    pub lanes: Option<u32>,
    pub d_obs: f64,
}

impl Default for CategorizeParams {
    fn default() -> Self {
        CategorizeParams {
            decision_interval: 1.0,
            lanes: Some(3),
            d_obs: 115.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRole {
    /// The sample of the situation the vehicle acted in.
    Primary,
    /// A lane-change context the vehicle was exposed to but did not use.
    Exposure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub situation: Situation,
    pub state: u64,
    pub action: u8,
    pub role: SampleRole,
}

/// Maps records to samples with fixed grids.
#[derive(Debug, Clone)]
pub struct Labeler {
    pub params: CategorizeParams,
    grids: Vec<StateGrid>,
}

impl Labeler {
    pub fn new(grids: &GridSpec, params: CategorizeParams) -> Result<Self> {
        let grids = Situation::ALL.iter().map(|&s| grids.grid(s)).collect::<Result<_>>()?;
        Ok(Labeler { params, grids })
    }

    pub fn grid(&self, s: Situation) -> &StateGrid {
        &self.grids[s.index()]
    }

    /// Decision tick of a record time, if the time is a decision point.
    pub fn decision_tick(&self, t: f64) -> Option<i64> {
        let q = t / self.params.decision_interval;
        let k = q.round();
        ((q - k).abs() < 1e-6).then_some(k as i64)
    }

    /// Samples of one decision point; `lane_change` marks a lane-change start.
    pub fn label(&self, r: &TrajectoryRecord, lane_change: Option<Direction>, out: &mut Vec<LabeledSample>) {
        let view = r.view(self.params.lanes, self.params.d_obs);
        let accel = accel_index(r.accel) as u8;
        if lane_change.is_none() {
            let s = view.situation();
            if let Some(state) = longitudinal_state(self.grid(s), &view) {
                out.push(LabeledSample {
                    situation: s,
                    state,
                    action: accel,
                    role: SampleRole::Primary,
                });
            }
        }
        if view.lead.is_none() {
            return;
        }
        for dir in [Direction::Left, Direction::Right] {
            let Some(ctx) = view.lc_context(dir) else { continue };
            let Some(state) = context_state(self.grid(ctx.situation), &ctx) else { continue };
            let (action, role) = match lane_change {
                Some(d) if d == dir => (d.lc_index() as u8, SampleRole::Primary),
                Some(d) => (d.lc_index() as u8, SampleRole::Exposure),
                None => (accel, SampleRole::Exposure),
            };
            out.push(LabeledSample {
                situation: ctx.situation,
                state,
                action,
                role,
            });
        }
    }

    /// Labels every decision point of the segments. Points strictly inside a
    /// lane change are skipped; a start snaps to the nearest decision point.
    pub fn categorize(&self, segments: &[TrajectorySegment], events: &[LaneChangeEvent]) -> Vec<LabeledSample> {
        let mut starts: BTreeMap<(u64, i64), Direction> = BTreeMap::new();
        let mut spans: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        let h = self.params.decision_interval;
        for e in events {
            let k = (e.start_time / h).round() as i64;
            starts.insert((e.vehicle_id, k), e.direction);
            spans.entry(e.vehicle_id).or_default().push((k as f64 * h, e.end_time));
        }
        let mut out = Vec::new();
        for seg in segments {
            let busy = spans.get(&seg.vehicle_id);
            for r in &seg.records {
                let Some(k) = self.decision_tick(r.time) else { continue };
                let inside = busy.is_some_and(|b| b.iter().any(|&(s, e)| r.time > s + 1e-6 && r.time < e - 1e-6));
                if inside {
                    continue;
                }
                self.label(r, starts.get(&(seg.vehicle_id, k)).copied(), &mut out);
            }
        }
        out
    }
}

/// Labels segments with the default decision interval and the given grids.
pub fn categorize(
    segments: &[TrajectorySegment],
    events: &[LaneChangeEvent],
    grids: &GridSpec,
    params: &CategorizeParams,
) -> Result<Vec<LabeledSample>> {
    Ok(Labeler::new(grids, *params)?.categorize(segments, events))
}
