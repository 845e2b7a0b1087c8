//! Lane-change detection from lane-marking distances.

use serde::{Deserialize, Serialize};

use super::record::TrajectoryRecord;
use crate::action::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneChangeParams {
    pub lane_width: f64,
    /// Marking-distance decrease per sample that counts as lateral motion, m.
    pub slope_threshold: f64,
    /// Consecutive moving samples needed before the crossing.
    pub min_samples: usize,
    pub sample_period: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        LaneChangeParams {
            lane_width: 3.5,
            slope_threshold: 0.2,
            min_samples: 3,
            sample_period: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub vehicle_id: u64,
    pub direction: Direction,
    pub start_time: f64,
    pub cross_time: f64,
    /// Last sample of the lateral motion after the crossing.
    pub end_time: f64,
}

/// Distance to the marking being approached, oriented to shrink toward 0
/// and then jump up by a lane width at the crossing.
fn approach(r: &TrajectoryRecord, dir: Direction) -> f64 {
    match dir {
        Direction::Left => r.dist_left_marking,
        Direction::Right => -r.dist_right_marking,
    }
}

/// Detects lane changes in a time-ordered trace of one vehicle.
///
/// The crossing is a jump of the approached marking distance by more than
/// half a lane. The start is where the distance began falling faster than
/// the slope threshold, walking back from the crossing; detections with
/// fewer than `min_samples` moving samples are ignored.
pub fn detect_lane_changes(records: &[TrajectoryRecord], params: &LaneChangeParams) -> Vec<LaneChangeEvent> {
    let mut out = Vec::new();
    let n = records.len();
    if n < 2 {
        return out;
    }
    let contiguous = |a: usize, b: usize| {
        records[a].vehicle_id == records[b].vehicle_id
            && records[b].time - records[a].time <= 1.5 * params.sample_period + 1e-9
    };
    let moving = |d: &dyn Fn(usize) -> f64, a: usize, b: usize| {
        let scale = (records[b].time - records[a].time) / params.sample_period;
        d(a) - d(b) > params.slope_threshold * scale
    };
    for dir in [Direction::Left, Direction::Right] {
        let d = |k: usize| approach(&records[k], dir);
        for i in 0..n - 1 {
            if !contiguous(i, i + 1) || d(i + 1) - d(i) <= 0.5 * params.lane_width {
                continue;
            }
            let mut k = i;
            while k > 0 && contiguous(k - 1, k) && moving(&d, k - 1, k) {
                k -= 1;
            }
            if i - k < params.min_samples {
                continue;
            }
            let cross_time = if d(i) <= 0.0 && i > 0 {
                let (t0, t1) = (records[i - 1].time, records[i].time);
                let (d0, d1) = (d(i - 1), d(i));
                if d0 > d1 {
                    t0 + d0 / (d0 - d1) * (t1 - t0)
                } else {
                    t1
                }
            } else if i > 0 && d(i - 1) > d(i) {
                let rate = (d(i - 1) - d(i)) / (records[i].time - records[i - 1].time);
                (records[i].time + d(i).max(0.0) / rate).min(records[i + 1].time)
            } else {
                records[i].time
            };
            let mut e = i + 1;
            while e + 1 < n && contiguous(e, e + 1) && moving(&d, e, e + 1) {
                e += 1;
            }
            out.push(LaneChangeEvent {
                vehicle_id: records[i].vehicle_id,
                direction: dir,
                start_time: records[k].time,
                cross_time,
                end_time: records[e].time,
            });
        }
    }
    out.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id).then(a.start_time.total_cmp(&b.start_time)));
    out
}
