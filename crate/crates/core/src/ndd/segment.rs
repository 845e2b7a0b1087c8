//! Splitting raw record streams into clean per-vehicle segments.

use serde::{Deserialize, Serialize};

use super::record::TrajectoryRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    /// Largest allowed time gap between consecutive records, s.
    pub max_gap: f64,
    /// Segments must last strictly longer than this, s.
    pub min_duration: f64,
    /// Nominal record spacing, s; one record covers this much time.
    pub sample_period: f64,
    /// Largest speed change between consecutive records, m/s.
    pub max_speed_jump: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            max_gap: 2.0,
            min_duration: 3.0,
            sample_period: 0.1,
            max_speed_jump: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub vehicle_id: u64,
    pub records: Vec<TrajectoryRecord>,
    pub duration: f64,
}

fn lead_id(r: &TrajectoryRecord) -> Option<u64> {
    r.lead.map(|l| l.id)
}

/// Fails unless records are ordered by vehicle, then strictly by time.
pub fn check_sorted(records: &[TrajectoryRecord]) -> Result<()> {
    for (k, w) in records.windows(2).enumerate() {
        let ok = w[0].vehicle_id < w[1].vehicle_id || (w[0].vehicle_id == w[1].vehicle_id && w[0].time < w[1].time);
        if !ok {
            return Err(Error::Unsorted { row: k + 1 });
        }
    }
    Ok(())
}

/// Runs of valid records of one vehicle with no gap above `max_gap`.
pub fn split_tracks(records: &[TrajectoryRecord], params: &SegmentParams) -> Result<Vec<Vec<TrajectoryRecord>>> {
    check_sorted(records)?;
    let mut out: Vec<Vec<TrajectoryRecord>> = Vec::new();
    let mut cur: Vec<TrajectoryRecord> = Vec::new();
    for r in records.iter().filter(|r| r.is_valid()) {
        if let Some(last) = cur.last() {
            if last.vehicle_id != r.vehicle_id || r.time - last.time > params.max_gap + 1e-9 {
                out.push(std::mem::take(&mut cur));
            }
        }
        cur.push(*r);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

fn is_noisy(piece: &[TrajectoryRecord], params: &SegmentParams) -> bool {
    piece
        .windows(2)
        .any(|w| (w[1].v - w[0].v).abs() > params.max_speed_jump || w[1].x < w[0].x)
}

fn one_pass(records: &[TrajectoryRecord], params: &SegmentParams) -> Result<Vec<TrajectorySegment>> {
    let mut out = Vec::new();
    for track in split_tracks(records, params)? {
        let mut start = 0;
        for k in 1..=track.len() {
            if k < track.len() && lead_id(&track[k]) == lead_id(&track[k - 1]) {
                continue;
            }
            let piece = &track[start..k];
            start = k;
            let duration = piece[piece.len() - 1].time - piece[0].time + params.sample_period;
            if duration > params.min_duration + 1e-9 && !is_noisy(piece, params) {
                out.push(TrajectorySegment {
                    vehicle_id: piece[0].vehicle_id,
                    records: piece.to_vec(),
                    duration,
                });
            }
        }
    }
    Ok(out)
}

/// Segments sorted records: invalid records are dropped, tracks split at
/// gaps and lead changes, noisy or short pieces discarded. Dropping a piece
/// can join its neighbours on a second pass, so passes repeat until the
/// result is stable; the output is therefore a fixed point of `segment`.
pub fn segment(records: &[TrajectoryRecord], params: &SegmentParams) -> Result<Vec<TrajectorySegment>> {
    let mut segs = one_pass(records, params)?;
    loop {
        let flat = flatten(&segs);
        let next = one_pass(&flat, params)?;
        if next == segs {
            return Ok(segs);
        }
        segs = next;
    }
}

pub fn flatten(segments: &[TrajectorySegment]) -> Vec<TrajectoryRecord> {
    segments.iter().flat_map(|s| s.records.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::view::Neighbor;

    fn rec(t: f64, lead: Option<u64>) -> TrajectoryRecord {
        TrajectoryRecord {
            time: t,
            vehicle_id: 1,
            lane_id: 0,
            x: 30.0 * t,
            v: 30.0,
            accel: 0.0,
            lead: lead.map(|id| Neighbor {
                id,
                gap: 20.0,
                range_rate: 0.0,
            }),
            dist_left_marking: 1.75,
            dist_right_marking: -1.75,
            left_lead: None,
            left_rear: None,
            right_lead: None,
            right_rear: None,
        }
    }

    fn stream(n: usize, f: impl Fn(f64) -> Option<u64>) -> Vec<TrajectoryRecord> {
        (0..n).map(|k| k as f64 / 10.0).map(|t| rec(t, f(t))).collect()
    }

    #[test]
    fn continuous_stream_is_one_segment() {
        let s = segment(&stream(50, |_| Some(2)), &SegmentParams::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].duration - 5.0).abs() < 1e-9);
    }

    #[test]
    fn gap_leaves_two_short_pieces() {
        let mut r: Vec<_> = stream(20, |_| None);
        r.extend((45..50).map(|k| rec(k as f64 / 10.0, None)));
        assert!(segment(&r, &SegmentParams::default()).unwrap().is_empty());
    }

    #[test]
    fn unsorted_is_an_error() {
        let mut r = stream(10, |_| None);
        r.swap(3, 4);
        assert!(matches!(segment(&r, &SegmentParams::default()), Err(Error::Unsorted { row: 4 })));
    }
}
