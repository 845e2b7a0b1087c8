//! MOBIL lane-change decisions.

use serde::{Deserialize, Serialize};

use super::idm::{idm_accel, IdmParams};
use super::view::SituationView;
use crate::action::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilParams {
    pub politeness: f64,
    /// Minimum incentive, m/s².
    pub threshold: f64,
    /// Largest braking imposed on the new follower, m/s² (positive).
    pub b_safe: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        MobilParams {
            politeness: 0.1,
            threshold: 0.2,
            b_safe: 3.0,
        }
    }
}

/// Incentive of changing toward `dir`, or `None` when the lane is missing,
/// occupied alongside, or the new follower would brake harder than `b_safe`.
pub fn mobil_incentive(
    view: &SituationView,
    dir: Direction,
    idm: &IdmParams,
    mobil: &MobilParams,
    vehicle_length: f64,
) -> Option<f64> {
    let side = view.side(dir)?;
    let v = view.v;
    let lead = view.lead.map(|l| (l.gap, l.range_rate));

    if side.lead.is_some_and(|t| t.gap < 0.0) || side.rear.is_some_and(|n| n.gap < 0.0) {
        return None;
    }

    // New follower: safety first.
    let (new_gain, safe) = match side.rear {
        None => (0.0, true),
        Some(n) => {
            let v_n = v + n.range_rate;
            let after = idm_accel(v_n, Some((n.gap, v - v_n)), idm);
            let before = idm_accel(
                v_n,
                side.lead.map(|t| (n.gap + vehicle_length + t.gap, t.range_rate - n.range_rate)),
                idm,
            );
            (after - before, after >= -mobil.b_safe)
        }
    };
    if !safe {
        return None;
    }

    let own = idm_accel(v, side.lead.map(|t| (t.gap, t.range_rate)), idm) - idm_accel(v, lead, idm);

    let old_gain = match view.rear {
        None => 0.0,
        Some(o) => {
            let v_o = v + o.range_rate;
            let before = idm_accel(v_o, Some((o.gap, v - v_o)), idm);
            let after = idm_accel(
                v_o,
                view.lead.map(|l| (o.gap + vehicle_length + l.gap, l.range_rate - o.range_rate)),
                idm,
            );
            after - before
        }
    };

    Some(own + mobil.politeness * (new_gain + old_gain))
}

/// Direction with the largest incentive above the threshold, if any.
pub fn mobil_decision(
    view: &SituationView,
    idm: &IdmParams,
    mobil: &MobilParams,
    vehicle_length: f64,
) -> Option<Direction> {
    let mut best: Option<(Direction, f64)> = None;
    for dir in [Direction::Left, Direction::Right] {
        if let Some(inc) = mobil_incentive(view, dir, idm, mobil, vehicle_length) {
            if inc > mobil.threshold && best.is_none_or(|(_, b)| inc > b) {
                best = Some((dir, inc));
            }
        }
    }
    best.map(|b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::view::{Neighbor, SideView};

    #[test]
    fn empty_road_stays() {
        let view = SituationView {
            v: 30.0,
            left: Some(SideView::default()),
            right: Some(SideView::default()),
            ..Default::default()
        };
        let p = IdmParams::default();
        assert_eq!(mobil_incentive(&view, Direction::Left, &p, &MobilParams::default(), 5.0), Some(0.0));
        assert_eq!(mobil_decision(&view, &p, &MobilParams::default(), 5.0), None);
    }

    #[test]
    fn unsafe_follower_forbids() {
        let view = SituationView {
            v: 25.0,
            lead: Some(Neighbor { id: 1, gap: 10.0, range_rate: -5.0 }),
            left: Some(SideView {
                lead: None,
                rear: Some(Neighbor { id: 2, gap: 3.0, range_rate: 10.0 }),
            }),
            right: None,
            ..Default::default()
        };
        let p = IdmParams::default();
        assert_eq!(mobil_incentive(&view, Direction::Left, &p, &MobilParams::default(), 5.0), None);
        assert_eq!(mobil_decision(&view, &p, &MobilParams::default(), 5.0), None);
    }
}
