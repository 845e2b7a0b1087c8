//! Ring-road world state and stepping.

use serde::{Deserialize, Serialize};

use super::policy::{AvAgent, Decision, Policy};
use super::view::{Neighbor, SideView, SituationView};
use crate::action::Direction;
use crate::error::{Error, Result};
use crate::ndd::TrajectoryRecord;

pub type SimRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Background,
    Av,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChange {
    pub dir: Direction,
    pub from: u8,
    pub to: u8,
    /// Ticks elapsed since the maneuver started.
    pub ticks: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub lane: u8,
    /// Position along the road, wrapped to `[0, length)` on a ring.
    pub x: f64,
    /// Total distance driven.
    pub odometer: f64,
    pub v: f64,
    /// Acceleration currently commanded (held between decisions).
    pub accel: f64,
    pub maneuver: Option<LaneChange>,
    pub kind: VehicleKind,
    /// Crashed vehicles are frozen and ignored by everyone else.
    pub crashed: bool,
    pub lane_changes: u32,
}

impl Vehicle {
    pub fn background(id: u64, lane: u8, x: f64, v: f64) -> Self {
        Vehicle {
            id,
            lane,
            x,
            odometer: 0.0,
            v,
            accel: 0.0,
            maneuver: None,
            kind: VehicleKind::Background,
            crashed: false,
            lane_changes: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub lanes: u8,
    pub length: f64,
    pub periodic: bool,
    pub lane_width: f64,
    pub dt: f64,
    pub vehicle_length: f64,
    /// Observation range for neighbors.
    pub d_obs: f64,
    pub lc_duration: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            lanes: 3,
            length: 1500.0,
            periodic: true,
            lane_width: 3.5,
            dt: 0.1,
            vehicle_length: 5.0,
            d_obs: 115.0,
            lc_duration: 1.0,
            v_min: 20.0,
            v_max: 40.0,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if self.lanes == 0 || !(self.length > 0.0) || !(self.dt > 0.0) || !(self.vehicle_length > 0.0) {
            return Err(Error::Invalid("road needs lanes, a positive length, step and vehicle length".into()));
        }
        if !(self.v_max > self.v_min) || !(self.lc_duration >= self.dt) {
            return Err(Error::Invalid("speed bounds or lane-change duration are inconsistent".into()));
        }
        Ok(())
    }

    pub fn lc_ticks(&self) -> u32 {
        (self.lc_duration / self.dt).round().max(1.0) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    RearEnd,
    SideswipeSameDirection,
    Angle,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    /// Vehicle indices, `a < b`.
    pub a: usize,
    pub b: usize,
    pub kind: CollisionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionMode {
    /// Colliding vehicles are frozen and drop out of all interactions.
    Freeze,
    /// Collisions are reported but vehicles keep driving.
    Ignore,
}

#[derive(Debug, Clone)]
pub struct World {
    pub params: WorldParams,
    pub vehicles: Vec<Vehicle>,
    pub tick: u64,
    /// Per lane: `(x, vehicle index)` of active vehicles occupying it, sorted.
    lanes: Vec<Vec<(f64, usize)>>,
}

impl World {
    pub fn new(params: WorldParams, vehicles: Vec<Vehicle>) -> Result<Self> {
        params.validate()?;
        if let Some(v) = vehicles.iter().find(|v| v.lane >= params.lanes) {
            return Err(Error::Invalid(format!("vehicle {} is on lane {} of {}", v.id, v.lane, params.lanes)));
        }
        let mut w = World {
            params,
            vehicles,
            tick: 0,
            lanes: vec![Vec::new(); params.lanes as usize],
        };
        w.rebuild_index();
        Ok(w)
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.params.dt
    }

    pub fn rebuild_index(&mut self) {
        for l in &mut self.lanes {
            l.clear();
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.crashed {
                continue;
            }
            self.lanes[v.lane as usize].push((v.x, i));
            if let Some(m) = v.maneuver {
                let other = if v.lane == m.from { m.to } else { m.from };
                self.lanes[other as usize].push((v.x, i));
            }
        }
        for l in &mut self.lanes {
            l.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
    }

    /// Vehicles occupying `lane`, sorted by position.
    pub fn lane_order(&self, lane: usize) -> &[(f64, usize)] {
        &self.lanes[lane]
    }

    /// Nearest vehicles ahead and behind `x` in `lane` other than `me`,
    /// with center-to-center distances.
    pub fn lane_neighbors(&self, lane: usize, x: f64, me: usize) -> (Option<(usize, f64)>, Option<(usize, f64)>) {
        let list = &self.lanes[lane];
        let n = list.len();
        if n == 0 {
            return (None, None);
        }
        let len = self.params.length;
        let ring = self.params.periodic;
        let p = list.partition_point(|&(xj, j)| xj < x || (xj == x && j < me));

        let mut ahead = None;
        for step in 0..n {
            let k = p + step;
            let (k, wrapped) = if k >= n { (k - n, true) } else { (k, false) };
            if wrapped && !ring {
                break;
            }
            let (xj, j) = list[k];
            if j == me {
                continue;
            }
            let d = if wrapped { xj + len - x } else { xj - x };
            ahead = Some((j, d));
            break;
        }
        let mut behind = None;
        for step in 1..=n {
            let (k, wrapped) = if step <= p { (p - step, false) } else { (p + n - step, true) };
            if wrapped && !ring {
                break;
            }
            let (xj, j) = list[k];
            if j == me {
                continue;
            }
            let d = if wrapped { x + len - xj } else { x - xj };
            behind = Some((j, d));
            break;
        }
        (ahead, behind)
    }

    fn neighbor(&self, me: usize, found: Option<(usize, f64)>) -> Option<Neighbor> {
        let (j, d) = found?;
        let gap = d - self.params.vehicle_length;
        if gap >= self.params.d_obs {
            return None;
        }
        let o = &self.vehicles[j];
        Some(Neighbor {
            id: o.id,
            gap,
            range_rate: o.v - self.vehicles[me].v,
        })
    }

    pub fn target_lane(&self, lane: u8, dir: Direction) -> Option<u8> {
        let t = lane as i32 + dir.lane_offset();
        (t >= 0 && t < self.params.lanes as i32).then_some(t as u8)
    }

    pub fn view(&self, i: usize) -> SituationView {
        let me = &self.vehicles[i];
        let (ahead, behind) = self.lane_neighbors(me.lane as usize, me.x, i);
        let side = |dir| {
            self.target_lane(me.lane, dir).map(|t| {
                let (a, b) = self.lane_neighbors(t as usize, me.x, i);
                SideView {
                    lead: self.neighbor(i, a),
                    rear: self.neighbor(i, b),
                }
            })
        };
        SituationView {
            v: me.v,
            lead: self.neighbor(i, ahead),
            rear: self.neighbor(i, behind),
            left: side(Direction::Left),
            right: side(Direction::Right),
        }
    }

    /// View of a vehicle mid-maneuver: the lead is the nearer of the leads
    /// in the lanes it leaves and enters.
    pub fn maneuver_view(&self, i: usize) -> SituationView {
        let mut view = self.view(i);
        if let Some(m) = self.vehicles[i].maneuver {
            let other = if self.vehicles[i].lane == m.from { m.to } else { m.from };
            let (ahead, _) = self.lane_neighbors(other as usize, self.vehicles[i].x, i);
            if let Some(n) = self.neighbor(i, ahead) {
                if view.lead.is_none_or(|l| n.gap < l.gap) {
                    view.lead = Some(n);
                }
            }
        }
        view
    }

    fn apply(&mut self, i: usize, decision: Decision) {
        let lane = self.vehicles[i].lane;
        match decision {
            Decision::Accel(a) => self.vehicles[i].accel = a,
            Decision::LaneChange(dir) => match self.target_lane(lane, dir) {
                Some(to) => {
                    let v = &mut self.vehicles[i];
                    v.accel = 0.0;
                    v.maneuver = Some(LaneChange {
                        dir,
                        from: lane,
                        to,
                        ticks: 0,
                    });
                    v.lane_changes += 1;
                    let x = v.x;
                    let list = &mut self.lanes[to as usize];
                    let at = list.partition_point(|a| a.0.total_cmp(&x).then(a.1.cmp(&i)).is_lt());
                    list.insert(at, (x, i));
                }
                None => self.vehicles[i].accel = 0.0,
            },
        }
    }

    /// Lets due background vehicles and the AV choose actions.
    pub fn decide(&mut self, policy: &dyn Policy, mut av: Option<&mut dyn AvAgent>, rng: &mut SimRng) {
        let every = (policy.decision_interval() / self.params.dt).round().max(1.0) as u64;
        let due = self.tick % every == 0;
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            if v.crashed {
                continue;
            }
            match v.kind {
                VehicleKind::Background => {
                    if !due {
                        continue;
                    }
                    if v.maneuver.is_some() {
                        if let Some(a) = policy.maneuver_accel(&self.maneuver_view(i)) {
                            self.vehicles[i].accel = a;
                        }
                        continue;
                    }
                    let view = self.view(i);
                    let d = policy.decide(&view, rng);
                    self.apply(i, d);
                }
                VehicleKind::Av => {
                    let Some(agent) = av.as_deref_mut() else { continue };
                    let view = self.view(i);
                    let cmd = agent.act(&view);
                    self.vehicles[i].accel = cmd.accel;
                    if let (Some(dir), None) = (cmd.lane_change, self.vehicles[i].maneuver) {
                        if self.target_lane(self.vehicles[i].lane, dir).is_some() {
                            let keep = cmd.accel;
                            self.apply(i, Decision::LaneChange(dir));
                            self.vehicles[i].accel = keep;
                        }
                    }
                }
            }
        }
    }

    /// Integrates one step, advances maneuvers and returns new collisions.
    pub fn advance(&mut self, mode: CollisionMode) -> Vec<Collision> {
        let p = self.params;
        let dt = p.dt;
        let v_top = p.v_max - 1e-9;
        let lc_ticks = p.lc_ticks();
        let switch_at = lc_ticks / 2 + 1;
        for v in &mut self.vehicles {
            if v.crashed {
                continue;
            }
            let v1 = match v.kind {
                VehicleKind::Background => {
                    (v.v + v.accel * dt).clamp(p.v_min, v_top)
                }
                VehicleKind::Av => (v.v + v.accel * dt).max(0.0),
            };
            let dx = 0.5 * (v.v + v1) * dt;
            v.x += dx;
            v.odometer += dx;
            v.v = v1;
            if p.periodic {
                v.x = v.x.rem_euclid(p.length);
            }
            if let Some(m) = &mut v.maneuver {
                m.ticks += 1;
                if m.ticks == switch_at {
                    v.lane = m.to;
                }
                if m.ticks >= lc_ticks {
                    v.lane = m.to;
                    v.maneuver = None;
                }
            }
        }
        self.tick += 1;
        self.rebuild_index();
        let found = self.collisions();
        if mode == CollisionMode::Freeze {
            for c in &found {
                self.vehicles[c.a].crashed = true;
                self.vehicles[c.b].crashed = true;
            }
            if !found.is_empty() {
                self.rebuild_index();
            }
        }
        found
    }

    /// One full tick: decisions then integration.
    pub fn step(
        &mut self,
        policy: &dyn Policy,
        av: Option<&mut dyn AvAgent>,
        rng: &mut SimRng,
        mode: CollisionMode,
    ) -> Vec<Collision> {
        self.decide(policy, av, rng);
        self.advance(mode)
    }

    /// Overlapping pairs among active vehicles sharing a lane.
    pub fn collisions(&self) -> Vec<Collision> {
        let len = self.params.vehicle_length;
        let mut out: Vec<Collision> = Vec::new();
        for list in &self.lanes {
            let n = list.len();
            if n < 2 {
                continue;
            }
            let pairs = if self.params.periodic { n } else { n - 1 };
            for k in 0..pairs {
                let (x0, i) = list[k];
                let (x1, j) = list[(k + 1) % n];
                let d = if k + 1 == n { x1 + self.params.length - x0 } else { x1 - x0 };
                if d >= len || i == j {
                    continue;
                }
                let (a, b) = (i.min(j), i.max(j));
                if out.iter().any(|c| c.a == a && c.b == b) {
                    continue;
                }
                out.push(Collision {
                    a,
                    b,
                    kind: self.classify(a, b),
                });
            }
        }
        out
    }

    fn classify(&self, a: usize, b: usize) -> CollisionKind {
        match (self.vehicles[a].maneuver, self.vehicles[b].maneuver) {
            (None, None) => CollisionKind::RearEnd,
            (Some(_), None) | (None, Some(_)) => CollisionKind::SideswipeSameDirection,
            (Some(ma), Some(mb)) => {
                if ma.dir != mb.dir && ma.to == mb.to {
                    CollisionKind::Angle
                } else {
                    CollisionKind::Other
                }
            }
        }
    }

    /// Signed distances to the left and right lane markings.
    pub fn marking_distances(&self, i: usize) -> (f64, f64) {
        let v = &self.vehicles[i];
        let w = self.params.lane_width;
        let y = match v.maneuver {
            None => 0.0,
            Some(m) => {
                let sign = m.dir.lane_offset() as f64;
                let progress = m.ticks as f64 / self.params.lc_ticks() as f64;
                let y_from = sign * w * progress;
                if v.lane == m.from {
                    y_from
                } else {
                    y_from - sign * w
                }
            }
        };
        (0.5 * w - y, -0.5 * w - y)
    }

    /// Observation of vehicle `i` in the ingestion format.
    pub fn record(&self, i: usize, time: f64) -> TrajectoryRecord {
        let view = self.view(i);
        let v = &self.vehicles[i];
        let (dl, dr) = self.marking_distances(i);
        let side = |s: Option<SideView>| s.unwrap_or_default();
        let left = side(view.left);
        let right = side(view.right);
        TrajectoryRecord {
            time,
            vehicle_id: v.id,
            lane_id: v.lane as u32,
            x: v.odometer,
            v: v.v,
            accel: v.accel,
            lead: view.lead,
            dist_left_marking: dl,
            dist_right_marking: dr,
            left_lead: left.lead,
            left_rear: left.rear,
            right_lead: right.lead,
            right_rear: right.rear,
        }
    }

    pub fn active_count(&self) -> usize {
        self.vehicles.iter().filter(|v| !v.crashed).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::policy::FixedPolicy;
    use rand::SeedableRng;

    fn world(vs: Vec<Vehicle>) -> World {
        World::new(WorldParams::default(), vs).unwrap()
    }

    #[test]
    fn lone_vehicle_moves_v_dt() {
        let mut w = world(vec![Vehicle::background(0, 1, 100.0, 30.0)]);
        let mut rng = SimRng::seed_from_u64(0);
        w.step(&FixedPolicy::accel(0.0), None, &mut rng, CollisionMode::Freeze);
        assert!((w.vehicles[0].x - 103.0).abs() < 1e-12);
        let view = w.view(0);
        assert!(view.lead.is_none() && view.left.is_some() && view.right.is_some());
    }

    #[test]
    fn ring_wraps_neighbors() {
        let w = world(vec![
            Vehicle::background(0, 0, 1450.0, 30.0),
            Vehicle::background(1, 0, 20.0, 31.0),
        ]);
        let view = w.view(0);
        let lead = view.lead.unwrap();
        assert_eq!(lead.id, 1);
        assert!((lead.gap - 65.0).abs() < 1e-9);
        assert!((lead.range_rate - 1.0).abs() < 1e-12);
        assert!(view.right.is_none());
    }

    #[test]
    fn lane_change_takes_one_second() {
        let mut w = world(vec![Vehicle::background(0, 0, 0.0, 30.0)]);
        let mut rng = SimRng::seed_from_u64(0);
        w.decide(&FixedPolicy::index(0), None, &mut rng);
        assert!(w.vehicles[0].maneuver.is_some());
        for k in 1..=10 {
            w.advance(CollisionMode::Freeze);
            if k < 6 {
                assert_eq!(w.vehicles[0].lane, 0);
            }
            if k < 10 {
                assert!(w.vehicles[0].maneuver.is_some());
            }
        }
        assert_eq!(w.vehicles[0].lane, 1);
        assert!(w.vehicles[0].maneuver.is_none());
        assert!((w.time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rear_end_detected() {
        let mut w = world(vec![
            Vehicle::background(0, 0, 100.0, 30.0),
            Vehicle::background(1, 0, 105.3, 30.0),
        ]);
        let mut rng = SimRng::seed_from_u64(0);
        let mut hit = None;
        for _ in 0..20 {
            w.decide(&FixedPolicy::accel(0.0), None, &mut rng);
            w.vehicles[0].accel = 2.0;
            let c = w.advance(CollisionMode::Freeze);
            if let Some(c) = c.first() {
                hit = Some(c.kind);
                break;
            }
        }
        assert_eq!(hit, Some(CollisionKind::RearEnd));
        assert!(w.vehicles[0].crashed && w.vehicles[1].crashed);
    }
}
