//! Action selection for background vehicles and the AV under test.

use rand::Rng;

use super::idm::{clamp_accel, idm_accel, idm_free, stochastic_idm_pmf, IdmParams};
use super::mobil::{mobil_decision, MobilParams};
use super::view::{context_state, longitudinal_state, SituationView};
use super::world::SimRng;
use crate::action::{accel_index, accel_value, Direction, ACCEL_ZERO, LC_LEFT, LC_RIGHT, N_ACCEL, N_ACTIONS};
use crate::empirical::is_inevitable_crash;
use crate::grid::StateGrid;
use crate::model::{ModelSet, Situation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    LaneChange(Direction),
    Accel(f64),
}

impl Decision {
    pub fn from_index(k: usize) -> Decision {
        match k {
            LC_LEFT => Decision::LaneChange(Direction::Left),
            LC_RIGHT => Decision::LaneChange(Direction::Right),
            _ => Decision::Accel(accel_value(k)),
        }
    }
}

/// Draws an action index; zero-probability actions are never returned.
pub fn sample_action(pmf: &[f64; N_ACTIONS], rng: &mut SimRng) -> usize {
    let total: f64 = pmf.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (k, &p) in pmf.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = Some(k);
        acc += p;
        if u < acc {
            return k;
        }
    }
    last.unwrap_or(ACCEL_ZERO)
}

pub trait Policy: Sync {
    /// Seconds between decisions; actions are held in between.
    fn decision_interval(&self) -> f64 {
        1.0
    }

    fn distribution(&self, view: &SituationView, out: &mut [f64; N_ACTIONS]);

    /// Longitudinal control while a lane change is under way. `None` holds
    /// the acceleration chosen at the start of the maneuver (zero).
    fn maneuver_accel(&self, _view: &SituationView) -> Option<f64> {
        None
    }

    fn decide(&self, view: &SituationView, rng: &mut SimRng) -> Decision {
        let mut pmf = [0.0; N_ACTIONS];
        self.distribution(view, &mut pmf);
        Decision::from_index(sample_action(&pmf, rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvCommand {
    pub accel: f64,
    pub lane_change: Option<Direction>,
}

/// Controller of the vehicle under test; called every simulation step.
pub trait AvAgent {
    fn act(&mut self, view: &SituationView) -> AvCommand;
}

/// Always returns the same action.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy {
    decision: Decision,
    index: usize,
}

impl FixedPolicy {
    pub fn accel(a: f64) -> Self {
        FixedPolicy {
            decision: Decision::Accel(a),
            index: accel_index(a),
        }
    }

    pub fn index(k: usize) -> Self {
        FixedPolicy {
            decision: Decision::from_index(k),
            index: k,
        }
    }
}

impl Policy for FixedPolicy {
    fn distribution(&self, _view: &SituationView, out: &mut [f64; N_ACTIONS]) {
        *out = [0.0; N_ACTIONS];
        out[self.index] = 1.0;
    }

    fn decide(&self, _view: &SituationView, _rng: &mut SimRng) -> Decision {
        self.decision
    }
}

/// Deterministic IDM with MOBIL lane changes, deciding every step.
#[derive(Debug, Clone, Copy)]
pub struct IdmPolicy {
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub vehicle_length: f64,
    pub interval: f64,
}

impl IdmPolicy {
    fn choose(&self, view: &SituationView) -> Decision {
        if let Some(dir) = mobil_decision(view, &self.idm, &self.mobil, self.vehicle_length) {
            return Decision::LaneChange(dir);
        }
        let lead = view.lead.map(|l| (l.gap, l.range_rate));
        Decision::Accel(clamp_accel(idm_accel(view.v, lead, &self.idm)))
    }
}

impl Policy for IdmPolicy {
    fn decision_interval(&self) -> f64 {
        self.interval
    }

    fn distribution(&self, view: &SituationView, out: &mut [f64; N_ACTIONS]) {
        *out = [0.0; N_ACTIONS];
        match self.choose(view) {
            Decision::LaneChange(d) => out[d.lc_index()] = 1.0,
            Decision::Accel(a) => out[accel_index(a)] = 1.0,
        }
    }

    fn decide(&self, view: &SituationView, _rng: &mut SimRng) -> Decision {
        self.choose(view)
    }

    fn maneuver_accel(&self, view: &SituationView) -> Option<f64> {
        let lead = view.lead.map(|l| (l.gap, l.range_rate));
        Some(clamp_accel(idm_accel(view.v, lead, &self.idm)))
    }
}

/// Fallback and composition settings of the data-driven environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdeSettings {
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub fallback_sigma: f64,
    pub vehicle_length: f64,
    pub interval: f64,
}

/// Behavior-model driven policy: longitudinal PMF from the free-driving or
/// car-following model, lane-change probabilities from the context models,
/// with stochastic IDM and MOBIL filling uncovered states.
#[derive(Debug, Clone)]
pub struct NdePolicy {
    pub models: ModelSet,
    pub settings: NdeSettings,
    ff_grid: StateGrid,
    cf_grid: StateGrid,
}

/// Where each part of a composed distribution came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompositionTrace {
    pub longitudinal_from_model: bool,
    pub left_from_model: bool,
    pub right_from_model: bool,
}

impl NdePolicy {
    pub fn new(models: ModelSet, settings: NdeSettings) -> Self {
        let ff_grid = models.get(Situation::FreeDriving).grid.clone();
        let cf_grid = models.get(Situation::CarFollowing).grid.clone();
        NdePolicy {
            models,
            settings,
            ff_grid,
            cf_grid,
        }
    }

    /// Longitudinal PMF (lane-change entries zero). Returns whether a covered
    /// model row was used.
    pub fn longitudinal(&self, view: &SituationView, out: &mut [f64; N_ACTIONS]) -> bool {
        let situation = view.situation();
        let grid = match situation {
            Situation::FreeDriving => &self.ff_grid,
            _ => &self.cf_grid,
        };
        let row = longitudinal_state(grid, view).and_then(|s| {
            if situation == Situation::CarFollowing {
                let mut idx = [0usize; 3];
                grid.decode_into(s, &mut idx);
                if is_inevitable_crash(grid.axes[1].center(idx[1]), grid.axes[2].center(idx[2])) {
                    return None;
                }
            }
            self.models.get(situation).covered_row(s)
        });
        if let Some(row) = row {
            let mass: f64 = row.pmf[1..=N_ACCEL].iter().sum();
            if mass > 0.0 {
                *out = [0.0; N_ACTIONS];
                for k in 1..=N_ACCEL {
                    out[k] = row.pmf[k] / mass;
                }
                return true;
            }
        }
        let lead = view.lead.map(|l| (l.gap, l.range_rate));
        let mean = match lead {
            None => idm_free(view.v, &self.settings.idm),
            Some(_) => idm_accel(view.v, lead, &self.settings.idm),
        };
        *out = stochastic_idm_pmf(mean, self.settings.fallback_sigma);
        false
    }

    /// Full 33-action distribution with a trace of its sources.
    pub fn compose(&self, view: &SituationView, out: &mut [f64; N_ACTIONS]) -> CompositionTrace {
        let mut trace = CompositionTrace {
            longitudinal_from_model: self.longitudinal(view, out),
            ..Default::default()
        };
        if view.lead.is_none() {
            return trace;
        }
        let mut mobil: Option<Option<Direction>> = None;
        let mut p = [0.0f64; 2];
        for (slot, dir) in [Direction::Left, Direction::Right].into_iter().enumerate() {
            let Some(ctx) = view.lc_context(dir) else { continue };
            let model = self.models.get(ctx.situation);
            let row = context_state(&model.grid, &ctx).and_then(|s| model.covered_row(s));
            match row {
                Some(row) => {
                    p[slot] = row.pmf[dir.lc_index()];
                    if slot == 0 {
                        trace.left_from_model = true;
                    } else {
                        trace.right_from_model = true;
                    }
                }
                None => {
                    let choice = *mobil.get_or_insert_with(|| {
                        mobil_decision(view, &self.settings.idm, &self.settings.mobil, self.settings.vehicle_length)
                    });
                    p[slot] = if choice == Some(dir) { 1.0 } else { 0.0 };
                }
            }
        }
        let total = p[0] + p[1];
        if total > 1.0 {
            p[0] /= total;
            p[1] /= total;
        }
        let keep = (1.0 - p[0] - p[1]).max(0.0);
        for k in 1..=N_ACCEL {
            out[k] *= keep;
        }
        out[LC_LEFT] = p[0];
        out[LC_RIGHT] = p[1];
        trace
    }
}

impl Policy for NdePolicy {
    fn decision_interval(&self) -> f64 {
        self.settings.interval
    }

    fn distribution(&self, view: &SituationView, out: &mut [f64; N_ACTIONS]) {
        self.compose(view, out);
    }
}

/// The composed distribution for one view.
pub fn nde_action_distribution(view: &SituationView, policy: &NdePolicy) -> [f64; N_ACTIONS] {
    let mut out = [0.0; N_ACTIONS];
    policy.compose(view, &mut out);
    out
}

/// Wraps a policy and replaces its lane-change probabilities with a fixed
/// per-second rate, split evenly over the available sides.
#[derive(Debug, Clone)]
pub struct ConstantLcPolicy<P> {
    pub inner: P,
    pub rate_per_s: f64,
}

impl<P: Policy> Policy for ConstantLcPolicy<P> {
    fn decision_interval(&self) -> f64 {
        self.inner.decision_interval()
    }

    fn distribution(&self, view: &SituationView, out: &mut [f64; N_ACTIONS]) {
        self.inner.distribution(view, out);
        out[LC_LEFT] = 0.0;
        out[LC_RIGHT] = 0.0;
        let mass: f64 = out.iter().sum();
        let sides = [view.left.is_some(), view.right.is_some()];
        let n = sides.iter().filter(|s| **s).count();
        let p_lc = if n == 0 { 0.0 } else { (self.rate_per_s * self.decision_interval()).min(1.0) };
        for k in 1..=N_ACCEL {
            out[k] = out[k] / mass * (1.0 - p_lc);
        }
        if sides[0] {
            out[LC_LEFT] = p_lc / n as f64;
        }
        if sides[1] {
            out[LC_RIGHT] = p_lc / n as f64;
        }
    }
}

/// IDM longitudinal control with MOBIL lane changes.
#[derive(Debug, Clone, Copy)]
pub struct IdmMobilAgent {
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub vehicle_length: f64,
}

impl AvAgent for IdmMobilAgent {
    fn act(&mut self, view: &SituationView) -> AvCommand {
        let lead = view.lead.map(|l| (l.gap, l.range_rate));
        AvCommand {
            accel: clamp_accel(idm_accel(view.v, lead, &self.idm)),
            lane_change: mobil_decision(view, &self.idm, &self.mobil, self.vehicle_length),
        }
    }
}

/// Constant acceleration, never changes lanes.
#[derive(Debug, Clone, Copy)]
pub struct ConstantAgent {
    pub accel: f64,
}

impl AvAgent for ConstantAgent {
    fn act(&mut self, _view: &SituationView) -> AvCommand {
        AvCommand {
            accel: self.accel,
            lane_change: None,
        }
    }
}
