//! Known ground-truth driving behavior and a data generator built on it.
//!
//! Every truth PMF is a closed-form function of the model state's bin
//! centers, so estimates from generated data can be compared exactly.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::record::TrajectoryRecord;
use crate::action::{accel_value, Direction, ACCEL_STEP, LC_LEFT, LC_RIGHT, N_ACCEL, N_ACTIONS};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, StateGrid};
use crate::model::Situation;
use crate::sim::episode::episode_rng;
use crate::sim::idm::{clamp_accel, idm_accel, IdmParams};
use crate::sim::init::{init_world, InitParams, InitSampler};
use crate::sim::policy::Policy;
use crate::sim::view::{context_state, SituationView};
use crate::sim::world::{CollisionMode, WorldParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseComponent {
    pub weight: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruth {
    /// Free driving: mean accel `a_max (1 - (v / v_desired)^delta)`.
    pub free_a_max: f64,
    pub free_v_desired: f64,
    pub free_delta: f64,
    /// Car following: IDM mean, clamped to the action range.
    pub idm: IdmParams,
    /// Gaussian mixture around the mean, truncated to the action range.
    pub noise: Vec<NoiseComponent>,
    /// Per-decision lane-change probability toward one side:
    /// `p_max * logistic(gain * (incentive - offset))`, zero when unsafe.
    pub lc_p_max: f64,
    pub lc_gain: f64,
    pub lc_offset: f64,
    /// Weight of range advantage (per m) next to speed advantage (per m/s).
    pub lc_gap_weight: f64,
    /// Target-lane gaps below this block the change, m.
    pub lc_min_gap: f64,
    /// Blocks the change when the target-lane follower would close the gap
    /// in less than this, s.
    pub lc_min_ttc: f64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        GroundTruth {
            free_a_max: 0.8,
            free_v_desired: 31.0,
            free_delta: 3.0,
            idm: IdmParams {
                v0: 37.0,
                t_headway: 1.0,
                ..IdmParams::default()
            },
            noise: vec![
                NoiseComponent { weight: 0.75, sigma: 0.8 },
                NoiseComponent { weight: 0.25, sigma: 1.4 },
            ],
            lc_p_max: 0.02,
            lc_gain: 1.0,
            lc_offset: 2.0,
            lc_gap_weight: 0.1,
            lc_min_gap: 10.0,
            lc_min_ttc: 4.0,
        }
    }
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("ground truth: {m}")));
        if self.noise.is_empty() || self.noise.iter().any(|c| !(c.weight > 0.0) || !(c.sigma > 0.0)) {
            return bad("noise components need positive weights and sigmas");
        }
        if !(0.0..=0.5).contains(&self.lc_p_max) {
            return bad("lc_p_max must lie in [0, 0.5]");
        }
        if !(self.free_v_desired > 0.0) {
            return bad("free_v_desired must be positive");
        }
        Ok(())
    }

    /// Longitudinal PMF around `mean`: mixture mass of each action's bin,
    /// renormalized over the action range.
    pub fn noise_pmf(&self, mean: f64) -> [f64; N_ACTIONS] {
        let cdf = |x: f64| -> f64 {
            self.noise
                .iter()
                .map(|c| c.weight * 0.5 * erfc(-(x - mean) / (c.sigma * std::f64::consts::SQRT_2)))
                .sum()
        };
        let mut out = [0.0; N_ACTIONS];
        let h = 0.5 * ACCEL_STEP;
        let mut lower = cdf(accel_value(1) - h);
        for k in 1..=N_ACCEL {
            let upper = cdf(accel_value(k) + h);
            out[k] = (upper - lower).max(0.0);
            lower = upper;
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= total);
        out
    }

    pub fn free_mean(&self, v: f64) -> f64 {
        clamp_accel(self.free_a_max * (1.0 - (v / self.free_v_desired).powf(self.free_delta)))
    }

    pub fn car_following_mean(&self, v: f64, r: f64, rr: f64) -> f64 {
        clamp_accel(idm_accel(v, Some((r, rr)), &self.idm))
    }

    /// Lane-change probability toward the context's direction, from the
    /// context values `[dir, v, v_lead, r_lead, ...]`.
    pub fn lane_change_probability(&self, situation: Situation, c: &[f64], range_cap: f64) -> f64 {
        let (v, v_lead, r_lead) = (c[1], c[2], c[3]);
        let (target, rear) = match situation {
            Situation::FreeLaneChange => (None, None),
            Situation::CutIn => (None, Some((c[4], c[5]))),
            Situation::LcOneAdjacent => (Some((c[4], c[5])), None),
            Situation::LcTwoAdjacent => (Some((c[4], c[5])), Some((c[6], c[7]))),
            _ => return 0.0,
        };
        let (v_t, r_t) = target.unwrap_or((v, range_cap));
        if r_t < self.lc_min_gap {
            return 0.0;
        }
        if let Some((v_r, r_r)) = rear {
            if r_r < self.lc_min_gap || (v_r > v && r_r / (v_r - v) < self.lc_min_ttc) {
                return 0.0;
            }
        }
        let incentive = (v_t - v_lead) + self.lc_gap_weight * (r_t - r_lead);
        self.lc_p_max / (1.0 + (-self.lc_gain * (incentive - self.lc_offset)).exp())
    }
}

/// The ground truth bound to the model grids; acts as a background policy.
#[derive(Debug, Clone)]
pub struct TruthModel {
    pub truth: GroundTruth,
    pub interval: f64,
    grids: Vec<StateGrid>,
}

impl TruthModel {
    pub fn new(truth: GroundTruth, grids: &GridSpec, interval: f64) -> Result<Self> {
        truth.validate()?;
        let grids = Situation::ALL.iter().map(|&s| grids.grid(s)).collect::<Result<_>>()?;
        Ok(TruthModel { truth, interval, grids })
    }

    pub fn grid(&self, s: Situation) -> &StateGrid {
        &self.grids[s.index()]
    }

    /// Truth row of a model state. Lane-change rows put the probability of
    /// their direction on its action and the rest on the longitudinal block
    /// of a zero-mean draw; only the lane-change entry is meaningful there.
    pub fn row(&self, s: Situation, state: u64) -> [f64; N_ACTIONS] {
        let c = self.grid(s).centers(state);
        match s {
            Situation::FreeDriving => self.truth.noise_pmf(self.truth.free_mean(c[0])),
            Situation::CarFollowing => self.truth.noise_pmf(self.truth.car_following_mean(c[0], c[1], c[2])),
            _ => {
                let cap = self.grid(s).axes[3].max;
                let p = self.truth.lane_change_probability(s, &c, cap);
                let mut out = self.truth.noise_pmf(0.0);
                out.iter_mut().for_each(|x| *x *= 1.0 - p);
                out[if c[0] < 0.5 { LC_LEFT } else { LC_RIGHT }] = p;
                out
            }
        }
    }

    fn longitudinal(&self, view: &SituationView) -> [f64; N_ACTIONS] {
        match view.lead {
            None => {
                let g = self.grid(Situation::FreeDriving);
                let s = g.locate_clamped(&[view.v]);
                self.row(Situation::FreeDriving, s)
            }
            Some(l) => {
                let g = self.grid(Situation::CarFollowing);
                let s = g.locate_clamped(&[view.v, l.gap, l.range_rate]);
                self.row(Situation::CarFollowing, s)
            }
        }
    }

    /// Probability of changing toward `dir` in this view.
    pub fn lane_change(&self, view: &SituationView, dir: Direction) -> f64 {
        let Some(ctx) = view.lc_context(dir) else { return 0.0 };
        let g = self.grid(ctx.situation);
        match context_state(g, &ctx) {
            Some(s) => {
                let c = g.centers(s);
                self.truth.lane_change_probability(ctx.situation, &c, g.axes[3].max)
            }
            None => 0.0,
        }
    }
}

impl Policy for TruthModel {
    fn decision_interval(&self) -> f64 {
        self.interval
    }

    fn distribution(&self, view: &SituationView, out: &mut [f64; N_ACTIONS]) {
        *out = self.longitudinal(view);
        let mut p = [self.lane_change(view, Direction::Left), self.lane_change(view, Direction::Right)];
        let total = p[0] + p[1];
        if total > 1.0 {
            p[0] /= total;
            p[1] /= total;
        }
        let keep = 1.0 - p[0] - p[1];
        for k in 1..=N_ACCEL {
            out[k] *= keep;
        }
        out[LC_LEFT] = p[0];
        out[LC_RIGHT] = p[1];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub truth: GroundTruth,
    /// Length of one independently initialized chunk, s.
    pub chunk_s: f64,
    /// Unrecorded driving before each chunk, s.
    pub warmup_s: f64,
    /// Vehicle ids of chunk `c` start at `c * id_stride`.
    pub id_stride: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            truth: GroundTruth::default(),
            chunk_s: 300.0,
            warmup_s: 60.0,
            id_stride: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed: u64,
    pub steps: u64,
    pub rows: u64,
    /// Vehicles per chunk.
    pub vehicles: Vec<usize>,
    /// Steps per chunk.
    pub chunk_steps: Vec<u64>,
    pub lane_changes: u64,
    pub overlaps: u64,
}

/// Drives the ground truth on the ring and hands each chunk's records,
/// sorted by vehicle then time, to `sink`. Record `k` of a run is stamped
/// `k * dt` seconds from the run start.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic_ndd(
    world: &WorldParams,
    init: &InitParams,
    sampler: &InitSampler,
    cfg: &SyntheticConfig,
    grids: &GridSpec,
    hours: f64,
    seed: u64,
    mut sink: impl FnMut(&[TrajectoryRecord]) -> Result<()>,
) -> Result<GenerationReport> {
    if !(hours > 0.0) || !hours.is_finite() {
        return Err(Error::Invalid(format!("hours must be positive, got {hours}")));
    }
    if !(cfg.chunk_s > 0.0) || !(cfg.warmup_s >= 0.0) {
        return Err(Error::Invalid("chunk length must be positive and warm-up non-negative".into()));
    }
    let truth = TruthModel::new(cfg.truth.clone(), grids, 1.0)?;
    let per_s = (1.0 / world.dt).round();
    if ((1.0 / world.dt) - per_s).abs() > 1e-9 {
        return Err(Error::Invalid("the generator needs a step that divides one second".into()));
    }
    let steps = (hours * 3600.0 * per_s).round() as u64;
    let chunk = ((cfg.chunk_s * per_s).round() as u64).max(1);
    let warm = (cfg.warmup_s * per_s).round() as u64;
    let mut report = GenerationReport {
        seed,
        steps,
        ..Default::default()
    };
    let mut buf: Vec<TrajectoryRecord> = Vec::new();
    let mut done = 0u64;
    let mut c = 0u64;
    while done < steps {
        let n = chunk.min(steps - done);
        let mut rng = episode_rng(seed, c);
        let (mut w, _) = init_world(world, init, sampler, &mut rng)?;
        for v in &mut w.vehicles {
            v.id += c * cfg.id_stride;
        }
        for _ in 0..warm {
            w.step(&truth, None, &mut rng, CollisionMode::Ignore);
        }
        let lc0: u64 = w.vehicles.iter().map(|v| v.lane_changes as u64).sum();
        buf.clear();
        buf.reserve(n as usize * w.vehicles.len());
        for t in 0..n {
            w.decide(&truth, None, &mut rng);
            let time = (done + t) as f64 / per_s;
            for i in 0..w.vehicles.len() {
                buf.push(w.record(i, time));
            }
            report.overlaps += w.advance(CollisionMode::Ignore).len() as u64;
        }
        report.lane_changes += w.vehicles.iter().map(|v| v.lane_changes as u64).sum::<u64>() - lc0;
        buf.sort_by_key(|r| r.vehicle_id);
        report.rows += buf.len() as u64;
        report.vehicles.push(w.vehicles.len());
        report.chunk_steps.push(n);
        sink(&buf)?;
        done += n;
        c += 1;
    }
    Ok(report)
}
