//! Streaming reduction of trajectory data to everything the models need:
//! action counts, stationary targets, histograms and the initial-state
//! distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::categorize::{CategorizeParams, Labeler, SampleRole};
use super::lane_change::{detect_lane_changes, LaneChangeParams};
use super::record::TrajectoryRecord;
use super::segment::{segment, split_tracks, SegmentParams};
use crate::empirical::CountTables;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, StateGrid};
use crate::histogram::Histogram;
use crate::model::Situation;
use crate::sim::episode::{range_histogram, velocity_histogram};
use crate::sim::init::InitDistribution;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub segment: SegmentParams,
    pub lane_change: LaneChangeParams,
    pub categorize: CategorizeParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub records: u64,
    pub valid_records: u64,
    pub segments: u64,
    pub segment_records: u64,
    pub lane_changes: u64,
    pub samples: u64,
    pub primary_samples: u64,
}

/// Accumulated statistics of a trajectory data set.
#[derive(Debug, Clone)]
pub struct DataSummary {
    pub counts: CountTables,
    /// Visits per free-driving state at decision points.
    pub ff_visits: BTreeMap<u64, u64>,
    /// Visits per car-following state at decision points.
    pub cf_visits: BTreeMap<u64, u64>,
    /// Speed of every valid record.
    pub velocity: Histogram,
    /// Range of every valid record with a lead in view.
    pub range: Histogram,
    /// Pairs `(speed bin, range bin, range-rate bin)` of car-following
    /// records on the car-following grid.
    pub pairs: BTreeMap<u64, u64>,
    pub stats: PipelineStats,
    labeler: Labeler,
    params: PipelineParams,
    cf_grid: StateGrid,
}

impl DataSummary {
    pub fn new(grids: &GridSpec, params: PipelineParams) -> Result<Self> {
        Ok(DataSummary {
            counts: CountTables::default(),
            ff_visits: BTreeMap::new(),
            cf_visits: BTreeMap::new(),
            velocity: velocity_histogram(),
            range: range_histogram(),
            pairs: BTreeMap::new(),
            stats: PipelineStats::default(),
            labeler: Labeler::new(grids, params.categorize)?,
            params,
            cf_grid: grids.grid(Situation::CarFollowing)?,
        })
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    /// Adds a batch of records sorted by vehicle then time. A vehicle's
    /// records must not be split across batches.
    pub fn process(&mut self, records: &[TrajectoryRecord]) -> Result<()> {
        let p = self.params;
        self.stats.records += records.len() as u64;
        let segments = segment(records, &p.segment)?;
        let mut events = Vec::new();
        for track in split_tracks(records, &p.segment)? {
            events.extend(detect_lane_changes(&track, &p.lane_change));
        }
        let d_obs = p.categorize.d_obs;
        for r in records.iter().filter(|r| r.is_valid()) {
            self.stats.valid_records += 1;
            self.velocity.add(r.v);
            if let Some(l) = r.lead.filter(|l| l.gap < d_obs) {
                self.range.add(l.gap);
                if let Some(s) = self.cf_grid.try_locate(&[r.v, l.gap, l.range_rate]) {
                    *self.pairs.entry(s).or_default() += 1;
                }
            }
        }
        self.stats.segments += segments.len() as u64;
        self.stats.segment_records += segments.iter().map(|s| s.records.len() as u64).sum::<u64>();
        self.stats.lane_changes += events.len() as u64;
        let samples = self.labeler.categorize(&segments, &events);
        self.stats.samples += samples.len() as u64;
        for s in &samples {
            self.counts.add(s);
            if s.role != SampleRole::Primary {
                continue;
            }
            self.stats.primary_samples += 1;
            match s.situation {
                Situation::FreeDriving => *self.ff_visits.entry(s.state).or_default() += 1,
                Situation::CarFollowing => *self.cf_visits.entry(s.state).or_default() += 1,
                _ => {}
            }
        }
        Ok(())
    }

    /// Feeds a record stream, batching whole vehicles.
    pub fn process_stream(
        &mut self,
        records: impl Iterator<Item = Result<TrajectoryRecord>>,
        batch: usize,
    ) -> Result<()> {
        let mut buf: Vec<TrajectoryRecord> = Vec::new();
        for r in records {
            let r = r?;
            if buf.len() >= batch && buf.last().is_some_and(|l| l.vehicle_id != r.vehicle_id) {
                if r.vehicle_id < buf.last().unwrap().vehicle_id {
                    return Err(Error::Unsorted {
                        row: (self.stats.records + buf.len() as u64) as usize,
                    });
                }
                self.process(&buf)?;
                buf.clear();
            }
            buf.push(r);
        }
        if !buf.is_empty() {
            self.process(&buf)?;
        }
        Ok(())
    }

    /// Initial-state distribution: speeds from all records, `(r, rr)` pairs
    /// per follower speed bin from car-following records.
    pub fn init_distribution(&self) -> Result<InitDistribution> {
        if self.velocity.total() == 0 || self.pairs.is_empty() {
            return Err(Error::Invalid("init distribution needs speed and car-following data".into()));
        }
        let g = &self.cf_grid;
        let mut pairs = vec![Vec::new(); g.axes[0].bins()];
        let mut idx = [0usize; 3];
        for (&s, &n) in &self.pairs {
            g.decode_into(s, &mut idx);
            pairs[idx[0]].push((g.axes[1].center(idx[1]), g.axes[2].center(idx[2]), n as f64));
        }
        Ok(InitDistribution {
            speed_min: self.velocity.edges[0],
            speed_resolution: self.velocity.edges[1] - self.velocity.edges[0],
            speed_pmf: self.velocity.counts.iter().map(|&c| c as f64).collect(),
            pair_speed_resolution: g.axes[0].resolution,
            range_resolution: g.axes[1].resolution,
            range_rate_resolution: g.axes[2].resolution,
            pairs,
            jitter: true,
        })
    }
}

/// Stationary target over a free-driving grid: visit frequencies with every
/// state floored at `floor` pseudo-counts, normalized.
pub fn free_driving_target(visits: &BTreeMap<u64, u64>, n_states: usize, floor: f64) -> Vec<f64> {
    let mut pi: Vec<f64> = (0..n_states as u64)
        .map(|s| visits.get(&s).copied().unwrap_or(0) as f64 + floor)
        .collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    pi
}

/// Stationary target over the car-following grid: visit counts plus one on
/// every non-crash state, normalized; crash states get zero.
pub fn car_following_target(visits: &BTreeMap<u64, u64>, grid: &StateGrid) -> Vec<f64> {
    let n = grid.n_states() as usize;
    let mut pi = vec![0.0; n];
    for (s, p) in pi.iter_mut().enumerate() {
        if !crate::markov::crash_state(grid, s as u64) {
            *p = 1.0 + visits.get(&(s as u64)).copied().unwrap_or(0) as f64;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    pi
}

/// Writes a visit table as `state_index,count`.
pub fn write_visits<W: std::io::Write>(w: W, visits: &BTreeMap<u64, u64>, metadata: &serde_json::Value) -> Result<()> {
    let mut w = w;
    writeln!(w, "# {metadata}").map_err(|e| Error::Format(e.to_string()))?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["state_index", "count"])?;
    for (s, n) in visits {
        out.write_record([s.to_string(), n.to_string()])?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn read_visits<R: std::io::Read>(r: R) -> Result<BTreeMap<u64, u64>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<u64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("bad visit row {rec:?}")))
        };
        out.insert(parse(0)?, parse(1)?);
    }
    Ok(out)
}
