//! Binning of continuous driving states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Situation;

/// Tolerance, in bin units, that keeps values computed as `min + k * res`
/// from falling into bin `k - 1` through rounding.
const BIN_EPS: f64 = 1e-9;

/// One left-closed right-open binned axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub resolution: f64,
}

impl Axis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, resolution: f64) -> Result<Self> {
        let name = name.into();
        if !(resolution > 0.0) || !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Invalid(format!(
                "axis `{name}` needs min < max and resolution > 0 (got [{min}, {max}) by {resolution})"
            )));
        }
        Ok(Axis {
            name,
            min,
            max,
            resolution,
        })
    }

    pub fn bins(&self) -> usize {
        (((self.max - self.min) / self.resolution) - BIN_EPS).ceil().max(1.0) as usize
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value < self.max
    }

    pub fn discretize(&self, value: f64) -> Result<usize> {
        if !self.contains(value) {
            return Err(Error::OutOfRange {
                axis: self.name.clone(),
                value,
                min: self.min,
                max: self.max,
            });
        }
        Ok(self.bin_of(value))
    }

    /// Bin index with values outside the axis clamped to the edge bins.
    #[inline]
    pub fn discretize_clamped(&self, value: f64) -> usize {
        if value.is_nan() {
            return 0;
        }
        self.bin_of(value)
    }

    #[inline]
    fn bin_of(&self, value: f64) -> usize {
        let k = ((value - self.min) / self.resolution + BIN_EPS).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.bins() - 1)
        }
    }

    pub fn lower(&self, bin: usize) -> f64 {
        self.min + bin as f64 * self.resolution
    }

    pub fn upper(&self, bin: usize) -> f64 {
        (self.min + (bin + 1) as f64 * self.resolution).min(self.max)
    }

    #[inline]
    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.lower(bin) + self.upper(bin))
    }

    /// Splits `value` between the two bins whose centers bracket it.
    ///
    /// Returns `(lo, hi, w_hi)` with mass `1 - w_hi` on `lo` and `w_hi` on
    /// `hi`. Values beyond the outermost centers go entirely to the edge bin.
    pub fn allocate(&self, value: f64) -> (usize, usize, f64) {
        let n = self.bins();
        let first = self.center(0);
        let last = self.center(n - 1);
        if value <= first {
            return (0, 0, 0.0);
        }
        if value >= last {
            return (n - 1, n - 1, 0.0);
        }
        let i = self.discretize_clamped(value);
        let (lo, hi) = if value >= self.center(i) { (i, i + 1) } else { (i - 1, i) };
        let (c_lo, c_hi) = (self.center(lo), self.center(hi));
        let w = (value - c_lo) / (c_hi - c_lo);
        if w <= 1e-9 {
            (lo, lo, 0.0)
        } else if w >= 1.0 - 1e-9 {
            (hi, hi, 0.0)
        } else {
            (lo, hi, w)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    FreeDriving,
    CarFollowing,
    LaneChangeContext,
}

/// Cartesian product of axes, with row-major state indices (first axis slowest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    pub kind: GridKind,
    pub axes: Vec<Axis>,
}

impl StateGrid {
    pub fn new(kind: GridKind, axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Invalid("a grid needs at least one axis".into()));
        }
        let total = axes
            .iter()
            .try_fold(1u64, |acc, a| acc.checked_mul(a.bins() as u64));
        if total.is_none() {
            return Err(Error::Invalid("grid has more than 2^64 states".into()));
        }
        Ok(StateGrid { kind, axes })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn n_states(&self) -> u64 {
        self.axes.iter().map(|a| a.bins() as u64).product()
    }

    pub fn encode(&self, indices: &[usize]) -> Result<u64> {
        if indices.len() != self.axes.len() {
            return Err(Error::Dimension(format!(
                "state has {} indices, grid has {} axes",
                indices.len(),
                self.axes.len()
            )));
        }
        let mut idx = 0u64;
        for (axis, &i) in self.axes.iter().zip(indices) {
            let n = axis.bins();
            if i >= n {
                return Err(Error::Invalid(format!(
                    "index {i} out of range for axis `{}` with {n} bins",
                    axis.name
                )));
            }
            idx = idx * n as u64 + i as u64;
        }
        Ok(idx)
    }

    pub fn decode(&self, state: u64) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        self.decode_into(state, &mut out);
        out
    }

    pub fn decode_into(&self, mut state: u64, out: &mut [usize]) {
        for (k, axis) in self.axes.iter().enumerate().rev() {
            let n = axis.bins() as u64;
            out[k] = (state % n) as usize;
            state /= n;
        }
    }

    /// Strict lookup: every value must lie inside its axis.
    pub fn locate(&self, values: &[f64]) -> Result<u64> {
        if values.len() != self.axes.len() {
            return Err(Error::Dimension(format!(
                "{} values for a {}-axis grid",
                values.len(),
                self.axes.len()
            )));
        }
        let mut idx = 0u64;
        for (axis, &v) in self.axes.iter().zip(values) {
            idx = idx * axis.bins() as u64 + axis.discretize(v)? as u64;
        }
        Ok(idx)
    }

    /// Like [`locate`](Self::locate) but returns `None` instead of an error.
    #[inline]
    pub fn try_locate(&self, values: &[f64]) -> Option<u64> {
        if values.len() != self.axes.len() {
            return None;
        }
        let mut idx = 0u64;
        for (axis, &v) in self.axes.iter().zip(values) {
            if !axis.contains(v) {
                return None;
            }
            idx = idx * axis.bins() as u64 + axis.bin_of(v) as u64;
        }
        Some(idx)
    }

    /// Lookup with every value clamped into its axis.
    #[inline]
    pub fn locate_clamped(&self, values: &[f64]) -> u64 {
        let mut idx = 0u64;
        for (axis, &v) in self.axes.iter().zip(values) {
            idx = idx * axis.bins() as u64 + axis.discretize_clamped(v) as u64;
        }
        idx
    }

    pub fn centers(&self, state: u64) -> Vec<f64> {
        let idx = self.decode(state);
        self.axes
            .iter()
            .zip(&idx)
            .map(|(a, &i)| a.center(i))
            .collect()
    }
}

/// A validated tuple of bin indices on a grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiscreteState {
    pub indices: Vec<usize>,
    pub index: u64,
}

impl DiscreteState {
    pub fn new(grid: &StateGrid, indices: Vec<usize>) -> Result<Self> {
        let index = grid.encode(&indices)?;
        Ok(DiscreteState { indices, index })
    }

    pub fn from_index(grid: &StateGrid, index: u64) -> Result<Self> {
        if index >= grid.n_states() {
            return Err(Error::Invalid(format!(
                "state {index} outside a grid of {} states",
                grid.n_states()
            )));
        }
        Ok(DiscreteState {
            indices: grid.decode(index),
            index,
        })
    }
}

/// Resolutions and bounds for all six situation grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub speed_min: f64,
    pub speed_max: f64,
    /// Speed resolution of the free-driving grid.
    pub ff_speed_resolution: f64,
    /// Speed resolution of the car-following grid.
    pub speed_resolution: f64,
    /// Observation cap on ranges (d_obs).
    pub range_max: f64,
    pub range_resolution: f64,
    pub range_rate_min: f64,
    pub range_rate_max: f64,
    pub range_rate_resolution: f64,
    /// Speed resolution on lane-change context grids.
    pub lc_speed_resolution: f64,
    /// Range resolution on lane-change context grids.
    pub lc_range_resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            speed_min: 20.0,
            speed_max: 40.0,
            ff_speed_resolution: 0.2,
            speed_resolution: 1.0,
            range_max: 115.0,
            range_resolution: 1.0,
            range_rate_min: -20.0,
            range_rate_max: 20.0,
            range_rate_resolution: 1.0,
            lc_speed_resolution: 2.0,
            lc_range_resolution: 10.0,
        }
    }
}

impl GridSpec {
    pub fn grid(&self, situation: Situation) -> Result<StateGrid> {
        let s = self;
        let speed = |name: &str, res: f64| Axis::new(name, s.speed_min, s.speed_max, res);
        let range = |name: &str, res: f64| Axis::new(name, 0.0, s.range_max, res);
        let dir = || Axis::new("direction", 0.0, 2.0, 1.0);
        let lv = s.lc_speed_resolution;
        let lr = s.lc_range_resolution;
        match situation {
            Situation::FreeDriving => StateGrid::new(
                GridKind::FreeDriving,
                vec![speed("v", s.ff_speed_resolution)?],
            ),
            Situation::CarFollowing => StateGrid::new(
                GridKind::CarFollowing,
                vec![
                    speed("v", s.speed_resolution)?,
                    range("r", s.range_resolution)?,
                    Axis::new("rr", s.range_rate_min, s.range_rate_max, s.range_rate_resolution)?,
                ],
            ),
            Situation::FreeLaneChange => StateGrid::new(
                GridKind::LaneChangeContext,
                vec![dir()?, speed("v", lv)?, speed("v_lead", lv)?, range("r_lead", lr)?],
            ),
            Situation::CutIn => StateGrid::new(
                GridKind::LaneChangeContext,
                vec![
                    dir()?,
                    speed("v", lv)?,
                    speed("v_lead", lv)?,
                    range("r_lead", lr)?,
                    speed("v_rear", lv)?,
                    range("r_rear", lr)?,
                ],
            ),
            Situation::LcOneAdjacent => StateGrid::new(
                GridKind::LaneChangeContext,
                vec![
                    dir()?,
                    speed("v", lv)?,
                    speed("v_lead", lv)?,
                    range("r_lead", lr)?,
                    speed("v_target_lead", lv)?,
                    range("r_target_lead", lr)?,
                ],
            ),
            Situation::LcTwoAdjacent => StateGrid::new(
                GridKind::LaneChangeContext,
                vec![
                    dir()?,
                    speed("v", lv)?,
                    speed("v_lead", lv)?,
                    range("r_lead", lr)?,
                    speed("v_target_lead", lv)?,
                    range("r_target_lead", lr)?,
                    speed("v_rear", lv)?,
                    range("r_rear", lr)?,
                ],
            ),
        }
    }
}
