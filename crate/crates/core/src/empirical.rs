//! Empirical behavior models from labeled samples.

use std::collections::{BTreeMap, BTreeSet};

use crate::action::{LC_LEFT, LC_RIGHT, N_ACCEL, N_ACTIONS};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, StateGrid};
use crate::model::{BehaviorModel, ModelRow, ModelSet, RowOrigin, Situation};
use crate::ndd::LabeledSample;

/// Braking capability assumed by the inevitable-crash test, m/s².
pub const MAX_BRAKE: f64 = 4.0;

/// Raw action counts per state for each situation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountTables {
    pub tables: [BTreeMap<u64, [u64; N_ACTIONS]>; 6],
}

impl CountTables {
    pub fn get(&self, s: Situation) -> &BTreeMap<u64, [u64; N_ACTIONS]> {
        &self.tables[s.index()]
    }

    pub fn get_mut(&mut self, s: Situation) -> &mut BTreeMap<u64, [u64; N_ACTIONS]> {
        &mut self.tables[s.index()]
    }

    pub fn coverage(&self, s: Situation, state: u64) -> u64 {
        self.get(s).get(&state).map_or(0, |r| r.iter().sum())
    }

    pub fn add(&mut self, sample: &LabeledSample) {
        self.get_mut(sample.situation)
            .entry(sample.state)
            .or_insert([0; N_ACTIONS])[sample.action as usize] += 1;
    }

    /// Adds another table in place; counting is associative.
    pub fn merge(&mut self, other: &CountTables) {
        for (mine, theirs) in self.tables.iter_mut().zip(&other.tables) {
            for (s, row) in theirs {
                let r = mine.entry(*s).or_insert([0; N_ACTIONS]);
                for (a, b) in r.iter_mut().zip(row) {
                    *a += b;
                }
            }
        }
    }

    pub fn total(&self, s: Situation) -> u64 {
        self.get(s).values().map(|r| r.iter().sum::<u64>()).sum()
    }
}

pub fn count_actions(samples: &[LabeledSample]) -> CountTables {
    let mut t = CountTables::default();
    for s in samples {
        t.add(s);
    }
    t
}

/// Whether braking at [`MAX_BRAKE`] with the lead at constant speed still
/// ends with the range at or below zero before the range rate recovers.
pub fn is_inevitable_crash(r: f64, rr: f64) -> bool {
    if r <= 0.0 {
        return true;
    }
    if rr >= 0.0 {
        return false;
    }
    // Range is minimised when rr(t) = rr + MAX_BRAKE t reaches zero.
    r - rr * rr / (2.0 * MAX_BRAKE) <= 0.0
}

/// Zeroes inevitable-crash rows of a car-following table and returns the
/// flagged states that had data.
pub fn exclude_crash_states(
    counts: &mut BTreeMap<u64, [u64; N_ACTIONS]>,
    grid: &StateGrid,
) -> BTreeSet<u64> {
    let flagged: BTreeSet<u64> = counts
        .keys()
        .copied()
        .filter(|&s| crate::markov::crash_state(grid, s))
        .collect();
    for s in &flagged {
        counts.remove(s);
    }
    flagged
}

/// Moving average over the acceleration block of a row.
///
/// Every bin spreads its mass evenly over the bins of its window, truncated
/// at the ends of the acceleration range, so the block's total mass is
/// unchanged. Lane-change entries are copied.
pub fn smooth_row(row: &[f64; N_ACTIONS], window: usize) -> Result<[f64; N_ACTIONS]> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Invalid(format!("smoothing window must be odd and positive, got {window}")));
    }
    let h = window / 2;
    let mut out = [0.0; N_ACTIONS];
    out[LC_LEFT] = row[LC_LEFT];
    out[LC_RIGHT] = row[LC_RIGHT];
    for k in 1..=N_ACCEL {
        let m = row[k];
        if m == 0.0 {
            continue;
        }
        let lo = k.saturating_sub(h).max(1);
        let hi = (k + h).min(N_ACCEL);
        let share = m / (hi - lo + 1) as f64;
        for o in &mut out[lo..=hi] {
            *o += share;
        }
    }
    Ok(out)
}

/// Smooths and normalizes every row of a count table into a model.
pub fn smooth_and_normalize(
    counts: &BTreeMap<u64, [u64; N_ACTIONS]>,
    situation: Situation,
    grid: StateGrid,
    window: usize,
    min_samples: u64,
) -> Result<BehaviorModel> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Invalid(format!("smoothing window must be odd and positive, got {window}")));
    }
    let mut model = BehaviorModel::new(situation, grid, min_samples);
    for (&s, row) in counts {
        let coverage: u64 = row.iter().sum();
        if coverage == 0 {
            continue;
        }
        let mut raw = [0.0; N_ACTIONS];
        for (r, &c) in raw.iter_mut().zip(row) {
            *r = c as f64;
        }
        let mut pmf = smooth_row(&raw, window)?;
        let total: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|p| *p /= total);
        model.rows.insert(
            s,
            ModelRow {
                pmf,
                coverage,
                origin: RowOrigin::Empirical,
            },
        );
    }
    Ok(model)
}

/// Summary of the crash-state exclusion for reporting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub crash_states_flagged: usize,
    pub crash_samples_dropped: u64,
}

/// Builds all six models from counted samples.
pub fn build_models(
    mut counts: CountTables,
    grids: &GridSpec,
    window: usize,
    min_samples: u64,
) -> Result<(ModelSet, BuildReport)> {
    let cf_grid = grids.grid(Situation::CarFollowing)?;
    let before = counts.total(Situation::CarFollowing);
    let flagged = exclude_crash_states(counts.get_mut(Situation::CarFollowing), &cf_grid);
    let report = BuildReport {
        crash_states_flagged: flagged.len(),
        crash_samples_dropped: before - counts.total(Situation::CarFollowing),
    };
    let models = Situation::ALL
        .iter()
        .map(|&s| {
            let mut m = smooth_and_normalize(counts.get(s), s, grids.grid(s)?, window, min_samples)?;
            m.provenance.insert("smoothing_window".into(), window.into());
            m.provenance.insert("samples".into(), counts.total(s).into());
            if s == Situation::CarFollowing {
                m.provenance.insert("crash_states_flagged".into(), flagged.len().into());
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ModelSet::new(models)?, report))
}

/// Replaces every missing or uncovered row of a small grid with `fallback(state)`.
pub fn fill_uncovered(
    model: &mut BehaviorModel,
    mut fallback: impl FnMut(u64) -> [f64; N_ACTIONS],
) -> usize {
    let mut filled = 0;
    for s in 0..model.grid.n_states() {
        if model.covered_row(s).is_some() {
            continue;
        }
        if model.situation == Situation::CarFollowing && crate::markov::crash_state(&model.grid, s) {
            continue;
        }
        let coverage = model.row(s).map_or(0, |r| r.coverage);
        model.rows.insert(
            s,
            ModelRow {
                pmf: fallback(s),
                coverage,
                origin: RowOrigin::Fallback,
            },
        );
        filled += 1;
    }
    filled
}
