//! Behavior models: sparse tables of conditional action PMFs.
//!
//! On disk a model is a CSV file whose first line is `# ` followed by a JSON
//! metadata object, then a header `state_index,coverage,origin,p0,...,p32`
//! and one line per stored row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::N_ACTIONS;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, StateGrid};

pub const MODEL_FORMAT: &str = "nde-behavior-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Situation {
    FreeDriving,
    CarFollowing,
    CutIn,
    LcOneAdjacent,
    LcTwoAdjacent,
    FreeLaneChange,
}

impl Situation {
    pub const ALL: [Situation; 6] = [
        Situation::FreeDriving,
        Situation::CarFollowing,
        Situation::CutIn,
        Situation::LcOneAdjacent,
        Situation::LcTwoAdjacent,
        Situation::FreeLaneChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Situation::FreeDriving => "free_driving",
            Situation::CarFollowing => "car_following",
            Situation::CutIn => "cut_in",
            Situation::LcOneAdjacent => "lc_one_adjacent",
            Situation::LcTwoAdjacent => "lc_two_adjacent",
            Situation::FreeLaneChange => "free_lane_change",
        }
    }

    pub fn from_name(name: &str) -> Option<Situation> {
        Situation::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn is_lane_change(self) -> bool {
        !matches!(self, Situation::FreeDriving | Situation::CarFollowing)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOrigin {
    Empirical,
    Fallback,
    Refined,
}

impl RowOrigin {
    fn as_str(self) -> &'static str {
        match self {
            RowOrigin::Empirical => "empirical",
            RowOrigin::Fallback => "fallback",
            RowOrigin::Refined => "refined",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "empirical" => Some(RowOrigin::Empirical),
            "fallback" => Some(RowOrigin::Fallback),
            "refined" => Some(RowOrigin::Refined),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub pmf: [f64; N_ACTIONS],
    /// Number of data samples behind the row.
    pub coverage: u64,
    pub origin: RowOrigin,
}

impl ModelRow {
    pub fn sum(&self) -> f64 {
        self.pmf.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorModel {
    pub situation: Situation,
    pub grid: StateGrid,
    pub min_samples: u64,
    pub rows: BTreeMap<u64, ModelRow>,
    pub provenance: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format: String,
    version: u32,
    situation: Situation,
    grid: StateGrid,
    min_samples: u64,
    #[serde(default)]
    provenance: BTreeMap<String, serde_json::Value>,
}

impl BehaviorModel {
    pub fn new(situation: Situation, grid: StateGrid, min_samples: u64) -> Self {
        BehaviorModel {
            situation,
            grid,
            min_samples,
            rows: BTreeMap::new(),
            provenance: BTreeMap::new(),
        }
    }

    /// Whether a row is usable without falling back.
    pub fn is_covered(&self, row: &ModelRow) -> bool {
        row.origin != RowOrigin::Empirical || row.coverage >= self.min_samples
    }

    pub fn row(&self, state: u64) -> Option<&ModelRow> {
        self.rows.get(&state)
    }

    /// The row for `state` if it exists and is covered.
    #[inline]
    pub fn covered_row(&self, state: u64) -> Option<&ModelRow> {
        self.rows.get(&state).filter(|r| self.is_covered(r))
    }

    pub fn covered_count(&self) -> usize {
        self.rows.values().filter(|r| self.is_covered(r)).count()
    }

    /// All grid states lacking a covered row. Only sensible for small grids.
    pub fn uncovered_states(&self) -> Vec<u64> {
        (0..self.grid.n_states())
            .filter(|s| self.covered_row(*s).is_none())
            .collect()
    }

    /// Checks the PMF contract on every covered row.
    pub fn validate(&self) -> Result<()> {
        for (&s, row) in &self.rows {
            if s >= self.grid.n_states() {
                return Err(Error::Format(format!("state {s} outside the grid")));
            }
            if !self.is_covered(row) {
                continue;
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-9 || row.pmf.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Format(format!(
                    "{} row {s} is not a PMF (sum {sum})",
                    self.situation.name()
                )));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let meta = Metadata {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            situation: self.situation,
            grid: self.grid.clone(),
            min_samples: self.min_samples,
            provenance: self.provenance.clone(),
        };
        let io = |e| Error::Format(format!("write failed: {e}"));
        writeln!(w, "# {}", serde_json::to_string(&meta)?).map_err(io)?;
        let mut header = String::from("state_index,coverage,origin");
        for k in 0..N_ACTIONS {
            write!(header, ",p{k}").unwrap();
        }
        writeln!(w, "{header}").map_err(io)?;
        let mut line = String::new();
        for (s, row) in &self.rows {
            line.clear();
            write!(line, "{s},{},{}", row.coverage, row.origin.as_str()).unwrap();
            for p in row.pmf {
                write!(line, ",{p}").unwrap();
            }
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn read<R: std::io::Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let bad = |m: &str| Error::Format(format!("model file: {m}"));
        let first = lines
            .next()
            .ok_or_else(|| bad("empty file"))?
            .map_err(|e| bad(&e.to_string()))?;
        let json = first
            .strip_prefix("# ")
            .ok_or_else(|| bad("missing metadata line"))?;
        let meta: Metadata = serde_json::from_str(json)?;
        if meta.format != MODEL_FORMAT || meta.version != MODEL_VERSION {
            return Err(bad(&format!(
                "unsupported format {} v{}",
                meta.format, meta.version
            )));
        }
        lines.next().ok_or_else(|| bad("missing header"))?.map_err(|e| bad(&e.to_string()))?;
        let mut model = BehaviorModel::new(meta.situation, meta.grid, meta.min_samples);
        model.provenance = meta.provenance;
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(&e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 + N_ACTIONS {
                return Err(bad(&format!("row {} has {} fields", n + 3, fields.len())));
            }
            let parse_err = |f: &str| bad(&format!("row {}: cannot parse `{f}`", n + 3));
            let state: u64 = fields[0].parse().map_err(|_| parse_err(fields[0]))?;
            let coverage: u64 = fields[1].parse().map_err(|_| parse_err(fields[1]))?;
            let origin = RowOrigin::parse(fields[2]).ok_or_else(|| parse_err(fields[2]))?;
            let mut pmf = [0.0; N_ACTIONS];
            for (k, f) in fields[3..].iter().enumerate() {
                pmf[k] = f.parse().map_err(|_| parse_err(f))?;
            }
            model.rows.insert(
                state,
                ModelRow {
                    pmf,
                    coverage,
                    origin,
                },
            );
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        BehaviorModel::read(f)
    }
}

/// The six situation models that make up an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    models: Vec<BehaviorModel>,
}

impl ModelSet {
    pub fn new(models: Vec<BehaviorModel>) -> Result<Self> {
        let mut slots: Vec<Option<BehaviorModel>> = vec![None; 6];
        for m in models {
            let i = m.situation.index();
            if slots[i].is_some() {
                return Err(Error::Invalid(format!("duplicate {} model", m.situation.name())));
            }
            slots[i] = Some(m);
        }
        let models = slots
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                m.ok_or_else(|| {
                    Error::Invalid(format!("missing {} model", Situation::ALL[i].name()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelSet { models })
    }

    /// Six models with no rows; every query falls back.
    pub fn empty(grids: &GridSpec, min_samples: u64) -> Result<Self> {
        let models = Situation::ALL
            .iter()
            .map(|&s| Ok(BehaviorModel::new(s, grids.grid(s)?, min_samples)))
            .collect::<Result<Vec<_>>>()?;
        ModelSet::new(models)
    }

    #[inline]
    pub fn get(&self, s: Situation) -> &BehaviorModel {
        &self.models[s.index()]
    }

    pub fn get_mut(&mut self, s: Situation) -> &mut BehaviorModel {
        &mut self.models[s.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BehaviorModel> {
        self.models.iter()
    }

    pub fn file_name(s: Situation) -> String {
        format!("{}.csv", s.name())
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for m in &self.models {
            m.save(&dir.join(Self::file_name(m.situation)))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let models = Situation::ALL
            .iter()
            .map(|&s| BehaviorModel::load(&dir.join(Self::file_name(s))))
            .collect::<Result<Vec<_>>>()?;
        ModelSet::new(models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let grid = GridSpec::default().grid(Situation::FreeDriving).unwrap();
        let mut m = BehaviorModel::new(Situation::FreeDriving, grid, 50);
        let mut pmf = [0.0; N_ACTIONS];
        pmf[20] = 0.1;
        pmf[21] = 0.7;
        pmf[22] = 0.2;
        m.rows.insert(4, ModelRow { pmf, coverage: 120, origin: RowOrigin::Empirical });
        m.rows.insert(5, ModelRow { pmf, coverage: 3, origin: RowOrigin::Empirical });
        m.provenance.insert("seed".into(), serde_json::json!(7));
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let back = BehaviorModel::read(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert!(back.covered_row(4).is_some());
        assert!(back.covered_row(5).is_none());
    }

    #[test]
    fn rejects_non_pmf_rows() {
        let grid = GridSpec::default().grid(Situation::FreeDriving).unwrap();
        let mut m = BehaviorModel::new(Situation::FreeDriving, grid, 1);
        let mut pmf = [0.0; N_ACTIONS];
        pmf[3] = 0.5;
        m.rows.insert(0, ModelRow { pmf, coverage: 10, origin: RowOrigin::Empirical });
        assert!(m.validate().is_err());
    }
}
