//! Trajectory records and their CSV form.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::sim::view::{Neighbor, SideView, SituationView};

/// Column order of the trajectory CSV.
pub const HEADER: [&str; 23] = [
    "time",
    "vehicle_id",
    "lane_id",
    "x",
    "v",
    "accel",
    "lead_id",
    "range",
    "range_rate",
    "dist_left_marking",
    "dist_right_marking",
    "left_lead_id",
    "left_lead_range",
    "left_lead_range_rate",
    "left_rear_id",
    "left_rear_range",
    "left_rear_range_rate",
    "right_lead_id",
    "right_lead_range",
    "right_lead_range_rate",
    "right_rear_id",
    "right_rear_range",
    "right_rear_range_rate",
];

/// One 10 Hz observation of a vehicle. Ranges are bumper to bumper, range
/// rates are the other vehicle's speed minus this one's. Lane 0 is the
/// rightmost lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub vehicle_id: u64,
    pub lane_id: u32,
    pub x: f64,
    pub v: f64,
    pub accel: f64,
    pub lead: Option<Neighbor>,
    pub dist_left_marking: f64,
    pub dist_right_marking: f64,
    pub left_lead: Option<Neighbor>,
    pub left_rear: Option<Neighbor>,
    pub right_lead: Option<Neighbor>,
    pub right_rear: Option<Neighbor>,
}

impl TrajectoryRecord {
    /// Observation as the simulator would present it. Neighbors at or beyond
    /// `d_obs` are dropped; with `lanes` known, sides without a lane are
    /// absent.
    pub fn view(&self, lanes: Option<u32>, d_obs: f64) -> SituationView {
        let near = |n: Option<Neighbor>| n.filter(|n| n.gap < d_obs);
        let side = |exists: bool, lead, rear| {
            exists.then(|| SideView {
                lead: near(lead),
                rear: near(rear),
            })
        };
        let has_left = lanes.is_none_or(|l| self.lane_id + 1 < l);
        let has_right = self.lane_id > 0;
        SituationView {
            v: self.v,
            lead: near(self.lead),
            rear: None,
            left: side(has_left, self.left_lead, self.left_rear),
            right: side(has_right, self.right_lead, self.right_rear),
        }
    }

    fn is_finite(&self) -> bool {
        let ns = [self.lead, self.left_lead, self.left_rear, self.right_lead, self.right_rear];
        [self.time, self.x, self.v, self.accel, self.dist_left_marking, self.dist_right_marking]
            .iter()
            .all(|f| f.is_finite())
            && ns.iter().flatten().all(|n| n.gap.is_finite() && n.range_rate.is_finite())
    }

    /// A lead must be strictly ahead and all values finite.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.lead.is_none_or(|l| l.gap > 0.0)
    }
}

fn push_neighbor(out: &mut Vec<String>, n: &Option<Neighbor>) {
    match n {
        Some(n) => {
            out.push(n.id.to_string());
            out.push(n.gap.to_string());
            out.push(n.range_rate.to_string());
        }
        None => out.extend([String::new(), String::new(), String::new()]),
    }
}

/// Streams records to CSV. An optional metadata object is written as a
/// leading `# ` comment line.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
    row: Vec<String>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut w: W, metadata: Option<&serde_json::Value>) -> Result<Self> {
        if let Some(m) = metadata {
            writeln!(w, "# {m}").map_err(|e| Error::Format(e.to_string()))?;
        }
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(HEADER)?;
        Ok(RecordWriter {
            inner,
            row: Vec::with_capacity(HEADER.len()),
        })
    }

    pub fn write(&mut self, r: &TrajectoryRecord) -> Result<()> {
        let row = &mut self.row;
        row.clear();
        row.push(r.time.to_string());
        row.push(r.vehicle_id.to_string());
        row.push(r.lane_id.to_string());
        row.push(r.x.to_string());
        row.push(r.v.to_string());
        row.push(r.accel.to_string());
        push_neighbor(row, &r.lead);
        row.push(r.dist_left_marking.to_string());
        row.push(r.dist_right_marking.to_string());
        for n in [&r.left_lead, &r.left_rear, &r.right_lead, &r.right_rear] {
            push_neighbor(row, n);
        }
        self.inner.write_record(&*row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::Format(e.to_string()))?;
        self.inner.into_inner().map_err(|e| Error::Format(e.to_string()))
    }
}

fn field<'a>(rec: &'a csv::StringRecord, k: usize, line: u64) -> Result<&'a str> {
    rec.get(k)
        .ok_or_else(|| Error::Format(format!("line {line}: missing column {}", HEADER[k])))
}

fn num<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: u64) -> Result<T> {
    let s = field(rec, k, line)?.trim();
    s.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {} value {s:?}", HEADER[k])))
}

fn neighbor(rec: &csv::StringRecord, k: usize, line: u64) -> Result<Option<Neighbor>> {
    if field(rec, k, line)?.trim().is_empty() {
        return Ok(None);
    }
    Ok(Some(Neighbor {
        id: num(rec, k, line)?,
        gap: num(rec, k + 1, line)?,
        range_rate: num(rec, k + 2, line)?,
    }))
}

fn parse(rec: &csv::StringRecord, line: u64) -> Result<TrajectoryRecord> {
    if rec.len() != HEADER.len() {
        return Err(Error::Format(format!("line {line}: expected {} columns, found {}", HEADER.len(), rec.len())));
    }
    Ok(TrajectoryRecord {
        time: num(rec, 0, line)?,
        vehicle_id: num(rec, 1, line)?,
        lane_id: num(rec, 2, line)?,
        x: num(rec, 3, line)?,
        v: num(rec, 4, line)?,
        accel: num(rec, 5, line)?,
        lead: neighbor(rec, 6, line)?,
        dist_left_marking: num(rec, 9, line)?,
        dist_right_marking: num(rec, 10, line)?,
        left_lead: neighbor(rec, 11, line)?,
        left_rear: neighbor(rec, 14, line)?,
        right_lead: neighbor(rec, 17, line)?,
        right_rear: neighbor(rec, 20, line)?,
    })
}

/// Iterator over the records of a trajectory CSV; `#` lines are skipped.
pub struct RecordReader<R: Read> {
    inner: csv::Reader<R>,
    buf: csv::StringRecord,
}

impl<R: Read> RecordReader<R> {
    pub fn new(r: R) -> Result<Self> {
        let mut inner = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let header = inner.headers()?.clone();
        if header.iter().map(str::trim).ne(HEADER) {
            return Err(Error::Format(format!(
                "trajectory header mismatch: expected {}",
                HEADER.join(",")
            )));
        }
        Ok(RecordReader {
            inner,
            buf: csv::StringRecord::new(),
        })
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<TrajectoryRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.inner.read_record(&mut self.buf) {
            Ok(false) => None,
            Ok(true) => {
                let line = self.buf.position().map_or(0, |p| p.line());
                Some(parse(&self.buf, line))
            }
            Err(e) => Some(Err(e.into())),
        }
    }
}

pub fn write_records<W: Write>(w: W, records: &[TrajectoryRecord], metadata: Option<&serde_json::Value>) -> Result<()> {
    let mut out = RecordWriter::new(w, metadata)?;
    for r in records {
        out.write(r)?;
    }
    out.finish()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<TrajectoryRecord>> {
    RecordReader::new(r)?.collect()
}

/// The `# {json}` metadata line of a CSV file, if present.
pub fn read_metadata<R: std::io::BufRead>(mut r: R) -> Result<Option<serde_json::Value>> {
    let mut first = String::new();
    r.read_line(&mut first).map_err(|e| Error::Format(e.to_string()))?;
    match first.strip_prefix("# ") {
        Some(json) => Ok(Some(serde_json::from_str(json.trim_end())?)),
        None => Ok(None),
    }
}
