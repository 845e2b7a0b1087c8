//! Fixed-edge count histograms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("histogram edges must be ascending, at least two".into()));
        }
        let n = edges.len() - 1;
        Ok(Histogram {
            edges,
            counts: vec![0; n],
        })
    }

    /// Equal-width bins covering `[min, max)`.
    pub fn uniform(min: f64, max: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !(max > min) {
            return Err(Error::Invalid(format!("bad histogram range [{min}, {max}) by {width}")));
        }
        let n = (((max - min) / width) - 1e-9).ceil() as usize;
        let edges = (0..=n)
            .map(|i| (min + i as f64 * width).min(max))
            .collect();
        Histogram::new(edges)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin containing `value`, with tolerance for values computed as edges.
    #[inline]
    pub fn bin_of(&self, value: f64) -> Option<usize> {
        let lo = self.edges[0];
        let hi = *self.edges.last().unwrap();
        if !(value >= lo && value < hi) {
            return None;
        }
        let width = (hi - lo) / self.bins() as f64;
        let guess = (((value - lo) / width) + 1e-9).floor() as usize;
        let mut k = guess.min(self.bins() - 1);
        // Nonuniform edges: walk to the right bin.
        while k > 0 && value < self.edges[k] {
            k -= 1;
        }
        while k + 1 < self.bins() && value >= self.edges[k + 1] {
            k += 1;
        }
        Some(k)
    }

    /// Counts `value`; returns false when it falls outside the edges.
    #[inline]
    pub fn add(&mut self, value: f64) -> bool {
        match self.bin_of(value) {
            Some(k) => {
                self.counts[k] += 1;
                true
            }
            None => false,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn same_edges(&self, other: &Histogram) -> bool {
        self.edges == other.edges
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if !self.same_edges(other) {
            return Err(Error::Dimension("histograms have different edges".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Counts divided by their total; all zeros when empty.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total();
        if t == 0 {
            return vec![0.0; self.bins()];
        }
        self.counts.iter().map(|&c| c as f64 / t as f64).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Writes `# <json meta>` followed by `lower,upper,count,probability` rows.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &serde_json::Value) -> Result<()> {
        let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
        writeln!(w, "# {}", serde_json::to_string(meta)?).map_err(io)?;
        writeln!(w, "lower,upper,count,probability").map_err(io)?;
        for (k, p) in self.normalized().iter().enumerate() {
            writeln!(w, "{},{},{},{}", self.edges[k], self.edges[k + 1], self.counts[k], p)
                .map_err(io)?;
        }
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv), returning
    /// the histogram and the per-bin probabilities column.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<(Histogram, Vec<f64>)> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(r);
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        let mut probs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let get = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad histogram row {rec:?}")))
            };
            if edges.is_empty() {
                edges.push(get(0)?);
            }
            edges.push(get(1)?);
            counts.push(get(2)? as u64);
            probs.push(get(3)?);
        }
        let mut h = Histogram::new(edges)?;
        h.counts = counts;
        Ok((h, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_bins() {
        let mut h = Histogram::uniform(20.0, 40.0, 0.2).unwrap();
        assert_eq!(h.bins(), 100);
        assert!(h.add(30.0));
        assert_eq!(h.counts[50], 1);
        assert!(h.add(20.0));
        assert!(!h.add(40.0));
        let p = h.normalized();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let mut h = Histogram::uniform(0.0, 5.0, 1.0).unwrap();
        h.add(0.5);
        h.add(3.2);
        h.add(3.9);
        let mut buf = Vec::new();
        h.write_csv(&mut buf, &serde_json::json!({"seed": 1})).unwrap();
        let (back, probs) = Histogram::read_csv(&buf[..]).unwrap();
        assert_eq!(back, h);
        assert!((probs[3] - 2.0 / 3.0).abs() < 1e-15);
    }
}
