//! Per-round diagnostics and their CSV / manifest serialization.
//!
//! Column order of the trace CSV is fixed:
//!
//! `algo, round, outer, inner, epoch, participants, norm_H_sq, norm_h_sq,
//! objective, bits, ce_count, memory_gap`
//!
//! Optional quantities are written as empty fields. A run that stops on an
//! error ends with a marker row whose `algo` field is [`TRUNCATION_MARKER`]
//! and whose remaining fields are empty.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_COLUMNS: [&str; 12] = [
    "algo",
    "round",
    "outer",
    "inner",
    "epoch",
    "participants",
    "norm_H_sq",
    "norm_h_sq",
    "objective",
    "bits",
    "ce_count",
    "memory_gap",
];

pub const TRUNCATION_MARKER: &str = "#truncated";

/// Algorithm tags used in traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Fedem,
    FedemPp,
    VrFedem,
    Naive,
    ExactEm,
    Missem,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Fedem => "fedem",
            Algo::FedemPp => "fedem-pp",
            Algo::VrFedem => "vr-fedem",
            Algo::Naive => "naive",
            Algo::ExactEm => "exact-em",
            Algo::Missem => "missem",
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of diagnostics.
///
/// `round` is the global iteration index of the update the row describes;
/// `norm_h_sq`, `objective` and `memory_gap` are evaluated at the iterate the
/// update started from, while `bits` and `ce_count` are cumulative after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub algo: Algo,
    pub round: u64,
    pub outer: Option<u64>,
    pub inner: Option<u64>,
    /// Cumulative conditional-expectation evaluations divided by `N`.
    pub epoch: f64,
    pub participants: usize,
    #[serde(rename = "norm_H_sq")]
    pub norm_big_h_sq: Option<f64>,
    pub norm_h_sq: Option<f64>,
    pub objective: Option<f64>,
    pub bits: u64,
    pub ce_count: u64,
    pub memory_gap: Option<f64>,
}

impl RoundTrace {
    fn record(&self) -> Vec<String> {
        fn opt<V: ToString>(v: Option<V>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        vec![
            self.algo.as_str().to_string(),
            self.round.to_string(),
            opt(self.outer),
            opt(self.inner),
            self.epoch.to_string(),
            self.participants.to_string(),
            opt(self.norm_big_h_sq),
            opt(self.norm_h_sq),
            opt(self.objective),
            self.bits.to_string(),
            self.ce_count.to_string(),
            opt(self.memory_gap),
        ]
    }
}

/// Streaming trace writer.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(TRACE_COLUMNS)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &RoundTrace) -> Result<()> {
        self.inner.write_record(row.record())?;
        Ok(())
    }

    /// Writes the truncation marker row and flushes.
    pub fn truncate(&mut self) -> Result<()> {
        let mut rec = vec![String::new(); TRACE_COLUMNS.len()];
        rec[0] = TRUNCATION_MARKER.to_string();
        self.inner.write_record(&rec)?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// Serializes a whole trace to CSV bytes.
pub fn trace_to_csv(rows: &[RoundTrace]) -> Result<Vec<u8>> {
    let mut w = TraceWriter::new(Vec::new())?;
    for r in rows {
        w.write(r)?;
    }
    w.into_inner()
}

pub fn write_trace_csv(path: &Path, rows: &[RoundTrace]) -> Result<()> {
    std::fs::write(path, trace_to_csv(rows)?)?;
    Ok(())
}

/// Parsed trace file.
#[derive(Clone, Debug)]
pub struct LoadedTrace {
    pub rows: Vec<RoundTrace>,
    /// Whether the file ended with a truncation marker.
    pub truncated: bool,
}

pub fn read_trace_csv<R: std::io::Read>(input: R) -> Result<LoadedTrace> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(Error::Data(format!("unexpected trace header: {headers:?}")));
    }
    let mut rows = Vec::new();
    let mut truncated = false;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(0) == Some(TRUNCATION_MARKER) {
            truncated = true;
            continue;
        }
        rows.push(rec.deserialize(Some(&headers))?);
    }
    Ok(LoadedTrace { rows, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: u64) -> RoundTrace {
        RoundTrace {
            algo: Algo::FedemPp,
            round: k,
            outer: None,
            inner: None,
            epoch: 0.2 * k as f64,
            participants: 3,
            norm_big_h_sq: Some(1.5),
            norm_h_sq: if k.is_multiple_of(2) { Some(0.1) } else { None },
            objective: Some(-1.25),
            bits: 100 * k,
            ce_count: 20 * k,
            memory_gap: None,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows: Vec<_> = (0..4).map(row).collect();
        let bytes = trace_to_csv(&rows).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(
            "algo,round,outer,inner,epoch,participants,norm_H_sq,norm_h_sq,objective,bits,ce_count,memory_gap\n"
        ));
        let back = read_trace_csv(&bytes[..]).unwrap();
        assert_eq!(back.rows, rows);
        assert!(!back.truncated);
    }

    #[test]
    fn truncation_marker_is_detected() {
        let mut w = TraceWriter::new(Vec::new()).unwrap();
        w.write(&row(0)).unwrap();
        w.truncate().unwrap();
        let bytes = w.into_inner().unwrap();
        let back = read_trace_csv(&bytes[..]).unwrap();
        assert_eq!(back.rows.len(), 1);
        assert!(back.truncated);
    }
}
