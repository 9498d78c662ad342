//! Replay of an observation log through a monitor.
//!
//! The log is a CSV file with header `stage,x1,...,xd,a,y`. Rows with the
//! same stage value form one batch; stage values must be nondecreasing (they
//! label batch boundaries, so gaps are fine). Replay is strictly sequential:
//! batches reach the monitor in file order, once each, and reading stops the
//! moment the monitor rejects.
//!
//! Resuming from a checkpoint skips as many leading batches as the monitor
//! has already judged; the log must start with the same data the checkpoint
//! was built from for the combined run to equal an uninterrupted one.
//!
//! Delimiting a batch examines one row of lookahead, so the first row after
//! a terminal batch is still parsed; everything beyond it is left unread.

use std::io::BufRead;

use crate::basis::BasisSpec;
use crate::driver::AnyMonitor;
use crate::error::{Error, Result};
use crate::stream::{Arm, ArmState, Observation};

/// Incremental reader over a `stage,x1..xd,a,y` log.
pub struct LogReader<R: BufRead> {
    lines: std::io::Lines<R>,
    /// 1-based line number of the row most recently read (header = 1).
    line: u64,
    dim: usize,
    /// First row of the next batch, read while delimiting the previous one.
    pending: Option<(u64, Observation)>,
    done: bool,
}

fn data_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Data {
        line,
        msg: msg.into(),
    }
}

impl<R: BufRead> LogReader<R> {
    /// Wraps a reader and validates the header line.
    pub fn new(reader: R, dim: usize) -> Result<LogReader<R>> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| data_err(1, "empty log: missing header"))?;
        let expected = log_header(dim);
        if header.trim_end_matches('\r') != expected {
            return Err(data_err(
                1,
                format!("bad header: expected {expected:?}, got {header:?}"),
            ));
        }
        Ok(LogReader {
            lines,
            line: 1,
            dim,
            pending: None,
            done: false,
        })
    }

    fn next_row(&mut self) -> Result<Option<(u64, Observation)>> {
        let Some(text) = self.lines.next().transpose()? else {
            return Ok(None);
        };
        self.line += 1;
        let line = self.line;
        let text = text.trim_end_matches('\r');
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != self.dim + 3 {
            return Err(data_err(
                line,
                format!("expected {} fields, got {}", self.dim + 3, fields.len()),
            ));
        }
        let stage: u64 = fields[0]
            .parse()
            .map_err(|_| data_err(line, format!("bad stage {:?}", fields[0])))?;
        let mut x = Vec::with_capacity(self.dim);
        for (i, field) in fields[1..=self.dim].iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| data_err(line, format!("bad x{} {:?}", i + 1, field)))?;
            if !v.is_finite() {
                return Err(data_err(line, format!("non-finite x{}", i + 1)));
            }
            x.push(v);
        }
        let arm = match fields[self.dim + 1] {
            "0" => Arm::Control,
            "1" => Arm::Treatment,
            other => return Err(data_err(line, format!("arm must be 0 or 1, got {other:?}"))),
        };
        let y: f64 = fields[self.dim + 2]
            .parse()
            .map_err(|_| data_err(line, format!("bad outcome {:?}", fields[self.dim + 2])))?;
        if !y.is_finite() {
            return Err(data_err(line, "non-finite outcome"));
        }
        Ok(Some((stage, Observation { x, arm, y })))
    }

    /// Reads the next batch, or `None` at end of log.
    pub fn next_batch(&mut self) -> Result<Option<Vec<Observation>>> {
        if self.done {
            return Ok(None);
        }
        let (stage, first) = match self.pending.take() {
            Some(row) => row,
            None => match self.next_row()? {
                Some(row) => row,
                None => {
                    self.done = true;
                    return Ok(None);
                }
            },
        };
        let mut batch = vec![first];
        loop {
            match self.next_row()? {
                None => {
                    self.done = true;
                    return Ok(Some(batch));
                }
                Some((s, obs)) if s == stage => batch.push(obs),
                Some((s, obs)) if s > stage => {
                    self.pending = Some((s, obs));
                    return Ok(Some(batch));
                }
                Some((s, _)) => {
                    return Err(data_err(
                        self.line,
                        format!("stage regressed from {stage} to {s}"),
                    ))
                }
            }
        }
    }
}

/// Header line for a `dim`-covariate log.
pub fn log_header(dim: usize) -> String {
    let mut h = String::from("stage");
    for i in 1..=dim {
        h.push_str(&format!(",x{i}"));
    }
    h.push_str(",a,y");
    h
}

/// Formats observations as log rows under one stage label.
pub fn write_batch(out: &mut String, stage: u64, batch: &[Observation]) {
    use std::fmt::Write;
    for obs in batch {
        write!(out, "{stage}").unwrap();
        for v in &obs.x {
            write!(out, ",{v:.16e}").unwrap();
        }
        writeln!(out, ",{},{:.16e}", obs.arm.index(), obs.y).unwrap();
    }
}

/// What a replay pass did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplayOutcome {
    /// Batches fed to the monitor in this pass.
    pub batches_replayed: usize,
    /// Leading batches skipped because the monitor had already judged them.
    pub batches_skipped: usize,
    /// Whether the monitor has rejected (now or before this pass).
    pub terminated: bool,
}

/// Streams a log through `monitor`, mirroring every consumed observation
/// into `policy_state` so a later checkpoint can serve assignment queries.
///
/// Skipped batches are not re-ingested: a resumed `policy_state` already
/// contains them. Reading stops at rejection; trailing rows are left
/// unread and unvalidated.
pub fn drive<R: BufRead>(
    reader: R,
    basis: &BasisSpec,
    monitor: &mut AnyMonitor,
    policy_state: &mut ArmState,
) -> Result<ReplayOutcome> {
    let mut log = LogReader::new(reader, basis.dim_x())?;
    let skip = monitor.stages_done();
    let mut outcome = ReplayOutcome {
        batches_replayed: 0,
        batches_skipped: 0,
        terminated: monitor.is_terminated(),
    };
    while outcome.batches_skipped < skip {
        match log.next_batch()? {
            Some(_) => outcome.batches_skipped += 1,
            None => return Ok(outcome),
        }
    }
    while !monitor.is_terminated() {
        let Some(batch) = log.next_batch()? else {
            break;
        };
        for obs in &batch {
            policy_state.ingest(basis, obs)?;
        }
        monitor.interim(&batch)?;
        outcome.batches_replayed += 1;
    }
    outcome.terminated = monitor.is_terminated();
    Ok(outcome)
}
