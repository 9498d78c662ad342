//! CSV emission for aggregates, per-stage traces, and replay decisions.
//!
//! Every real number is printed with 17 significant digits (`{:.16e}`), so
//! the files are lossless: reparsing a value recovers the original bits.
//! Non-finite values appear as the words `inf`, `-inf` and `nan`. Optional
//! fields are empty cells.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::SweepCell;
use crate::error::Result;
use crate::qte::{MonitorDecision, Verdict};
use crate::simlab::Aggregate;

/// Exact-width decimal for CSV cells.
pub fn dec17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Continue => "continue",
        Verdict::Reject => "reject",
    }
}

/// Header of the aggregate table (one row per sweep cell).
pub const AGGREGATE_HEADER: &str =
    "method,design,scenario,n,stages,delta,rej_prob,se_rej,mean_stop,se_stop";

/// One aggregate row, without trailing newline.
pub fn aggregate_row(cell: &SweepCell, agg: &Aggregate) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        cell.method.label(),
        cell.design,
        cell.scenario.label(),
        cell.batch,
        cell.stages,
        dec17(cell.delta),
        dec17(agg.rej_prob),
        dec17(agg.se_rej),
        dec17(agg.mean_stop),
        dec17(agg.se_stop),
    )
}

fn decision_cells(out: &mut String, d: &MonitorDecision, dim: usize) {
    write!(
        out,
        "{},{},{},{},",
        d.stage,
        d.samples_used,
        dec17(d.statistic),
        dec17(d.boundary)
    )
    .unwrap();
    if let Some(s) = d.spend_target {
        out.push_str(&dec17(s));
    }
    out.push(',');
    if let Some(s) = d.survivors {
        write!(out, "{s}").unwrap();
    }
    write!(out, ",{},{}", d.degenerate, verdict_label(d.verdict)).unwrap();
    match &d.argmax_x {
        Some(x) => {
            for v in x {
                out.push(',');
                out.push_str(&dec17(*v));
            }
        }
        None => out.push_str(&",".repeat(dim)),
    }
}

fn decision_columns(dim: usize) -> String {
    let mut h = String::from(
        "stage,samples_used,statistic,boundary,spend_target,survivors,degenerate,verdict",
    );
    for i in 1..=dim {
        write!(h, ",x{i}").unwrap();
    }
    h
}

/// Decision CSV for one replayed monitor: header plus one row per stage.
pub fn decisions_csv(history: &[MonitorDecision], dim: usize) -> String {
    let mut out = decision_columns(dim);
    out.push('\n');
    for d in history {
        decision_cells(&mut out, d, dim);
        out.push('\n');
    }
    out
}

/// Header of the per-stage trace table written by simulation runs.
pub fn trace_header(dim: usize) -> String {
    format!(
        "method,design,scenario,n,stages,delta,rep,{}",
        decision_columns(dim)
    )
}

/// One trace row, without trailing newline.
pub fn trace_row(cell: &SweepCell, rep: u64, d: &MonitorDecision, dim: usize) -> String {
    let mut out = format!(
        "{},{},{},{},{},{},{rep},",
        cell.method.label(),
        cell.design,
        cell.scenario.label(),
        cell.batch,
        cell.stages,
        dec17(cell.delta),
    );
    decision_cells(&mut out, d, dim);
    out
}

/// Writes a CSV document, creating parent directories as needed.
pub fn write_csv(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}
