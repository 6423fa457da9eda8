//! Trace persistence: a line-per-step CSV with a fixed header.
//!
//! Values are written as shortest round-trip decimals, so reading a file back
//! reproduces every numeric field bit-exactly. Absent optional fields are
//! empty. The streaming sink flushes after every row, leaving a readable
//! partial trace behind if a run dies.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::diagnostics::{RunTrace, StepRecord, TraceMeta};
use crate::error::{Error, Result};
use crate::updaters::StepSink;
use crate::vecmath::ParamVector;

pub const TRACE_HEADER: &str =
    "step,f,r,grad_f_norm,grad_r_norm,u_norm,cos_fr,align_f,align_r,zeta_hat,eta";

/// Shortest decimal that parses back to the same f64. Plain notation for
/// moderate magnitudes, exponent notation outside [1e-4, 1e16).
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let a = x.abs();
    if (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

fn record_line(rec: &StepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        rec.step,
        format_f64(rec.f_val),
        format_f64(rec.r_val),
        format_f64(rec.grad_f_norm),
        format_f64(rec.grad_r_norm),
        format_f64(rec.u_norm),
        format_opt(rec.cos_fr),
        format_opt(rec.align_f),
        format_opt(rec.align_r),
        format_opt(rec.zeta_hat),
        format_f64(rec.eta),
    )
}

/// Writes the trace records to `path`, header first.
pub fn write_trace(trace: &RunTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRACE_HEADER}")?;
    for rec in &trace.records {
        writeln!(w, "{}", record_line(rec))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, line: usize, name: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("bad {name}: {field:?}"),
    })
}

fn parse_opt(field: &str, line: usize, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, line, name).map(Some)
    }
}

/// Reads a trace written by [`write_trace`]. Only the records are stored in
/// the file, so the returned metadata is the default (status `Completed`,
/// no rule/schedule/seed).
pub fn read_trace(path: &Path) -> Result<RunTrace> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty trace file".to_string(),
            })
        }
    };
    if header != TRACE_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header: {header:?}"),
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 11 fields, got {}", fields.len()),
            });
        }
        records.push(StepRecord {
            step: fields[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad step: {:?}", fields[0]),
            })?,
            f_val: parse_f64(fields[1], lineno, "f")?,
            r_val: parse_f64(fields[2], lineno, "r")?,
            grad_f_norm: parse_f64(fields[3], lineno, "grad_f_norm")?,
            grad_r_norm: parse_f64(fields[4], lineno, "grad_r_norm")?,
            u_norm: parse_f64(fields[5], lineno, "u_norm")?,
            cos_fr: parse_opt(fields[6], lineno, "cos_fr")?,
            align_f: parse_opt(fields[7], lineno, "align_f")?,
            align_r: parse_opt(fields[8], lineno, "align_r")?,
            zeta_hat: parse_opt(fields[9], lineno, "zeta_hat")?,
            eta: parse_f64(fields[10], lineno, "eta")?,
        });
    }
    Ok(RunTrace {
        records,
        meta: TraceMeta::default(),
    })
}

/// Streaming sink: one CSV row per step, flushed immediately.
pub struct CsvTraceSink {
    writer: BufWriter<File>,
}

impl CsvTraceSink {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = BufWriter::new(File::create(path)?);
        writeln!(writer, "{TRACE_HEADER}")?;
        writer.flush()?;
        Ok(Self { writer })
    }
}

impl StepSink for CsvTraceSink {
    fn on_step(&mut self, record: &StepRecord, _theta_after: &ParamVector) -> Result<()> {
        writeln!(self.writer, "{}", record_line(record))?;
        self.writer.flush()?;
        Ok(())
    }
}
