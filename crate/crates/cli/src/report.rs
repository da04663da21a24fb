//! Report rows and CSV/JSON emission.
//!
//! Floating values are printed with 12 significant digits in scientific
//! notation so repeated runs diff cleanly byte for byte.

use std::io::Write;

use serde::Serialize;

use crate::CliError;

/// Format a float with 12 significant digits.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// One simulation run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub mode: String,
    pub q: Option<usize>,
    pub family: Option<String>,
    pub compression_ratio: f64,
    pub mean_l2_error_vs_baseline: f64,
    pub dispatch_bytes: u64,
    pub return_bytes: u64,
    pub modeled_step_time_s: f64,
    pub predicted_speedup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub rows: Vec<RunRow>,
}

impl RunReport {
    pub fn write(&self, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
        match format {
            Format::Csv => {
                writeln!(
                    out,
                    "mode,q,family,compression_ratio,mean_l2_error_vs_baseline,\
                     dispatch_bytes,return_bytes,modeled_step_time_s,predicted_speedup"
                )?;
                for r in &self.rows {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        r.mode,
                        r.q.map(|q| q.to_string()).unwrap_or_default(),
                        r.family.clone().unwrap_or_default(),
                        fmt12(r.compression_ratio),
                        fmt12(r.mean_l2_error_vs_baseline),
                        r.dispatch_bytes,
                        r.return_bytes,
                        fmt12(r.modeled_step_time_s),
                        fmt12(r.predicted_speedup),
                    )?;
                }
            }
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, self)
                    .map_err(|e| CliError::internal(format!("json emission failed: {e}")))?;
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// One cost-model evaluation (the base point or one sweep entry).
#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub section: String,
    pub axis: Option<String>,
    pub value: Option<f64>,
    pub ratio: f64,
    pub share: f64,
    pub t_a2a_exact_s: f64,
    pub t_a2a_approx_s: f64,
    pub t_compute_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn write(&self, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
        match format {
            Format::Csv => {
                writeln!(
                    out,
                    "section,axis,value,ratio,share,t_a2a_exact_s,t_a2a_approx_s,t_compute_s"
                )?;
                for r in &self.rows {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        r.section,
                        r.axis.clone().unwrap_or_default(),
                        r.value.map(fmt12).unwrap_or_default(),
                        fmt12(r.ratio),
                        fmt12(r.share),
                        fmt12(r.t_a2a_exact_s),
                        fmt12(r.t_a2a_approx_s),
                        fmt12(r.t_compute_s),
                    )?;
                }
            }
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, self)
                    .map_err(|e| CliError::internal(format!("json emission failed: {e}")))?;
                writeln!(out)?;
            }
        }
        Ok(())
    }
}
