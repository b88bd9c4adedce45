//! Run reports. JSON is canonical; CSV is a flat projection of the trace.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use klrs_core::guarantees::GuaranteeReport;
use klrs_core::TraceEntry;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// One probe of a lambda search. `objective` is `None` when it is not a
/// finite number (an infeasible outer probe, or an overflowing statistic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub lambda: f64,
    pub objective: Option<f64>,
    pub feasible: bool,
}

impl From<&TraceEntry> for TraceRow {
    fn from(t: &TraceEntry) -> Self {
        Self {
            lambda: t.lambda,
            objective: t.objective.is_finite().then_some(t.objective),
            feasible: t.feasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSection {
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub feasible: bool,
    /// Command-specific values (per-group losses, sweep rows, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    /// The fully resolved configuration the run used.
    pub config: Value,
    pub trace: Vec<TraceRow>,
    pub result: ResultSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guarantees: Option<Vec<GuaranteeReport>>,
}

impl Report {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.into(),
            config,
            trace: Vec::new(),
            result: ResultSection::default(),
            metrics: None,
            guarantees: None,
        }
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Header `lambda,objective,feasible` plus one row per trace entry.
    pub fn to_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let as_usage = |e: csv::Error| CliError::Usage(e.to_string());
        w.write_record(["lambda", "objective", "feasible"]).map_err(as_usage)?;
        for row in &self.trace {
            let objective = row.objective.map(|o| o.to_string()).unwrap_or_default();
            w.write_record([row.lambda.to_string(), objective, row.feasible.to_string()])
                .map_err(as_usage)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn render(&self, format: Format) -> CliResult<String> {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }
}

/// Writes the rendered report to `path`, or to stdout when `path` is `None`.
pub fn emit_report(report: &Report, format: Format, path: Option<&Path>) -> CliResult<()> {
    let text = report.render(format)?;
    match path {
        Some(p) => {
            let mut f = File::create(p).map_err(|e| CliError::io(p, e))?;
            f.write_all(text.as_bytes()).map_err(|e| CliError::io(p, e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

/// Converts any serializable value to JSON, mapping failures to [`CliError`].
pub fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v)?)
}
