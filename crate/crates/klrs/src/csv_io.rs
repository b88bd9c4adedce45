//! Datasets as CSV: a header row, numeric feature columns, an optional
//! label column and an optional integer group column.

use std::fs::File;
use std::path::Path;

use klrs_core::linalg::Matrix;
use klrs_core::{Dataset, Labels};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelKind {
    /// Integer class labels.
    #[default]
    Class,
    /// Real-valued regression targets.
    Target,
}

/// Which columns to read. `features: None` takes every column that is not
/// the label or group column.
#[derive(Debug, Clone, Default)]
pub struct DatasetSchema {
    pub features: Option<Vec<String>>,
    pub label: Option<String>,
    pub label_kind: LabelKind,
    pub group: Option<String>,
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> CliResult<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| CliError::Schema {
        path: path.into(),
        message: format!("unknown column `{name}`"),
    })
}

fn parse_err(path: &Path, line: u64, message: String) -> CliError {
    CliError::Parse {
        path: path.into(),
        line,
        message,
    }
}

pub fn load_csv_dataset(path: &Path, schema: &DatasetSchema) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let label_col = schema.label.as_deref().map(|l| column(&headers, l, path)).transpose()?;
    let group_col = schema.group.as_deref().map(|g| column(&headers, g, path)).transpose()?;
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names.iter().map(|n| column(&headers, n, path)).collect::<CliResult<_>>()?,
        None => (0..headers.len())
            .filter(|&i| Some(i) != label_col && Some(i) != group_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(CliError::Schema {
            path: path.into(),
            message: "no feature columns".into(),
        });
    }

    let mut data = Vec::new();
    let mut classes = Vec::new();
    let mut targets = Vec::new();
    let mut groups = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        for &c in &feature_cols {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{}` is not a number", field(c))))?;
            data.push(v);
        }
        if let Some(c) = label_col {
            let raw = field(c);
            match schema.label_kind {
                LabelKind::Class => classes.push(
                    raw.parse::<i64>()
                        .map_err(|_| parse_err(path, line, format!("label `{raw}` is not an integer")))?,
                ),
                LabelKind::Target => targets.push(
                    raw.parse::<f64>()
                        .map_err(|_| parse_err(path, line, format!("target `{raw}` is not a number")))?,
                ),
            }
        }
        if let Some(c) = group_col {
            let raw = field(c);
            groups.push(
                raw.parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("group `{raw}` is not a nonnegative integer")))?,
            );
        }
    }
    let rows = data.len() / feature_cols.len();
    let features = Matrix::from_vec(rows, feature_cols.len(), data)?;
    let labels = label_col.map(|_| match schema.label_kind {
        LabelKind::Class => Labels::Class(classes),
        LabelKind::Target => Labels::Target(targets),
    });
    Ok(Dataset::new(features, labels, group_col.map(|_| groups))?)
}

/// Writes `x0, x1, ...` then `label` and `group` when present. Floats use
/// the shortest representation that reads back to the same value.
pub fn write_csv_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| CliError::Schema {
        path: path.into(),
        message: e.to_string(),
    };
    let mut header: Vec<String> = (0..data.width()).map(|j| format!("x{j}")).collect();
    if data.labels().is_some() {
        header.push("label".into());
    }
    if data.group_ids().is_some() {
        header.push("group".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.features().row(i).iter().map(|v| v.to_string()).collect();
        match data.labels() {
            Some(Labels::Class(c)) => row.push(c[i].to_string()),
            Some(Labels::Target(t)) => row.push(t[i].to_string()),
            None => {}
        }
        if let Some(g) = data.group_ids() {
            row.push(g[i].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
