//! CSV files for functional datasets and predictions.
//!
//! A dataset file has the header `subject_id,outcome,cov1_t0,...` with one
//! column per covariate `j = 1..p` and grid index `k = 0..m-1`, covariate-major.
//! The grid is `m` evenly spaced points on `[0, T]`.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so writing a dataset that was read from a file written by this
//! module reproduces the file byte for byte.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use fusion_core::{Family, FunctionalDataset, Predictions};

use crate::error::{Error, Result};

/// What a dataset file is expected to contain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schema {
    pub p: usize,
    pub m: usize,
    pub domain_end: f64,
    pub family: Family,
}

impl Schema {
    /// Takes `p` and `m` from the header of `path`; `T` defaults to `m - 1`
    /// (hourly grids `0..23`).
    pub fn infer(path: &Path, family: Family, domain_end: Option<f64>) -> Result<Schema> {
        let (p, m) = inspect_header(path)?;
        Ok(Schema {
            p,
            m,
            domain_end: domain_end.unwrap_or((m - 1) as f64),
            family,
        })
    }
}

pub fn covariate_column(j: usize, k: usize) -> String {
    format!("cov{}_t{}", j + 1, k)
}

pub fn header(p: usize, m: usize) -> Vec<String> {
    let mut out = vec!["subject_id".to_string(), "outcome".to_string()];
    for j in 0..p {
        for k in 0..m {
            out.push(covariate_column(j, k));
        }
    }
    out
}

/// Shortest representation that round-trips; integers print without a point.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

fn parse_covariate(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("cov")?;
    let (j, k) = rest.split_once("_t")?;
    let j: usize = j.parse().ok()?;
    let k: usize = k.parse().ok()?;
    if j == 0 || format!("cov{j}_t{k}") != name {
        return None;
    }
    Some((j - 1, k))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_error(source: &str, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Schema(format!("{source}: {e}")),
        _ => Error::Schema(format!("{source}: malformed CSV: {e}")),
    }
}

/// Number of covariates and grid points declared by a header.
pub fn header_shape(fields: &[&str], source: &str) -> Result<(usize, usize)> {
    for (pos, name) in ["subject_id", "outcome"].iter().enumerate() {
        match fields.get(pos) {
            Some(f) if f == name => {}
            Some(f) => {
                return Err(Error::Schema(format!(
                    "{source}: header column {} is `{f}`, expected `{name}`",
                    pos + 1
                )))
            }
            None => return Err(Error::Schema(format!("{source}: missing column `{name}`"))),
        }
    }
    let mut p = 0;
    let mut m = 0;
    for name in &fields[2..] {
        let (j, k) = parse_covariate(name).ok_or_else(|| {
            Error::Schema(format!(
                "{source}: column `{name}` is not of the form cov<j>_t<k>"
            ))
        })?;
        p = p.max(j + 1);
        m = m.max(k + 1);
    }
    if p == 0 {
        return Err(Error::Schema(format!("{source}: no covariate columns")));
    }
    check_header(fields, p, m, source)?;
    Ok((p, m))
}

fn check_header(fields: &[&str], p: usize, m: usize, source: &str) -> Result<()> {
    let expected = header(p, m);
    for (pos, want) in expected.iter().enumerate() {
        match fields.get(pos) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(Error::Schema(format!(
                    "{source}: missing column `{want}` (found `{got}` at position {})",
                    pos + 1
                )))
            }
            None => return Err(Error::Schema(format!("{source}: missing column `{want}`"))),
        }
    }
    if fields.len() > expected.len() {
        return Err(Error::Schema(format!(
            "{source}: unexpected column `{}` for p={p}, m={m}",
            fields[expected.len()]
        )));
    }
    Ok(())
}

/// `(p, m)` of a dataset file.
pub fn inspect_header(path: &Path) -> Result<(usize, usize)> {
    let source = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let fields = reader.headers().map_err(|e| csv_error(&source, e))?.clone();
    let names: Vec<&str> = fields.iter().collect();
    header_shape(&names, &source)
}

fn cell_error(source: &str, row: usize, column: &str, msg: impl std::fmt::Display) -> Error {
    Error::Schema(format!(
        "{source}: row {row} (line {}), column `{column}`: {msg}",
        row + 1
    ))
}

fn parse_cell(source: &str, row: usize, column: &str, text: &str) -> Result<f64> {
    if text.trim().is_empty() {
        return Err(cell_error(source, row, column, "missing value"));
    }
    let v: f64 = text
        .parse()
        .map_err(|_| cell_error(source, row, column, format!("`{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(cell_error(
            source,
            row,
            column,
            format!("`{text}` is not finite"),
        ));
    }
    Ok(v)
}

/// Reads a dataset; `source` names the input in error messages.
pub fn read_csv<R: Read>(input: R, schema: &Schema, source: &str) -> Result<FunctionalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let fields = reader.headers().map_err(|e| csv_error(source, e))?.clone();
    let names: Vec<&str> = fields.iter().collect();
    check_header(&names, schema.p, schema.m, source)?;
    let width = names.len();
    let mut ids: Vec<String> = Vec::new();
    let mut first_row: HashMap<String, usize> = HashMap::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(source, e))?;
        if record.len() != width {
            let column = names.get(record.len()).copied().unwrap_or("?");
            return Err(if record.len() < width {
                cell_error(
                    source,
                    row,
                    column,
                    format!("row has {} of {width} fields", record.len()),
                )
            } else {
                Error::Schema(format!(
                    "{source}: row {row} (line {}) has {} fields, header has {width}",
                    row + 1,
                    record.len()
                ))
            });
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(cell_error(source, row, "subject_id", "empty subject id"));
        }
        if let Some(first) = first_row.insert(id.to_string(), row) {
            return Err(cell_error(
                source,
                row,
                "subject_id",
                format!("duplicate subject id `{id}` (first in row {first})"),
            ));
        }
        let outcome = parse_cell(source, row, "outcome", &record[1])?;
        if schema.family == Family::Bernoulli && outcome != 0.0 && outcome != 1.0 {
            return Err(cell_error(
                source,
                row,
                "outcome",
                format!("`{}` is not 0 or 1 under the bernoulli family", &record[1]),
            ));
        }
        ids.push(id.to_string());
        y.push(outcome);
        for (c, text) in record.iter().enumerate().skip(2) {
            x.push(parse_cell(source, row, names[c], text)?);
        }
    }
    let grid = FunctionalDataset::uniform_grid(schema.m, schema.domain_end);
    FunctionalDataset::new(schema.p, schema.domain_end, grid, x, y, schema.family, ids)
        .map_err(|e| Error::Schema(format!("{source}: {e}")))
}

pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<FunctionalDataset> {
    read_csv(open(path)?, schema, &path.display().to_string())
}

pub fn write_csv<W: Write>(output: W, dataset: &FunctionalDataset) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    let (p, m) = (dataset.p(), dataset.m());
    let io = |e: csv::Error| Error::Numeric(format!("writing CSV: {e}"));
    writer.write_record(header(p, m)).map_err(io)?;
    let mut row: Vec<String> = Vec::with_capacity(2 + p * m);
    for i in 0..dataset.n() {
        row.clear();
        row.push(dataset.subject_ids()[i].clone());
        row.push(format_value(dataset.y()[i]));
        for j in 0..p {
            row.extend(dataset.curve(i, j).iter().map(|&v| format_value(v)));
        }
        writer.write_record(&row).map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| Error::Numeric(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn write_csv_file(path: &Path, dataset: &FunctionalDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(BufWriter::new(file), dataset)
}

/// Observed outcomes next to predictions, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub subject_ids: Vec<String>,
    pub outcome: Vec<f64>,
    pub eta: Vec<f64>,
    pub mean: Vec<f64>,
    /// Estimated subgroup of each subject (first covariate), when known.
    pub subgroup: Option<Vec<usize>>,
}

impl PredictionTable {
    pub fn new(
        preds: &Predictions,
        outcome: &[f64],
        subgroup: Option<Vec<usize>>,
    ) -> PredictionTable {
        PredictionTable {
            subject_ids: preds.subject_ids.clone(),
            outcome: outcome.to_vec(),
            eta: preds.eta.clone(),
            mean: preds.mean.clone(),
            subgroup,
        }
    }
}

pub fn write_predictions<W: Write>(output: W, table: &PredictionTable) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    let io = |e: csv::Error| Error::Numeric(format!("writing CSV: {e}"));
    let mut head = vec!["subject_id", "outcome", "eta", "mean"];
    if table.subgroup.is_some() {
        head.push("subgroup");
    }
    writer.write_record(&head).map_err(io)?;
    for i in 0..table.subject_ids.len() {
        let mut row = vec![
            table.subject_ids[i].clone(),
            format_value(table.outcome[i]),
            format_value(table.eta[i]),
            format_value(table.mean[i]),
        ];
        if let Some(g) = &table.subgroup {
            row.push(g[i].to_string());
        }
        writer.write_record(&row).map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| Error::Numeric(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<PredictionTable> {
    let source = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let fields = reader.headers().map_err(|e| csv_error(&source, e))?.clone();
    let names: Vec<&str> = fields.iter().collect();
    let col = |name: &str| {
        names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Schema(format!("{source}: missing column `{name}`")))
    };
    let (c_id, c_y, c_eta, c_mean) = (
        col("subject_id")?,
        col("outcome")?,
        col("eta")?,
        col("mean")?,
    );
    let c_group = names.iter().position(|n| *n == "subgroup");
    let mut table = PredictionTable {
        subject_ids: Vec::new(),
        outcome: Vec::new(),
        eta: Vec::new(),
        mean: Vec::new(),
        subgroup: c_group.map(|_| Vec::new()),
    };
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(&source, e))?;
        table.subject_ids.push(record[c_id].to_string());
        table
            .outcome
            .push(parse_cell(&source, row, "outcome", &record[c_y])?);
        table
            .eta
            .push(parse_cell(&source, row, "eta", &record[c_eta])?);
        table
            .mean
            .push(parse_cell(&source, row, "mean", &record[c_mean])?);
        if let (Some(c), Some(g)) = (c_group, table.subgroup.as_mut()) {
            let v = record[c].parse().map_err(|_| {
                cell_error(
                    &source,
                    row,
                    "subgroup",
                    format!("`{}` is not a label", &record[c]),
                )
            })?;
            g.push(v);
        }
    }
    if table.subject_ids.is_empty() {
        return Err(Error::Schema(format!("{source}: no prediction rows")));
    }
    Ok(table)
}
