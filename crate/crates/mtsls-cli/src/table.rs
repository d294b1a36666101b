//! CSV ingestion and export.
//!
//! Columns: `y` (outcome), `t` (treatment, a small integer), every column
//! whose name starts with `z_` as an instrument in header order, an optional
//! `weight` column, the cell column named by `--fe` and flag columns named
//! by `--flag` (values `0`/`1`/`true`/`false`).

use std::path::Path;

use mtsls::Dataset;

use crate::error::{lib, CliError, CliResult};

pub struct Columns<'a> {
    pub fe: Option<&'a str>,
    pub flags: &'a [String],
}

fn parse_flag(v: &str) -> Option<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

pub fn read_dataset(path: &Path, cols: &Columns) -> CliResult<Dataset> {
    let origin = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::invalid(format!("{origin}: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::invalid(format!("{origin}: {e}")))?
        .clone();
    let find = |name: &str| -> CliResult<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::invalid(format!("{origin}: column {name:?} not found")))
    };
    let y_col = find("y")?;
    let t_col = find("t")?;
    let z_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().starts_with("z_"))
        .map(|(i, _)| i)
        .collect();
    if z_cols.is_empty() {
        return Err(CliError::invalid(format!("{origin}: no instrument columns (prefix \"z_\")")));
    }
    let w_col = headers.iter().position(|h| h.trim() == "weight");
    let fe_col = cols.fe.map(find).transpose()?;
    let flag_cols = cols.flags.iter().map(|f| find(f)).collect::<CliResult<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut z = Vec::new();
    let mut w = Vec::new();
    let mut cells = Vec::new();
    let mut flags = vec![Vec::new(); flag_cols.len()];
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| CliError::invalid(format!("{origin}: {e}")))?;
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let number = |c: usize| -> CliResult<f64> {
            field(c).parse::<f64>().map_err(|_| {
                CliError::invalid(format!("{origin} line {line}: column {:?} is not a number: {:?}", &headers[c], field(c)))
            })
        };
        y.push(number(y_col)?);
        t.push(field(t_col).parse::<usize>().map_err(|_| {
            CliError::invalid(format!("{origin} line {line}: treatment {:?} is not a non-negative integer", field(t_col)))
        })?);
        for &c in &z_cols {
            z.push(number(c)?);
        }
        if let Some(c) = w_col {
            w.push(number(c)?);
        }
        if let Some(c) = fe_col {
            cells.push(field(c).to_string());
        }
        for (out, &c) in flags.iter_mut().zip(&flag_cols) {
            out.push(parse_flag(field(c)).ok_or_else(|| {
                CliError::invalid(format!("{origin} line {line}: flag {:?} must be 0/1/true/false, got {:?}", &headers[c], field(c)))
            })?);
        }
    }
    if y.is_empty() {
        return Err(CliError::invalid(format!("{origin}: no data rows")));
    }
    let mut data = Dataset::new(z_cols.len(), y, t, z).map_err(lib(&origin))?;
    if w_col.is_some() {
        data = data.with_weights(w).map_err(lib(&origin))?;
    }
    if fe_col.is_some() {
        data = data.with_cells(cells).map_err(lib(&origin))?;
    }
    for (name, values) in cols.flags.iter().zip(flags) {
        data = data.with_flag(name, values).map_err(lib(&origin))?;
    }
    Ok(data)
}

/// CSV text for a dataset: `y,t,z_1..z_m`, then the cell column (if any)
/// and the flags as 0/1.
pub fn dataset_csv(data: &Dataset, cell_column: &str) -> CliResult<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let flags: Vec<&str> = data.flag_names();
    let mut header = vec!["y".to_string(), "t".to_string()];
    header.extend((1..=data.m()).map(|j| format!("z_{j}")));
    if data.cells().is_some() {
        header.push(cell_column.to_string());
    }
    if data.weights().is_some() {
        header.push("weight".to_string());
    }
    header.extend(flags.iter().map(|f| f.to_string()));
    let fail = |e: csv::Error| CliError::invalid(format!("writing CSV: {e}"));
    writer.write_record(&header).map_err(fail)?;
    for i in 0..data.len() {
        let mut row = vec![data.y()[i].to_string(), data.t()[i].to_string()];
        row.extend(data.z_row(i).iter().map(|v| v.to_string()));
        if let Some(cells) = data.cells() {
            row.push(data.cell_labels()[cells[i]].clone());
        }
        if let Some(w) = data.weights() {
            row.push(w[i].to_string());
        }
        for f in &flags {
            row.push(if data.flag(f).expect("listed flag")[i] { "1" } else { "0" }.to_string());
        }
        writer.write_record(&row).map_err(fail)?;
    }
    writer
        .into_inner()
        .map_err(|e| CliError::invalid(format!("writing CSV: {e}")))
}
