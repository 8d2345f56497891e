//! CSV artifacts. Floats are written in Rust's shortest round-trip form, so a
//! write followed by a read reproduces every value bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::GradCheckReport;
use crate::control::pinn::PinnLossBreakdown;
use crate::optim::History;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
}

/// Header plus rows of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_table<W: Write>(w: W, t: &Table) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(&t.header)?;
    for r in &t.rows {
        wtr.write_record(r.iter().map(|&x| format_f64(x)))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(r: R) -> Result<Table, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| IoError::Parse { row: k + 1, msg: format!("`{f}`: {e}") }))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn save_table(path: &Path, t: &Table) -> Result<(), IoError> {
    write_table(File::create(path)?, t)
}

pub fn load_table(path: &Path) -> Result<Table, IoError> {
    read_table(File::open(path)?)
}

/// `iteration,cost,rate`; the final row (after the last update) has rate NaN.
pub fn history_table(h: &History) -> Table {
    let mut t = Table::new(&["iteration", "cost", "rate"]);
    for (k, &c) in h.costs.iter().enumerate() {
        t.rows.push(vec![k as f64, c, h.rates.get(k).copied().unwrap_or(f64::NAN)]);
    }
    t
}

/// `s,c`: control value against the boundary coordinate.
pub fn control_table(coord: &[f64], values: &[f64]) -> Table {
    let mut t = Table::new(&["s", "c"]);
    t.rows = coord.iter().zip(values).map(|(&s, &c)| vec![s, c]).collect();
    t
}

/// `x,y,<names…>` for nodal fields.
pub fn field_table(points: &[[f64; 2]], names: &[&str], fields: &[&[f64]]) -> Table {
    let mut header = vec!["x", "y"];
    header.extend_from_slice(names);
    let mut t = Table::new(&header);
    for (i, p) in points.iter().enumerate() {
        let mut row = vec![p[0], p[1]];
        row.extend(fields.iter().map(|f| f[i]));
        t.rows.push(row);
    }
    t
}

pub fn grad_check_table(r: &GradCheckReport) -> Table {
    let mut t = Table::new(&["index", "analytic", "numeric", "rel_error"]);
    t.rows = r.rows.iter().map(|row| vec![row.index as f64, row.analytic, row.numeric, row.rel_error]).collect();
    t
}

/// `epoch,pde,boundary,cost,omega,total`.
pub fn pinn_history_table(h: &[PinnLossBreakdown]) -> Table {
    let mut t = Table::new(&["epoch", "pde", "boundary", "cost", "omega", "total"]);
    t.rows = h.iter().enumerate().map(|(e, b)| vec![e as f64, b.pde, b.boundary, b.cost, b.omega, b.total]).collect();
    t
}
