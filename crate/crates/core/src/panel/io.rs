use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{FirmYear, Panel};
use crate::error::{Error, Result};

/// Canonical panel CSV header, in emission order.
pub const PANEL_COLUMNS: [&str; 17] = [
    "firm_id",
    "year",
    "sector3",
    "sector2",
    "province",
    "island",
    "output",
    "value_added",
    "capital",
    "materials",
    "energy",
    "workers_production",
    "workers_nonproduction",
    "wage_bill",
    "foreign_share",
    "export_flag",
    "imported_materials",
];

/// Maps canonical column names onto the header names used by a file.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    renames: BTreeMap<String, String>,
}

impl Schema {
    pub fn with(mut self, canonical: &str, header: &str) -> Self {
        self.renames.insert(canonical.to_string(), header.to_string());
        self
    }

    fn header_for<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.renames.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub firm_id: String,
    pub year: i32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RejectionReport {
    pub rejected: Vec<Rejection>,
}

impl RejectionReport {
    pub fn is_empty(&self) -> bool {
        self.rejected.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["line", "firm_id", "year", "reason"])?;
        for r in &self.rejected {
            out.write_record([
                r.line.to_string(),
                r.firm_id.clone(),
                r.year.to_string(),
                r.reason.clone(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<rejections>", e))?;
        Ok(())
    }
}

/// Reads a panel CSV. Rows that parse but violate a row invariant go to the
/// rejection report; unparseable numbers and duplicate keys are errors.
pub fn load_panel(path: impl AsRef<Path>, schema: &Schema) -> Result<(Panel, RejectionReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, schema)
}

pub fn read_panel<R: Read>(reader: R, schema: &Schema) -> Result<(Panel, RejectionReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; PANEL_COLUMNS.len()];
    let mut missing = Vec::new();
    for (slot, canonical) in idx.iter_mut().zip(PANEL_COLUMNS) {
        let name = schema.header_for(canonical);
        match headers.iter().position(|h| h == name) {
            Some(i) => *slot = i,
            None => missing.push(name.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing columns: {}", missing.join(", "))));
    }

    let mut rows = Vec::new();
    let mut report = RejectionReport::default();
    for (n, record) in rdr.records().enumerate() {
        let record = record?;
        let line = n as u64 + 2;
        let field = |k: usize| record.get(idx[k]).unwrap_or("");
        let row = FirmYear {
            firm_id: field(0).to_string(),
            year: parse_required(field(1), line, "year")?,
            sector3: field(2).to_string(),
            sector2: field(3).to_string(),
            province: field(4).to_string(),
            island: field(5).to_string(),
            output: parse_opt(field(6), line, "output")?,
            value_added: parse_opt(field(7), line, "value_added")?,
            capital: parse_opt(field(8), line, "capital")?,
            materials: parse_opt(field(9), line, "materials")?,
            energy: parse_opt(field(10), line, "energy")?,
            workers_production: parse_opt(field(11), line, "workers_production")?,
            workers_nonproduction: parse_opt(field(12), line, "workers_nonproduction")?,
            wage_bill: parse_opt(field(13), line, "wage_bill")?,
            foreign_share: parse_opt(field(14), line, "foreign_share")?,
            export_flag: parse_flag(field(15), line)?,
            imported_materials: parse_opt(field(16), line, "imported_materials")?,
        };
        if row.firm_id.is_empty() {
            return Err(Error::Parse {
                line,
                column: "firm_id".into(),
                value: String::new(),
            });
        }
        match row.validate() {
            Ok(()) => rows.push(row),
            Err(reason) => report.rejected.push(Rejection {
                line,
                firm_id: row.firm_id,
                year: row.year,
                reason,
            }),
        }
    }
    Ok((Panel::new(rows)?, report))
}

fn parse_required<T: std::str::FromStr>(s: &str, line: u64, column: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        column: column.to_string(),
        value: s.to_string(),
    })
}

fn parse_opt<T: std::str::FromStr>(s: &str, line: u64, column: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_required(s, line, column).map(Some)
    }
}

fn parse_flag(s: &str, line: u64) -> Result<Option<bool>> {
    match s {
        "" => Ok(None),
        "1" | "true" | "TRUE" | "True" => Ok(Some(true)),
        "0" | "false" | "FALSE" | "False" => Ok(Some(false)),
        _ => Err(Error::Parse {
            line,
            column: "export_flag".into(),
            value: s.to_string(),
        }),
    }
}

pub(crate) fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_panel<W: Write>(panel: &Panel, w: W) -> Result<()> {
    write_panel_with(panel, &[], w)
}

/// Writes the canonical columns followed by extra per-row columns.
pub fn write_panel_with<W: Write>(panel: &Panel, extra: &[(&str, &[Option<f64>])], w: W) -> Result<()> {
    for (name, col) in extra {
        if col.len() != panel.len() {
            return Err(Error::Schema(format!(
                "extra column {name} has {} values for {} rows",
                col.len(),
                panel.len()
            )));
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = PANEL_COLUMNS.to_vec();
    header.extend(extra.iter().map(|(n, _)| *n));
    out.write_record(&header)?;
    for (i, r) in panel.rows().iter().enumerate() {
        let mut rec = vec![
            r.firm_id.clone(),
            r.year.to_string(),
            r.sector3.clone(),
            r.sector2.clone(),
            r.province.clone(),
            r.island.clone(),
            fmt_opt(r.output),
            fmt_opt(r.value_added),
            fmt_opt(r.capital),
            fmt_opt(r.materials),
            fmt_opt(r.energy),
            fmt_opt(r.workers_production),
            fmt_opt(r.workers_nonproduction),
            fmt_opt(r.wage_bill),
            fmt_opt(r.foreign_share),
            fmt_opt(r.export_flag.map(|b| if b { 1 } else { 0 })),
            fmt_opt(r.imported_materials),
        ];
        rec.extend(extra.iter().map(|(_, col)| fmt_opt(col[i])));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<panel>", e))?;
    Ok(())
}
