use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use super::{Field, Panel};
use crate::error::{Error, Result};

/// Wholesale price index by (2-digit sector, year), 100 in the base year.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflatorTable {
    entries: BTreeMap<(String, i32), f64>,
    base_year: i32,
}

impl DeflatorTable {
    pub fn new(entries: BTreeMap<(String, i32), f64>, base_year: i32) -> Result<Self> {
        for ((s, y), v) in &entries {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidTable(format!(
                    "deflator ({s}, {y}) = {v} is not positive"
                )));
            }
        }
        let sectors: BTreeSet<&String> = entries.keys().map(|(s, _)| s).collect();
        for s in sectors {
            match entries.get(&(s.clone(), base_year)) {
                Some(v) if (v - 100.0).abs() <= 1e-9 => {}
                Some(v) => {
                    return Err(Error::InvalidTable(format!(
                        "deflator for sector2 {s} is {v} in base year {base_year}, expected 100"
                    )))
                }
                None => {
                    return Err(Error::InvalidTable(format!(
                        "deflator for sector2 {s} has no base-year {base_year} entry"
                    )))
                }
            }
        }
        Ok(DeflatorTable { entries, base_year })
    }

    pub fn base_year(&self) -> i32 {
        self.base_year
    }

    pub fn index(&self, sector2: &str, year: i32) -> Option<f64> {
        self.entries.get(&(sector2.to_string(), year)).copied()
    }

    pub fn entries(&self) -> &BTreeMap<(String, i32), f64> {
        &self.entries
    }

    /// Reads `sector2,year,wpi`.
    pub fn from_reader<R: Read>(r: R, base_year: i32) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut entries = BTreeMap::new();
        for rec in rdr.deserialize() {
            let (s, y, v): (String, i32, f64) = rec?;
            entries.insert((s, y), v);
        }
        DeflatorTable::new(entries, base_year)
    }

    pub fn load(path: impl AsRef<Path>, base_year: i32) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f, base_year)
    }
}

/// Divides every monetary field by `index / 100` of the row's (sector2, year)
/// and marks the panel deflated. Not idempotent: callers check
/// [`Panel::is_deflated`] before calling again.
pub fn apply_deflators(panel: &Panel, deflators: &DeflatorTable) -> Result<Panel> {
    let mut rows = panel.rows().to_vec();
    for row in &mut rows {
        let idx = deflators
            .index(&row.sector2, row.year)
            .ok_or_else(|| Error::MissingDeflator {
                sector2: row.sector2.clone(),
                year: row.year,
            })?;
        let factor = idx / 100.0;
        for f in Field::MONETARY {
            let v = f.get(row).map(|v| v / factor);
            f.set(row, v);
        }
    }
    let mut out = panel.derive(rows)?;
    out.set_deflated(true);
    Ok(out)
}
