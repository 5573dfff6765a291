//! Superstar classification, horizontal and vertical spillover series, and
//! the firm-level control covariates.

mod controls;
mod superstar;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CellKey, IOTable, Panel};

pub use controls::{controls, Controls, FOREIGN_SHARE_CUTOFF};
pub use superstar::{classify_superstars, FirmFlag, SuperstarFlags, SuperstarRule, TopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpillKind {
    H,
    B,
    F,
}

/// One spillover measure keyed by market cell. Cells whose value could not
/// be formed are listed in `missing` rather than stored as a sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpilloverSeries {
    pub kind: SpillKind,
    pub values: BTreeMap<CellKey, f64>,
    pub missing: Vec<CellKey>,
    pub diagnostics: Vec<String>,
}

impl SpilloverSeries {
    pub fn get(&self, cell: &CellKey) -> Option<f64> {
        self.values.get(cell).copied()
    }

    /// Multiplies every value by `c`; used by linearity checks and rescaled
    /// reporting.
    pub fn scaled(&self, c: f64) -> SpilloverSeries {
        SpilloverSeries {
            values: self.values.iter().map(|(k, v)| (k.clone(), v * c)).collect(),
            ..self.clone()
        }
    }
}

/// Percent of cell output produced by flagged firms.
pub fn hspill(panel: &Panel, flags: &SuperstarFlags) -> SpilloverSeries {
    let mut values = BTreeMap::new();
    let mut missing = Vec::new();
    let mut diagnostics = Vec::new();
    for (cell, idx) in panel.cells() {
        let mut total = 0.0;
        let mut star = 0.0;
        let mut absent = 0usize;
        let mut unflagged_producer = false;
        for &i in idx {
            let r = &panel.rows()[i];
            match r.output {
                Some(o) => {
                    total += o;
                    if flags.is_superstar(&r.firm_id) {
                        star += o;
                    } else if o > 0.0 {
                        unflagged_producer = true;
                    }
                }
                None => absent += 1,
            }
        }
        if absent > 0 {
            diagnostics.push(format!(
                "cell {}/{}/{}: {absent} rows without output ignored",
                cell.sector3, cell.province, cell.year
            ));
        }
        if total > 0.0 {
            // ratio first so that full dominance gives exactly 100
            let mut v = 100.0 * (star / total);
            if unflagged_producer && v >= 100.0 {
                // a negligible competitor still keeps the cell below 100
                v = f64::from_bits(100.0f64.to_bits() - 1);
            }
            values.insert(cell.clone(), v);
        } else {
            diagnostics.push(format!(
                "cell {}/{}/{}: zero total output",
                cell.sector3, cell.province, cell.year
            ));
            missing.push(cell.clone());
        }
    }
    SpilloverSeries {
        kind: SpillKind::H,
        values,
        missing,
        diagnostics,
    }
}

/// What to do with a cell whose sector is not in the IO table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownSectorPolicy {
    /// Fail with [`Error::UnknownSector`].
    #[default]
    Error,
    /// Leave the cell out of the vertical series and record a diagnostic.
    Drop,
}

/// Backward exposure: `B_l = sum_{k != l} b[k][l] H_k`, downstream buyers of `l`.
pub fn bspill(hs: &SpilloverSeries, io: &IOTable, policy: UnknownSectorPolicy) -> Result<SpilloverSeries> {
    vertical(hs, io, policy, SpillKind::B)
}

/// Forward exposure: `F_m = sum_{k != m} b[m][k] H_k`, upstream sellers to `m`.
pub fn fspill(hs: &SpilloverSeries, io: &IOTable, policy: UnknownSectorPolicy) -> Result<SpilloverSeries> {
    vertical(hs, io, policy, SpillKind::F)
}

fn vertical(
    hs: &SpilloverSeries,
    io: &IOTable,
    policy: UnknownSectorPolicy,
    kind: SpillKind,
) -> Result<SpilloverSeries> {
    let n = io.sectors().len();
    let mut diagnostics = Vec::new();

    // H by (province, year) laid out along the IO table's sector order;
    // None marks a cell that exists but has no value.
    let mut grid: HashMap<(&str, i32), Vec<Option<Option<f64>>>> = HashMap::new();
    let mut cells: Vec<&CellKey> = hs.values.keys().chain(hs.missing.iter()).collect();
    cells.sort();
    let mut unknown = std::collections::BTreeSet::new();
    for cell in &cells {
        match io.index(&cell.sector3) {
            Some(k) => {
                let slot = grid
                    .entry((cell.province.as_str(), cell.year))
                    .or_insert_with(|| vec![None; n]);
                slot[k] = Some(hs.get(cell));
            }
            None => {
                if policy == UnknownSectorPolicy::Error {
                    return Err(Error::UnknownSector(cell.sector3.clone()));
                }
                unknown.insert(cell.sector3.clone());
            }
        }
    }
    for s in &unknown {
        diagnostics.push(format!("sector {s} not in io table, dropped from vertical series"));
    }

    let mut values = BTreeMap::new();
    let mut uncovered = 0usize;
    for cell in cells {
        let Some(l) = io.index(&cell.sector3) else { continue };
        let row = &grid[&(cell.province.as_str(), cell.year)];
        let mut acc = 0.0;
        for (k, h) in row.iter().enumerate() {
            if k == l {
                continue;
            }
            let b = match kind {
                SpillKind::B => io.at(k, l),
                SpillKind::F => io.at(l, k),
                SpillKind::H => unreachable!("vertical series only"),
            };
            match h {
                Some(Some(v)) => acc += b * v,
                Some(None) if b != 0.0 => uncovered += 1,
                _ => {}
            }
        }
        values.insert(cell.clone(), acc);
    }
    if uncovered > 0 {
        diagnostics.push(format!("{uncovered} linked cells had missing HSpill and contributed 0"));
    }
    Ok(SpilloverSeries {
        kind,
        values,
        missing: Vec::new(),
        diagnostics,
    })
}

/// Writes `sector3,province,year,hspill,bspill,fspill` over the cells of `h`.
pub fn write_spillovers<W: Write>(w: W, h: &SpilloverSeries, b: &SpilloverSeries, f: &SpilloverSeries) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sector3", "province", "year", "hspill", "bspill", "fspill"])?;
    let mut cells: Vec<&CellKey> = h.values.keys().chain(h.missing.iter()).collect();
    cells.sort();
    let fmt = |v: Option<f64>| v.map(|x| (x + 0.0).to_string()).unwrap_or_default();
    for c in cells {
        out.write_record([
            c.sector3.clone(),
            c.province.clone(),
            c.year.to_string(),
            fmt(h.get(c)),
            fmt(b.get(c)),
            fmt(f.get(c)),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<spillovers>", e))?;
    Ok(())
}

/// Per-cell series as read back from the spillover CSV.
pub fn read_spillovers<R: std::io::Read>(r: R) -> Result<[SpilloverSeries; 3]> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = [SpillKind::H, SpillKind::B, SpillKind::F].map(|kind| SpilloverSeries {
        kind,
        values: BTreeMap::new(),
        missing: Vec::new(),
        diagnostics: Vec::new(),
    });
    for rec in rdr.deserialize() {
        let (s, p, y, h, b, f): (String, String, i32, Option<f64>, Option<f64>, Option<f64>) = rec?;
        let key = CellKey::new(&s, &p, y);
        for (series, v) in out.iter_mut().zip([h, b, f]) {
            match v {
                Some(v) => {
                    series.values.insert(key.clone(), v);
                }
                None => series.missing.push(key.clone()),
            }
        }
    }
    Ok(out)
}
