//! Building regression frames from a panel and cell-level series.

use std::collections::BTreeMap;

use super::Frame;
use crate::error::Result;
use crate::panel::{CellKey, Panel};
use crate::spillovers::SuperstarFlags;

/// Frame with the panel's grouping keys (`firm_id`, `sector3`, `sector2`,
/// `province`, `island`, `year`) and the 0/1 columns `superstar` and
/// `non_superstar`.
pub fn panel_frame(panel: &Panel, flags: &SuperstarFlags) -> Result<Frame> {
    let rows = panel.rows();
    let mut f = Frame::new(rows.len());
    let key =
        |g: fn(&crate::panel::FirmYear) -> String| -> Vec<Option<String>> { rows.iter().map(|r| Some(g(r))).collect() };
    f.add_group("firm_id", key(|r| r.firm_id.clone()))?;
    f.add_group("sector3", key(|r| r.sector3.clone()))?;
    f.add_group("sector2", key(|r| r.sector2.clone()))?;
    f.add_group("province", key(|r| r.province.clone()))?;
    f.add_group("island", key(|r| r.island.clone()))?;
    f.add_group("year", key(|r| r.year.to_string()))?;
    let star: Vec<f64> = rows
        .iter()
        .map(|r| if flags.is_superstar(&r.firm_id) { 1.0 } else { 0.0 })
        .collect();
    let ns: Vec<f64> = star.iter().map(|s| 1.0 - s).collect();
    f.add_dense("superstar", &star)?;
    f.add_dense("non_superstar", &ns)?;
    Ok(f)
}

/// Broadcasts a cell-level series to panel rows.
pub fn cell_values(panel: &Panel, values: &BTreeMap<CellKey, f64>) -> Vec<Option<f64>> {
    let mut out = vec![None; panel.len()];
    for (cell, idx) in panel.cells() {
        if let Some(&v) = values.get(cell) {
            for &i in idx {
                out[i] = Some(v);
            }
        }
    }
    out
}
