use std::collections::BTreeMap;

use crate::panel::Panel;

use super::SuperstarFlags;

/// Foreign-ownership share above which a firm counts as foreign.
pub const FOREIGN_SHARE_CUTOFF: f64 = 0.10;

/// Row-aligned covariate columns; `None` where inputs are missing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Controls {
    pub hhi: Vec<Option<f64>>,
    pub import_intensity: Vec<Option<f64>>,
    pub absorptive: Vec<Option<f64>>,
    pub foreign: Vec<Option<f64>>,
    pub exporter: Vec<Option<f64>>,
    pub superstar: Vec<f64>,
}

pub fn controls(panel: &Panel, flags: &SuperstarFlags) -> Controls {
    let rows = panel.rows();

    // national (sector3, year) concentration
    let mut totals: BTreeMap<(&str, i32), (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        if let Some(o) = r.output {
            let e = totals.entry((r.sector3.as_str(), r.year)).or_default();
            e.0 += o;
            e.1.push(o);
        }
    }
    let hhi_by_cell: BTreeMap<(&str, i32), f64> = totals
        .into_iter()
        .filter(|(_, (t, _))| *t > 0.0)
        .map(|(k, (t, v))| (k, v.iter().map(|o| (o / t).powi(2)).sum()))
        .collect();

    let mut c = Controls::default();
    for r in rows {
        c.hhi.push(hhi_by_cell.get(&(r.sector3.as_str(), r.year)).copied());
        c.import_intensity.push(match (r.imported_materials, r.materials) {
            (Some(im), Some(m)) if m > 0.0 => Some(im / m),
            _ => None,
        });
        c.absorptive.push(match (r.wage_bill, r.total_workers()) {
            (Some(wb), Some(n)) if wb > 0.0 && n > 0 => Some((wb / n as f64).ln()),
            _ => None,
        });
        c.foreign
            .push(r.foreign_share.map(|s| f64::from(u8::from(s > FOREIGN_SHARE_CUTOFF))));
        c.exporter.push(r.export_flag.map(|e| f64::from(u8::from(e))));
        c.superstar.push(f64::from(u8::from(flags.is_superstar(&r.firm_id))));
    }
    c
}
