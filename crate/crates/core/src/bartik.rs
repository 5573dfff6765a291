//! Shift-share instruments for the spillover measures and the road-density
//! robustness instrument.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CellKey, Panel};
use crate::spillovers::SuperstarFlags;

/// MFN simple-average tariff (percent) by (sector3, year).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TariffTable {
    entries: BTreeMap<(String, i32), f64>,
}

impl TariffTable {
    pub fn new(entries: BTreeMap<(String, i32), f64>) -> Result<Self> {
        if let Some(((s, y), v)) = entries.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidTable(format!(
                "tariff ({s}, {y}) = {v} must be finite and >= 0"
            )));
        }
        Ok(TariffTable { entries })
    }

    pub fn get(&self, sector3: &str, year: i32) -> Option<f64> {
        self.entries.get(&(sector3.to_string(), year)).copied()
    }

    pub fn entries(&self) -> &BTreeMap<(String, i32), f64> {
        &self.entries
    }

    /// Reads `sector3,year,mfn`.
    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut entries = BTreeMap::new();
        for rec in rdr.deserialize() {
            let (s, y, v): (String, i32, f64) = rec?;
            entries.insert((s, y), v);
        }
        TariffTable::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sector3", "year", "mfn"])?;
        for ((s, y), v) in &self.entries {
            out.write_record([s.clone(), y.to_string(), v.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<tariffs>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrumentKind {
    LabBartik,
    TarrBartik,
    RoadDensity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSeries {
    pub kind: InstrumentKind,
    pub values: BTreeMap<CellKey, f64>,
    pub diagnostics: Vec<String>,
}

impl InstrumentSeries {
    pub fn get(&self, cell: &CellKey) -> Option<f64> {
        self.values.get(cell).copied()
    }
}

/// Which workers count toward the base-year employment share.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    /// Production workers only.
    #[default]
    Unskilled,
    All,
}

/// Base-year superstar shares by (sector3, province), as fractions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShareMap {
    pub values: BTreeMap<(String, String), f64>,
    pub diagnostics: Vec<String>,
}

impl ShareMap {
    pub fn get(&self, sector3: &str, province: &str) -> Option<f64> {
        self.values.get(&(sector3.to_string(), province.to_string())).copied()
    }

    pub fn scaled(&self, c: f64) -> ShareMap {
        ShareMap {
            values: self.values.iter().map(|(k, v)| (k.clone(), v * c)).collect(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

fn require_year(panel: &Panel, year: i32) -> Result<()> {
    if panel.years().contains(&year) {
        Ok(())
    } else {
        Err(Error::InsufficientData(format!("base year {year} not in panel")))
    }
}

/// Generic flagged-over-total share in each base-year cell.
fn base_share(
    panel: &Panel,
    flags: &SuperstarFlags,
    base_year: i32,
    what: &str,
    measure: impl Fn(&crate::panel::FirmYear) -> Option<f64>,
) -> Result<ShareMap> {
    require_year(panel, base_year)?;
    let mut out = ShareMap::default();
    for (cell, idx) in panel.cells() {
        if cell.year != base_year {
            continue;
        }
        let (mut star, mut total) = (0.0, 0.0);
        for &i in idx {
            let r = &panel.rows()[i];
            if let Some(v) = measure(r) {
                total += v;
                if flags.is_superstar(&r.firm_id) {
                    star += v;
                }
            }
        }
        let key = (cell.sector3.clone(), cell.province.clone());
        if total > 0.0 {
            out.values.insert(key, star / total);
        } else {
            out.diagnostics.push(format!(
                "cell {}/{}: zero base-year {what}, share missing",
                cell.sector3, cell.province
            ));
        }
    }
    Ok(out)
}

pub fn base_labor_share(panel: &Panel, flags: &SuperstarFlags, base_year: i32, skill: Skill) -> Result<ShareMap> {
    base_share(panel, flags, base_year, "employment", |r| match skill {
        Skill::Unskilled => r.workers_production.map(f64::from),
        Skill::All => r.total_workers().map(f64::from),
    })
}

/// Superstar output share of each base-year cell.
pub fn base_output_share(panel: &Panel, flags: &SuperstarFlags, base_year: i32) -> Result<ShareMap> {
    base_share(panel, flags, base_year, "output", |r| r.output)
}

/// Sector output by province and year.
type SectorTotals = BTreeMap<(String, i32), BTreeMap<String, f64>>;

fn sector_totals(panel: &Panel) -> SectorTotals {
    let mut totals: SectorTotals = BTreeMap::new();
    for (cell, idx) in panel.cells() {
        let sum: f64 = idx.iter().filter_map(|&i| panel.rows()[i].output).sum();
        totals
            .entry((cell.sector3.clone(), cell.year))
            .or_default()
            .insert(cell.province.clone(), sum);
    }
    totals
}

fn leave_out(totals: &SectorTotals, sector3: &str, province: &str, year: i32) -> Option<(f64, usize)> {
    let by_province = totals.get(&(sector3.to_string(), year))?;
    let mut sum = 0.0;
    let mut n = 0;
    for (p, v) in by_province {
        if p != province {
            sum += v;
            n += 1;
        }
    }
    Some((sum, n))
}

fn loo_growth_from(
    totals: &SectorTotals,
    sector3: &str,
    province: &str,
    year: i32,
) -> std::result::Result<f64, String> {
    let now = leave_out(totals, sector3, province, year);
    let before = leave_out(totals, sector3, province, year - 1);
    match (now, before) {
        (Some((_, 0)), _) | (_, Some((_, 0))) => Err("no other province in sector".into()),
        (Some((now, _)), Some((before, _))) if before > 0.0 => Ok((now - before) / before),
        (Some(_), Some(_)) => Err("zero lagged leave-out output".into()),
        _ => Err(format!("sector absent in {} or {}", year - 1, year)),
    }
}

/// National growth of `sector3` output between `year - 1` and `year`,
/// excluding `province`.
pub fn loo_output_growth(panel: &Panel, sector3: &str, province: &str, year: i32) -> Option<f64> {
    loo_growth_from(&sector_totals(panel), sector3, province, year).ok()
}

/// Leave-one-out growth for every panel cell that has a previous year.
pub fn loo_growth_table(panel: &Panel) -> (BTreeMap<CellKey, f64>, Vec<String>) {
    let totals = sector_totals(panel);
    let first = panel.years().into_iter().next();
    let mut values = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for cell in panel.cells().keys() {
        if Some(cell.year) == first {
            continue;
        }
        match loo_growth_from(&totals, &cell.sector3, &cell.province, cell.year) {
            Ok(g) => {
                values.insert(cell.clone(), g);
            }
            Err(why) => diagnostics.push(format!(
                "growth {}/{}/{}: {why}",
                cell.sector3, cell.province, cell.year
            )),
        }
    }
    (values, diagnostics)
}

/// `share(k, j) × growth(k, -j, t)`.
pub fn lab_bartik_iv(shares: &ShareMap, growth: &BTreeMap<CellKey, f64>) -> InstrumentSeries {
    let mut values = BTreeMap::new();
    let mut missing = 0usize;
    for (cell, g) in growth {
        match shares.get(&cell.sector3, &cell.province) {
            Some(s) => {
                values.insert(cell.clone(), s * g);
            }
            None => missing += 1,
        }
    }
    let mut diagnostics = Vec::new();
    if missing > 0 {
        diagnostics.push(format!("{missing} cells without a base-year share"));
    }
    InstrumentSeries {
        kind: InstrumentKind::LabBartik,
        values,
        diagnostics,
    }
}

/// `OutSh(k, j, base) × (Tariff_{k,t} − Tariff_{k,t−1})` for every panel cell.
pub fn tariff_bartik_iv(
    panel: &Panel,
    flags: &SuperstarFlags,
    tariffs: &TariffTable,
    base_year: i32,
) -> Result<InstrumentSeries> {
    let shares = base_output_share(panel, flags, base_year)?;
    Ok(tariff_bartik_from(panel.cells().keys(), &shares, tariffs))
}

pub fn tariff_bartik_from<'a>(
    cells: impl IntoIterator<Item = &'a CellKey>,
    shares: &ShareMap,
    tariffs: &TariffTable,
) -> InstrumentSeries {
    let mut values = BTreeMap::new();
    let (mut no_share, mut no_tariff) = (0usize, 0usize);
    for cell in cells {
        let Some(s) = shares.get(&cell.sector3, &cell.province) else {
            no_share += 1;
            continue;
        };
        match (
            tariffs.get(&cell.sector3, cell.year),
            tariffs.get(&cell.sector3, cell.year - 1),
        ) {
            (Some(now), Some(before)) => {
                values.insert(cell.clone(), s * (now - before));
            }
            _ => no_tariff += 1,
        }
    }
    let mut diagnostics = Vec::new();
    if no_share > 0 {
        diagnostics.push(format!("{no_share} cells without a base-year output share"));
    }
    if no_tariff > 0 {
        diagnostics.push(format!("{no_tariff} cells without tariffs for t and t-1"));
    }
    InstrumentSeries {
        kind: InstrumentKind::TarrBartik,
        values,
        diagnostics,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RegionRow {
    road_km: Option<f64>,
    area_km2: f64,
}

/// Road kilometres per square kilometre by (province, year).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadDensity {
    rows: BTreeMap<String, BTreeMap<i32, RegionRow>>,
}

impl RoadDensity {
    /// Reads `province,year,road_km,area_km2`; `road_km` may be empty.
    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut rows: BTreeMap<String, BTreeMap<i32, RegionRow>> = BTreeMap::new();
        for rec in rdr.deserialize() {
            let (p, y, road_km, area_km2): (String, i32, Option<f64>, f64) = rec?;
            if !(area_km2 > 0.0 && area_km2.is_finite()) {
                return Err(Error::InvalidTable(format!(
                    "province {p} year {y}: area {area_km2} must be positive"
                )));
            }
            if let Some(km) = road_km {
                if !(km >= 0.0 && km.is_finite()) {
                    return Err(Error::InvalidTable(format!("province {p} year {y}: road length {km}")));
                }
            }
            rows.entry(p).or_default().insert(y, RegionRow { road_km, area_km2 });
        }
        Ok(RoadDensity { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    /// Density with road length held at its first observed value for
    /// earlier years.
    pub fn get(&self, province: &str, year: i32) -> Option<f64> {
        let rows = self.rows.get(province)?;
        let (first_year, first) = rows.iter().find_map(|(y, r)| r.road_km.map(|km| (*y, km)))?;
        let row = rows.get(&year);
        let area = row
            .map(|r| r.area_km2)
            .or_else(|| rows.get(&first_year).map(|r| r.area_km2))?;
        match row.and_then(|r| r.road_km) {
            Some(km) => Some(km / area),
            None if year < first_year => Some(first / area),
            None => None,
        }
    }

    pub fn provinces(&self) -> BTreeSet<&str> {
        self.rows.keys().map(String::as_str).collect()
    }

    /// Province-level density broadcast to market cells.
    pub fn for_cells<'a>(&self, cells: impl IntoIterator<Item = &'a CellKey>) -> InstrumentSeries {
        let mut values = BTreeMap::new();
        let mut missing = 0usize;
        for c in cells {
            match self.get(&c.province, c.year) {
                Some(v) => {
                    values.insert(c.clone(), v);
                }
                None => missing += 1,
            }
        }
        let diagnostics = if missing > 0 {
            vec![format!("{missing} cells without road density")]
        } else {
            Vec::new()
        };
        InstrumentSeries {
            kind: InstrumentKind::RoadDensity,
            values,
            diagnostics,
        }
    }
}

/// Writes `sector3,province,year,lab_bartik,tarr_bartik,road_density`.
pub fn write_instruments<'a, W: Write>(
    w: W,
    cells: impl IntoIterator<Item = &'a CellKey>,
    lab: &InstrumentSeries,
    tarr: &InstrumentSeries,
    road: Option<&InstrumentSeries>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "sector3",
        "province",
        "year",
        "lab_bartik",
        "tarr_bartik",
        "road_density",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| (x + 0.0).to_string()).unwrap_or_default();
    for c in cells {
        out.write_record([
            c.sector3.clone(),
            c.province.clone(),
            c.year.to_string(),
            fmt(lab.get(c)),
            fmt(tarr.get(c)),
            fmt(road.and_then(|r| r.get(c))),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<instruments>", e))?;
    Ok(())
}

/// Reads the instrument CSV back as three series.
pub fn read_instruments<R: Read>(r: R) -> Result<[InstrumentSeries; 3]> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = [
        InstrumentKind::LabBartik,
        InstrumentKind::TarrBartik,
        InstrumentKind::RoadDensity,
    ]
    .map(|kind| InstrumentSeries {
        kind,
        values: BTreeMap::new(),
        diagnostics: Vec::new(),
    });
    for rec in rdr.deserialize() {
        let (s, p, y, a, b, c): (String, String, i32, Option<f64>, Option<f64>, Option<f64>) = rec?;
        let key = CellKey::new(&s, &p, y);
        for (series, v) in out.iter_mut().zip([a, b, c]) {
            if let Some(v) = v {
                series.values.insert(key.clone(), v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::fixtures::row;
    use crate::panel::FirmYear;

    fn worker_row(firm: &str, year: i32, province: &str, production: u32, output: f64) -> FirmYear {
        let mut r = row(firm, year, "151", province, output);
        r.workers_production = Some(production);
        r
    }

    #[test]
    fn labour_share_hand_values() {
        let p = Panel::new(vec![
            worker_row("S", 2001, "P1", 60, 1.0),
            worker_row("A", 2001, "P1", 140, 1.0),
            worker_row("S2", 2001, "P2", 10, 1.0),
        ])
        .unwrap();
        let flags = SuperstarFlags::from_superstars(&p, ["S", "S2"]);
        let s = base_labor_share(&p, &flags, 2001, Skill::Unskilled).unwrap();
        assert!((s.get("151", "P1").unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(s.get("151", "P2"), Some(1.0));
        assert!(base_labor_share(&p, &flags, 1999, Skill::Unskilled).is_err());
    }

    #[test]
    fn zero_worker_cell_is_missing() {
        let p = Panel::new(vec![worker_row("A", 2001, "P1", 0, 1.0)]).unwrap();
        let mut rows = p.into_rows();
        rows[0].workers_nonproduction = Some(0);
        let p = Panel::new(rows).unwrap();
        let s = base_labor_share(&p, &SuperstarFlags::default(), 2001, Skill::All).unwrap();
        assert!(s.values.is_empty());
        assert_eq!(s.diagnostics.len(), 1);
    }

    #[test]
    fn leave_one_out_growth() {
        let p = Panel::new(vec![
            row("A", 2001, "151", "P1", 999.0),
            row("A", 2002, "151", "P1", 5.0),
            row("B", 2001, "151", "P2", 60.0),
            row("B", 2002, "151", "P2", 70.0),
            row("C", 2001, "151", "P3", 40.0),
            row("C", 2002, "151", "P3", 40.0),
            row("D", 2001, "152", "P1", 1.0),
            row("D", 2002, "152", "P1", 2.0),
        ])
        .unwrap();
        let g = loo_output_growth(&p, "151", "P1", 2002).unwrap();
        assert!((g - 0.10).abs() < 1e-15);
        // single-province sector has an empty leave-out set
        assert_eq!(loo_output_growth(&p, "152", "P1", 2002), None);
        assert_eq!(loo_output_growth(&p, "151", "P1", 2001), None);
    }

    #[test]
    fn new_province_enters_other_growth_but_not_its_own() {
        let base = vec![
            row("A", 2001, "151", "P1", 100.0),
            row("A", 2002, "151", "P1", 120.0),
            row("B", 2001, "151", "P2", 50.0),
            row("B", 2002, "151", "P2", 50.0),
        ];
        let before = Panel::new(base.clone()).unwrap();
        let mut extended = base;
        extended.push(row("N", 2001, "151", "P9", 10.0));
        extended.push(row("N", 2002, "151", "P9", 40.0));
        let after = Panel::new(extended).unwrap();
        let g1 = loo_output_growth(&before, "151", "P1", 2002).unwrap();
        let g2 = loo_output_growth(&after, "151", "P1", 2002).unwrap();
        assert_ne!(g1, g2);
        // P9's own growth uses only P1 and P2
        let own = loo_output_growth(&after, "151", "P9", 2002).unwrap();
        assert!((own - (170.0 - 150.0) / 150.0).abs() < 1e-15);
    }

    #[test]
    fn bartik_products() {
        let mut shares = ShareMap::default();
        shares.values.insert(("151".into(), "P1".into()), 0.3);
        shares.values.insert(("152".into(), "P1".into()), 0.0);
        let growth: BTreeMap<CellKey, f64> = [
            (CellKey::new("151", "P1", 2002), 0.10),
            (CellKey::new("152", "P1", 2002), 0.7),
            (CellKey::new("153", "P1", 2002), 0.7),
        ]
        .into_iter()
        .collect();
        let iv = lab_bartik_iv(&shares, &growth);
        assert!((iv.get(&CellKey::new("151", "P1", 2002)).unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(iv.get(&CellKey::new("152", "P1", 2002)), Some(0.0));
        assert_eq!(iv.get(&CellKey::new("153", "P1", 2002)), None);

        let iv2 = lab_bartik_iv(&shares.scaled(2.5), &growth);
        for (k, v) in &iv.values {
            assert!((iv2.values[k] - 2.5 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn tariff_bartik_hand_value() {
        let p = Panel::new(vec![
            row("S", 2001, "151", "P1", 50.0),
            row("A", 2001, "151", "P1", 50.0),
            row("S", 2002, "151", "P1", 50.0),
            row("S", 2003, "151", "P1", 50.0),
        ])
        .unwrap();
        let flags = SuperstarFlags::from_superstars(&p, ["S"]);
        let tariffs = TariffTable::new(
            [
                (("151".to_string(), 2001), 10.0),
                (("151".to_string(), 2002), 8.0),
                (("151".to_string(), 2003), 8.0),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap();
        let iv = tariff_bartik_iv(&p, &flags, &tariffs, 2001).unwrap();
        assert_eq!(iv.get(&CellKey::new("151", "P1", 2002)), Some(-1.0));
        assert_eq!(iv.get(&CellKey::new("151", "P1", 2003)), Some(0.0));
        assert_eq!(iv.get(&CellKey::new("151", "P1", 2001)), None);
    }

    #[test]
    fn road_density_backfill() {
        let csv = "province,year,road_km,area_km2\nP1,2005,,1000\nP1,2008,500,1000\nP1,2009,600,1000\n";
        let r = RoadDensity::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(r.get("P1", 2008), Some(0.5));
        assert_eq!(r.get("P1", 2005), r.get("P1", 2008));
        assert_eq!(r.get("P1", 2002), Some(0.5));
        assert_eq!(r.get("P1", 2009), Some(0.6));
        assert_eq!(r.get("P1", 2010), None);
        assert!(RoadDensity::from_reader("province,year,road_km,area_km2\nP1,2008,5,0\n".as_bytes()).is_err());
    }

    #[test]
    fn instrument_csv_round_trip() {
        let cells = [CellKey::new("151", "P1", 2002), CellKey::new("151", "P2", 2002)];
        let lab = InstrumentSeries {
            kind: InstrumentKind::LabBartik,
            values: [(cells[0].clone(), 0.125)].into_iter().collect(),
            diagnostics: vec![],
        };
        let tarr = InstrumentSeries {
            kind: InstrumentKind::TarrBartik,
            values: [(cells[1].clone(), -1.5)].into_iter().collect(),
            diagnostics: vec![],
        };
        let mut buf = Vec::new();
        write_instruments(&mut buf, cells.iter(), &lab, &tarr, None).unwrap();
        let [a, b, c] = read_instruments(buf.as_slice()).unwrap();
        assert_eq!(a.values, lab.values);
        assert_eq!(b.values, tarr.values);
        assert!(c.values.is_empty());
    }
}
