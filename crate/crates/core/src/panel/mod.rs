//! Firm-year panel data model.
//!
//! A [`Panel`] is an immutable, deterministically ordered collection of
//! [`FirmYear`] rows, sorted by `(firm_id, year)` and indexed both by that key
//! and by `(sector3, province, year)` cell. Missing measurements are `None`;
//! there are no sentinel values.

mod deflate;
mod impute;
mod io;
mod tables;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use deflate::{apply_deflators, DeflatorTable};
pub use impute::{impute_capital_regression, impute_gap_average, CapitalImputation, CapitalScope, GapReport};
pub use io::{load_panel, read_panel, write_panel, write_panel_with, Rejection, RejectionReport, Schema};
pub use tables::{IOTable, ProvinceIslandMap};

/// One firm-year observation. Monetary fields are in millions of
/// constant-price currency units once deflated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FirmYear {
    pub firm_id: String,
    pub year: i32,
    pub sector3: String,
    pub sector2: String,
    pub province: String,
    pub island: String,
    pub output: Option<f64>,
    pub value_added: Option<f64>,
    pub capital: Option<f64>,
    pub materials: Option<f64>,
    pub energy: Option<f64>,
    pub workers_production: Option<u32>,
    pub workers_nonproduction: Option<u32>,
    pub wage_bill: Option<f64>,
    pub foreign_share: Option<f64>,
    pub export_flag: Option<bool>,
    pub imported_materials: Option<f64>,
}

impl FirmYear {
    /// Production plus non-production workers; `None` if either is missing.
    pub fn total_workers(&self) -> Option<u32> {
        Some(self.workers_production? + self.workers_nonproduction?)
    }

    pub fn key(&self) -> (String, i32) {
        (self.firm_id.clone(), self.year)
    }

    pub fn cell(&self) -> CellKey {
        CellKey::new(&self.sector3, &self.province, self.year)
    }

    /// Checks the row-level invariants; returns the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !self.sector3.starts_with(&self.sector2) {
            return Err(format!(
                "sector2 {} is not a prefix of sector3 {}",
                self.sector2, self.sector3
            ));
        }
        for field in Field::MONETARY.iter().chain([Field::WageBill].iter()) {
            if let Some(v) = field.get(self) {
                if !v.is_finite() || (*field != Field::ValueAdded && v < 0.0) {
                    return Err(format!("{} = {v} is not a finite non-negative value", field.name()));
                }
            }
        }
        if let Some(s) = self.foreign_share {
            if !(0.0..=1.0).contains(&s) {
                return Err(format!("foreign_share = {s} outside [0, 1]"));
            }
        }
        if let (Some(imp), Some(mat)) = (self.imported_materials, self.materials) {
            if imp > mat {
                return Err(format!("imported_materials = {imp} exceeds materials = {mat}"));
            }
        }
        Ok(())
    }
}

/// Numeric panel fields addressable by name (imputation, deflation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Output,
    ValueAdded,
    Capital,
    Materials,
    Energy,
    WorkersProduction,
    WorkersNonproduction,
    WageBill,
    ForeignShare,
    ImportedMaterials,
}

impl Field {
    /// Fields divided by the price index on deflation.
    pub const MONETARY: [Field; 6] = [
        Field::Output,
        Field::ValueAdded,
        Field::Capital,
        Field::Materials,
        Field::Energy,
        Field::ImportedMaterials,
    ];

    pub const ALL: [Field; 10] = [
        Field::Output,
        Field::ValueAdded,
        Field::Capital,
        Field::Materials,
        Field::Energy,
        Field::WorkersProduction,
        Field::WorkersNonproduction,
        Field::WageBill,
        Field::ForeignShare,
        Field::ImportedMaterials,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Output => "output",
            Field::ValueAdded => "value_added",
            Field::Capital => "capital",
            Field::Materials => "materials",
            Field::Energy => "energy",
            Field::WorkersProduction => "workers_production",
            Field::WorkersNonproduction => "workers_nonproduction",
            Field::WageBill => "wage_bill",
            Field::ForeignShare => "foreign_share",
            Field::ImportedMaterials => "imported_materials",
        }
    }

    pub fn from_name(name: &str) -> Result<Field> {
        Field::ALL
            .iter()
            .copied()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::Schema(format!("unknown numeric field `{name}`")))
    }

    pub fn get(self, row: &FirmYear) -> Option<f64> {
        match self {
            Field::Output => row.output,
            Field::ValueAdded => row.value_added,
            Field::Capital => row.capital,
            Field::Materials => row.materials,
            Field::Energy => row.energy,
            Field::WorkersProduction => row.workers_production.map(f64::from),
            Field::WorkersNonproduction => row.workers_nonproduction.map(f64::from),
            Field::WageBill => row.wage_bill,
            Field::ForeignShare => row.foreign_share,
            Field::ImportedMaterials => row.imported_materials,
        }
    }

    /// Worker counts are rounded to the nearest integer.
    pub fn set(self, row: &mut FirmYear, value: Option<f64>) {
        let count = |v: Option<f64>| v.map(|x| x.round().max(0.0) as u32);
        match self {
            Field::Output => row.output = value,
            Field::ValueAdded => row.value_added = value,
            Field::Capital => row.capital = value,
            Field::Materials => row.materials = value,
            Field::Energy => row.energy = value,
            Field::WorkersProduction => row.workers_production = count(value),
            Field::WorkersNonproduction => row.workers_nonproduction = count(value),
            Field::WageBill => row.wage_bill = value,
            Field::ForeignShare => row.foreign_share = value,
            Field::ImportedMaterials => row.imported_materials = value,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A (3-digit sector, province, year) market cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub sector3: String,
    pub province: String,
    pub year: i32,
}

impl CellKey {
    pub fn new(sector3: &str, province: &str, year: i32) -> Self {
        CellKey {
            sector3: sector3.to_string(),
            province: province.to_string(),
            year,
        }
    }
}

/// How a value came to be filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ImputeMethod {
    GapAverage,
    CapitalRegression,
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    rows: Vec<FirmYear>,
    by_key: HashMap<(String, i32), usize>,
    cells: BTreeMap<CellKey, Vec<usize>>,
    deflated: bool,
    imputed: BTreeMap<(String, i32, Field), ImputeMethod>,
}

impl Panel {
    /// Builds a panel, sorting rows by `(firm_id, year)`. Duplicate keys are an
    /// integrity error listing every offender.
    pub fn new(mut rows: Vec<FirmYear>) -> Result<Self> {
        rows.sort_by(|a, b| a.firm_id.cmp(&b.firm_id).then(a.year.cmp(&b.year)));
        let duplicates: BTreeSet<(String, i32)> = rows
            .windows(2)
            .filter(|w| w[0].firm_id == w[1].firm_id && w[0].year == w[1].year)
            .map(|w| w[0].key())
            .collect();
        if !duplicates.is_empty() {
            return Err(Error::Integrity {
                duplicates: duplicates.into_iter().collect(),
            });
        }
        let mut by_key = HashMap::with_capacity(rows.len());
        let mut cells: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            by_key.insert(row.key(), i);
            cells.entry(row.cell()).or_default().push(i);
        }
        Ok(Panel {
            rows,
            by_key,
            cells,
            deflated: false,
            imputed: BTreeMap::new(),
        })
    }

    /// Rebuilds a panel from modified rows of `self`, carrying over flags.
    pub(crate) fn derive(&self, rows: Vec<FirmYear>) -> Result<Self> {
        let mut out = Panel::new(rows)?;
        out.deflated = self.deflated;
        out.imputed = self.imputed.clone();
        Ok(out)
    }

    pub fn rows(&self) -> &[FirmYear] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, firm_id: &str, year: i32) -> Option<&FirmYear> {
        self.index_of(firm_id, year).map(|i| &self.rows[i])
    }

    pub fn index_of(&self, firm_id: &str, year: i32) -> Option<usize> {
        self.by_key.get(&(firm_id.to_string(), year)).copied()
    }

    /// Row indices per market cell, in panel order.
    pub fn cells(&self) -> &BTreeMap<CellKey, Vec<usize>> {
        &self.cells
    }

    pub fn cell_rows(&self, cell: &CellKey) -> &[usize] {
        self.cells.get(cell).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.rows.iter().map(|r| r.year).collect()
    }

    /// Row indices grouped by firm, each group in year order.
    pub fn firms(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            out.entry(r.firm_id.as_str()).or_default().push(i);
        }
        out
    }

    pub fn is_deflated(&self) -> bool {
        self.deflated
    }

    pub fn set_deflated(&mut self, deflated: bool) {
        self.deflated = deflated;
    }

    pub fn imputed(&self) -> &BTreeMap<(String, i32, Field), ImputeMethod> {
        &self.imputed
    }

    pub fn is_imputed(&self, firm_id: &str, year: i32, field: Field) -> bool {
        self.imputed.contains_key(&(firm_id.to_string(), year, field))
    }

    pub(crate) fn mark_imputed(&mut self, firm_id: &str, year: i32, field: Field, how: ImputeMethod) {
        self.imputed.insert((firm_id.to_string(), year, field), how);
    }

    pub fn into_rows(self) -> Vec<FirmYear> {
        self.rows
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::FirmYear;

    pub fn row(firm: &str, year: i32, sector3: &str, province: &str, output: f64) -> FirmYear {
        FirmYear {
            firm_id: firm.to_string(),
            year,
            sector3: sector3.to_string(),
            sector2: sector3[..2].to_string(),
            province: province.to_string(),
            island: "I1".to_string(),
            output: Some(output),
            value_added: Some(output * 0.4),
            capital: Some(output * 0.8),
            materials: Some(output * 0.5),
            energy: Some(output * 0.05),
            workers_production: Some(20),
            workers_nonproduction: Some(5),
            wage_bill: Some(output * 0.1),
            foreign_share: Some(0.0),
            export_flag: Some(false),
            imported_materials: Some(output * 0.1),
        }
    }
}
