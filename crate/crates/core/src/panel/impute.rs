//! Gap-year averaging and regression-based capital imputation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Field, FirmYear, ImputeMethod, Panel};
use crate::error::{Error, Result};
use crate::linalg::least_squares;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapReport {
    /// (firm, year, field, imputed value)
    pub imputed: Vec<(String, i32, Field, f64)>,
    /// Missing (firm, year, field) triples lacking a neighbour on either side.
    pub unresolved: Vec<(String, i32, Field)>,
}

/// Fills a value missing at `year` with the mean of the firm's values at
/// `year - 1` and `year + 1`. Triples without both neighbours stay missing and
/// are reported.
pub fn impute_gap_average(panel: &Panel, variables: &[Field], year: i32) -> Result<(Panel, GapReport)> {
    let mut rows = panel.rows().to_vec();
    let mut report = GapReport::default();
    let mut marks = Vec::new();
    for (i, row) in panel.rows().iter().enumerate() {
        if row.year != year {
            continue;
        }
        for &field in variables {
            if field.get(row).is_some() {
                continue;
            }
            let prev = panel.get(&row.firm_id, year - 1).and_then(|r| field.get(r));
            let next = panel.get(&row.firm_id, year + 1).and_then(|r| field.get(r));
            match (prev, next) {
                (Some(a), Some(b)) => {
                    let v = (a + b) / 2.0;
                    field.set(&mut rows[i], Some(v));
                    report
                        .imputed
                        .push((row.firm_id.clone(), year, field, field.get(&rows[i]).unwrap_or(v)));
                    marks.push((row.firm_id.clone(), field));
                }
                _ => report.unresolved.push((row.firm_id.clone(), year, field)),
            }
        }
    }
    let mut out = panel.derive(rows)?;
    for (firm, field) in marks {
        out.mark_imputed(&firm, year, field, ImputeMethod::GapAverage);
    }
    Ok((out, report))
}

/// Whether the capital regression is fit on the whole panel or per 3-digit
/// sector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapitalScope {
    #[default]
    Pooled,
    PerSector,
}

pub const CAPITAL_REGRESSORS: [&str; 5] = [
    "const",
    "ln_output_lag",
    "ln_labour_lag",
    "ln_materials_lag",
    "ln_energy_lag",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapitalImputation {
    /// Coefficients per scope group (`"pooled"` or a sector code), in
    /// [`CAPITAL_REGRESSORS`] order.
    pub coefficients: BTreeMap<String, Vec<f64>>,
    pub n_train: BTreeMap<String, usize>,
    /// (firm, year, fitted log capital, residual carried, imputed capital)
    pub imputed: Vec<(String, i32, f64, f64, f64)>,
    /// Rows at the target year with missing capital and no usable lag.
    pub unresolved: Vec<(String, i32)>,
}

fn lag_regressors(lag: &FirmYear) -> Option<[f64; 5]> {
    let pos = |v: Option<f64>| v.filter(|x| *x > 0.0).map(f64::ln);
    let labour = lag.total_workers().filter(|w| *w >= 1).map(|w| f64::from(w).ln());
    Some([1.0, pos(lag.output)?, labour?, pos(lag.materials)?, pos(lag.energy)?])
}

/// Imputes capital at `target_year` from a log-log regression of capital on
/// lagged output, labour, materials and energy, adding back each firm's most
/// recent pre-target residual (zero when it has none).
pub fn impute_capital_regression(
    panel: &Panel,
    target_year: i32,
    scope: CapitalScope,
) -> Result<(Panel, CapitalImputation)> {
    let group_of = |r: &FirmYear| match scope {
        CapitalScope::Pooled => "pooled".to_string(),
        CapitalScope::PerSector => r.sector3.clone(),
    };

    // training rows per group: (row index, regressors, ln capital)
    let mut train: BTreeMap<String, Vec<(usize, [f64; 5], f64)>> = BTreeMap::new();
    for (i, row) in panel.rows().iter().enumerate() {
        if row.year == target_year {
            continue;
        }
        let Some(k) = row.capital.filter(|k| *k > 0.0) else {
            continue;
        };
        let Some(x) = panel.get(&row.firm_id, row.year - 1).and_then(lag_regressors) else {
            continue;
        };
        train.entry(group_of(row)).or_default().push((i, x, k.ln()));
    }

    // target rows grouped the same way
    let mut targets: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, row) in panel.rows().iter().enumerate() {
        if row.year == target_year && row.capital.is_none() {
            targets.entry(group_of(row)).or_default().push(i);
        }
    }

    let mut result = CapitalImputation::default();
    let mut rows = panel.rows().to_vec();
    let mut marks = Vec::new();
    let names: Vec<String> = CAPITAL_REGRESSORS.iter().map(|s| s.to_string()).collect();
    let min_rows = 5 * CAPITAL_REGRESSORS.len();

    for (group, target_rows) in &targets {
        let data = train.get(group).map(Vec::as_slice).unwrap_or(&[]);
        if data.len() < min_rows {
            return Err(Error::InsufficientData(format!(
                "capital imputation group {group}: {} training rows, need {min_rows}",
                data.len()
            )));
        }
        let x = DMatrix::from_fn(data.len(), 5, |i, j| data[i].1[j]);
        let y = DVector::from_iterator(data.len(), data.iter().map(|d| d.2));
        let fit = least_squares(&x, &y, &names)?;

        // most recent pre-target residual per firm
        let mut last_resid: BTreeMap<&str, (i32, f64)> = BTreeMap::new();
        for (t, d) in data.iter().enumerate() {
            let r = &panel.rows()[d.0];
            if r.year < target_year {
                let e = last_resid.entry(r.firm_id.as_str()).or_insert((r.year, fit.resid[t]));
                if r.year >= e.0 {
                    *e = (r.year, fit.resid[t]);
                }
            }
        }

        for &i in target_rows {
            let row = &panel.rows()[i];
            let Some(x) = panel.get(&row.firm_id, target_year - 1).and_then(lag_regressors) else {
                result.unresolved.push((row.firm_id.clone(), target_year));
                continue;
            };
            let fitted: f64 = x.iter().zip(fit.beta.iter()).map(|(a, b)| a * b).sum();
            let resid = last_resid.get(row.firm_id.as_str()).map(|r| r.1).unwrap_or(0.0);
            let value = (fitted + resid).exp();
            rows[i].capital = Some(value);
            marks.push(row.firm_id.clone());
            result
                .imputed
                .push((row.firm_id.clone(), target_year, fitted, resid, value));
        }
        result
            .coefficients
            .insert(group.clone(), fit.beta.iter().copied().collect());
        result.n_train.insert(group.clone(), data.len());
    }

    let mut out = panel.derive(rows)?;
    for firm in marks {
        out.mark_imputed(&firm, target_year, Field::Capital, ImputeMethod::CapitalRegression);
    }
    Ok((out, result))
}
