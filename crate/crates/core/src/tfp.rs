//! Proxy-variable production-function estimation and firm-level TFP.
//!
//! Stage one regresses log value added on log labour and a full polynomial
//! in (log proxy, log capital); stage two picks the capital elasticity that
//! minimizes the squared innovations of a polynomial Markov process in
//! implied productivity.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::panel::{FirmYear, Panel};

pub const MIN_SECTOR_ROWS: usize = 50;
/// Depreciation used to back investment out of the capital path.
pub const DEPRECIATION: f64 = 0.05;
const GOLDEN_TOL: f64 = 1e-6;
const EDGE_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyField {
    #[default]
    Materials,
    Investment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxySpec {
    pub proxy_field: ProxyField,
    pub first_stage_poly_degree: u32,
    pub markov_poly_degree: u32,
}

impl Default for ProxySpec {
    fn default() -> Self {
        ProxySpec {
            proxy_field: ProxyField::Materials,
            first_stage_poly_degree: 3,
            markov_poly_degree: 1,
        }
    }
}

impl ProxySpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.first_stage_poly_degree) {
            return Err(Error::config("first_stage_poly_degree", "must lie in 2..=4"));
        }
        if !(1..=4).contains(&self.markov_poly_degree) {
            return Err(Error::config("markov_poly_degree", "must lie in 1..=4"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionEstimate {
    pub sector3: String,
    pub beta_l: f64,
    pub beta_k: f64,
    pub n_obs: usize,
    pub convergence: Convergence,
    /// Set when the sector was too small and its 2-digit group was used.
    pub fallback_group: Option<String>,
}

/// One usable observation.
#[derive(Debug, Clone, Copy)]
struct Obs {
    row: usize,
    y: f64,
    l: f64,
    k: f64,
    proxy: f64,
}

fn ln_pos(v: Option<f64>) -> Option<f64> {
    v.filter(|x| *x > 0.0 && x.is_finite()).map(f64::ln)
}

fn log_inputs(r: &FirmYear) -> Option<(f64, f64, f64)> {
    let y = ln_pos(r.value_added)?;
    let l = ln_pos(r.total_workers().map(f64::from))?;
    let k = ln_pos(r.capital)?;
    Some((y, l, k))
}

/// Investment backed out of next year's capital: `K_{t+1} - (1-δ) K_t`.
fn investment(panel: &Panel, row: usize) -> Option<f64> {
    let r = &panel.rows()[row];
    let next = panel.get(&r.firm_id, r.year + 1)?;
    Some(next.capital? - (1.0 - DEPRECIATION) * r.capital?)
}

fn observations(panel: &Panel, rows: &[usize], proxy: ProxyField) -> Vec<Obs> {
    rows.iter()
        .filter_map(|&i| {
            let r = &panel.rows()[i];
            let (y, l, k) = log_inputs(r)?;
            let p = match proxy {
                ProxyField::Materials => r.materials,
                ProxyField::Investment => investment(panel, i),
            };
            Some(Obs {
                row: i,
                y,
                l,
                k,
                proxy: ln_pos(p)?,
            })
        })
        .collect()
}

fn standardize(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Monomials `a^i b^j` with `i + j <= degree`, constant first.
fn poly2(a: f64, b: f64, degree: u32) -> Vec<f64> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for i in (0..=total).rev() {
            out.push(a.powi(i as i32) * b.powi((total - i) as i32));
        }
    }
    out
}

fn poly2_names(degree: u32) -> Vec<String> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for i in (0..=total).rev() {
            out.push(format!("proxy^{i}*k^{}", total - i));
        }
    }
    out
}

struct StageOne {
    beta_l: f64,
    /// `Φ̂ = ŷ - β_l l` per observation.
    composite: Vec<f64>,
}

fn stage_one(obs: &[Obs], degree: u32) -> Result<StageOne> {
    let (pm, ps) = standardize(&obs.iter().map(|o| o.proxy).collect::<Vec<_>>());
    let (km, ks) = standardize(&obs.iter().map(|o| o.k).collect::<Vec<_>>());
    let mut names = vec!["l".to_string()];
    names.extend(poly2_names(degree));
    let p = names.len();
    let mut x = DMatrix::zeros(obs.len(), p);
    for (i, o) in obs.iter().enumerate() {
        x[(i, 0)] = o.l;
        for (j, v) in poly2((o.proxy - pm) / ps, (o.k - km) / ks, degree)
            .into_iter()
            .enumerate()
        {
            x[(i, j + 1)] = v;
        }
    }
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.y));
    let fit = least_squares(&x, &y, &names)?;
    let fitted = &y - &fit.resid;
    let beta_l = fit.beta[0];
    let composite = obs.iter().zip(fitted.iter()).map(|(o, f)| f - beta_l * o.l).collect();
    Ok(StageOne { beta_l, composite })
}

/// Index pairs `(t, t-1)` of consecutive years of the same firm.
fn lag_pairs(panel: &Panel, obs: &[Obs]) -> Vec<(usize, usize)> {
    let pos: BTreeMap<usize, usize> = obs.iter().enumerate().map(|(i, o)| (o.row, i)).collect();
    let rows = panel.rows();
    obs.iter()
        .enumerate()
        .filter_map(|(i, o)| {
            let r = &rows[o.row];
            let prev = panel.index_of(&r.firm_id, r.year - 1)?;
            Some((i, *pos.get(&prev)?))
        })
        .collect()
}

/// Sum of squared innovations of `ω(b) = Φ̂ - b k` around a polynomial in
/// its own lag.
fn markov_objective(b: f64, obs: &[Obs], composite: &[f64], pairs: &[(usize, usize)], degree: u32) -> Result<f64> {
    let omega = |i: usize| composite[i] - b * obs[i].k;
    let p = degree as usize + 1;
    let mut x = DMatrix::zeros(pairs.len(), p);
    let mut y = DVector::zeros(pairs.len());
    for (r, &(now, prev)) in pairs.iter().enumerate() {
        let w = omega(prev);
        for j in 0..p {
            x[(r, j)] = w.powi(j as i32);
        }
        y[r] = omega(now);
    }
    let names: Vec<String> = (0..p).map(|j| format!("omega_lag^{j}")).collect();
    Ok(least_squares(&x, &y, &names)?.rss())
}

fn golden_section<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64, usize)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut iterations = 0;
    while b - a > tol {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?, iterations))
}

fn estimate_rows(panel: &Panel, rows: &[usize], sector3: &str, spec: &ProxySpec) -> Result<ProductionEstimate> {
    spec.validate()?;
    let obs = observations(panel, rows, spec.proxy_field);
    if obs.len() < MIN_SECTOR_ROWS {
        return Err(Error::InsufficientData(format!(
            "sector {sector3}: {} usable rows, need {MIN_SECTOR_ROWS}",
            obs.len()
        )));
    }
    let s1 = stage_one(&obs, spec.first_stage_poly_degree)?;
    let pairs = lag_pairs(panel, &obs);
    if pairs.len() <= spec.markov_poly_degree as usize + 1 {
        return Err(Error::InsufficientData(format!(
            "sector {sector3}: {} consecutive-year pairs",
            pairs.len()
        )));
    }
    let (beta_k, objective, iterations) = golden_section(
        |b| markov_objective(b, &obs, &s1.composite, &pairs, spec.markov_poly_degree),
        0.0,
        1.0,
        GOLDEN_TOL,
    )?;
    let converged = beta_k > EDGE_MARGIN && beta_k < 1.0 - EDGE_MARGIN;
    Ok(ProductionEstimate {
        sector3: sector3.to_string(),
        beta_l: s1.beta_l,
        beta_k,
        n_obs: obs.len(),
        convergence: Convergence {
            converged,
            iterations,
            objective,
        },
        fallback_group: None,
    })
}

fn sector_rows(panel: &Panel) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in panel.rows().iter().enumerate() {
        out.entry(r.sector3.clone()).or_default().push(i);
    }
    out
}

/// Estimates one 3-digit sector.
pub fn estimate_production(panel: &Panel, sector3: &str, spec: &ProxySpec) -> Result<ProductionEstimate> {
    let rows = sector_rows(panel).remove(sector3).unwrap_or_default();
    estimate_rows(panel, &rows, sector3, spec)
}

/// The stage-two objective at a given `beta_k`, for inspection and tests.
pub fn stage_two_objective(panel: &Panel, sector3: &str, spec: &ProxySpec, beta_k: f64) -> Result<f64> {
    let rows = sector_rows(panel).remove(sector3).unwrap_or_default();
    let obs = observations(panel, &rows, spec.proxy_field);
    let s1 = stage_one(&obs, spec.first_stage_poly_degree)?;
    let pairs = lag_pairs(panel, &obs);
    markov_objective(beta_k, &obs, &s1.composite, &pairs, spec.markov_poly_degree)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateSet {
    pub estimates: BTreeMap<String, ProductionEstimate>,
    /// Sectors with no estimate and why.
    pub skipped: BTreeMap<String, String>,
}

impl EstimateSet {
    /// `sector3,beta_l,beta_k,n_obs,converged`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sector3", "beta_l", "beta_k", "n_obs", "converged"])?;
        for e in self.estimates.values() {
            out.write_record([
                e.sector3.clone(),
                e.beta_l.to_string(),
                e.beta_k.to_string(),
                e.n_obs.to_string(),
                u8::from(e.convergence.converged).to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<estimates>", e))?;
        Ok(())
    }
}

/// Estimates every 3-digit sector in parallel. A sector below the row
/// threshold borrows the estimate of its pooled 2-digit group.
pub fn estimate_all(panel: &Panel, spec: &ProxySpec) -> Result<EstimateSet> {
    spec.validate()?;
    let sectors = sector_rows(panel);
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in panel.rows().iter().enumerate() {
        groups.entry(r.sector2.clone()).or_default().push(i);
    }
    let results: Vec<(String, std::result::Result<ProductionEstimate, String>)> = sectors
        .par_iter()
        .map(|(s, rows)| {
            let usable = observations(panel, rows, spec.proxy_field).len();
            let res = if usable >= MIN_SECTOR_ROWS {
                estimate_rows(panel, rows, s, spec)
            } else {
                let group = &panel.rows()[rows[0]].sector2;
                estimate_rows(panel, &groups[group], s, spec).map(|mut e| {
                    e.fallback_group = Some(group.clone());
                    e
                })
            };
            (s.clone(), res.map_err(|e| e.to_string()))
        })
        .collect();
    let mut out = EstimateSet::default();
    for (s, r) in results {
        match r {
            Ok(e) => {
                out.estimates.insert(s, e);
            }
            Err(why) => {
                out.skipped.insert(s, why);
            }
        }
    }
    Ok(out)
}

/// Row-aligned productivity columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TfpColumns {
    pub phi: Vec<Option<f64>>,
    pub dphi: Vec<Option<f64>>,
    /// True for a firm's base row, which growth regressions exclude.
    pub base_row: Vec<bool>,
    pub lp: Vec<Option<f64>>,
    pub phi_missing: usize,
    pub lp_missing: usize,
}

/// `φ = y - β_l l - β_k k` with the row's sector estimate; rows in sectors
/// without a converged estimate are left missing.
pub fn compute_tfp(panel: &Panel, estimates: &BTreeMap<String, ProductionEstimate>) -> (Vec<Option<f64>>, usize) {
    let mut missing = 0;
    let phi = panel
        .rows()
        .iter()
        .map(|r| {
            let v = estimates
                .get(&r.sector3)
                .filter(|e| e.convergence.converged)
                .and_then(|e| log_inputs(r).map(|(y, l, k)| y - e.beta_l * l - e.beta_k * k));
            if v.is_none() {
                missing += 1;
            }
            v
        })
        .collect();
    (phi, missing)
}

/// `Δφ` relative to the firm's first row with `φ` present.
pub fn tfp_growth(panel: &Panel, phi: &[Option<f64>]) -> (Vec<Option<f64>>, Vec<bool>) {
    let mut dphi = vec![None; phi.len()];
    let mut base = vec![false; phi.len()];
    for idx in panel.firms().values() {
        let Some(&first) = idx.iter().find(|&&i| phi[i].is_some()) else {
            continue;
        };
        let origin = phi[first].expect("found above");
        base[first] = true;
        for &i in idx {
            if let Some(v) = phi[i] {
                dphi[i] = Some(if i == first { 0.0 } else { v - origin });
            }
        }
    }
    (dphi, base)
}

/// `ln(value_added / total workers)`.
pub fn labour_productivity(panel: &Panel) -> (Vec<Option<f64>>, usize) {
    let mut missing = 0;
    let lp = panel
        .rows()
        .iter()
        .map(|r| {
            let v = match (r.value_added, r.total_workers()) {
                (Some(va), Some(n)) if va > 0.0 && n >= 1 => Some((va / f64::from(n)).ln()),
                _ => None,
            };
            if v.is_none() {
                missing += 1;
            }
            v
        })
        .collect();
    (lp, missing)
}

pub fn tfp_columns(panel: &Panel, estimates: &BTreeMap<String, ProductionEstimate>) -> TfpColumns {
    let (phi, phi_missing) = compute_tfp(panel, estimates);
    let (dphi, base_row) = tfp_growth(panel, &phi);
    let (lp, lp_missing) = labour_productivity(panel);
    TfpColumns {
        phi,
        dphi,
        base_row,
        lp,
        phi_missing,
        lp_missing,
    }
}
