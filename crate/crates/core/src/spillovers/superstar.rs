use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// Which persistence rule turns yearly output ranks into a firm-level flag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopRule {
    /// In the top bracket of its sector-year cell in more than
    /// `top_frequency` of observed years.
    #[default]
    YearlyFrequency,
    /// Median yearly output share in the top bracket of its sector's firms.
    MedianShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperstarRule {
    pub top_share_cutoff: f64,
    pub min_tenure_years: u32,
    pub top_frequency: f64,
    pub foreign_threshold: Option<f64>,
    pub rule: TopRule,
}

impl Default for SuperstarRule {
    fn default() -> Self {
        SuperstarRule {
            top_share_cutoff: 0.05,
            min_tenure_years: 10,
            top_frequency: 0.90,
            foreign_threshold: Some(0.10),
            rule: TopRule::YearlyFrequency,
        }
    }
}

impl SuperstarRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_share_cutoff > 0.0 && self.top_share_cutoff < 1.0) {
            return Err(Error::config("top_share_cutoff", "must lie in (0, 1)"));
        }
        if !(self.top_frequency > 0.0 && self.top_frequency <= 1.0) {
            return Err(Error::config("top_frequency", "must lie in (0, 1]"));
        }
        if let Some(t) = self.foreign_threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config("foreign_threshold", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FirmFlag {
    pub superstar: bool,
    /// Ownership label for superstars when an ownership split was requested.
    pub foreign: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuperstarFlags {
    pub firms: BTreeMap<String, FirmFlag>,
    pub diagnostics: Vec<String>,
}

impl SuperstarFlags {
    pub fn from_superstars<'a>(panel: &Panel, superstars: impl IntoIterator<Item = &'a str>) -> Self {
        let mut firms: BTreeMap<String, FirmFlag> = panel
            .rows()
            .iter()
            .map(|r| (r.firm_id.clone(), FirmFlag::default()))
            .collect();
        for s in superstars {
            firms.entry(s.to_string()).or_default().superstar = true;
        }
        SuperstarFlags {
            firms,
            diagnostics: Vec::new(),
        }
    }

    pub fn is_superstar(&self, firm_id: &str) -> bool {
        self.firms.get(firm_id).is_some_and(|f| f.superstar)
    }

    pub fn flag(&self, firm_id: &str) -> FirmFlag {
        self.firms.get(firm_id).copied().unwrap_or_default()
    }

    pub fn count(&self) -> usize {
        self.firms.values().filter(|f| f.superstar).count()
    }

    /// `firm_id,superstar,superstar_foreign,superstar_domestic`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["firm_id", "superstar", "superstar_foreign", "superstar_domestic"])?;
        let b = |x: bool| if x { "1" } else { "0" };
        for (id, f) in &self.firms {
            let foreign = f.superstar && f.foreign == Some(true);
            let domestic = f.superstar && f.foreign == Some(false);
            out.write_record([id.as_str(), b(f.superstar), b(foreign), b(domestic)])?;
        }
        out.flush().map_err(|e| Error::io("<flags>", e))?;
        Ok(())
    }
}

/// Smallest sample value that is `>=` the type-7 (linear interpolation)
/// quantile `p` of `sorted`. Comparing against it instead of the
/// interpolated value keeps the rule purely rank-based.
pub(crate) fn top_threshold(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[hi]
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Firm-level superstar flags from persistent top-bracket output shares.
pub fn classify_superstars(panel: &Panel, rule: &SuperstarRule) -> Result<SuperstarFlags> {
    rule.validate()?;
    let mut diagnostics = Vec::new();

    // national (sector3, year) cells
    let mut cells: BTreeMap<(&str, i32), Vec<usize>> = BTreeMap::new();
    for (i, r) in panel.rows().iter().enumerate() {
        if r.output.is_some() {
            cells.entry((r.sector3.as_str(), r.year)).or_default().push(i);
        }
    }

    let mut in_top = vec![false; panel.len()];
    let mut share = vec![f64::NAN; panel.len()];
    for ((sector, year), idx) in &cells {
        let outputs: Vec<f64> = idx.iter().map(|&i| panel.rows()[i].output.unwrap_or(0.0)).collect();
        let total: f64 = outputs.iter().sum();
        if total <= 0.0 {
            diagnostics.push(format!("cell {sector}/{year}: zero total output, skipped"));
            continue;
        }
        if idx.len() == 1 {
            diagnostics.push(format!("cell {sector}/{year}: single firm, trivially in top"));
        }
        let mut sorted = outputs.clone();
        sorted.sort_by(f64::total_cmp);
        let threshold = top_threshold(&sorted, 1.0 - rule.top_share_cutoff);
        for (&i, &o) in idx.iter().zip(&outputs) {
            in_top[i] = o >= threshold;
            share[i] = o / total;
        }
    }

    let firms = panel.firms();
    let mut flags = BTreeMap::new();

    // median-share rule needs sector-level thresholds over firm medians
    let mut medians: BTreeMap<&str, (String, f64)> = BTreeMap::new();
    if rule.rule == TopRule::MedianShare {
        for (firm, idx) in &firms {
            let shares: Vec<f64> = idx.iter().map(|&i| share[i]).filter(|s| s.is_finite()).collect();
            if shares.is_empty() {
                continue;
            }
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in idx {
                *counts.entry(panel.rows()[i].sector3.as_str()).or_default() += 1;
            }
            let modal = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(s, _)| s.to_string())
                .unwrap_or_default();
            medians.insert(firm, (modal, median(shares)));
        }
    }
    let mut sector_threshold: BTreeMap<&str, f64> = BTreeMap::new();
    if rule.rule == TopRule::MedianShare {
        let mut by_sector: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (sector, m) in medians.values() {
            by_sector.entry(sector.as_str()).or_default().push(*m);
        }
        for (s, mut v) in by_sector {
            v.sort_by(f64::total_cmp);
            sector_threshold.insert(s, top_threshold(&v, 1.0 - rule.top_share_cutoff));
        }
    }

    for (firm, idx) in &firms {
        let rows = panel.rows();
        let first = rows[idx[0]].year;
        let last = rows[idx[idx.len() - 1]].year;
        let tenure = (last - first + 1) as u32;
        let observed = idx.iter().filter(|&&i| share[i].is_finite()).count();
        let top_years = idx.iter().filter(|&&i| in_top[i]).count();
        let persistent = match rule.rule {
            TopRule::YearlyFrequency => observed > 0 && (top_years as f64 / observed as f64) > rule.top_frequency,
            TopRule::MedianShare => medians
                .get(firm)
                .is_some_and(|(s, m)| *m >= sector_threshold[s.as_str()]),
        };
        let superstar = tenure > rule.min_tenure_years && persistent;
        let foreign = match rule.foreign_threshold {
            Some(t) if superstar => {
                let fs: Vec<f64> = idx.iter().filter_map(|&i| rows[i].foreign_share).collect();
                Some(!fs.is_empty() && median(fs) > t)
            }
            _ => None,
        };
        flags.insert(firm.to_string(), FirmFlag { superstar, foreign });
    }

    Ok(SuperstarFlags {
        firms: flags,
        diagnostics,
    })
}
