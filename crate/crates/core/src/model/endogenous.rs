//! Market-level panel in which horizontal exposure and productivity share an
//! unobserved shock, while the labour shift-share instrument stays valid.
//!
//! Every sector-province market holds one superstar and one non-superstar.
//! Market output follows the national sector path exactly, so leave-one-out
//! sector growth equals the national shock `g(k,t)`. The superstar's output
//! share is set to
//! `h = base + slope·100·s(k,j)·g(k,t) + confound·u(k,j,t) + noise`,
//! with `s(k,j)` the base-year superstar employment share. The non-superstar's
//! log productivity is `alpha·h + fe + load·u + e`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sim::sector_code;
use crate::bartik::{base_labor_share, lab_bartik_iv, loo_growth_table, Skill};
use crate::econometrics::{cell_values, panel_frame, Frame};
use crate::error::{Error, Result};
use crate::panel::{FirmYear, Panel};
use crate::spillovers::{hspill, SuperstarFlags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndogenousConfig {
    pub n_sectors: usize,
    pub n_provinces: usize,
    pub n_years: usize,
    /// True effect of one percentage point of horizontal exposure.
    pub alpha: f64,
    pub base_share: f64,
    pub slope: f64,
    pub confound: f64,
    pub noise: f64,
    /// Loading of the shared shock on productivity.
    pub load: f64,
    pub growth_mean: f64,
    pub growth_sd: f64,
    pub productivity_sd: f64,
    pub seed: u64,
    pub first_year: i32,
}

impl Default for EndogenousConfig {
    fn default() -> Self {
        EndogenousConfig {
            n_sectors: 15,
            n_provinces: 16,
            n_years: 8,
            alpha: 0.01,
            base_share: 40.0,
            slope: 3.0,
            confound: 8.0,
            noise: 3.0,
            load: 0.1,
            growth_mean: 0.05,
            growth_sd: 0.10,
            productivity_sd: 0.05,
            seed: 1,
            first_year: 2001,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EndogenousSample {
    pub panel: Panel,
    pub flags: SuperstarFlags,
    /// Log productivity per panel row; `None` for superstars.
    pub phi: Vec<Option<f64>>,
    pub alpha: f64,
}

impl EndogenousSample {
    /// Regression frame with `phi`, `hspill` and `lab_bartik` computed by the
    /// library's own measure and instrument code.
    pub fn frame(&self) -> Result<Frame> {
        let base = self
            .panel
            .years()
            .into_iter()
            .next()
            .ok_or_else(|| Error::InsufficientData("empty panel".into()))?;
        let h = hspill(&self.panel, &self.flags);
        let shares = base_labor_share(&self.panel, &self.flags, base, Skill::Unskilled)?;
        let (growth, _) = loo_growth_table(&self.panel);
        let iv = lab_bartik_iv(&shares, &growth);
        let mut f = panel_frame(&self.panel, &self.flags)?;
        f.add_numeric("phi", self.phi.clone())?;
        f.add_numeric("hspill", cell_values(&self.panel, &h.values))?;
        f.add_numeric("lab_bartik", cell_values(&self.panel, &iv.values))?;
        Ok(f)
    }
}

pub fn simulate_endogenous(cfg: &EndogenousConfig) -> Result<EndogenousSample> {
    if cfg.n_sectors == 0 || cfg.n_provinces < 2 || cfg.n_years < 2 {
        return Err(Error::config(
            "endogenous",
            "needs at least one sector, two provinces and two years",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let sectors: Vec<String> = (0..cfg.n_sectors).map(sector_code).collect();
    let provinces: Vec<String> = (0..cfg.n_provinces).map(|p| format!("P{:02}", p + 1)).collect();
    let islands = cfg.n_provinces.min(5);

    // national sector paths
    let mut level = vec![vec![1.0; cfg.n_years]; cfg.n_sectors];
    let mut growth = vec![vec![0.0; cfg.n_years]; cfg.n_sectors];
    for k in 0..cfg.n_sectors {
        for t in 1..cfg.n_years {
            let g = (cfg.growth_mean + cfg.growth_sd * normal(&mut rng)).max(-0.5);
            growth[k][t] = g;
            level[k][t] = level[k][t - 1] * (1.0 + g);
        }
    }
    let sector_fe: Vec<f64> = (0..cfg.n_sectors).map(|_| 0.2 * normal(&mut rng)).collect();
    let province_fe: Vec<f64> = (0..cfg.n_provinces).map(|_| 0.2 * normal(&mut rng)).collect();
    let year_fe: Vec<f64> = (0..cfg.n_years).map(|_| 0.1 * normal(&mut rng)).collect();

    let mut rows = Vec::new();
    let mut phi = Vec::new();
    let mut stars = Vec::new();
    for (k, sector) in sectors.iter().enumerate() {
        for (j, province) in provinces.iter().enumerate() {
            let size = (1.0 + 4.0 * rng.random::<f64>()) * 1000.0;
            let star_workers: u32 = rng.random_range(50..=450);
            let share = star_workers as f64 / 500.0;
            let star = format!("S{k:03}{j:03}");
            let other = format!("N{k:03}{j:03}");
            stars.push(star.clone());
            let island = format!("I{}", j * islands / cfg.n_provinces + 1);
            for t in 0..cfg.n_years {
                let u = normal(&mut rng);
                let h = (cfg.base_share
                    + cfg.slope * 100.0 * share * growth[k][t]
                    + cfg.confound * u
                    + cfg.noise * normal(&mut rng))
                .clamp(1.0, 99.0);
                let total = size * level[k][t];
                let year = cfg.first_year + t as i32;
                let mk = |id: &str, out: f64, workers: u32| FirmYear {
                    firm_id: id.to_string(),
                    year,
                    sector3: sector.clone(),
                    sector2: sector[..2].to_string(),
                    province: province.clone(),
                    island: island.clone(),
                    output: Some(out),
                    value_added: Some(0.4 * out),
                    capital: Some(0.8 * out),
                    materials: Some(0.5 * out),
                    energy: Some(0.05 * out),
                    workers_production: Some(workers),
                    workers_nonproduction: Some(workers / 4),
                    wage_bill: Some(0.1 * out),
                    foreign_share: Some(0.0),
                    export_flag: Some(false),
                    imported_materials: Some(0.0),
                };
                rows.push(mk(&star, total * h / 100.0, star_workers));
                phi.push(None);
                rows.push(mk(&other, total * (100.0 - h) / 100.0, 500 - star_workers));
                let e = cfg.productivity_sd * normal(&mut rng);
                phi.push(Some(
                    cfg.alpha * h + sector_fe[k] + province_fe[j] + year_fe[t] + cfg.load * u + e,
                ));
            }
        }
    }
    // Panel::new sorts rows; carry phi along through the firm-year key
    let keyed: std::collections::BTreeMap<(String, i32), Option<f64>> = rows
        .iter()
        .zip(&phi)
        .map(|(r, p)| ((r.firm_id.clone(), r.year), *p))
        .collect();
    let panel = Panel::new(rows)?;
    let phi = panel
        .rows()
        .iter()
        .map(|r| keyed[&(r.firm_id.clone(), r.year)])
        .collect();
    let flags = SuperstarFlags::from_superstars(&panel, stars.iter().map(String::as_str));
    Ok(EndogenousSample {
        panel,
        flags,
        phi,
        alpha: cfg.alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exposure_and_instrument_follow_the_design() {
        let s = simulate_endogenous(&EndogenousConfig::default()).unwrap();
        let f = s.frame().unwrap();
        let h = f.numeric_col("hspill").unwrap();
        let z = f.numeric_col("lab_bartik").unwrap();
        // shares are clamped to [1, 99]; recomputing them from outputs may land an ulp outside
        let bad: Vec<_> = h
            .iter()
            .filter(|v| !v.is_some_and(|v| (1.0 - 1e-9..=99.0 + 1e-9).contains(&v)))
            .take(5)
            .collect();
        assert!(bad.is_empty(), "{bad:?}");
        // no growth in the first year, so the instrument is missing there
        let first = s.panel.years().into_iter().next().unwrap();
        for (r, v) in s.panel.rows().iter().zip(z) {
            assert_eq!(v.is_none(), r.year == first);
        }
    }
}
