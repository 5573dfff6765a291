//! Synthetic firm-year panels with known production elasticities,
//! productivity paths and superstar spillovers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};
use crate::panel::{FirmYear, IOTable, Panel, ProvinceIslandMap};
use crate::spillovers::{bspill, fspill, hspill, SpillKind, SpilloverSeries, SuperstarFlags, UnknownSectorPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimPanelConfig {
    pub n_firms_initial: usize,
    pub n_years: usize,
    pub n_sectors: usize,
    pub n_provinces: usize,
    pub superstar_fraction: f64,
    /// `(beta_l, beta_k)`.
    pub elasticities: (f64, f64),
    pub productivity_ar1: f64,
    pub noise_sd: f64,
    pub entry_rate: f64,
    pub seed: u64,
    pub first_year: i32,
}

impl Default for SimPanelConfig {
    fn default() -> Self {
        SimPanelConfig {
            n_firms_initial: 2000,
            n_years: 15,
            n_sectors: 8,
            n_provinces: 10,
            superstar_fraction: 0.05,
            elasticities: (0.45, 0.30),
            productivity_ar1: 0.8,
            noise_sd: 0.1,
            entry_rate: 0.08,
            seed: 7,
            first_year: 2001,
        }
    }
}

impl SimPanelConfig {
    pub fn validate(&self) -> Result<()> {
        let (bl, bk) = self.elasticities;
        let checks: [(&str, bool, &str); 9] = [
            ("n_firms_initial", self.n_firms_initial >= 1, "must be at least 1"),
            ("n_years", self.n_years >= 1, "must be at least 1"),
            ("n_sectors", (1..=240).contains(&self.n_sectors), "must lie in 1..=240"),
            (
                "n_provinces",
                (1..=99).contains(&self.n_provinces),
                "must lie in 1..=99",
            ),
            (
                "superstar_fraction",
                self.superstar_fraction > 0.0 && self.superstar_fraction < 1.0,
                "must lie in (0, 1)",
            ),
            (
                "elasticities",
                bl > 0.0 && bl < 1.0 && bk > 0.0 && bk < 1.0 && bl + bk < 1.0,
                "each must lie in (0, 1) with sum below 1",
            ),
            (
                "productivity_ar1",
                self.productivity_ar1 > -1.0 && self.productivity_ar1 < 1.0,
                "must lie in (-1, 1)",
            ),
            (
                "noise_sd",
                self.noise_sd >= 0.0 && self.noise_sd.is_finite(),
                "must be >= 0",
            ),
            (
                "entry_rate",
                (0.0..1.0).contains(&self.entry_rate),
                "must lie in [0, 1)",
            ),
        ];
        for (field, ok, reason) in checks {
            if !ok {
                return Err(Error::config(field, reason));
            }
        }
        Ok(())
    }

    pub fn sector_codes(&self) -> Vec<String> {
        (0..self.n_sectors).map(sector_code).collect()
    }

    pub fn provinces(&self) -> Vec<String> {
        (0..self.n_provinces).map(|p| format!("P{:02}", p + 1)).collect()
    }

    pub fn island_map(&self) -> ProvinceIslandMap {
        let groups = self.n_provinces.min(5);
        ProvinceIslandMap {
            map: (0..self.n_provinces)
                .map(|p| {
                    (
                        format!("P{:02}", p + 1),
                        format!("I{}", p * groups / self.n_provinces + 1),
                    )
                })
                .collect(),
        }
    }

    pub fn years(&self) -> std::ops::Range<i32> {
        self.first_year..self.first_year + self.n_years as i32
    }
}

/// Three 3-digit sectors per 2-digit group: 101, 102, 103, 111, ...
pub(super) fn sector_code(s: usize) -> String {
    format!("{}{}", 10 + s / 3, s % 3 + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub firm_id: String,
    pub year: i32,
    pub true_tfp: f64,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta_l: f64,
    pub beta_k: f64,
    pub alpha: f64,
    pub tau: f64,
    pub psi: f64,
    pub seed: u64,
    /// Aligned with the emitted panel's rows.
    pub rows: Vec<TruthRow>,
    pub superstars: BTreeSet<String>,
    pub capability: BTreeMap<String, f64>,
    pub hspill: SpilloverSeries,
    pub bspill: SpilloverSeries,
    pub fspill: SpilloverSeries,
    pub io: IOTable,
}

impl GroundTruth {
    pub fn flags(&self, panel: &Panel) -> SuperstarFlags {
        SuperstarFlags::from_superstars(panel, self.superstars.iter().map(String::as_str))
    }

    /// `firm_id,year,true_tfp`
    pub fn write_tfp_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["firm_id", "year", "true_tfp"])?;
        for r in &self.rows {
            out.write_record([r.firm_id.clone(), r.year.to_string(), r.true_tfp.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<truth>", e))?;
        Ok(())
    }

    /// One-row `beta_l,beta_k,alpha,tau,psi,seed`.
    pub fn write_params_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["beta_l", "beta_k", "alpha", "tau", "psi", "seed"])?;
        out.write_record(
            [self.beta_l, self.beta_k, self.alpha, self.tau, self.psi]
                .iter()
                .map(f64::to_string)
                .chain([self.seed.to_string()]),
        )?;
        out.flush().map_err(|e| Error::io("<truth params>", e))?;
        Ok(())
    }
}

// Structural constants of the input rules; only the production elasticities,
// persistence and noise are exposed as configuration.
const CAPITAL_INIT: (f64, f64) = (2.0, 0.8);
const CAPITAL_LAW: (f64, f64, f64) = (0.4, 0.8, 0.25);
const CAPITAL_SD: f64 = 0.2;
const LABOUR_RULE: (f64, f64, f64) = (2.5, 0.6, 0.3);
const LABOUR_SD: f64 = 0.3;
const MATERIALS_RULE: (f64, f64) = (1.0, 0.6);
const IO_DENSITY: f64 = 0.3;

struct Firm {
    id: String,
    sector: usize,
    province: usize,
    entry: usize,
    lambda: f64,
    superstar: bool,
    rng: ChaCha8Rng,
    production_share: f64,
    import_share: f64,
    foreign_share: f64,
    exporter: bool,
    wage_premium: f64,
    alive: bool,
    omega: f64,
    k: f64,
    phi: f64,
}

impl Firm {
    fn new(
        idx: usize,
        width: usize,
        entry: usize,
        sector: Option<usize>,
        cfg: &SimPanelConfig,
        params: &ModelParams,
    ) -> Firm {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(idx as u64 + 1);
        let lambda = params.capability_dist.sample(&mut rng);
        let province = rng.random_range(0..cfg.n_provinces);
        let drawn_sector = rng.random_range(0..cfg.n_sectors);
        let production_share = rng.random_range(0.6..0.85);
        let import_share = rng.random_range(0.0..0.4);
        let foreign_draw: f64 = rng.random();
        let foreign_level = rng.random_range(0.1..1.0);
        let exporter = rng.random::<f64>() < 0.3;
        let wage_premium = 0.2 * rng.sample::<f64, _>(StandardNormal);
        Firm {
            id: format!("F{:0width$}", idx + 1),
            sector: sector.unwrap_or(drawn_sector),
            province,
            entry,
            lambda,
            superstar: false,
            rng,
            production_share,
            import_share,
            foreign_share: if foreign_draw < 0.2 { foreign_level } else { 0.0 },
            exporter,
            wage_premium,
            alive: true,
            omega: 0.0,
            k: 0.0,
            phi: 0.0,
        }
    }
}

struct Ctx<'a> {
    cfg: &'a SimPanelConfig,
    params: &'a ModelParams,
    sectors: &'a [String],
    provinces: &'a [String],
    islands: &'a ProvinceIslandMap,
    mu: f64,
    sd_xi: f64,
}

impl Firm {
    /// Advances one year and returns the observation; the draw count per
    /// year is fixed so streams never depend on other firms.
    fn step(
        &mut self,
        t: usize,
        year: i32,
        exposure: &HashMap<(usize, usize), (f64, f64, f64)>,
        ctx: &Ctx,
    ) -> (FirmYear, TruthRow) {
        let n = |r: &mut ChaCha8Rng| r.sample::<f64, _>(StandardNormal);
        let xi = n(&mut self.rng);
        let nu = n(&mut self.rng);
        let eta = n(&mut self.rng);
        let eps = n(&mut self.rng);
        let death: f64 = self.rng.random();

        let rho = ctx.cfg.productivity_ar1;
        let first = t == self.entry;
        self.omega = if first {
            self.lambda.ln() + ctx.params.c.ln()
        } else {
            ctx.mu + rho * (self.omega - ctx.mu) + ctx.sd_xi * xi
        };
        let spill = if self.superstar {
            0.0
        } else {
            let (h, b, f) = exposure.get(&(self.sector, self.province)).copied().unwrap_or_default();
            ctx.params.alpha * h + ctx.params.tau * b + ctx.params.psi * f
        };
        let phi_prev = self.phi;
        let phi = self.omega + spill;
        self.k = if first {
            CAPITAL_INIT.0 + CAPITAL_INIT.1 * phi + CAPITAL_SD * nu
        } else {
            CAPITAL_LAW.0 + CAPITAL_LAW.1 * self.k + CAPITAL_LAW.2 * phi_prev + CAPITAL_SD * nu
        };
        self.phi = phi;
        let k = self.k;

        let l_latent = LABOUR_RULE.0 + LABOUR_RULE.1 * phi + LABOUR_RULE.2 * k + LABOUR_SD * eta;
        let workers = l_latent.exp().round().max(1.0) as u32;
        let l = f64::from(workers).ln();
        let m = MATERIALS_RULE.0 + phi + MATERIALS_RULE.1 * k;
        let (bl, bk) = ctx.cfg.elasticities;
        let y = bl * l + bk * k + phi + ctx.cfg.noise_sd * eps;

        let materials = m.exp();
        let value_added = y.exp();
        let production = ((f64::from(workers) * self.production_share).round() as u32).min(workers);
        let sector3 = &ctx.sectors[self.sector];
        let province = &ctx.provinces[self.province];
        let row = FirmYear {
            firm_id: self.id.clone(),
            year,
            sector3: sector3.clone(),
            sector2: sector3[..2].to_string(),
            province: province.clone(),
            island: ctx.islands.island(province).unwrap_or_default().to_string(),
            output: Some(value_added + materials),
            value_added: Some(value_added),
            capital: Some(k.exp()),
            materials: Some(materials),
            energy: Some(0.1 * materials),
            workers_production: Some(production),
            workers_nonproduction: Some(workers - production),
            wage_bill: Some(f64::from(workers) * 0.05 * (0.3 * phi + self.wage_premium).exp()),
            foreign_share: Some(self.foreign_share),
            export_flag: Some(self.exporter),
            imported_materials: Some(self.import_share * materials),
        };
        if death < ctx.params.delta {
            self.alive = false;
        }
        let truth = TruthRow {
            firm_id: self.id.clone(),
            year,
            true_tfp: phi,
        };
        (row, truth)
    }
}

fn random_io(sectors: &[String], seed: u64) -> Result<IOTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let n = sectors.len();
    let mut coeffs = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            let linked = rng.random::<f64>() < IO_DENSITY;
            let v = rng.random_range(0.01..0.2);
            if k != l && linked {
                coeffs[k * n + l] = v;
            }
        }
    }
    IOTable::new(sectors.to_vec(), coeffs)
}

fn empty_series(kind: SpillKind) -> SpilloverSeries {
    SpilloverSeries {
        kind,
        values: BTreeMap::new(),
        missing: Vec::new(),
        diagnostics: Vec::new(),
    }
}

fn absorb(into: &mut SpilloverSeries, year: SpilloverSeries) {
    into.values.extend(year.values);
    into.missing.extend(year.missing);
    into.diagnostics.extend(year.diagnostics);
}

/// Simulates a panel whose non-superstar productivity responds to last
/// year's superstar presence in its market cell and linked sectors.
pub fn simulate_panel(cfg: &SimPanelConfig, params: &ModelParams) -> Result<(Panel, GroundTruth)> {
    cfg.validate()?;
    params.validate_for_simulation()?;

    let sectors = cfg.sector_codes();
    let provinces = cfg.provinces();
    let islands = cfg.island_map();
    let io = random_io(&sectors, cfg.seed)?;

    let entrants_per_year = (cfg.entry_rate * cfg.n_firms_initial as f64).round() as usize;
    let total = cfg.n_firms_initial + entrants_per_year * cfg.n_years.saturating_sub(1);
    let width = total.to_string().len().max(6);
    let mut firms: Vec<Firm> = (0..total)
        .into_par_iter()
        .map(|i| {
            if i < cfg.n_firms_initial {
                Firm::new(i, width, 0, Some(i % cfg.n_sectors), cfg, params)
            } else {
                let entry = 1 + (i - cfg.n_firms_initial) / entrants_per_year.max(1);
                Firm::new(i, width, entry, None, cfg, params)
            }
        })
        .collect();

    // top capability share per sector, ties by id
    let mut by_sector: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, f) in firms.iter().enumerate() {
        by_sector.entry(f.sector).or_default().push(i);
    }
    for idx in by_sector.values_mut() {
        idx.sort_by(|&a, &b| {
            firms[b]
                .lambda
                .total_cmp(&firms[a].lambda)
                .then(firms[a].id.cmp(&firms[b].id))
        });
        let n_top = (cfg.superstar_fraction * idx.len() as f64).ceil() as usize;
        for &i in idx.iter().take(n_top) {
            firms[i].superstar = true;
        }
    }
    let superstars: BTreeSet<String> = firms.iter().filter(|f| f.superstar).map(|f| f.id.clone()).collect();

    let (mean_ln, sd_ln) = params.capability_dist.ln_moments();
    let rho = cfg.productivity_ar1;
    let ctx = Ctx {
        cfg,
        params,
        sectors: &sectors,
        provinces: &provinces,
        islands: &islands,
        mu: mean_ln + params.c.ln(),
        sd_xi: sd_ln * (1.0 - rho * rho).sqrt(),
    };
    let sector_pos: HashMap<&str, usize> = sectors.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let province_pos: HashMap<&str, usize> = provinces.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut rows = Vec::new();
    let mut truth = Vec::new();
    let mut series = [SpillKind::H, SpillKind::B, SpillKind::F].map(empty_series);
    let mut exposure: HashMap<(usize, usize), (f64, f64, f64)> = HashMap::new();

    for (t, year) in cfg.years().enumerate() {
        let out: Vec<(FirmYear, TruthRow)> = firms
            .par_iter_mut()
            .filter(|f| f.alive && f.entry <= t)
            .map(|f| f.step(t, year, &exposure, &ctx))
            .collect();
        let (year_rows, year_truth): (Vec<FirmYear>, Vec<TruthRow>) = out.into_iter().unzip();

        let year_panel = Panel::new(year_rows)?;
        let flags = SuperstarFlags::from_superstars(&year_panel, superstars.iter().map(String::as_str));
        let h = hspill(&year_panel, &flags);
        let b = bspill(&h, &io, UnknownSectorPolicy::Error)?;
        let f = fspill(&h, &io, UnknownSectorPolicy::Error)?;
        exposure.clear();
        for (cell, hv) in &h.values {
            let key: (usize, usize) = (sector_pos[cell.sector3.as_str()], province_pos[cell.province.as_str()]);
            exposure.insert(key, (*hv, b.get(cell).unwrap_or(0.0), f.get(cell).unwrap_or(0.0)));
        }
        for (into, s) in series.iter_mut().zip([h, b, f]) {
            absorb(into, s);
        }
        rows.extend(year_panel.into_rows());
        truth.extend(year_truth);
    }

    let panel = Panel::new(rows)?;
    truth.sort_by(|a, b| a.firm_id.cmp(&b.firm_id).then(a.year.cmp(&b.year)));
    let capability = firms.iter().map(|f| (f.id.clone(), f.lambda)).collect();
    let [hs, bs, fs] = series;
    Ok((
        panel,
        GroundTruth {
            beta_l: cfg.elasticities.0,
            beta_k: cfg.elasticities.1,
            alpha: params.alpha,
            tau: params.tau,
            psi: params.psi,
            seed: cfg.seed,
            rows: truth,
            superstars,
            capability,
            hspill: hs,
            bspill: bs,
            fspill: fs,
            io,
        },
    ))
}
