//! Simulated input set: the firm panel in nominal terms plus every auxiliary
//! table the pipeline reads, all drawn from the manifest seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superstar_core::bartik::TariffTable;
use superstar_core::model::{simulate_panel, GroundTruth, ModelParams, SimPanelConfig};
use superstar_core::panel::{DeflatorTable, Field, Panel};
use superstar_core::Result;

/// Stream reserved for the auxiliary tables so they never share draws with
/// the firm streams.
const AUX_STREAM: u64 = 1 << 40;
pub const DEFLATOR_BASE_YEAR: i32 = 2000;
/// Years before this offset from the first panel year have no road data.
const ROAD_DATA_LAG: i32 = 2;

pub struct SimulatedInputs {
    /// Nominal panel, i.e. real simulator output inflated by the deflators.
    pub panel: Panel,
    pub truth: GroundTruth,
    pub deflators: DeflatorTable,
    pub tariffs: TariffTable,
    /// `province,year,road_km,area_km2` rows.
    pub regions: Vec<(String, i32, Option<f64>, f64)>,
}

pub fn simulate_inputs(cfg: &SimPanelConfig, params: &ModelParams) -> Result<SimulatedInputs> {
    let (real, truth) = simulate_panel(cfg, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(AUX_STREAM);
    let years = cfg.years();
    let last = years.end - 1;

    let sector2: BTreeSet<String> = cfg.sector_codes().iter().map(|s| s[..2].to_string()).collect();
    let mut defl = BTreeMap::new();
    for s in &sector2 {
        let inflation: f64 = rng.random_range(0.02..0.08);
        for y in DEFLATOR_BASE_YEAR.min(years.start)..=last {
            let v = if y == DEFLATOR_BASE_YEAR {
                100.0
            } else {
                100.0 * (1.0 + inflation).powi(y - DEFLATOR_BASE_YEAR)
            };
            defl.insert((s.clone(), y), v);
        }
    }
    let deflators = DeflatorTable::new(defl, DEFLATOR_BASE_YEAR)?;

    let mut tariffs = BTreeMap::new();
    for s in cfg.sector_codes() {
        let start: f64 = rng.random_range(10.0..30.0);
        let cut: f64 = rng.random_range(0.2..1.2);
        for y in years.start - 1..=last {
            let t = f64::from(y - years.start + 1);
            let v: f64 = start - cut * t + rng.random_range(-0.5..0.5);
            tariffs.insert((s.clone(), y), v.max(0.0));
        }
    }
    let tariffs = TariffTable::new(tariffs)?;

    let mut regions = Vec::new();
    for p in cfg.provinces() {
        let area: f64 = rng.random_range(5_000.0..100_000.0);
        let density: f64 = rng.random_range(0.1..0.8);
        let growth: f64 = rng.random_range(0.0..0.04);
        for y in years.clone() {
            let road =
                (y >= years.start + ROAD_DATA_LAG).then(|| density * area * (1.0 + growth).powi(y - years.start));
            regions.push((p.clone(), y, road, area));
        }
    }

    let mut rows = real.into_rows();
    for r in &mut rows {
        let idx = deflators
            .index(&r.sector2, r.year)
            .expect("every simulated sector-year has an index");
        for f in Field::MONETARY {
            let v = f.get(r).map(|v| v * idx / 100.0);
            f.set(r, v);
        }
    }
    Ok(SimulatedInputs {
        panel: Panel::new(rows)?,
        truth,
        deflators,
        tariffs,
        regions,
    })
}

/// Headline numbers printed after a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub firms: usize,
    pub firm_years: usize,
    pub superstar_share: f64,
    /// Mean over years of entrants / firms present.
    pub entry_rate: f64,
    /// Mean over years of firms absent next year / firms present.
    pub exit_rate: f64,
}

pub fn summarize(panel: &Panel, truth: &GroundTruth) -> Summary {
    let firms = panel.firms();
    let mut present: BTreeMap<i32, BTreeSet<&str>> = BTreeMap::new();
    for r in panel.rows() {
        present.entry(r.year).or_default().insert(&r.firm_id);
    }
    let years: Vec<i32> = present.keys().copied().collect();
    let (mut entry, mut exit) = (Vec::new(), Vec::new());
    for w in years.windows(2) {
        let (a, b) = (&present[&w[0]], &present[&w[1]]);
        entry.push(b.difference(a).count() as f64 / b.len() as f64);
        exit.push(a.difference(b).count() as f64 / a.len() as f64);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Summary {
        firms: firms.len(),
        firm_years: panel.len(),
        superstar_share: truth.superstars.len() as f64 / firms.len().max(1) as f64,
        entry_rate: mean(&entry),
        exit_rate: mean(&exit),
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<18}{:>12}", "firms", self.firms)?;
        writeln!(f, "{:<18}{:>12}", "firm-years", self.firm_years)?;
        writeln!(f, "{:<18}{:>12.4}", "superstar share", self.superstar_share)?;
        writeln!(f, "{:<18}{:>12.4}", "entry rate", self.entry_rate)?;
        write!(f, "{:<18}{:>12.4}", "exit rate", self.exit_rate)
    }
}
