//! Stage graph and the runner that executes a subset of it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::ValueEnum;
use superstar_core::bartik::{
    base_labor_share, lab_bartik_iv, loo_growth_table, tariff_bartik_iv, write_instruments, InstrumentSeries,
    RoadDensity, TariffTable,
};
use superstar_core::decomposition::{mp_dynamic, op_change, write_report_csv, ReportRow};
use superstar_core::econometrics::{
    cell_values, estimate, ipw_weights, panel_frame, write_meta_csv, write_terms_csv, Frame, RegressionResult,
};
use superstar_core::panel::{
    apply_deflators, impute_capital_regression, impute_gap_average, load_panel, write_panel, DeflatorTable, IOTable,
    ImputeMethod, Panel, ProvinceIslandMap,
};
use superstar_core::spillovers::{
    bspill, classify_superstars, controls, fspill, hspill, write_spillovers, SpilloverSeries, SuperstarFlags,
};
use superstar_core::tfp::{estimate_all, tfp_columns, TfpColumns};
use superstar_core::Error;

use crate::manifest::{RunManifest, Split};
use crate::runlog::{OutputRecord, RunLog, StageRecord, Status};
use crate::simulate::{simulate_inputs, summarize, Summary, DEFLATOR_BASE_YEAR};

pub const FAILED_MARKER: &str = "FAILED";
pub const RUN_LOG: &str = "run_log.json";
pub const INPUTS_DIR: &str = "inputs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Stage {
    Validate,
    Simulate,
    Load,
    Deflate,
    Impute,
    Classify,
    Tfp,
    Spillovers,
    Instruments,
    Regress,
    Decompose,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Validate,
        Stage::Simulate,
        Stage::Load,
        Stage::Deflate,
        Stage::Impute,
        Stage::Classify,
        Stage::Tfp,
        Stage::Spillovers,
        Stage::Instruments,
        Stage::Regress,
        Stage::Decompose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Simulate => "simulate",
            Stage::Load => "load",
            Stage::Deflate => "deflate",
            Stage::Impute => "impute",
            Stage::Classify => "classify",
            Stage::Tfp => "tfp",
            Stage::Spillovers => "spillovers",
            Stage::Instruments => "instruments",
            Stage::Regress => "regress",
            Stage::Decompose => "decompose",
        }
    }

    /// Process exit code when this stage fails.
    pub fn exit_code(self) -> i32 {
        10 + self as i32
    }

    fn depends_on(self, simulates: bool) -> Vec<Stage> {
        use Stage::*;
        match self {
            Validate => vec![],
            Simulate => vec![Validate],
            Load if simulates => vec![Simulate],
            Load => vec![Validate],
            Deflate => vec![Load],
            Impute => vec![Deflate],
            Classify | Tfp => vec![Impute],
            Spillovers | Instruments => vec![Classify],
            Regress => vec![Tfp, Spillovers, Instruments],
            Decompose => vec![Classify, Tfp],
        }
    }
}

/// Targets plus everything upstream of them, in execution order.
pub fn plan(targets: &[Stage], simulates: bool) -> Vec<Stage> {
    let mut need = BTreeSet::new();
    let mut todo: Vec<Stage> = targets.to_vec();
    todo.push(Stage::Validate);
    while let Some(s) = todo.pop() {
        if need.insert(s) {
            todo.extend(s.depends_on(simulates));
        }
    }
    need.into_iter().collect()
}

#[derive(Default)]
struct State {
    panel: Option<Panel>,
    io: Option<IOTable>,
    tariffs: Option<TariffTable>,
    deflators: Option<DeflatorTable>,
    regions: Option<RoadDensity>,
    flags: Option<SuperstarFlags>,
    tfp: Option<TfpColumns>,
    spill: Option<[SpilloverSeries; 3]>,
    instruments: Option<[Option<InstrumentSeries>; 3]>,
    summary: Option<Summary>,
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| anyhow!("{what} is not available; its stage did not run"))
}

struct StageCtx<'a> {
    out: &'a Path,
    outputs: Vec<OutputRecord>,
    warnings: Vec<String>,
}

impl StageCtx<'_> {
    fn emit(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> superstar_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).with_context(|| format!("rendering {name}"))?;
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&path, &buf).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(OutputRecord::new(name.to_string(), &buf));
        Ok(())
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }
}

pub struct RunOutcome {
    pub exit_code: i32,
    pub log: RunLog,
    pub summary: Option<Summary>,
    pub error: Option<(Stage, anyhow::Error)>,
}

/// Runs the stages needed for `targets`, writing outputs under `out`. The
/// first failing stage stops the run and leaves a `FAILED` marker next to
/// whatever was already written.
pub fn run(manifest: &RunManifest, manifest_path: &Path, out: &Path, command: &str, targets: &[Stage]) -> RunOutcome {
    let stages = plan(targets, manifest.simulates());
    let mut log = RunLog {
        command: command.to_string(),
        manifest: manifest_path.display().to_string(),
        seed: manifest.seed,
        stages: Vec::new(),
        exit_code: 0,
    };
    let mut state = State::default();
    let mut error = None;
    if let Err(e) = std::fs::create_dir_all(out) {
        let err = anyhow::Error::from(e).context(format!("creating output directory {}", out.display()));
        return RunOutcome {
            exit_code: Stage::Validate.exit_code(),
            log,
            summary: None,
            error: Some((Stage::Validate, err)),
        };
    }
    let _ = std::fs::remove_file(out.join(FAILED_MARKER));
    for stage in stages {
        let started = Instant::now();
        let mut ctx = StageCtx {
            out,
            outputs: Vec::new(),
            warnings: Vec::new(),
        };
        let result = execute(stage, manifest, &mut state, &mut ctx);
        let status = match &result {
            Ok(s) => *s,
            Err(_) => Status::Failed,
        };
        log.stages.push(StageRecord {
            stage: stage.name(),
            depends_on: stage
                .depends_on(manifest.simulates())
                .into_iter()
                .map(Stage::name)
                .collect(),
            status,
            duration_ms: started.elapsed().as_secs_f64() * 1e3,
            outputs: ctx.outputs,
            warnings: ctx.warnings,
            error: result.as_ref().err().map(|e| format!("{e:#}")),
        });
        if let Err(e) = result {
            log.exit_code = stage.exit_code();
            let marker = format!(
                "stage: {}\nexit_code: {}\nerror: {e:#}\n",
                stage.name(),
                stage.exit_code()
            );
            let _ = std::fs::write(out.join(FAILED_MARKER), marker);
            error = Some((stage, e));
            break;
        }
    }
    if let Ok(json) = serde_json::to_string_pretty(&log) {
        let _ = std::fs::write(out.join(RUN_LOG), json + "\n");
    }
    RunOutcome {
        exit_code: log.exit_code,
        log,
        summary: state.summary,
        error,
    }
}

fn execute(stage: Stage, m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    match stage {
        Stage::Validate => m.validate().map(|_| Status::Ok),
        Stage::Simulate => simulate(m, st, ctx),
        Stage::Load => load(m, st, ctx),
        Stage::Deflate => deflate(m, st, ctx),
        Stage::Impute => impute(m, st, ctx),
        Stage::Classify => classify(m, st, ctx),
        Stage::Tfp => tfp(m, st, ctx),
        Stage::Spillovers => spillovers(m, st, ctx),
        Stage::Instruments => instruments(m, st, ctx),
        Stage::Regress => regress(m, st, ctx),
        Stage::Decompose => decompose(m, st, ctx),
    }
}

fn input_file(name: &str) -> String {
    format!("{INPUTS_DIR}/{name}")
}

fn simulate(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    let section = m
        .simulate
        .as_ref()
        .ok_or_else(|| Error::config("simulate", "section is missing"))?;
    let mut cfg = section.panel.clone();
    cfg.seed = m
        .seed
        .ok_or_else(|| Error::config("seed", "required when a simulation is requested"))?;
    let sim = simulate_inputs(&cfg, &section.model)?;
    ctx.emit(&input_file("panel.csv"), |w| write_panel(&sim.panel, w))?;
    ctx.emit(&input_file("io_table.csv"), |w| sim.truth.io.write_csv(w))?;
    ctx.emit(&input_file("tariffs.csv"), |w| sim.tariffs.write_csv(w))?;
    ctx.emit(&input_file("deflators.csv"), |w| {
        let mut s = String::from("sector2,year,wpi\n");
        for ((sector, year), v) in sim.deflators.entries() {
            let _ = writeln!(s, "{sector},{year},{v}");
        }
        w.extend_from_slice(s.as_bytes());
        Ok(())
    })?;
    ctx.emit(&input_file("regions.csv"), |w| {
        let mut s = String::from("province,year,road_km,area_km2\n");
        for (p, y, road, area) in &sim.regions {
            let road = road.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{p},{y},{road},{area}");
        }
        w.extend_from_slice(s.as_bytes());
        Ok(())
    })?;
    ctx.emit(&input_file("province_island.csv"), |w| cfg.island_map().write_csv(w))?;
    ctx.emit("truth_tfp.csv", |w| sim.truth.write_tfp_csv(w))?;
    ctx.emit("truth_params.csv", |w| sim.truth.write_params_csv(w))?;
    ctx.emit("truth_spillovers.csv", |w| {
        write_spillovers(w, &sim.truth.hspill, &sim.truth.bspill, &sim.truth.fspill)
    })?;
    ctx.emit("truth_superstars.csv", |w| {
        let mut s = String::from("firm_id\n");
        for f in &sim.truth.superstars {
            let _ = writeln!(s, "{f}");
        }
        w.extend_from_slice(s.as_bytes());
        Ok(())
    })?;
    st.summary = Some(summarize(&sim.panel, &sim.truth));
    Ok(Status::Ok)
}

struct InputPaths {
    panel: PathBuf,
    io_table: PathBuf,
    tariffs: PathBuf,
    deflators: Option<(PathBuf, i32)>,
    regions: Option<PathBuf>,
    province_island: Option<PathBuf>,
}

fn input_paths(m: &RunManifest, out: &Path) -> Result<InputPaths> {
    if m.simulates() {
        let p = |n: &str| out.join(INPUTS_DIR).join(n);
        return Ok(InputPaths {
            panel: p("panel.csv"),
            io_table: p("io_table.csv"),
            tariffs: p("tariffs.csv"),
            deflators: Some((p("deflators.csv"), DEFLATOR_BASE_YEAR)),
            regions: Some(p("regions.csv")),
            province_island: Some(p("province_island.csv")),
        });
    }
    let req = |field: &str, v: &Option<PathBuf>| -> Result<PathBuf> {
        v.as_deref()
            .map(|p| m.resolve(p))
            .ok_or_else(|| Error::config(field, "must be set").into())
    };
    let inputs = &m.inputs;
    Ok(InputPaths {
        panel: req("inputs.panel", &inputs.panel)?,
        io_table: req("inputs.io_table", &inputs.io_table)?,
        tariffs: req("inputs.tariffs", &inputs.tariffs)?,
        deflators: inputs
            .deflators
            .as_deref()
            .map(|p| (m.resolve(p), inputs.deflator_base_year)),
        regions: inputs.regions.as_deref().map(|p| m.resolve(p)),
        province_island: inputs.province_island.as_deref().map(|p| m.resolve(p)),
    })
}

fn load(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    let paths = input_paths(m, ctx.out)?;
    let (mut panel, rejected) = load_panel(&paths.panel, &m.schema())?;
    if !rejected.is_empty() {
        ctx.warn(format!("{} panel rows rejected", rejected.rejected.len()));
    }
    ctx.emit("rejections.csv", |w| rejected.write_csv(w))?;
    if let Some(p) = &paths.province_island {
        let map = ProvinceIslandMap::load(p)?;
        let mut rows = panel.into_rows();
        for r in &mut rows {
            let island = map
                .island(&r.province)
                .ok_or_else(|| Error::InvalidTable(format!("province {} missing from the island map", r.province)))?;
            r.island = island.to_string();
        }
        panel = Panel::new(rows)?;
    }
    st.io = Some(IOTable::load(&paths.io_table)?);
    st.tariffs = Some(TariffTable::load(&paths.tariffs)?);
    if let Some((p, base)) = &paths.deflators {
        st.deflators = Some(DeflatorTable::load(p, *base)?);
    }
    if let Some(p) = &paths.regions {
        st.regions = Some(RoadDensity::load(p)?);
    }
    st.panel = Some(panel);
    Ok(Status::Ok)
}

fn deflate(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    if !m.stages.deflate {
        ctx.warn("deflation turned off; monetary fields used as supplied");
        return Ok(Status::Skipped);
    }
    let panel = need(&st.panel, "panel")?;
    let table = need(&st.deflators, "deflator table")?;
    let out = apply_deflators(panel, table)?;
    ctx.emit("panel_deflated.csv", |w| write_panel(&out, w))?;
    st.panel = Some(out);
    Ok(Status::Ok)
}

fn impute(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    if !m.stages.impute {
        return Ok(Status::Skipped);
    }
    let opts = &m.impute;
    let mut panel = need(&st.panel, "panel")?.clone();
    if let Some(year) = opts.gap_year {
        let (p, report) = impute_gap_average(&panel, &opts.gap_fields, year)?;
        ctx.warn(format!("gap average filled {} values in {year}", report.imputed.len()));
        if !report.unresolved.is_empty() {
            ctx.warn(format!(
                "{} gap values lack a neighbour on both sides",
                report.unresolved.len()
            ));
        }
        panel = p;
    }
    if let Some(year) = opts.capital_year {
        let (p, report) = impute_capital_regression(&panel, year, opts.capital_scope)?;
        ctx.warn(format!(
            "capital regression filled {} values in {year}",
            report.imputed.len()
        ));
        if !report.unresolved.is_empty() {
            ctx.warn(format!("{} capital values left missing", report.unresolved.len()));
        }
        panel = p;
    }
    ctx.emit("panel_clean.csv", |w| write_panel(&panel, w))?;
    ctx.emit("imputations.csv", |w| {
        let mut s = String::from("firm_id,year,field,method\n");
        for ((firm, year, field), method) in panel.imputed() {
            let method = match method {
                ImputeMethod::GapAverage => "gap_average",
                ImputeMethod::CapitalRegression => "capital_regression",
            };
            let _ = writeln!(s, "{firm},{year},{},{method}", field.name());
        }
        w.extend_from_slice(s.as_bytes());
        Ok(())
    })?;
    st.panel = Some(panel);
    Ok(Status::Ok)
}

fn classify(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    let panel = need(&st.panel, "panel")?;
    let flags = classify_superstars(panel, &m.superstar)?;
    ctx.warnings.extend(flags.diagnostics.iter().cloned());
    if flags.count() == 0 {
        ctx.warn("no firm qualifies as a superstar");
    }
    ctx.emit("superstars.csv", |w| flags.write_csv(w))?;
    st.flags = Some(flags);
    Ok(Status::Ok)
}

fn tfp(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    let panel = need(&st.panel, "panel")?;
    let set = estimate_all(panel, &m.tfp)?;
    for (s, why) in &set.skipped {
        ctx.warn(format!("sector {s} not estimated: {why}"));
    }
    for e in set.estimates.values() {
        if let Some(g) = &e.fallback_group {
            ctx.warn(format!("sector {} uses the pooled estimate of group {g}", e.sector3));
        }
        if !e.convergence.converged {
            ctx.warn(format!("sector {} did not converge", e.sector3));
        }
    }
    let cols = tfp_columns(panel, &set.estimates);
    if cols.phi_missing > 0 {
        ctx.warn(format!("{} rows without productivity", cols.phi_missing));
    }
    ctx.emit("production_estimates.csv", |w| set.write_csv(w))?;
    ctx.emit("tfp.csv", |w| {
        let mut s = String::from("firm_id,year,phi,dphi,lp,base_row\n");
        let f = |v: Option<f64>| v.map(|x| (x + 0.0).to_string()).unwrap_or_default();
        for (i, r) in panel.rows().iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.firm_id,
                r.year,
                f(cols.phi[i]),
                f(cols.dphi[i]),
                f(cols.lp[i]),
                u8::from(cols.base_row[i])
            );
        }
        w.extend_from_slice(s.as_bytes());
        Ok(())
    })?;
    st.tfp = Some(cols);
    Ok(Status::Ok)
}

fn spillovers(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    let panel = need(&st.panel, "panel")?;
    let flags = need(&st.flags, "superstar flags")?;
    let io = need(&st.io, "input-output table")?;
    let h = hspill(panel, flags);
    let b = bspill(&h, io, m.spillovers.unknown_sector)?;
    let f = fspill(&h, io, m.spillovers.unknown_sector)?;
    for s in [&h, &b, &f] {
        ctx.warnings.extend(s.diagnostics.iter().cloned());
    }
    ctx.emit("spillovers.csv", |w| write_spillovers(w, &h, &b, &f))?;
    st.spill = Some([h, b, f]);
    Ok(Status::Ok)
}

fn base_year(m: &RunManifest, panel: &Panel) -> Result<i32> {
    match m.instruments.base_year {
        Some(y) => Ok(y),
        None => panel
            .years()
            .into_iter()
            .next()
            .ok_or_else(|| Error::InsufficientData("empty panel".into()).into()),
    }
}

fn instruments(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    let panel = need(&st.panel, "panel")?;
    let flags = need(&st.flags, "superstar flags")?;
    let tariffs = need(&st.tariffs, "tariff table")?;
    let base = base_year(m, panel)?;
    let shares = base_labor_share(panel, flags, base, m.instruments.skill)?;
    let (growth, growth_diag) = loo_growth_table(panel);
    let lab = lab_bartik_iv(&shares, &growth);
    let tarr = tariff_bartik_iv(panel, flags, tariffs, base)?;
    let road = st.regions.as_ref().map(|r| r.for_cells(panel.cells().keys()));
    ctx.warnings.extend(shares.diagnostics.iter().cloned());
    ctx.warnings.extend(growth_diag);
    for s in [Some(&lab), Some(&tarr), road.as_ref()].into_iter().flatten() {
        ctx.warnings.extend(s.diagnostics.iter().cloned());
    }
    ctx.emit("instruments.csv", |w| {
        write_instruments(w, panel.cells().keys(), &lab, &tarr, road.as_ref())
    })?;
    st.instruments = Some([Some(lab), Some(tarr), road]);
    Ok(Status::Ok)
}

/// Every column a regression may name: productivity outcomes, the three
/// exposures, the instruments, firm controls and, on request, IPW weights.
fn regression_frame(m: &RunManifest, st: &State, ctx: &mut StageCtx) -> Result<Frame> {
    let panel = need(&st.panel, "panel")?;
    let flags = need(&st.flags, "superstar flags")?;
    let tfp = need(&st.tfp, "productivity")?;
    let [h, b, f] = need(&st.spill, "spillovers")?;
    let [lab, tarr, road] = need(&st.instruments, "instruments")?;
    let mut frame = panel_frame(panel, flags)?;
    frame.add_numeric("phi", tfp.phi.clone())?;
    let dphi = tfp
        .dphi
        .iter()
        .zip(&tfp.base_row)
        .map(|(v, base)| if *base { None } else { *v })
        .collect();
    frame.add_numeric("dphi", dphi)?;
    frame.add_numeric("lp", tfp.lp.clone())?;
    for (name, s) in [("hspill", h), ("bspill", b), ("fspill", f)] {
        frame.add_numeric(name, cell_values(panel, &s.values))?;
    }
    for (name, s) in [("lab_bartik", lab), ("tarr_bartik", tarr), ("road_density", road)] {
        if let Some(s) = s {
            frame.add_numeric(name, cell_values(panel, &s.values))?;
        }
    }
    let c = controls(panel, flags);
    frame.add_numeric("hhi", c.hhi)?;
    frame.add_numeric("import_intensity", c.import_intensity)?;
    frame.add_numeric("absorptive", c.absorptive)?;
    frame.add_numeric("foreign", c.foreign)?;
    frame.add_numeric("exporter", c.exporter)?;
    if m.regressions.iter().any(|r| r.spec.weights.as_deref() == Some("ipw")) {
        let fit = ipw_weights(&frame, &m.selection.indicator, &m.selection.controls)?;
        if fit.n_trimmed > 0 {
            ctx.warn(format!("{} IPW weights capped at {}", fit.n_trimmed, fit.trim_cap));
        }
        frame.add_numeric("ipw", fit.weights)?;
    }
    Ok(frame)
}

fn regress(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    if m.regressions.is_empty() {
        ctx.warn("no regressions configured");
    }
    let mut frame = regression_frame(m, st, ctx)?;
    let mut results: Vec<(String, RegressionResult)> = Vec::new();
    for r in &m.regressions {
        let mut spec = r.spec.clone();
        for d in &r.interact_with {
            let pairs: Vec<(String, String)> = r
                .spec
                .endogenous
                .iter()
                .cloned()
                .zip(r.spec.instruments.iter().cloned())
                .collect();
            for (e, z) in pairs {
                for (col, list) in [(e, &mut spec.endogenous), (z, &mut spec.instruments)] {
                    let name = superstar_core::econometrics::interaction_name(&col, d);
                    if frame.numeric_col(&name).is_err() {
                        frame.add_interaction(&col, d)?;
                    }
                    list.push(name);
                }
            }
        }
        let res = estimate(&frame, &spec).with_context(|| format!("regression `{}`", r.name))?;
        if res.dropped_singletons > 0 {
            ctx.warn(format!("{}: {} singleton rows dropped", r.name, res.dropped_singletons));
        }
        if let Some(kp) = res.kp_wald_f {
            if kp < 10.0 {
                ctx.warn(format!("{}: weak first stage (KP F = {kp:.3})", r.name));
            }
        }
        results.push((r.name.clone(), res));
    }
    let named: Vec<(&str, &RegressionResult)> = results.iter().map(|(n, r)| (n.as_str(), r)).collect();
    ctx.emit("regressions.csv", |w| write_terms_csv(w, &named))?;
    ctx.emit("regression_meta.csv", |w| write_meta_csv(w, &named))?;
    Ok(Status::Ok)
}

fn labels(flags: &SuperstarFlags, split: Split) -> BTreeMap<String, String> {
    flags
        .firms
        .iter()
        .map(|(id, f)| {
            let label = match (split, f.superstar, f.foreign) {
                (_, false, _) => "non_superstar",
                (Split::General, true, _) => "superstar",
                (Split::Ownership, true, Some(true)) => "foreign",
                (Split::Ownership, true, _) => "domestic",
            };
            (id.clone(), label.to_string())
        })
        .collect()
}

fn decompose(m: &RunManifest, st: &mut State, ctx: &mut StageCtx) -> Result<Status> {
    let panel = need(&st.panel, "panel")?;
    let flags = need(&st.flags, "superstar flags")?;
    let phi = &need(&st.tfp, "productivity")?.phi;
    if m.windows.is_empty() {
        ctx.warn("no decomposition windows configured");
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut seen = BTreeSet::new();
    let splits: Vec<Option<BTreeMap<String, String>>> = if m.decomposition.splits.is_empty() {
        vec![None]
    } else {
        m.decomposition.splits.iter().map(|s| Some(labels(flags, *s))).collect()
    };
    for w in &m.windows {
        for groups in &splits {
            let mut add = |row: ReportRow| {
                if seen.insert((row.kind.clone(), row.window.clone(), row.group.clone())) {
                    rows.push(row);
                }
            };
            for d in mp_dynamic(panel, phi, w, groups.as_ref())? {
                if d.excluded_firms > 0 {
                    ctx.warn(format!(
                        "{} {}: {} firms without productivity at an endpoint",
                        w.label(),
                        d.universe,
                        d.excluded_firms
                    ));
                }
                add(ReportRow::from(&d));
            }
            for c in op_change(panel, phi, w, groups.as_ref())? {
                add(ReportRow::from(&c));
            }
        }
    }
    ctx.emit("decomposition.csv", |w| write_report_csv(w, &rows))?;
    Ok(Status::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_pulls_in_upstream_stages_only() {
        let p = plan(&[Stage::Decompose], false);
        assert_eq!(
            p,
            vec![
                Stage::Validate,
                Stage::Load,
                Stage::Deflate,
                Stage::Impute,
                Stage::Classify,
                Stage::Tfp,
                Stage::Decompose
            ]
        );
        let p = plan(&[Stage::Load], true);
        assert_eq!(p, vec![Stage::Validate, Stage::Simulate, Stage::Load]);
    }

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let codes: BTreeSet<i32> = Stage::ALL.iter().map(|s| s.exit_code()).collect();
        assert_eq!(codes.len(), Stage::ALL.len());
        assert!(codes.iter().all(|&c| c > 2));
    }
}
