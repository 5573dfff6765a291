//! Static (mean plus covariance) and dynamic (survivor, entrant, exiter)
//! decompositions of output-share-weighted log productivity.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// Label of the universe containing every firm.
pub const OVERALL: &str = "overall";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t1: i32,
    pub t2: i32,
    #[serde(default = "default_true")]
    pub continuity_required: bool,
}

fn default_true() -> bool {
    true
}

impl WindowSpec {
    pub fn new(t1: i32, t2: i32) -> Self {
        WindowSpec {
            t1,
            t2,
            continuity_required: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1 >= self.t2 {
            return Err(Error::config(
                "window",
                format!("t1 ({}) must precede t2 ({})", self.t1, self.t2),
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.t1, self.t2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Transition {
    Survivor,
    /// Present at `t1` without qualifying as a survivor. A firm present at
    /// both endpoints with a gap in between carries this label and also
    /// enters the `t2` side of the decomposition as an entrant.
    Exiter,
    /// Present at `t2` only.
    Entrant,
    Other,
}

pub fn classify_transitions(panel: &Panel, window: &WindowSpec) -> BTreeMap<String, Transition> {
    panel
        .firms()
        .into_iter()
        .map(|(firm, idx)| {
            let years: BTreeSet<i32> = idx.iter().map(|&i| panel.rows()[i].year).collect();
            (firm.to_string(), transition(&years, window))
        })
        .collect()
}

fn transition(years: &BTreeSet<i32>, w: &WindowSpec) -> Transition {
    let (a, b) = (years.contains(&w.t1), years.contains(&w.t2));
    let continuous = !w.continuity_required || (w.t1..=w.t2).all(|y| years.contains(&y));
    match (a, b) {
        (true, true) if continuous => Transition::Survivor,
        (true, _) => Transition::Exiter,
        (false, true) => Transition::Entrant,
        (false, false) => Transition::Other,
    }
}

/// Share-weighted statistics of one set of firms inside a universe.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GroupStats {
    pub n_firms: usize,
    /// Output share of the set within the universe.
    pub share: f64,
    /// Unweighted mean productivity.
    pub mean: f64,
    /// `Σ (s_i − 1/n)(φ_i − φ̄)` with shares renormalized inside the set.
    pub covariance: f64,
}

impl GroupStats {
    /// Share-weighted productivity of the set; 0 for an empty set.
    pub fn aggregate(&self) -> f64 {
        self.mean + self.covariance
    }

    /// `members` holds `(output, phi)`; `universe_output` is the universe total.
    fn compute(members: &[(f64, f64)], universe_output: f64) -> Self {
        let n = members.len();
        if n == 0 {
            return GroupStats::default();
        }
        let total: f64 = members.iter().map(|m| m.0).sum();
        let nf = n as f64;
        let mean = members.iter().map(|m| m.1).sum::<f64>() / nf;
        let covariance = members
            .iter()
            .map(|&(y, phi)| (y / total - 1.0 / nf) * (phi - mean))
            .sum();
        GroupStats {
            n_firms: n,
            share: total / universe_output,
            mean,
            covariance,
        }
    }
}

/// Output and productivity of the usable rows of one year, by firm.
fn year_slice<'a>(panel: &'a Panel, phi: &[Option<f64>], year: i32) -> (BTreeMap<&'a str, (f64, f64)>, usize) {
    let mut out = BTreeMap::new();
    let mut excluded = 0;
    for (r, p) in panel.rows().iter().zip(phi) {
        if r.year != year {
            continue;
        }
        match (r.output, p) {
            (Some(y), Some(p)) if y > 0.0 && y.is_finite() && p.is_finite() => {
                out.insert(r.firm_id.as_str(), (y, *p));
            }
            _ => excluded += 1,
        }
    }
    (out, excluded)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpStatic {
    pub year: i32,
    /// Output-share-weighted mean productivity Φ.
    pub aggregate: f64,
    pub overall: GroupStats,
    /// Group form: `Σ Sh(ψ)[φ̄(ψ) + cov(ψ)]` reproduces `aggregate`.
    pub groups: BTreeMap<String, GroupStats>,
    pub excluded: usize,
    pub diagnostics: Vec<String>,
}

/// Static decomposition at `year`. `groups` assigns firms to labels; firms
/// without a label are left out of the group form with a diagnostic.
pub fn op_static(
    panel: &Panel,
    phi: &[Option<f64>],
    year: i32,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<OpStatic> {
    let (slice, excluded) = year_slice(panel, phi, year);
    let total: f64 = slice.values().map(|m| m.0).sum();
    if slice.is_empty() || !(total > 0.0) {
        return Err(Error::InsufficientData(format!(
            "no output with productivity in {year}"
        )));
    }
    let members: Vec<(f64, f64)> = slice.values().copied().collect();
    let overall = GroupStats::compute(&members, total);
    let aggregate = members.iter().map(|&(y, p)| y / total * p).sum();

    let mut by_group: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    if let Some(labels) = groups {
        let mut unlabeled = 0;
        for (firm, m) in &slice {
            match labels.get(*firm) {
                Some(g) => by_group.entry(g.clone()).or_default().push(*m),
                None => unlabeled += 1,
            }
        }
        if unlabeled > 0 {
            diagnostics.push(format!("{unlabeled} firms in {year} carry no group label"));
        }
        let present: BTreeSet<&String> = by_group.keys().collect();
        for g in labels.values().collect::<BTreeSet<_>>() {
            if !present.contains(g) {
                diagnostics.push(format!("group {g} has no firms in {year}; omitted"));
            }
        }
    }
    Ok(OpStatic {
        year,
        aggregate,
        overall,
        groups: by_group
            .into_iter()
            .map(|(g, m)| {
                let s = GroupStats::compute(&m, total);
                (g, s)
            })
            .collect(),
        excluded,
        diagnostics,
    })
}

/// Change in Φ between the endpoints split into the change of the unweighted
/// mean and the change of the covariance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpChange {
    pub window: WindowSpec,
    pub universe: String,
    pub aggregate_change: f64,
    pub plant_improvement: f64,
    pub reallocation: f64,
}

/// Static decomposition of the change over each universe: `overall` plus one
/// universe per distinct label, with shares renormalized inside it.
pub fn op_change(
    panel: &Panel,
    phi: &[Option<f64>],
    window: &WindowSpec,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<Vec<OpChange>> {
    window.validate()?;
    universes(groups)
        .into_par_iter()
        .map(|u| {
            let stats = |year| -> Result<GroupStats> {
                let (slice, _) = year_slice(panel, phi, year);
                let m: Vec<(f64, f64)> = slice
                    .iter()
                    .filter(|(f, _)| in_universe(f, &u, groups))
                    .map(|(_, m)| *m)
                    .collect();
                let total: f64 = m.iter().map(|x| x.0).sum();
                if !(total > 0.0) {
                    return Err(Error::InsufficientData(format!("universe {u} has no output in {year}")));
                }
                Ok(GroupStats::compute(&m, total))
            };
            let (a, b) = (stats(window.t1)?, stats(window.t2)?);
            Ok(OpChange {
                window: *window,
                universe: u.clone(),
                aggregate_change: b.aggregate() - a.aggregate(),
                plant_improvement: b.mean - a.mean,
                reallocation: b.covariance - a.covariance,
            })
        })
        .collect()
}

fn universes(groups: Option<&BTreeMap<String, String>>) -> Vec<String> {
    let mut u = vec![OVERALL.to_string()];
    if let Some(g) = groups {
        u.extend(g.values().cloned().collect::<BTreeSet<_>>());
    }
    u
}

fn in_universe(firm: &str, universe: &str, groups: Option<&BTreeMap<String, String>>) -> bool {
    universe == OVERALL || groups.and_then(|g| g.get(firm)).is_some_and(|g| g == universe)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompResult {
    pub window: WindowSpec,
    pub universe: String,
    pub phi_t1: f64,
    pub phi_t2: f64,
    pub aggregate_change: f64,
    pub survivors_t1: GroupStats,
    pub survivors_t2: GroupStats,
    pub exiters: GroupStats,
    pub entrants: GroupStats,
    /// Δφ̄ among survivors.
    pub plant_improvement: f64,
    /// Δcov among survivors.
    pub within_reallocation: f64,
    pub entrant_mean: f64,
    pub entrant_cov: f64,
    pub exiter_mean: f64,
    pub exiter_cov: f64,
    /// `aggregate_change` minus the sum of the six terms.
    pub residual_check: f64,
    /// Firms dropped for missing productivity or output at an endpoint.
    pub excluded_firms: usize,
}

impl DecompResult {
    pub fn entrant_term(&self) -> f64 {
        self.entrant_mean + self.entrant_cov
    }

    pub fn exiter_term(&self) -> f64 {
        self.exiter_mean + self.exiter_cov
    }

    pub fn between_reallocation(&self) -> f64 {
        self.entrant_term() + self.exiter_term()
    }

    pub fn components_sum(&self) -> f64 {
        self.plant_improvement
            + self.within_reallocation
            + self.entrant_mean
            + self.entrant_cov
            + self.exiter_mean
            + self.exiter_cov
    }
}

/// Dynamic decomposition over `overall` and, when `groups` is given, over each
/// labelled universe.
pub fn mp_dynamic(
    panel: &Panel,
    phi: &[Option<f64>],
    window: &WindowSpec,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<Vec<DecompResult>> {
    window.validate()?;
    let labels = classify_transitions(panel, window);
    let (s1, _) = year_slice(panel, phi, window.t1);
    let (s2, _) = year_slice(panel, phi, window.t2);
    // a firm with a row but no usable values at an endpoint leaves the window
    let mut dropped: BTreeSet<&str> = BTreeSet::new();
    for (r, p) in panel.rows().iter().zip(phi) {
        if (r.year == window.t1 || r.year == window.t2)
            && !(r.output.is_some_and(|y| y > 0.0 && y.is_finite()) && p.is_some_and(f64::is_finite))
        {
            dropped.insert(r.firm_id.as_str());
        }
    }
    universes(groups)
        .into_par_iter()
        .map(|u| {
            let keep = |f: &&str| !dropped.contains(f) && in_universe(f, &u, groups);
            let side = |slice: &BTreeMap<&str, (f64, f64)>| {
                let mut surv = Vec::new();
                let mut rest = Vec::new();
                for (f, m) in slice.iter().filter(|(f, _)| keep(f)) {
                    if labels[*f] == Transition::Survivor {
                        surv.push(*m);
                    } else {
                        rest.push(*m);
                    }
                }
                (surv, rest)
            };
            let (sv1, ex) = side(&s1);
            let (sv2, en) = side(&s2);
            let total = |a: &[(f64, f64)], b: &[(f64, f64)]| a.iter().chain(b).map(|m| m.0).sum::<f64>();
            let (y1, y2) = (total(&sv1, &ex), total(&sv2, &en));
            if !(y1 > 0.0) || !(y2 > 0.0) {
                return Err(Error::InsufficientData(format!(
                    "universe {u}: zero aggregate output at a window endpoint ({})",
                    window.label()
                )));
            }
            let direct =
                |a: &[(f64, f64)], b: &[(f64, f64)], y: f64| a.iter().chain(b).map(|&(o, p)| o / y * p).sum::<f64>();
            let (phi_t1, phi_t2) = (direct(&sv1, &ex, y1), direct(&sv2, &en, y2));
            let g_s1 = GroupStats::compute(&sv1, y1);
            let g_x = GroupStats::compute(&ex, y1);
            let g_s2 = GroupStats::compute(&sv2, y2);
            let g_e = GroupStats::compute(&en, y2);
            let mut r = DecompResult {
                window: *window,
                universe: u.clone(),
                phi_t1,
                phi_t2,
                aggregate_change: phi_t2 - phi_t1,
                survivors_t1: g_s1,
                survivors_t2: g_s2,
                exiters: g_x,
                entrants: g_e,
                plant_improvement: g_s2.mean - g_s1.mean,
                within_reallocation: g_s2.covariance - g_s1.covariance,
                entrant_mean: g_e.share * (g_e.mean - g_s2.mean),
                entrant_cov: g_e.share * (g_e.covariance - g_s2.covariance),
                exiter_mean: g_x.share * (g_s1.mean - g_x.mean),
                exiter_cov: g_x.share * (g_s1.covariance - g_x.covariance),
                residual_check: 0.0,
                excluded_firms: dropped.iter().filter(|f| in_universe(f, &u, groups)).count(),
            };
            r.residual_check = r.aggregate_change - r.components_sum();
            Ok(r)
        })
        .collect()
}

/// One reported line of a decomposition table: the components and their
/// shares of the aggregate change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    /// `static` or `dynamic`.
    pub kind: String,
    pub window: String,
    pub group: String,
    pub aggregate_change: f64,
    pub plant_improvement: f64,
    /// Covariance change (among survivors for the dynamic form).
    pub within_reallocation: f64,
    /// Entrant plus exiter terms; absent in the static form.
    pub exiter_entrant_reallocation: Option<f64>,
    pub entrant_term: Option<f64>,
    pub exiter_term: Option<f64>,
}

impl ReportRow {
    /// Row whose aggregate is the sum of the given components.
    pub fn from_components(
        kind: &str,
        window: &str,
        group: &str,
        plant_improvement: f64,
        within_reallocation: f64,
        exiter_entrant_reallocation: Option<f64>,
    ) -> Self {
        ReportRow {
            kind: kind.into(),
            window: window.into(),
            group: group.into(),
            aggregate_change: plant_improvement + within_reallocation + exiter_entrant_reallocation.unwrap_or(0.0),
            plant_improvement,
            within_reallocation,
            exiter_entrant_reallocation,
            entrant_term: None,
            exiter_term: None,
        }
    }

    /// `component / aggregate_change`, `None` when the aggregate is zero.
    /// Ratios blow up and may flip sign as the aggregate approaches zero.
    pub fn share(&self, component: f64) -> Option<f64> {
        (self.aggregate_change != 0.0).then(|| component / self.aggregate_change)
    }

    pub fn residual(&self) -> f64 {
        self.aggregate_change
            - self.plant_improvement
            - self.within_reallocation
            - self.exiter_entrant_reallocation.unwrap_or(0.0)
    }
}

impl From<&DecompResult> for ReportRow {
    fn from(r: &DecompResult) -> Self {
        ReportRow {
            kind: "dynamic".into(),
            window: r.window.label(),
            group: r.universe.clone(),
            aggregate_change: r.aggregate_change,
            plant_improvement: r.plant_improvement,
            within_reallocation: r.within_reallocation,
            exiter_entrant_reallocation: Some(r.between_reallocation()),
            entrant_term: Some(r.entrant_term()),
            exiter_term: Some(r.exiter_term()),
        }
    }
}

impl From<&OpChange> for ReportRow {
    fn from(r: &OpChange) -> Self {
        ReportRow {
            kind: "static".into(),
            window: r.window.label(),
            group: r.universe.clone(),
            aggregate_change: r.aggregate_change,
            plant_improvement: r.plant_improvement,
            within_reallocation: r.reallocation,
            exiter_entrant_reallocation: None,
            entrant_term: None,
            exiter_term: None,
        }
    }
}

fn fmt_f(v: f64) -> String {
    // adding zero folds -0 into 0
    format!("{:.12e}", v + 0.0)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

pub const REPORT_COLUMNS: [&str; 13] = [
    "kind",
    "window",
    "group",
    "aggregate_change",
    "plant_improvement",
    "within_reallocation",
    "exiter_entrant_reallocation",
    "entrant_term",
    "exiter_term",
    "share_plant_improvement",
    "share_within_reallocation",
    "share_exiter_entrant_reallocation",
    "residual_check",
];

pub fn write_report_csv<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(REPORT_COLUMNS)?;
    for r in rows {
        wr.write_record([
            r.kind.clone(),
            r.window.clone(),
            r.group.clone(),
            fmt_f(r.aggregate_change),
            fmt_f(r.plant_improvement),
            fmt_f(r.within_reallocation),
            fmt_opt(r.exiter_entrant_reallocation),
            fmt_opt(r.entrant_term),
            fmt_opt(r.exiter_term),
            fmt_opt(r.share(r.plant_improvement)),
            fmt_opt(r.share(r.within_reallocation)),
            fmt_opt(r.exiter_entrant_reallocation.and_then(|c| r.share(c))),
            fmt_f(r.residual()),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<decomposition csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::fixtures::row;

    fn panel_of(spec: &[(&str, i32, f64)]) -> Panel {
        Panel::new(spec.iter().map(|&(f, y, o)| row(f, y, "101", "P01", o)).collect()).unwrap()
    }

    #[test]
    fn equal_shares_have_zero_covariance() {
        let p = panel_of(&[("a", 2001, 1.0), ("b", 2001, 1.0)]);
        let s = op_static(&p, &[Some(1.0), Some(3.0)], 2001, None).unwrap();
        assert!((s.aggregate - 2.0).abs() < 1e-15);
        assert!(s.overall.covariance.abs() < 1e-15);
    }

    #[test]
    fn unequal_shares_covariance_by_hand() {
        let p = panel_of(&[("a", 2001, 3.0), ("b", 2001, 1.0)]);
        let s = op_static(&p, &[Some(3.0), Some(1.0)], 2001, None).unwrap();
        assert!((s.aggregate - 2.5).abs() < 1e-15);
        assert!((s.overall.mean - 2.0).abs() < 1e-15);
        assert!((s.overall.covariance - 0.5).abs() < 1e-15);
    }

    #[test]
    fn transition_labels() {
        let w = WindowSpec::new(2001, 2003);
        let all: BTreeSet<i32> = [2001, 2002, 2003].into();
        let gap: BTreeSet<i32> = [2001, 2003].into();
        let late: BTreeSet<i32> = [2002, 2003].into();
        let mid: BTreeSet<i32> = [2002].into();
        assert_eq!(transition(&all, &w), Transition::Survivor);
        assert_eq!(transition(&gap, &w), Transition::Exiter);
        assert_eq!(transition(&late, &w), Transition::Entrant);
        assert_eq!(transition(&mid, &w), Transition::Other);
        let loose = WindowSpec {
            continuity_required: false,
            ..w
        };
        assert_eq!(transition(&gap, &loose), Transition::Survivor);
        assert_eq!(
            transition(&[2001, 2002].into(), &WindowSpec::new(2001, 2002)),
            Transition::Survivor
        );
        assert_eq!(
            transition(&[2002].into(), &WindowSpec::new(2001, 2002)),
            Transition::Entrant
        );
    }

    #[test]
    fn window_must_be_ordered() {
        assert!(WindowSpec::new(2003, 2001).validate().is_err());
        assert!(WindowSpec::new(2003, 2003).validate().is_err());
    }
}
