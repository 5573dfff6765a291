//! Fixed-effect OLS and 2SLS with firm-clustered covariance, weak-instrument
//! statistics and selection weights.

pub mod assemble;
pub mod fe;
pub mod ipw;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{collinear_columns, least_squares};

pub use assemble::{cell_values, panel_frame};
pub use fe::{absorb_fixed_effects, drop_singletons, Absorbed, FeIndex, DEFAULT_TOL, MAX_SWEEPS};
pub use ipw::{ipw_weights, IpwFit};

/// Name of the intercept used when no fixed effects are absorbed.
pub const CONST_TERM: &str = "_cons";

/// Demeaned columns whose norm falls below this fraction of the raw norm are
/// treated as spanned by the fixed effects.
const ABSORBED_TOL: f64 = 1e-9;

/// Column store for regressions: numeric columns with missing values and
/// string-keyed grouping columns.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    n: usize,
    numeric: BTreeMap<String, Vec<Option<f64>>>,
    groups: BTreeMap<String, Vec<Option<String>>>,
}

impl Frame {
    pub fn new(n: usize) -> Self {
        Frame { n, ..Frame::default() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn add_numeric(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        self.check_len(name, values.len())?;
        self.numeric.insert(name.to_string(), values);
        Ok(())
    }

    pub fn add_dense(&mut self, name: &str, values: &[f64]) -> Result<()> {
        self.add_numeric(name, values.iter().map(|&v| Some(v)).collect())
    }

    pub fn add_group(&mut self, name: &str, keys: Vec<Option<String>>) -> Result<()> {
        self.check_len(name, keys.len())?;
        self.groups.insert(name.to_string(), keys);
        Ok(())
    }

    /// Adds `a × b` under the name `a_x_b` and returns that name.
    pub fn add_interaction(&mut self, a: &str, b: &str) -> Result<String> {
        let (ca, cb) = (self.numeric_col(a)?, self.numeric_col(b)?);
        let prod = ca.iter().zip(cb).map(|(x, y)| Some((*x)? * (*y)?)).collect();
        let name = interaction_name(a, b);
        self.add_numeric(&name, prod)?;
        Ok(name)
    }

    pub fn numeric_col(&self, name: &str) -> Result<&[Option<f64>]> {
        self.numeric
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Schema(format!("unknown numeric column `{name}`")))
    }

    pub fn group_col(&self, name: &str) -> Result<&[Option<String>]> {
        self.groups
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Schema(format!("unknown grouping column `{name}`")))
    }

    fn check_len(&self, name: &str, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::Schema(format!(
                "column `{name}` has {len} rows, frame has {}",
                self.n
            )));
        }
        Ok(())
    }
}

pub fn interaction_name(a: &str, b: &str) -> String {
    format!("{a}_x_{b}")
}

/// Keeps rows where `column == equals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFilter {
    pub column: String,
    pub equals: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSpec {
    pub dependent: String,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    pub exogenous: Vec<String>,
    pub fe_dims: Vec<String>,
    /// One FE per combination of `fe_dims` instead of additive dimensions.
    pub interacted_fe: bool,
    pub cluster: String,
    pub weights: Option<String>,
    pub sample_filter: Option<SampleFilter>,
    pub tol: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            dependent: String::new(),
            endogenous: Vec::new(),
            instruments: Vec::new(),
            exogenous: Vec::new(),
            fe_dims: Vec::new(),
            interacted_fe: false,
            cluster: "firm_id".into(),
            weights: None,
            sample_filter: None,
            tol: DEFAULT_TOL,
        }
    }
}

impl RegressionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dependent.is_empty() {
            return Err(Error::config("dependent", "must name a column"));
        }
        if self.instruments.len() < self.endogenous.len() {
            return Err(Error::config(
                "instruments",
                format!(
                    "{} instruments for {} endogenous regressors",
                    self.instruments.len(),
                    self.endogenous.len()
                ),
            ));
        }
        if self.cluster.is_empty() {
            return Err(Error::config("cluster", "must name a grouping column"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        let mut seen = BTreeSet::new();
        let roles = std::iter::once(&self.dependent)
            .chain(&self.endogenous)
            .chain(&self.instruments)
            .chain(&self.exogenous)
            .chain(self.weights.as_ref());
        for name in roles {
            if !seen.insert(name.as_str()) {
                return Err(Error::config(
                    "spec",
                    format!("column `{name}` appears in more than one role"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
}

impl Term {
    pub fn t_stat(&self) -> f64 {
        self.coefficient / self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstStage {
    pub endogenous: String,
    pub terms: Vec<Term>,
    /// Cluster-robust Wald F on the excluded instruments.
    pub f_excluded: f64,
    /// Homoskedastic F on the excluded instruments.
    pub f_excluded_homoskedastic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub terms: Vec<Term>,
    /// Full cluster-robust covariance, ordered as `terms`.
    pub vcov: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Parameters counted in the small-sample factor (regressors plus
    /// absorbed fixed effects).
    pub n_params: usize,
    pub dropped_missing: usize,
    pub dropped_singletons: usize,
    pub first_stage: Vec<FirstStage>,
    pub kp_wald_f: Option<f64>,
    pub cd_wald_f: Option<f64>,
    pub demeaning_iterations: usize,
    pub fe_dims: Vec<String>,
    pub cluster_var: String,
}

impl RegressionResult {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.coefficient)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.std_error)
    }
}

/// Estimation sample after filtering, listwise deletion and singleton removal,
/// with everything absorbed and weight-scaled.
struct Prepared {
    y: DVector<f64>,
    endog: DMatrix<f64>,
    exog: DMatrix<f64>,
    instr: DMatrix<f64>,
    exog_names: Vec<String>,
    clusters: Vec<usize>,
    n_clusters: usize,
    absorbed_rank: usize,
    iterations: usize,
    dropped_missing: usize,
    dropped_singletons: usize,
}

fn prepare(frame: &Frame, spec: &RegressionSpec) -> Result<Prepared> {
    spec.validate()?;
    let fetch =
        |names: &[String]| -> Result<Vec<&[Option<f64>]>> { names.iter().map(|n| frame.numeric_col(n)).collect() };
    let y_col = frame.numeric_col(&spec.dependent)?;
    let endog_cols = fetch(&spec.endogenous)?;
    let exog_cols = fetch(&spec.exogenous)?;
    let instr_cols = fetch(&spec.instruments)?;
    let w_col = spec.weights.as_deref().map(|w| frame.numeric_col(w)).transpose()?;
    let fe_cols: Vec<&[Option<String>]> = spec.fe_dims.iter().map(|d| frame.group_col(d)).collect::<Result<_>>()?;
    let cl_col = frame.group_col(&spec.cluster)?;
    let filter = spec
        .sample_filter
        .as_ref()
        .map(|f| frame.numeric_col(&f.column).map(|c| (c, f.equals)))
        .transpose()?;

    let finite = |c: &[Option<f64>], r: usize| c[r].is_some_and(f64::is_finite);
    let mut in_sample = 0usize;
    let rows: Vec<usize> = (0..frame.len())
        .filter(|&r| filter.is_none_or(|(c, v)| c[r] == Some(v)))
        .inspect(|_| in_sample += 1)
        .filter(|&r| {
            finite(y_col, r)
                && endog_cols
                    .iter()
                    .chain(&exog_cols)
                    .chain(&instr_cols)
                    .all(|c| finite(c, r))
                && w_col.is_none_or(|c| c[r].is_some_and(|w| w.is_finite() && w > 0.0))
                && fe_cols.iter().all(|c| c[r].is_some())
                && cl_col[r].is_some()
        })
        .collect();
    let dropped_missing = in_sample - rows.len();

    // grouping keys on the candidate rows
    let fe_keys: Vec<Vec<String>> = if spec.interacted_fe && !fe_cols.is_empty() {
        vec![rows
            .iter()
            .map(|&r| {
                fe_cols
                    .iter()
                    .map(|c| c[r].as_deref().unwrap())
                    .collect::<Vec<_>>()
                    .join("|")
            })
            .collect()]
    } else {
        fe_cols
            .iter()
            .map(|c| rows.iter().map(|&r| c[r].clone().unwrap()).collect())
            .collect()
    };
    let fe_refs: Vec<Vec<&str>> = fe_keys.iter().map(|k| k.iter().map(String::as_str).collect()).collect();
    let keep = if fe_refs.is_empty() {
        (0..rows.len()).collect()
    } else {
        drop_singletons(&fe_refs)
    };
    let dropped_singletons = rows.len() - keep.len();
    let rows: Vec<usize> = keep.iter().map(|&i| rows[i]).collect();
    let fe_refs: Vec<Vec<&str>> = fe_refs.iter().map(|k| keep.iter().map(|&i| k[i]).collect()).collect();
    let n = rows.len();
    if n == 0 {
        return Err(Error::InsufficientData("no observations in estimation sample".into()));
    }

    let fe = FeIndex::from_keys(&fe_refs);
    let weights: Option<Vec<f64>> = w_col.map(|c| rows.iter().map(|&r| c[r].unwrap()).collect());
    let dense = |c: &[Option<f64>]| -> Vec<f64> { rows.iter().map(|&r| c[r].unwrap()).collect() };

    let mut raw: Vec<Vec<f64>> = vec![dense(y_col)];
    raw.extend(endog_cols.iter().map(|c| dense(c)));
    raw.extend(exog_cols.iter().map(|c| dense(c)));
    raw.extend(instr_cols.iter().map(|c| dense(c)));
    let mut exog_names = spec.exogenous.clone();
    if fe.n_dims() == 0 {
        raw.push(vec![1.0; n]);
        exog_names.push(CONST_TERM.to_string());
    }
    let absorbed = absorb_fixed_effects(&raw, &fe, weights.as_deref(), spec.tol)?;

    // regressors wiped out by the fixed effects are collinear with them
    let all_names: Vec<&String> = std::iter::once(&spec.dependent)
        .chain(&spec.endogenous)
        .chain(&exog_names)
        .chain(&spec.instruments)
        .collect();
    let mut wiped = Vec::new();
    for (j, (before, after)) in raw.iter().zip(&absorbed.columns).enumerate().skip(1) {
        let nb = before.iter().map(|v| v * v).sum::<f64>().sqrt();
        let na = after.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na <= ABSORBED_TOL * nb || nb == 0.0 {
            wiped.push(all_names[j].clone());
        }
    }
    if !wiped.is_empty() {
        let instr_only = wiped.iter().all(|w| spec.instruments.contains(w));
        if instr_only {
            return Err(Error::DegenerateInstrument(format!(
                "no variation left in {} after absorbing fixed effects",
                wiped.join(", ")
            )));
        }
        return Err(Error::RankDeficient { columns: wiped });
    }

    let sw: Option<Vec<f64>> = weights.map(|w| w.iter().map(|v| v.sqrt()).collect());
    let scaled = |c: &Vec<f64>| -> Vec<f64> {
        match &sw {
            Some(s) => c.iter().zip(s).map(|(v, s)| v * s).collect(),
            None => c.clone(),
        }
    };
    let cols: Vec<Vec<f64>> = absorbed.columns.iter().map(scaled).collect();
    let matrix = |range: std::ops::Range<usize>| -> DMatrix<f64> {
        let cs = &cols[range];
        DMatrix::from_fn(n, cs.len(), |i, j| cs[j][i])
    };
    let (ne, nx, nz) = (spec.endogenous.len(), exog_names.len(), spec.instruments.len());
    let y = DVector::from_vec(cols[0].clone());
    let endog = matrix(1..1 + ne);
    let exog = matrix(1 + ne..1 + ne + nx);
    let instr = matrix(1 + ne + nx..1 + ne + nx + nz);

    let cl_keys: Vec<&str> = rows.iter().map(|&r| cl_col[r].as_deref().unwrap()).collect();
    let cl = FeIndex::from_keys(&[cl_keys]);

    Ok(Prepared {
        y,
        endog,
        exog,
        instr,
        exog_names,
        clusters: cl.ids[0].clone(),
        n_clusters: cl.n_groups[0],
        absorbed_rank: fe.absorbed_rank(),
        iterations: absorbed.iterations,
        dropped_missing,
        dropped_singletons,
    })
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows().max(b.nrows());
    let mut m = DMatrix::zeros(n, a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// CR1 cluster-robust sandwich `c · B (Σ_g s_g s_g') B` with score sums
/// `s_g = X_g' u_g` accumulated in row order and added in cluster-id order.
pub fn cluster_vcov(
    x: &DMatrix<f64>,
    bread: &DMatrix<f64>,
    resid: &DVector<f64>,
    clusters: &[usize],
    n_clusters: usize,
    n_params: usize,
) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut scores = DMatrix::<f64>::zeros(n_clusters, p);
    for i in 0..n {
        let g = clusters[i];
        for j in 0..p {
            scores[(g, j)] += x[(i, j)] * resid[i];
        }
    }
    let meat = scores.transpose() * &scores;
    let (nf, gf, kf) = (n as f64, n_clusters as f64, n_params as f64);
    let c = gf / (gf - 1.0) * (nf - 1.0) / (nf - kf);
    bread * meat * bread * c
}

fn terms_from(names: &[String], beta: &DVector<f64>, vcov: &DMatrix<f64>) -> Vec<Term> {
    names
        .iter()
        .enumerate()
        .map(|(j, n)| Term {
            name: n.clone(),
            coefficient: beta[j],
            std_error: vcov[(j, j)].max(0.0).sqrt(),
        })
        .collect()
}

fn check_dof(p: &Prepared, k: usize) -> Result<()> {
    let n = p.y.len();
    if n <= k {
        return Err(Error::InsufficientData(format!("{n} observations for {k} parameters")));
    }
    if p.n_clusters < 2 {
        return Err(Error::InsufficientData(
            "cluster-robust covariance needs at least two clusters".into(),
        ));
    }
    Ok(())
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Least squares on the absorbed design.
pub fn ols(frame: &Frame, spec: &RegressionSpec) -> Result<RegressionResult> {
    if !spec.endogenous.is_empty() {
        return Err(Error::config("endogenous", "ols takes no endogenous regressors"));
    }
    estimate(frame, spec)
}

/// Two-stage least squares; with no endogenous regressors this is `ols`.
pub fn tsls(frame: &Frame, spec: &RegressionSpec) -> Result<RegressionResult> {
    estimate(frame, spec)
}

/// OLS when `spec.endogenous` is empty, 2SLS otherwise.
pub fn estimate(frame: &Frame, spec: &RegressionSpec) -> Result<RegressionResult> {
    let p = prepare(frame, spec)?;
    let n = p.y.len();
    let x = hcat(&p.endog, &p.exog);
    let names: Vec<String> = spec.endogenous.iter().chain(&p.exog_names).cloned().collect();
    let k = x.ncols() + p.absorbed_rank;
    check_dof(&p, k)?;

    let mut first_stage = Vec::new();
    let (beta, bread, x_bread) = if spec.endogenous.is_empty() {
        let fit = least_squares(&x, &p.y, &names)?;
        (fit.beta, fit.xtx_inv, x.clone())
    } else {
        let z = hcat(&p.instr, &p.exog);
        let z_names: Vec<String> = spec.instruments.iter().chain(&p.exog_names).cloned().collect();
        let bad = collinear_columns(&z, &z_names);
        if !bad.is_empty() {
            if bad.iter().all(|b| spec.instruments.contains(b)) {
                return Err(Error::DegenerateInstrument(format!(
                    "{} carries no variation beyond the controls",
                    bad.join(", ")
                )));
            }
            return Err(Error::RankDeficient { columns: bad });
        }
        let mut x_hat = DMatrix::<f64>::zeros(n, x.ncols());
        for (e, name) in spec.endogenous.iter().enumerate() {
            let xe = p.endog.column(e).into_owned();
            let fs = first_stage_fit(&p, &z, &z_names, &xe, name)?;
            x_hat.set_column(e, &(&xe - &fs.1));
            first_stage.push(fs.0);
        }
        x_hat.columns_mut(p.endog.ncols(), p.exog.ncols()).copy_from(&p.exog);
        let fit = least_squares(&x_hat, &p.y, &names)?;
        (fit.beta, fit.xtx_inv, x_hat)
    };
    // residuals at the original regressors
    let resid = &p.y - &x * &beta;
    let vcov = cluster_vcov(&x_bread, &bread, &resid, &p.clusters, p.n_clusters, k);
    let terms = terms_from(&names, &beta, &vcov);

    let (kp, cd) = match first_stage.as_slice() {
        [fs] => (Some(fs.f_excluded), Some(fs.f_excluded_homoskedastic)),
        _ => (None, None),
    };
    Ok(RegressionResult {
        terms,
        vcov: to_rows(&vcov),
        n_obs: n,
        n_clusters: p.n_clusters,
        n_params: k,
        dropped_missing: p.dropped_missing,
        dropped_singletons: p.dropped_singletons,
        first_stage,
        kp_wald_f: kp,
        cd_wald_f: cd,
        demeaning_iterations: p.iterations,
        fe_dims: spec.fe_dims.clone(),
        cluster_var: spec.cluster.clone(),
    })
}

/// Regresses one endogenous column on instruments and exogenous controls.
/// Returns the summary and the first-stage residual.
fn first_stage_fit(
    p: &Prepared,
    z: &DMatrix<f64>,
    z_names: &[String],
    xe: &DVector<f64>,
    name: &str,
) -> Result<(FirstStage, DVector<f64>)> {
    let q = p.instr.ncols();
    let k = z.ncols() + p.absorbed_rank;
    let fit = least_squares(z, xe, z_names)?;
    let vcov = cluster_vcov(z, &fit.xtx_inv, &fit.resid, &p.clusters, p.n_clusters, k);
    let stats = weak_iv_stats(p, &fit.beta, &vcov, fit.rss(), xe, q, k)?;
    if stats.cd_wald_f < 1e-6 {
        return Err(Error::DegenerateInstrument(format!(
            "first-stage F on excluded instruments for `{name}` is {:e}",
            stats.cd_wald_f
        )));
    }
    Ok((
        FirstStage {
            endogenous: name.to_string(),
            terms: terms_from(z_names, &fit.beta, &vcov),
            f_excluded: stats.kp_wald_f,
            f_excluded_homoskedastic: stats.cd_wald_f,
        },
        fit.resid,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakIvStats {
    pub cd_wald_f: f64,
    pub kp_wald_f: f64,
}

/// Single-endogenous reductions of the rank statistics: the homoskedastic and
/// cluster-robust Wald F on the excluded instruments (the first `q`
/// coefficients).
fn weak_iv_stats(
    p: &Prepared,
    beta: &DVector<f64>,
    vcov: &DMatrix<f64>,
    rss_u: f64,
    xe: &DVector<f64>,
    q: usize,
    k: usize,
) -> Result<WeakIvStats> {
    let n = xe.len() as f64;
    let rss_r = if p.exog.ncols() == 0 {
        xe.norm_squared()
    } else {
        least_squares(&p.exog, xe, &p.exog_names)?.rss()
    };
    let cd = ((rss_r - rss_u) / q as f64) / (rss_u / (n - k as f64));

    let b = beta.rows(0, q).into_owned();
    let v = vcov.view((0, 0), (q, q)).into_owned();
    let kp = match v.clone().cholesky() {
        Some(ch) => b.dot(&ch.solve(&b)) / q as f64,
        None => {
            return Err(Error::DegenerateInstrument(
                "singular cluster-robust covariance of the excluded instruments".into(),
            ))
        }
    };
    Ok(WeakIvStats {
        cd_wald_f: cd.max(0.0),
        kp_wald_f: kp,
    })
}

/// `term,coefficient,std_error,t_stat`, optionally prefixed by a model label.
pub fn write_terms_csv<W: Write>(w: W, results: &[(&str, &RegressionResult)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["model", "term", "coefficient", "std_error", "t_stat"])?;
    for (label, res) in results {
        for t in &res.terms {
            wr.write_record([
                label.to_string(),
                t.name.clone(),
                fmt_f(t.coefficient),
                fmt_f(t.std_error),
                fmt_f(t.t_stat()),
            ])?;
        }
    }
    wr.flush().map_err(|e| Error::io("<terms csv>", e))?;
    Ok(())
}

/// `n_obs,kp_wald_f,cd_wald_f,fe_dims,cluster_var,demeaning_iterations`.
pub fn write_meta_csv<W: Write>(w: W, results: &[(&str, &RegressionResult)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "model",
        "n_obs",
        "kp_wald_f",
        "cd_wald_f",
        "fe_dims",
        "cluster_var",
        "demeaning_iterations",
    ])?;
    let opt = |v: Option<f64>| v.map(fmt_f).unwrap_or_default();
    for (label, res) in results {
        wr.write_record([
            label.to_string(),
            res.n_obs.to_string(),
            opt(res.kp_wald_f),
            opt(res.cd_wald_f),
            res.fe_dims.join(";"),
            res.cluster_var.clone(),
            res.demeaning_iterations.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<meta csv>", e))?;
    Ok(())
}

fn fmt_f(v: f64) -> String {
    // adding zero folds -0 into 0
    format!("{:.12e}", v + 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(y: &[f64], x: &[f64], clusters: &[&str]) -> Frame {
        let mut f = Frame::new(y.len());
        f.add_dense("y", y).unwrap();
        f.add_dense("x", x).unwrap();
        f.add_group("firm_id", clusters.iter().map(|c| Some(c.to_string())).collect())
            .unwrap();
        f
    }

    #[test]
    fn exact_fit_has_zero_residuals() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let f = frame(&y, &x, &["a", "a", "b", "b", "c", "c"]);
        let spec = RegressionSpec {
            dependent: "y".into(),
            exogenous: vec!["x".into()],
            ..RegressionSpec::default()
        };
        let r = ols(&f, &spec).unwrap();
        assert!((r.coefficient("x").unwrap() - 2.0).abs() < 1e-12);
        assert!(r.coefficient(CONST_TERM).unwrap().abs() < 1e-12);
        assert!(r.std_error("x").unwrap() < 1e-10);
    }

    #[test]
    fn spec_rejects_shared_roles_and_underidentification() {
        let spec = RegressionSpec {
            dependent: "y".into(),
            exogenous: vec!["y".into()],
            ..RegressionSpec::default()
        };
        assert!(spec.validate().is_err());
        let spec = RegressionSpec {
            dependent: "y".into(),
            endogenous: vec!["x".into()],
            ..RegressionSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn fe_collinear_regressor_is_named() {
        let mut f = frame(&[1.0, 2.0, 3.0, 5.0], &[1.0, 1.0, 2.0, 2.0], &["a", "b", "c", "d"]);
        f.add_group("g", ["u", "u", "v", "v"].iter().map(|s| Some(s.to_string())).collect())
            .unwrap();
        let spec = RegressionSpec {
            dependent: "y".into(),
            exogenous: vec!["x".into()],
            fe_dims: vec!["g".into()],
            ..RegressionSpec::default()
        };
        match ols(&f, &spec).unwrap_err() {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["x".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_values_are_dropped_listwise() {
        let mut f = frame(
            &[1.0, 2.0, 2.5, 4.0, 5.5],
            &[0.0, 1.0, 2.0, 3.0, 4.0],
            &["a", "b", "c", "d", "e"],
        );
        f.add_numeric("z", vec![Some(1.0), None, Some(0.0), Some(1.0), Some(2.0)])
            .unwrap();
        let spec = RegressionSpec {
            dependent: "y".into(),
            exogenous: vec!["x".into(), "z".into()],
            ..RegressionSpec::default()
        };
        let r = ols(&f, &spec).unwrap();
        assert_eq!(r.n_obs, 4);
        assert_eq!(r.dropped_missing, 1);
    }
}
