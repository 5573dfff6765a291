use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use superstar_core::econometrics::*;
use superstar_core::Error;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random fixture with two regressors, an instrument, FE dimensions "a", "b",
/// "c" and clusters of roughly four rows.
#[allow(clippy::needless_range_loop)]
fn fixture(rng: &mut ChaCha8Rng, n: usize, groups: [usize; 3]) -> Frame {
    let mut f = Frame::new(n);
    let keys: Vec<Vec<usize>> = groups
        .iter()
        .map(|&g| (0..n).map(|_| rng.random_range(0..g)).collect())
        .collect();
    let fe_val = |d: usize, k: usize| ((d + 1) * (k + 3)) as f64 * 0.37;
    let (mut x1, mut x2, mut z, mut y, mut w) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let shift: f64 = (0..3).map(|d| fe_val(d, keys[d][i])).sum();
        let zi = normal(rng) + 0.3 * shift;
        let a = 0.8 * zi + normal(rng) + 0.2 * shift;
        let b = normal(rng);
        x1.push(a);
        x2.push(b);
        z.push(zi);
        y.push(1.5 * a - 0.7 * b + shift + normal(rng));
        w.push(rng.random_range(0.5..2.0));
    }
    f.add_dense("y", &y).unwrap();
    f.add_dense("x1", &x1).unwrap();
    f.add_dense("x2", &x2).unwrap();
    f.add_dense("z", &z).unwrap();
    f.add_dense("w", &w).unwrap();
    for (d, name) in ["a", "b", "c"].iter().enumerate() {
        f.add_group(name, keys[d].iter().map(|k| Some(format!("{name}{k}"))).collect())
            .unwrap();
    }
    f.add_group("firm_id", (0..n).map(|i| Some(format!("f{}", i / 4))).collect())
        .unwrap();
    f
}

fn col(f: &Frame, name: &str) -> Vec<f64> {
    f.numeric_col(name).unwrap().iter().map(|v| v.unwrap()).collect()
}

fn groups(f: &Frame, name: &str) -> Vec<String> {
    f.group_col(name).unwrap().iter().map(|v| v.clone().unwrap()).collect()
}

/// Regressor columns followed by one dummy per level of every FE dimension.
/// Redundant dummies are left in; the pseudo-inverse handles them.
fn dense_design(f: &Frame, regressors: &[&str], dims: &[&str], rows: &[usize]) -> (DMatrix<f64>, usize) {
    let mut cols: Vec<Vec<f64>> = regressors
        .iter()
        .map(|r| {
            let c = col(f, r);
            rows.iter().map(|&i| c[i]).collect()
        })
        .collect();
    for d in dims {
        let g = groups(f, d);
        let mut levels: Vec<&String> = rows.iter().map(|&i| &g[i]).collect();
        levels.sort();
        levels.dedup();
        for l in levels {
            cols.push(rows.iter().map(|&i| if &g[i] == l { 1.0 } else { 0.0 }).collect());
        }
    }
    let n = rows.len();
    let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let rank = m.clone().svd(false, false).rank(1e-9 * m.norm());
    (m, rank)
}

fn pinv_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = x.clone().svd(true, true);
    svd.solve(y, 1e-10).unwrap()
}

/// Rows kept after iterative singleton removal, computed by brute force.
fn non_singleton_rows(f: &Frame, dims: &[&str]) -> Vec<usize> {
    let gs: Vec<Vec<String>> = dims.iter().map(|d| groups(f, d)).collect();
    let mut keep: Vec<usize> = (0..f.len()).collect();
    loop {
        let before = keep.len();
        let cur = keep.clone();
        keep.retain(|&i| gs.iter().all(|g| cur.iter().filter(|&&j| g[j] == g[i]).count() > 1));
        if keep.len() == before {
            return keep;
        }
    }
}

fn spec(dims: &[&str]) -> RegressionSpec {
    RegressionSpec {
        dependent: "y".into(),
        exogenous: vec!["x1".into(), "x2".into()],
        fe_dims: dims.iter().map(|d| d.to_string()).collect(),
        ..RegressionSpec::default()
    }
}

#[test]
fn absorbed_ols_matches_dense_dummy_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..60 {
        let n = rng.random_range(40..=200);
        let sizes = [rng.random_range(3..12), rng.random_range(2..8), rng.random_range(2..6)];
        let f = fixture(&mut rng, n, sizes);
        let dims: &[&str] = match case % 3 {
            0 => &["a"],
            1 => &["a", "b"],
            _ => &["a", "b", "c"],
        };
        let res = ols(&f, &spec(dims)).unwrap();
        let rows = non_singleton_rows(&f, dims);
        assert_eq!(res.n_obs, rows.len());
        let (x, rank) = dense_design(&f, &["x1", "x2"], dims, &rows);
        let yc = col(&f, "y");
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| yc[i]));
        let beta = pinv_solve(&x, &y);
        for (j, name) in ["x1", "x2"].iter().enumerate() {
            let got = res.coefficient(name).unwrap();
            assert!((got - beta[j]).abs() < 1e-8, "case {case} {name}: {got} vs {}", beta[j]);
        }
        assert_eq!(res.n_params, rank, "case {case}");

        // cluster sandwich on the dense design, read off at the slopes
        let resid = &y - &x * &beta;
        let m = &x.transpose() * &x;
        let m_inv = m.clone().pseudo_inverse(1e-9 * m.norm()).unwrap();
        let cl = groups(&f, "firm_id");
        let cl: Vec<&String> = rows.iter().map(|&i| &cl[i]).collect();
        let mut uniq = cl.clone();
        uniq.sort();
        uniq.dedup();
        let mut meat = DMatrix::<f64>::zeros(x.ncols(), x.ncols());
        for g in &uniq {
            let mut s = DVector::<f64>::zeros(x.ncols());
            for (i, c) in cl.iter().enumerate() {
                if c == g {
                    s += x.row(i).transpose() * resid[i];
                }
            }
            meat += &s * s.transpose();
        }
        let (nn, gg, kk) = (rows.len() as f64, uniq.len() as f64, rank as f64);
        let v = &m_inv * meat * &m_inv * (gg / (gg - 1.0) * (nn - 1.0) / (nn - kk));
        for (j, name) in ["x1", "x2"].iter().enumerate() {
            let se = v[(j, j)].sqrt();
            let got = res.std_error(name).unwrap();
            assert!((got - se).abs() < 1e-7 * se, "case {case} se {name}: {got} vs {se}");
        }
    }
}

#[test]
fn cluster_sandwich_matches_explicit_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20;
    let mut f = Frame::new(n);
    let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + 2.0 * x[i] - z[i] + normal(&mut rng) * (1.0 + x[i].abs()))
        .collect();
    f.add_dense("y", &y).unwrap();
    f.add_dense("x1", &x).unwrap();
    f.add_dense("x2", &z).unwrap();
    f.add_group("firm_id", (0..n).map(|i| Some(format!("c{}", i % 4))).collect())
        .unwrap();
    let res = ols(&f, &spec(&[])).unwrap();

    let xm = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => x[i],
        1 => z[i],
        _ => 1.0,
    });
    let yv = DVector::from_vec(y);
    let xtx_inv = (xm.transpose() * &xm).try_inverse().unwrap();
    let beta = &xtx_inv * xm.transpose() * &yv;
    let u = &yv - &xm * &beta;
    let mut meat = DMatrix::<f64>::zeros(3, 3);
    for g in 0..4 {
        let idx: Vec<usize> = (0..n).filter(|i| i % 4 == g).collect();
        let xg = xm.select_rows(&idx);
        let ug = DVector::from_iterator(idx.len(), idx.iter().map(|&i| u[i]));
        meat += xg.transpose() * &ug * ug.transpose() * &xg;
    }
    let c = 4.0 / 3.0 * 19.0 / 17.0;
    let v = &xtx_inv * meat * &xtx_inv * c;
    for (j, t) in res.terms.iter().enumerate() {
        assert!((t.coefficient - beta[j]).abs() < 1e-10);
        for k in 0..3 {
            assert!(
                (res.vcov[j][k] - v[(j, k)]).abs() < 1e-10 * v[(j, j)].abs().max(1e-300),
                "{j},{k}"
            );
        }
    }
}

#[test]
fn singleton_clusters_give_hc1() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 60;
    let mut f = Frame::new(n);
    let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 0.5 * x[i] + normal(&mut rng) * (0.5 + x[i] * x[i]))
        .collect();
    f.add_dense("y", &y).unwrap();
    f.add_dense("x1", &x).unwrap();
    f.add_group("firm_id", (0..n).map(|i| Some(i.to_string())).collect())
        .unwrap();
    let s = RegressionSpec {
        dependent: "y".into(),
        exogenous: vec!["x1".into()],
        ..RegressionSpec::default()
    };
    let res = ols(&f, &s).unwrap();
    let xm = DMatrix::from_fn(n, 2, |i, j| if j == 0 { x[i] } else { 1.0 });
    let yv = DVector::from_vec(y);
    let inv = (xm.transpose() * &xm).try_inverse().unwrap();
    let u = &yv - &xm * (&inv * xm.transpose() * &yv);
    let mut meat = DMatrix::<f64>::zeros(2, 2);
    for i in 0..n {
        let xi = xm.row(i).transpose();
        meat += &xi * xi.transpose() * u[i] * u[i];
    }
    let hc1 = &inv * meat * &inv * (n as f64 / (n as f64 - 2.0));
    assert!((res.std_error("x1").unwrap() - hc1[(0, 0)].sqrt()).abs() < 1e-12);
}

fn iv_spec(dims: &[&str]) -> RegressionSpec {
    RegressionSpec {
        dependent: "y".into(),
        endogenous: vec!["x1".into()],
        instruments: vec!["z".into()],
        exogenous: vec!["x2".into()],
        fe_dims: dims.iter().map(|d| d.to_string()).collect(),
        ..RegressionSpec::default()
    }
}

#[test]
fn tsls_matches_projection_formula_with_dummies() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..20 {
        let f = fixture(&mut rng, 150, [6, 4, 3]);
        let dims: &[&str] = if case % 2 == 0 { &["a", "b"] } else { &["a", "b", "c"] };
        let res = tsls(&f, &iv_spec(dims)).unwrap();
        let rows = non_singleton_rows(&f, dims);
        let (x, _) = dense_design(&f, &["x1", "x2"], dims, &rows);
        let (z, _) = dense_design(&f, &["z", "x2"], dims, &rows);
        let yc = col(&f, "y");
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| yc[i]));
        let ztz = z.transpose() * &z;
        let pz = &z * ztz.clone().pseudo_inverse(1e-9 * ztz.norm()).unwrap() * z.transpose();
        let xhat = &pz * &x;
        let beta = pinv_solve(&xhat, &y);
        assert!((res.coefficient("x1").unwrap() - beta[0]).abs() < 1e-8);
        assert!((res.coefficient("x2").unwrap() - beta[1]).abs() < 1e-8);
        assert_eq!(res.first_stage.len(), 1);
        assert!(res.kp_wald_f.unwrap() > 0.0 && res.cd_wald_f.unwrap() > 0.0);
    }
}

#[test]
fn instrument_equal_to_regressor_reproduces_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut f = fixture(&mut rng, 120, [5, 4, 3]);
    let x1: Vec<Option<f64>> = f.numeric_col("x1").unwrap().to_vec();
    f.add_numeric("x1_copy", x1).unwrap();
    let mut iv = iv_spec(&["a", "b"]);
    iv.instruments = vec!["x1_copy".into()];
    let a = tsls(&f, &iv).unwrap();
    let mut o = spec(&["a", "b"]);
    o.exogenous = vec!["x1".into(), "x2".into()];
    let b = ols(&f, &o).unwrap();
    for t in &a.terms {
        let u = b.term(&t.name).unwrap();
        assert!((t.coefficient - u.coefficient).abs() < 1e-10);
        assert!((t.std_error - u.std_error).abs() < 1e-10 * u.std_error);
    }
}

#[test]
fn tsls_without_endogenous_is_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = fixture(&mut rng, 100, [5, 4, 3]);
    let s = spec(&["a", "b"]);
    assert_eq!(tsls(&f, &s).unwrap(), ols(&f, &s).unwrap());
}

#[test]
fn covariance_ignores_cluster_labels_and_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = fixture(&mut rng, 160, [6, 4, 3]);
    let base = tsls(&f, &iv_spec(&["a", "b", "c"])).unwrap();

    // permute rows and rename clusters
    let n = f.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut g = Frame::new(n);
    for name in ["y", "x1", "x2", "z", "w"] {
        let c = f.numeric_col(name).unwrap();
        g.add_numeric(name, perm.iter().map(|&i| c[i]).collect()).unwrap();
    }
    for name in ["a", "b", "c"] {
        let c = f.group_col(name).unwrap();
        g.add_group(name, perm.iter().map(|&i| c[i].clone()).collect()).unwrap();
    }
    let cl = f.group_col("firm_id").unwrap();
    g.add_group(
        "firm_id",
        perm.iter()
            .map(|&i| cl[i].as_ref().map(|s| format!("zz{}", s.len() * 7 + s.len()) + s))
            .collect(),
    )
    .unwrap();
    let other = tsls(&g, &iv_spec(&["a", "b", "c"])).unwrap();
    for (a, b) in base.terms.iter().zip(&other.terms) {
        assert!((a.coefficient - b.coefficient).abs() < 1e-10 * (1.0 + a.coefficient.abs()));
        assert!((a.std_error - b.std_error).abs() < 1e-10 * a.std_error);
    }
}

#[test]
fn shifting_the_dependent_variable_leaves_slopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut f = fixture(&mut rng, 150, [6, 4, 3]);
    let base = ols(&f, &spec(&["a", "b"])).unwrap();
    let shifted: Vec<f64> = col(&f, "y").iter().map(|v| v + 123.4).collect();
    f.add_dense("y", &shifted).unwrap();
    let moved = ols(&f, &spec(&["a", "b"])).unwrap();
    for (a, b) in base.terms.iter().zip(&moved.terms) {
        assert!((a.coefficient - b.coefficient).abs() < 1e-8);
    }
}

#[test]
fn weighted_fit_matches_scaled_dense_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = fixture(&mut rng, 180, [6, 4, 3]);
    let mut s = spec(&["a", "b"]);
    s.weights = Some("w".into());
    let res = ols(&f, &s).unwrap();
    let rows = non_singleton_rows(&f, &["a", "b"]);
    let (x, _) = dense_design(&f, &["x1", "x2"], &["a", "b"], &rows);
    let (yc, wc) = (col(&f, "y"), col(&f, "w"));
    let sw: Vec<f64> = rows.iter().map(|&i| wc[i].sqrt()).collect();
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let yw = DVector::from_iterator(rows.len(), rows.iter().zip(&sw).map(|(&i, s)| yc[i] * s));
    let beta = pinv_solve(&xw, &yw);
    assert!((res.coefficient("x1").unwrap() - beta[0]).abs() < 1e-8);
    assert!((res.coefficient("x2").unwrap() - beta[1]).abs() < 1e-8);
}

#[test]
fn interacted_cells_match_combined_key() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut f = fixture(&mut rng, 200, [4, 3, 2]);
    let a = groups(&f, "a");
    let b = groups(&f, "b");
    f.add_group("ab", a.iter().zip(&b).map(|(x, y)| Some(format!("{x}|{y}"))).collect())
        .unwrap();
    let mut s = spec(&["a", "b"]);
    s.interacted_fe = true;
    let inter = ols(&f, &s).unwrap();
    let single = ols(&f, &spec(&["ab"])).unwrap();
    for (x, y) in inter.terms.iter().zip(&single.terms) {
        assert!((x.coefficient - y.coefficient).abs() < 1e-12);
        assert!((x.std_error - y.std_error).abs() < 1e-12);
    }
}

/// Homoskedastic data, one observation per cluster, strong instrument.
fn iv_draw(rng: &mut ChaCha8Rng, n: usize, pi: f64) -> Frame {
    let mut f = Frame::new(n);
    let z: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let x: Vec<f64> = z.iter().map(|zi| pi * zi + normal(rng)).collect();
    let y: Vec<f64> = x.iter().map(|xi| 0.5 * xi + normal(rng)).collect();
    f.add_dense("y", &y).unwrap();
    f.add_dense("x1", &x).unwrap();
    f.add_dense("z", &z).unwrap();
    f.add_group("firm_id", (0..n).map(|i| Some(i.to_string())).collect())
        .unwrap();
    f
}

fn simple_iv() -> RegressionSpec {
    RegressionSpec {
        dependent: "y".into(),
        endogenous: vec!["x1".into()],
        instruments: vec!["z".into()],
        ..RegressionSpec::default()
    }
}

#[test]
fn robust_and_homoskedastic_f_agree_under_homoskedasticity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let f = iv_draw(&mut rng, 4000, 0.3);
        let r = tsls(&f, &simple_iv()).unwrap();
        let (kp, cd) = (r.kp_wald_f.unwrap(), r.cd_wald_f.unwrap());
        assert!((kp - cd).abs() < 0.15 * cd, "kp {kp} cd {cd}");
    }
}

#[test]
fn irrelevant_instrument_gives_small_f() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut kp = Vec::new();
    let mut cd = Vec::new();
    for _ in 0..200 {
        let f = iv_draw(&mut rng, 300, 0.0);
        let r = tsls(&f, &simple_iv()).unwrap();
        kp.push(r.kp_wald_f.unwrap());
        cd.push(r.cd_wald_f.unwrap());
    }
    for v in [&mut kp, &mut cd] {
        v.sort_by(f64::total_cmp);
        assert!(v[100] < 3.0, "median {}", v[100]);
    }
}

#[test]
fn instrument_without_variation_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut f = fixture(&mut rng, 100, [5, 4, 3]);
    // constant within groups of "a": absorbed completely
    let a = groups(&f, "a");
    let zc: Vec<f64> = a.iter().map(|k| k.len() as f64 + k.as_bytes()[1] as f64).collect();
    f.add_dense("z", &zc).unwrap();
    assert!(matches!(
        tsls(&f, &iv_spec(&["a"])),
        Err(Error::DegenerateInstrument(_))
    ));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let f = fixture(&mut rng, 200, [8, 5, 4]);
    let run = |t: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .unwrap()
            .install(|| tsls(&f, &iv_spec(&["a", "b", "c"])).unwrap())
    };
    assert_eq!(run(1), run(4));
}

/// Newton's method with the analytic Hessian of the logit log-likelihood.
fn newton_logit(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut b = DVector::zeros(x.ncols());
    for _ in 0..100 {
        let p = (x * &b).map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = x.transpose() * (y - &p);
        let mut h = DMatrix::<f64>::zeros(x.ncols(), x.ncols());
        for i in 0..x.nrows() {
            let xi = x.row(i).transpose();
            h += &xi * xi.transpose() * (p[i] * (1.0 - p[i]));
        }
        let step = h.lu().solve(&grad).unwrap();
        b += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    b
}

#[test]
#[allow(clippy::needless_range_loop)]
fn logit_matches_newton_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let n = 500;
    let mut f = Frame::new(n);
    let u: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let p = 1.0 / (1.0 + (-(1.5 + 0.8 * u[i] - 1.2 * v[i])).exp());
            if rng.random_range(0.0..1.0) < p {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    f.add_dense("ns", &d).unwrap();
    f.add_dense("u", &u).unwrap();
    f.add_dense("v", &v).unwrap();
    let fit = ipw_weights(&f, "ns", &["u".into(), "v".into()]).unwrap();
    let x = DMatrix::from_fn(n, 3, |i, j| [1.0, u[i], v[i]][j]);
    let oracle = newton_logit(&x, &DVector::from_vec(d.clone()));
    for (j, (_, b)) in fit.coefficients.iter().enumerate() {
        assert!((b - oracle[j]).abs() < 1e-6, "{b} vs {}", oracle[j]);
    }
    // weights: 1/p̂ on indicator rows, capped at the 99th percentile
    let mut raw = Vec::new();
    for i in 0..n {
        let p = 1.0 / (1.0 + (-(x.row(i) * &oracle)[0]).exp());
        if d[i] == 1.0 {
            raw.push(1.0 / p);
            assert!(fit.weights[i].unwrap() <= fit.trim_cap + 1e-12);
        } else {
            assert!(fit.weights[i].is_none());
        }
    }
    raw.sort_by(f64::total_cmp);
    assert!(fit.n_trimmed >= 1 && fit.n_trimmed <= raw.len() / 100 + 1);
}
