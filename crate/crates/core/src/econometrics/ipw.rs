//! Inverse-probability weights from a logistic selection model.

use nalgebra::{DMatrix, DVector};

use super::{Frame, CONST_TERM};
use crate::error::{Error, Result};
use crate::linalg::least_squares;

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
/// Fitted probabilities this close to 0 or 1 signal separation.
const SEPARATION_EPS: f64 = 1e-10;
const TRIM_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct IpwFit {
    /// Logit coefficients, intercept first.
    pub coefficients: Vec<(String, f64)>,
    pub iterations: usize,
    /// `1/p̂` for rows with indicator 1, capped at `trim_cap`; `None` elsewhere
    /// and for rows with missing controls.
    pub weights: Vec<Option<f64>>,
    pub trim_cap: f64,
    pub n_trimmed: usize,
}

/// Fits `P(indicator = 1 | controls)` by iteratively reweighted least squares
/// and turns the fit into inverse-probability weights for the indicator-1
/// rows.
pub fn ipw_weights(frame: &Frame, indicator: &str, controls: &[String]) -> Result<IpwFit> {
    let d = frame.numeric_col(indicator)?;
    let cols: Vec<&[Option<f64>]> = controls.iter().map(|c| frame.numeric_col(c)).collect::<Result<_>>()?;
    let rows: Vec<usize> = (0..frame.len())
        .filter(|&r| {
            d[r].is_some_and(|v| v == 0.0 || v == 1.0) && cols.iter().all(|c| c[r].is_some_and(f64::is_finite))
        })
        .collect();
    let n = rows.len();
    let k = controls.len() + 1;
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} complete rows for a {k}-parameter selection model"
        )));
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { cols[j - 1][rows[i]].unwrap() });
    let y = DVector::from_fn(n, |i, _| d[rows[i]].unwrap());
    let names: Vec<String> = std::iter::once(CONST_TERM.to_string())
        .chain(controls.iter().cloned())
        .collect();
    let ones = y.sum();
    if ones == 0.0 || ones == n as f64 {
        return Err(Error::Separation(format!(
            "`{indicator}` takes a single value; drop controls or widen the sample"
        )));
    }

    let (beta, iterations) = irls(&x, &y, &names)?;
    let p = fitted(&x, &beta);
    if p.iter().any(|v| !(SEPARATION_EPS..=1.0 - SEPARATION_EPS).contains(v)) {
        return Err(Error::Separation(
            "fitted probabilities reach 0 or 1; reduce the selection controls".into(),
        ));
    }

    let mut raw: Vec<f64> = (0..n).filter(|&i| y[i] == 1.0).map(|i| 1.0 / p[i]).collect();
    raw.sort_by(f64::total_cmp);
    let cap = quantile_sorted(&raw, TRIM_QUANTILE);
    let mut weights = vec![None; frame.len()];
    let mut n_trimmed = 0;
    for (i, &r) in rows.iter().enumerate() {
        if y[i] == 1.0 {
            let w = 1.0 / p[i];
            if w > cap {
                n_trimmed += 1;
            }
            weights[r] = Some(w.min(cap));
        }
    }
    Ok(IpwFit {
        coefficients: names.into_iter().zip(beta.iter().copied()).collect(),
        iterations,
        weights,
        trim_cap: cap,
        n_trimmed,
    })
}

fn fitted(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    (x * beta).map(|eta| 1.0 / (1.0 + (-eta).exp()))
}

fn irls(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<(DVector<f64>, usize)> {
    let (n, k) = x.shape();
    let mut beta = DVector::zeros(k);
    for it in 1..=IRLS_MAX_ITER {
        let eta = x * &beta;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let mut xw = x.clone();
        let mut zw = DVector::zeros(n);
        for i in 0..n {
            let v = (p[i] * (1.0 - p[i])).max(1e-300);
            let s = v.sqrt();
            xw.row_mut(i).scale_mut(s);
            zw[i] = s * (eta[i] + (y[i] - p[i]) / v);
        }
        let next = match least_squares(&xw, &zw, names) {
            Ok(fit) => fit.beta,
            // weights collapse to zero as the fit separates
            Err(Error::RankDeficient { .. }) if it > 1 => break,
            Err(e) => return Err(e),
        };
        let change = (&next - &beta).amax();
        beta = next;
        if !beta.iter().all(|b| b.is_finite()) {
            break;
        }
        if change < IRLS_TOL {
            return Ok((beta, it));
        }
    }
    Err(Error::Separation(
        "logistic fit does not converge; reduce the selection controls".into(),
    ))
}

/// Type-7 quantile of sorted data.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_gives_uniform_weights() {
        let mut f = Frame::new(10);
        let d: Vec<f64> = (0..10).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect();
        f.add_dense("ns", &d).unwrap();
        let fit = ipw_weights(&f, "ns", &[]).unwrap();
        for w in fit.weights.iter().take(8) {
            assert!((w.unwrap() - 1.25).abs() < 1e-10);
        }
        assert!(fit.weights[8].is_none());
        assert_eq!(fit.n_trimmed, 0);
    }

    #[test]
    fn perfect_separation_is_reported() {
        let mut f = Frame::new(8);
        f.add_dense("ns", &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        f.add_dense("x", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert!(matches!(
            ipw_weights(&f, "ns", &["x".into()]),
            Err(Error::Separation(_))
        ));
    }
}
