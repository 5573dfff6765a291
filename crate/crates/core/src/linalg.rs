//! Dense least-squares kernel shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative residual norm below which a column counts as a linear
/// combination of the columns before it.
const COLLINEARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub beta: DVector<f64>,
    /// `(X'X)^{-1}`.
    pub xtx_inv: DMatrix<f64>,
    pub resid: DVector<f64>,
}

impl LeastSquares {
    pub fn rss(&self) -> f64 {
        self.resid.norm_squared()
    }
}

/// Names the columns of `x` that are (numerically) spanned by earlier columns.
pub fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(x.ncols());
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= COLLINEARITY_TOL * norm0 {
            bad.push(names.get(j).cloned().unwrap_or_else(|| format!("column {j}")));
        } else {
            basis.push(v / norm);
        }
    }
    bad
}

/// Ordinary least squares by Householder QR. Rank deficiency is an error that
/// names the offending columns.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LeastSquares> {
    let (n, p) = x.shape();
    if n < p || p == 0 {
        return Err(Error::InsufficientData(format!("{n} observations for {p} parameters")));
    }
    let bad = collinear_columns(x, names);
    if !bad.is_empty() {
        return Err(Error::RankDeficient { columns: bad });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, p).into_owned();
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| Error::RankDeficient {
        columns: names.to_vec(),
    })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient {
            columns: names.to_vec(),
        })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let resid = y - x * &beta;
    Ok(LeastSquares { beta, xtx_inv, resid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names_for(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let fit = least_squares(&x, &y, &names_for(2)).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-12);
        assert!((fit.beta[1] - 2.0).abs() < 1e-12);
        assert!(fit.rss() < 1e-20);
        let xtx = x.transpose() * &x;
        let id = &xtx * &fit.xtx_inv;
        assert!((id - DMatrix::<f64>::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn collinear_column_is_named() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 1.0, 4.0, 5.0, 1.0, 6.0, 7.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let names = vec!["const".to_string(), "a".to_string(), "b".to_string()];
        match least_squares(&x, &y, &names).unwrap_err() {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["b".to_string()]),
            e => panic!("{e}"),
        }
    }
}
