//! Fixed-effect absorption by alternating projections.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const MAX_SWEEPS: usize = 10_000;

/// Largest total level count for which the rank of the dummy matrix is
/// computed exactly from its Gram matrix.
const DENSE_RANK_LIMIT: usize = 800;

/// Integer group ids per row for each FE dimension. Ids follow the sorted
/// order of the string keys, so the encoding does not depend on row order.
#[derive(Debug, Clone, Default)]
pub struct FeIndex {
    pub ids: Vec<Vec<usize>>,
    pub n_groups: Vec<usize>,
}

impl FeIndex {
    pub fn from_keys(dims: &[Vec<&str>]) -> Self {
        let mut ids = Vec::with_capacity(dims.len());
        let mut n_groups = Vec::with_capacity(dims.len());
        for keys in dims {
            let (row_ids, g) = encode(keys);
            ids.push(row_ids);
            n_groups.push(g);
        }
        FeIndex { ids, n_groups }
    }

    pub fn n_dims(&self) -> usize {
        self.ids.len()
    }

    /// Rank of the stacked dummy matrix: the number of parameters the
    /// fixed effects absorb.
    pub fn absorbed_rank(&self) -> usize {
        match self.n_dims() {
            0 => 0,
            1 => self.n_groups[0],
            2 => self.n_groups[0] + self.n_groups[1] - self.components(0, 1),
            _ => {
                let total: usize = self.n_groups.iter().sum();
                if total <= DENSE_RANK_LIMIT {
                    self.dense_rank()
                } else {
                    // exact for the first pair, assumes the rest are connected
                    let pair = self.n_groups[0] + self.n_groups[1] - self.components(0, 1);
                    pair + self.n_groups[2..].iter().map(|g| g - 1).sum::<usize>()
                }
            }
        }
    }

    /// Connected components of the bipartite graph linking levels of two
    /// dimensions that co-occur in a row.
    fn components(&self, a: usize, b: usize) -> usize {
        let na = self.n_groups[a];
        let mut parent: Vec<usize> = (0..na + self.n_groups[b]).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (&i, &j) in self.ids[a].iter().zip(&self.ids[b]) {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, na + j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
        (0..parent.len()).filter(|&x| find(&mut parent, x) == x).count()
    }

    fn dense_rank(&self) -> usize {
        let offsets: Vec<usize> = self
            .n_groups
            .iter()
            .scan(0, |acc, g| {
                let o = *acc;
                *acc += g;
                Some(o)
            })
            .collect();
        let total: usize = self.n_groups.iter().sum();
        let mut gram = DMatrix::<f64>::zeros(total, total);
        let n = self.ids[0].len();
        for r in 0..n {
            for (d, ids) in self.ids.iter().enumerate() {
                for (e, ids2) in self.ids.iter().enumerate() {
                    gram[(offsets[d] + ids[r], offsets[e] + ids2[r])] += 1.0;
                }
            }
        }
        let eig = SymmetricEigen::new(gram);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        eig.eigenvalues.iter().filter(|&&v| v > 1e-9 * max).count()
    }
}

fn encode(keys: &[&str]) -> (Vec<usize>, usize) {
    let levels: BTreeMap<&str, usize> = keys
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, i))
        .collect();
    (keys.iter().map(|k| levels[k]).collect(), levels.len())
}

/// Iteratively drops rows that are alone in some group of some dimension.
/// Returns the retained row positions.
pub fn drop_singletons(dims: &[Vec<&str>]) -> Vec<usize> {
    let n = dims.first().map_or(0, Vec::len);
    let mut keep: Vec<usize> = (0..n).collect();
    loop {
        let mut single = vec![false; keep.len()];
        for keys in dims {
            let mut count: BTreeMap<&str, usize> = BTreeMap::new();
            for &r in &keep {
                *count.entry(keys[r]).or_default() += 1;
            }
            for (i, &r) in keep.iter().enumerate() {
                if count[keys[r]] == 1 {
                    single[i] = true;
                }
            }
        }
        if !single.iter().any(|&s| s) {
            return keep;
        }
        keep = keep
            .into_iter()
            .zip(single)
            .filter(|(_, s)| !s)
            .map(|(r, _)| r)
            .collect();
    }
}

#[derive(Debug, Clone)]
pub struct Absorbed {
    pub columns: Vec<Vec<f64>>,
    /// Sweeps used by the slowest column.
    pub iterations: usize,
}

/// Demeans every column within the groups of each dimension in turn until a
/// full sweep moves no entry by more than `tol`. Weighted means when
/// `weights` is given. Columns are processed in parallel; each column's
/// arithmetic is sequential, so results do not depend on the thread count.
pub fn absorb_fixed_effects(columns: &[Vec<f64>], fe: &FeIndex, weights: Option<&[f64]>, tol: f64) -> Result<Absorbed> {
    if fe.n_dims() == 0 {
        return Ok(Absorbed {
            columns: columns.to_vec(),
            iterations: 0,
        });
    }
    let n = fe.ids[0].len();
    let wsum: Vec<Vec<f64>> = fe
        .ids
        .iter()
        .zip(&fe.n_groups)
        .map(|(ids, &g)| {
            let mut s = vec![0.0; g];
            for (r, &i) in ids.iter().enumerate() {
                s[i] += weights.map_or(1.0, |w| w[r]);
            }
            s
        })
        .collect();

    let out: Vec<Result<(Vec<f64>, usize)>> = columns
        .par_iter()
        .map(|col| {
            debug_assert_eq!(col.len(), n);
            let mut v = col.clone();
            let mut sums: Vec<f64> = Vec::new();
            for sweep in 1..=MAX_SWEEPS {
                let mut change: f64 = 0.0;
                for ((ids, &g), ws) in fe.ids.iter().zip(&fe.n_groups).zip(&wsum) {
                    sums.clear();
                    sums.resize(g, 0.0);
                    for (r, &i) in ids.iter().enumerate() {
                        sums[i] += weights.map_or(1.0, |w| w[r]) * v[r];
                    }
                    for (r, &i) in ids.iter().enumerate() {
                        let m = sums[i] / ws[i];
                        v[r] -= m;
                        change = change.max(m.abs());
                    }
                }
                if change < tol {
                    return Ok((v, sweep));
                }
                if sweep == MAX_SWEEPS {
                    return Err(Error::Convergence {
                        iterations: MAX_SWEEPS,
                        last_change: change,
                    });
                }
            }
            unreachable!()
        })
        .collect();

    let mut result = Vec::with_capacity(columns.len());
    let mut iterations = 0;
    for r in out {
        let (v, it) = r?;
        iterations = iterations.max(it);
        result.push(v);
    }
    Ok(Absorbed {
        columns: result,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimension_is_exact_group_demeaning() {
        let keys = vec![vec!["a", "a", "b", "b", "b"]];
        let fe = FeIndex::from_keys(&keys);
        let out = absorb_fixed_effects(&[vec![1.0, 3.0, 2.0, 4.0, 9.0]], &fe, None, DEFAULT_TOL).unwrap();
        let v = &out.columns[0];
        assert!((v[0] + 1.0).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
        assert!((v[2] + 3.0).abs() < 1e-15 && (v[4] - 4.0).abs() < 1e-15);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn within_constant_column_is_annihilated() {
        let keys = vec![vec!["a", "a", "b", "b", "c", "c"], vec!["x", "y", "x", "y", "x", "y"]];
        let fe = FeIndex::from_keys(&keys);
        // additive in the two dimensions
        let col = vec![1.0 + 10.0, 1.0 + 20.0, 2.0 + 10.0, 2.0 + 20.0, 5.0 + 10.0, 5.0 + 20.0];
        let out = absorb_fixed_effects(&[col], &fe, None, DEFAULT_TOL).unwrap();
        assert!(out.columns[0].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn singletons_are_dropped_iteratively() {
        // dropping row 3 (alone in "z") leaves row 2 alone in "b"
        let keys = vec![vec!["a", "a", "b", "b"], vec!["x", "x", "y", "z"]];
        let keep = drop_singletons(&keys);
        assert_eq!(keep, vec![0, 1]);
    }

    #[test]
    fn absorbed_rank_counts_connected_sets() {
        let keys = vec![vec!["a", "a", "b", "b"], vec!["x", "y", "z", "z"]];
        // {a,x,y} and {b,z} are disconnected: 2 + 3 - 2
        assert_eq!(FeIndex::from_keys(&keys).absorbed_rank(), 3);
        let three = vec![
            vec!["a", "a", "b", "b", "a"],
            vec!["x", "y", "x", "y", "y"],
            vec!["1", "2", "2", "1", "1"],
        ];
        let fe = FeIndex::from_keys(&three);
        assert_eq!(fe.absorbed_rank(), fe.dense_rank());
        assert_eq!(fe.absorbed_rank(), 4);
    }
}
