//! Minimum-cost assignment on rectangular cost matrices (Kuhn-Munkres).

use crate::error::{Error, Result};
use crate::model::Point3;

/// Dense row-major matrix of non-negative pairwise costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_rows: usize,
    n_cols: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n_rows: usize, n_cols: usize, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != n_rows * n_cols {
            return Err(Error::Size {
                expected: n_rows * n_cols,
                found: costs.len(),
            });
        }
        Ok(CostMatrix { n_rows, n_cols, costs })
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut costs = Vec::with_capacity(n_rows * n_cols);
        for r in 0..n_rows {
            for c in 0..n_cols {
                costs.push(f(r, c));
            }
        }
        CostMatrix { n_rows, n_cols, costs }
    }

    /// Euclidean distances between two point sets, in millimetres.
    pub fn euclidean(rows: &[Point3], cols: &[Point3]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |r, c| rows[r].distance(cols[c]))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.n_cols + col]
    }

    fn validate(&self) -> Result<()> {
        for (n, &c) in self.costs.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidCost {
                    row: n / self.n_cols,
                    col: n % self.n_cols,
                });
            }
        }
        Ok(())
    }
}

/// A one-to-one matching between rows and columns of a [`CostMatrix`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }

    /// Checks that pairs and unmatched sets partition both index ranges.
    pub fn is_partition_of(&self, n_rows: usize, n_cols: usize) -> bool {
        let mut rows = vec![0u8; n_rows];
        let mut cols = vec![0u8; n_cols];
        for &(r, c) in &self.pairs {
            match (rows.get_mut(r), cols.get_mut(c)) {
                (Some(a), Some(b)) => {
                    *a += 1;
                    *b += 1;
                }
                _ => return false,
            }
        }
        for &r in &self.unmatched_rows {
            match rows.get_mut(r) {
                Some(a) => *a += 1,
                None => return false,
            }
        }
        for &c in &self.unmatched_cols {
            match cols.get_mut(c) {
                Some(b) => *b += 1,
                None => return false,
            }
        }
        rows.iter().chain(&cols).all(|&n| n == 1)
    }
}

/// Minimum-total-cost matching of cardinality `min(n_rows, n_cols)`.
///
/// Rectangular inputs are padded to square with a constant cost of
/// `1 + max(cost)`. Every perfect matching of the padded matrix uses the same
/// number of padding cells, so its optimum restricted to real cells is an
/// optimum among maximum-cardinality matchings of the original.
pub fn solve_assignment(costs: &CostMatrix) -> Result<Assignment> {
    costs.validate()?;
    let (nr, nc) = (costs.n_rows, costs.n_cols);
    if nr == 0 || nc == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..nr).collect(),
            unmatched_cols: (0..nc).collect(),
        });
    }
    let n = nr.max(nc);
    let pad = 1.0 + costs.costs.iter().copied().fold(0.0, f64::max);
    let cost = |r: usize, c: usize| if r < nr && c < nc { costs.get(r, c) } else { pad };

    // Shortest augmenting path with row/column potentials; 1-based with a
    // virtual column 0 holding the row being inserted.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost(r0 - 1, col - 1) - u[r0] - v[col];
                if reduced < min_slack[col] {
                    min_slack[col] = reduced;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![usize::MAX; n];
    for col in 1..=n {
        col_of_row[row_of_col[col] - 1] = col - 1;
    }
    let mut out = Assignment::default();
    let mut col_used = vec![false; nc];
    for (r, &c) in col_of_row.iter().enumerate().take(nr) {
        if c < nc {
            out.pairs.push((r, c));
            col_used[c] = true;
        } else {
            out.unmatched_rows.push(r);
        }
    }
    out.unmatched_cols = (0..nc).filter(|&c| !col_used[c]).collect();
    Ok(out)
}

/// Dissolves every pair whose cost strictly exceeds `threshold`; equality is kept.
pub fn threshold_filter(assignment: &Assignment, costs: &CostMatrix, threshold: f64) -> Assignment {
    let mut out = Assignment {
        pairs: Vec::with_capacity(assignment.pairs.len()),
        unmatched_rows: assignment.unmatched_rows.clone(),
        unmatched_cols: assignment.unmatched_cols.clone(),
    };
    for &(r, c) in &assignment.pairs {
        if costs.get(r, c) > threshold {
            out.unmatched_rows.push(r);
            out.unmatched_cols.push(c);
        } else {
            out.pairs.push((r, c));
        }
    }
    out.unmatched_rows.sort_unstable();
    out.unmatched_cols.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all injections of the smaller side into the larger.
    pub(crate) fn brute_force_min(costs: &CostMatrix) -> f64 {
        let (nr, nc) = (costs.n_rows(), costs.n_cols());
        let transpose = nr > nc;
        let (small, large) = if transpose { (nc, nr) } else { (nr, nc) };
        let at = |s: usize, l: usize| if transpose { costs.get(l, s) } else { costs.get(s, l) };
        fn rec(
            s: usize,
            small: usize,
            large: usize,
            used: &mut [bool],
            acc: f64,
            at: &dyn Fn(usize, usize) -> f64,
        ) -> f64 {
            if s == small {
                return acc;
            }
            let mut best = f64::INFINITY;
            for l in 0..large {
                if !used[l] {
                    used[l] = true;
                    best = best.min(rec(s + 1, small, large, used, acc + at(s, l), at));
                    used[l] = false;
                }
            }
            best
        }
        rec(0, small, large, &mut vec![false; large], 0.0, &at)
    }

    #[test]
    fn one_by_one() {
        let c = CostMatrix::new(1, 1, vec![5.0]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert!(a.unmatched_rows.is_empty() && a.unmatched_cols.is_empty());
    }

    #[test]
    fn diagonal_optimum() {
        let c = CostMatrix::new(2, 2, vec![0.0, 9.0, 9.0, 0.0]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&c), 0.0);
    }

    #[test]
    fn empty_sides() {
        let a = solve_assignment(&CostMatrix::new(3, 0, vec![]).unwrap()).unwrap();
        assert_eq!(a.unmatched_rows, vec![0, 1, 2]);
        let a = solve_assignment(&CostMatrix::new(0, 2, vec![]).unwrap()).unwrap();
        assert_eq!(a.unmatched_cols, vec![0, 1]);
        let a = solve_assignment(&CostMatrix::new(0, 0, vec![]).unwrap()).unwrap();
        assert_eq!(a, Assignment::default());
    }

    #[test]
    fn nan_cost_rejected() {
        let c = CostMatrix::new(2, 2, vec![0.0, 1.0, f64::NAN, 2.0]).unwrap();
        assert!(matches!(
            solve_assignment(&c),
            Err(Error::InvalidCost { row: 1, col: 0 })
        ));
    }

    #[test]
    fn random_five_by_four_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..200 {
            let c = CostMatrix::from_fn(5, 4, |_, _| rng.random_range(0.0..100.0));
            let a = solve_assignment(&c).unwrap();
            assert_eq!(a.pairs.len(), 4);
            assert_eq!(a.unmatched_rows.len(), 1);
            assert!(a.is_partition_of(5, 4));
            assert!((a.total_cost(&c) - brute_force_min(&c)).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_boundary() {
        let c = CostMatrix::new(2, 2, vec![39.9, 100.0, 100.0, 40.0001]).unwrap();
        let a = solve_assignment(&c).unwrap();
        let f = threshold_filter(&a, &c, 40.0);
        assert_eq!(f.pairs, vec![(0, 0)]);
        assert_eq!(f.unmatched_rows, vec![1]);
        assert_eq!(f.unmatched_cols, vec![1]);

        let eq = CostMatrix::new(1, 1, vec![40.0]).unwrap();
        let kept = threshold_filter(&solve_assignment(&eq).unwrap(), &eq, 40.0);
        assert_eq!(kept.pairs, vec![(0, 0)]);

        assert_eq!(threshold_filter(&a, &c, f64::INFINITY), a);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]
            #[test]
            fn threshold_is_monotone(
                n in 0usize..6, m in 0usize..6, seed in any::<u64>(),
                t1 in 0.0f64..150.0, t2 in 0.0f64..150.0,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let c = CostMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..120.0));
                let a = solve_assignment(&c).unwrap();
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let fl = threshold_filter(&a, &c, lo);
                let fh = threshold_filter(&a, &c, hi);
                prop_assert!(fl.pairs.len() <= fh.pairs.len());
                prop_assert!(fl.is_partition_of(n, m));
                prop_assert!(fh.is_partition_of(n, m));
            }
        }
    }
}
