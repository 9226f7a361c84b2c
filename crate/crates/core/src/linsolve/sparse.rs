//! Lower-triangle compressed-column storage for symmetric matrices.

use std::collections::HashMap;

/// Symmetric matrix stored as its lower triangle in compressed-column form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Builds from `(row, col, value)` triplets. Upper-triangle entries are
    /// mirrored to the lower triangle; duplicates are summed.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let pattern: Vec<(usize, usize)> = entries.iter().map(|&(r, c, _)| (r, c)).collect();
        let (mut m, map) = SparseSym::pattern(n, &pattern);
        for (k, &(_, _, v)) in entries.iter().enumerate() {
            m.values[map[k]] += v;
        }
        m
    }

    /// Builds a zero-valued matrix holding `entries` (mirrored to the lower
    /// triangle), and for each entry the position of its value slot.
    pub fn pattern(n: usize, entries: &[(usize, usize)]) -> (SparseSym, Vec<usize>) {
        let mut keys: Vec<(usize, usize)> = entries
            .iter()
            .map(|&(r, c)| {
                assert!(r < n && c < n, "entry ({r}, {c}) outside {n}x{n}");
                if r >= c {
                    (c, r)
                } else {
                    (r, c)
                }
            })
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(keys.len());
        for &(c, r) in &keys {
            col_ptr[c + 1] += 1;
            row_idx.push(r);
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let pos: HashMap<(usize, usize), usize> = keys.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let map = entries.iter().map(|&(r, c)| if r >= c { pos[&(c, r)] } else { pos[&(r, c)] }).collect();
        let nnz = keys.len();
        (SparseSym { n, col_ptr, row_idx, values: vec![0.0; nnz] }, map)
    }

    pub fn identity(n: usize) -> Self {
        let e: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseSym::from_triplets(n, &e)
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let mut e = Vec::new();
        for j in 0..n {
            for i in j..n {
                if a[i][j] != 0.0 || i == j {
                    e.push((i, j, a[i][j]));
                }
            }
        }
        SparseSym::from_triplets(n, &e)
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Iterates `(row, col, value)` over the stored lower triangle.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    /// `y = M x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y[..self.n].fill(0.0);
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, c, v) in self.iter() {
            d[r][c] += v;
            if r != c {
                d[c][r] += v;
            }
        }
        d
    }

    /// Full symmetric adjacency (off-diagonal neighbours of each index).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (r, c, _) in self.iter() {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Maximum absolute entry of each row of the full symmetric matrix.
    pub fn row_max_abs(&self) -> Vec<f64> {
        let mut m = vec![0.0f64; self.n];
        for (r, c, v) in self.iter() {
            let a = v.abs();
            m[r] = m[r].max(a);
            m[c] = m[c].max(a);
        }
        m
    }

    /// Same stored positions as `other`.
    pub fn same_pattern(&self, other: &SparseSym) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_mirror_and_sum() {
        let m = SparseSym::from_triplets(2, &[(0, 1, 1.0), (1, 0, 2.0), (0, 0, 4.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), vec![vec![4.0, 3.0], vec![3.0, 0.0]]);
        let mut y = vec![0.0; 2];
        m.matvec(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![7.0, 3.0]);
    }
}
