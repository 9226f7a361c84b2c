//! Dense symmetric-indefinite factorization (Bunch–Kaufman, lower).

use super::{inertia_2x2, Inertia, LinsolveError};

/// Dense symmetric matrix, full row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSym {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseSym {
    pub fn zeros(n: usize) -> Self {
        DenseSym { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = DenseSym::zeros(n);
        for i in 0..n {
            assert_eq!(rows[i].len(), n, "square input");
            m.data[i * n..(i + 1) * n].copy_from_slice(&rows[i]);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    /// Adds `v` at (i, j) and, off the diagonal, at (j, i).
    #[inline]
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
        if i != j {
            self.data[j * self.n + i] += v;
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.data[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Largest |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            for j in 0..i {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Replaces both triangles by their average.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in 0..i {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Block {
    One(f64),
    Two([f64; 3]),
}

/// `P A Pᵀ = L D Lᵀ` with `perm[k]` the original index at position k.
#[derive(Clone, Debug)]
pub struct DenseLdlt {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    blocks: Vec<(usize, Block)>,
    inertia: Inertia,
}

const BK_ALPHA: f64 = 0.640_388_203_202_208; // (1 + sqrt(17)) / 8

impl DenseLdlt {
    /// Factors `m`; returns `StructurallySingular` when a pivot column is
    /// numerically zero relative to its row's original scale.
    pub fn factor(m: &DenseSym) -> Result<DenseLdlt, LinsolveError> {
        let f = Self::factor_unchecked(m, 1e-13);
        if f.inertia.zero > 0 {
            Err(LinsolveError::StructurallySingular(f.inertia))
        } else {
            Ok(f)
        }
    }

    /// Factors `m`, counting numerically zero pivots in the inertia instead of failing.
    pub fn factor_unchecked(m: &DenseSym, zero_tol: f64) -> DenseLdlt {
        let n = m.n;
        let mut a = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale: Vec<f64> =
            (0..n).map(|i| a[i * n..(i + 1) * n].iter().fold(0.0f64, |s, v| s.max(v.abs()))).collect();
        let mut blocks = Vec::new();
        let mut inertia = Inertia::default();
        let swap = |a: &mut Vec<f64>, perm: &mut Vec<usize>, p: usize, q: usize| {
            if p == q {
                return;
            }
            for j in 0..n {
                a.swap(p * n + j, q * n + j);
            }
            for i in 0..n {
                a.swap(i * n + p, i * n + q);
            }
            perm.swap(p, q);
        };
        let mut k = 0;
        while k < n {
            let akk = a[k * n + k].abs();
            let (mut imax, mut colmax) = (k, 0.0f64);
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }
            if akk.max(colmax) <= zero_tol * scale[perm[k]] {
                inertia.zero += 1;
                for i in k + 1..n {
                    a[i * n + k] = 0.0;
                }
                blocks.push((k, Block::One(0.0)));
                k += 1;
                continue;
            }
            let mut two = false;
            if akk < BK_ALPHA * colmax {
                let mut rowmax = 0.0f64;
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(a[imax * n + j].abs());
                    }
                }
                if akk * rowmax >= BK_ALPHA * colmax * colmax {
                    // keep k
                } else if a[imax * n + imax].abs() >= BK_ALPHA * rowmax {
                    swap(&mut a, &mut perm, k, imax);
                } else {
                    swap(&mut a, &mut perm, k + 1, imax);
                    two = true;
                }
            }
            if !two {
                let d = a[k * n + k];
                inertia = inertia + if d > 0.0 { Inertia::new(1, 0, 0) } else { Inertia::new(0, 1, 0) };
                for i in k + 1..n {
                    a[i * n + k] /= d;
                }
                for i in k + 1..n {
                    let lik = a[i * n + k];
                    if lik == 0.0 {
                        continue;
                    }
                    let s = lik * d;
                    for j in k + 1..=i {
                        a[i * n + j] -= s * a[j * n + k];
                    }
                }
                for i in k + 1..n {
                    for j in i + 1..n {
                        a[i * n + j] = a[j * n + i];
                    }
                }
                blocks.push((k, Block::One(d)));
                k += 1;
            } else {
                let (p, q, r) = (a[k * n + k], a[(k + 1) * n + k], a[(k + 1) * n + k + 1]);
                let det = p * r - q * q;
                let inv = [r / det, -q / det, p / det];
                inertia = inertia + inertia_2x2(p, q, r);
                let mut w = vec![(0.0, 0.0); n];
                for i in k + 2..n {
                    let (x, y) = (a[i * n + k], a[i * n + k + 1]);
                    w[i] = (x, y);
                    a[i * n + k] = x * inv[0] + y * inv[1];
                    a[i * n + k + 1] = x * inv[1] + y * inv[2];
                }
                for i in k + 2..n {
                    let (l0, l1) = (a[i * n + k], a[i * n + k + 1]);
                    for j in k + 2..=i {
                        a[i * n + j] -= l0 * w[j].0 + l1 * w[j].1;
                    }
                }
                for i in k + 2..n {
                    for j in i + 1..n {
                        a[i * n + j] = a[j * n + i];
                    }
                }
                blocks.push((k, Block::Two([p, q, r])));
                k += 2;
            }
        }
        DenseLdlt { n, lu: a, perm, blocks, inertia }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Solves `A x = b` in place. Zero pivots contribute zero components.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n, "right-hand side dimension");
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for &(k, ref blk) in &self.blocks {
            let w = match blk {
                Block::One(_) => 1,
                Block::Two(_) => 2,
            };
            for i in k + w..n {
                let mut s = 0.0;
                for c in k..k + w {
                    s += self.lu[i * n + c] * y[c];
                }
                y[i] -= s;
            }
        }
        for &(k, ref blk) in &self.blocks {
            match blk {
                Block::One(d) => y[k] = if *d == 0.0 { 0.0 } else { y[k] / d },
                Block::Two([p, q, r]) => {
                    let det = p * r - q * q;
                    let (u, v) = (y[k], y[k + 1]);
                    y[k] = (r * u - q * v) / det;
                    y[k + 1] = (p * v - q * u) / det;
                }
            }
        }
        for &(k, ref blk) in self.blocks.iter().rev() {
            let w = match blk {
                Block::One(_) => 1,
                Block::Two(_) => 2,
            };
            for c in k..k + w {
                let mut s = 0.0;
                for i in k + w..n {
                    s += self.lu[i * n + c] * y[i];
                }
                y[c] -= s;
            }
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = y[k];
        }
    }
}

/// Factors a dense symmetric matrix.
pub fn dense_sym_factor(m: &DenseSym) -> Result<DenseLdlt, LinsolveError> {
    DenseLdlt::factor(m)
}

/// Solves with a dense factorization, returning the solution.
pub fn dense_solve(f: &DenseLdlt, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    f.solve(&mut x);
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar() {
        let f = dense_sym_factor(&DenseSym::from_rows(&[vec![5.0]])).unwrap();
        assert_eq!(dense_solve(&f, &[10.0]), vec![2.0]);
    }

    #[test]
    fn indefinite_2x2() {
        let f = dense_sym_factor(&DenseSym::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]])).unwrap();
        assert_eq!(f.inertia(), Inertia::new(1, 1, 0));
    }

    #[test]
    fn hilbert_row_sums() {
        let n = 4;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 1.0 / (i + j + 1) as f64).collect()).collect();
        let b: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
        let f = dense_sym_factor(&DenseSym::from_rows(&rows)).unwrap();
        assert_eq!(f.inertia(), Inertia::new(4, 0, 0));
        for v in dense_solve(&f, &b) {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn two_by_two_pivot_path() {
        let m = DenseSym::from_rows(&[vec![0.0, 3.0, 1.0], vec![3.0, 0.0, 2.0], vec![1.0, 2.0, 0.0]]);
        let f = dense_sym_factor(&m).unwrap();
        let x = dense_solve(&f, &[1.0, 2.0, 3.0]);
        let mut y = vec![0.0; 3];
        m.matvec(&x, &mut y);
        for (a, b) in y.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(f.inertia().dim(), 3);
    }
}
