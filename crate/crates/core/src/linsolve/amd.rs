//! Approximate minimum degree ordering on a quotient graph.
//!
//! Eliminated variables become elements; a variable's degree is bounded by its
//! remaining variable neighbours plus the sizes of its adjacent elements
//! (external to the element just formed). Elements adjacent to the pivot are
//! absorbed into the new one. No supervariable detection.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Elimination order for the symmetric pattern given by `adj`
/// (off-diagonal neighbours, both directions). Ties break on index.
pub fn amd_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut var_adj: Vec<Vec<usize>> = adj.to_vec();
    let mut elem_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut elem_vars: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut var_alive = vec![true; n];
    let mut elem_alive = vec![false; n];
    let mut degree: Vec<usize> = var_adj.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|i| Reverse((degree[i], i))).collect();

    let mut mark = vec![usize::MAX; n];
    let mut w: Vec<isize> = vec![-1; n];
    let mut w_stamp = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut remaining = n;

    while let Some(Reverse((d, p))) = heap.pop() {
        if !var_alive[p] || d != degree[p] {
            continue;
        }
        let step = order.len();
        order.push(p);
        var_alive[p] = false;
        remaining -= 1;

        // Lp = variables adjacent to p directly or through its elements.
        let mut lp = Vec::new();
        mark[p] = step;
        for &v in &var_adj[p] {
            if var_alive[v] && mark[v] != step {
                mark[v] = step;
                lp.push(v);
            }
        }
        for &e in &elem_adj[p] {
            if !elem_alive[e] {
                continue;
            }
            for &v in &elem_vars[e] {
                if var_alive[v] && mark[v] != step {
                    mark[v] = step;
                    lp.push(v);
                }
            }
            elem_alive[e] = false;
            elem_vars[e] = Vec::new();
        }
        var_adj[p] = Vec::new();
        elem_adj[p] = Vec::new();
        lp.sort_unstable();

        for &i in &lp {
            elem_adj[i].retain(|&e| elem_alive[e]);
            elem_adj[i].push(p);
            var_adj[i].retain(|&v| var_alive[v] && mark[v] != step);
        }

        // |Le \ Lp| for every element touching Lp.
        for &i in &lp {
            for &e in &elem_adj[i] {
                if e == p {
                    continue;
                }
                if w_stamp[e] != step {
                    w_stamp[e] = step;
                    elem_vars[e].retain(|&v| var_alive[v]);
                    w[e] = elem_vars[e].len() as isize;
                }
                w[e] -= 1;
            }
        }
        for &i in &lp {
            let mut deg = var_adj[i].len() + lp.len() - 1;
            for &e in &elem_adj[i] {
                if e != p {
                    deg += w[e].max(0) as usize;
                }
            }
            let deg = deg.min(remaining.saturating_sub(1));
            degree[i] = deg;
            heap.push(Reverse((deg, i)));
        }
        elem_alive[p] = true;
        elem_vars[p] = lp;
    }
    order
}

/// Number of nonzeros in the Cholesky factor of the pattern under `order`
/// (symbolic elimination, no pivoting). Used to compare orderings in tests.
pub fn symbolic_fill(adj: &[Vec<usize>], order: &[usize]) -> usize {
    let n = adj.len();
    let mut pos = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    let mut sets: Vec<std::collections::BTreeSet<usize>> = adj.iter().map(|a| a.iter().copied().collect()).collect();
    let mut nnz = 0;
    for &p in order {
        let later: Vec<usize> = sets[p].iter().copied().filter(|&j| pos[j] > pos[p]).collect();
        nnz += later.len();
        for &a in &later {
            for &b in &later {
                if a != b {
                    sets[a].insert(b);
                }
            }
        }
    }
    nnz
}
