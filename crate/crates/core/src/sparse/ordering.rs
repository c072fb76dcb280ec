use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

/// Minimum-degree fill-reducing ordering on the pattern of `A + Aᵀ`.
///
/// `row_ptr`/`col_idx` describe a square CSR pattern. Returns `perm` with
/// `perm[k]` the original index eliminated at step `k`. Ties are broken by
/// the smaller index so the ordering is deterministic.
pub fn minimum_degree_ordering(n: usize, row_ptr: &[usize], col_idx: &[usize]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for i in 0..n {
        for &j in &col_idx[row_ptr[i]..row_ptr[i + 1]] {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }

    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut done = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut nbrs: Vec<usize> = Vec::new();

    while let Some(Reverse((deg, v))) = heap.pop() {
        if done[v] || deg != adj[v].len() {
            continue;
        }
        done[v] = true;
        perm.push(v);
        nbrs.clear();
        nbrs.extend(std::mem::take(&mut adj[v]));
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        // eliminating v turns its neighbourhood into a clique
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    perm
}
