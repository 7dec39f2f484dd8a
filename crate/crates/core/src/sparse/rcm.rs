//! Reverse Cuthill-McKee ordering.

use crate::sparse::{Permutation, SymSparseMatrix};

/// Breadth-first level structure rooted at `root`, restricted to unvisited
/// vertices. Returns the list of levels (each sorted ascending).
fn level_structure(
    w: &SymSparseMatrix,
    root: usize,
    component: &[bool],
) -> Vec<Vec<usize>> {
    let mut seen = vec![false; w.dim()];
    seen[root] = true;
    let mut levels = vec![vec![root]];
    loop {
        let last = levels.last().unwrap();
        let mut next = Vec::new();
        for &u in last {
            for (v, _) in w.neighbors(u) {
                if v != u && component[v] && !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_unstable();
        next.dedup();
        levels.push(next);
    }
    levels
}

/// George-Liu pseudo-peripheral vertex search with deterministic tie-breaks:
/// the starting root is the component's minimum index and candidates in the
/// deepest level are taken by ascending degree, then ascending index.
fn pseudo_peripheral(w: &SymSparseMatrix, start: usize, component: &[bool]) -> usize {
    let mut root = start;
    let mut levels = level_structure(w, root, component);
    loop {
        let last = levels.last().unwrap();
        let candidate = *last
            .iter()
            .min_by_key(|&&v| (w.degree(v), v))
            .expect("level structure is nonempty");
        let cand_levels = level_structure(w, candidate, component);
        if cand_levels.len() > levels.len() {
            root = candidate;
            levels = cand_levels;
        } else {
            return root;
        }
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparse matrix.
///
/// Connected components are processed in ascending order of their minimum
/// vertex index, each from a pseudo-peripheral start; neighbors are visited
/// by ascending degree with index tie-breaks, and the complete ordering is
/// reversed. The result is deterministic for a fixed input.
pub fn rcm_order(w: &SymSparseMatrix) -> Permutation {
    let n = w.dim();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut visited = vec![false; n];

    for comp_start in 0..n {
        if visited[comp_start] {
            continue;
        }
        // Collect the component reachable from comp_start.
        let mut in_component = vec![false; n];
        let mut stack = vec![comp_start];
        in_component[comp_start] = true;
        while let Some(u) = stack.pop() {
            for (v, _) in w.neighbors(u) {
                if v != u && !in_component[v] {
                    in_component[v] = true;
                    stack.push(v);
                }
            }
        }

        let root = pseudo_peripheral(w, comp_start, &in_component);

        // Cuthill-McKee breadth-first ordering from the root.
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(root);
        visited[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = w
                .neighbors(u)
                .filter(|&(v, _)| v != u && in_component[v] && !visited[v])
                .map(|(v, _)| v)
                .collect();
            nbrs.sort_by_key(|&v| (w.degree(v), v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }

    order.reverse();
    Permutation::new(order).expect("CM traversal visits every vertex exactly once")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::apply_permutation;

    fn grid(n_side: usize) -> SymSparseMatrix {
        let mut trips = Vec::new();
        let id = |r: usize, c: usize| r * n_side + c;
        for r in 0..n_side {
            for c in 0..n_side {
                if c + 1 < n_side {
                    trips.push((id(r, c), id(r, c + 1), 1.0));
                }
                if r + 1 < n_side {
                    trips.push((id(r, c), id(r + 1, c), 1.0));
                }
            }
        }
        SymSparseMatrix::from_triplets(n_side * n_side, &trips).unwrap()
    }

    #[test]
    fn grid_bandwidth_is_at_most_side_length() {
        let w = grid(10);
        let p = rcm_order(&w);
        let b = apply_permutation(&w, &p).unwrap();
        assert!(b.bandwidth() <= 10, "bandwidth {}", b.bandwidth());
    }

    #[test]
    fn shuffled_grid_bandwidth_is_recovered() {
        let w = grid(10);
        let n = 100;
        let mut fwd: Vec<usize> = (0..n).collect();
        let mut state = 7u64;
        for i in (1..n).rev() {
            state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            let j = (state >> 32) as usize % (i + 1);
            fwd.swap(i, j);
        }
        let shuffle = Permutation::new(fwd).unwrap();
        let trips: Vec<_> = w
            .upper_triplets()
            .into_iter()
            .map(|(i, j, v)| (shuffle.new_index(i), shuffle.new_index(j), v))
            .collect();
        let shuffled = SymSparseMatrix::from_triplets(n, &trips).unwrap();
        let p = rcm_order(&shuffled);
        let b = apply_permutation(&shuffled, &p).unwrap();
        assert!(b.bandwidth() <= 20, "bandwidth {}", b.bandwidth());
    }

    #[test]
    fn diagonal_only_matrix_gets_valid_order_with_zero_bandwidth() {
        let w = SymSparseMatrix::from_triplets(5, &[(0, 0, 1.0), (3, 3, 2.0)]).unwrap();
        let p = rcm_order(&w);
        assert_eq!(p.len(), 5);
        let b = apply_permutation(&w, &p).unwrap();
        assert_eq!(b.bandwidth(), 0);
    }

    #[test]
    fn empty_matrix_gives_empty_permutation() {
        let w = SymSparseMatrix::from_triplets(0, &[]).unwrap();
        let p = rcm_order(&w);
        assert!(p.is_empty());
    }

    #[test]
    fn deterministic_for_fixed_input() {
        let w = grid(6);
        let p1 = rcm_order(&w);
        let p2 = rcm_order(&w);
        assert_eq!(p1, p2);
    }

    #[test]
    fn disconnected_components_all_ordered() {
        // Two separate chains plus an isolated vertex.
        let trips = [(0, 1, 1.0), (1, 2, 1.0), (4, 5, 1.0)];
        let w = SymSparseMatrix::from_triplets(7, &trips).unwrap();
        let p = rcm_order(&w);
        assert_eq!(p.len(), 7);
        let b = apply_permutation(&w, &p).unwrap();
        assert!(b.bandwidth() <= 1);
    }
}
