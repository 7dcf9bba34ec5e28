use std::collections::{BTreeMap, VecDeque};

use super::generator::GeneratorMatrix;
use crate::error::{GfaError, Result};

/// States within `radius` transitions of `root` in the undirected transition graph.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSubset {
    pub root: usize,
    pub radius: usize,
    /// Original indices, ascending; position is the index inside the subset.
    pub members: Vec<usize>,
    index_map: BTreeMap<usize, usize>,
}

impl StateSubset {
    /// Index inside the subset of original state `i`.
    pub fn local(&self, i: usize) -> Option<usize> {
        self.index_map.get(&i).copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Breadth-first ball around `root`; the returned generator is `Q` restricted
/// to the ball with transitions leaving it dropped.
pub fn extract_subset(q: &GeneratorMatrix, root: usize, radius: usize) -> Result<(StateSubset, GeneratorMatrix)> {
    let n = q.n_states();
    if root >= n {
        return Err(GfaError::invalid(format!("root {root} outside [0, {n})")));
    }
    let mut adj = vec![Vec::new(); n];
    for (i, j, _) in q.entries() {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut dist = vec![usize::MAX; n];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        if dist[i] == radius {
            continue;
        }
        for &j in &adj[i] {
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let members: Vec<usize> = (0..n).filter(|&i| dist[i] != usize::MAX).collect();
    let index_map: BTreeMap<usize, usize> = members.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let rates: Vec<_> = q
        .entries()
        .filter_map(|(i, j, r)| Some((*index_map.get(&i)?, *index_map.get(&j)?, r)))
        .collect();
    let sub = GeneratorMatrix::from_rates(members.len(), rates)?;
    Ok((
        StateSubset {
            root,
            radius,
            members,
            index_map,
        },
        sub,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::models::lotka_volterra;

    fn free_grid(n: usize) -> GeneratorMatrix {
        let idx = |a: usize, b: usize| a * n + b;
        let mut rates = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a + 1 < n {
                    rates.push((idx(a, b), idx(a + 1, b), 1.0));
                    rates.push((idx(a + 1, b), idx(a, b), 1.0));
                }
                if b + 1 < n {
                    rates.push((idx(a, b), idx(a, b + 1), 1.0));
                    rates.push((idx(a, b + 1), idx(a, b), 1.0));
                }
            }
        }
        GeneratorMatrix::from_rates(n * n, rates).unwrap()
    }

    #[test]
    fn radius_zero_is_single_state() {
        let q = free_grid(5);
        let (s, sub) = extract_subset(&q, 12, 0).unwrap();
        assert_eq!(s.members, vec![12]);
        assert_eq!(sub.n_transitions(), 0);
        assert_eq!(sub.diag(), &[0.0]);
    }

    #[test]
    fn interior_ball_counts_l1_lattice_points() {
        let q = free_grid(21);
        let centre = 10 * 21 + 10;
        for r in 0..=10 {
            let (s, _) = extract_subset(&q, centre, r).unwrap();
            assert_eq!(s.len(), 2 * r * r + 2 * r + 1);
        }
    }

    #[test]
    fn boundary_transitions_are_dropped() {
        let q = free_grid(5);
        let (s, sub) = extract_subset(&q, 0, 1).unwrap();
        assert_eq!(s.members, vec![0, 1, 5]);
        sub.validate().unwrap();
        // corner keeps both of its edges, neighbours lose their outward ones
        assert_eq!(sub.exit_rate(0), 2.0);
        assert_eq!(sub.exit_rate(1), 1.0);
        assert_eq!(s.local(5), Some(2));
        assert_eq!(s.local(6), None);
    }

    #[test]
    fn lv_subset_contains_root_and_is_monotone() {
        let c = lotka_volterra(30).unwrap();
        let root = c.index_of(&[5, 9]).unwrap();
        let (s8, sub) = extract_subset(&c.generator, root, 8).unwrap();
        assert!(s8.local(root).is_some());
        sub.validate().unwrap();
        let (s7, _) = extract_subset(&c.generator, root, 7).unwrap();
        assert!(s7.members.iter().all(|m| s8.local(*m).is_some()));
    }
}
