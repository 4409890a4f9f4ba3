//! Ring perception: ring-bond detection and the smallest set of smallest rings.

use crate::molecule::Molecule;
use std::collections::VecDeque;

/// Marks every bond that lies on a cycle (i.e. is not a bridge).
pub fn ring_bonds(mol: &Molecule) -> Vec<bool> {
    let n = mol.atom_count();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut is_bridge = vec![false; mol.bond_count()];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // iterative DFS: (atom, parent bond, next neighbor slot)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (v, parent_bond, ref mut slot)) = stack.last_mut() {
            let nbrs = mol.neighbors(v);
            if *slot < nbrs.len() {
                let (w, b) = nbrs[*slot];
                *slot += 1;
                if b == parent_bond {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, b, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[v]);
                    if low[v] > disc[p] {
                        is_bridge[parent_bond] = true;
                    }
                }
            }
        }
    }
    is_bridge.iter().map(|b| !b).collect()
}

/// Cycle rank of the ring-bond subgraph: the number of SSSR rings.
pub fn cycle_rank(mol: &Molecule) -> usize {
    let ring_bond_count = mol.bonds().iter().filter(|b| b.in_ring).count();
    if ring_bond_count == 0 {
        return 0;
    }
    let ring_atoms: Vec<usize> = (0..mol.atom_count())
        .filter(|&a| mol.atom(a).in_ring)
        .collect();
    let components = ring_components(mol, &ring_atoms);
    ring_bond_count + components - ring_atoms.len()
}

fn ring_components(mol: &Molecule, ring_atoms: &[usize]) -> usize {
    let mut seen = vec![false; mol.atom_count()];
    let mut count = 0;
    for &s in ring_atoms {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut queue = vec![s];
        while let Some(a) = queue.pop() {
            for &(n, b) in mol.neighbors(a) {
                if mol.bond(b).in_ring && !seen[n] {
                    seen[n] = true;
                    queue.push(n);
                }
            }
        }
    }
    count
}

/// Smallest set of smallest rings via Horton candidate cycles and
/// GF(2) independence over bond incidence vectors.
pub fn sssr(mol: &Molecule) -> Vec<Vec<usize>> {
    let target = cycle_rank(mol);
    if target == 0 {
        return Vec::new();
    }
    let n = mol.atom_count();
    let nb = mol.bond_count();
    let mut candidates: Vec<Vec<usize>> = Vec::new();

    for root in 0..n {
        if !mol.atom(root).in_ring {
            continue;
        }
        // BFS over ring bonds recording a shortest-path tree
        let mut dist = vec![usize::MAX; n];
        let mut parent = vec![usize::MAX; n];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            for &(w, b) in mol.neighbors(a) {
                if mol.bond(b).in_ring && dist[w] == usize::MAX {
                    dist[w] = dist[a] + 1;
                    parent[w] = a;
                    queue.push_back(w);
                }
            }
        }
        let path_to_root = |mut v: usize| {
            let mut p = vec![v];
            while v != root {
                v = parent[v];
                p.push(v);
            }
            p
        };
        for b in mol.bonds() {
            if !b.in_ring {
                continue;
            }
            let (x, y) = (b.begin, b.end);
            if dist[x] == usize::MAX || dist[y] == usize::MAX {
                continue;
            }
            if parent[x] == y || parent[y] == x {
                continue;
            }
            let px = path_to_root(x);
            let py = path_to_root(y);
            // the two paths may only share the root
            let shared = px.iter().filter(|a| py.contains(a)).count();
            if shared != 1 {
                continue;
            }
            let mut cycle: Vec<usize> = px.clone();
            cycle.pop();
            let mut tail = py.clone();
            tail.reverse();
            cycle.extend(tail);
            candidates.push(cycle);
        }
    }

    candidates.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| canonical_key(a).cmp(&canonical_key(b))));
    candidates.dedup_by(|a, b| canonical_key(a) == canonical_key(b));

    let words = nb.div_ceil(64);
    let mut basis: Vec<Vec<u64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut chosen = Vec::new();
    for cycle in candidates {
        if chosen.len() == target {
            break;
        }
        let mut vec = vec![0u64; words];
        for i in 0..cycle.len() {
            let a = cycle[i];
            let b = cycle[(i + 1) % cycle.len()];
            let bi = mol.bond_between(a, b).expect("cycle follows bonds");
            vec[bi / 64] ^= 1 << (bi % 64);
        }
        for (row, &p) in basis.iter().zip(&pivots) {
            if vec[p / 64] >> (p % 64) & 1 == 1 {
                for (v, r) in vec.iter_mut().zip(row) {
                    *v ^= r;
                }
            }
        }
        if let Some(p) = first_bit(&vec) {
            // keep the basis reduced on the new pivot
            for row in basis.iter_mut() {
                if row[p / 64] >> (p % 64) & 1 == 1 {
                    for (r, v) in row.iter_mut().zip(&vec) {
                        *r ^= v;
                    }
                }
            }
            basis.push(vec);
            pivots.push(p);
            chosen.push(normalize_cycle(cycle));
        }
    }
    chosen
}

fn first_bit(v: &[u64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .find(|(_, w)| **w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

fn canonical_key(cycle: &[usize]) -> Vec<usize> {
    let mut k = cycle.to_vec();
    k.sort_unstable();
    k
}

/// Rotates a cycle to start at its smallest atom, walking toward the smaller neighbor.
fn normalize_cycle(cycle: Vec<usize>) -> Vec<usize> {
    let n = cycle.len();
    let start = (0..n).min_by_key(|&i| cycle[i]).unwrap();
    let next = cycle[(start + 1) % n];
    let prev = cycle[(start + n - 1) % n];
    if next <= prev {
        (0..n).map(|k| cycle[(start + k) % n]).collect()
    } else {
        (0..n).map(|k| cycle[(start + n - k) % n]).collect()
    }
}

#[cfg(test)]
mod tests {
    use crate::smiles::parse_smiles;

    fn ring_sizes(s: &str) -> Vec<usize> {
        let m = parse_smiles(s).unwrap();
        let mut v: Vec<usize> = m.rings().iter().map(|r| r.len()).collect();
        v.sort();
        v
    }

    #[test]
    fn simple_rings() {
        assert_eq!(ring_sizes("CCO"), Vec::<usize>::new());
        assert_eq!(ring_sizes("c1ccccc1"), vec![6]);
        assert_eq!(ring_sizes("c1ccc2ccccc2c1"), vec![6, 6]);
        assert_eq!(ring_sizes("C1CC1C1CCC1"), vec![3, 4]);
    }

    #[test]
    fn bridged_and_cage() {
        // norbornane: two five-membered rings
        assert_eq!(ring_sizes("C1CC2CCC1C2"), vec![5, 5]);
        // cubane: cycle rank 5
        assert_eq!(ring_sizes("C12C3C4C1C5C2C3C45"), vec![4, 4, 4, 4, 4]);
    }

    #[test]
    fn ring_flags() {
        let m = parse_smiles("c1ccccc1CC").unwrap();
        assert!(m.atom(0).in_ring);
        assert!(!m.atom(6).in_ring);
        assert!(!m.bond(m.bond_between(5, 6).unwrap()).in_ring);
    }
}
