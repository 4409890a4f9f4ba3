//! Assigns the implied double bonds of aromatic systems (Kekulé form).

use crate::element;
use crate::molecule::{BondOrder, Molecule};

/// Aromatic atoms that still need one double bond to reach an allowed valence.
fn needs_pi(mol: &Molecule, atom: usize) -> bool {
    let a = mol.atom(atom);
    if !a.aromatic {
        return false;
    }
    let current = mol.valence_without_pi(atom);
    element::valences(a.atomic_number, a.charge)
        .iter()
        .map(|&v| v as usize)
        .find(|&v| v >= current)
        .is_some_and(|v| v > current)
}

/// Returns which atoms carry a Kekulé double bond inside an aromatic system,
/// and whether every atom that needed one received it.
pub fn pi_atoms(mol: &Molecule) -> (Vec<bool>, bool) {
    let n = mol.atom_count();
    let candidate: Vec<bool> = (0..n).map(|a| needs_pi(mol, a)).collect();
    let options: Vec<Vec<usize>> = (0..n)
        .map(|a| {
            if !candidate[a] {
                return Vec::new();
            }
            mol.neighbors(a)
                .iter()
                .filter(|&&(w, b)| candidate[w] && mol.bond(b).order == BondOrder::Aromatic)
                .map(|&(w, _)| w)
                .collect()
        })
        .collect();
    let mut mate = vec![usize::MAX; n];
    let mut budget = 200_000usize;
    let complete = search(&candidate, &options, &mut mate, &mut budget);
    if !complete {
        // fall back to a greedy assignment so valences stay as close as possible
        mate.iter_mut().for_each(|m| *m = usize::MAX);
        for a in 0..n {
            if candidate[a] && mate[a] == usize::MAX {
                if let Some(&w) = options[a].iter().find(|&&w| mate[w] == usize::MAX) {
                    mate[a] = w;
                    mate[w] = a;
                }
            }
        }
    }
    let pi = (0..n).map(|a| mate[a] != usize::MAX).collect();
    (pi, complete)
}

fn search(
    candidate: &[bool],
    options: &[Vec<usize>],
    mate: &mut [usize],
    budget: &mut usize,
) -> bool {
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    // most constrained unmatched atom first
    let mut best: Option<(usize, usize)> = None;
    for a in 0..candidate.len() {
        if candidate[a] && mate[a] == usize::MAX {
            let free = options[a].iter().filter(|&&w| mate[w] == usize::MAX).count();
            if best.is_none_or(|(_, f)| free < f) {
                best = Some((a, free));
            }
        }
    }
    let Some((a, free)) = best else {
        return true;
    };
    if free == 0 {
        return false;
    }
    for &w in &options[a] {
        if mate[w] != usize::MAX {
            continue;
        }
        mate[a] = w;
        mate[w] = a;
        if search(candidate, options, mate, budget) {
            return true;
        }
        mate[a] = usize::MAX;
        mate[w] = usize::MAX;
    }
    false
}
