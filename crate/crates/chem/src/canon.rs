//! Canonical atom ranking and canonical SMILES output.

use crate::molecule::{BondOrder, Molecule};

/// Canonical rank per atom: iterative neighborhood refinement, then
/// symmetric ties broken one at a time until all ranks are distinct.
pub fn canonical_ranks(mol: &Molecule) -> Vec<usize> {
    let n = mol.atom_count();
    let initial: Vec<(u8, u16, i8, usize, usize, bool, bool)> = (0..n)
        .map(|i| {
            let a = mol.atom(i);
            (
                a.atomic_number,
                a.isotope.unwrap_or(0),
                a.charge,
                mol.heavy_degree(i),
                mol.total_hydrogens(i),
                a.aromatic,
                a.in_ring,
            )
        })
        .collect();
    let mut ranks = rank_by(&initial);
    ranks = refine(mol, ranks);
    loop {
        let mut seen = vec![0usize; n];
        for &r in &ranks {
            seen[r] += 1;
        }
        let Some(tied) = (0..n).find(|&r| seen[r] > 1) else {
            break;
        };
        let pick = (0..n).find(|&i| ranks[i] == tied).unwrap();
        for (i, r) in ranks.iter_mut().enumerate() {
            if *r == tied && i != pick {
                *r = tied + 1;
            }
        }
        ranks = refine(mol, ranks);
    }
    ranks
}

fn rank_by<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && keys[order[pos - 1]] == keys[i] {
            ranks[order[pos - 1]]
        } else {
            pos
        };
    }
    ranks
}

fn class_count(ranks: &[usize]) -> usize {
    let mut v = ranks.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

fn refine(mol: &Molecule, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..mol.atom_count())
            .map(|i| {
                let mut env: Vec<(usize, u8)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(w, b)| (ranks[w], mol.bond(b).order.code()))
                    .collect();
                env.sort_unstable();
                (ranks[i], env)
            })
            .collect();
        let next = rank_by(&keys);
        let next_classes = class_count(&next);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

/// Hydrogen count the SMILES reader would infer for an unbracketed atom.
fn default_hydrogens(mol: &Molecule, atom: usize) -> Option<u8> {
    let a = mol.atom(atom);
    if !crate::element::is_organic(a.atomic_number) {
        return None;
    }
    let sum: usize = mol
        .neighbors(atom)
        .iter()
        .map(|&(_, b)| mol.bond(b).order.valence_units() as usize)
        .sum();
    if a.aromatic {
        let has_double = mol
            .neighbors(atom)
            .iter()
            .any(|&(_, b)| mol.bond(b).order == BondOrder::Double);
        match a.atomic_number {
            6 | 5 => {
                let capacity: usize = if a.atomic_number == 6 { 4 } else { 3 };
                capacity.checked_sub(sum + usize::from(!has_double)).map(|h| h as u8)
            }
            7 | 8 | 15 | 16 => Some(0),
            _ => None,
        }
    } else {
        crate::element::valences(a.atomic_number, 0)
            .iter()
            .map(|&v| v as usize)
            .find(|&v| v >= sum)
            .map(|v| (v - sum) as u8)
    }
}

fn atom_text(mol: &Molecule, atom: usize) -> String {
    let a = mol.atom(atom);
    let symbol = if a.aromatic {
        a.symbol().to_ascii_lowercase()
    } else {
        a.symbol().to_string()
    };
    let plain = a.charge == 0
        && a.isotope.is_none()
        && default_hydrogens(mol, atom) == Some(a.hydrogens);
    if plain {
        return symbol;
    }
    let mut s = String::from("[");
    if let Some(iso) = a.isotope {
        s.push_str(&iso.to_string());
    }
    s.push_str(&symbol);
    match a.hydrogens {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

fn bond_text(mol: &Molecule, bond: usize) -> &'static str {
    let b = mol.bond(bond);
    match b.order {
        BondOrder::Single => {
            if mol.atom(b.begin).aromatic && mol.atom(b.end).aromatic {
                "-"
            } else {
                ""
            }
        }
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => "",
    }
}

fn ring_label(d: usize) -> String {
    if d < 10 {
        d.to_string()
    } else {
        format!("%{d:02}")
    }
}

struct Writer<'a> {
    mol: &'a Molecule,
    ranks: &'a [usize],
    visited: Vec<bool>,
    /// per atom: tree children in output order
    children: Vec<Vec<usize>>,
    /// per atom: ring-closure bonds (bond index) in output order
    closures: Vec<Vec<usize>>,
    used_bond: Vec<bool>,
}

impl Writer<'_> {
    fn sorted_neighbors(&self, atom: usize) -> Vec<(usize, usize)> {
        let mut v = self.mol.neighbors(atom).to_vec();
        v.sort_by_key(|&(w, _)| self.ranks[w]);
        v
    }

    fn classify(&mut self, root: usize) {
        let mut stack = vec![(root, usize::MAX)];
        let mut order = Vec::new();
        // explicit stack DFS preserving rank order of visits
        let mut pending: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.mol.atom_count()];
        self.visited[root] = true;
        pending[root] = self.sorted_neighbors(root);
        pending[root].reverse();
        order.push(root);
        while let Some(&(v, _)) = stack.last() {
            if let Some((w, b)) = pending[v].pop() {
                if self.used_bond[b] {
                    continue;
                }
                self.used_bond[b] = true;
                if self.visited[w] {
                    self.closures[w].push(b);
                    self.closures[v].push(b);
                } else {
                    self.visited[w] = true;
                    self.children[v].push(w);
                    pending[w] = self.sorted_neighbors(w);
                    pending[w].reverse();
                    stack.push((w, b));
                }
            } else {
                stack.pop();
            }
        }
    }

    fn write(&self, root: usize, out: &mut String) {
        let mut open: Vec<Option<usize>> = Vec::new(); // digit -> bond
        enum Step {
            Atom(usize, Option<usize>),
            Text(&'static str),
        }
        let mut stack = vec![Step::Atom(root, None)];
        while let Some(step) = stack.pop() {
            let (atom, via) = match step {
                Step::Text(t) => {
                    out.push_str(t);
                    continue;
                }
                Step::Atom(a, via) => (a, via),
            };
            if let Some(b) = via {
                out.push_str(bond_text(self.mol, b));
            }
            out.push_str(&atom_text(self.mol, atom));
            for &b in &self.closures[atom] {
                if let Some(d) = open.iter().position(|&o| o == Some(b)) {
                    out.push_str(&ring_label(d + 1));
                    open[d] = None;
                } else {
                    let d = match open.iter().position(Option::is_none) {
                        Some(d) => d,
                        None => {
                            open.push(None);
                            open.len() - 1
                        }
                    };
                    open[d] = Some(b);
                    out.push_str(bond_text(self.mol, b));
                    out.push_str(&ring_label(d + 1));
                }
            }
            let kids = &self.children[atom];
            for (k, &c) in kids.iter().enumerate().rev() {
                let b = self.mol.bond_between(atom, c).unwrap();
                if k + 1 < kids.len() {
                    stack.push(Step::Text(")"));
                    stack.push(Step::Atom(c, Some(b)));
                    stack.push(Step::Text("("));
                } else {
                    stack.push(Step::Atom(c, Some(b)));
                }
            }
        }
    }
}

/// Deterministic, atom-order independent SMILES. Stereo marks are not written.
pub fn canonical_smiles(mol: &Molecule) -> String {
    let ranks = canonical_ranks(mol);
    let n = mol.atom_count();
    let mut w = Writer {
        mol,
        ranks: &ranks,
        visited: vec![false; n],
        children: vec![Vec::new(); n],
        closures: vec![Vec::new(); n],
        used_bond: vec![false; mol.bond_count()],
    };
    let mut comps = mol.components();
    comps.sort_by_key(|c| c.iter().map(|&a| ranks[a]).min());
    let mut out = String::new();
    for (i, comp) in comps.iter().enumerate() {
        let root = *comp.iter().min_by_key(|&&a| ranks[a]).unwrap();
        w.classify(root);
        // ring closures must be written in the order their atoms appear
        order_closures(&mut w, root);
        if i > 0 {
            out.push('.');
        }
        w.write(root, &mut out);
    }
    out
}

/// Sorts each atom's closure list: bonds closing an already-open ring first
/// (by the order they were opened), then new openings by partner rank.
fn order_closures(w: &mut Writer, root: usize) {
    let mut position = vec![usize::MAX; w.mol.atom_count()];
    let mut counter = 0;
    let mut stack = vec![root];
    while let Some(a) = stack.pop() {
        position[a] = counter;
        counter += 1;
        for &c in w.children[a].iter().rev() {
            stack.push(c);
        }
    }
    for a in 0..w.mol.atom_count() {
        if position[a] == usize::MAX {
            continue;
        }
        let mol = w.mol;
        let ranks = w.ranks;
        w.closures[a].sort_by_key(|&b| {
            let other = mol.bond(b).other(a);
            let closing = position[other] < position[a];
            (!closing, position[other], ranks[other])
        });
    }
}
