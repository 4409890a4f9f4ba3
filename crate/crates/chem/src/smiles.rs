//! SMILES reader for the OpenSMILES subset used by the corpus.

use crate::element;
use crate::molecule::{Atom, Bond, BondOrder, Molecule};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("unbalanced parenthesis at offset {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unclosed ring bond at offset {offset}")]
    UnclosedRingBond { offset: usize },
    #[error("unknown element at offset {offset}")]
    UnknownElement { offset: usize },
    #[error("valence violation at offset {offset}")]
    ValenceViolation { offset: usize },
    #[error("aromatic atom outside a ring at offset {offset}")]
    AromaticOutsideRing { offset: usize },
    #[error("unexpected character {found:?} at offset {offset}")]
    UnexpectedCharacter { offset: usize, found: char },
}

impl SmilesError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            SmilesError::Empty => None,
            SmilesError::UnbalancedParenthesis { offset }
            | SmilesError::UnclosedRingBond { offset }
            | SmilesError::UnknownElement { offset }
            | SmilesError::ValenceViolation { offset }
            | SmilesError::AromaticOutsideRing { offset }
            | SmilesError::UnexpectedCharacter { offset, .. } => Some(*offset),
        }
    }
}

#[derive(Clone, Copy)]
enum BondSymbol {
    Order(BondOrder),
    Directional(char),
}

struct PendingRing {
    atom: usize,
    bond: Option<BondSymbol>,
    offset: usize,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    offsets: Vec<usize>,
    bonds: Vec<Bond>,
    /// bonds written without a symbol between two aromatic atoms
    implicit_aromatic: Vec<bool>,
}

/// Parses a SMILES string into a molecule with implicit hydrogens filled in.
pub fn parse_smiles(s: &str) -> Result<Molecule, SmilesError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(SmilesError::Empty);
    }
    let mut p = Parser {
        text: s.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        offsets: Vec::new(),
        bonds: Vec::new(),
        implicit_aromatic: Vec::new(),
    };
    p.parse_chain()?;
    p.finish()
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn unexpected(&self) -> SmilesError {
        SmilesError::UnexpectedCharacter {
            offset: self.pos,
            found: self.text[self.pos] as char,
        }
    }

    fn parse_chain(&mut self) -> Result<(), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut pending_bond: Option<(BondSymbol, usize)> = None;
        let mut branch_stack: Vec<(Option<usize>, usize)> = Vec::new();
        let mut rings: BTreeMap<u32, PendingRing> = BTreeMap::new();

        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if prev.is_none() || pending_bond.is_some() {
                        return Err(self.unexpected());
                    }
                    branch_stack.push((prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    let Some((atom, _)) = branch_stack.pop() else {
                        return Err(SmilesError::UnbalancedParenthesis { offset: self.pos });
                    };
                    if pending_bond.is_some() {
                        return Err(self.unexpected());
                    }
                    prev = atom;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending_bond.is_some() || prev.is_none() {
                        return Err(self.unexpected());
                    }
                    let sym = match c {
                        b'-' => BondSymbol::Order(BondOrder::Single),
                        b'=' => BondSymbol::Order(BondOrder::Double),
                        b'#' => BondSymbol::Order(BondOrder::Triple),
                        b':' => BondSymbol::Order(BondOrder::Aromatic),
                        other => BondSymbol::Directional(other as char),
                    };
                    pending_bond = Some((sym, self.pos));
                    self.pos += 1;
                }
                b'.' => {
                    if pending_bond.is_some() || prev.is_none() {
                        return Err(self.unexpected());
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let offset = self.pos;
                    let Some(atom) = prev else {
                        return Err(self.unexpected());
                    };
                    let label = self.ring_label()?;
                    let bond = pending_bond.take().map(|(b, _)| b);
                    if let Some(open) = rings.remove(&label) {
                        if open.atom == atom
                            || self.bonds.iter().any(|b| {
                                (b.begin == open.atom && b.end == atom)
                                    || (b.begin == atom && b.end == open.atom)
                            })
                        {
                            return Err(SmilesError::ValenceViolation { offset });
                        }
                        self.add_bond(open.atom, atom, bond.or(open.bond));
                    } else {
                        rings.insert(label, PendingRing { atom, bond, offset });
                    }
                }
                _ => {
                    let offset = self.pos;
                    let atom = self.parse_atom()?;
                    self.offsets.push(offset);
                    if let Some(p) = prev {
                        let bond = pending_bond.take().map(|(b, _)| b);
                        self.add_bond(p, atom, bond);
                    }
                    prev = Some(atom);
                }
            }
        }
        if let Some((_, offset)) = pending_bond {
            return Err(SmilesError::UnexpectedCharacter { offset, found: self.text[offset] as char });
        }
        if let Some(&(_, offset)) = branch_stack.first() {
            return Err(SmilesError::UnbalancedParenthesis { offset });
        }
        if let Some(open) = rings.values().next() {
            return Err(SmilesError::UnclosedRingBond { offset: open.offset });
        }
        Ok(())
    }

    fn ring_label(&mut self) -> Result<u32, SmilesError> {
        let c = self.text[self.pos];
        if c == b'%' {
            let digits = self.text.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => Err(self.unexpected()),
            }
        } else {
            self.pos += 1;
            Ok((c - b'0') as u32)
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, sym: Option<BondSymbol>) {
        let (order, stereo, implicit) = match sym {
            Some(BondSymbol::Order(o)) => (o, None, false),
            Some(BondSymbol::Directional(d)) => (BondOrder::Single, Some(d), false),
            None => {
                if self.atoms[a].aromatic && self.atoms[b].aromatic {
                    (BondOrder::Aromatic, None, true)
                } else {
                    (BondOrder::Single, None, false)
                }
            }
        };
        self.bonds.push(Bond {
            begin: a,
            end: b,
            order,
            in_ring: false,
            stereo,
        });
        self.implicit_aromatic.push(implicit);
    }

    fn parse_atom(&mut self) -> Result<usize, SmilesError> {
        let c = self.text[self.pos];
        let atom = if c == b'[' {
            self.parse_bracket()?
        } else {
            let offset = self.pos;
            let two = self.text.get(self.pos..self.pos + 2);
            let (z, aromatic, len) = match (c, two) {
                (b'C', Some(b"Cl")) => (17, false, 2),
                (b'B', Some(b"Br")) => (35, false, 2),
                (b'B', _) => (5, false, 1),
                (b'C', _) => (6, false, 1),
                (b'N', _) => (7, false, 1),
                (b'O', _) => (8, false, 1),
                (b'P', _) => (15, false, 1),
                (b'S', _) => (16, false, 1),
                (b'F', _) => (9, false, 1),
                (b'I', _) => (53, false, 1),
                (b'b', _) => (5, true, 1),
                (b'c', _) => (6, true, 1),
                (b'n', _) => (7, true, 1),
                (b'o', _) => (8, true, 1),
                (b'p', _) => (15, true, 1),
                (b's', _) => (16, true, 1),
                (c, _) if c.is_ascii_alphabetic() || c == b'*' => {
                    return Err(SmilesError::UnknownElement { offset })
                }
                _ => return Err(self.unexpected()),
            };
            self.pos += len;
            let mut a = Atom::new(z);
            a.aromatic = aromatic;
            a
        };
        self.atoms.push(atom);
        Ok(self.atoms.len() - 1)
    }

    fn parse_bracket(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        let mut isotope = None;
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos > start {
            let s = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
            isotope = Some(s.parse::<u16>().map_err(|_| SmilesError::UnexpectedCharacter {
                offset: start,
                found: s.chars().next().unwrap(),
            })?);
        }
        let sym_offset = self.pos;
        let rest = &self.text[self.pos..];
        let aromatic_two: &[(&[u8], u8)] = &[(b"se", 34), (b"as", 33)];
        let aromatic_one: &[(u8, u8)] = &[(b'b', 5), (b'c', 6), (b'n', 7), (b'o', 8), (b'p', 15), (b's', 16)];
        let (z, aromatic) = if let Some(&(s, z)) = aromatic_two.iter().find(|(s, _)| rest.starts_with(s)) {
            self.pos += s.len();
            (z, true)
        } else if let Some(&(_, z)) = aromatic_one.iter().find(|(c, _)| rest.first() == Some(c)) {
            self.pos += 1;
            (z, true)
        } else {
            let upper = match rest.first() {
                Some(c) if c.is_ascii_uppercase() => *c,
                _ => return Err(SmilesError::UnknownElement { offset: sym_offset }),
            };
            let two = rest
                .get(1)
                .filter(|c| c.is_ascii_lowercase())
                .map(|&l| [upper, l]);
            let z2 = two.and_then(|t| element::atomic_number(std::str::from_utf8(&t).unwrap()));
            if let Some(z) = z2 {
                self.pos += 2;
                (z, false)
            } else if let Some(z) = element::atomic_number(std::str::from_utf8(&[upper]).unwrap()) {
                self.pos += 1;
                (z, false)
            } else {
                return Err(SmilesError::UnknownElement { offset: sym_offset });
            }
        };
        let mut atom = Atom::new(z);
        atom.aromatic = aromatic;
        atom.isotope = isotope;
        atom.bracket = true;
        if self.peek() == Some(b'@') {
            let s = self.pos;
            while self.peek() == Some(b'@') {
                self.pos += 1;
            }
            // allow @TH1 / @SP2 style suffixes
            while self.peek().is_some_and(|c| c.is_ascii_uppercase() && c != b'H') {
                self.pos += 1;
            }
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            atom.chirality = Some(String::from_utf8(self.text[s..self.pos].to_vec()).unwrap());
        }
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let mut h = 1u8;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                h = d - b'0';
                self.pos += 1;
            }
            atom.hydrogens = h;
        }
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let unit: i8 = if sign == b'+' { 1 } else { -1 };
            let mut magnitude = 1i8;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                magnitude = (d - b'0') as i8;
                self.pos += 1;
            } else {
                while self.peek() == Some(sign) {
                    magnitude += 1;
                    self.pos += 1;
                }
            }
            atom.charge = unit * magnitude;
        }
        if self.peek() == Some(b':') {
            // atom class, ignored
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        match self.peek() {
            Some(b']') => {
                self.pos += 1;
                Ok(atom)
            }
            Some(_) => Err(self.unexpected()),
            None => Err(SmilesError::UnexpectedCharacter {
                offset: open,
                found: '[',
            }),
        }
    }

    fn finish(mut self) -> Result<Molecule, SmilesError> {
        let graph = |atoms: Vec<Atom>, bonds: Vec<Bond>, offsets: &[usize]| {
            Molecule::from_parts(atoms, bonds).map_err(|e| {
                let atom = match e {
                    crate::molecule::GraphError::DanglingBond(_) => 0,
                    crate::molecule::GraphError::SelfBond(a)
                    | crate::molecule::GraphError::DuplicateBond(a, _) => a,
                };
                SmilesError::ValenceViolation {
                    offset: offsets.get(atom).copied().unwrap_or(0),
                }
            })
        };
        let mol = graph(self.atoms.clone(), self.bonds.clone(), &self.offsets)?;

        // an unmarked bond between aromatic atoms is only aromatic inside a ring
        for (i, b) in mol.bonds().iter().enumerate() {
            if self.implicit_aromatic[i] && !b.in_ring {
                self.bonds[i].order = BondOrder::Single;
            }
        }
        for (i, a) in mol.atoms().iter().enumerate() {
            if a.aromatic && !a.in_ring {
                return Err(SmilesError::AromaticOutsideRing {
                    offset: self.offsets[i],
                });
            }
        }

        // implicit hydrogens for atoms written outside brackets
        let mut units = vec![0usize; self.atoms.len()];
        let mut has_double = vec![false; self.atoms.len()];
        for b in &self.bonds {
            let u = b.order.valence_units() as usize;
            units[b.begin] += u;
            units[b.end] += u;
            if b.order == BondOrder::Double {
                has_double[b.begin] = true;
                has_double[b.end] = true;
            }
        }
        for (i, atom) in self.atoms.iter_mut().enumerate() {
            if atom.bracket {
                continue;
            }
            let violation = SmilesError::ValenceViolation {
                offset: self.offsets[i],
            };
            let sum = units[i];
            atom.hydrogens = if atom.aromatic {
                let capacity: usize = match atom.atomic_number {
                    6 => 4,
                    5 => 3,
                    _ => 0,
                };
                if capacity > 0 {
                    let pi = usize::from(!has_double[i]);
                    capacity.checked_sub(sum + pi).ok_or(violation)? as u8
                } else {
                    let max = element::valences(atom.atomic_number, 0)
                        .last()
                        .copied()
                        .unwrap_or(0) as usize;
                    if sum > max {
                        return Err(violation);
                    }
                    0
                }
            } else {
                let v = element::valences(atom.atomic_number, 0)
                    .iter()
                    .map(|&v| v as usize)
                    .find(|&v| v >= sum)
                    .ok_or(violation)?;
                (v - sum) as u8
            };
        }

        let mut mol = graph(self.atoms, self.bonds, &self.offsets)?;
        perceive_kekule_benzenoids(&mut mol);
        let mol = graph(mol.atoms().to_vec(), mol.bonds().to_vec(), &self.offsets)?;
        let (_, complete) = crate::kekule::pi_atoms(&mol);
        if !complete {
            let bad = (0..mol.atom_count())
                .find(|&a| mol.atom(a).aromatic)
                .unwrap_or(0);
            return Err(SmilesError::ValenceViolation {
                offset: self.offsets[bad],
            });
        }
        Ok(mol)
    }
}

/// Marks six-membered rings of alternating single/double bonds over neutral
/// C/N atoms as aromatic, repeating so fused systems are picked up.
fn perceive_kekule_benzenoids(mol: &mut Molecule) {
    loop {
        let mut changed = false;
        let rings: Vec<Vec<usize>> = mol.rings().to_vec();
        for ring in rings.iter().filter(|r| r.len() == 6) {
            let bond_ids: Vec<usize> = (0..6)
                .map(|k| mol.bond_between(ring[k], ring[(k + 1) % 6]).unwrap())
                .collect();
            if bond_ids
                .iter()
                .all(|&b| mol.bond(b).order == BondOrder::Aromatic)
            {
                continue;
            }
            let qualifies = ring.iter().all(|&a| {
                let atom = mol.atom(a);
                if !matches!(atom.atomic_number, 6 | 7) || atom.charge != 0 {
                    return false;
                }
                let doubles: Vec<usize> = mol
                    .neighbors(a)
                    .iter()
                    .filter(|&&(_, b)| mol.bond(b).order == BondOrder::Double)
                    .map(|&(n, _)| n)
                    .collect();
                if atom.aromatic {
                    return doubles.is_empty();
                }
                doubles.len() == 1 && ring.contains(&doubles[0])
            });
            // an explicit single bond between two aromatic atoms stays single
            let explicit_single = bond_ids.iter().any(|&b| {
                let bond = mol.bond(b);
                bond.order == BondOrder::Single && mol.atom(bond.begin).aromatic && mol.atom(bond.end).aromatic
            });
            if !qualifies || explicit_single {
                continue;
            }
            for &a in ring {
                mol.atoms_mut()[a].aromatic = true;
            }
            for &b in &bond_ids {
                mol.bonds_mut()[b].order = BondOrder::Aromatic;
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
}

/// Reads a corpus file: one SMILES per line, lines starting with `#` are
/// comments, anything after the first whitespace on a line is ignored.
pub fn read_smiles_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim_start)
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_whitespace().next())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methane() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(m.atom_count(), 1);
        assert_eq!(m.atom(0).hydrogens, 4);
    }

    #[test]
    fn unbalanced_parenthesis_offset() {
        assert_eq!(
            parse_smiles("C(").unwrap_err(),
            SmilesError::UnbalancedParenthesis { offset: 1 }
        );
        assert_eq!(
            parse_smiles("CC)C").unwrap_err(),
            SmilesError::UnbalancedParenthesis { offset: 2 }
        );
    }

    #[test]
    fn benzene_aromatic() {
        // reference toolkit: 6 aromatic atoms, 1 ring, 6 hydrogens
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.atom_count(), 6);
        assert_eq!(m.rings().len(), 1);
        assert!(m.atoms().iter().all(|a| a.aromatic && a.in_ring && a.hydrogens == 1));
    }

    #[test]
    fn kekule_benzene_is_perceived() {
        let m = parse_smiles("C1=CC=CC=C1").unwrap();
        assert!(m.atoms().iter().all(|a| a.aromatic && a.hydrogens == 1));
        assert!(m.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
    }

    #[test]
    fn kekule_naphthalene_both_rings() {
        let m = parse_smiles("C1=CC=C2C=CC=CC2=C1").unwrap();
        assert!(m.atoms().iter().all(|a| a.aromatic));
        let m = parse_smiles("C1=CC2=CC=CC=C2C=C1").unwrap();
        assert!(m.atoms().iter().all(|a| a.aromatic));
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(
            parse_smiles("C1CC").unwrap_err(),
            SmilesError::UnclosedRingBond { offset: 1 }
        );
        assert_eq!(
            parse_smiles("CXC").unwrap_err(),
            SmilesError::UnknownElement { offset: 1 }
        );
        assert_eq!(
            parse_smiles("CC(C)(C)(C)C").unwrap_err(),
            SmilesError::ValenceViolation { offset: 1 }
        );
        assert_eq!(
            parse_smiles("[Xy]").unwrap_err(),
            SmilesError::UnknownElement { offset: 1 }
        );
        assert_eq!(parse_smiles("  ").unwrap_err(), SmilesError::Empty);
        assert!(matches!(
            parse_smiles("cc").unwrap_err(),
            SmilesError::AromaticOutsideRing { offset: 0 }
        ));
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[NH4+]").unwrap();
        assert_eq!(m.atom(0).charge, 1);
        assert_eq!(m.atom(0).hydrogens, 4);
        let m = parse_smiles("[13CH3]O").unwrap();
        assert_eq!(m.atom(0).isotope, Some(13));
        let m = parse_smiles("[O-][N+](=O)c1ccccc1").unwrap();
        assert_eq!(m.atom(0).charge, -1);
        assert_eq!(m.atom(1).charge, 1);
        let m = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(m.atom(3).hydrogens, 1);
        let m = parse_smiles("[Fe++]").unwrap();
        assert_eq!(m.atom(0).charge, 2);
    }

    #[test]
    fn stereo_marks_preserved() {
        let m = parse_smiles("F/C=C\\F").unwrap();
        assert_eq!(m.bond(0).stereo, Some('/'));
        assert_eq!(m.bond(2).stereo, Some('\\'));
        let m = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        assert_eq!(m.atom(1).chirality.as_deref(), Some("@@"));
        assert_eq!(m.atom(1).hydrogens, 1);
    }

    #[test]
    fn ring_closure_bonds_and_percent() {
        let m = parse_smiles("C%12CC%12").unwrap();
        assert_eq!(m.rings().len(), 1);
        let m = parse_smiles("C=1CC1").unwrap();
        assert_eq!(m.bond(2).order, BondOrder::Double);
        assert_eq!(m.atom(0).hydrogens, 1);
    }

    #[test]
    fn biphenyl_link_is_single() {
        let m = parse_smiles("c1ccccc1c1ccccc1").unwrap();
        let link = m.bond_between(5, 6).unwrap();
        assert_eq!(m.bond(link).order, BondOrder::Single);
    }

    #[test]
    fn dot_disconnected() {
        let m = parse_smiles("[Na+].[Cl-]").unwrap();
        assert_eq!(m.components().len(), 2);
    }

    #[test]
    fn hypervalent_defaults() {
        let m = parse_smiles("CS(=O)(=O)C").unwrap();
        assert_eq!(m.atom(1).hydrogens, 0);
        let m = parse_smiles("OP(=O)(O)O").unwrap();
        assert_eq!(m.atom(1).hydrogens, 0);
        let m = parse_smiles("CN(=O)=O").unwrap();
        assert_eq!(m.atom(1).hydrogens, 0);
    }

    #[test]
    fn corpus_lines() {
        let v = read_smiles_lines("# header\nCCO name\n\n c1ccccc1 # benzene\n");
        assert_eq!(v, vec!["CCO", "c1ccccc1"]);
    }
}
