//! SMARTS queries over the atomic primitives needed by the descriptor tables:
//! element and atomic number, aromaticity, degree and connectivity, hydrogen
//! count, charge, isotope, valence and ring membership, combined with
//! `!`, `&`, `,` and `;`. Recursive `$()` environments are supported because
//! several shipped donor/acceptor and alert definitions are written with them.

use crate::element;
use crate::molecule::{BondOrder, Molecule};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmartsError {
    #[error("empty SMARTS pattern")]
    Empty,
    #[error("unexpected {found:?} at offset {offset} in SMARTS")]
    Unexpected { offset: usize, found: char },
    #[error("unexpected end of SMARTS")]
    UnexpectedEnd,
    #[error("unclosed ring bond {label} in SMARTS")]
    UnclosedRing { label: u32 },
    #[error("unbalanced parenthesis in SMARTS at offset {offset}")]
    UnbalancedParenthesis { offset: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomExpr {
    Any,
    Aromatic,
    Aliphatic,
    AtomicNumber(u8),
    Element { number: u8, aromatic: bool },
    Degree(u8),
    Connectivity(u8),
    TotalH(u8),
    ImplicitH(Option<u8>),
    RingCount(Option<u8>),
    RingSize(Option<u8>),
    RingConnectivity(Option<u8>),
    Valence(u8),
    Charge(i8),
    Isotope(u16),
    Recursive(Box<SmartsPattern>),
    Not(Box<AtomExpr>),
    And(Vec<AtomExpr>),
    Or(Vec<AtomExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BondExpr {
    /// No bond symbol written: single or aromatic.
    Implicit,
    Single,
    Double,
    Triple,
    Aromatic,
    Any,
    Ring,
    Not(Box<BondExpr>),
    And(Vec<BondExpr>),
    Or(Vec<BondExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmartsPattern {
    source: String,
    atoms: Vec<AtomExpr>,
    bonds: Vec<(usize, usize, BondExpr)>,
    adjacency: Vec<Vec<(usize, usize)>>,
    /// pattern atoms in search order with the already-placed neighbor they hang off
    order: Vec<(usize, Option<usize>)>,
}

impl SmartsPattern {
    pub fn parse(source: &str) -> Result<Self, SmartsError> {
        let source = source.trim();
        if source.is_empty() {
            return Err(SmartsError::Empty);
        }
        let mut p = PatternParser {
            text: source.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
        };
        p.parse_pattern()?;
        if p.atoms.is_empty() {
            return Err(SmartsError::Empty);
        }
        Ok(Self::build(source.to_string(), p.atoms, p.bonds))
    }

    fn build(source: String, atoms: Vec<AtomExpr>, bonds: Vec<(usize, usize, BondExpr)>) -> Self {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, (a, b, _)) in bonds.iter().enumerate() {
            adjacency[*a].push((*b, i));
            adjacency[*b].push((*a, i));
        }
        let mut order = Vec::with_capacity(atoms.len());
        let mut placed = vec![false; atoms.len()];
        for start in 0..atoms.len() {
            if placed[start] {
                continue;
            }
            placed[start] = true;
            order.push((start, None));
            let mut stack = vec![start];
            while let Some(a) = stack.pop() {
                for &(n, _) in adjacency[a].iter().rev() {
                    if !placed[n] {
                        placed[n] = true;
                        order.push((n, Some(a)));
                        stack.push(n);
                    }
                }
            }
        }
        SmartsPattern {
            source,
            atoms,
            bonds,
            adjacency,
            order,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom_expr(&self, i: usize) -> &AtomExpr {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[(usize, usize, BondExpr)] {
        &self.bonds
    }

    /// All embeddings, each mapping pattern atom `i` to target atom `m[i]`,
    /// sorted lexicographically.
    pub fn matches(&self, mol: &Molecule) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut map = vec![usize::MAX; self.atoms.len()];
        let mut used = vec![false; mol.atom_count()];
        self.extend(mol, 0, &mut map, &mut used, &mut |m| {
            out.push(m.to_vec());
            true
        });
        out.sort();
        out
    }

    /// Embeddings deduplicated by their target atom set (first one kept).
    pub fn unique_matches(&self, mol: &Molecule) -> Vec<Vec<usize>> {
        let mut seen = std::collections::HashSet::new();
        self.matches(mol)
            .into_iter()
            .filter(|m| {
                let mut key = m.clone();
                key.sort_unstable();
                seen.insert(key)
            })
            .collect()
    }

    pub fn has_match(&self, mol: &Molecule) -> bool {
        let mut found = false;
        let mut map = vec![usize::MAX; self.atoms.len()];
        let mut used = vec![false; mol.atom_count()];
        self.extend(mol, 0, &mut map, &mut used, &mut |_| {
            found = true;
            false
        });
        found
    }

    /// Whether some embedding places pattern atom 0 on `atom`.
    pub fn matches_at(&self, mol: &Molecule, atom: usize) -> bool {
        if !atom_matches(&self.atoms[0], mol, atom) {
            return false;
        }
        let mut found = false;
        let mut map = vec![usize::MAX; self.atoms.len()];
        let mut used = vec![false; mol.atom_count()];
        map[0] = atom;
        used[atom] = true;
        debug_assert_eq!(self.order[0].0, 0);
        self.extend(mol, 1, &mut map, &mut used, &mut |_| {
            found = true;
            false
        });
        found
    }

    /// Depth-first extension; the callback returns false to stop the search.
    fn extend(
        &self,
        mol: &Molecule,
        depth: usize,
        map: &mut [usize],
        used: &mut [bool],
        emit: &mut dyn FnMut(&[usize]) -> bool,
    ) -> bool {
        if depth == self.order.len() {
            return emit(map);
        }
        let (p, anchor) = self.order[depth];
        let candidates: Vec<usize> = match anchor {
            Some(q) => mol.neighbors(map[q]).iter().map(|&(n, _)| n).collect(),
            None => (0..mol.atom_count()).collect(),
        };
        for t in candidates {
            if used[t] || !atom_matches(&self.atoms[p], mol, t) {
                continue;
            }
            let bonds_ok = self.adjacency[p].iter().all(|&(q, bi)| {
                if map[q] == usize::MAX {
                    return true;
                }
                match mol.bond_between(t, map[q]) {
                    Some(tb) => bond_matches(&self.bonds[bi].2, mol, tb),
                    None => false,
                }
            });
            if !bonds_ok {
                continue;
            }
            map[p] = t;
            used[t] = true;
            let keep_going = self.extend(mol, depth + 1, map, used, emit);
            map[p] = usize::MAX;
            used[t] = false;
            if !keep_going {
                return false;
            }
        }
        true
    }
}

/// Evaluates one atom expression against target atom `i`.
pub fn atom_matches(expr: &AtomExpr, mol: &Molecule, i: usize) -> bool {
    let a = mol.atom(i);
    match expr {
        AtomExpr::Any => true,
        AtomExpr::Aromatic => a.aromatic,
        AtomExpr::Aliphatic => !a.aromatic,
        AtomExpr::AtomicNumber(z) => a.atomic_number == *z,
        AtomExpr::Element { number, aromatic } => a.atomic_number == *number && a.aromatic == *aromatic,
        AtomExpr::Degree(d) => mol.degree(i) == *d as usize,
        AtomExpr::Connectivity(x) => mol.degree(i) + a.hydrogens as usize == *x as usize,
        AtomExpr::TotalH(h) => mol.total_hydrogens(i) == *h as usize,
        AtomExpr::ImplicitH(None) => a.hydrogens > 0,
        AtomExpr::ImplicitH(Some(h)) => a.hydrogens == *h,
        AtomExpr::RingCount(None) => a.in_ring,
        AtomExpr::RingCount(Some(n)) => mol.ring_count(i) == *n as usize,
        AtomExpr::RingSize(None) => a.in_ring,
        AtomExpr::RingSize(Some(n)) => mol
            .rings()
            .iter()
            .any(|r| r.len() == *n as usize && r.contains(&i)),
        AtomExpr::RingConnectivity(None) => mol.ring_bond_count(i) > 0,
        AtomExpr::RingConnectivity(Some(n)) => mol.ring_bond_count(i) == *n as usize,
        AtomExpr::Valence(v) => mol.total_valence(i) == *v as usize,
        AtomExpr::Charge(c) => a.charge == *c,
        AtomExpr::Isotope(m) => a.isotope == Some(*m),
        AtomExpr::Recursive(p) => p.matches_at(mol, i),
        AtomExpr::Not(e) => !atom_matches(e, mol, i),
        AtomExpr::And(v) => v.iter().all(|e| atom_matches(e, mol, i)),
        AtomExpr::Or(v) => v.iter().any(|e| atom_matches(e, mol, i)),
    }
}

pub fn bond_matches(expr: &BondExpr, mol: &Molecule, b: usize) -> bool {
    let bond = mol.bond(b);
    match expr {
        BondExpr::Implicit => matches!(bond.order, BondOrder::Single | BondOrder::Aromatic),
        BondExpr::Single => bond.order == BondOrder::Single,
        BondExpr::Double => bond.order == BondOrder::Double,
        BondExpr::Triple => bond.order == BondOrder::Triple,
        BondExpr::Aromatic => bond.order == BondOrder::Aromatic,
        BondExpr::Any => true,
        BondExpr::Ring => bond.in_ring,
        BondExpr::Not(e) => !bond_matches(e, mol, b),
        BondExpr::And(v) => v.iter().all(|e| bond_matches(e, mol, b)),
        BondExpr::Or(v) => v.iter().any(|e| bond_matches(e, mol, b)),
    }
}

/// Convenience wrapper: all embeddings of `pattern` in `mol`.
pub fn match_smarts(pattern: &SmartsPattern, mol: &Molecule) -> Vec<Vec<usize>> {
    pattern.matches(mol)
}

struct PatternParser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<AtomExpr>,
    bonds: Vec<(usize, usize, BondExpr)>,
}

fn is_bond_char(c: u8) -> bool {
    matches!(c, b'-' | b'=' | b'#' | b':' | b'~' | b'@' | b'!' | b'&' | b',' | b';' | b'/' | b'\\')
}

impl PatternParser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn unexpected(&self) -> SmartsError {
        match self.peek() {
            Some(c) => SmartsError::Unexpected {
                offset: self.pos,
                found: c as char,
            },
            None => SmartsError::UnexpectedEnd,
        }
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            std::str::from_utf8(&self.text[start..self.pos]).ok()?.parse().ok()
        }
    }

    fn parse_pattern(&mut self) -> Result<(), SmartsError> {
        let mut prev: Option<usize> = None;
        let mut pending: Option<BondExpr> = None;
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut rings: std::collections::BTreeMap<u32, (usize, Option<BondExpr>)> = Default::default();
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if prev.is_none() {
                        return Err(self.unexpected());
                    }
                    branches.push((prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    let Some((p, _)) = branches.pop() else {
                        return Err(SmartsError::UnbalancedParenthesis { offset: self.pos });
                    };
                    prev = p;
                    self.pos += 1;
                }
                b'.' => {
                    prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return Err(self.unexpected());
                    };
                    let label = if c == b'%' {
                        self.pos += 1;
                        self.number().ok_or_else(|| self.unexpected())?
                    } else {
                        self.pos += 1;
                        (c - b'0') as u32
                    };
                    let bond = pending.take();
                    if let Some((other, open_bond)) = rings.remove(&label) {
                        let expr = bond.or(open_bond).unwrap_or(BondExpr::Implicit);
                        self.bonds.push((other, atom, expr));
                    } else {
                        rings.insert(label, (atom, bond));
                    }
                }
                c if is_bond_char(c) => {
                    if pending.is_some() || prev.is_none() {
                        return Err(self.unexpected());
                    }
                    pending = Some(self.bond_low()?);
                }
                _ => {
                    let expr = self.parse_atom()?;
                    self.atoms.push(expr);
                    let idx = self.atoms.len() - 1;
                    if let Some(p) = prev {
                        self.bonds.push((p, idx, pending.take().unwrap_or(BondExpr::Implicit)));
                    } else if pending.is_some() {
                        return Err(self.unexpected());
                    }
                    prev = Some(idx);
                }
            }
        }
        if let Some(&(_, offset)) = branches.first() {
            return Err(SmartsError::UnbalancedParenthesis { offset });
        }
        if let Some((&label, _)) = rings.iter().next() {
            return Err(SmartsError::UnclosedRing { label });
        }
        if pending.is_some() {
            return Err(SmartsError::UnexpectedEnd);
        }
        Ok(())
    }

    fn parse_atom(&mut self) -> Result<AtomExpr, SmartsError> {
        let c = self.peek().ok_or(SmartsError::UnexpectedEnd)?;
        if c == b'[' {
            self.pos += 1;
            let e = self.atom_low()?;
            if self.peek() != Some(b']') {
                return Err(self.unexpected());
            }
            self.pos += 1;
            return Ok(e);
        }
        let rest = &self.text[self.pos..];
        let (expr, len) = if rest.starts_with(b"Cl") {
            (AtomExpr::Element { number: 17, aromatic: false }, 2)
        } else if rest.starts_with(b"Br") {
            (AtomExpr::Element { number: 35, aromatic: false }, 2)
        } else {
            let e = match c {
                b'*' => AtomExpr::Any,
                b'a' => AtomExpr::Aromatic,
                b'A' => AtomExpr::Aliphatic,
                b'B' => AtomExpr::Element { number: 5, aromatic: false },
                b'C' => AtomExpr::Element { number: 6, aromatic: false },
                b'N' => AtomExpr::Element { number: 7, aromatic: false },
                b'O' => AtomExpr::Element { number: 8, aromatic: false },
                b'P' => AtomExpr::Element { number: 15, aromatic: false },
                b'S' => AtomExpr::Element { number: 16, aromatic: false },
                b'F' => AtomExpr::Element { number: 9, aromatic: false },
                b'I' => AtomExpr::Element { number: 53, aromatic: false },
                b'b' => AtomExpr::Element { number: 5, aromatic: true },
                b'c' => AtomExpr::Element { number: 6, aromatic: true },
                b'n' => AtomExpr::Element { number: 7, aromatic: true },
                b'o' => AtomExpr::Element { number: 8, aromatic: true },
                b'p' => AtomExpr::Element { number: 15, aromatic: true },
                b's' => AtomExpr::Element { number: 16, aromatic: true },
                _ => return Err(self.unexpected()),
            };
            (e, 1)
        };
        self.pos += len;
        Ok(expr)
    }

    fn atom_low(&mut self) -> Result<AtomExpr, SmartsError> {
        let mut terms = vec![self.atom_or()?];
        while self.peek() == Some(b';') {
            self.pos += 1;
            terms.push(self.atom_or()?);
        }
        Ok(collapse(terms, AtomExpr::And))
    }

    fn atom_or(&mut self) -> Result<AtomExpr, SmartsError> {
        let mut terms = vec![self.atom_high()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            terms.push(self.atom_high()?);
        }
        Ok(collapse(terms, AtomExpr::Or))
    }

    fn atom_high(&mut self) -> Result<AtomExpr, SmartsError> {
        let mut terms = vec![self.atom_unary()?];
        loop {
            match self.peek() {
                Some(b'&') => {
                    self.pos += 1;
                    terms.push(self.atom_unary()?);
                }
                Some(b']' | b';' | b',' | b')') | None => break,
                Some(_) => terms.push(self.atom_unary()?),
            }
        }
        Ok(collapse(terms, AtomExpr::And))
    }

    fn atom_unary(&mut self) -> Result<AtomExpr, SmartsError> {
        if self.peek() == Some(b'!') {
            self.pos += 1;
            return Ok(AtomExpr::Not(Box::new(self.atom_unary()?)));
        }
        self.atom_primitive()
    }

    fn atom_primitive(&mut self) -> Result<AtomExpr, SmartsError> {
        let c = self.peek().ok_or(SmartsError::UnexpectedEnd)?;
        let next = self.text.get(self.pos + 1).copied();
        // two-letter element symbols take precedence over primitive letters
        if c.is_ascii_uppercase() {
            if let Some(l) = next.filter(u8::is_ascii_lowercase) {
                let sym = [c, l];
                if let Some(z) = element::atomic_number(std::str::from_utf8(&sym).unwrap()) {
                    self.pos += 2;
                    return Ok(AtomExpr::Element { number: z, aromatic: false });
                }
            }
        }
        if c == b's' && next == Some(b'e') {
            self.pos += 2;
            return Ok(AtomExpr::Element { number: 34, aromatic: true });
        }
        if c == b'a' && next == Some(b's') {
            self.pos += 2;
            return Ok(AtomExpr::Element { number: 33, aromatic: true });
        }
        self.pos += 1;
        let count = |p: &mut Self| p.number().map(|n| n.min(255) as u8);
        Ok(match c {
            b'*' => AtomExpr::Any,
            b'a' => AtomExpr::Aromatic,
            b'A' => AtomExpr::Aliphatic,
            b'#' => AtomExpr::AtomicNumber(count(self).ok_or_else(|| self.unexpected())?),
            b'D' => AtomExpr::Degree(count(self).unwrap_or(1)),
            b'X' => AtomExpr::Connectivity(count(self).unwrap_or(1)),
            b'H' => AtomExpr::TotalH(count(self).unwrap_or(1)),
            b'h' => AtomExpr::ImplicitH(count(self)),
            b'R' => AtomExpr::RingCount(count(self)),
            b'r' => AtomExpr::RingSize(count(self)),
            b'x' => AtomExpr::RingConnectivity(count(self)),
            b'v' => AtomExpr::Valence(count(self).unwrap_or(1)),
            b'+' | b'-' => {
                let unit: i8 = if c == b'+' { 1 } else { -1 };
                if let Some(n) = self.number() {
                    AtomExpr::Charge(unit * n as i8)
                } else {
                    let mut m = 1i8;
                    while self.peek() == Some(c) {
                        self.pos += 1;
                        m += 1;
                    }
                    AtomExpr::Charge(unit * m)
                }
            }
            b'$' => {
                if self.peek() != Some(b'(') {
                    return Err(self.unexpected());
                }
                self.pos += 1;
                let start = self.pos;
                let mut depth = 1;
                while depth > 0 {
                    match self.peek() {
                        Some(b'(') => depth += 1,
                        Some(b')') => depth -= 1,
                        Some(_) => {}
                        None => return Err(SmartsError::UnexpectedEnd),
                    }
                    self.pos += 1;
                }
                let inner = std::str::from_utf8(&self.text[start..self.pos - 1]).unwrap();
                AtomExpr::Recursive(Box::new(SmartsPattern::parse(inner)?))
            }
            b'0'..=b'9' => {
                self.pos -= 1;
                AtomExpr::Isotope(self.number().unwrap() as u16)
            }
            b'c' | b'n' | b'o' | b's' | b'p' | b'b' => AtomExpr::Element {
                number: match c {
                    b'c' => 6,
                    b'n' => 7,
                    b'o' => 8,
                    b's' => 16,
                    b'p' => 15,
                    _ => 5,
                },
                aromatic: true,
            },
            c if c.is_ascii_uppercase() => {
                match element::atomic_number(std::str::from_utf8(&[c]).unwrap()) {
                    Some(z) => AtomExpr::Element { number: z, aromatic: false },
                    None => {
                        self.pos -= 1;
                        return Err(self.unexpected());
                    }
                }
            }
            _ => {
                self.pos -= 1;
                return Err(self.unexpected());
            }
        })
    }

    fn bond_low(&mut self) -> Result<BondExpr, SmartsError> {
        let mut terms = vec![self.bond_or()?];
        while self.peek() == Some(b';') {
            self.pos += 1;
            terms.push(self.bond_or()?);
        }
        Ok(collapse(terms, BondExpr::And))
    }

    fn bond_or(&mut self) -> Result<BondExpr, SmartsError> {
        let mut terms = vec![self.bond_high()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            terms.push(self.bond_high()?);
        }
        Ok(collapse(terms, BondExpr::Or))
    }

    fn bond_high(&mut self) -> Result<BondExpr, SmartsError> {
        let mut terms = vec![self.bond_unary()?];
        loop {
            match self.peek() {
                Some(b'&') => {
                    self.pos += 1;
                    terms.push(self.bond_unary()?);
                }
                Some(c) if is_bond_char(c) && c != b';' && c != b',' => {
                    terms.push(self.bond_unary()?)
                }
                _ => break,
            }
        }
        Ok(collapse(terms, BondExpr::And))
    }

    fn bond_unary(&mut self) -> Result<BondExpr, SmartsError> {
        let c = self.peek().ok_or(SmartsError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(match c {
            b'!' => BondExpr::Not(Box::new(self.bond_unary()?)),
            b'-' | b'/' | b'\\' => BondExpr::Single,
            b'=' => BondExpr::Double,
            b'#' => BondExpr::Triple,
            b':' => BondExpr::Aromatic,
            b'~' => BondExpr::Any,
            b'@' => BondExpr::Ring,
            _ => {
                self.pos -= 1;
                return Err(self.unexpected());
            }
        })
    }
}

fn collapse<T>(mut terms: Vec<T>, wrap: fn(Vec<T>) -> T) -> T {
    if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        wrap(terms)
    }
}
