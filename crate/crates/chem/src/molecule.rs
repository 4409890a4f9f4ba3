//! The attributed molecular graph shared by every chemistry routine.

use crate::element;
use crate::rings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer contribution used for valence sums; aromatic counts as one.
    pub fn valence_units(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub atomic_number: u8,
    pub charge: i8,
    pub isotope: Option<u16>,
    /// Hydrogens carried by this atom (implicit or from a bracket count).
    pub hydrogens: u8,
    pub aromatic: bool,
    pub in_ring: bool,
    /// Written inside brackets in the source text.
    pub bracket: bool,
    /// Tetrahedral mark (`@` or `@@`), kept verbatim and otherwise unused.
    pub chirality: Option<String>,
}

impl Atom {
    pub fn new(atomic_number: u8) -> Self {
        Atom {
            atomic_number,
            charge: 0,
            isotope: None,
            hydrogens: 0,
            aromatic: false,
            in_ring: false,
            bracket: false,
            chirality: None,
        }
    }

    pub fn symbol(&self) -> &'static str {
        element::symbol(self.atomic_number)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub in_ring: bool,
    /// Directional mark (`/` or `\`) as written, relative to `begin -> end`.
    pub stereo: Option<char>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("bond {0} references a missing atom")]
    DanglingBond(usize),
    #[error("atom {0} is bonded to itself")]
    SelfBond(usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
}

/// A molecular graph with hydrogens folded into their heavy atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    rings: Vec<Vec<usize>>,
    pi: Vec<bool>,
}

impl Molecule {
    /// Builds a molecule, validating connectivity and perceiving rings.
    /// Ring flags on atoms and bonds are recomputed here.
    pub fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, b) in bonds.iter().enumerate() {
            if b.begin >= atoms.len() || b.end >= atoms.len() {
                return Err(GraphError::DanglingBond(i));
            }
            if b.begin == b.end {
                return Err(GraphError::SelfBond(b.begin));
            }
            if adjacency[b.begin].iter().any(|&(n, _)| n == b.end) {
                return Err(GraphError::DuplicateBond(b.begin, b.end));
            }
            adjacency[b.begin].push((b.end, i));
            adjacency[b.end].push((b.begin, i));
        }
        let mut mol = Molecule {
            atoms,
            bonds,
            adjacency,
            rings: Vec::new(),
            pi: Vec::new(),
        };
        mol.perceive_rings();
        Ok(mol)
    }

    fn perceive_rings(&mut self) {
        let ring_bonds = rings::ring_bonds(self);
        for (b, flag) in self.bonds.iter_mut().zip(&ring_bonds) {
            b.in_ring = *flag;
        }
        for a in self.atoms.iter_mut() {
            a.in_ring = false;
        }
        for (i, b) in self.bonds.iter().enumerate() {
            if ring_bonds[i] {
                self.atoms[b.begin].in_ring = true;
                self.atoms[b.end].in_ring = true;
            }
        }
        self.rings = rings::sssr(self);
        self.pi = crate::kekule::pi_atoms(self).0;
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bond(&self, i: usize) -> &Bond {
        &self.bonds[i]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(neighbor, bond index)` pairs of an atom.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, bi)| bi)
    }

    /// Smallest set of smallest rings, each as an ordered atom cycle.
    pub fn rings(&self) -> &[Vec<usize>] {
        &self.rings
    }

    /// Explicit graph degree.
    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    /// Degree counting only non-hydrogen neighbors.
    pub fn heavy_degree(&self, atom: usize) -> usize {
        self.adjacency[atom]
            .iter()
            .filter(|&&(n, _)| self.atoms[n].atomic_number != 1)
            .count()
    }

    /// Hydrogens on the atom, whether folded in or present as explicit neighbors.
    pub fn total_hydrogens(&self, atom: usize) -> usize {
        self.atoms[atom].hydrogens as usize
            + self.adjacency[atom]
                .iter()
                .filter(|&&(n, _)| self.atoms[n].atomic_number == 1)
                .count()
    }

    /// Number of SSSR rings containing the atom.
    pub fn ring_count(&self, atom: usize) -> usize {
        self.rings.iter().filter(|r| r.contains(&atom)).count()
    }

    /// Size of the smallest SSSR ring containing the atom, if any.
    pub fn smallest_ring_size(&self, atom: usize) -> Option<usize> {
        self.rings
            .iter()
            .filter(|r| r.contains(&atom))
            .map(|r| r.len())
            .min()
    }

    pub fn ring_bond_count(&self, atom: usize) -> usize {
        self.adjacency[atom]
            .iter()
            .filter(|&&(_, b)| self.bonds[b].in_ring)
            .count()
    }

    /// Sum of bond valence units (aromatic bonds count one) plus hydrogens.
    pub fn valence_without_pi(&self, atom: usize) -> usize {
        self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence_units() as usize)
            .sum::<usize>()
            + self.atoms[atom].hydrogens as usize
    }

    /// Total valence with aromatic systems resolved to a Kekulé structure.
    pub fn total_valence(&self, atom: usize) -> usize {
        self.valence_without_pi(atom) + usize::from(self.pi[atom])
    }

    /// Whether the atom takes a double bond in the Kekulé form of its aromatic system.
    pub fn has_pi_bond(&self, atom: usize) -> bool {
        self.pi[atom]
    }

    /// Connected components as sorted atom lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut i = 0;
            while i < comp.len() {
                let a = comp[i];
                for &(n, _) in &self.adjacency[a] {
                    if !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// The induced subgraph on `atoms` (in the given order).
    pub fn subgraph(&self, atoms: &[usize]) -> Molecule {
        let mut index = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in atoms.iter().enumerate() {
            index[old] = new;
        }
        let kept = atoms.iter().map(|&i| self.atoms[i].clone()).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| index[b.begin] != usize::MAX && index[b.end] != usize::MAX)
            .map(|b| Bond {
                begin: index[b.begin],
                end: index[b.end],
                ..b.clone()
            })
            .collect();
        Molecule::from_parts(kept, bonds).expect("induced subgraph is valid")
    }

    /// Relabels atoms so that old atom `i` becomes atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length");
        let mut atoms = vec![Atom::new(0); self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old].clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                begin: perm[b.begin],
                end: perm[b.end],
                ..b.clone()
            })
            .collect();
        Molecule::from_parts(atoms, bonds).expect("permutation preserves validity")
    }

    /// Copy with every folded hydrogen turned into an explicit atom.
    pub fn with_explicit_hydrogens(&self) -> Molecule {
        let mut atoms = self.atoms.clone();
        let mut bonds = self.bonds.clone();
        for i in 0..self.atoms.len() {
            let h = self.atoms[i].hydrogens;
            atoms[i].hydrogens = 0;
            for _ in 0..h {
                let idx = atoms.len();
                atoms.push(Atom::new(1));
                bonds.push(Bond {
                    begin: i,
                    end: idx,
                    order: BondOrder::Single,
                    in_ring: false,
                    stereo: None,
                });
            }
        }
        Molecule::from_parts(atoms, bonds).expect("hydrogen expansion preserves validity")
    }

    /// Mutable access used by the parser to finish perception.
    pub(crate) fn atoms_mut(&mut self) -> &mut [Atom] {
        &mut self.atoms
    }

    pub(crate) fn bonds_mut(&mut self) -> &mut [Bond] {
        &mut self.bonds
    }
}
