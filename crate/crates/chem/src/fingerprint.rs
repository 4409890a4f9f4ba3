//! Circular (Morgan-style) bit fingerprints and Tanimoto similarity.

use crate::molecule::Molecule;

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_BITS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FingerprintError {
    #[error("fingerprint size {0} is not a power of two of at least 64")]
    InvalidSize(usize),
    #[error("fingerprint lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    nbits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn new(nbits: usize) -> Result<Self, FingerprintError> {
        if nbits < 64 || !nbits.is_power_of_two() {
            return Err(FingerprintError::InvalidSize(nbits));
        }
        Ok(Fingerprint {
            nbits,
            words: vec![0; nbits / 64],
        })
    }

    pub fn len(&self) -> usize {
        self.nbits
    }

    pub fn is_empty(&self) -> bool {
        self.nbits == 0
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

fn initial_invariant(mol: &Molecule, i: usize) -> u64 {
    let a = mol.atom(i);
    let mut h = Fnv::new();
    h.write(a.atomic_number as u64);
    h.write(mol.heavy_degree(i) as u64);
    h.write(mol.total_hydrogens(i) as u64);
    h.write(a.charge as i64 as u64);
    h.write(a.in_ring as u64);
    h.write(a.aromatic as u64);
    h.write(a.isotope.unwrap_or(0) as u64);
    h.0
}

/// Unfolded neighbourhood hashes of every heavy atom at every radius up to
/// `radius`, in atom order per radius.
pub fn environment_hashes(mol: &Molecule, radius: usize) -> Vec<u64> {
    let heavy: Vec<usize> = (0..mol.atom_count())
        .filter(|&i| mol.atom(i).atomic_number != 1)
        .collect();
    let mut inv = vec![0u64; mol.atom_count()];
    let mut out = Vec::with_capacity(heavy.len() * (radius + 1));
    for &i in &heavy {
        inv[i] = initial_invariant(mol, i);
        out.push(inv[i]);
    }
    for round in 1..=radius {
        let mut next = inv.clone();
        for &i in &heavy {
            let mut env: Vec<(u8, u64)> = mol
                .neighbors(i)
                .iter()
                .filter(|&&(n, _)| mol.atom(n).atomic_number != 1)
                .map(|&(n, b)| (mol.bond(b).order.code(), inv[n]))
                .collect();
            env.sort_unstable();
            let mut h = Fnv::new();
            h.write(round as u64);
            h.write(inv[i]);
            for (code, v) in env {
                h.write(code as u64);
                h.write(v);
            }
            next[i] = h.0;
            out.push(next[i]);
        }
        inv = next;
    }
    out
}

/// Morgan fingerprint of the heavy-atom graph folded into `nbits` bits.
pub fn morgan_fingerprint(mol: &Molecule, radius: usize, nbits: usize) -> Result<Fingerprint, FingerprintError> {
    let mut fp = Fingerprint::new(nbits)?;
    for h in environment_hashes(mol, radius) {
        fp.set((h % nbits as u64) as usize);
    }
    Ok(fp)
}

/// |A∩B| / |A∪B|; two empty fingerprints are identical (1.0).
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::LengthMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn fp(s: &str) -> Fingerprint {
        morgan_fingerprint(&parse_smiles(s).unwrap(), DEFAULT_RADIUS, DEFAULT_BITS).unwrap()
    }

    #[test]
    fn identical_is_one() {
        assert_eq!(tanimoto(&fp("CCO"), &fp("OCC")).unwrap(), 1.0);
    }

    #[test]
    fn related_molecules_more_similar() {
        let benzene = fp("c1ccccc1");
        let toluene = fp("Cc1ccccc1");
        let ethanol = fp("CCO");
        assert!(tanimoto(&benzene, &toluene).unwrap() > tanimoto(&benzene, &ethanol).unwrap());
    }

    #[test]
    fn size_checks() {
        assert!(Fingerprint::new(100).is_err());
        assert!(Fingerprint::new(32).is_err());
        let a = Fingerprint::new(64).unwrap();
        let b = Fingerprint::new(128).unwrap();
        assert_eq!(tanimoto(&a, &b), Err(FingerprintError::LengthMismatch(64, 128)));
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
    }
}
