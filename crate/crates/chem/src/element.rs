//! Element data: symbols, atomic numbers, default valences and average weights.

use std::collections::HashMap;
use std::sync::OnceLock;

/// Symbols indexed by atomic number (index 0 is the wildcard).
const SYMBOLS: [&str; 87] = [
    "*", "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge",
    "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd",
    "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn",
];

/// Atomic number for a (case-sensitive) element symbol.
pub fn atomic_number(symbol: &str) -> Option<u8> {
    SYMBOLS
        .iter()
        .position(|s| *s == symbol)
        .filter(|&z| z > 0)
        .map(|z| z as u8)
}

pub fn symbol(z: u8) -> &'static str {
    SYMBOLS.get(z as usize).copied().unwrap_or("*")
}

/// Elements that may be written without brackets in SMILES.
pub const ORGANIC_SUBSET: [u8; 10] = [5, 6, 7, 8, 9, 15, 16, 17, 35, 53];

pub fn is_organic(z: u8) -> bool {
    ORGANIC_SUBSET.contains(&z)
}

/// Allowed valences of an atom given its formal charge, smallest first.
/// Charged atoms take the valences of the isoelectronic neutral element.
pub fn valences(z: u8, charge: i8) -> &'static [u8] {
    let effective = match (z, charge) {
        (_, 0) => z,
        // group 13-17 atoms shift to their isoelectronic neighbor
        (5..=9 | 13..=17 | 31..=35 | 49..=53, c) => {
            let shifted = z as i16 - c as i16;
            if shifted < 1 {
                return &[];
            }
            shifted as u8
        }
        _ => return &[],
    };
    match effective {
        1 => &[1],
        5 | 13 => &[3],
        6 | 14 => &[4],
        7 | 15 | 33 => &[3, 5],
        8 => &[2],
        16 | 34 => &[2, 4, 6],
        9 | 17 | 35 | 53 => &[1],
        4 => &[2],
        _ => &[],
    }
}

fn weight_table() -> &'static HashMap<u8, f64> {
    static TABLE: OnceLock<HashMap<u8, f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        include_str!("../data/atomic_weights.tsv")
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                (f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect()
    })
}

/// Standard atomic weight in g/mol, if tabulated.
pub fn average_weight(z: u8) -> Option<f64> {
    weight_table().get(&z).copied()
}

pub const HYDROGEN_WEIGHT: f64 = 1.008;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for z in 1..=86u8 {
            assert_eq!(atomic_number(symbol(z)), Some(z));
        }
        assert_eq!(atomic_number("Xx"), None);
        assert_eq!(atomic_number("*"), None);
    }

    #[test]
    fn charged_valences() {
        assert_eq!(valences(7, 1), &[4]);
        assert_eq!(valences(8, -1), &[1]);
        assert_eq!(valences(6, -1), &[3, 5]);
        assert_eq!(valences(8, 1), &[3, 5]);
        assert_eq!(valences(26, 0), &[] as &[u8]);
    }

    #[test]
    fn weights_loaded() {
        assert_eq!(average_weight(6), Some(12.011));
        assert_eq!(average_weight(1), Some(HYDROGEN_WEIGHT));
    }
}
