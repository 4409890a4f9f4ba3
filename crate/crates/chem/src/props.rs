//! The seven drug-likeness properties: molecular weight, Crippen LogP,
//! topological polar surface area, donor/acceptor counts, rotatable bonds and
//! QED.

use std::sync::OnceLock;

use crate::element;
use crate::molecule::{BondOrder, Molecule};
use crate::smarts::SmartsPattern;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyVector {
    /// g/mol
    pub mw: f64,
    pub logp: f64,
    /// Å²
    pub tpsa: f64,
    pub hbd: usize,
    pub hba: usize,
    pub rb: usize,
    pub qed: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PropsError {
    #[error("atom {atom} matches no Crippen atom type")]
    UnparameterizedAtom { atom: usize },
    #[error("no average weight for atomic number {0}")]
    UnknownWeight(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropsConfig {
    /// Exclude amide C–N, ester, CF3/tBu and triple-bond neighbours from the
    /// rotatable-bond count.
    pub rb_exclude_amides: bool,
}

impl Default for PropsConfig {
    fn default() -> Self {
        PropsConfig {
            rb_exclude_amides: true,
        }
    }
}

/// Intermediate descriptors feeding the QED desirability functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QedDescriptors {
    pub mw: f64,
    pub alogp: f64,
    pub hba: usize,
    pub hbd: usize,
    pub psa: f64,
    pub rotb: usize,
    pub arom: usize,
    pub alerts: usize,
}

#[derive(Debug, Clone, Copy)]
struct AdsParams {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
    dmax: f64,
    weight: f64,
}

#[derive(Debug, Clone, Copy)]
struct TpsaRule {
    element: u8,
    neighbors: usize,
    hydrogens: usize,
    charge: i8,
    counts: [Option<usize>; 4],
    in_3_ring: Option<bool>,
    value: f64,
}

struct Tables {
    crippen: Vec<(String, SmartsPattern, f64)>,
    tpsa: Vec<TpsaRule>,
    qed_params: Vec<AdsParams>,
    alerts: Vec<SmartsPattern>,
    qed_acceptors: Vec<SmartsPattern>,
    donor: SmartsPattern,
    acceptor: SmartsPattern,
    rotatable: SmartsPattern,
    rotatable_plain: SmartsPattern,
    aliphatic_ring_atom: SmartsPattern,
}

fn data_lines(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split('\t').collect())
}

fn pattern(s: &str) -> SmartsPattern {
    SmartsPattern::parse(s).unwrap_or_else(|e| panic!("bundled pattern {s:?}: {e}"))
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let crippen = data_lines(include_str!("../data/crippen.tsv"))
            .map(|f| (f[0].to_string(), pattern(f[1]), f[2].parse().unwrap()))
            .collect();
        let opt = |s: &str| if s == "*" { None } else { Some(s.parse().unwrap()) };
        let tpsa = data_lines(include_str!("../data/tpsa.tsv"))
            .map(|f| TpsaRule {
                element: element::atomic_number(f[0]).unwrap(),
                neighbors: f[1].parse().unwrap(),
                hydrogens: f[2].parse().unwrap(),
                charge: f[3].parse().unwrap(),
                counts: [opt(f[4]), opt(f[5]), opt(f[6]), opt(f[7])],
                in_3_ring: opt(f[8]).map(|v| v == 1),
                value: f[9].parse().unwrap(),
            })
            .collect();
        let qed_params = data_lines(include_str!("../data/qed_params.tsv"))
            .map(|f| {
                let v: Vec<f64> = f[1..].iter().map(|x| x.parse().unwrap()).collect();
                AdsParams {
                    a: v[0],
                    b: v[1],
                    c: v[2],
                    d: v[3],
                    e: v[4],
                    f: v[5],
                    dmax: v[6],
                    weight: v[7],
                }
            })
            .collect();
        let alerts = data_lines(include_str!("../data/qed_alerts.tsv"))
            .map(|f| pattern(f[0]))
            .collect();
        let qed_acceptors = data_lines(include_str!("../data/qed_acceptors.tsv"))
            .map(|f| pattern(f[0]))
            .collect();
        let named: Vec<(String, SmartsPattern)> = data_lines(include_str!("../data/descriptor_patterns.tsv"))
            .map(|f| (f[0].to_string(), pattern(f[1])))
            .collect();
        let get = |n: &str| named.iter().find(|(k, _)| k == n).unwrap().1.clone();
        Tables {
            crippen,
            tpsa,
            qed_params,
            alerts,
            qed_acceptors,
            donor: get("donor"),
            acceptor: get("acceptor"),
            rotatable: get("rotatable"),
            rotatable_plain: get("rotatable_plain"),
            aliphatic_ring_atom: pattern("[$([A;R][!a])]"),
        }
    })
}

/// Sum of average atomic weights including implicit hydrogens.
pub fn molecular_weight(m: &Molecule) -> Result<f64, PropsError> {
    let mut total = 0.0;
    for a in m.atoms() {
        total += element::average_weight(a.atomic_number).ok_or(PropsError::UnknownWeight(a.atomic_number))?;
        total += a.hydrogens as f64 * element::HYDROGEN_WEIGHT;
    }
    Ok(total)
}

/// Crippen atom type of every atom of the hydrogen-expanded molecule, in
/// that molecule's atom order (heavy atoms first, then added hydrogens).
pub fn crippen_types(m: &Molecule) -> Result<Vec<(&'static str, f64)>, PropsError> {
    let h = m.with_explicit_hydrogens();
    let t = tables();
    (0..h.atom_count())
        .map(|i| {
            t.crippen
                .iter()
                .find(|(_, p, _)| p.matches_at(&h, i))
                .map(|(name, _, v)| (name.as_str(), *v))
                .ok_or(PropsError::UnparameterizedAtom { atom: i })
        })
        .collect()
}

pub fn crippen_logp(m: &Molecule) -> Result<f64, PropsError> {
    Ok(crippen_types(m)?.iter().map(|(_, v)| v).sum())
}

fn tpsa_contribution(m: &Molecule, i: usize) -> f64 {
    let a = m.atom(i);
    if a.atomic_number != 7 && a.atomic_number != 8 {
        return 0.0;
    }
    let mut hydrogens = a.hydrogens as usize;
    let mut neighbors = 0;
    let mut counts = [0usize; 4];
    for &(n, b) in m.neighbors(i) {
        if m.atom(n).atomic_number == 1 {
            hydrogens += 1;
            continue;
        }
        neighbors += 1;
        let slot = match m.bond(b).order {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        };
        counts[slot] += 1;
    }
    let in_3_ring = m.rings().iter().any(|r| r.len() == 3 && r.contains(&i));
    let rule = tables().tpsa.iter().find(|r| {
        r.element == a.atomic_number
            && r.neighbors == neighbors
            && r.hydrogens == hydrogens
            && r.charge == a.charge
            && r.counts.iter().zip(counts).all(|(want, have)| want.is_none_or(|w| w == have))
            && r.in_3_ring.is_none_or(|w| w == in_3_ring)
    });
    match rule {
        Some(r) => r.value,
        None if a.atomic_number == 7 => (30.5 - neighbors as f64 * 8.2 + hydrogens as f64 * 1.5).max(0.0),
        None => (28.5 - neighbors as f64 * 8.6 + hydrogens as f64 * 1.5).max(0.0),
    }
}

/// Topological polar surface area from N and O fragment contributions.
pub fn tpsa(m: &Molecule) -> f64 {
    (0..m.atom_count()).map(|i| tpsa_contribution(m, i)).sum()
}

fn count_atoms(p: &SmartsPattern, m: &Molecule) -> usize {
    (0..m.atom_count()).filter(|&i| p.matches_at(m, i)).count()
}

pub fn h_bond_donors(m: &Molecule) -> usize {
    count_atoms(&tables().donor, m)
}

pub fn h_bond_acceptors(m: &Molecule) -> usize {
    count_atoms(&tables().acceptor, m)
}

pub fn rotatable_bonds(m: &Molecule, exclude_amides: bool) -> usize {
    let t = tables();
    let p = if exclude_amides { &t.rotatable } else { &t.rotatable_plain };
    p.unique_matches(m).len()
}

/// Number of independent rings left after removing aliphatic ring atoms that
/// touch a non-aromatic neighbour.
pub fn aromatic_ring_count(m: &Molecule) -> usize {
    let removed: Vec<bool> = (0..m.atom_count())
        .map(|i| tables().aliphatic_ring_atom.matches_at(m, i))
        .collect();
    let mut parent: Vec<usize> = (0..m.atom_count()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut cycles = 0;
    for b in m.bonds() {
        if removed[b.begin] || removed[b.end] {
            continue;
        }
        let (x, y) = (find(&mut parent, b.begin), find(&mut parent, b.end));
        if x == y {
            cycles += 1;
        } else {
            parent[x] = y;
        }
    }
    cycles
}

pub fn structural_alerts(m: &Molecule) -> usize {
    tables().alerts.iter().filter(|p| p.has_match(m)).count()
}

pub fn qed_descriptors(m: &Molecule) -> Result<QedDescriptors, PropsError> {
    let t = tables();
    Ok(QedDescriptors {
        mw: molecular_weight(m)?,
        alogp: crippen_logp(m)?,
        hba: t.qed_acceptors.iter().map(|p| p.unique_matches(m).len()).sum(),
        hbd: h_bond_donors(m),
        psa: tpsa(m),
        rotb: rotatable_bonds(m, true),
        arom: aromatic_ring_count(m),
        alerts: structural_alerts(m),
    })
}

fn desirability(x: f64, p: &AdsParams) -> f64 {
    let e1 = 1.0 + (-(x - p.c + p.d / 2.0) / p.e).exp();
    let e2 = 1.0 + (-(x - p.c - p.d / 2.0) / p.f).exp();
    (p.a + p.b / e1 * (1.0 - 1.0 / e2)) / p.dmax
}

/// Weighted geometric mean of the eight desirabilities.
pub fn qed_from_descriptors(d: &QedDescriptors) -> f64 {
    let xs = [
        d.mw,
        d.alogp,
        d.hba as f64,
        d.hbd as f64,
        d.psa,
        d.rotb as f64,
        d.arom as f64,
        d.alerts as f64,
    ];
    let params = &tables().qed_params;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, p) in xs.iter().zip(params) {
        num += p.weight * desirability(*x, p).ln();
        den += p.weight;
    }
    (num / den).exp()
}

pub fn qed(m: &Molecule) -> Result<f64, PropsError> {
    Ok(qed_from_descriptors(&qed_descriptors(m)?))
}

pub fn compute_properties(m: &Molecule) -> Result<PropertyVector, PropsError> {
    compute_properties_with(m, &PropsConfig::default())
}

pub fn compute_properties_with(m: &Molecule, config: &PropsConfig) -> Result<PropertyVector, PropsError> {
    let d = qed_descriptors(m)?;
    Ok(PropertyVector {
        mw: d.mw,
        logp: d.alogp,
        tpsa: d.psa,
        hbd: d.hbd,
        hba: h_bond_acceptors(m),
        rb: if config.rb_exclude_amides { d.rotb } else { rotatable_bonds(m, false) },
        qed: qed_from_descriptors(&d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn props(s: &str) -> PropertyVector {
        compute_properties(&parse_smiles(s).unwrap()).unwrap()
    }

    #[test]
    fn benzene_has_no_polar_surface() {
        let p = props("c1ccccc1");
        assert_eq!(p.tpsa, 0.0);
        assert_eq!(p.hbd, 0);
        assert_eq!(p.hba, 0);
    }

    #[test]
    fn ethanol() {
        let p = props("CCO");
        assert!((p.mw - 46.069).abs() < 0.01);
        assert_eq!(p.hbd, 1);
        assert_eq!(p.hba, 1);
        assert_eq!(p.rb, 0);
        assert!((p.tpsa - 20.23).abs() < 1e-9);
    }

    #[test]
    fn amide_toggle() {
        let m = parse_smiles("CCNC(=O)CC").unwrap();
        assert!(rotatable_bonds(&m, false) > rotatable_bonds(&m, true));
    }

    #[test]
    fn ranges() {
        for s in ["C", "CC(=O)Oc1ccccc1C(=O)O", "c1ccc2ccccc2c1", "O=[N+]([O-])c1ccccc1"] {
            let p = props(s);
            assert!(p.mw > 0.0 && p.tpsa >= 0.0);
            assert!((0.0..=1.0).contains(&p.qed), "{s}: {}", p.qed);
        }
    }

    #[test]
    fn unparameterized_atom_reported() {
        let m = parse_smiles("[Xe]").unwrap();
        assert!(matches!(crippen_logp(&m), Err(PropsError::UnparameterizedAtom { .. })));
    }
}
