//! Record builders for the five tasks, the molecule split and the curation
//! driver.

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use molmm_chem::{canonical_smiles, compute_properties, parse_smiles, render, Atom, Bond, BondOrder, MolImage, Molecule, PropsError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DataConfig;
use crate::error::DataError;
use crate::format::{parse_property_answer, property_answer, PropertyValues};
use crate::record::{Dataset, Part, Provenance, Task, TaskRecord};
use crate::templates::{self, CAPTION_PROMPTS, IMAGE_ANSWERS, PROPERTY_PROMPT, SMILES_PROMPT};

/// A parsed, described and rendered molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub smiles: String,
    pub props: PropertyValues,
    pub image: MolImage,
}

impl Entry {
    pub fn image_path(&self) -> String {
        image_path(&self.smiles)
    }
}

/// Relative image path of a molecule, derived from its canonical SMILES.
pub fn image_path(canonical: &str) -> String {
    // FNV-1a: stable across runs and toolchains
    let mut h: u64 = 0xcbf29ce484222325;
    for b in canonical.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("images/{h:016x}.ppm")
}

fn parse(smiles: &str) -> Result<Molecule, DataError> {
    parse_smiles(smiles).map_err(|e| DataError::Smiles {
        smiles: smiles.to_string(),
        reason: e.to_string(),
    })
}

/// Builds an entry from a parsed molecule.
pub fn describe(mol: &Molecule, resolution: usize) -> Result<Entry, DataError> {
    let smiles = canonical_smiles(mol);
    let props = compute_properties(mol).map_err(|e: PropsError| DataError::Props {
        smiles: smiles.clone(),
        reason: e.to_string(),
    })?;
    let image = render(mol, resolution).map_err(|e| DataError::Render(format!("{smiles}: {e}")))?;
    Ok(Entry {
        smiles,
        props: PropertyValues::from(&props),
        image,
    })
}

pub fn entry(smiles: &str, resolution: usize) -> Result<Entry, DataError> {
    describe(&parse(smiles)?, resolution)
}

/// Parses, canonicalizes and deduplicates a corpus. Molecules that fail to
/// parse, lack property parameters or cannot be drawn are skipped and
/// logged. The result is sorted by canonical SMILES.
pub fn prepare_corpus(smiles: &[String], resolution: usize) -> Vec<Entry> {
    let mut seen = BTreeMap::new();
    for s in smiles {
        match entry(s, resolution) {
            Ok(e) => {
                seen.entry(e.smiles.clone()).or_insert(e);
            }
            Err(e) => warn!("skipping {s}: {e}"),
        }
    }
    seen.into_values().collect()
}

/// Test-set size for `n` molecules at `train_per_test`:1.
pub fn test_count(n: usize, train_per_test: usize) -> usize {
    let t = (n as f64 / (train_per_test + 1) as f64).round() as usize;
    if n >= 2 {
        t.max(1)
    } else {
        0
    }
}

/// Seeded shuffle, then the first `test_count` items become the test split.
pub fn split<T>(mut items: Vec<T>, train_per_test: usize, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let k = test_count(items.len(), train_per_test);
    let train = items.split_off(k);
    (train, items)
}

fn insert_image(images: &mut BTreeMap<String, MolImage>, e: &Entry) -> String {
    let path = e.image_path();
    images.entry(path.clone()).or_insert_with(|| e.image.clone());
    path
}

/// img2property, img2smiles and property2img records for each entry.
pub fn build_property_tasks(
    entries: &[Entry],
    cfg: &DataConfig,
    prefix: &str,
    rng: &mut impl Rng,
    images: &mut BTreeMap<String, MolImage>,
) -> Vec<TaskRecord> {
    let mut out = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let path = insert_image(images, e);
        let provenance = Provenance {
            smiles: e.smiles.clone(),
            properties: Some(e.props),
            target_smiles: None,
            target_properties: None,
        };
        let mut push = |task: Task, input: Vec<Part>, output: Vec<Part>| {
            out.push(TaskRecord {
                id: format!("{prefix}-{task}-{i:06}"),
                task,
                input,
                output,
                provenance: provenance.clone(),
            })
        };
        if cfg.wants(Task::Img2Property) {
            push(
                Task::Img2Property,
                vec![Part::text(PROPERTY_PROMPT), Part::image(&path)],
                vec![Part::text(property_answer(&e.props))],
            );
        }
        if cfg.wants(Task::Img2Smiles) {
            push(
                Task::Img2Smiles,
                vec![Part::text(SMILES_PROMPT), Part::image(&path)],
                vec![Part::text(templates::smiles_answer(&e.smiles))],
            );
        }
        if cfg.wants(Task::Property2Img) {
            let lead = IMAGE_ANSWERS[rng.random_range(0..IMAGE_ANSWERS.len())];
            push(
                Task::Property2Img,
                vec![Part::text(templates::image_request(&e.props, cfg.resolution))],
                vec![Part::text(lead), Part::image(&path)],
            );
        }
    }
    out
}

/// A checked (lower LogP, higher LogP) molecule pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub source: Entry,
    pub target: Entry,
}

impl Pair {
    /// Rejects pairs whose target does not strictly raise LogP.
    pub fn new(source: Entry, target: Entry) -> Result<Pair, DataError> {
        if target.props.logp.partial_cmp(&source.props.logp) != Some(std::cmp::Ordering::Greater) {
            return Err(DataError::PairOrder {
                source_logp: source.props.logp,
                target_logp: target.props.logp,
            });
        }
        Ok(Pair { source, target })
    }

    pub fn delta_logp(&self) -> f64 {
        self.target.props.logp - self.source.props.logp
    }
}

/// Reads a pair file: two whitespace-separated SMILES per line, source
/// first; blank lines and `#` comments are ignored.
pub fn read_pair_file(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            Some((it.next()?.to_string(), it.next()?.to_string()))
        })
        .collect()
}

/// Checked pairs from SMILES pairs; invalid lines are skipped and logged.
pub fn ingest_pairs(pairs: &[(String, String)], resolution: usize) -> Vec<Pair> {
    pairs
        .iter()
        .filter_map(|(s, t)| {
            let p = entry(s, resolution).and_then(|a| Pair::new(a, entry(t, resolution)?));
            p.map_err(|e| warn!("skipping pair {s} {t}: {e}")).ok()
        })
        .collect()
}

/// Substituents a synthesized target may gain: (atomic numbers of a chain).
const SUBSTITUENTS: [&[u8]; 7] = [&[6], &[6, 6], &[6, 6, 6], &[6, 6, 6, 6], &[9], &[17], &[35]];

/// Replaces one hydrogen on atom `at` by a chain of single-bonded atoms.
pub fn attach(mol: &Molecule, at: usize, chain: &[u8]) -> Result<Molecule, DataError> {
    let mut atoms = mol.atoms().to_vec();
    let mut bonds = mol.bonds().to_vec();
    if atoms[at].hydrogens == 0 {
        return Err(DataError::Config(format!("atom {at} has no hydrogen")));
    }
    atoms[at].hydrogens -= 1;
    let mut prev = at;
    for (k, &z) in chain.iter().enumerate() {
        let mut a = Atom::new(z);
        let heavy = if k + 1 < chain.len() { 2 } else { 1 };
        a.hydrogens = if z == 6 { 4 - heavy } else { 0 };
        atoms.push(a);
        let idx = atoms.len() - 1;
        bonds.push(Bond {
            begin: prev,
            end: idx,
            order: BondOrder::Single,
            in_ring: false,
            stereo: None,
        });
        prev = idx;
    }
    // round trip through SMILES so the result matches a freshly parsed molecule
    let m = Molecule::from_parts(atoms, bonds).map_err(|e| DataError::Smiles {
        smiles: canonical_smiles(mol),
        reason: e.to_string(),
    })?;
    parse(&canonical_smiles(&m))
}

/// Attaches random alkyl or halogen substituents at random carbon
/// hydrogens until one raises LogP by more than `cfg.pair_min_delta`.
pub fn synthesize_pair(source: &Entry, cfg: &DataConfig, rng: &mut impl Rng) -> Option<Pair> {
    let mol = parse(&source.smiles).ok()?;
    let sites: Vec<usize> = (0..mol.atom_count())
        .filter(|&i| {
            let a = mol.atom(i);
            a.atomic_number == 6 && !a.bracket && a.hydrogens > 0
        })
        .collect();
    if sites.is_empty() {
        return None;
    }
    for _ in 0..cfg.pair_attempts {
        let at = sites[rng.random_range(0..sites.len())];
        let chain = SUBSTITUENTS[rng.random_range(0..SUBSTITUENTS.len())];
        let Ok(m) = attach(&mol, at, chain) else { continue };
        let Ok(target) = describe(&m, cfg.resolution) else { continue };
        if target.props.logp - source.props.logp > cfg.pair_min_delta {
            return Pair::new(source.clone(), target).ok();
        }
    }
    None
}

pub fn build_img2img_pairs(
    pairs: &[Pair],
    cfg: &DataConfig,
    prefix: &str,
    images: &mut BTreeMap<String, MolImage>,
) -> Vec<TaskRecord> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let src = insert_image(images, &p.source);
            let dst = insert_image(images, &p.target);
            TaskRecord {
                id: format!("{prefix}-img2img-{i:06}"),
                task: Task::Img2Img,
                input: vec![Part::text(templates::optimize_prompt(cfg.logp_preamble)), Part::image(src)],
                output: vec![Part::text(templates::OPTIMIZE_ANSWER), Part::image(dst)],
                provenance: Provenance {
                    smiles: p.source.smiles.clone(),
                    properties: Some(p.source.props),
                    target_smiles: Some(p.target.smiles.clone()),
                    target_properties: Some(p.target.props),
                },
            }
        })
        .collect()
}

/// A molecule with a caption, ready for record building.
#[derive(Debug, Clone, PartialEq)]
pub struct Captioned {
    pub entry: Entry,
    pub caption: String,
}

/// Reads a caption file: `SMILES<TAB>caption` per line, `#` comments.
pub fn read_caption_file(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let (s, c) = l.split_once('\t')?;
            Some((s.trim().to_string(), c.trim().to_string()))
        })
        .collect()
}

/// Drops empty, overlong and unparseable captions (each logged).
pub fn prepare_captions(pairs: &[(String, String)], cfg: &DataConfig) -> Vec<Captioned> {
    let mut out = Vec::new();
    for (s, c) in pairs {
        let words = c.split_whitespace().count();
        if words == 0 {
            warn!("skipping {s}: empty caption");
            continue;
        }
        if words > cfg.caption_max_words {
            warn!("skipping {s}: caption has {words} words");
            continue;
        }
        match parse(s).and_then(|m| describe(&m, cfg.resolution)) {
            Ok(entry) => out.push(Captioned {
                entry,
                caption: c.clone(),
            }),
            Err(e) => warn!("skipping caption for {s}: {e}"),
        }
    }
    out
}

/// img2caption records with seeded prompt choice.
pub fn build_img2caption(
    items: &[Captioned],
    prefix: &str,
    rng: &mut impl Rng,
    images: &mut BTreeMap<String, MolImage>,
) -> Vec<TaskRecord> {
    items
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let path = insert_image(images, &c.entry);
            let prompt = CAPTION_PROMPTS[rng.random_range(0..CAPTION_PROMPTS.len())];
            TaskRecord {
                id: format!("{prefix}-img2caption-{i:06}"),
                task: Task::Img2Caption,
                input: vec![Part::text(prompt), Part::image(path)],
                output: vec![Part::text(&c.caption)],
                provenance: Provenance {
                    smiles: c.entry.smiles.clone(),
                    properties: Some(c.entry.props),
                    target_smiles: None,
                    target_properties: None,
                },
            }
        })
        .collect()
}

/// Replaces every record by four copies whose images are rotated by 0, 90,
/// 180 and 270 degrees; rotated images are added under `_r{k}` paths.
pub fn augment_rotations(records: &[TaskRecord], images: &mut BTreeMap<String, MolImage>) -> Result<Vec<TaskRecord>, DataError> {
    let mut out = Vec::with_capacity(records.len() * 4);
    for r in records {
        for k in 0..4 {
            let mut copy = r.clone();
            if k > 0 {
                copy.id = format!("{}-r{k}", r.id);
                for part in copy.input.iter_mut().chain(copy.output.iter_mut()) {
                    if let Part::Image { image_path } = part {
                        let rotated = rotated_path(image_path, k);
                        if !images.contains_key(&rotated) {
                            let mut img = images
                                .get(image_path.as_str())
                                .ok_or_else(|| DataError::MissingImage(image_path.clone()))?
                                .clone();
                            for _ in 0..k {
                                img = img.rot90().map_err(|e| DataError::Render(e.to_string()))?;
                            }
                            images.insert(rotated.clone(), img);
                        }
                        *image_path = rotated;
                    }
                }
            }
            out.push(copy);
        }
    }
    Ok(out)
}

fn rotated_path(path: &str, k: usize) -> String {
    match path.strip_suffix(".ppm") {
        Some(stem) => format!("{stem}_r{k}.ppm"),
        None => format!("{path}_r{k}"),
    }
}

/// Raw inputs of a curation run.
#[derive(Debug, Clone, Default)]
pub struct CurateInputs {
    pub corpus: Vec<String>,
    /// (SMILES, caption)
    pub captions: Vec<(String, String)>,
    /// (source, target) SMILES; when absent img2img pairs are synthesized.
    pub pairs: Option<Vec<(String, String)>>,
}

/// Builds both splits of every selected task.
///
/// Corpus molecules are split `train_per_test`:1 by canonical SMILES and
/// every task draws from the same split. Caption molecules outside the
/// corpus get their own split at the same ratio, ingested pairs are split by
/// pair. Train records that mention any test molecule are dropped at the end
/// so the splits stay disjoint.
pub fn curate(inputs: &CurateInputs, cfg: &DataConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let corpus = if cfg.max_molecules > 0 && inputs.corpus.len() > cfg.max_molecules {
        &inputs.corpus[..cfg.max_molecules]
    } else {
        &inputs.corpus[..]
    };
    let entries = prepare_corpus(corpus, cfg.resolution);
    if entries.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let (train_mols, test_mols) = split(entries, cfg.train_per_test, cfg.seed);
    info!("corpus split: {} train, {} test molecules", train_mols.len(), test_mols.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a5c);
    let mut images = BTreeMap::new();
    let mut train = Vec::new();
    let mut test = Vec::new();

    train.extend(build_property_tasks(&train_mols, cfg, "train", &mut rng, &mut images));
    test.extend(build_property_tasks(&test_mols, cfg, "test", &mut rng, &mut images));

    if cfg.wants(Task::Img2Img) {
        let (train_pairs, test_pairs) = match &inputs.pairs {
            Some(p) => split(ingest_pairs(p, cfg.resolution), cfg.train_per_test, cfg.seed),
            None => {
                let synth = |mols: &[Entry], rng: &mut ChaCha8Rng| mols.iter().filter_map(|m| synthesize_pair(m, cfg, rng)).collect::<Vec<_>>();
                (synth(&train_mols, &mut rng), synth(&test_mols, &mut rng))
            }
        };
        train.extend(build_img2img_pairs(&train_pairs, cfg, "train", &mut images));
        test.extend(build_img2img_pairs(&test_pairs, cfg, "test", &mut images));
    }

    if cfg.wants(Task::Img2Caption) {
        let test_set: BTreeSet<&str> = test_mols.iter().map(|e| e.smiles.as_str()).collect();
        let train_set: BTreeSet<&str> = train_mols.iter().map(|e| e.smiles.as_str()).collect();
        let (mut cap_train, mut cap_test, mut rest) = (Vec::new(), Vec::new(), Vec::new());
        for c in prepare_captions(&inputs.captions, cfg) {
            if test_set.contains(c.entry.smiles.as_str()) {
                cap_test.push(c);
            } else if train_set.contains(c.entry.smiles.as_str()) {
                cap_train.push(c);
            } else {
                rest.push(c);
            }
        }
        let (a, b) = split(rest, cfg.train_per_test, cfg.seed);
        cap_train.extend(a);
        cap_test.extend(b);
        train.extend(build_img2caption(&cap_train, "train", &mut rng, &mut images));
        test.extend(build_img2caption(&cap_test, "test", &mut rng, &mut images));
    }

    let test_smiles: BTreeSet<String> = test.iter().flat_map(|r| r.provenance.molecules().map(str::to_string)).collect();
    let before = train.len();
    train.retain(|r| r.provenance.molecules().all(|s| !test_smiles.contains(s)));
    if train.len() < before {
        info!("dropped {} train records sharing molecules with the test split", before - train.len());
    }
    if cfg.rotate_train {
        train = augment_rotations(&train, &mut images)?;
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    test.sort_by(|a, b| a.id.cmp(&b.id));
    let used: BTreeSet<String> = train.iter().chain(&test).flat_map(|r| r.image_paths().map(str::to_string)).collect();
    images.retain(|k, _| used.contains(k));
    info!("curated {} train and {} test records, {} images", train.len(), test.len(), images.len());
    Ok(Dataset { train, test, images })
}

/// Checks one record against recomputation from its SMILES: property text
/// within ±0.01, the img2smiles answer naming the same molecule, img2img
/// targets raising LogP, and image slots matching the task.
pub fn verify_record(r: &TaskRecord) -> Result<(), DataError> {
    let fail = |reason: String| DataError::Integrity { id: r.id.clone(), reason };
    let recompute = |s: &str| -> Result<PropertyValues, DataError> {
        let m = parse(s)?;
        let p = compute_properties(&m).map_err(|e| DataError::Props {
            smiles: s.to_string(),
            reason: e.to_string(),
        })?;
        Ok(PropertyValues::from(&p))
    };
    let has_image = |parts: &[Part]| parts.iter().any(|p| matches!(p, Part::Image { .. }));
    if (has_image(&r.input), has_image(&r.output)) != r.task.image_slots() {
        return Err(fail("image slots do not match the task".into()));
    }
    let props = recompute(&r.provenance.smiles)?;
    match r.task {
        Task::Img2Property | Task::Property2Img => {
            let text: String = r.texts().collect::<Vec<_>>().join(" ");
            let parsed = parse_property_answer(&text).ok_or_else(|| fail("no property clause".into()))?;
            let d = parsed.max_abs_diff(&props);
            if d > 0.01 {
                return Err(fail(format!("property text off by {d}")));
            }
        }
        Task::Img2Smiles => {
            let s = templates::parse_smiles_answer(&r.answer_text()).ok_or_else(|| fail("no SMILES in answer".into()))?;
            if canonical_smiles(&parse(&s)?) != r.provenance.smiles {
                return Err(fail(format!("answer SMILES {s} is not {}", r.provenance.smiles)));
            }
        }
        Task::Img2Img => {
            let t = r.provenance.target_smiles.as_deref().ok_or_else(|| fail("no target".into()))?;
            let tp = recompute(t)?;
            if tp.logp <= props.logp {
                return Err(fail(format!("target LogP {} not above {}", tp.logp, props.logp)));
            }
        }
        Task::Img2Caption => {}
    }
    Ok(())
}

/// Molecules present in both splits; empty when the split is clean.
pub fn shared_molecules(d: &Dataset) -> BTreeSet<String> {
    let test: BTreeSet<&str> = d.test.iter().flat_map(|r| r.provenance.molecules()).collect();
    d.train
        .iter()
        .flat_map(|r| r.provenance.molecules())
        .filter(|s| test.contains(s))
        .map(str::to_string)
        .collect()
}
