//! Task records as token sequences, and reading molecules back from
//! generated images.

use std::collections::BTreeMap;

use molmm_chem::MolImage;
use molmm_data::{Dataset, Part, Task, TaskRecord};
use molmm_lm::Example;
use molmm_text::{assemble_sequence, BpeVocab, Segment};

use crate::error::CliError;

/// Codebook indices of every dataset image, keyed by relative path.
pub type TokenMap = BTreeMap<String, Vec<usize>>;

fn segments(parts: &[Part], vocab: &BpeVocab, tokens: &TokenMap) -> Result<Vec<Segment>, CliError> {
    parts
        .iter()
        .map(|p| match p {
            Part::Text { text } => Ok(Segment::Text(vocab.encode_text(text))),
            Part::Image { image_path } => tokens
                .get(image_path)
                .map(|t| Segment::Image(t.clone()))
                .ok_or_else(|| CliError::Data(molmm_data::DataError::MissingImage(image_path.clone()))),
        })
        .collect()
}

/// `<bos>` and the input segments: what the model is asked to continue.
pub fn prompt_ids(r: &TaskRecord, vocab: &BpeVocab, tokens: &TokenMap, tpi: usize) -> Result<Vec<u32>, CliError> {
    let mut ids = assemble_sequence(vocab, &segments(&r.input, vocab, tokens)?, tpi)?.ids;
    ids.pop(); // <eos>
    Ok(ids)
}

/// The full training sequence; the answer (output segments and `<eos>`)
/// is the supervised part.
pub fn example(r: &TaskRecord, vocab: &BpeVocab, tokens: &TokenMap, tpi: usize) -> Result<Example, CliError> {
    let prompt = prompt_ids(r, vocab, tokens, tpi)?;
    let mut all = segments(&r.input, vocab, tokens)?;
    all.extend(segments(&r.output, vocab, tokens)?);
    let ids = assemble_sequence(vocab, &all, tpi)?.ids;
    debug_assert_eq!(&ids[..prompt.len()], &prompt[..]);
    Ok(Example::with_answer_from(ids, prompt.len()))
}

/// Image path → SMILES for every image the dataset shows.
pub fn image_molecules(d: &Dataset) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for r in d.records() {
        let input_mol = &r.provenance.smiles;
        let output_mol = match r.task {
            Task::Img2Img => r.provenance.target_smiles.as_ref().unwrap_or(input_mol),
            _ => input_mol,
        };
        for (parts, mol) in [(&r.input, input_mol), (&r.output, output_mol)] {
            for p in parts {
                if let Part::Image { image_path } = p {
                    out.entry(image_path.clone()).or_insert_with(|| mol.clone());
                }
            }
        }
    }
    out
}

/// Reads a molecule off an image by nearest neighbour (pixel squared
/// distance) among known renderings; ties go to the first path in order.
pub struct Recognizer {
    pool: Vec<(String, MolImage)>,
}

impl Recognizer {
    /// Pool of unrotated dataset images with their molecules.
    pub fn new(d: &Dataset) -> Recognizer {
        let mols = image_molecules(d);
        let pool = d
            .images
            .iter()
            .filter(|(path, _)| !path.contains("_r"))
            .filter_map(|(path, img)| Some((mols.get(path)?.clone(), img.clone())))
            .collect();
        Recognizer { pool }
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn recognize(&self, img: &MolImage) -> Option<&str> {
        let mut best: Option<(u64, &str)> = None;
        for (smiles, cand) in &self.pool {
            if cand.pixels.len() != img.pixels.len() {
                continue;
            }
            let d: u64 = cand.pixels.iter().zip(&img.pixels).map(|(&a, &b)| (a as i64 - b as i64).pow(2) as u64).sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, smiles));
            }
        }
        best.map(|(_, s)| s)
    }
}
