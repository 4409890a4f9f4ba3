//! Prompt and answer wording for the five tasks.

use crate::format::{property_clause, PropertyValues};

pub const CAPTION_PROMPTS: [&str; 4] = [
    "Give an overview of this molecule's properties.",
    "Explain the key traits of this molecule.",
    "Provide a detailed description of this molecular structure.",
    "List the notable attributes of this molecule.",
];

pub const PROPERTY_PROMPT: &str = "Predict the following properties of the molecule: MW, LogP, TPSA, HBD, HBA, RB and QED.";

pub const SMILES_PROMPT: &str = "What is the SMILES of the molecule in this image?";

/// Text preceding the SMILES in an img2smiles answer.
pub const SMILES_ANSWER_PREFIX: &str = "The SMILES of the molecule in the image is ";

pub const IMAGE_ANSWERS: [&str; 2] = ["The molecular diagram is shown below:", "See the molecular depiction:"];

pub const LOGP_PREAMBLE: &str = "LogP (Partition Coefficient) measures a molecule's solubility in fats versus water by quantifying its distribution between octanol (fat-like) and water phases. Calculated as the logarithm of the concentration ratio (LogP = log[octanol]/[water]), it predicts drug absorption and permeability\u{2014}higher values (>0) indicate greater fat solubility, while lower values (<0) suggest water solubility. Ideal drug candidates typically have LogP between 0-3 for optimal bioavailability.";

pub const OPTIMIZE_PROMPT: &str = "Here is an image of a molecule, please generate an image of a new similar molecule whose LogP is better.";

pub const OPTIMIZE_ANSWER: &str = "Here is a new similar molecule with better LogP.";

pub fn smiles_answer(smiles: &str) -> String {
    format!("{SMILES_ANSWER_PREFIX}{smiles}.")
}

/// The property2img request: the img2property answer clause turned into a
/// generation prompt.
pub fn image_request(p: &PropertyValues, resolution: usize) -> String {
    format!(
        "Generate an image of {resolution}x{resolution} according to the following prompt:\n Image of a molecule whose {}",
        property_clause(p)
    )
}

pub fn optimize_prompt(with_preamble: bool) -> String {
    if with_preamble {
        format!("{LOGP_PREAMBLE} {OPTIMIZE_PROMPT}")
    } else {
        OPTIMIZE_PROMPT.to_string()
    }
}

/// The SMILES after the img2smiles answer marker (matched
/// case-insensitively), without a final period. None when the marker or a
/// following word is missing.
pub fn parse_smiles_answer(text: &str) -> Option<String> {
    let marker = "molecule in the image is ";
    let at = text.to_ascii_lowercase().find(marker)?;
    let word = text[at + marker.len()..].split_whitespace().next()?;
    let word = word.strip_suffix('.').unwrap_or(word);
    (!word.is_empty()).then(|| word.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smiles_answer_round_trip() {
        assert_eq!(smiles_answer("CCO"), "The SMILES of the molecule in the image is CCO.");
        assert_eq!(parse_smiles_answer(&smiles_answer("c1ccccc1")).as_deref(), Some("c1ccccc1"));
        // a period inside the SMILES survives, only the final one is dropped
        assert_eq!(parse_smiles_answer(&smiles_answer("[Na+].[Cl-]")).as_deref(), Some("[Na+].[Cl-]"));
        assert_eq!(parse_smiles_answer("").as_deref(), None);
        assert_eq!(parse_smiles_answer("no idea").as_deref(), None);
        assert_eq!(parse_smiles_answer("the molecule in the image is .").as_deref(), None);
    }

    #[test]
    fn image_request_wording() {
        let p = PropertyValues {
            mw: 354.456,
            logp: 3.91,
            tpsa: 81.57,
            hbd: 2,
            hba: 5,
            rb: 6,
            qed: 0.66,
        };
        assert_eq!(
            image_request(&p, 256),
            "Generate an image of 256x256 according to the following prompt:\n Image of a molecule whose MW is 354.46, LogP is 3.91, TPSA is 81.57, HBD is 2, HBA is 5, RB is 6 and QED is 0.66"
        );
    }
}
