//! Task datasets for image/text molecule modelling: captions, property
//! prediction, SMILES recognition, property-conditioned drawing and LogP
//! optimization.

pub mod build;
pub mod config;
pub mod error;
pub mod format;
pub mod record;
pub mod templates;

pub use build::{
    attach, augment_rotations, build_img2caption, build_img2img_pairs, build_property_tasks, curate, describe, entry, image_path, ingest_pairs, prepare_captions,
    prepare_corpus, read_caption_file, read_pair_file, shared_molecules, split, synthesize_pair, test_count, verify_record, Captioned, CurateInputs, Entry, Pair,
};
pub use config::DataConfig;
pub use error::DataError;
pub use format::{format_real, parse_property_answer, property_answer, property_clause, PropertyValues};
pub use record::{Dataset, Part, Provenance, Task, TaskRecord};
pub use templates::{parse_smiles_answer, smiles_answer};
