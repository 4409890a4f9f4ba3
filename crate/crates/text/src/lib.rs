//! Byte-level BPE for text and SMILES, and the unified token sequence that
//! interleaves text with image-token blocks.

pub mod bpe;
pub mod sequence;

pub use bpe::{bpe_train, pretokenize, BpeVocab, Special, TextError};
pub use sequence::{assemble_sequence, Modality, Segment, Span, TokenSequence};
