//! `<bos>` text … `<boi>` image `<eoi>` … `<eos>` sequences with span bookkeeping.

use crate::bpe::{BpeVocab, Special, TextError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Image,
}

/// A contiguous run of one modality. Special tokens belong to text spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub modality: Modality,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    /// Encoded text ids (no specials).
    Text(Vec<u32>),
    /// Codebook indices, row-major h·w.
    Image(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub spans: Vec<Span>,
}

impl TokenSequence {
    fn push(&mut self, modality: Modality, ids: impl IntoIterator<Item = u32>) {
        let start = self.ids.len();
        self.ids.extend(ids);
        let len = self.ids.len() - start;
        if len == 0 {
            return;
        }
        match self.spans.last_mut() {
            Some(s) if s.modality == modality && modality == Modality::Text => s.len += len,
            _ => self.spans.push(Span { modality, start, len }),
        }
    }

    /// Rebuilds spans from raw ids: runs of image-range ids are image spans,
    /// everything else is text.
    pub fn from_ids(vocab: &BpeVocab, ids: Vec<u32>) -> TokenSequence {
        let mut seq = TokenSequence::default();
        for id in ids {
            let m = if vocab.image_code(id).is_some() { Modality::Image } else { Modality::Text };
            let start = seq.ids.len();
            seq.ids.push(id);
            match seq.spans.last_mut() {
                Some(s) if s.modality == m => s.len += 1,
                _ => seq.spans.push(Span { modality: m, start, len: 1 }),
            }
        }
        seq
    }

    /// Checks that spans tile the ids and every image span is exactly
    /// `tokens_per_image` image ids bracketed by `<boi>`/`<eoi>`.
    pub fn check(&self, vocab: &BpeVocab, tokens_per_image: usize) -> bool {
        let mut pos = 0;
        for s in &self.spans {
            if s.start != pos || s.len == 0 {
                return false;
            }
            pos += s.len;
            if s.modality == Modality::Image {
                let ids = &self.ids[s.start..s.start + s.len];
                let bracketed = s.start > 0
                    && self.ids[s.start - 1] == vocab.special(Special::Boi)
                    && self.ids.get(s.start + s.len) == Some(&vocab.special(Special::Eoi));
                if s.len != tokens_per_image || !bracketed || ids.iter().any(|&i| vocab.image_code(i).is_none()) {
                    return false;
                }
            }
        }
        pos == self.ids.len()
    }
}

pub fn assemble_sequence(vocab: &BpeVocab, segments: &[Segment], tokens_per_image: usize) -> Result<TokenSequence, TextError> {
    let mut seq = TokenSequence::default();
    seq.push(Modality::Text, [vocab.special(Special::Bos)]);
    for seg in segments {
        match seg {
            Segment::Text(ids) => {
                if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab.n_text()) {
                    return Err(TextError::IdOutOfRange {
                        id: bad as usize,
                        kind: "text",
                    });
                }
                seq.push(Modality::Text, ids.iter().copied());
            }
            Segment::Image(codes) => {
                if codes.len() != tokens_per_image {
                    return Err(TextError::BadImageBlockLength {
                        expected: tokens_per_image,
                        got: codes.len(),
                    });
                }
                if let Some(&bad) = codes.iter().find(|&&c| c >= vocab.image_tokens()) {
                    return Err(TextError::IdOutOfRange { id: bad, kind: "image" });
                }
                seq.push(Modality::Text, [vocab.special(Special::Boi)]);
                seq.push(Modality::Image, codes.iter().map(|&c| vocab.image_id(c)));
                seq.push(Modality::Text, [vocab.special(Special::Eoi)]);
            }
        }
    }
    seq.push(Modality::Text, [vocab.special(Special::Eos)]);
    Ok(seq)
}
