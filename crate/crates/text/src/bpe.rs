//! Vocabulary layout: ids 0..256 are raw bytes, then one id per new token
//! created by a merge (in training order), then the special tokens, then the
//! image-token range. Tokens are identified by their bytes, so two merges
//! that spell the same string share one id.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("training corpus is empty")]
    CorpusEmpty,
    #[error("vocab size {0} leaves no room for bytes and specials (minimum {1})")]
    VocabTooSmall(usize, usize),
    #[error("token id {0} is not a text token")]
    UnknownTokenId(u32),
    #[error("decoded bytes are not UTF-8")]
    InvalidUtf8,
    #[error("image block has {got} ids, expected {expected}")]
    BadImageBlockLength { expected: usize, got: usize },
    #[error("id {id} out of range for a {kind} block")]
    IdOutOfRange { id: usize, kind: &'static str },
    #[error("vocab file line {line}: {reason}")]
    BadVocabFile { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Pad,
    Bos,
    Eos,
    Boi,
    Eoi,
}

impl Special {
    pub const ALL: [Special; 5] = [Special::Pad, Special::Bos, Special::Eos, Special::Boi, Special::Eoi];

    pub fn text(self) -> &'static str {
        match self {
            Special::Pad => "<pad>",
            Special::Bos => "<bos>",
            Special::Eos => "<eos>",
            Special::Boi => "<boi>",
            Special::Eoi => "<eoi>",
        }
    }
}

const SEP: char = '\u{241F}';

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(u32, u32)>,
    /// pair → (rank, id of the joined token)
    ranks: HashMap<(u32, u32), (u32, u32)>,
    /// byte string of every text id (bytes then merges)
    bytes: Vec<Vec<u8>>,
    image_tokens: usize,
}

/// Splits text into chunks that merges never cross: each chunk is a run of
/// ASCII whitespace followed by a run of other bytes (either may be empty
/// at the edges).
pub fn pretokenize(s: &[u8]) -> Vec<&[u8]> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < s.len() {
        while i < s.len() && s[i].is_ascii_whitespace() {
            i += 1;
        }
        while i < s.len() && !s[i].is_ascii_whitespace() {
            i += 1;
        }
        out.push(&s[start..i]);
        start = i;
    }
    out
}

/// Greedy BPE: repeatedly merges the most frequent adjacent pair; ties go
/// to the pair whose (left bytes, right bytes) is lexicographically smaller.
pub fn bpe_train<S: AsRef<str>>(corpus: &[S], vocab_size: usize, image_tokens: usize) -> Result<BpeVocab, TextError> {
    let min = 256 + Special::ALL.len();
    if vocab_size < min {
        return Err(TextError::VocabTooSmall(vocab_size, min));
    }
    let mut words: HashMap<&[u8], u64> = HashMap::new();
    for doc in corpus {
        for w in pretokenize(doc.as_ref().as_bytes()) {
            *words.entry(w).or_default() += 1;
        }
    }
    if words.is_empty() {
        return Err(TextError::CorpusEmpty);
    }
    // sorted for determinism independent of hash order
    let mut words: Vec<(Vec<u32>, u64)> = words.into_iter().map(|(w, c)| (w.iter().map(|&b| b as u32).collect(), c)).collect();
    words.sort();

    let (mut bytes, mut index) = byte_tokens();
    let mut merges = Vec::new();
    while bytes.len() + Special::ALL.len() < vocab_size {
        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (w, c) in &words {
            for p in w.windows(2) {
                *counts.entry((p[0], p[1])).or_default() += c;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&bytes[pa.0 as usize], &bytes[pa.1 as usize]);
                let kb = (&bytes[pb.0 as usize], &bytes[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), _)) = best else { break };
        let mut joined = bytes[l as usize].clone();
        joined.extend_from_slice(&bytes[r as usize]);
        let id = intern(&mut bytes, &mut index, joined);
        merges.push((l, r));
        for (w, _) in &mut words {
            *w = merge_pair(w, (l, r), id);
        }
    }
    Ok(BpeVocab::from_parts(merges, bytes, &index, image_tokens))
}

fn byte_tokens() -> (Vec<Vec<u8>>, HashMap<Vec<u8>, u32>) {
    let bytes: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let index = bytes.iter().enumerate().map(|(i, b)| (b.clone(), i as u32)).collect();
    (bytes, index)
}

/// Id of `token`, adding it if new.
fn intern(bytes: &mut Vec<Vec<u8>>, index: &mut HashMap<Vec<u8>, u32>, token: Vec<u8>) -> u32 {
    *index.entry(token.clone()).or_insert_with(|| {
        bytes.push(token);
        (bytes.len() - 1) as u32
    })
}

fn merge_pair(w: &[u32], pair: (u32, u32), id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(w.len());
    let mut i = 0;
    while i < w.len() {
        if i + 1 < w.len() && (w[i], w[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(w[i]);
            i += 1;
        }
    }
    out
}

impl BpeVocab {
    fn from_parts(merges: Vec<(u32, u32)>, bytes: Vec<Vec<u8>>, index: &HashMap<Vec<u8>, u32>, image_tokens: usize) -> BpeVocab {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, &(l, r))| {
                let mut joined = bytes[l as usize].clone();
                joined.extend_from_slice(&bytes[r as usize]);
                ((l, r), (i as u32, index[&joined]))
            })
            .collect();
        BpeVocab {
            merges,
            ranks,
            bytes,
            image_tokens,
        }
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Byte string of a text id.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.bytes.get(id as usize).map(Vec::as_slice)
    }

    /// Number of byte and merged-token ids.
    pub fn n_text(&self) -> usize {
        self.bytes.len()
    }

    pub fn special(&self, s: Special) -> u32 {
        (self.bytes.len() + s as usize) as u32
    }

    pub fn is_special(&self, id: u32) -> bool {
        (self.bytes.len()..self.text_vocab_size()).contains(&(id as usize))
    }

    /// V_text: bytes, merges and specials; image ids start here.
    pub fn text_vocab_size(&self) -> usize {
        self.bytes.len() + Special::ALL.len()
    }

    pub fn image_tokens(&self) -> usize {
        self.image_tokens
    }

    pub fn image_id(&self, code: usize) -> u32 {
        (self.text_vocab_size() + code) as u32
    }

    /// Codebook index of an image-range id.
    pub fn image_code(&self, id: u32) -> Option<usize> {
        let id = id as usize;
        let lo = self.text_vocab_size();
        (lo..lo + self.image_tokens).contains(&id).then(|| id - lo)
    }

    pub fn total_size(&self) -> usize {
        self.text_vocab_size() + self.image_tokens
    }

    pub fn encode_text(&self, s: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pretokenize(s.as_bytes()) {
            out.extend(self.encode_chunk(chunk));
        }
        out
    }

    /// Applies merges lowest rank first, which reproduces training order.
    fn encode_chunk(&self, chunk: &[u8]) -> Vec<u32> {
        let mut w: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        loop {
            let best = w
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&(rank, id)| (rank, (p[0], p[1]), id)))
                .min();
            let Some((_, pair, id)) = best else { break };
            w = merge_pair(&w, pair, id);
        }
        w
    }

    /// Raw bytes of text ids; specials decode to nothing.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TextError> {
        let mut out = Vec::new();
        for &id in ids {
            if let Some(b) = self.bytes.get(id as usize) {
                out.extend_from_slice(b);
            } else if !self.is_special(id) {
                return Err(TextError::UnknownTokenId(id));
            }
        }
        Ok(out)
    }

    pub fn decode_text(&self, ids: &[u32]) -> Result<String, TextError> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|_| TextError::InvalidUtf8)
    }

    /// Plain-text vocab file: a header of specials and the image range, then
    /// one merge per line as `left␟right` with non-printable bytes escaped.
    pub fn to_file_string(&self) -> String {
        let mut s = String::from("molmm-bpe 1\n");
        let specials: Vec<&str> = Special::ALL.iter().map(|s| s.text()).collect();
        let _ = writeln!(s, "specials {}", specials.join(" "));
        let _ = writeln!(s, "image_tokens {}", self.image_tokens);
        let _ = writeln!(s, "merges {}", self.merges.len());
        for &(l, r) in &self.merges {
            let _ = writeln!(s, "{}{SEP}{}", escape(&self.bytes[l as usize]), escape(&self.bytes[r as usize]));
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<BpeVocab, TextError> {
        let bad = |line: usize, reason: &str| TextError::BadVocabFile {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<&str, TextError> {
            let (i, l) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
            l.strip_prefix(key).ok_or_else(|| bad(i + 1, &format!("expected {key}")))
        };
        header("molmm-bpe 1")?;
        let specials = header("specials ")?;
        let expected: Vec<&str> = Special::ALL.iter().map(|s| s.text()).collect();
        if specials.split(' ').collect::<Vec<_>>() != expected {
            return Err(bad(2, "unexpected special tokens"));
        }
        let image_tokens = header("image_tokens ")?.parse().map_err(|_| bad(3, "image_tokens"))?;
        let n: usize = header("merges ")?.parse().map_err(|_| bad(4, "merge count"))?;
        let (mut bytes, mut index) = byte_tokens();
        let mut merges = Vec::with_capacity(n);
        for (i, line) in lines {
            let (l, r) = line.split_once(SEP).ok_or_else(|| bad(i + 1, "missing separator"))?;
            let (l, r) = (unescape(l).ok_or_else(|| bad(i + 1, "bad escape"))?, unescape(r).ok_or_else(|| bad(i + 1, "bad escape"))?);
            let li = *index.get(&l).ok_or_else(|| bad(i + 1, "unknown left token"))?;
            let ri = *index.get(&r).ok_or_else(|| bad(i + 1, "unknown right token"))?;
            let mut joined = l;
            joined.extend_from_slice(&r);
            intern(&mut bytes, &mut index, joined);
            merges.push((li, ri));
        }
        if merges.len() != n {
            return Err(bad(0, "merge count does not match header"));
        }
        Ok(BpeVocab::from_parts(merges, bytes, &index, image_tokens))
    }
}

fn escape(b: &[u8]) -> String {
    let mut s = String::new();
    for &c in b {
        if c.is_ascii_graphic() && c != b'\\' {
            s.push(c as char);
        } else {
            let _ = write!(s, "\\x{c:02x}");
        }
    }
    s
}

fn unescape(s: &str) -> Option<Vec<u8>> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'\\' {
            let hex = s.get(i + 2..i + 4)?;
            if b.get(i + 1) != Some(&b'x') {
                return None;
            }
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 4;
        } else {
            out.push(b[i]);
            i += 1;
        }
    }
    (!out.is_empty()).then_some(out)
}
