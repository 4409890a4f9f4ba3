//! Text-overlap metrics over token lists.

use std::collections::HashMap;

use crate::error::EvalError;

/// Lowercases, then emits maximal runs of alphanumeric characters and every
/// other non-whitespace character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn strs<S: AsRef<str>>(t: &[S]) -> Vec<&str> {
    t.iter().map(AsRef::as_ref).collect()
}

/// Multiset of the order-`n` n-grams.
pub fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    m
}

/// Cumulative BLEU-N with uniform weights, clipped counts and brevity
/// penalty. With several references, counts clip at the per-reference
/// maximum and the brevity length is the closest reference length (shorter
/// on ties). Zero when any precision is zero.
pub fn bleu_n<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R], n: usize) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::BadOrder);
    }
    let cand = strs(candidate);
    if cand.is_empty() {
        return Err(EvalError::EmptyCandidate);
    }
    let refs: Vec<Vec<&str>> = references.iter().map(|r| strs(r.as_ref())).collect();
    if refs.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let cc = ngram_counts(&cand, k);
        let total: usize = cc.values().sum();
        if total == 0 {
            return Ok(0.0);
        }
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, k)).collect();
        let clipped: usize = cc
            .iter()
            .map(|(g, &c)| c.min(ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok((bp * (log_sum / n as f64).exp()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RougeMode {
    /// Matched reference n-grams over all reference n-grams.
    #[default]
    Recall,
    /// Harmonic mean of n-gram precision and recall.
    F1,
}

/// ROUGE-N with clipped n-gram matches.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize, mode: RougeMode) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::BadOrder);
    }
    let (cand, refr) = (strs(candidate), strs(reference));
    let rc = ngram_counts(&refr, n);
    let ref_total: usize = rc.values().sum();
    if ref_total == 0 {
        return Err(EvalError::EmptyReference);
    }
    let cc = ngram_counts(&cand, n);
    let matched: usize = rc.iter().map(|(g, &c)| c.min(cc.get(g).copied().unwrap_or(0))).sum();
    let recall = matched as f64 / ref_total as f64;
    Ok(match mode {
        RougeMode::Recall => recall,
        RougeMode::F1 => {
            let cand_total: usize = cc.values().sum();
            if matched == 0 || cand_total == 0 {
                0.0
            } else {
                let p = matched as f64 / cand_total as f64;
                2.0 * p * recall / (p + recall)
            }
        }
    })
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let (a, b) = (strs(a), strs(b));
    let mut row = vec![0usize; b.len() + 1];
    for x in &a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub const ROUGE_L_BETA: f64 = 1.2;

/// ROUGE-L F-measure (1+β²)PR/(R+β²P) with P = LCS/|cand|, R = LCS/|ref|.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64, EvalError> {
    rouge_l_beta(candidate, reference, ROUGE_L_BETA)
}

pub fn rouge_l_beta<S: AsRef<str>>(candidate: &[S], reference: &[S], beta: f64) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = beta * beta;
    Ok(((1.0 + b2) * p * r / (r + b2 * p)).clamp(0.0, 1.0))
}

/// Exact-match unigram alignment used by METEOR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Largest number of reachable search states before the alignment search
/// switches to the greedy rule.
const ALIGN_STATE_BUDGET: usize = 200_000;

/// Alignment with the most matches and, among those, the fewest chunks. A
/// chunk is a maximal run of matches adjacent in both candidate and
/// reference. Exact search; inputs whose search space exceeds a fixed budget
/// fall back to a greedy rule that extends the current chunk when it can and
/// otherwise takes the leftmost free reference position.
pub fn align<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Alignment {
    let (c, r) = (strs(candidate), strs(reference));
    let mut ids: HashMap<&str, usize> = HashMap::new();
    for t in c.iter().chain(&r) {
        let k = ids.len();
        ids.entry(t).or_insert(k);
    }
    let cw: Vec<usize> = c.iter().map(|t| ids[t]).collect();
    let rw: Vec<usize> = r.iter().map(|t| ids[t]).collect();
    let mut cc = vec![0usize; ids.len()];
    let mut rc = vec![0usize; ids.len()];
    cw.iter().for_each(|&w| cc[w] += 1);
    rw.iter().for_each(|&w| rc[w] += 1);
    let need: Vec<usize> = cc.iter().zip(&rc).map(|(a, b)| *a.min(b)).collect();
    let matches: usize = need.iter().sum();
    if matches == 0 {
        return Alignment { matches: 0, chunks: 0 };
    }
    let mut search = Search {
        cw: &cw,
        rw: &rw,
        need: &need,
        remaining: suffix_counts(&cw, ids.len()),
        memo: HashMap::new(),
        used: vec![0u64; rw.len().div_ceil(64)],
        matched: vec![0; ids.len()],
    };
    let chunks = match search.best(0, usize::MAX) {
        Some(ch) => ch,
        None => greedy_chunks(&cw, &rw, &need),
    };
    Alignment { matches, chunks }
}

fn suffix_counts(cw: &[usize], k: usize) -> Vec<Vec<usize>> {
    // remaining[i][w]: occurrences of w in cw[i..]
    let mut out = vec![vec![0; k]; cw.len() + 1];
    for i in (0..cw.len()).rev() {
        out[i] = out[i + 1].clone();
        out[i][cw[i]] += 1;
    }
    out
}

struct Search<'a> {
    cw: &'a [usize],
    rw: &'a [usize],
    need: &'a [usize],
    remaining: Vec<Vec<usize>>,
    memo: HashMap<(usize, usize, Vec<u64>), usize>,
    used: Vec<u64>,
    matched: Vec<usize>,
}

impl Search<'_> {
    /// Fewest chunks for positions i.. given the reference position matched
    /// at i-1 (`usize::MAX` if none); None once the budget is exhausted.
    fn best(&mut self, i: usize, prev: usize) -> Option<usize> {
        if i == self.cw.len() {
            return Some(0);
        }
        let key = (i, prev, self.used.clone());
        if let Some(&v) = self.memo.get(&key) {
            return Some(v);
        }
        if self.memo.len() >= ALIGN_STATE_BUDGET {
            return None;
        }
        let w = self.cw[i];
        let mut best = usize::MAX;
        // skipping must leave enough later occurrences to reach `need`
        if self.need[w] - self.matched[w] < self.remaining[i][w] {
            best = self.best(i + 1, usize::MAX)?;
        }
        if self.matched[w] < self.need[w] {
            for j in 0..self.rw.len() {
                if self.rw[j] != w || self.used[j / 64] >> (j % 64) & 1 == 1 {
                    continue;
                }
                let cost = usize::from(prev == usize::MAX || prev + 1 != j);
                self.used[j / 64] |= 1 << (j % 64);
                self.matched[w] += 1;
                let rest = self.best(i + 1, j);
                self.used[j / 64] &= !(1 << (j % 64));
                self.matched[w] -= 1;
                best = best.min(rest?.saturating_add(cost));
            }
        }
        self.memo.insert(key, best);
        Some(best)
    }
}

fn greedy_chunks(cw: &[usize], rw: &[usize], need: &[usize]) -> usize {
    let mut used = vec![false; rw.len()];
    let mut matched = vec![0; need.len()];
    let mut prev: Option<usize> = None;
    let mut chunks = 0;
    for &w in cw {
        if matched[w] == need[w] {
            prev = None;
            continue;
        }
        let next = prev.map(|p| p + 1).filter(|&j| j < rw.len() && !used[j] && rw[j] == w);
        let j = match next {
            Some(j) => j,
            None => {
                chunks += 1;
                (0..rw.len()).find(|&j| !used[j] && rw[j] == w).unwrap()
            }
        };
        used[j] = true;
        matched[w] += 1;
        prev = Some(j);
    }
    chunks
}

/// METEOR with exact unigram matching: F_mean = 10PR/(R+9P) and
/// fragmentation penalty 0.5·(chunks/matches)³; zero without matches.
pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let a = align(candidate, reference);
    meteor_from_alignment(a, candidate.len(), reference.len())
}

pub fn meteor_from_alignment(a: Alignment, cand_len: usize, ref_len: usize) -> f64 {
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}
