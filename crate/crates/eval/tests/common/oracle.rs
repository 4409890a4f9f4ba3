//! Brute-force reference implementations for the text and molecule-set
//! metrics. Deliberately naive: no shared code with the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

/// Every contiguous n-gram, enumerated by index.
pub fn ngrams(t: &[u32], n: usize) -> Vec<Vec<u32>> {
    if n == 0 || t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<u32>], g: &[u32]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Clipped matches: each distinct candidate n-gram counts min(cand, ref).
fn clipped(c: &[Vec<u32>], r: &[Vec<u32>]) -> usize {
    let distinct: BTreeSet<&Vec<u32>> = c.iter().collect();
    distinct.into_iter().map(|g| count(c, g).min(count(r, g))).sum()
}

pub fn bleu(c: &[u32], r: &[u32], n: usize) -> f64 {
    let mut prod = 1.0;
    for k in 1..=n {
        let cg = ngrams(c, k);
        if cg.is_empty() {
            return 0.0;
        }
        let m = clipped(&cg, &ngrams(r, k));
        if m == 0 {
            return 0.0;
        }
        prod *= m as f64 / cg.len() as f64;
    }
    let bp = if c.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / c.len() as f64).exp() };
    bp * prod.powf(1.0 / n as f64)
}

pub fn rouge_n_recall(c: &[u32], r: &[u32], n: usize) -> f64 {
    let rg = ngrams(r, n);
    clipped(&ngrams(c, n), &rg) as f64 / rg.len() as f64
}

pub fn rouge_n_f1(c: &[u32], r: &[u32], n: usize) -> f64 {
    let (cg, rg) = (ngrams(c, n), ngrams(r, n));
    let m = clipped(&cg, &rg) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let (p, rc) = (m / cg.len() as f64, m / rg.len() as f64);
    2.0 * p * rc / (p + rc)
}

fn is_subsequence(s: &[u32], t: &[u32]) -> bool {
    let mut it = t.iter();
    s.iter().all(|x| it.any(|y| y == x))
}

/// Tries every subset of `a` as a candidate subsequence of `b`.
pub fn lcs(a: &[u32], b: &[u32]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u32> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(c: &[u32], r: &[u32]) -> f64 {
    let l = lcs(c, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rc) = (l / c.len() as f64, l / r.len() as f64);
    let b2 = 1.2f64 * 1.2;
    (1.0 + b2) * p * rc / (rc + b2 * p)
}

/// Enumerates every injective matching of equal tokens, keeps those with
/// the most matches and returns (matches, fewest chunks).
pub fn alignment(c: &[u32], r: &[u32]) -> (usize, usize) {
    fn rec(i: usize, c: &[u32], r: &[u32], used: &mut Vec<bool>, pairs: &mut Vec<(usize, usize)>, best: &mut (usize, usize)) {
        if i == c.len() {
            let m = pairs.len();
            let mut chunks = 0;
            for k in 0..m {
                let joined = k > 0 && pairs[k - 1].0 + 1 == pairs[k].0 && pairs[k - 1].1 + 1 == pairs[k].1;
                if !joined {
                    chunks += 1;
                }
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        rec(i + 1, c, r, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                pairs.push((i, j));
                rec(i + 1, c, r, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, usize::MAX);
    rec(0, c, r, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    if best.0 == 0 {
        (0, 0)
    } else {
        best
    }
}

pub fn meteor(c: &[u32], r: &[u32]) -> f64 {
    let (m, ch) = alignment(c, r);
    if m == 0 {
        return 0.0;
    }
    let (p, rc) = (m as f64 / c.len() as f64, m as f64 / r.len() as f64);
    let f = 10.0 * p * rc / (rc + 9.0 * p);
    f * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3))
}

/// Every restricted-growth string of length `n`: each equality pattern of
/// an n-token sequence exactly once.
pub fn equality_patterns(n: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::new();
        for p in &out {
            let max = p.iter().copied().max().map_or(0, |m| m + 1);
            for v in 0..=max {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Set-arithmetic reference for molecule-set metrics given canonical forms
/// (None = invalid), reference canonicals, and a similarity function.
pub struct SetOracle {
    pub valid_rate: f64,
    pub accuracy: f64,
    pub diversity: Option<f64>,
    pub novelty: Option<f64>,
}

pub fn set_metrics(outputs: &[Option<String>], refs: &[String], train: &[String], sim: impl Fn(&str, &str) -> f64) -> SetOracle {
    let n = outputs.len() as f64;
    let valid: Vec<&String> = outputs.iter().flatten().collect();
    let hits = outputs.iter().zip(refs).filter(|(o, r)| o.as_ref() == Some(*r)).count();
    let g: BTreeSet<&String> = valid.iter().copied().collect();
    let t: BTreeSet<&String> = train.iter().collect();
    let novel = g.difference(&t).count();
    let gv: Vec<&String> = g.iter().copied().collect();
    let diversity = if gv.is_empty() {
        None
    } else if gv.len() == 1 {
        Some(0.0)
    } else {
        // ordered pairs i != j, halved implicitly by symmetry
        let mut total = 0.0;
        let mut k = 0.0;
        for i in 0..gv.len() {
            for j in 0..gv.len() {
                if i != j {
                    total += sim(gv[i], gv[j]);
                    k += 1.0;
                }
            }
        }
        Some(1.0 - total / k)
    };
    SetOracle {
        valid_rate: valid.len() as f64 / n,
        accuracy: hits as f64 / n,
        diversity,
        novelty: (!g.is_empty()).then(|| novel as f64 / g.len() as f64),
    }
}

/// Counts of each canonical form, for multiset checks.
pub fn histogram(v: &[String]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in v {
        *m.entry(s.clone()).or_insert(0) += 1;
    }
    m
}
