//! Property values in answer text: formatting and the inverse parser.

use molmm_chem::PropertyVector;
use serde::{Deserialize, Serialize};

/// The seven task properties, serializable for provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyValues {
    pub mw: f64,
    pub logp: f64,
    pub tpsa: f64,
    pub hbd: usize,
    pub hba: usize,
    pub rb: usize,
    pub qed: f64,
}

impl From<&PropertyVector> for PropertyValues {
    fn from(p: &PropertyVector) -> Self {
        PropertyValues {
            mw: p.mw,
            logp: p.logp,
            tpsa: p.tpsa,
            hbd: p.hbd,
            hba: p.hba,
            rb: p.rb,
            qed: p.qed,
        }
    }
}

impl PropertyValues {
    /// Largest absolute difference over the real fields, or infinity when
    /// any count differs.
    pub fn max_abs_diff(&self, other: &PropertyValues) -> f64 {
        if (self.hbd, self.hba, self.rb) != (other.hbd, other.hba, other.rb) {
            return f64::INFINITY;
        }
        [
            self.mw - other.mw,
            self.logp - other.logp,
            self.tpsa - other.tpsa,
            self.qed - other.qed,
        ]
        .iter()
        .fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Values as they read after two-decimal formatting.
    pub fn rounded(&self) -> PropertyValues {
        let r = |x: f64| format_real(x).parse::<f64>().unwrap();
        PropertyValues {
            mw: r(self.mw),
            logp: r(self.logp),
            tpsa: r(self.tpsa),
            qed: r(self.qed),
            ..*self
        }
    }
}

/// Two decimal places with trailing zeros dropped: 25.50 → "25.5", 3.00 → "3".
pub fn format_real(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// "MW is …, LogP is …, TPSA is …, HBD is …, HBA is …, RB is … and QED is …"
pub fn property_clause(p: &PropertyValues) -> String {
    format!(
        "MW is {}, LogP is {}, TPSA is {}, HBD is {}, HBA is {}, RB is {} and QED is {}",
        format_real(p.mw),
        format_real(p.logp),
        format_real(p.tpsa),
        p.hbd,
        p.hba,
        p.rb,
        format_real(p.qed)
    )
}

/// The img2property answer sentence.
pub fn property_answer(p: &PropertyValues) -> String {
    format!("The {}", property_clause(p))
}

const LABELS: [&str; 7] = ["MW", "LogP", "TPSA", "HBD", "HBA", "RB", "QED"];

/// Extracts the seven labeled values from text containing a property clause.
/// Labels are matched case-insensitively in order, each followed by "is" and
/// a number; anything between one value and the next label is ignored.
/// Counts must be non-negative integers.
pub fn parse_property_answer(text: &str) -> Option<PropertyValues> {
    let lower = text.to_ascii_lowercase();
    let mut pos = 0;
    let mut vals = [0.0f64; 7];
    for (k, label) in LABELS.iter().enumerate() {
        let key = format!("{} is ", label.to_ascii_lowercase());
        let at = find_word(&lower, &key, pos)?;
        let start = at + key.len();
        let (v, end) = read_number(&text[start..])?;
        vals[k] = v;
        pos = start + end;
    }
    let count = |v: f64| (v >= 0.0 && v.fract() == 0.0 && v < 1e9).then_some(v as usize);
    Some(PropertyValues {
        mw: vals[0],
        logp: vals[1],
        tpsa: vals[2],
        hbd: count(vals[3])?,
        hba: count(vals[4])?,
        rb: count(vals[5])?,
        qed: vals[6],
    })
}

/// First occurrence of `key` at or after `from` that starts a word.
fn find_word(hay: &str, key: &str, from: usize) -> Option<usize> {
    let mut i = from;
    while let Some(off) = hay.get(i..)?.find(key) {
        let at = i + off;
        if at == 0 || !hay.as_bytes()[at - 1].is_ascii_alphanumeric() {
            return Some(at);
        }
        i = at + 1;
    }
    None
}

/// Leading decimal number of `s`; a trailing period is not part of it.
fn read_number(s: &str) -> Option<(f64, usize)> {
    let b = s.as_bytes();
    let mut end = 0;
    if end < b.len() && (b[end] == b'-' || b[end] == b'+') {
        end += 1;
    }
    let digits_start = end;
    while end < b.len() && b[end].is_ascii_digit() {
        end += 1;
    }
    if end < b.len() && b[end] == b'.' && end + 1 < b.len() && b[end + 1].is_ascii_digit() {
        end += 1;
        while end < b.len() && b[end].is_ascii_digit() {
            end += 1;
        }
    }
    if end == digits_start {
        return None;
    }
    let v: f64 = s[..end].parse().ok()?;
    v.is_finite().then_some((v, end))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_drop_trailing_zeros() {
        assert_eq!(format_real(25.5), "25.5");
        assert_eq!(format_real(25.504), "25.5");
        assert_eq!(format_real(3.0), "3");
        assert_eq!(format_real(0.626), "0.63");
        assert_eq!(format_real(-0.001), "0");
        assert_eq!(format_real(-1.237), "-1.24");
    }

    #[test]
    fn parser_skips_label_substrings() {
        // "HBA" must not match inside another word
        let t = "The MW is 1, LogP is -2.5, TPSA is 0, HBD is 1, xHBA is 9, HBA is 2, RB is 3 and QED is 0.5.";
        let p = parse_property_answer(t).unwrap();
        assert_eq!((p.hba, p.logp, p.qed), (2, -2.5, 0.5));
    }

    #[test]
    fn parser_rejects_fractional_counts() {
        let t = "MW is 1, LogP is 1, TPSA is 1, HBD is 1.5, HBA is 2, RB is 3 and QED is 0.5";
        assert!(parse_property_answer(t).is_none());
        assert!(parse_property_answer("no idea").is_none());
    }
}
