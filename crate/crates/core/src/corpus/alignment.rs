use std::fmt::Write as _;
use std::path::Path;

use super::CorpusError;

/// ARPAbet vowel symbols (stress digits are stripped before lookup).
pub const VOWELS: [&str; 19] = [
    "AA", "AE", "AH", "AO", "AW", "AX", "AXR", "AY", "EH", "ER", "EY", "IH", "IX", "IY", "OW",
    "OY", "UH", "UW", "UX",
];

const SILENCE: [&str; 6] = ["SIL", "SP", "SPN", "PAU", "H#", "<SIL>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CvClass {
    Consonant,
    Vowel,
    Silence,
}

/// Consonant/vowel/silence class of an ARPAbet-style phone symbol.
pub fn cv_class(phone: &str) -> CvClass {
    let upper = phone.to_ascii_uppercase();
    if SILENCE.contains(&upper.as_str()) {
        return CvClass::Silence;
    }
    let base = upper.trim_end_matches(|c: char| c.is_ascii_digit());
    if VOWELS.contains(&base) {
        CvClass::Vowel
    } else {
        CvClass::Consonant
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordInterval {
    pub start: f64,
    pub end: f64,
    pub token: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhoneInterval {
    pub start: f64,
    pub end: f64,
    pub token: String,
    pub class: CvClass,
}

/// Word and phone tiers, each sorted by start time and non-overlapping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlignmentTiers {
    pub words: Vec<WordInterval>,
    pub phones: Vec<PhoneInterval>,
}

impl AlignmentTiers {
    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.phones.is_empty()
    }
}

/// Parses `<w|p> <start> <end> <token>` lines. `origin` only labels errors.
pub fn parse_alignment(text: &str, origin: &Path) -> Result<AlignmentTiers, CorpusError> {
    let err = |line: usize, message: String| CorpusError::Alignment {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut tiers = AlignmentTiers::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [tier, start, end, token] = fields[..] else {
            return Err(err(line, format!("expected 4 fields, found {}", fields.len())));
        };
        let time = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(line, format!("bad time `{s}`")))
        };
        let (start, end) = (time(start)?, time(end)?);
        if end <= start {
            return Err(err(line, format!("interval end {end} is not after start {start}")));
        }
        let token = token.to_string();
        match tier {
            "w" => tiers.words.push(WordInterval { start, end, token }),
            "p" => tiers.phones.push(PhoneInterval {
                start,
                end,
                class: cv_class(&token),
                token,
            }),
            other => return Err(err(line, format!("unknown tier `{other}` (expected w or p)"))),
        }
    }
    tiers.words.sort_by(|a, b| a.start.total_cmp(&b.start));
    tiers.phones.sort_by(|a, b| a.start.total_cmp(&b.start));
    let overlap = |tier, spans: Vec<(f64, f64)>| {
        spans
            .windows(2)
            .find(|w| w[1].0 < w[0].1)
            .map(|w| CorpusError::Overlap {
                path: origin.to_path_buf(),
                tier,
                start: w[1].0,
            })
    };
    if let Some(e) = overlap("word", tiers.words.iter().map(|w| (w.start, w.end)).collect()) {
        return Err(e);
    }
    if let Some(e) = overlap("phone", tiers.phones.iter().map(|p| (p.start, p.end)).collect()) {
        return Err(e);
    }
    Ok(tiers)
}

pub fn load_alignment(path: &Path) -> Result<AlignmentTiers, CorpusError> {
    parse_alignment(&std::fs::read_to_string(path)?, path)
}

/// Serializes tiers with millisecond precision, words first.
pub fn write_alignment(tiers: &AlignmentTiers) -> String {
    let mut out = String::new();
    for w in &tiers.words {
        let _ = writeln!(out, "w {:.3} {:.3} {}", w.start, w.end, w.token);
    }
    for p in &tiers.phones {
        let _ = writeln!(out, "p {:.3} {:.3} {}", p.start, p.end, p.token);
    }
    out
}
