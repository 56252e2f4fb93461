//! Tokenization, sentence splitting and rule-based EDU segmentation.
//!
//! Offsets in [`Span`] and [`Token`] are byte offsets into the source text.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::discourse::Relation;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("document {0}: gold segmentation requested but no EDUs are present")]
    MissingGold(String),
    #[error("document {0}: empty text")]
    EmptyText(String),
    #[error("cue lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("reading cue lexicon: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '—' | '–' | '…')
}

/// Splits on whitespace and detaches leading and trailing punctuation
/// characters as separate tokens. Case is preserved.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                split_chunk(text, s, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    out
}

fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let chunk = &text[start..end];
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let lead = chars.iter().take_while(|(_, c)| is_punct(*c)).count();
    if lead == chars.len() {
        for &(o, c) in &chars {
            out.push(Token {
                text: c.to_string(),
                start: start + o,
                end: start + o + c.len_utf8(),
            });
        }
        return;
    }
    let trail = chars.iter().rev().take_while(|(_, c)| is_punct(*c)).count();
    for &(o, c) in &chars[..lead] {
        out.push(Token {
            text: c.to_string(),
            start: start + o,
            end: start + o + c.len_utf8(),
        });
    }
    let core_start = start + chars[lead].0;
    let core_end = if trail == 0 {
        end
    } else {
        start + chars[chars.len() - trail].0
    };
    out.push(Token {
        text: text[core_start..core_end].to_string(),
        start: core_start,
        end: core_end,
    });
    for &(o, c) in &chars[chars.len() - trail..] {
        out.push(Token {
            text: c.to_string(),
            start: start + o,
            end: start + o + c.len_utf8(),
        });
    }
}

/// Token strings of `text`.
pub fn tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "lt", "col", "capt", "sgt",
    "gen", "gov", "sen", "rep", "rev", "hon", "u.s", "u.k", "u.n", "e.g", "i.e", "etc", "vs",
    "inc", "ltd", "co", "corp", "no", "jan", "feb", "mar", "apr", "aug", "sept", "oct", "nov",
    "dec", "a.m", "p.m",
];

const CLOSERS: &[&str] = &["\"", "'", ")", "]", "”", "’"];

fn is_terminator(t: &str) -> bool {
    matches!(t, "." | "!" | "?")
}

fn is_abbreviation(tok: &Token, next: &Token) -> bool {
    if tok.end != next.start {
        return false;
    }
    let lower = tok.text.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    let mut chars = tok.text.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_uppercase())
}

fn opens_sentence(tok: &Token) -> bool {
    tok.text
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit() || matches!(c, '"' | '\'' | '“' | '‘' | '('))
}

/// Token index ranges of the sentences of `toks`.
fn sentence_ranges(toks: &[Token]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < toks.len() {
        if is_terminator(&toks[i].text) {
            if i > 0 && toks[i].text == "." && is_abbreviation(&toks[i - 1], &toks[i]) {
                i += 1;
                continue;
            }
            let mut end = i + 1;
            while end < toks.len()
                && (is_terminator(&toks[end].text) || CLOSERS.contains(&toks[end].text.as_str()))
                && toks[end - 1].end == toks[end].start
            {
                end += 1;
            }
            if end < toks.len() && toks[end - 1].end < toks[end].start && opens_sentence(&toks[end]) {
                out.push(start..end);
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    if start < toks.len() {
        out.push(start..toks.len());
    }
    out
}

/// Sentence spans of `text`. Whitespace-only text yields no spans.
pub fn segment_sentences(text: &str) -> Vec<Span> {
    let toks = tokenize(text);
    sentence_ranges(&toks)
        .into_iter()
        .map(|r| Span {
            start: toks[r.start].start,
            end: toks[r.end - 1].end,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    Gold,
    Rule,
    Sentence,
}

impl FromStr for SegmentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gold" => Ok(SegmentMode::Gold),
            "rule" => Ok(SegmentMode::Rule),
            "sentence" => Ok(SegmentMode::Sentence),
            other => Err(format!("unknown segment mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cue {
    pub tokens: Vec<String>,
    pub hint: Option<Relation>,
}

/// Subordinating cues that open a new EDU in rule mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueLexicon {
    cues: Vec<Cue>,
}

const DEFAULT_CUES: &str = include_str!("../resources/cues.tsv");

impl Default for CueLexicon {
    fn default() -> Self {
        DEFAULT_CUES.parse().expect("bundled cue lexicon is valid")
    }
}

impl FromStr for CueLexicon {
    type Err = SegmentError;

    fn from_str(s: &str) -> Result<Self, SegmentError> {
        let mut cues = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let words: Vec<String> = parts
                .next()
                .unwrap_or("")
                .split_whitespace()
                .map(str::to_lowercase)
                .collect();
            if words.is_empty() {
                return Err(SegmentError::Lexicon {
                    line: n + 1,
                    message: "empty cue".into(),
                });
            }
            let hint = match parts.next().map(str::trim).filter(|h| !h.is_empty()) {
                Some(h) => Some(h.parse().map_err(|e: crate::discourse::UnknownRelation| {
                    SegmentError::Lexicon {
                        line: n + 1,
                        message: e.to_string(),
                    }
                })?),
                None => None,
            };
            cues.push(Cue {
                tokens: words,
                hint,
            });
        }
        Ok(Self { cues })
    }
}

impl CueLexicon {
    pub fn load(path: &Path) -> Result<Self, SegmentError> {
        fs::read_to_string(path)?.parse()
    }

    pub fn cues(&self) -> &[Cue] {
        &self.cues
    }

    /// True when a cue starts at `toks[i]`.
    fn matches_at(&self, lower: &[String], i: usize) -> bool {
        self.cues.iter().any(|c| {
            lower.len() >= i + c.tokens.len() && lower[i..i + c.tokens.len()] == c.tokens[..]
        })
    }
}

const SPEECH_VERBS: &[&str] = &[
    "said", "says", "say", "told", "tells", "reported", "reports", "claimed", "claims", "stated",
    "states", "announced", "argued", "insisted", "noted", "added", "explained", "warned",
];

const COORDINATORS: &[&str] = &["and", "but", "or", "so", "yet"];

const NON_VERBS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "his", "her", "its", "their", "our", "my",
    "your", "him", "them", "me", "us", "it", "he", "she", "we", "they", "you", "i", "some", "any",
    "all", "each", "every", "no", "one", "two", "three", "many", "more", "most", "both", "date",
    "which", "whom", "what", "where", "there", "here", "home", "school", "work", "court",
];

/// Rough stand-in for a part-of-speech check on the word after "to": a
/// lowercase alphabetic word that is not a determiner, pronoun or common
/// destination noun.
pub fn is_verb_like(word: &str) -> bool {
    !word.is_empty()
        && word.chars().all(|c| c.is_ascii_lowercase())
        && !NON_VERBS.contains(&word)
}

/// Clause boundaries inside one sentence, as token index ranges.
fn clause_ranges(toks: &[String], lexicon: &CueLexicon) -> Vec<std::ops::Range<usize>> {
    let lower: Vec<String> = toks.iter().map(|t| t.to_lowercase()).collect();
    let mut frags = Vec::new();
    let mut start = 0;
    for i in 1..toks.len() {
        let prev = lower[i - 1].as_str();
        let cur = lower[i].as_str();
        let cue = lexicon.matches_at(&lower, i) || (cur == "that" && SPEECH_VERBS.contains(&prev));
        let coord = prev == "," && COORDINATORS.contains(&cur);
        let semi = prev == ";";
        let purpose = cur == "to"
            && i - start >= 3
            && lower.get(i + 1).is_some_and(|w| is_verb_like(w));
        if (cue || coord || semi || purpose) && i > start {
            frags.push(start..i);
            start = i;
        }
    }
    if start < toks.len() {
        frags.push(start..toks.len());
    }
    merge_short(frags)
}

/// Folds fragments shorter than two tokens into their left neighbour (the
/// right neighbour for a leading fragment).
fn merge_short(frags: Vec<std::ops::Range<usize>>) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = Vec::with_capacity(frags.len());
    for f in frags {
        match out.last_mut() {
            Some(last) if f.len() < 2 => last.end = f.end,
            _ => out.push(f),
        }
    }
    if out.len() > 1 && out[0].len() < 2 {
        let first = out.remove(0);
        out[0].start = first.start;
    }
    out
}

/// Ordered EDUs of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EduSeq {
    pub edus: Vec<Vec<String>>,
    /// Source spans, rule and sentence modes only.
    pub spans: Option<Vec<Span>>,
    /// Sentence index of each EDU.
    pub sentence_ids: Vec<usize>,
}

impl EduSeq {
    pub fn len(&self) -> usize {
        self.edus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edus.is_empty()
    }

    /// Builds a sequence from pre-segmented EDUs. A new sentence starts after
    /// an EDU whose last token is a terminator.
    pub fn from_token_edus(edus: Vec<Vec<String>>) -> Self {
        let mut sentence_ids = Vec::with_capacity(edus.len());
        let mut s = 0;
        for e in &edus {
            sentence_ids.push(s);
            if e.last().is_some_and(|t| is_terminator(t)) {
                s += 1;
            }
        }
        Self {
            edus,
            spans: None,
            sentence_ids,
        }
    }

    fn truncate(&mut self, max_len: usize) -> bool {
        let mut cut = false;
        for e in &mut self.edus {
            if e.len() > max_len {
                e.truncate(max_len);
                cut = true;
            }
        }
        cut
    }
}

/// Gold EDU token sequences with a flagged root placeholder left out.
pub fn gold_token_edus(doc: &Document) -> Option<Vec<Vec<String>>> {
    doc.edus.as_ref().map(|edus| {
        edus.iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != doc.root)
            .map(|(_, e)| tokens(e))
            .collect()
    })
}

/// Segments a document into EDUs and truncates each to `max_edu_len` tokens.
pub fn segment_edus(
    doc: &Document,
    mode: SegmentMode,
    max_edu_len: usize,
    lexicon: &CueLexicon,
) -> Result<EduSeq, SegmentError> {
    let mut seq = match mode {
        SegmentMode::Gold => {
            let edus = gold_token_edus(doc).ok_or_else(|| SegmentError::MissingGold(doc.id.clone()))?;
            EduSeq::from_token_edus(edus)
        }
        SegmentMode::Rule | SegmentMode::Sentence => {
            let toks = tokenize(&doc.text);
            if toks.is_empty() {
                return Err(SegmentError::EmptyText(doc.id.clone()));
            }
            let mut edus = Vec::new();
            let mut spans = Vec::new();
            let mut sentence_ids = Vec::new();
            for (s, range) in sentence_ranges(&toks).into_iter().enumerate() {
                let sent = &toks[range];
                let words: Vec<String> = sent.iter().map(|t| t.text.clone()).collect();
                let clauses = if mode == SegmentMode::Rule {
                    clause_ranges(&words, lexicon)
                } else {
                    std::iter::once(0..words.len()).collect()
                };
                for c in clauses {
                    spans.push(Span {
                        start: sent[c.start].start,
                        end: sent[c.end - 1].end,
                    });
                    edus.push(words[c].to_vec());
                    sentence_ids.push(s);
                }
            }
            EduSeq {
                edus,
                spans: Some(spans),
                sentence_ids,
            }
        }
    };
    seq.truncate(max_edu_len.max(1));
    Ok(seq)
}

/// EDU strings for writing back to a corpus file. Gold EDUs that were not
/// truncated are passed through verbatim.
pub fn edu_strings(doc: &Document, seq: &EduSeq, mode: SegmentMode) -> Vec<String> {
    if mode == SegmentMode::Gold {
        if let (Some(orig), Some(gold)) = (doc.edus.as_ref(), gold_token_edus(doc)) {
            let kept: Vec<&String> = orig
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != doc.root)
                .map(|(_, e)| e)
                .collect();
            return kept
                .into_iter()
                .zip(gold.iter().zip(&seq.edus))
                .map(|(s, (full, cut))| if full.len() == cut.len() { s.clone() } else { cut.join(" ") })
                .collect();
        }
    }
    seq.edus.iter().map(|e| e.join(" ")).collect()
}

/// Accepts a segmentation with at least two EDUs.
pub fn edu_count_filter(seq: &EduSeq) -> bool {
    seq.len() >= 2
}
