//! Word-level text tokenizer with numeric routing.
//!
//! Descriptions are split on whitespace and punctuation; any maximal substring
//! shaped like `-?digits.digits` is routed to the numeric segment instead of
//! the word vocabulary, so distances in text keep their metric embedding.
//! Integers without a fractional part stay words ("there are 0 vehicles").

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numtok::{self, NumericTokenizerSpec};
use crate::seq::{Segment, VocabLayout, BOT, EOT};

pub const UNK_WORD: &str = "<unk>";

/// Immutable word vocabulary occupying the text segment of a [`VocabLayout`].
/// Id 0 of the segment is UNK; words follow in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextVocab {
    base: u32,
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl TextVocab {
    pub fn unk_id(&self) -> u32 {
        self.base
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.index.get(word).map(|local| self.base + local)
    }

    pub fn word_of(&self, id: u32) -> Option<&str> {
        if id == self.base {
            return Some(UNK_WORD);
        }
        let local = id.checked_sub(self.base + 1)? as usize;
        self.words.get(local).map(String::as_str)
    }

    /// Words + UNK.
    pub fn len(&self) -> usize {
        self.words.len() + 1
    }

    /// Line-oriented "word<TAB>id" file, sorted by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}\t{}", UNK_WORD, self.base)?;
        for (i, w) in self.words.iter().enumerate() {
            writeln!(f, "{}\t{}", w, self.base + 1 + i as u32)?;
        }
        Ok(())
    }

    pub fn load(path: &Path, layout: &VocabLayout) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path)?;
        let mut words = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (word, id) = line
                .split_once('\t')
                .ok_or_else(|| corrupt(format!("line {} lacks a tab", lineno + 1)))?;
            let id: u32 =
                id.parse().map_err(|_| corrupt(format!("line {} has a bad id", lineno + 1)))?;
            let expected = layout.text_base + lineno as u32;
            if id != expected {
                return Err(corrupt(format!(
                    "line {} id {} does not match expected {}",
                    lineno + 1,
                    id,
                    expected
                )));
            }
            if lineno == 0 {
                if word != UNK_WORD {
                    return Err(corrupt("first entry must be <unk>".into()));
                }
            } else {
                words.push(word.to_string());
            }
        }
        if words.len() + 1 > layout.text_count as usize {
            return Err(Error::VocabOverflow {
                words: words.len() + 1,
                capacity: layout.text_count as usize,
            });
        }
        Ok(Self::from_words(words, layout.text_base))
    }

    fn from_words(words: Vec<String>, base: u32) -> Self {
        let index =
            words.iter().enumerate().map(|(i, w)| (w.clone(), 1 + i as u32)).collect();
        Self { base, words, index }
    }
}

/// One lexical piece of a description.
#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    Word(String),
    Number(f64),
}

/// Split text into words and numbers. Whitespace separates; punctuation stands
/// alone; a maximal `-?digits.digits` run becomes one number.
pub fn pieces(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0usize;
        while i < chars.len() {
            if let Some((len, value)) = match_number(&chars[i..]) {
                out.push(Piece::Number(value));
                i += len;
            } else if chars[i].is_alphanumeric() {
                let start = i;
                while i < chars.len() && chars[i].is_alphanumeric() {
                    // stop before an embedded number like "x12.5"
                    if chars[i].is_ascii_digit() && match_number(&chars[i..]).is_some() {
                        break;
                    }
                    i += 1;
                }
                out.push(Piece::Word(chars[start..i].iter().collect()));
            } else {
                out.push(Piece::Word(chars[i].to_string()));
                i += 1;
            }
        }
    }
    out
}

/// Match `-?\d+\.\d+` at the head of `chars`; returns (length, value).
fn match_number(chars: &[char]) -> Option<(usize, f64)> {
    let mut i = 0usize;
    if chars.get(i) == Some(&'-') {
        i += 1;
    }
    let int_start = i;
    while chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
        i += 1;
    }
    if i == int_start || chars.get(i) != Some(&'.') {
        return None;
    }
    i += 1;
    let frac_start = i;
    while chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
        i += 1;
    }
    if i == frac_start {
        return None;
    }
    let s: String = chars[..i].iter().collect();
    s.parse().ok().map(|v| (i, v))
}

/// Deterministic word vocabulary over a corpus: whitespace/punctuation-split
/// words, numbers excluded, lexicographic id assignment after UNK.
pub fn build_vocab(corpus: &[String], layout: &VocabLayout) -> Result<TextVocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut set = BTreeSet::new();
    for doc in corpus {
        for piece in pieces(doc) {
            if let Piece::Word(w) = piece {
                set.insert(w);
            }
        }
    }
    let words: Vec<String> = set.into_iter().collect();
    if words.len() + 1 > layout.text_count as usize {
        return Err(Error::VocabOverflow {
            words: words.len() + 1,
            capacity: layout.text_count as usize,
        });
    }
    Ok(TextVocab::from_words(words, layout.text_base))
}

/// Mixed word/numeric token span, wrapped in BOT/EOT.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSpan {
    pub ids: Vec<u32>,
}

/// Tokenize a description: words to the text segment (UNK when absent),
/// numbers through the numeric grid, the whole span wrapped in BOT/EOT.
pub fn encode_text(
    text: &str,
    vocab: &TextVocab,
    spec: &NumericTokenizerSpec,
    layout: &VocabLayout,
) -> Result<TextSpan> {
    let mut ids = vec![BOT];
    for piece in pieces(text) {
        match piece {
            Piece::Word(w) => ids.push(vocab.word_id(&w).unwrap_or_else(|| vocab.unk_id())),
            Piece::Number(x) => ids.push(layout.numeric_id(numtok::encode_float(x, spec)?)),
        }
    }
    ids.push(EOT);
    Ok(TextSpan { ids })
}

/// Render a BOT..EOT span back to text: words joined by single spaces, numeric
/// tokens with two decimal places.
pub fn decode_text(
    span: &[u32],
    vocab: &TextVocab,
    spec: &NumericTokenizerSpec,
    layout: &VocabLayout,
) -> Result<String> {
    let malformed = |position: usize, reason: &str| Error::MalformedFrame {
        position,
        reason: reason.to_string(),
    };
    if span.first() != Some(&BOT) {
        return Err(malformed(0, "text span must start with BOT"));
    }
    if span.last() != Some(&EOT) {
        return Err(malformed(span.len().saturating_sub(1), "text span must end with EOT"));
    }
    let mut parts: Vec<String> = Vec::new();
    for (i, &id) in span[1..span.len() - 1].iter().enumerate() {
        match layout.segment_of(id) {
            Some(Segment::Text) => {
                let word = vocab
                    .word_of(id)
                    .ok_or_else(|| malformed(1 + i, "text id outside the built vocabulary"))?;
                parts.push(word.to_string());
            }
            Some(Segment::Numeric) => {
                let value = numtok::decode_float(layout.numeric_token(id).unwrap(), spec);
                parts.push(format!("{value:.2}"));
            }
            _ => return Err(malformed(1 + i, "non-text token inside description span")),
        }
    }
    Ok(parts.join(" "))
}
