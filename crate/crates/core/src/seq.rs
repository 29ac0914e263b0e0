//! Unified vocabulary layout and frame sequence assembly.
//!
//! Every modality owns a contiguous id segment; frames are flattened into a
//! single stream `[BOF, observation, description, action]` with per-token
//! modality tags and loss weights.

use std::io::{Read, Write};
use std::path::Path;

use crate::actiontok::{self, Action, ActionSpecs};
use crate::error::{Error, Result};
use crate::imgtok::{self, ImageTokens, PatchCodebook, RasterImage};
use crate::texttok::{self, TextVocab};

/// Padding / batch filler. Loss weight 0 by contract.
pub const PAD: u32 = 0;
/// Stream start (reserved; frames are delimited by [`BOF`]).
pub const BOS: u32 = 1;
/// Beginning-of-frame delimiter.
pub const BOF: u32 = 2;
/// Action span anchors.
pub const BOA: u32 = 3;
pub const EOA: u32 = 4;
/// Text span anchors.
pub const BOT: u32 = 5;
pub const EOT: u32 = 6;
/// Placeholder for a masked future motion.
pub const MMASK: u32 = 7;

const SPECIAL_COUNT: u32 = 8;
/// Shape tokens encode grid dimensions 1..=MAX_SHAPE.
pub const MAX_SHAPE: u32 = 64;

/// Which segment an id belongs to. Total over `[0, vocab_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Special,
    Shape,
    Image,
    Text,
    Numeric,
}

/// Per-token modality tag carried through training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Special,
    Obs,
    Desc,
    Action,
}

/// Disjoint contiguous id ranges for every modality.
///
/// Order: specials, shape tokens, image codebook, text words, numeric grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabLayout {
    pub shape_base: u32,
    pub shape_count: u32,
    pub image_base: u32,
    pub image_count: u32,
    pub text_base: u32,
    pub text_count: u32,
    pub numeric_base: u32,
    pub numeric_count: u32,
    pub vocab_size: u32,
}

impl VocabLayout {
    pub fn new(image_count: u32, text_count: u32, numeric_count: u32) -> Result<Self> {
        if image_count == 0 || text_count == 0 || numeric_count < 2 {
            return Err(Error::Config(format!(
                "empty segment: image {image_count}, text {text_count}, numeric {numeric_count}"
            )));
        }
        let shape_base = SPECIAL_COUNT;
        let image_base = shape_base + MAX_SHAPE;
        let text_base = image_base + image_count;
        let numeric_base = text_base + text_count;
        Ok(Self {
            shape_base,
            shape_count: MAX_SHAPE,
            image_base,
            image_count,
            text_base,
            text_count,
            numeric_base,
            numeric_count,
            vocab_size: numeric_base + numeric_count,
        })
    }

    /// Segment of an id; `None` outside `[0, vocab_size)`.
    pub fn segment_of(&self, id: u32) -> Option<Segment> {
        if id < SPECIAL_COUNT {
            Some(Segment::Special)
        } else if id < self.image_base {
            Some(Segment::Shape)
        } else if id < self.text_base {
            Some(Segment::Image)
        } else if id < self.numeric_base {
            Some(Segment::Text)
        } else if id < self.vocab_size {
            Some(Segment::Numeric)
        } else {
            None
        }
    }

    /// Shape token for a grid dimension in `1..=MAX_SHAPE`.
    pub fn shape_token(&self, dim: u32) -> Result<u32> {
        if dim == 0 || dim > self.shape_count {
            return Err(Error::DimensionMismatch(format!(
                "grid dimension {dim} outside 1..={}",
                self.shape_count
            )));
        }
        Ok(self.shape_base + dim - 1)
    }

    /// Grid dimension encoded by a shape token.
    pub fn shape_value(&self, id: u32) -> Option<u32> {
        (self.segment_of(id) == Some(Segment::Shape)).then(|| id - self.shape_base + 1)
    }

    pub fn image_id(&self, index: u32) -> u32 {
        debug_assert!(index < self.image_count);
        self.image_base + index
    }

    pub fn image_index(&self, id: u32) -> Option<u32> {
        (self.segment_of(id) == Some(Segment::Image)).then(|| id - self.image_base)
    }

    pub fn numeric_id(&self, t: crate::numtok::NumericToken) -> u32 {
        debug_assert!(t.id < self.numeric_count);
        self.numeric_base + t.id
    }

    pub fn numeric_token(&self, id: u32) -> Option<crate::numtok::NumericToken> {
        (self.segment_of(id) == Some(Segment::Numeric))
            .then(|| crate::numtok::NumericToken { id: id - self.numeric_base })
    }

    pub fn shape_range(&self) -> std::ops::Range<u32> {
        self.shape_base..self.shape_base + self.shape_count
    }

    pub fn image_range(&self) -> std::ops::Range<u32> {
        self.image_base..self.image_base + self.image_count
    }

    pub fn text_range(&self) -> std::ops::Range<u32> {
        self.text_base..self.text_base + self.text_count
    }

    pub fn numeric_range(&self) -> std::ops::Range<u32> {
        self.numeric_base..self.numeric_base + self.numeric_count
    }
}

/// One simulator keyframe: what the model sees, reads, and does.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: RasterImage,
    pub description: String,
    pub action: Action,
}

/// Everything needed to move between frames and token streams.
#[derive(Debug, Clone)]
pub struct Tokenizers {
    pub layout: VocabLayout,
    pub codebook: PatchCodebook,
    pub vocab: TextVocab,
    pub specs: ActionSpecs,
}

/// Default multiplier on action numeric-token loss weights.
pub const DEFAULT_ACTION_WEIGHT: f64 = 5.0;

/// A tokenized stream with parallel modality tags and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub ids: Vec<u32>,
    pub modality: Vec<Modality>,
    pub weight: Vec<f64>,
}

impl SequenceSample {
    pub fn new() -> Self {
        Self { ids: Vec::new(), modality: Vec::new(), weight: Vec::new() }
    }

    pub fn push(&mut self, id: u32, modality: Modality, weight: f64) {
        self.ids.push(id);
        self.modality.push(modality);
        self.weight.push(weight);
    }

    pub fn extend(&mut self, other: &SequenceSample) {
        self.ids.extend_from_slice(&other.ids);
        self.modality.extend_from_slice(&other.modality);
        self.weight.extend_from_slice(&other.weight);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Default for SequenceSample {
    fn default() -> Self {
        Self::new()
    }
}

/// Flatten a frame into `[BOF, obs, desc, action]`.
///
/// With `mask` set the action span keeps only its first motion and one MMASK
/// per further motion. Action numeric tokens carry `action_weight`; everything
/// else weighs 1.
pub fn assemble_frame(
    frame: &Frame,
    toks: &Tokenizers,
    mask: bool,
    action_weight: f64,
) -> Result<SequenceSample> {
    let layout = &toks.layout;
    let mut out = SequenceSample::new();
    out.push(BOF, Modality::Special, 1.0);

    let img = imgtok::encode_image(&frame.image, &toks.codebook)?;
    out.push(layout.shape_token(img.rows)?, Modality::Obs, 1.0);
    out.push(layout.shape_token(img.cols)?, Modality::Obs, 1.0);
    for &idx in &img.indices {
        out.push(layout.image_id(idx), Modality::Obs, 1.0);
    }

    let span = texttok::encode_text(&frame.description, &toks.vocab, &toks.specs.disp, layout)?;
    for &id in &span.ids {
        let m = if id == BOT || id == EOT { Modality::Special } else { Modality::Desc };
        out.push(id, m, 1.0);
    }

    let mut action_ids = actiontok::encode_action(&frame.action, &toks.specs, layout)?;
    if mask {
        action_ids = actiontok::mask_action_tokens(&action_ids, layout)?;
    }
    for &id in &action_ids {
        match layout.segment_of(id) {
            Some(Segment::Numeric) => out.push(id, Modality::Action, action_weight),
            _ => out.push(id, Modality::Special, 1.0),
        }
    }
    Ok(out)
}

/// A frame re-structured from tokens. The action may contain masked slots, so
/// it is kept in parsed form; [`ParsedFrame::to_frame`] requires it complete.
#[derive(Debug, Clone)]
pub struct ParsedFrame {
    pub image_tokens: ImageTokens,
    pub image: RasterImage,
    pub description: String,
    pub action: actiontok::ParsedAction,
    /// Tokens consumed from the input stream.
    pub consumed: usize,
}

impl ParsedFrame {
    pub fn to_frame(&self) -> Result<Frame> {
        Ok(Frame {
            image: self.image.clone(),
            description: self.description.clone(),
            action: self.action.to_action()?,
        })
    }
}

fn malformed(position: usize, reason: impl Into<String>) -> Error {
    Error::MalformedFrame { position, reason: reason.into() }
}

/// Parse one frame from the head of `tokens`.
///
/// Reports the offending token index on any framing violation and never
/// panics on arbitrary input.
pub fn parse_frame(tokens: &[u32], toks: &Tokenizers) -> Result<ParsedFrame> {
    let layout = &toks.layout;
    let mut pos = 0usize;
    let need = |pos: usize, tokens: &[u32]| -> Result<u32> {
        tokens.get(pos).copied().ok_or_else(|| malformed(pos, "unexpected end of stream"))
    };

    if need(pos, tokens)? != BOF {
        return Err(malformed(pos, "frame must start with BOF"));
    }
    pos += 1;

    let rows = layout
        .shape_value(need(pos, tokens)?)
        .ok_or_else(|| malformed(pos, "expected row shape token"))?;
    pos += 1;
    let cols = layout
        .shape_value(need(pos, tokens)?)
        .ok_or_else(|| malformed(pos, "expected column shape token"))?;
    pos += 1;

    let grid = rows as usize * cols as usize;
    let mut indices = Vec::with_capacity(grid);
    for _ in 0..grid {
        let id = need(pos, tokens)?;
        let idx = layout
            .image_index(id)
            .ok_or_else(|| malformed(pos, "expected image token in observation grid"))?;
        indices.push(idx);
        pos += 1;
    }
    let image_tokens = ImageTokens { rows, cols, indices };
    let image = imgtok::decode_image(&image_tokens, &toks.codebook)
        .map_err(|e| malformed(pos, format!("observation grid undecodable: {e}")))?;

    if need(pos, tokens)? != BOT {
        return Err(malformed(pos, "expected BOT after observation"));
    }
    let text_start = pos;
    pos += 1;
    loop {
        let id = need(pos, tokens)?;
        if id == EOT {
            pos += 1;
            break;
        }
        match layout.segment_of(id) {
            Some(Segment::Text) | Some(Segment::Numeric) => pos += 1,
            _ => return Err(malformed(pos, "non-text token inside description span")),
        }
    }
    let description =
        texttok::decode_text(&tokens[text_start..pos], &toks.vocab, &toks.specs.disp, layout)
            .map_err(|e| malformed(text_start, format!("description undecodable: {e}")))?;

    if need(pos, tokens)? != BOA {
        return Err(malformed(pos, "expected BOA after description"));
    }
    let action_start = pos;
    loop {
        let id = need(pos, tokens)?;
        pos += 1;
        if id == EOA {
            break;
        }
        if pos - action_start > 4 * 64 {
            return Err(malformed(pos - 1, "unterminated action span"));
        }
    }
    let action = actiontok::decode_action(&tokens[action_start..pos], &toks.specs, layout)
        .map_err(|e| match e {
            Error::MalformedFrame { position, reason } => {
                malformed(action_start + position, reason)
            }
            other => other,
        })?;

    Ok(ParsedFrame { image_tokens, image, description, action, consumed: pos })
}

/// Masked and unmasked tokenizations of one frame.
#[derive(Debug, Clone)]
pub struct TokenizedFrame {
    pub unmasked: SequenceSample,
    pub masked: SequenceSample,
}

pub fn tokenize_frame(frame: &Frame, toks: &Tokenizers, action_weight: f64) -> Result<TokenizedFrame> {
    Ok(TokenizedFrame {
        unmasked: assemble_frame(frame, toks, false, action_weight)?,
        masked: assemble_frame(frame, toks, true, action_weight)?,
    })
}

/// Sliding training windows over an episode.
///
/// Window `t` holds up to `history` masked past frames followed by the
/// unmasked target frame `t`; frames are never split. Short-history prefixes
/// are emitted, so an episode of `n` frames yields `n` windows.
pub fn window(frames: &[TokenizedFrame], history: usize) -> Vec<SequenceSample> {
    assert!(history >= 1, "history must be >= 1");
    let mut out = Vec::with_capacity(frames.len());
    for t in 0..frames.len() {
        let start = t.saturating_sub(history);
        let mut w = SequenceSample::new();
        for past in &frames[start..t] {
            w.extend(&past.masked);
        }
        w.extend(&frames[t].unmasked);
        out.push(w);
    }
    out
}

/// Write a tokenized dataset: header (vocab size, segment boundaries) then one
/// length-prefixed little-endian u32 id array per episode.
pub fn write_token_dataset(path: &Path, layout: &VocabLayout, episodes: &[Vec<u32>]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(b"DWMTOKS1");
    for v in [
        layout.vocab_size,
        layout.shape_base,
        layout.image_base,
        layout.text_base,
        layout.numeric_base,
        episodes.len() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for ep in episodes {
        buf.extend_from_slice(&(ep.len() as u32).to_le_bytes());
        for &id in ep {
            buf.extend_from_slice(&id.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Inverse of [`write_token_dataset`]; validates ids against the layout.
pub fn read_token_dataset(path: &Path, layout: &VocabLayout) -> Result<Vec<Vec<u32>>> {
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..8] != b"DWMTOKS1" {
        return Err(corrupt("bad magic"));
    }
    let mut off = 8usize;
    let mut read_u32 = |bytes: &[u8]| -> Result<u32> {
        let end = off + 4;
        if end > bytes.len() {
            return Err(corrupt("truncated"));
        }
        let v = u32::from_le_bytes(bytes[off..end].try_into().unwrap());
        off = end;
        Ok(v)
    };
    let vocab_size = read_u32(&bytes)?;
    let shape_base = read_u32(&bytes)?;
    let image_base = read_u32(&bytes)?;
    let text_base = read_u32(&bytes)?;
    let numeric_base = read_u32(&bytes)?;
    if vocab_size != layout.vocab_size
        || shape_base != layout.shape_base
        || image_base != layout.image_base
        || text_base != layout.text_base
        || numeric_base != layout.numeric_base
    {
        return Err(corrupt("segment boundaries do not match the active layout"));
    }
    let episode_count = read_u32(&bytes)? as usize;
    let mut episodes = Vec::with_capacity(episode_count);
    for _ in 0..episode_count {
        let len = read_u32(&bytes)? as usize;
        let mut ep = Vec::with_capacity(len);
        for _ in 0..len {
            let id = read_u32(&bytes)?;
            if id >= layout.vocab_size {
                return Err(corrupt("token id outside vocabulary"));
            }
            ep.push(id);
        }
        episodes.push(ep);
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_segments_are_total_and_disjoint() {
        let layout = VocabLayout::new(512, 256, 4000).unwrap();
        let mut counts = std::collections::HashMap::new();
        for id in 0..layout.vocab_size {
            let seg = layout.segment_of(id).expect("every id in [0,V) has a segment");
            *counts.entry(seg).or_insert(0u32) += 1;
        }
        assert_eq!(counts[&Segment::Special], 8);
        assert_eq!(counts[&Segment::Shape], MAX_SHAPE);
        assert_eq!(counts[&Segment::Image], 512);
        assert_eq!(counts[&Segment::Text], 256);
        assert_eq!(counts[&Segment::Numeric], 4000);
        assert_eq!(layout.segment_of(layout.vocab_size), None);
    }

    #[test]
    fn shape_tokens_round_trip() {
        let layout = VocabLayout::new(16, 16, 4000).unwrap();
        for dim in 1..=MAX_SHAPE {
            let id = layout.shape_token(dim).unwrap();
            assert_eq!(layout.shape_value(id), Some(dim));
        }
        assert!(layout.shape_token(0).is_err());
        assert!(layout.shape_token(MAX_SHAPE + 1).is_err());
    }
}
