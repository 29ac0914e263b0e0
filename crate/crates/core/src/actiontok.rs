//! Action framing: motions as numeric-token triples between anchor tokens,
//! plus the masking of every motion after the first.
//!
//! An encoded action is `[BOA, dx dy yaw, ..., EOA]` with `3p + 2` tokens.
//! Masking keeps the first motion and collapses each later triple into one
//! MMASK token, so only the executed motion stays visible in later context.

use crate::error::{Error, Result};
use crate::numtok::{self, NumericTokenizerSpec};
use crate::seq::{Segment, VocabLayout, BOA, EOA, MMASK};

/// Ego movement between two keyframes: displacements in meters, yaw in radians,
/// all in the ego frame at the start of the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub dx: f64,
    pub dy: f64,
    pub yaw: f64,
}

impl Motion {
    pub const ZERO: Motion = Motion { dx: 0.0, dy: 0.0, yaw: 0.0 };

    pub fn new(dx: f64, dy: f64, yaw: f64) -> Self {
        Self { dx, dy, yaw }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.yaw.is_finite()
    }
}

/// A planned trajectory of `p >= 1` consecutive motions.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub motions: Vec<Motion>,
}

impl Action {
    pub fn new(motions: Vec<Motion>) -> Result<Self> {
        if motions.is_empty() {
            return Err(Error::Config("an action needs at least one motion".into()));
        }
        if let Some(m) = motions.iter().find(|m| !m.is_finite()) {
            return Err(Error::Config(format!("non-finite motion {m:?}")));
        }
        Ok(Self { motions })
    }

    pub fn horizon(&self) -> usize {
        self.motions.len()
    }
}

/// The visible remainder of a masked action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedAction {
    pub first: Motion,
    pub masked_count: usize,
}

/// Tokenizer grids for the two scalar families inside an action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSpecs {
    /// Displacements (dx, dy) and any scalar appearing in description text.
    pub disp: NumericTokenizerSpec,
    /// Yaw angles.
    pub yaw: NumericTokenizerSpec,
}

impl Default for ActionSpecs {
    fn default() -> Self {
        Self { disp: NumericTokenizerSpec::displacement(), yaw: NumericTokenizerSpec::yaw() }
    }
}

/// `[BOA, (dx dy yaw) x p, EOA]` as global vocabulary ids.
pub fn encode_action(a: &Action, specs: &ActionSpecs, layout: &VocabLayout) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(3 * a.motions.len() + 2);
    out.push(BOA);
    for m in &a.motions {
        out.push(layout.numeric_id(numtok::encode_float(m.dx, &specs.disp)?));
        out.push(layout.numeric_id(numtok::encode_float(m.dy, &specs.disp)?));
        out.push(layout.numeric_id(numtok::encode_float(m.yaw, &specs.yaw)?));
    }
    out.push(EOA);
    Ok(out)
}

fn malformed(position: usize, reason: impl Into<String>) -> Error {
    Error::MalformedFrame { position, reason: reason.into() }
}

/// Mask an encoded action span: the first motion's three tokens are kept
/// bit-identical, every later motion (or already-masked slot) becomes one
/// MMASK. Idempotent.
pub fn mask_action_tokens(span: &[u32], layout: &VocabLayout) -> Result<Vec<u32>> {
    let parsed = parse_span(span, layout)?;
    let mut out = Vec::with_capacity(3 + parsed.slots.len().saturating_sub(1) + 2);
    out.push(BOA);
    match parsed.slots.first() {
        Some(Slot::Motion(ids)) => out.extend_from_slice(ids),
        Some(Slot::Masked) => out.push(MMASK),
        None => unreachable!("parse_span rejects empty actions"),
    }
    for _ in 1..parsed.slots.len() {
        out.push(MMASK);
    }
    out.push(EOA);
    Ok(out)
}

/// Convenience form of [`mask_action_tokens`] starting from a structured action.
pub fn mask_action(a: &Action, specs: &ActionSpecs, layout: &VocabLayout) -> Result<Vec<u32>> {
    mask_action_tokens(&encode_action(a, specs, layout)?, layout)
}

/// Decoded action where masked slots are unspecified.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAction {
    pub motions: Vec<Option<Motion>>,
}

impl ParsedAction {
    pub fn horizon(&self) -> usize {
        self.motions.len()
    }

    /// The fully specified action; errors if any slot is masked.
    pub fn to_action(&self) -> Result<Action> {
        let motions: Option<Vec<Motion>> = self.motions.iter().copied().collect();
        match motions {
            Some(m) => Action::new(m),
            None => Err(Error::MalformedFrame {
                position: 0,
                reason: "action contains masked motions".into(),
            }),
        }
    }

    /// View as first motion + mask count when the span has the masked shape.
    pub fn as_masked(&self) -> Option<MaskedAction> {
        let first = (*self.motions.first()?)?;
        if self.motions.iter().skip(1).all(|m| m.is_none()) {
            Some(MaskedAction { first, masked_count: self.motions.len() - 1 })
        } else {
            None
        }
    }
}

enum Slot {
    Motion([u32; 3]),
    Masked,
}

struct SpanShape {
    slots: Vec<Slot>,
}

fn parse_span(span: &[u32], layout: &VocabLayout) -> Result<SpanShape> {
    if span.first() != Some(&BOA) {
        return Err(malformed(0, "action span must start with BOA"));
    }
    if span.last() != Some(&EOA) {
        return Err(malformed(span.len().saturating_sub(1), "action span must end with EOA"));
    }
    let body = &span[1..span.len() - 1];
    if body.is_empty() {
        return Err(malformed(1, "action span holds no motions"));
    }
    let mut slots = Vec::new();
    let mut i = 0usize;
    while i < body.len() {
        if body[i] == MMASK {
            slots.push(Slot::Masked);
            i += 1;
            continue;
        }
        if i + 3 > body.len() {
            return Err(malformed(1 + i, "truncated motion triple"));
        }
        for k in 0..3 {
            if layout.segment_of(body[i + k]) != Some(Segment::Numeric) {
                return Err(malformed(1 + i + k, "expected numeric token inside motion"));
            }
        }
        slots.push(Slot::Motion([body[i], body[i + 1], body[i + 2]]));
        i += 3;
    }
    Ok(SpanShape { slots })
}

/// Parse an encoded action span back into motions. MMASK slots decode to
/// `None`; any framing violation reports the offending index within the span.
pub fn decode_action(span: &[u32], specs: &ActionSpecs, layout: &VocabLayout) -> Result<ParsedAction> {
    let shape = parse_span(span, layout)?;
    let mut motions = Vec::with_capacity(shape.slots.len());
    for slot in &shape.slots {
        match slot {
            Slot::Masked => motions.push(None),
            Slot::Motion(ids) => {
                let dx = numtok::decode_float(layout.numeric_token(ids[0]).unwrap(), &specs.disp);
                let dy = numtok::decode_float(layout.numeric_token(ids[1]).unwrap(), &specs.disp);
                let yaw = numtok::decode_float(layout.numeric_token(ids[2]).unwrap(), &specs.yaw);
                motions.push(Some(Motion { dx, dy, yaw }));
            }
        }
    }
    Ok(ParsedAction { motions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn layout() -> VocabLayout {
        VocabLayout::new(512, 256, 4000).unwrap()
    }

    #[test]
    fn zero_motion_encodes_to_bias_triple() {
        let l = layout();
        let specs = ActionSpecs::default();
        let a = Action::new(vec![Motion::ZERO]).unwrap();
        let ids = encode_action(&a, &specs, &l).unwrap();
        let n = |local: u32| l.numeric_base + local;
        assert_eq!(ids, vec![BOA, n(2000), n(2000), n(2000), EOA]);
    }

    #[test]
    fn encoded_length_is_3p_plus_2() {
        let l = layout();
        let specs = ActionSpecs::default();
        let a = Action::new(vec![Motion::ZERO; 2]).unwrap();
        assert_eq!(encode_action(&a, &specs, &l).unwrap().len(), 8);
    }

    #[test]
    fn mask_keeps_first_motion_bitwise() {
        let l = layout();
        let specs = ActionSpecs::default();
        let a = Action::new(vec![
            Motion::new(1.0, 0.0, 0.0),
            Motion::new(2.0, 0.0, 0.0),
            Motion::new(3.0, 0.0, 0.0),
        ])
        .unwrap();
        let full = encode_action(&a, &specs, &l).unwrap();
        let masked = mask_action_tokens(&full, &l).unwrap();
        assert_eq!(masked[0], BOA);
        assert_eq!(&masked[1..4], &full[1..4], "first motion tokens must be preserved");
        assert_eq!(&masked[4..6], &[MMASK, MMASK]);
        assert_eq!(*masked.last().unwrap(), EOA);
        assert_eq!(masked.len(), 3 + 2 + 2);
    }

    #[test]
    fn mask_p1_is_identity() {
        let l = layout();
        let specs = ActionSpecs::default();
        let a = Action::new(vec![Motion::new(0.5, -0.2, 0.04)]).unwrap();
        let full = encode_action(&a, &specs, &l).unwrap();
        assert_eq!(mask_action_tokens(&full, &l).unwrap(), full);
    }

    #[test]
    fn masked_length_p5() {
        let l = layout();
        let specs = ActionSpecs::default();
        let a = Action::new(vec![Motion::ZERO; 5]).unwrap();
        let masked = mask_action(&a, &specs, &l).unwrap();
        assert_eq!(masked.len(), 3 + 4 + 2);
    }

    #[test]
    fn mask_is_idempotent() {
        let l = layout();
        let specs = ActionSpecs::default();
        for p in [1usize, 3, 6] {
            let a = Action::new(vec![Motion::new(0.1, 0.2, -0.02); p]).unwrap();
            let once = mask_action(&a, &specs, &l).unwrap();
            let twice = mask_action_tokens(&once, &l).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn decode_round_trip_random_actions() {
        let l = layout();
        let specs = ActionSpecs::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = rng.gen_range(1..=6);
            let motions: Vec<Motion> = (0..p)
                .map(|_| {
                    Motion::new(
                        rng.gen_range(-39.9..39.9),
                        rng.gen_range(-39.9..39.9),
                        rng.gen_range(-3.0..3.0),
                    )
                })
                .collect();
            let a = Action::new(motions).unwrap();
            let ids = encode_action(&a, &specs, &l).unwrap();
            let back = decode_action(&ids, &specs, &l).unwrap().to_action().unwrap();
            for (m, b) in a.motions.iter().zip(&back.motions) {
                assert!((m.dx - b.dx).abs() <= specs.disp.resolution / 2.0 + 1e-12);
                assert!((m.dy - b.dy).abs() <= specs.disp.resolution / 2.0 + 1e-12);
                assert!((m.yaw - b.yaw).abs() <= specs.yaw.resolution / 2.0 + 1e-12);
            }
            // re-encoding a clean decode reproduces the span exactly
            assert_eq!(encode_action(&back, &specs, &l).unwrap(), ids);
        }
    }

    #[test]
    fn decode_masked_slots_are_unspecified() {
        let l = layout();
        let specs = ActionSpecs::default();
        let a = Action::new(vec![Motion::new(1.0, 0.0, 0.0); 4]).unwrap();
        let masked = mask_action(&a, &specs, &l).unwrap();
        let parsed = decode_action(&masked, &specs, &l).unwrap();
        assert_eq!(parsed.horizon(), 4);
        assert!(parsed.motions[0].is_some());
        assert!(parsed.motions[1..].iter().all(|m| m.is_none()));
        let mv = parsed.as_masked().unwrap();
        assert_eq!(mv.masked_count, 3);
        assert!(parsed.to_action().is_err());
    }

    #[test]
    fn malformed_spans_rejected() {
        let l = layout();
        let specs = ActionSpecs::default();
        assert!(matches!(
            decode_action(&[BOA, EOA], &specs, &l),
            Err(Error::MalformedFrame { .. })
        ));
        let n = l.numeric_base + 2000;
        assert!(matches!(
            decode_action(&[BOA, n, n, n], &specs, &l),
            Err(Error::MalformedFrame { .. })
        ));
        assert!(matches!(
            decode_action(&[n, n, n, EOA], &specs, &l),
            Err(Error::MalformedFrame { .. })
        ));
        // wrong arity
        assert!(matches!(
            decode_action(&[BOA, n, n, EOA], &specs, &l),
            Err(Error::MalformedFrame { .. })
        ));
    }
}
