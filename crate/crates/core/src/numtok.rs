//! Position-aware tokenization of scalar values.
//!
//! Scalars are quantized onto a uniform grid (`round(x / r) + b`) and embedded
//! with fixed sinusoidal vectors so that nearby values stay nearby in the
//! embedding space. The embeddings are never trained; ids unseen during
//! training still land in a meaningful region.

use crate::error::{Error, Result};

/// Quantization grid plus embedding constants for one scalar family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericTokenizerSpec {
    /// Meters (or radians) per quantization step.
    pub resolution: f64,
    /// Token offset added after rounding; value 0.0 maps to this id.
    pub bias: u32,
    /// Codebook size; valid ids are `[0, num_tokens)`.
    pub num_tokens: u32,
    /// Embedding frequency base. Dimensionless, > 1.
    pub scale: f64,
    /// Use the odd-component exponent `(2i+1)/d` for cosines. When false the
    /// cosine shares its sine partner's exponent `2i/d` (the classic pairing).
    pub paper_cos_exponent: bool,
}

impl NumericTokenizerSpec {
    pub fn new(resolution: f64, bias: u32, num_tokens: u32, scale: f64) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::Config(format!("resolution must be > 0, got {resolution}")));
        }
        if num_tokens < 2 {
            return Err(Error::Config(format!("num_tokens must be >= 2, got {num_tokens}")));
        }
        if bias >= num_tokens {
            return Err(Error::Config(format!("bias {bias} must be < num_tokens {num_tokens}")));
        }
        if !(scale > 1.0) || !scale.is_finite() {
            return Err(Error::Config(format!("scale must be > 1, got {scale}")));
        }
        Ok(Self { resolution, bias, num_tokens, scale, paper_cos_exponent: true })
    }

    /// Displacement grid: 0.02 m steps, symmetric range of +-40 m, scale 10000.
    pub fn displacement() -> Self {
        Self::new(0.02, 2000, 4000, 10_000.0).expect("default spec is valid")
    }

    /// Yaw grid: 0.02 rad steps, same codebook, embedding scale 1000.
    pub fn yaw() -> Self {
        Self::new(0.02, 2000, 4000, 1_000.0).expect("default spec is valid")
    }

    /// Smallest representable value, `(0 - bias) * resolution`.
    pub fn min_value(&self) -> f64 {
        -(self.bias as f64) * self.resolution
    }

    /// Largest representable value, `(num_tokens - 1 - bias) * resolution`.
    pub fn max_value(&self) -> f64 {
        (self.num_tokens as f64 - 1.0 - self.bias as f64) * self.resolution
    }
}

/// Id into a [`NumericTokenizerSpec`] codebook. Local to the spec; the global
/// vocabulary offsets it into the numeric segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NumericToken {
    pub id: u32,
}

/// Quantize a scalar: `round(x / resolution) + bias`, rounding half away from
/// zero. Errors when the id falls outside the codebook.
pub fn encode_float(x: f64, spec: &NumericTokenizerSpec) -> Result<NumericToken> {
    // f64::round is round-half-away-from-zero.
    let raw = (x / spec.resolution).round();
    if !raw.is_finite() {
        return Err(Error::OutOfRange { value: x, id: i64::MAX, num_tokens: spec.num_tokens });
    }
    let id = raw as i64 + spec.bias as i64;
    if id < 0 || id >= spec.num_tokens as i64 {
        return Err(Error::OutOfRange { value: x, id, num_tokens: spec.num_tokens });
    }
    Ok(NumericToken { id: id as u32 })
}

/// Quantize with saturation: out-of-range values clamp to the nearest codebook
/// edge and report `clamped = true`. Used when decoding model output must not
/// abort a rollout.
pub fn encode_float_clamped(x: f64, spec: &NumericTokenizerSpec) -> (NumericToken, bool) {
    match encode_float(x, spec) {
        Ok(t) => (t, false),
        Err(_) => {
            let id = if x < 0.0 { 0 } else { spec.num_tokens - 1 };
            (NumericToken { id }, true)
        }
    }
}

/// Inverse of the quantizer: `(id - bias) * resolution`.
pub fn decode_float(t: NumericToken, spec: &NumericTokenizerSpec) -> f64 {
    (t.id as i64 - spec.bias as i64) as f64 * spec.resolution
}

/// Fixed sinusoidal embedding of a numeric token id.
///
/// Component `2i` is `sin(id / scale^(2i/dim))`; component `2i+1` is
/// `cos(id / scale^((2i+1)/dim))` (or `cos(id / scale^(2i/dim))` when
/// `paper_cos_exponent` is off). Deterministic and never updated by training.
pub fn embed_token(t: NumericToken, spec: &NumericTokenizerSpec, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even and positive, got {dim}");
    assert!(t.id < spec.num_tokens, "token {} outside codebook {}", t.id, spec.num_tokens);
    let id = t.id as f64;
    let d = dim as f64;
    let mut out = vec![0.0; dim];
    for j in 0..dim {
        let exponent = if j % 2 == 0 || spec.paper_cos_exponent {
            j as f64 / d
        } else {
            (j - 1) as f64 / d
        };
        let arg = id / spec.scale.powf(exponent);
        out[j] = if j % 2 == 0 { arg.sin() } else { arg.cos() };
    }
    out
}
