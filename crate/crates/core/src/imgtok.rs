//! Patch-codebook image tokenizer.
//!
//! Images are cut into P x P RGB patches and each patch is replaced by the
//! index of its nearest codebook entry. The codebook is fit once with seeded
//! k-means and frozen; downstream the sequence model only ever sees the
//! discrete indices.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self { width, height, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6) bytes.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptFile {
            path: "<ppm>".into(),
            reason: reason.to_string(),
        };
        let mut off = 0usize;
        let mut field = |bytes: &[u8]| -> Result<String> {
            while off < bytes.len() && bytes[off].is_ascii_whitespace() {
                off += 1;
            }
            if off < bytes.len() && bytes[off] == b'#' {
                while off < bytes.len() && bytes[off] != b'\n' {
                    off += 1;
                }
                while off < bytes.len() && bytes[off].is_ascii_whitespace() {
                    off += 1;
                }
            }
            let start = off;
            while off < bytes.len() && !bytes[off].is_ascii_whitespace() {
                off += 1;
            }
            Ok(String::from_utf8_lossy(&bytes[start..off]).into_owned())
        };
        if field(bytes)? != "P6" {
            return Err(corrupt("not a P6 ppm"));
        }
        let width: usize = field(bytes)?.parse().map_err(|_| corrupt("bad width"))?;
        let height: usize = field(bytes)?.parse().map_err(|_| corrupt("bad height"))?;
        let maxval: usize = field(bytes)?.parse().map_err(|_| corrupt("bad maxval"))?;
        if maxval != 255 {
            return Err(corrupt("only maxval 255 supported"));
        }
        off += 1; // single whitespace after maxval
        let need = width * height * 3;
        if bytes.len() < off + need {
            return Err(corrupt("truncated pixel data"));
        }
        Ok(Self { width, height, pixels: bytes[off..off + need].to_vec() })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_ppm(&bytes).map_err(|e| match e {
            Error::CorruptFile { reason, .. } => Error::CorruptFile {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}

/// Frozen k-means codebook over P x P x 3 patches.
///
/// Entries are stored at f32 precision so a persisted codebook reproduces the
/// in-memory quantization exactly after reload.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCodebook {
    pub patch: usize,
    pub entries: Vec<Vec<f64>>,
}

impl PatchCodebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Header (K, P, channels) then raw little-endian f32 entries.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.patch as u32).to_le_bytes());
        buf.extend_from_slice(&3u32.to_le_bytes());
        for entry in &self.entries {
            for &v in entry {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptFile {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 12 {
            return Err(corrupt("truncated header"));
        }
        let k = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let patch = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let channels = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if channels != 3 {
            return Err(corrupt("only 3-channel codebooks supported"));
        }
        let dim = patch * patch * 3;
        if bytes.len() != 12 + k * dim * 4 {
            return Err(corrupt("payload size does not match header"));
        }
        let mut entries = Vec::with_capacity(k);
        let mut off = 12usize;
        for _ in 0..k {
            let mut e = Vec::with_capacity(dim);
            for _ in 0..dim {
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(corrupt("non-finite codebook entry"));
                }
                e.push(v as f64);
                off += 4;
            }
            entries.push(e);
        }
        Ok(Self { patch, entries })
    }
}

/// Observation token grid: leading shape (rows, cols) plus one codebook index
/// per patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTokens {
    pub rows: u32,
    pub cols: u32,
    pub indices: Vec<u32>,
}

impl ImageTokens {
    /// Emitted token count: two shape tokens plus the grid.
    pub fn token_len(&self) -> usize {
        2 + self.indices.len()
    }
}

fn patches_of(img: &RasterImage, patch: usize) -> Result<Vec<Vec<f64>>> {
    if patch == 0 || img.width % patch != 0 || img.height % patch != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} image not divisible by patch {}",
            img.width, img.height, patch
        )));
    }
    let rows = img.height / patch;
    let cols = img.width / patch;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut v = Vec::with_capacity(patch * patch * 3);
            for py in 0..patch {
                for px in 0..patch {
                    let rgb = img.get(c * patch + px, r * patch + py);
                    v.extend(rgb.iter().map(|&b| b as f64));
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest entry, ties to the lowest index.
fn nearest(entry: &[f64], codebook: &[Vec<f64>]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in codebook.iter().enumerate() {
        let d = sq_dist(entry, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Seeded k-means over all patches of the sample set, k-means++ init, a fixed
/// iteration count, ties to the lowest index, empty clusters keep their
/// previous centroid. Returns the codebook and the mean quantization error
/// after each iteration.
pub fn fit_codebook_traced(
    images: &[RasterImage],
    k: usize,
    patch: usize,
    iters: usize,
    seed: u64,
) -> Result<(PatchCodebook, Vec<f64>)> {
    if images.is_empty() {
        return Err(Error::Config("codebook sample set is empty".into()));
    }
    if k == 0 {
        return Err(Error::Config("codebook size must be >= 1".into()));
    }
    let mut patches = Vec::new();
    for img in images {
        patches.extend(patches_of(img, patch)?);
    }
    let distinct: BTreeSet<Vec<u64>> =
        patches.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    if distinct.len() < k {
        return Err(Error::InsufficientPatches { distinct: distinct.len(), requested: k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++: first centroid uniform, then proportional to squared distance.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(patches[rng.gen_range(0..patches.len())].clone());
    let mut min_d: Vec<f64> = patches.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let next = if total <= 0.0 {
            // all mass collapsed; take the first patch not yet at distance 0
            min_d.iter().position(|&d| d > 0.0).unwrap_or(0)
        } else {
            let target = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = patches.len() - 1;
            for (i, &d) in min_d.iter().enumerate() {
                acc += d;
                if target < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = patches[next].clone();
        for (i, p) in patches.iter().enumerate() {
            let d = sq_dist(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
        centroids.push(c);
    }

    let dim = patch * patch * 3;
    let mut errors = Vec::with_capacity(iters);
    for _ in 0..iters {
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        let mut err = 0.0f64;
        for p in &patches {
            let j = nearest(p, &centroids);
            err += sq_dist(p, &centroids[j]);
            counts[j] += 1;
            for (s, &v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        errors.push(err / patches.len() as f64);
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
    }

    // Round to f32 so save/load is lossless.
    for c in &mut centroids {
        for v in c.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
    Ok((PatchCodebook { patch, entries: centroids }, errors))
}

pub fn fit_codebook(
    images: &[RasterImage],
    k: usize,
    patch: usize,
    iters: usize,
    seed: u64,
) -> Result<PatchCodebook> {
    fit_codebook_traced(images, k, patch, iters, seed).map(|(cb, _)| cb)
}

/// Quantize an image against a frozen codebook.
pub fn encode_image(img: &RasterImage, codebook: &PatchCodebook) -> Result<ImageTokens> {
    let patches = patches_of(img, codebook.patch)?;
    let rows = (img.height / codebook.patch) as u32;
    let cols = (img.width / codebook.patch) as u32;
    let indices = patches.iter().map(|p| nearest(p, &codebook.entries) as u32).collect();
    Ok(ImageTokens { rows, cols, indices })
}

/// Paste codebook entries back into a raster, clamping to 0..=255.
pub fn decode_image(tokens: &ImageTokens, codebook: &PatchCodebook) -> Result<RasterImage> {
    let rows = tokens.rows as usize;
    let cols = tokens.cols as usize;
    if tokens.indices.len() != rows * cols {
        return Err(Error::MalformedFrame {
            position: 0,
            reason: format!(
                "shape tokens declare {}x{} but grid holds {} indices",
                rows,
                cols,
                tokens.indices.len()
            ),
        });
    }
    let p = codebook.patch;
    let mut img = RasterImage::new(cols * p, rows * p);
    for r in 0..rows {
        for c in 0..cols {
            let idx = tokens.indices[r * cols + c] as usize;
            let entry = codebook.entries.get(idx).ok_or_else(|| Error::MalformedFrame {
                position: 2 + r * cols + c,
                reason: format!("codebook index {} out of {}", idx, codebook.len()),
            })?;
            for py in 0..p {
                for px in 0..p {
                    let o = (py * p + px) * 3;
                    let rgb = [
                        entry[o].round().clamp(0.0, 255.0) as u8,
                        entry[o + 1].round().clamp(0.0, 255.0) as u8,
                        entry[o + 2].round().clamp(0.0, 255.0) as u8,
                    ];
                    img.set(c * p + px, r * p + py, rgb);
                }
            }
        }
    }
    Ok(img)
}
