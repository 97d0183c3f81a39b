//! Procedural corpus, dataset variants, deterministic splits, right-angle
//! augmentation, and PNG corpus I/O.
//!
//! The corpus has three texture classes whose identity survives flips and
//! quarter-turn rotations: `rings` (radial waves), `blobs` (scattered
//! Gaussian bumps), and `stripes` (oriented plane waves). Class-conditional
//! mean intensities are kept close enough that the global mean alone is not
//! a robust shortcut feature, while the textures keep classes easily
//! separable for a small convolutional net.
//!
//! Pixels live in [0,1] and are snapped to the 8-bit grid (`k/255`) at
//! generation time, so an in-memory corpus and one round-tripped through PNG
//! files are bit-identical.

use crate::error::{Error, Result};
use crate::seed::{self, domain};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub const CLASS_NAMES: [&str; 3] = ["rings", "blobs", "stripes"];
pub const NUM_CLASSES: usize = 3;
pub const CHANNELS: usize = 3;
/// Generation resolution; the `full` tier.
pub const FULL_EDGE: usize = 64;
/// The `shrunk` tier, area-averaged down from the full corpus.
pub const SHRUNK_EDGE: usize = 20;
pub const DEFAULT_N_PER_CLASS: usize = 60;
/// train / val / test / attack fractions.
pub const SPLIT_FRACTIONS: [f64; 4] = [0.6, 0.1, 0.2, 0.1];

/// Resolution tier plus whether training batches are augmented. Test and
/// attack splits are never augmented regardless of the flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    FullAug,
    ShrunkAug,
    ShrunkNoaug,
}

impl VariantKind {
    pub fn all() -> [VariantKind; 3] {
        [
            VariantKind::FullAug,
            VariantKind::ShrunkAug,
            VariantKind::ShrunkNoaug,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::FullAug => "full-aug",
            VariantKind::ShrunkAug => "shrunk-aug",
            VariantKind::ShrunkNoaug => "shrunk-noaug",
        }
    }

    pub fn parse(s: &str) -> Result<VariantKind> {
        match s {
            "full-aug" => Ok(VariantKind::FullAug),
            "shrunk-aug" => Ok(VariantKind::ShrunkAug),
            "shrunk-noaug" => Ok(VariantKind::ShrunkNoaug),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected full-aug, shrunk-aug, or shrunk-noaug)"
            ))),
        }
    }

    pub fn edge(&self) -> usize {
        match self {
            VariantKind::FullAug => FULL_EDGE,
            VariantKind::ShrunkAug | VariantKind::ShrunkNoaug => SHRUNK_EDGE,
        }
    }

    pub fn augmented(&self) -> bool {
        !matches!(self, VariantKind::ShrunkNoaug)
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Base-resolution labeled images, class-major order
/// (`labels[class * n_per_class + i] == class`).
#[derive(Debug, Clone)]
pub struct Corpus {
    pub edge: usize,
    /// Planar RGB, `3 * edge * edge` values in [0,1] on the 8-bit grid.
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Snap to the 8-bit grid after clamping; PNG round trips become exact.
fn snap(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Base intensity around which each class's texture oscillates. The gaps are
/// deliberately small relative to the attack budgets in use.
const CLASS_BASE: [f64; 3] = [0.46, 0.42, 0.42];

fn render_image(class: usize, edge: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let e = edge as f64;
    let mut pattern = vec![0.0; edge * edge];
    // Draw order is fixed: pattern parameters, channel gains, then noise.
    let base = CLASS_BASE[class] + rng.random_range(-0.02..0.02);
    match class {
        // Rings: radial wave around a jittered center.
        0 => {
            let cx = e / 2.0 + rng.random_range(-e / 8.0..e / 8.0);
            let cy = e / 2.0 + rng.random_range(-e / 8.0..e / 8.0);
            let freq = rng.random_range(2.5..4.5);
            let amp = rng.random_range(0.15..0.25);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for y in 0..edge {
                for x in 0..edge {
                    let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    pattern[y * edge + x] =
                        amp * (std::f64::consts::TAU * freq * r / e + phase).sin();
                }
            }
        }
        // Blobs: several Gaussian bumps on a flat background.
        1 => {
            let count = rng.random_range(5..=8);
            for _ in 0..count {
                let bx = rng.random_range(0.0..e);
                let by = rng.random_range(0.0..e);
                let sigma = rng.random_range(e / 16.0..e / 10.0);
                let amp = rng.random_range(0.25..0.40);
                for y in 0..edge {
                    for x in 0..edge {
                        let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                        pattern[y * edge + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
        // Stripes: plane wave along a random orientation, higher frequency
        // band than the rings.
        2 => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (theta.cos(), theta.sin());
            let freq = rng.random_range(5.0..8.0);
            let amp = rng.random_range(0.15..0.25);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for y in 0..edge {
                for x in 0..edge {
                    let t = (x as f64 * dx + y as f64 * dy) / e;
                    pattern[y * edge + x] =
                        amp * (std::f64::consts::TAU * freq * t + phase).sin();
                }
            }
        }
        _ => unreachable!("corpus has exactly {NUM_CLASSES} classes"),
    }
    let gains: Vec<f64> = (0..CHANNELS).map(|_| rng.random_range(0.9..1.1)).collect();
    let mut pixels = Vec::with_capacity(CHANNELS * edge * edge);
    for gain in gains {
        for &p in &pattern {
            let noise = rng.random_range(-0.04..0.04);
            pixels.push(snap(base + gain * p + noise));
        }
    }
    pixels
}

/// Deterministic in `seed`; each image draws from its own derived stream, so
/// corpus size changes never reshuffle existing images.
pub fn generate_corpus(n_per_class: usize, edge: usize, seed: u64) -> Corpus {
    assert!(n_per_class >= 1, "n_per_class must be at least 1");
    assert!(edge >= 8, "corpus edge must be at least 8 pixels");
    let mut images = Vec::with_capacity(NUM_CLASSES * n_per_class);
    let mut labels = Vec::with_capacity(NUM_CLASSES * n_per_class);
    for class in 0..NUM_CLASSES {
        for idx in 0..n_per_class {
            let mut rng = seed::rng(seed, &[domain::CORPUS, class as u64, idx as u64]);
            images.push(render_image(class, edge, &mut rng));
            labels.push(class);
        }
    }
    Corpus { edge, images, labels }
}

/// Area-average downsampling (box overlap weighting). Only shrinking is
/// supported; output values are clamped to the input's [min, max] so
/// floating-point rounding can never widen the range.
pub fn resize_area(
    pixels: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Result<Vec<f64>> {
    if pixels.len() != channels * h * w {
        return Err(Error::Data(format!(
            "resize input length {} does not match {channels}x{h}x{w}",
            pixels.len()
        )));
    }
    if oh == 0 || ow == 0 {
        return Err(Error::Data("resize target must be at least 1x1".into()));
    }
    if oh > h || ow > w {
        return Err(Error::Data(format!(
            "resize only shrinks: {h}x{w} -> {oh}x{ow} requested"
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in pixels {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &pixels[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            let y0 = oy as f64 * sy;
            let y1 = (oy as f64 + 1.0) * sy;
            for ox in 0..ow {
                let x0 = ox as f64 * sx;
                let x1 = (ox as f64 + 1.0) * sx;
                let mut acc = 0.0;
                let mut area = 0.0;
                let iy_end = (y1.ceil() as usize).min(h);
                let ix_end = (x1.ceil() as usize).min(w);
                for iy in y0.floor() as usize..iy_end {
                    let wy = (y1.min(iy as f64 + 1.0) - y0.max(iy as f64)).max(0.0);
                    if wy == 0.0 {
                        continue;
                    }
                    for ix in x0.floor() as usize..ix_end {
                        let wx = (x1.min(ix as f64 + 1.0) - x0.max(ix as f64)).max(0.0);
                        if wx == 0.0 {
                            continue;
                        }
                        acc += wy * wx * plane[iy * w + ix];
                        area += wy * wx;
                    }
                }
                out.push((acc / area).clamp(lo, hi));
            }
        }
    }
    Ok(out)
}

/// A right-angle spatial symmetry: quarter-turn rotation followed by
/// optional horizontal and vertical flips. Pixels are permuted only, so the
/// value multiset (and therefore the label) is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    /// Clockwise quarter turns, 0..=3, applied first.
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        quarter_turns: 0,
        hflip: false,
        vflip: false,
    };

    /// Flips are independent coin flips, the turn count is uniform on
    /// {0,1,2,3}. Draw order: hflip, vflip, turns.
    pub fn sample(rng: &mut ChaCha8Rng) -> Augmentation {
        Augmentation {
            hflip: rng.random::<f64>() < 0.5,
            vflip: rng.random::<f64>() < 0.5,
            quarter_turns: rng.random_range(0..4u8),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Augmentation::IDENTITY
    }

    /// Apply to a planar multi-channel square image.
    pub fn apply(&self, pixels: &[f64], channels: usize, h: usize, w: usize) -> Result<Vec<f64>> {
        if h != w {
            return Err(Error::Data(format!(
                "augmentation requires square images, got {h}x{w}"
            )));
        }
        if pixels.len() != channels * h * w {
            return Err(Error::Data(format!(
                "augmentation input length {} does not match {channels}x{h}x{w}",
                pixels.len()
            )));
        }
        let n = h;
        let mut cur = pixels.to_vec();
        for _ in 0..(self.quarter_turns % 4) {
            let mut next = vec![0.0; cur.len()];
            for c in 0..channels {
                let (src, dst) = (&cur[c * n * n..], &mut next[c * n * n..(c + 1) * n * n]);
                // Clockwise: output (y, x) reads input (n-1-x, y).
                for y in 0..n {
                    for x in 0..n {
                        dst[y * n + x] = src[(n - 1 - x) * n + y];
                    }
                }
            }
            cur = next;
        }
        if self.hflip {
            let mut next = vec![0.0; cur.len()];
            for c in 0..channels {
                let (src, dst) = (&cur[c * n * n..], &mut next[c * n * n..(c + 1) * n * n]);
                for y in 0..n {
                    for x in 0..n {
                        dst[y * n + x] = src[y * n + (n - 1 - x)];
                    }
                }
            }
            cur = next;
        }
        if self.vflip {
            let mut next = vec![0.0; cur.len()];
            for c in 0..channels {
                let (src, dst) = (&cur[c * n * n..], &mut next[c * n * n..(c + 1) * n * n]);
                for y in 0..n {
                    for x in 0..n {
                        dst[y * n + x] = src[(n - 1 - y) * n + x];
                    }
                }
            }
            cur = next;
        }
        Ok(cur)
    }
}

/// The four disjoint index sets of one split of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub attack: Vec<usize>,
}

impl SplitIndices {
    pub fn names() -> [&'static str; 4] {
        ["train", "val", "test", "attack"]
    }

    pub fn get(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            "attack" => Some(&self.attack),
            _ => None,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len() + self.attack.len()
    }
}

/// Stratified split: within each class, indices are shuffled by a
/// class-specific derived stream and cut at cumulative fraction boundaries
/// (rounded), keeping every per-class split size within one sample of its
/// exact fraction. Errors if any class ends up with an empty slice.
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    fractions: [f64; 4],
    seed: u64,
) -> Result<SplitIndices> {
    if labels.is_empty() {
        return Err(Error::Data("cannot split an empty corpus".into()));
    }
    if fractions.iter().any(|&f| f <= 0.0) {
        return Err(Error::Data("split fractions must all be positive".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("split fractions sum to {sum}, not 1")));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::Data(format!(
                "label {l} at index {i} exceeds class count {num_classes}"
            )));
        }
    }
    let mut parts: [Vec<usize>; 4] = Default::default();
    for class in 0..num_classes {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        let nc = idx.len();
        let mut rng = seed::rng(seed, &[domain::SPLIT, class as u64]);
        idx.shuffle(&mut rng);
        let mut cum = 0.0;
        let mut start = 0usize;
        for (k, &f) in fractions.iter().enumerate() {
            cum += f;
            let end = if k == 3 {
                nc
            } else {
                ((cum * nc as f64).round() as usize).clamp(start, nc)
            };
            if end == start {
                return Err(Error::Data(format!(
                    "class {class} has too few samples ({nc}) for a {fractions:?} split"
                )));
            }
            parts[k].extend(&idx[start..end]);
            start = end;
        }
    }
    let [train, val, test, attack] = parts;
    Ok(SplitIndices { train, val, test, attack })
}

/// A resolution tier of the corpus with its split, ready for training and
/// attacks. Images here are never augmented; augmentation happens per batch
/// during training only.
#[derive(Debug, Clone)]
pub struct DatasetVariant {
    pub kind: VariantKind,
    pub edge: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub splits: SplitIndices,
    /// Corpus seed, recorded for manifests.
    pub seed: u64,
}

pub fn make_variant(
    corpus: &Corpus,
    kind: VariantKind,
    splits: &SplitIndices,
    seed: u64,
) -> Result<DatasetVariant> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot build a variant of an empty corpus".into()));
    }
    if splits.total() != corpus.len() {
        return Err(Error::Data(format!(
            "splits cover {} indices but corpus has {}",
            splits.total(),
            corpus.len()
        )));
    }
    let edge = kind.edge();
    let images = if edge == corpus.edge {
        corpus.images.clone()
    } else {
        corpus
            .images
            .iter()
            .map(|img| resize_area(img, CHANNELS, corpus.edge, corpus.edge, edge, edge))
            .collect::<Result<_>>()?
    };
    Ok(DatasetVariant {
        kind,
        edge,
        images,
        labels: corpus.labels.clone(),
        splits: splits.clone(),
        seed,
    })
}

impl DatasetVariant {
    pub fn input_shape(&self) -> (usize, usize, usize) {
        (CHANNELS, self.edge, self.edge)
    }

    /// Stack the given images into an untracked [n, 3, e, e] batch.
    pub fn tensor_of(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        self.stack(indices, None)
    }

    /// Like [`tensor_of`](Self::tensor_of) but with a fresh augmentation per
    /// image when this variant augments; identity otherwise. Consumes rng
    /// draws in index order.
    pub fn augmented_tensor_of(
        &self,
        indices: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Vec<usize>)> {
        if self.kind.augmented() {
            self.stack(indices, Some(rng))
        } else {
            self.stack(indices, None)
        }
    }

    fn stack(&self, indices: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Data("cannot stack an empty batch".into()));
        }
        let plane = CHANNELS * self.edge * self.edge;
        let mut data = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = self
                .images
                .get(i)
                .ok_or_else(|| Error::Data(format!("image index {i} out of range")))?;
            match rng.as_deref_mut() {
                Some(r) => {
                    let aug = Augmentation::sample(r);
                    data.extend(aug.apply(img, CHANNELS, self.edge, self.edge)?);
                }
                None => data.extend_from_slice(img),
            }
            labels.push(self.labels[i]);
        }
        let t = Tensor::from_vec(&[indices.len(), CHANNELS, self.edge, self.edge], data)?;
        Ok((t, labels))
    }
}

/// Hex SHA-256 over the 8-bit image payloads and labels in corpus order.
/// Identifies the corpus content independent of how it was stored.
pub fn corpus_sha256(corpus: &Corpus) -> String {
    let mut hasher = Sha256::new();
    for (img, &label) in corpus.images.iter().zip(&corpus.labels) {
        hasher.update(interleave_u8(img, corpus.edge));
        hasher.update([label as u8]);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Planar [0,1] floats to interleaved row-major RGB bytes (PNG layout).
fn interleave_u8(pixels: &[f64], edge: usize) -> Vec<u8> {
    let plane = edge * edge;
    let mut bytes = Vec::with_capacity(CHANNELS * plane);
    for i in 0..plane {
        for c in 0..CHANNELS {
            bytes.push((pixels[c * plane + i] * 255.0).round() as u8);
        }
    }
    bytes
}

fn deinterleave_f64(bytes: &[u8], edge: usize) -> Vec<f64> {
    let plane = edge * edge;
    let mut pixels = vec![0.0; CHANNELS * plane];
    for i in 0..plane {
        for c in 0..CHANNELS {
            pixels[c * plane + i] = bytes[i * CHANNELS + c] as f64 / 255.0;
        }
    }
    pixels
}

fn save_png(path: &Path, pixels: &[f64], edge: usize) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), edge as u32, edge as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: format!("png header: {e}"),
        })?;
    writer
        .write_image_data(&interleave_u8(pixels, edge))
        .map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: format!("png payload: {e}"),
        })?;
    Ok(())
}

fn load_png(path: &Path) -> Result<(Vec<f64>, usize)> {
    let fmt = |reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };
    let file = fs::File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| fmt(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| fmt("image dimensions overflow".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| fmt(format!("png frame: {e}")))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(fmt("expected 8-bit RGB".into()));
    }
    if info.width != info.height {
        return Err(fmt(format!("expected square image, got {}x{}", info.width, info.height)));
    }
    let edge = info.width as usize;
    buf.truncate(info.buffer_size());
    Ok((deinterleave_f64(&buf, edge), edge))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestImage {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub label: usize,
}

/// Sidecar JSON describing a corpus directory: content hash, image order,
/// and the split indices every downstream stage reuses.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub n_per_class: usize,
    pub edge: usize,
    pub classes: Vec<String>,
    pub images: Vec<ManifestImage>,
    pub pixel_sha256: String,
    pub splits: SplitIndices,
}

pub const MANIFEST_FORMAT: &str = "corpus-manifest";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Write PNGs (one subdirectory per class) plus `manifest.json`.
pub fn write_corpus_dir(
    dir: &Path,
    corpus: &Corpus,
    splits: &SplitIndices,
    seed: u64,
    n_per_class: usize,
) -> Result<CorpusManifest> {
    fs::create_dir_all(dir)?;
    let mut images = Vec::with_capacity(corpus.len());
    let mut per_class = vec![0usize; NUM_CLASSES];
    for (img, &label) in corpus.images.iter().zip(&corpus.labels) {
        let class = CLASS_NAMES[label];
        let rel = format!("{class}/{class}_{:03}.png", per_class[label]);
        per_class[label] += 1;
        let path = dir.join(&rel);
        fs::create_dir_all(path.parent().unwrap())?;
        save_png(&path, img, corpus.edge)?;
        images.push(ManifestImage { path: rel, label });
    }
    let manifest = CorpusManifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        seed,
        n_per_class,
        edge: corpus.edge,
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        images,
        pixel_sha256: corpus_sha256(corpus),
        splits: splits.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest encoding failed: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Load a corpus directory written by [`write_corpus_dir`], verifying the
/// pixel hash so silent corruption or hand-edits are caught.
pub fn load_corpus_dir(dir: &Path) -> Result<(Corpus, CorpusManifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let fmt = |reason: String| Error::Format {
        path: manifest_path.display().to_string(),
        reason,
    };
    let bytes = fs::read(&manifest_path).map_err(|e| {
        Error::Data(format!(
            "no corpus manifest at {}: {e} (run gen-data first)",
            manifest_path.display()
        ))
    })?;
    let manifest: CorpusManifest =
        serde_json::from_slice(&bytes).map_err(|e| fmt(format!("manifest JSON: {e}")))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(fmt(format!("unexpected format `{}`", manifest.format)));
    }
    if manifest.version != 1 {
        return Err(fmt(format!("unsupported version {}", manifest.version)));
    }
    let mut images = Vec::with_capacity(manifest.images.len());
    let mut labels = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        if entry.label >= manifest.classes.len() {
            return Err(fmt(format!("label {} out of range", entry.label)));
        }
        let (pixels, edge) = load_png(&dir.join(&entry.path))?;
        if edge != manifest.edge {
            return Err(fmt(format!(
                "{} is {edge}x{edge}, manifest says {}",
                entry.path, manifest.edge
            )));
        }
        images.push(pixels);
        labels.push(entry.label);
    }
    let corpus = Corpus {
        edge: manifest.edge,
        images,
        labels,
    };
    let hash = corpus_sha256(&corpus);
    if hash != manifest.pixel_sha256 {
        return Err(fmt(format!(
            "pixel hash mismatch: files hash to {hash}, manifest says {}",
            manifest.pixel_sha256
        )));
    }
    if manifest.splits.total() != corpus.len() {
        return Err(fmt("split indices do not cover the corpus".into()));
    }
    Ok((corpus, manifest))
}

/// Load a plain image folder (one subdirectory per class, 8-bit RGB PNGs).
/// Class order is the sorted subdirectory order; files sort by name within
/// a class. All images must share one square size.
pub fn load_image_folder(dir: &Path) -> Result<(Corpus, Vec<String>)> {
    let mut classes: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::Data(format!(
            "no class subdirectories under {}",
            dir.display()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut edge = None;
    for (label, class) in classes.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(dir.join(class))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map_or(false, |x| x == "png"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("class directory `{class}` has no PNG files")));
        }
        for path in files {
            let (pixels, e) = load_png(&path)?;
            match edge {
                None => edge = Some(e),
                Some(prev) if prev != e => {
                    return Err(Error::Data(format!(
                        "mixed image sizes: {} is {e}x{e}, earlier images are {prev}x{prev}",
                        path.display()
                    )))
                }
                _ => {}
            }
            images.push(pixels);
            labels.push(label);
        }
    }
    Ok((
        Corpus {
            edge: edge.unwrap(),
            images,
            labels,
        },
        classes,
    ))
}
