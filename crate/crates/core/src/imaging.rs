//! Dataset ingestion, preprocessing, and a synthetic lesion generator.
//!
//! All images are single-channel `f32` planes in `[0, 1]` at a fixed working
//! resolution. Masks are `{0, 1}` planes of the same shape. A [`Dataset`] is
//! always sorted by sample id so that downstream code never depends on
//! directory traversal order.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, Key};

/// `(height, width)`.
pub type Size = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "image {id}: {} pixels for {height}x{width}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("image {id}: pixel {p} outside [0,1]")));
        }
        Ok(Self {
            id,
            height,
            width,
            pixels,
        })
    }

    pub fn size(&self) -> Size {
        (self.height, self.width)
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Same id and shape, new pixel values. Callers guarantee the range.
    pub(crate) fn with_pixels(&self, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            id: self.id.clone(),
            height: self.height,
            width: self.width,
            pixels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Mask {
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        let id = id.into();
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {id}: {} pixels for {height}x{width}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::Data(format!("mask {id}: values must be 0 or 1")));
        }
        Ok(Self {
            id,
            height,
            width,
            pixels,
        })
    }

    /// Binarize probabilities: strictly above `threshold` is foreground.
    pub fn from_probs(id: impl Into<String>, height: usize, width: usize, probs: &[f32], threshold: f32) -> Result<Self> {
        Self::new(
            id,
            height,
            width,
            probs.iter().map(|&p| u8::from(p > threshold)).collect(),
        )
    }

    pub fn size(&self) -> Size {
        (self.height, self.width)
    }

    pub fn foreground(&self) -> usize {
        self.pixels.iter().map(|&p| p as usize).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: Option<Mask>,
}

impl Sample {
    pub fn id(&self) -> &str {
        &self.image.id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    size: Size,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Validates shapes and id uniqueness, then sorts samples by id.
    pub fn new(name: impl Into<String>, size: Size, mut samples: Vec<Sample>) -> Result<Self> {
        let name = name.into();
        for s in &samples {
            if s.image.size() != size {
                return Err(Error::Shape(format!(
                    "{}: image is {:?}, dataset working size is {size:?}",
                    s.id(),
                    s.image.size()
                )));
            }
            if let Some(m) = &s.mask {
                if m.size() != size || m.id != s.image.id {
                    return Err(Error::Shape(format!("{}: mask does not match image", s.id())));
                }
            }
        }
        samples.sort_by(|a, b| a.image.id.cmp(&b.image.id));
        if let Some(w) = samples.windows(2).find(|w| w[0].image.id == w[1].image.id) {
            return Err(Error::Data(format!("duplicate sample id {}", w[0].image.id)));
        }
        Ok(Self {
            name,
            size,
            samples,
        })
    }

    pub fn size(&self) -> Size {
        self.size
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.image.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples
            .binary_search_by(|s| s.image.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.samples[i])
    }

    /// Samples whose id is in `ids`; every requested id must exist.
    pub fn subset<S: AsRef<str>>(&self, name: impl Into<String>, ids: &[S]) -> Result<Dataset> {
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            match self.get(id.as_ref()) {
                Some(s) => out.push(s.clone()),
                None => missing.push(id.as_ref().to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "ids not in dataset {}: {}",
                self.name,
                missing.join(", ")
            )));
        }
        Dataset::new(name, self.size, out)
    }

    /// Ids of samples that lack a mask.
    pub fn unlabeled_ids(&self) -> Vec<&str> {
        self.samples
            .iter()
            .filter(|s| s.mask.is_none())
            .map(|s| s.id())
            .collect()
    }

    /// Write `images/<id>.png`, `masks/<id>.png` and `manifest.json` under `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        let img_dir = dir.join("images");
        let mask_dir = dir.join("masks");
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
        let mut manifest = Vec::with_capacity(self.len());
        for s in &self.samples {
            let (h, w) = (s.image.height as u32, s.image.width as u32);
            let image_path = img_dir.join(format!("{}.png", s.id()));
            let buf: Vec<u8> = s
                .image
                .pixels
                .iter()
                .map(|&p| (p * 255.0).round() as u8)
                .collect();
            image::GrayImage::from_raw(w, h, buf)
                .expect("buffer sized from image")
                .save(&image_path)
                .map_err(|e| Error::Data(format!("writing {}: {e}", image_path.display())))?;
            let mut entry = ManifestEntry {
                id: s.id().to_string(),
                image_path: PathBuf::from("images").join(format!("{}.png", s.id())),
                mask_path: None,
            };
            if let Some(m) = &s.mask {
                let mask_path = mask_dir.join(format!("{}.png", s.id()));
                let buf: Vec<u8> = m.pixels.iter().map(|&p| p * 255).collect();
                image::GrayImage::from_raw(w, h, buf)
                    .expect("buffer sized from mask")
                    .save(&mask_path)
                    .map_err(|e| Error::Data(format!("writing {}: {e}", mask_path.display())))?;
                entry.mask_path = Some(PathBuf::from("masks").join(format!("{}.png", s.id())));
            }
            manifest.push(entry);
        }
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }
}

/// One line of a dataset manifest. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

/// Resize (bilinear) a single-channel raw plane to `target`, then min-max normalize.
///
/// A constant plane normalizes to all zeros.
pub fn preprocess(id: &str, raw: &[f32], raw_size: Size, target: Size) -> Result<Image> {
    let (rh, rw) = raw_size;
    if raw.is_empty() || rh == 0 || rw == 0 {
        return Err(Error::Data(format!("{id}: empty image")));
    }
    if raw.len() != rh * rw {
        return Err(Error::Shape(format!("{id}: {} values for {rh}x{rw}", raw.len())));
    }
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::Config(format!("{id}: zero target size")));
    }
    let resized = if raw_size == target {
        raw.to_vec()
    } else {
        resize_bilinear(raw, raw_size, target)
    };
    let (lo, hi) = resized
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Data(format!("{id}: non-finite pixel values")));
    }
    let pixels = if hi > lo {
        let span = hi - lo;
        resized
            .iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; resized.len()]
    };
    Image::new(id, target.0, target.1, pixels)
}

/// Half-pixel-centre bilinear resampling.
pub fn resize_bilinear(src: &[f32], from: Size, to: Size) -> Vec<f32> {
    let (sh, sw) = from;
    let (th, tw) = to;
    let sy = sh as f32 / th as f32;
    let sx = sw as f32 / tw as f32;
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f32;
        for x in 0..tw {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out.push(top * (1.0 - wy) + bot * wy);
        }
    }
    out
}

pub fn resize_nearest<T: Copy>(src: &[T], from: Size, to: Size) -> Vec<T> {
    let (sh, sw) = from;
    let (th, tw) = to;
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = (((y as f64 + 0.5) * sh as f64 / th as f64) as usize).min(sh - 1);
        for x in 0..tw {
            let sx = (((x as f64 + 0.5) * sw as f64 / tw as f64) as usize).min(sw - 1);
            out.push(src[sy * sw + sx]);
        }
    }
    out
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn file_id(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Data(format!("non UTF-8 file name {}", path.display())))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Read an image file and collapse it to one channel (unweighted RGB mean).
pub fn read_gray(path: &Path) -> Result<(Vec<f32>, Size)> {
    let img = image::open(path).map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let gray = rgb
        .pixels()
        .map(|p| (p.0[0] + p.0[1] + p.0[2]) / 3.0)
        .collect();
    Ok((gray, (h as usize, w as usize)))
}

/// Read a mask file; any nonzero channel marks foreground. Resized nearest-neighbour.
pub fn read_mask(id: &str, path: &Path, target: Size) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let bits: Vec<u8> = rgb.pixels().map(|p| u8::from(p.0.iter().any(|&c| c != 0))).collect();
    let bits = resize_nearest(&bits, (h as usize, w as usize), target);
    Mask::new(id, target.0, target.1, bits)
}

fn load_entries(name: String, entries: Vec<(String, PathBuf, Option<PathBuf>)>, target: Size) -> Result<Dataset> {
    let samples = entries
        .into_par_iter()
        .map(|(id, image_path, mask_path)| {
            let (raw, raw_size) = read_gray(&image_path)?;
            let image = preprocess(&id, &raw, raw_size, target)?;
            let mask = mask_path
                .map(|p| read_mask(&id, &p, target))
                .transpose()?;
            Ok(Sample { image, mask })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, target, samples)
}

/// Load every PNG/JPEG in `images`, pairing masks by file stem when `masks` is given.
pub fn load_dir(images: &Path, masks: Option<&Path>, target: Size) -> Result<Dataset> {
    let files = list_images(images)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no images in {}", images.display())));
    }
    let mask_files = match masks {
        Some(dir) => {
            let mut by_id = std::collections::BTreeMap::new();
            for p in list_images(dir)? {
                by_id.insert(file_id(&p)?, p);
            }
            Some(by_id)
        }
        None => None,
    };
    let mut entries = Vec::with_capacity(files.len());
    let mut missing = Vec::new();
    for path in files {
        let id = file_id(&path)?;
        let mask = match &mask_files {
            Some(by_id) => match by_id.get(&id) {
                Some(m) => Some(m.clone()),
                None => {
                    missing.push(id.clone());
                    None
                }
            },
            None => None,
        };
        entries.push((id, path, mask));
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing masks for: {}", missing.join(", "))));
    }
    let name = images
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string();
    load_entries(name, entries, target)
}

/// Load a JSON manifest `[{id, image_path, mask_path?}]`.
pub fn load_manifest(path: &Path, target: Size) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes)?;
    if manifest.is_empty() {
        return Err(Error::Data(format!("empty manifest {}", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(manifest.len());
    for e in manifest {
        if !seen.insert(e.id.clone()) {
            return Err(Error::Data(format!("duplicate manifest id {}", e.id)));
        }
        entries.push((e.id, base.join(e.image_path), e.mask_path.map(|m| base.join(m))));
    }
    let name = path
        .file_stem()
        .and_then(|n| n.to_str())
        .unwrap_or("manifest")
        .to_string();
    load_entries(name, entries, target)
}

struct Ellipse {
    cy: f32,
    cx: f32,
    a: f32,
    b: f32,
    cos: f32,
    sin: f32,
}

impl Ellipse {
    fn contains(&self, y: f32, x: f32) -> bool {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Low-frequency noise in `[-1, 1]`: a random coarse lattice, bilinearly upsampled.
fn smooth_noise(rng: &mut impl rand::Rng, size: Size, cells: usize) -> Vec<f32> {
    let lattice: Vec<f32> = (0..cells * cells).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    resize_bilinear(&lattice, (cells, cells), size)
}

/// Acquisition styles of the synthetic generator, with their frequencies.
/// The rarer styles give the pool a cluster structure that a small random
/// sample can miss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthStyle {
    /// Dark lesion on a light textured background.
    Plain,
    /// Light lesion on a dark background.
    Inverted,
    /// Plain, occluded by thin dark hair-like strokes.
    Hair,
    /// Plain, under strong radial vignetting.
    Vignette,
}

impl SynthStyle {
    pub const WEIGHTS: [(SynthStyle, f64); 4] = [
        (SynthStyle::Plain, 0.55),
        (SynthStyle::Inverted, 0.2),
        (SynthStyle::Hair, 0.15),
        (SynthStyle::Vignette, 0.1),
    ];

    fn draw(rng: &mut impl rand::Rng) -> Self {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (style, w) in Self::WEIGHTS {
            acc += w;
            if u < acc {
                return style;
            }
        }
        SynthStyle::Plain
    }
}

/// Deterministic synthetic lesion dataset with exact ground-truth masks.
///
/// Each image is a textured background with one or two ellipses whose raw
/// intensity differs from the background by at least 0.3, in one of the
/// [`SynthStyle`]s.
pub fn synth_dataset(n: usize, size: Size, seed: u64) -> Result<Dataset> {
    let (h, w) = size;
    if n == 0 {
        return Err(Error::Config("synth_dataset needs n >= 1".into()));
    }
    if h < 16 || w < 16 {
        return Err(Error::Config(format!("synth_dataset size {h}x{w} below 16x16")));
    }
    let samples = (0..n)
        .into_par_iter()
        .map(|i| synth_sample(i, size, seed).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(format!("synth-{seed}"), size, samples)
}

/// Style of sample `index` in `synth_dataset(_, size, seed)`.
pub fn synth_style(index: usize, size: Size, seed: u64) -> Result<SynthStyle> {
    synth_sample(index, size, seed).map(|(_, style)| style)
}

fn synth_sample(index: usize, size: Size, seed: u64) -> Result<(Sample, SynthStyle)> {
    let (h, w) = size;
    let m = h.min(w) as f32;
    let id = format!("synth_{index:05}");
    let mut rng = derived_rng(seed, &[Key::Str("synth"), Key::U64(index as u64)]);

    let style = SynthStyle::draw(&mut rng);
    let (background, sign) = match style {
        SynthStyle::Inverted => (rng.gen_range(0.15f32..0.4), 1.0f32),
        _ => (rng.gen_range(0.5f32..0.8), -1.0f32),
    };
    let texture_amp = rng.gen_range(0.03f32..0.1);
    let texture_cells = rng.gen_range(3..7);
    let texture = smooth_noise(&mut rng, size, texture_cells);
    let fine = smooth_noise(&mut rng, size, (m as usize / 4).max(4));

    let count = if rng.gen_bool(0.6) { 1 } else { 2 };
    let min_axis = (0.08 * m).max(1.5);
    let max_axis = 0.28 * m;
    let mut lesions = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.gen_range(min_axis..=max_axis);
        let b = rng.gen_range(min_axis..=max_axis);
        let r = a.max(b);
        let theta = rng.gen_range(0.0..std::f32::consts::PI);
        let cy = rng.gen_range(r..=(h as f32 - r));
        let cx = rng.gen_range(r..=(w as f32 - r));
        let contrast = rng.gen_range(0.3f32..0.42);
        lesions.push((
            Ellipse {
                cy,
                cx,
                a,
                b,
                cos: theta.cos(),
                sin: theta.sin(),
            },
            background + sign * contrast,
        ));
    }

    // hair: straight strokes about one pixel wide, darker than everything
    let hairs: Vec<(f32, f32, f32, f32)> = if style == SynthStyle::Hair {
        (0..rng.gen_range(4..9))
            .map(|_| {
                let theta = rng.gen_range(0.0..std::f32::consts::PI);
                (
                    rng.gen_range(0.0..h as f32),
                    rng.gen_range(0.0..w as f32),
                    theta.cos(),
                    theta.sin(),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let hair_width = (m / 64.0).max(0.5);

    let mut raw = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    let (my, mx) = (h as f32 / 2.0, w as f32 / 2.0);
    let corner = (my * my + mx * mx).sqrt();
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
            let i = y * w + x;
            let hit = lesions.iter().find(|(e, _)| e.contains(py, px));
            let mut level = match hit {
                Some((_, level)) => *level + 0.03 * fine[i],
                None => background + texture_amp * texture[i],
            };
            if hairs
                .iter()
                .any(|&(hy, hx, c, s)| ((px - hx) * s - (py - hy) * c).abs() < hair_width)
            {
                level = 0.05;
            }
            if style == SynthStyle::Vignette {
                let r = ((py - my).powi(2) + (px - mx).powi(2)).sqrt() / corner;
                level *= 1.0 - 0.6 * r * r;
            }
            let jitter = rng.gen_range(-0.02f32..0.02);
            raw.push((level + jitter).clamp(0.0, 1.0));
            mask.push(u8::from(hit.is_some()));
        }
    }
    let image = preprocess(&id, &raw, size, size)?;
    let mask = Mask::new(id, h, w, mask)?;
    Ok((
        Sample {
            image,
            mask: Some(mask),
        },
        style,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_raw_normalizes_to_zero() {
        let img = preprocess("c", &[7.0; 12], (3, 4), (8, 8)).unwrap();
        assert_eq!(img.size(), (8, 8));
        assert!(img.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn min_max_is_linear() {
        let raw = [10.0, 15.0, 20.0, 12.5];
        let img = preprocess("l", &raw, (2, 2), (2, 2)).unwrap();
        assert_eq!(img.pixels, vec![0.0, 0.5, 1.0, 0.25]);
    }

    #[test]
    fn preprocess_is_idempotent_on_full_range_images() {
        let raw: Vec<f32> = (0..64).map(|i| i as f32 / 63.0).collect();
        let once = preprocess("i", &raw, (8, 8), (8, 8)).unwrap();
        let twice = preprocess("i", &once.pixels, (8, 8), (8, 8)).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn full_protocol_resolution() {
        let raw: Vec<f32> = (0..300 * 400).map(|i| (i % 97) as f32).collect();
        let img = preprocess("big", &raw, (300, 400), (256, 256)).unwrap();
        assert_eq!(img.size(), (256, 256));
        assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn empty_raw_is_an_error_naming_the_sample() {
        let err = preprocess("ISIC_0001", &[], (0, 0), (8, 8)).unwrap_err();
        assert!(err.to_string().contains("ISIC_0001"));
    }

    #[test]
    fn nearest_resize_keeps_masks_binary() {
        let src = vec![0u8, 1, 1, 0];
        let out = resize_nearest(&src, (2, 2), (5, 7));
        assert!(out.iter().all(|&v| v <= 1));
        assert_eq!(out.len(), 35);
    }

    #[test]
    fn dataset_rejects_duplicates_and_sorts() {
        let img = |id: &str| Sample {
            image: Image::new(id, 2, 2, vec![0.0; 4]).unwrap(),
            mask: None,
        };
        let ds = Dataset::new("d", (2, 2), vec![img("b"), img("a"), img("c")]).unwrap();
        assert_eq!(ds.ids(), vec!["a", "b", "c"]);
        assert!(Dataset::new("d", (2, 2), vec![img("a"), img("a")]).is_err());
    }

    #[test]
    fn synth_single_sample_has_a_lesion() {
        for size in [(16, 16), (17, 23), (64, 64)] {
            let ds = synth_dataset(1, size, 3).unwrap();
            assert!(ds.samples()[0].mask.as_ref().unwrap().foreground() > 0);
        }
    }

    #[test]
    fn synth_rejects_tiny_sizes() {
        assert!(synth_dataset(4, (8, 32), 0).is_err());
        assert!(synth_dataset(0, (32, 32), 0).is_err());
    }
}
