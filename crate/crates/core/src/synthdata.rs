//! Synthetic two-domain benchmark generator and on-disk dataset I/O.
//!
//! Each sample pair shares one base image: a soft elliptical gradient blob
//! (a stand-in face) over a tinted background with low-amplitude noise.
//! The class-1 ("fake") partner additionally carries one rectangular
//! artifact patch at a random in-face location. Domains differ in patch
//! texture and global style, so the class signal (patch presence) transfers
//! across domains while its appearance does not.
//!
//! Images are quantized to the 8-bit grid at generation time, which makes
//! the PPM round trip exactly lossless.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::Image;
use crate::error::{Error, Result};

/// Background palette indexed by the style's hue field.
const PALETTE: [[f64; 3]; 4] = [
    [0.45, 0.52, 0.60],
    [0.60, 0.52, 0.45],
    [0.48, 0.58, 0.48],
    [0.58, 0.48, 0.56],
];

const SKIN: [f64; 3] = [0.85, 0.72, 0.62];
const CENTER_JITTER: f64 = 2.0;
const AXIS_JITTER: f64 = 1.0;
const BLOB_AX_FRAC: f64 = 0.32;
const BLOB_AY_FRAC: f64 = 0.40;
const SKIN_JITTER: f64 = 0.03;
const NOISE_AMP: f64 = 0.02;
const CHECKER_CELL: usize = 2;
const CHECKER_DELTA: f64 = 0.12;

/// Texture filling the artifact patch of class-1 images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    /// Full-range uniform pixel noise.
    NoisePatch,
    /// Gray checkerboard with 2x2 cells at mid-range contrast.
    CheckerboardPatch,
}

/// Global appearance knobs applied to every image of a domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Style {
    /// Added after contrast, in [-0.2, 0.2].
    pub brightness: f64,
    /// Gain around mid-gray, in [0.8, 1.2].
    pub contrast: f64,
    /// Background palette index.
    pub hue: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain_id: String,
    /// Images are square with this side length; at least 16 and even.
    pub image_size: usize,
    pub per_class_train: usize,
    /// Zero for target domains, which fine-tune without validation data.
    pub per_class_val: usize,
    pub per_class_test: usize,
    pub artifact_kind: ArtifactKind,
    pub style: Style,
    pub seed: u64,
}

impl DomainSpec {
    /// Source-domain preset: noise patches, neutral style, with a
    /// validation split for pre-training.
    pub fn domain_a(seed: u64) -> Self {
        Self {
            domain_id: "A".into(),
            image_size: 32,
            per_class_train: 500,
            per_class_val: 100,
            per_class_test: 100,
            artifact_kind: ArtifactKind::NoisePatch,
            style: Style { brightness: 0.0, contrast: 1.0, hue: 0 },
            seed,
        }
    }

    /// Target-domain preset: checkerboard patches under a brighter,
    /// higher-contrast look with a different background tint.
    pub fn domain_b(seed: u64) -> Self {
        Self {
            domain_id: "B".into(),
            image_size: 32,
            per_class_train: 200,
            per_class_val: 0,
            per_class_test: 100,
            artifact_kind: ArtifactKind::CheckerboardPatch,
            style: Style { brightness: 0.1, contrast: 1.1, hue: 2 },
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.image_size < 16 || self.image_size % 2 != 0 {
            return Err(Error::Config(format!(
                "image size must be even and at least 16, got {}",
                self.image_size
            )));
        }
        if self.per_class_train < 1 || self.per_class_test < 1 {
            return Err(Error::Config("train and test counts must be at least 1".into()));
        }
        if !(-0.2..=0.2).contains(&self.style.brightness) {
            return Err(Error::Config(format!(
                "brightness {} outside [-0.2, 0.2]",
                self.style.brightness
            )));
        }
        if !(0.8..=1.2).contains(&self.style.contrast) {
            return Err(Error::Config(format!(
                "contrast {} outside [0.8, 1.2]",
                self.style.contrast
            )));
        }
        if self.style.hue >= PALETTE.len() {
            return Err(Error::Config(format!(
                "hue index {} outside the {}-color palette",
                self.style.hue,
                PALETTE.len()
            )));
        }
        if self.domain_id.is_empty() || self.domain_id.contains(['\t', '\n']) {
            return Err(Error::Config("domain id must be nonempty without tabs/newlines".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub label: usize,
    pub domain: String,
    pub split: Split,
}

/// An ordered sample collection. Generated datasets interleave real/fake
/// pairs: indices 2i and 2i+1 share the same base image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Append all samples of another dataset, preserving order.
    pub fn extend(&mut self, other: Dataset) {
        self.samples.extend(other.samples);
    }
}

/// Decorrelate per-sample streams from one domain seed (splitmix64 mixer).
pub(crate) fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn style_and_quantize(raw: &[f64], style: &Style) -> Vec<f64> {
    raw.iter().map(|&v| quantize(style.contrast * (v - 0.5) + 0.5 + style.brightness)).collect()
}

/// Build one real/fake pair from a dedicated rng stream. The fake partner
/// reuses the real base and differs only inside the artifact rectangle.
fn generate_pair(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Result<(Image, Image)> {
    let n = spec.image_size;
    let bg = PALETTE[spec.style.hue];
    let cx = n as f64 / 2.0 + rng.gen_range(-CENTER_JITTER..CENTER_JITTER);
    let cy = n as f64 / 2.0 + rng.gen_range(-CENTER_JITTER..CENTER_JITTER);
    let ax = BLOB_AX_FRAC * n as f64 + rng.gen_range(-AXIS_JITTER..AXIS_JITTER);
    let ay = BLOB_AY_FRAC * n as f64 + rng.gen_range(-AXIS_JITTER..AXIS_JITTER);
    let skin: Vec<f64> =
        SKIN.iter().map(|&s| s + rng.gen_range(-SKIN_JITTER..SKIN_JITTER)).collect();

    let mut base = vec![0.0; n * n * 3];
    for y in 0..n {
        for x in 0..n {
            let rx = (x as f64 + 0.5 - cx) / ax;
            let ry = (y as f64 + 0.5 - cy) / ay;
            let r2 = rx * rx + ry * ry;
            let t = if r2 < 1.0 { 1.0 - r2 } else { 0.0 };
            for c in 0..3 {
                base[(y * n + x) * 3 + c] = bg[c] * (1.0 - t) + skin[c] * t;
            }
        }
    }
    for v in &mut base {
        *v += rng.gen_range(-NOISE_AMP..NOISE_AMP);
    }

    let patch = n / 4;
    let x0 = rng.gen_range(n / 4..=n / 2);
    let y0 = rng.gen_range(n / 4..=n / 2);
    let mut faked = base.clone();
    match spec.artifact_kind {
        ArtifactKind::NoisePatch => {
            for y in y0..y0 + patch {
                for x in x0..x0 + patch {
                    for c in 0..3 {
                        faked[(y * n + x) * 3 + c] = rng.gen::<f64>();
                    }
                }
            }
        }
        ArtifactKind::CheckerboardPatch => {
            for y in y0..y0 + patch {
                for x in x0..x0 + patch {
                    let cell = ((y - y0) / CHECKER_CELL + (x - x0) / CHECKER_CELL) % 2;
                    let v = if cell == 0 { 0.5 + CHECKER_DELTA } else { 0.5 - CHECKER_DELTA };
                    for c in 0..3 {
                        faked[(y * n + x) * 3 + c] = v;
                    }
                }
            }
        }
    }

    let real = Image::new(n, n, style_and_quantize(&base, &spec.style))?;
    let fake = Image::new(n, n, style_and_quantize(&faked, &spec.style))?;
    Ok((real, fake))
}

/// Deterministically generate a domain: for every pair index, a class-0
/// image and its class-1 partner, across train, val, and test splits.
pub fn generate_domain(spec: &DomainSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut samples = Vec::new();
    let mut index = 0u64;
    let splits = [
        (Split::Train, spec.per_class_train),
        (Split::Val, spec.per_class_val),
        (Split::Test, spec.per_class_test),
    ];
    for (split, count) in splits {
        for _ in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index));
            let (real, fake) = generate_pair(spec, &mut rng)?;
            samples.push(LabeledSample {
                image: real,
                label: 0,
                domain: spec.domain_id.clone(),
                split,
            });
            samples.push(LabeledSample {
                image: fake,
                label: 1,
                domain: spec.domain_id.clone(),
                split,
            });
            index += 1;
        }
    }
    Ok(Dataset { samples })
}

/// Write a binary PPM (P6, maxval 255). Pixel values are rounded onto the
/// 8-bit grid; generated images already sit on it.
pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    let mut bytes =
        format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a binary PPM. Only maxval 255 is accepted; `#` comments in the
/// header are skipped.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Format(format!("{}: not a P6 ppm", path.display())));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comment lines between header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => {
                    return Err(Error::Format(format!(
                        "{}: truncated header",
                        path.display()
                    )))
                }
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad header field", path.display())))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "{}: only maxval 255 is supported, got {maxval}",
            path.display()
        )));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format(format!("{}: missing header terminator", path.display()))),
    }
    let expect = width * height * 3;
    let pixels = &bytes[pos..];
    if pixels.len() != expect {
        return Err(Error::Format(format!(
            "{}: expected {expect} pixel bytes, found {}",
            path.display(),
            pixels.len()
        )));
    }
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, data)
}

/// Write every sample as a PPM plus an `index.tsv` manifest. Returns the
/// manifest path. File names encode position, split, and label, so a
/// directory can hold several domains.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("path\tlabel\tdomain\tsplit\n");
    for (i, sample) in ds.samples.iter().enumerate() {
        let name = format!("{:05}_{}_{}.ppm", i, sample.split.as_str(), sample.label);
        write_ppm(&sample.image, &dir.join(&name))?;
        manifest.push_str(&format!(
            "{name}\t{}\t{}\t{}\n",
            sample.label,
            sample.domain,
            sample.split.as_str()
        ));
    }
    let manifest_path = dir.join("index.tsv");
    let mut f = fs::File::create(&manifest_path)?;
    f.write_all(manifest.as_bytes())?;
    Ok(manifest_path)
}

/// Load a dataset back from its manifest; the exact inverse of
/// [`write_dataset`] given the 8-bit quantization at generation.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("index.tsv");
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", manifest_path.display())))
    })?;
    let mut lines = text.lines();
    match lines.next() {
        Some("path\tlabel\tdomain\tsplit") => {}
        other => {
            return Err(Error::Manifest(format!(
                "bad manifest header: {:?}",
                other.unwrap_or("<empty>")
            )))
        }
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let row = lineno + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [path, label, domain, split] = fields[..] else {
            return Err(Error::Manifest(format!("row {row}: expected 4 tab-separated fields")));
        };
        let label: usize = label
            .parse()
            .map_err(|_| Error::Manifest(format!("row {row}: bad label '{label}'")))?;
        if label > 1 {
            return Err(Error::Manifest(format!("row {row}: label {label} not in {{0, 1}}")));
        }
        let split = Split::parse(split)
            .ok_or_else(|| Error::Manifest(format!("row {row}: unknown split '{split}'")))?;
        let file = dir.join(path);
        if !file.is_file() {
            return Err(Error::Manifest(format!(
                "row {row}: missing image file '{path}'"
            )));
        }
        samples.push(LabeledSample {
            image: read_ppm(&file)?,
            label,
            domain: domain.to_string(),
            split,
        });
    }
    Ok(Dataset { samples })
}
