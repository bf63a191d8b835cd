//! Procedural multi-attribute images and graded corruptions.
//!
//! Each image is a coloured shape on a grey background, optionally overlaid
//! with one or two patterns, with a global noise level acting as texture. The
//! four attribute types are `color`, `shape`, `pattern` and `texture`.
//!
//! Class frequencies follow `p_i ∝ (i + 1)^-exponent` and are allocated by
//! largest remainder, so the realised counts are exact rather than sampled.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Image, ImageBank};
use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::rng::{self, stream};
use crate::schema::{
    save_manifest, AttributeSchema, AttributeType, DatasetManifest, ImageRecord, ManifestKind,
};

pub const COLORS: [(&str, [f32; 3]); 8] = [
    ("red", [0.90, 0.10, 0.10]),
    ("green", [0.10, 0.70, 0.15]),
    ("blue", [0.15, 0.25, 0.90]),
    ("yellow", [0.95, 0.85, 0.10]),
    ("magenta", [0.85, 0.15, 0.80]),
    ("cyan", [0.10, 0.80, 0.85]),
    ("orange", [0.95, 0.50, 0.05]),
    ("purple", [0.45, 0.10, 0.60]),
];

pub const SHAPES: [&str; 6] = ["circle", "square", "triangle", "diamond", "cross", "ring"];

pub const PATTERNS: [&str; 6] = ["solid", "hstripes", "vstripes", "dots", "checker", "diagonal"];

/// Texture classes and their per-pixel noise standard deviations.
pub const TEXTURES: [(&str, f32); 5] = [
    ("smooth", 0.0),
    ("fine", 0.06),
    ("grainy", 0.12),
    ("rough", 0.19),
    ("harsh", 0.27),
];

pub const MULTI_PATTERN_PROB: f64 = 0.15;

/// Scene style; the cluttered style is a second visual domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderStyle {
    #[default]
    Plain,
    Cluttered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    pub n_colors: usize,
    pub n_shapes: usize,
    pub n_patterns: usize,
    pub n_textures: usize,
    pub n_images: usize,
    #[serde(default)]
    pub class_imbalance_exponent: f64,
    #[serde(default)]
    pub label_drop_prob: f64,
    #[serde(default = "default_multi_pattern")]
    pub multi_pattern_prob: f64,
    #[serde(default)]
    pub style: RenderStyle,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    #[serde(default)]
    pub domain_tag: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

fn default_multi_pattern() -> f64 {
    MULTI_PATTERN_PROB
}

fn default_prefix() -> String {
    "img".into()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 24,
            n_colors: 8,
            n_shapes: 6,
            n_patterns: 6,
            n_textures: 4,
            n_images: 1000,
            class_imbalance_exponent: 0.0,
            label_drop_prob: 0.0,
            multi_pattern_prob: MULTI_PATTERN_PROB,
            style: RenderStyle::Plain,
            id_prefix: default_prefix(),
            domain_tag: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 16 {
            return bad(format!("image_size must be >= 16, got {}", self.image_size));
        }
        if self.n_images == 0 {
            return bad("n_images must be >= 1".into());
        }
        for (name, n, max) in [
            ("n_colors", self.n_colors, COLORS.len()),
            ("n_shapes", self.n_shapes, SHAPES.len()),
            ("n_patterns", self.n_patterns, PATTERNS.len()),
            ("n_textures", self.n_textures, TEXTURES.len()),
        ] {
            if n == 0 || n > max {
                return bad(format!("{name} must be in 1..={max}, got {n}"));
            }
        }
        if !(self.class_imbalance_exponent >= 0.0 && self.class_imbalance_exponent.is_finite()) {
            return bad("class_imbalance_exponent must be finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&self.label_drop_prob) {
            return bad("label_drop_prob must be in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.multi_pattern_prob) {
            return bad("multi_pattern_prob must be in [0, 1]".into());
        }
        if self.id_prefix.is_empty() {
            return bad("id_prefix must be non-empty".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> AttributeSchema {
        let colors: Vec<&str> = COLORS[..self.n_colors].iter().map(|c| c.0).collect();
        let textures: Vec<&str> = TEXTURES[..self.n_textures].iter().map(|t| t.0).collect();
        AttributeSchema {
            types: vec![
                AttributeType::new("color", &colors),
                AttributeType::new("shape", &SHAPES[..self.n_shapes]),
                AttributeType::new("pattern", &PATTERNS[..self.n_patterns]),
                AttributeType::new("texture", &textures),
            ],
        }
    }
}

/// Exact per-class counts for `n` items under a power law, by largest remainder.
pub fn power_law_counts(n: usize, n_classes: usize, exponent: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..n_classes)
        .map(|i| ((i + 1) as f64).powf(-exponent))
        .collect();
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

fn class_assignment(cfg: &SynthConfig, n_classes: usize, type_index: u64) -> Vec<usize> {
    let counts = power_law_counts(cfg.n_images, n_classes, cfg.class_imbalance_exponent);
    let mut out: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat(c).take(k))
        .collect();
    out.shuffle(&mut rng::rng_for(cfg.seed, stream::SYNTH_CLASSES, type_index));
    out
}

/// Ground truth for one rendered image, as class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub color: usize,
    pub shape: usize,
    pub patterns: Vec<usize>,
    pub texture: usize,
}

fn shape_mask(shape: usize, size: usize, cx: f32, cy: f32, r: f32) -> Vec<bool> {
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            let inside = match SHAPES[shape] {
                "circle" => dx * dx + dy * dy <= r * r,
                "square" => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
                "triangle" => {
                    // Upward triangle with apex at cy - r and base at cy + 0.8r.
                    let t = (dy + r) / (1.8 * r);
                    (0.0..=1.0).contains(&t) && dx.abs() <= t * r
                }
                "diamond" => dx.abs() + dy.abs() <= r,
                "cross" => {
                    (dx.abs() <= 0.3 * r && dy.abs() <= r) || (dy.abs() <= 0.3 * r && dx.abs() <= r)
                }
                "ring" => {
                    let d2 = dx * dx + dy * dy;
                    d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
                }
                _ => unreachable!("shape index out of range"),
            };
            mask[y * size + x] = inside;
        }
    }
    mask
}

fn pattern_on(pattern: usize, x: usize, y: usize) -> bool {
    match PATTERNS[pattern] {
        "solid" => false,
        "hstripes" => y % 4 < 2,
        "vstripes" => x % 4 < 2,
        "dots" => x % 4 == 1 && y % 4 == 1 || x % 4 == 2 && y % 4 == 1 || x % 4 == 1 && y % 4 == 2 || x % 4 == 2 && y % 4 == 2,
        "checker" => (x / 3 + y / 3) % 2 == 0,
        "diagonal" => (x + y) % 5 < 2,
        _ => unreachable!("pattern index out of range"),
    }
}

/// Renders one scene. All randomness comes from `rng`.
pub fn render_scene(scene: &SceneSpec, size: usize, style: RenderStyle, rng: &mut rng::Rng) -> Image {
    let s = size as f32;
    let bg: f32 = rng.gen_range(0.3..0.7);
    let mut img = Image::filled(size, size, [bg, bg, bg]);
    if style == RenderStyle::Cluttered {
        // Tinted gradient background with a few faint distractor bars.
        let tint: [f32; 3] = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
        let slope: f32 = rng.gen_range(-0.25..0.25);
        for y in 0..size {
            for x in 0..size {
                let g = bg + slope * ((x as f32 + y as f32) / (2.0 * s) - 0.5);
                img.set_pixel(y, x, [g + tint[0], g + tint[1], g + tint[2]]);
            }
        }
        for _ in 0..3 {
            let horizontal = rng.gen_bool(0.5);
            let at = rng.gen_range(0..size);
            let shade: f32 = rng.gen_range(-0.2..0.2);
            for i in 0..size {
                let (y, x) = if horizontal { (at, i) } else { (i, at) };
                let p = img.pixel(y, x);
                img.set_pixel(y, x, [p[0] + shade, p[1] + shade, p[2] + shade]);
            }
        }
    }

    let r = s * rng.gen_range(0.30..0.42);
    let cx = s * 0.5 + s * rng.gen_range(-0.08..0.08);
    let cy = s * 0.5 + s * rng.gen_range(-0.08..0.08);
    let mask = shape_mask(scene.shape, size, cx, cy, r);
    let base = COLORS[scene.color].1;
    let shade: f32 = rng.gen_range(0.85..1.05);
    let fill = [base[0] * shade, base[1] * shade, base[2] * shade];
    let dark = [fill[0] * 0.35, fill[1] * 0.35, fill[2] * 0.35];
    for y in 0..size {
        for x in 0..size {
            if mask[y * size + x] {
                let patterned = scene.patterns.iter().any(|&p| pattern_on(p, x, y));
                img.set_pixel(y, x, if patterned { dark } else { fill });
            }
        }
    }

    let sigma = TEXTURES[scene.texture].1;
    if sigma > 0.0 {
        for v in &mut img.data {
            let z: f32 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    img.clamp_unit();
    img
}

fn scene_for(cfg: &SynthConfig, assignments: &[Vec<usize>; 4], index: usize) -> SceneSpec {
    let mut rng = rng::rng_for(cfg.seed, stream::SYNTH_RENDER, index as u64);
    let primary = assignments[2][index];
    let mut patterns = vec![primary];
    if primary != 0 && cfg.n_patterns >= 3 && rng.gen_bool(cfg.multi_pattern_prob) {
        let others: Vec<usize> = (1..cfg.n_patterns).filter(|&p| p != primary).collect();
        patterns.push(*others.choose(&mut rng).expect("at least one other pattern"));
        patterns.sort_unstable();
    }
    SceneSpec {
        color: assignments[0][index],
        shape: assignments[1][index],
        patterns,
        texture: assignments[3][index],
    }
}

/// Renders `config.n_images` images into `out_dir/images/` and writes a
/// labeled manifest to `out_dir/manifest.jsonl`.
pub fn generate_synthetic_dataset(config: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let (manifest, images) = generate_in_memory(config, out_dir)?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let jobs: Vec<_> = manifest.records.iter().zip(&images).collect();
    let written = parallel::map(Exec::default(), &jobs, |(r, (_, img))| {
        img.save_png(&out_dir.join(&r.image_path))
    });
    written.into_iter().collect::<Result<Vec<_>>>()?;
    save_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Same output as [`generate_synthetic_dataset`] without touching the disk.
/// Pixels are quantized to 8 bits exactly as the written files would be.
pub fn generate_in_memory(
    config: &SynthConfig,
    base_dir: &Path,
) -> Result<(DatasetManifest, Vec<(String, Image)>)> {
    config.validate()?;
    let schema = config.schema();
    let assignments = [
        class_assignment(config, config.n_colors, 0),
        class_assignment(config, config.n_shapes, 1),
        class_assignment(config, config.n_patterns, 2),
        class_assignment(config, config.n_textures, 3),
    ];
    let rendered = parallel::map_range(Exec::default(), config.n_images, |i| {
        let scene = scene_for(config, &assignments, i);
        let mut rng = rng::rng_for(config.seed, stream::SYNTH_RENDER, (i as u64) | (1 << 40));
        let img = render_scene(&scene, config.image_size, config.style, &mut rng).quantized();
        (scene, img)
    });

    let mut records = Vec::with_capacity(config.n_images);
    let mut images = Vec::with_capacity(config.n_images);
    for (i, (scene, img)) in rendered.into_iter().enumerate() {
        let id = format!("{}{:06}", config.id_prefix, i);
        let mut rec = ImageRecord::unlabeled(id.clone(), format!("images/{id}.png"));
        rec.domain_tag = config.domain_tag.clone();
        let mut drop_rng = rng::rng_for(config.seed, stream::SYNTH_CLASSES, 1000 + i as u64);
        let labels: [(&str, Vec<usize>); 4] = [
            ("color", vec![scene.color]),
            ("shape", vec![scene.shape]),
            ("pattern", scene.patterns.clone()),
            ("texture", vec![scene.texture]),
        ];
        for (ti, (type_name, classes)) in labels.iter().enumerate() {
            if drop_rng.gen::<f64>() < config.label_drop_prob {
                continue;
            }
            for &c in classes {
                rec = rec.with_label(type_name, &schema.types[ti].classes[c]);
            }
        }
        records.push(rec);
        images.push((id, img));
    }
    let manifest = DatasetManifest::new(schema, records, ManifestKind::Labeled, base_dir)?;
    Ok((manifest, images))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    GaussianBlur,
    Brightness,
    Contrast,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    /// Magnitude for severities 0..=5; index 0 is the identity.
    pub fn table(self) -> [f32; 6] {
        match self {
            // noise standard deviation
            CorruptionKind::GaussianNoise => [0.0, 0.04, 0.08, 0.12, 0.18, 0.26],
            // blur sigma in pixels
            CorruptionKind::GaussianBlur => [0.0, 0.5, 0.8, 1.1, 1.5, 2.0],
            // additive brightness shift
            CorruptionKind::Brightness => [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            // contrast retention factor (1 = unchanged)
            CorruptionKind::Contrast => [1.0, 0.75, 0.55, 0.4, 0.3, 0.2],
            // block size; nested powers of two
            CorruptionKind::Pixelate => [1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
        }
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if severity > 5 {
            return Err(Error::InvalidArgument(format!(
                "corruption severity must be in 0..=5, got {severity}"
            )));
        }
        Ok(Self { kind, severity })
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.kind.name(), self.severity)
    }
}

/// Parses `kind:severity`, e.g. `gaussian_blur:3`.
impl std::str::FromStr for CorruptionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, sev) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("expected kind:severity, got `{s}`")))?;
        let sev: u8 = sev
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("invalid severity in `{s}`")))?;
        CorruptionSpec::new(kind.parse()?, sev)
    }
}

fn blur_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn blur(image: &Image, sigma: f32) -> Image {
    let k = blur_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (image.height as isize, image.width as isize);
    let mut tmp = image.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sx = (x + j as isize - r).clamp(0, w - 1);
                    acc += kv * image.get(y as usize, sx as usize, c);
                }
                let i = tmp.idx(y as usize, x as usize, c);
                tmp.data[i] = acc;
            }
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sy = (y + j as isize - r).clamp(0, h - 1);
                    acc += kv * tmp.get(sy as usize, x as usize, c);
                }
                let i = out.idx(y as usize, x as usize, c);
                out.data[i] = acc;
            }
        }
    }
    out
}

fn pixelate(image: &Image, block: usize) -> Image {
    let mut out = image.clone();
    for by in (0..image.height).step_by(block) {
        for bx in (0..image.width).step_by(block) {
            let ys = by..(by + block).min(image.height);
            let xs = bx..(bx + block).min(image.width);
            let n = (ys.len() * xs.len()) as f32;
            let mut mean = [0.0f32; 3];
            for y in ys.clone() {
                for x in xs.clone() {
                    let p = image.pixel(y, x);
                    for c in 0..3 {
                        mean[c] += p[c];
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for y in ys.clone() {
                for x in xs.clone() {
                    out.set_pixel(y, x, mean);
                }
            }
        }
    }
    out
}

/// Applies one corruption. Severity 0 returns the input unchanged.
pub fn corrupt_image(image: &Image, spec: CorruptionSpec, seed: u64) -> Result<Image> {
    if spec.severity > 5 {
        return Err(Error::InvalidArgument(format!(
            "corruption severity must be in 0..=5, got {}",
            spec.severity
        )));
    }
    if spec.severity == 0 {
        return Ok(image.clone());
    }
    let m = spec.kind.table()[spec.severity as usize];
    let mut out = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let mut rng = rng::rng_for(seed, stream::CORRUPT_PIXELS, 0);
            let mut out = image.clone();
            for v in &mut out.data {
                let z: f32 = StandardNormal.sample(&mut rng);
                *v += m * z;
            }
            out
        }
        CorruptionKind::GaussianBlur => blur(image, m),
        CorruptionKind::Brightness => {
            let mut out = image.clone();
            out.data.iter_mut().for_each(|v| *v += m);
            out
        }
        CorruptionKind::Contrast => {
            let mean = image.data.iter().sum::<f32>() / image.data.len() as f32;
            let mut out = image.clone();
            out.data.iter_mut().for_each(|v| *v = (*v - mean) * m + mean);
            out
        }
        CorruptionKind::Pixelate => pixelate(image, m as usize),
    };
    out.clamp_unit();
    Ok(out)
}

/// How corrupted copies are drawn.
#[derive(Debug, Clone, Copy)]
pub enum CorruptionSampling {
    /// `n` copies; record and spec each drawn uniformly per copy. Labels stripped.
    Uniform(usize),
    /// One copy per record with a uniformly drawn spec. Labels kept.
    OnePerRecord,
}

/// Corrupted copies of `manifest`'s images, kept in memory. Paths in the
/// returned manifest are relative to `base_dir`.
pub fn corrupt_in_memory(
    manifest: &DatasetManifest,
    bank: &ImageBank,
    specs: &[CorruptionSpec],
    sampling: CorruptionSampling,
    seed: u64,
    base_dir: &Path,
) -> Result<(DatasetManifest, Vec<(String, Image)>)> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("at least one corruption spec is required".into()));
    }
    let (count, keep_labels) = match sampling {
        CorruptionSampling::Uniform(n) => (n, false),
        CorruptionSampling::OnePerRecord => (manifest.len(), true),
    };
    if count > 0 && manifest.is_empty() {
        return Err(Error::EmptyData("cannot corrupt an empty manifest".into()));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..count)
        .map(|i| {
            let mut rng = rng::rng_for(seed, stream::CORRUPT_SAMPLE, i as u64);
            let rec = match sampling {
                CorruptionSampling::Uniform(_) => rng.gen_range(0..manifest.len()),
                CorruptionSampling::OnePerRecord => i,
            };
            (i, rec, rng.gen_range(0..specs.len()))
        })
        .collect();

    let made = parallel::try_map(Exec::default(), &jobs, |&(i, ri, si)| {
        let src = &manifest.records[ri];
        let spec = specs[si];
        let img = bank.get(&src.id)?;
        let out = corrupt_image(img, spec, rng::derive(seed, stream::CORRUPT_PIXELS, i as u64))?.quantized();
        let id = format!("{}~c{:06}-{}", src.id, i, spec.label());
        let record = ImageRecord {
            image_path: format!("images/{id}.png"),
            id: id.clone(),
            labels: if keep_labels { src.labels.clone() } else { Default::default() },
            domain_tag: src.domain_tag.clone(),
        };
        Ok((record, (id, out)))
    })?;
    let (records, images): (Vec<_>, Vec<_>) = made.into_iter().unzip();
    let kind = if keep_labels { manifest.kind } else { ManifestKind::Unlabeled };
    let out = DatasetManifest::new(manifest.schema.clone(), records, kind, base_dir)?;
    Ok((out, images))
}

/// Writes corrupted copies of `manifest`'s images under `out_dir`.
pub fn corrupt_dataset(
    manifest: &DatasetManifest,
    bank: &ImageBank,
    specs: &[CorruptionSpec],
    sampling: CorruptionSampling,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let (out, images) = corrupt_in_memory(manifest, bank, specs, sampling, seed, out_dir)?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let jobs: Vec<_> = out.records.iter().zip(&images).collect();
    let written = parallel::map(Exec::default(), &jobs, |(r, (_, img))| {
        img.save_png(&out_dir.join(&r.image_path))
    });
    written.into_iter().collect::<Result<Vec<_>>>()?;
    save_manifest(&out, &out_dir.join("manifest.jsonl"))?;
    Ok(out)
}

/// `sample_count` unlabeled corrupted copies, drawing (record, spec) uniformly.
pub fn corrupt_manifest(
    manifest: &DatasetManifest,
    bank: &ImageBank,
    specs: &[CorruptionSpec],
    sample_count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    corrupt_dataset(
        manifest,
        bank,
        specs,
        CorruptionSampling::Uniform(sample_count),
        seed,
        out_dir,
    )
}
