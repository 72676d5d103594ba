//! Procedural textured shapes on textured backgrounds.
//!
//! Each shape family is a category. Every image draws a foreground and a
//! background texture: a base colour plus a sum of random plane waves whose
//! spatial frequencies lie in a family-independent band, with distinct bands
//! for the object and the background. Masks are the exact support of the
//! shape predicate evaluated at pixel centres.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_image, write_mask};
use crate::datamodel::{Image, LabeledSample, Mask, SourceDataset, TargetDataset};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    Ellipse,
    /// Regular convex polygon with `k` vertices.
    Polygon(u32),
    Star,
    Annulus,
    Blob,
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ellipse => f.write_str("ellipse"),
            Self::Polygon(k) => write!(f, "polygon-{k}"),
            Self::Star => f.write_str("star"),
            Self::Annulus => f.write_str("annulus"),
            Self::Blob => f.write_str("blob"),
        }
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ellipse" => Ok(Self::Ellipse),
            "star" => Ok(Self::Star),
            "annulus" => Ok(Self::Annulus),
            "blob" => Ok(Self::Blob),
            other => match other.strip_prefix("polygon-").map(str::parse::<u32>) {
                Some(Ok(k)) if k >= 3 => Ok(Self::Polygon(k)),
                _ => Err(Error::Config(format!("unknown shape family `{other}`"))),
            },
        }
    }
}

/// Texture distribution shared by all families.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureSpec {
    /// Spatial-frequency band of the object texture, cycles per pixel.
    pub fg_band: (f64, f64),
    pub bg_band: (f64, f64),
    /// Plane waves per texture.
    pub components: usize,
    /// Texture amplitude around the base colour.
    pub amplitude: f64,
    /// Range of each base-colour channel.
    pub color_range: (f64, f64),
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self { fg_band: (0.14, 0.28), bg_band: (0.02, 0.07), components: 6, amplitude: 0.22, color_range: (0.2, 0.8) }
    }
}

/// Benchmark description. The last family is the held-out target category.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub families: Vec<ShapeFamily>,
    pub samples_per_category: usize,
    pub target_train: usize,
    pub target_eval: usize,
    pub image_size: usize,
    pub seed: u64,
    pub texture: TextureSpec,
    /// Allowed foreground fraction of the frame.
    pub area_range: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            families: vec![ShapeFamily::Ellipse, ShapeFamily::Polygon(5), ShapeFamily::Star, ShapeFamily::Blob],
            samples_per_category: 500,
            target_train: 510,
            target_eval: 100,
            image_size: 64,
            seed: 0,
            texture: TextureSpec::default(),
            area_range: (0.10, 0.60),
        }
    }
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")));
    match parts.as_slice() {
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(Error::Config(format!("`{key}` needs two comma-separated numbers"))),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

impl SynthSpec {
    pub fn n_categories(&self) -> usize {
        self.families.len()
    }

    pub fn target_family(&self) -> ShapeFamily {
        *self.families.last().expect("validated spec has families")
    }

    pub fn source_families(&self) -> &[ShapeFamily] {
        &self.families[..self.families.len() - 1]
    }

    /// Parses `key = value` lines; omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "families" => s.families = v.split(',').map(str::parse).collect::<Result<_>>()?,
                "samples_per_category" => s.samples_per_category = num(k, v)?,
                "target_train" => s.target_train = num(k, v)?,
                "target_eval" => s.target_eval = num(k, v)?,
                "image_size" => s.image_size = num(k, v)?,
                "seed" => s.seed = num(k, v)?,
                "fg_band" => s.texture.fg_band = pair(k, v)?,
                "bg_band" => s.texture.bg_band = pair(k, v)?,
                "components" => s.texture.components = num(k, v)?,
                "amplitude" => s.texture.amplitude = num(k, v)?,
                "color_range" => s.texture.color_range = pair(k, v)?,
                "area_range" => s.area_range = pair(k, v)?,
                other => return Err(Error::UnknownKey(other.to_string())),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let t = &self.texture;
        let fams: Vec<String> = self.families.iter().map(ToString::to_string).collect();
        let mut out = String::new();
        let _ = writeln!(out, "families = {}", fams.join(","));
        let _ = writeln!(out, "samples_per_category = {}", self.samples_per_category);
        let _ = writeln!(out, "target_train = {}", self.target_train);
        let _ = writeln!(out, "target_eval = {}", self.target_eval);
        let _ = writeln!(out, "image_size = {}", self.image_size);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "fg_band = {},{}", t.fg_band.0, t.fg_band.1);
        let _ = writeln!(out, "bg_band = {},{}", t.bg_band.0, t.bg_band.1);
        let _ = writeln!(out, "components = {}", t.components);
        let _ = writeln!(out, "amplitude = {}", t.amplitude);
        let _ = writeln!(out, "color_range = {},{}", t.color_range.0, t.color_range.1);
        let _ = writeln!(out, "area_range = {},{}", self.area_range.0, self.area_range.1);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.families.len() < 2 {
            return bad("need at least two shape families");
        }
        for (i, f) in self.families.iter().enumerate() {
            if self.families[..i].contains(f) {
                return bad("shape families must be pairwise distinct");
            }
        }
        if self.image_size < crate::datamodel::MIN_IMAGE_SIDE {
            return bad("image_size too small");
        }
        let (lo, hi) = self.area_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad("area_range must satisfy 0 < lo < hi < 1");
        }
        let t = &self.texture;
        for (a, b) in [t.fg_band, t.bg_band] {
            if !(0.0 <= a && a <= b && b <= 0.5) {
                return bad("frequency bands must lie within [0, 0.5] cycles per pixel");
            }
        }
        let (c0, c1) = t.color_range;
        if !(0.0 <= c0 && c0 <= c1 && c1 <= 1.0) || !(t.amplitude >= 0.0) || t.components == 0 {
            return bad("invalid texture parameters");
        }
        Ok(())
    }
}

/// A shape instance: an inside test over continuous pixel coordinates.
#[derive(Clone, Debug)]
struct Shape {
    family: ShapeFamily,
    cy: f64,
    cx: f64,
    rot: f64,
    /// Anisotropic scale of the local frame.
    sy: f64,
    sx: f64,
    radius: f64,
    /// Family-specific parameters.
    extra: [f64; 6],
}

impl Shape {
    fn draw(family: ShapeFamily, s: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut sh = Shape {
            family,
            cy: s * rng.random_range(0.32..0.68),
            cx: s * rng.random_range(0.32..0.68),
            rot: rng.random_range(0.0..2.0 * PI),
            sy: rng.random_range(0.8..1.25),
            sx: rng.random_range(0.8..1.25),
            radius: 0.0,
            extra: [0.0; 6],
        };
        match family {
            ShapeFamily::Ellipse => {
                sh.radius = s * rng.random_range(0.18..0.42);
                sh.sy = rng.random_range(0.55..1.0);
                sh.sx = 1.0 / sh.sy.sqrt();
            }
            ShapeFamily::Polygon(_) => sh.radius = s * rng.random_range(0.22..0.46),
            ShapeFamily::Star => {
                sh.radius = s * rng.random_range(0.3..0.5);
                sh.extra[0] = rng.random_range(0.4..0.6);
            }
            ShapeFamily::Annulus => {
                sh.radius = s * rng.random_range(0.26..0.46);
                sh.extra[0] = rng.random_range(0.35..0.6);
            }
            ShapeFamily::Blob => {
                sh.radius = s * rng.random_range(0.2..0.42);
                for j in 0..3 {
                    sh.extra[2 * j] = rng.random_range(-0.18..0.18);
                    sh.extra[2 * j + 1] = rng.random_range(0.0..2.0 * PI);
                }
            }
        }
        sh
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (sn, cs) = self.rot.sin_cos();
        let u = (cs * dx + sn * dy) / self.sx;
        let v = (-sn * dx + cs * dy) / self.sy;
        let rho = (u * u + v * v).sqrt();
        let phi = v.atan2(u);
        let r = self.radius;
        match self.family {
            ShapeFamily::Ellipse => rho <= r,
            ShapeFamily::Polygon(k) => {
                let sector = 2.0 * PI / k as f64;
                let a = phi.rem_euclid(sector) - sector / 2.0;
                rho * a.cos() <= r * (sector / 2.0).cos()
            }
            ShapeFamily::Star => {
                let u = (5.0 * phi / (2.0 * PI)).rem_euclid(1.0);
                let tri = (2.0 * u - 1.0).abs();
                rho <= r * (self.extra[0] + (1.0 - self.extra[0]) * tri)
            }
            ShapeFamily::Annulus => rho <= r && rho >= r * self.extra[0],
            ShapeFamily::Blob => {
                let e = &self.extra;
                let wobble: f64 = (0..3).map(|j| e[2 * j] * ((j as f64 + 2.0) * phi + e[2 * j + 1]).cos()).sum();
                rho <= r * (1.0 + wobble)
            }
        }
    }

    fn raster(&self, n: usize) -> Vec<bool> {
        (0..n * n).map(|i| self.contains((i / n) as f64 + 0.5, (i % n) as f64 + 0.5)).collect()
    }
}

struct Texture {
    base: [f64; 3],
    tint: [f64; 3],
    waves: Vec<(f64, f64, f64)>,
    gain: f64,
}

impl Texture {
    fn draw(band: (f64, f64), spec: &TextureSpec, rng: &mut ChaCha8Rng) -> Self {
        let (c0, c1) = spec.color_range;
        let mut col = || if c1 > c0 { rng.random_range(c0..c1) } else { c0 };
        let base = [col(), col(), col()];
        let tint = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)];
        let waves = (0..spec.components)
            .map(|_| {
                let f = if band.1 > band.0 { rng.random_range(band.0..band.1) } else { band.0 };
                let a = rng.random_range(0.0..PI);
                let p = rng.random_range(0.0..2.0 * PI);
                (2.0 * PI * f * a.sin(), 2.0 * PI * f * a.cos(), p)
            })
            .collect();
        Self { base, tint, waves, gain: spec.amplitude * (2.0 / spec.components as f64).sqrt() }
    }

    fn value(&self, c: usize, y: f64, x: f64) -> f64 {
        let field: f64 = self.waves.iter().map(|&(ky, kx, p)| (ky * y + kx * x + p).cos()).sum();
        self.base[c] + self.gain * self.tint[c] * field
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn sample_seed(seed: u64, family: usize, index: usize) -> u64 {
    let mut z = seed ^ ((family as u64) << 40) ^ index as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Renders one sample; also returns the shape for recount checks.
fn render(spec: &SynthSpec, family_index: usize, index: usize) -> Result<(LabeledSample, Vec<bool>)> {
    let n = spec.image_size;
    let family = spec.families[family_index];
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, family_index, index));
    let (lo, hi) = spec.area_range;
    let bits = (0..1000)
        .find_map(|_| {
            let bits = Shape::draw(family, n as f64, &mut rng).raster(n);
            let frac = bits.iter().filter(|&&b| b).count() as f64 / (n * n) as f64;
            (lo..=hi).contains(&frac).then_some(bits)
        })
        .ok_or_else(|| Error::Config(format!("cannot place a {family} covering {lo}..{hi} of the frame")))?;
    let fg = Texture::draw(spec.texture.fg_band, &spec.texture, &mut rng);
    let bg = Texture::draw(spec.texture.bg_band, &spec.texture, &mut rng);
    let image = Image::from_fn(3, n, n, |c, y, x| {
        let t = if bits[y * n + x] { &fg } else { &bg };
        quantize(t.value(c, y as f64, x as f64))
    })?;
    let mask = Mask::from_bits(n, n, &bits)?;
    Ok((LabeledSample::new(image, mask)?, bits))
}

/// Renders the sample `index` of family `family_index` with its raw
/// shape-predicate raster.
pub fn render_sample(spec: &SynthSpec, family_index: usize, index: usize) -> Result<(LabeledSample, Vec<bool>)> {
    spec.validate()?;
    render(spec, family_index, index)
}

/// Source pool over all but the last family; target pool of the last family
/// with every training sample labeled (see
/// [`crate::datasets::restrict_labels`]) plus an evaluation split.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(SourceDataset, TargetDataset)> {
    spec.validate()?;
    let (mut samples, mut cats) = (Vec::new(), Vec::new());
    for (fi, fam) in spec.source_families().iter().enumerate() {
        for i in 0..spec.samples_per_category {
            samples.push(render(spec, fi, i)?.0);
            cats.push(Some(fam.to_string()));
        }
    }
    let source = SourceDataset::new(samples, cats)?
        .with_known_categories(spec.source_families().iter().map(ToString::to_string));
    let ti = spec.families.len() - 1;
    let train = (0..spec.target_train).map(|i| render(spec, ti, i).map(|s| s.0)).collect::<Result<Vec<_>>>()?;
    let eval = (0..spec.target_eval)
        .map(|i| render(spec, ti, spec.target_train + i).map(|s| s.0))
        .collect::<Result<Vec<_>>>()?;
    let target = TargetDataset::new(train, vec![], vec![], eval, vec![spec.target_family().to_string()])?;
    Ok((source, target))
}

fn write_split(root: &Path, rows: &[(String, String, Option<&str>, &LabeledSample)]) -> Result<()> {
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("masks"))?;
    let mut manifest = String::new();
    for (stem, cat, split, s) in rows {
        write_image(&s.image, &root.join("images").join(format!("{stem}.png")))?;
        write_mask(&s.mask, &root.join("masks").join(format!("{stem}.png")))?;
        match split {
            Some(sp) => writeln!(manifest, "{stem}\t{cat}\t{sp}"),
            None => writeln!(manifest, "{stem}\t{cat}"),
        }
        .expect("string write");
    }
    fs::write(root.join("manifest.tsv"), manifest)?;
    Ok(())
}

/// Writes `<out>/source` and `<out>/target` directory datasets plus
/// `<out>/synth.txt`. Returns per-family sample counts.
pub fn write_synthetic(spec: &SynthSpec, out: &Path) -> Result<Vec<(String, usize)>> {
    let (source, target) = generate_synthetic(spec)?;
    let mut counts = Vec::new();
    let rows: Vec<_> = source
        .samples()
        .iter()
        .zip(source.categories())
        .enumerate()
        .map(|(i, (s, c))| {
            let c = c.clone().expect("synthetic samples are categorized");
            (format!("{c}_{i:05}"), c, None, s)
        })
        .collect();
    for f in spec.source_families() {
        counts.push((f.to_string(), source.count(&f.to_string())));
    }
    write_split(&out.join("source"), &rows)?;
    let cat = spec.target_family().to_string();
    let mut rows = Vec::new();
    for (i, s) in target.labeled().iter().enumerate() {
        rows.push((format!("{cat}_{i:05}"), cat.clone(), Some("train"), s));
    }
    let off = target.labeled().len();
    for (i, s) in target.evaluation().iter().enumerate() {
        rows.push((format!("{cat}_{:05}", off + i), cat.clone(), Some("eval"), s));
    }
    counts.push((cat, rows.len()));
    write_split(&out.join("target"), &rows)?;
    fs::write(out.join("synth.txt"), spec.to_text())?;
    Ok(counts)
}
