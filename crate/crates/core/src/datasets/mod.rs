//! Dataset ingestion, category exclusion, few-shot splitting and the
//! procedural textured-shapes benchmark.
//!
//! On disk a dataset is
//!
//! ```text
//! <root>/images/<stem>.png    8-bit RGB
//! <root>/masks/<stem>.png     8-bit grayscale, >= 128 is foreground (optional)
//! <root>/manifest.tsv         stem<TAB>category[<TAB>train|eval] (optional)
//! ```

mod synth;

pub use synth::{generate_synthetic, render_sample, write_synthetic, ShapeFamily, SynthSpec, TextureSpec};

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Image, LabeledSample, Mask, SourceDataset, TargetDataset};
use crate::{Error, Result};

/// Fraction of target samples reserved for evaluation when the manifest
/// does not assign splits.
pub const EVAL_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub stem: String,
    pub category: Option<String>,
    pub split: Option<Split>,
}

/// The entries of a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Reads `manifest.tsv` if present, otherwise lists `images/*.png`.
    pub fn read(root: &Path) -> Result<Self> {
        let tsv = root.join("manifest.tsv");
        let mut entries = Vec::new();
        if tsv.exists() {
            for (i, line) in fs::read_to_string(&tsv)?.lines().enumerate() {
                let line = line.trim_end_matches('\r');
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                let split = match cols.get(2).map(|s| s.trim()) {
                    None | Some("") => None,
                    Some("train") => Some(Split::Train),
                    Some("eval") => Some(Split::Eval),
                    Some(other) => {
                        return Err(Error::Config(format!("{}:{}: unknown split `{other}`", tsv.display(), i + 1)))
                    }
                };
                let category = cols.get(1).map(|c| c.trim().to_string()).filter(|c| !c.is_empty());
                entries.push(ManifestEntry { stem: cols[0].trim().to_string(), category, split });
            }
        } else {
            let dir = root.join("images");
            let mut stems = Vec::new();
            for e in fs::read_dir(&dir).map_err(|e| Error::Load(vec![(dir.clone(), e.to_string())]))? {
                let p = e?.path();
                if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
                    if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                        stems.push(s.to_string());
                    }
                }
            }
            stems.sort();
            entries = stems.into_iter().map(|stem| ManifestEntry { stem, category: None, split: None }).collect();
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.stem.clone())) {
            return Err(Error::Config(format!("duplicate stem `{}` in {}", dup.stem, root.display())));
        }
        Ok(Self { root: root.to_path_buf(), entries })
    }

    pub fn image_path(&self, stem: &str) -> PathBuf {
        self.root.join("images").join(format!("{stem}.png"))
    }

    pub fn mask_path(&self, stem: &str) -> PathBuf {
        self.root.join("masks").join(format!("{stem}.png"))
    }
}

/// One ingested entry.
#[derive(Clone, Debug)]
pub struct LoadedEntry {
    pub stem: String,
    pub image: Image,
    pub mask: Option<Mask>,
    pub category: Option<String>,
    pub split: Option<Split>,
}

/// Bilinear resize (pixel-centre aligned); identity when sizes agree.
pub fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        let py = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = py.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = py - y0 as f64;
        for j in 0..ow {
            let px = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = px.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = px - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
        }
    }
    out
}

pub fn resize_image(x: &Image, size: usize) -> Result<Image> {
    let (h, w) = (x.height(), x.width());
    let mut data = Vec::with_capacity(x.channels() * size * size);
    for c in 0..x.channels() {
        data.extend(resize_plane(x.plane(c), h, w, size, size));
    }
    Image::new(x.channels(), size, size, data)
}

/// Bilinear resize followed by re-binarization at 0.5.
pub fn resize_mask(m: &Mask, size: usize) -> Result<Mask> {
    if (m.height(), m.width()) == (size, size) {
        return Ok(m.binarize(0.5));
    }
    let plane = resize_plane(m.data(), m.height(), m.width(), size, size);
    Ok(Mask::soft(size, size, plane)?.binarize(0.5))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let err = |m: String| Error::Image { path: path.to_path_buf(), message: m };
    let img = image::open(path).map_err(|e| err(e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p[c] as f64 / 255.0;
        }
    }
    Image::new(3, h, w, data).map_err(|e| err(e.to_string()))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let err = |m: String| Error::Image { path: path.to_path_buf(), message: m };
    let img = image::open(path).map_err(|e| err(e.to_string()))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(err("empty mask".into()));
    }
    let data = img.pixels().map(|p| if p[0] >= 128 { 1.0 } else { 0.0 }).collect();
    Mask::hard(h, w, data).map_err(|e| err(e.to_string()))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_image(x: &Image, path: &Path) -> Result<()> {
    let (h, w) = (x.height() as u32, x.width() as u32);
    let img = RgbImage::from_fn(w, h, |xx, yy| {
        let px = |c: usize| to_u8(x.get(c.min(x.channels() - 1), yy as usize, xx as usize));
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes a mask as 8-bit grayscale (`round(255 v)`).
pub fn write_mask(m: &Mask, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| image::Luma([to_u8(m.get(y as usize, x as usize))]));
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Flags masks whose foreground covers under 0.5% or over 99.5% of the frame.
pub fn is_suspect(m: &Mask) -> bool {
    let f = m.foreground_fraction();
    !(0.005..=0.995).contains(&f)
}

/// Loads every manifest entry at `size x size`. Failures are collected and
/// reported together.
pub fn load_entries(manifest: &DatasetManifest, size: usize) -> Result<Vec<LoadedEntry>> {
    let mut out = Vec::with_capacity(manifest.entries.len());
    let mut errors = Vec::new();
    for e in &manifest.entries {
        let ip = manifest.image_path(&e.stem);
        let image = match read_image(&ip).and_then(|x| resize_image(&x, size)) {
            Ok(x) => x,
            Err(err) => {
                errors.push((ip, err.to_string()));
                continue;
            }
        };
        let mp = manifest.mask_path(&e.stem);
        let mask = if mp.exists() {
            match read_mask(&mp).and_then(|m| resize_mask(&m, size)) {
                Ok(m) => Some(m),
                Err(err) => {
                    errors.push((mp, err.to_string()));
                    continue;
                }
            }
        } else {
            None
        };
        if let Some(m) = &mask {
            if is_suspect(m) {
                warn!("{}: suspect mask ({:.2}% foreground)", e.stem, 100.0 * m.foreground_fraction());
            }
        }
        out.push(LoadedEntry { stem: e.stem.clone(), image, mask, category: e.category.clone(), split: e.split });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Load(errors))
    }
}

/// Loads a fully labeled source pool.
pub fn load_source(root: &Path, size: usize) -> Result<SourceDataset> {
    let manifest = DatasetManifest::read(root)?;
    let entries = load_entries(&manifest, size)?;
    let mut missing = Vec::new();
    let (mut samples, mut cats) = (Vec::new(), Vec::new());
    for e in entries {
        match e.mask {
            Some(m) => {
                samples.push(LabeledSample::new(e.image, m)?);
                cats.push(e.category);
            }
            None => missing.push((manifest.mask_path(&e.stem), "source sample has no mask".to_string())),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Load(missing));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(root.display().to_string()));
    }
    SourceDataset::new(samples, cats)
}

/// Deterministic 64-bit FNV-1a hash of a stem.
pub fn stem_hash(stem: &str) -> u64 {
    stem.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn is_eval_stem(stem: &str) -> bool {
    (stem_hash(stem) % 10_000) as f64 / 10_000.0 < EVAL_FRACTION
}

/// Splits loaded target entries: evaluation entries (by manifest split, or
/// by stem hash when absent) are held out; the remaining masked entries form
/// the few-shot pool and entries without masks are unlabeled.
pub fn split_target(entries: Vec<LoadedEntry>, budget: Option<usize>, seed: u64) -> Result<TargetDataset> {
    let (mut pool, mut unlabeled, mut eval, mut categories) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for e in entries {
        if let Some(c) = &e.category {
            categories.push(c.clone());
        }
        let held_out = match e.split {
            Some(s) => s == Split::Eval,
            None => is_eval_stem(&e.stem),
        };
        match (e.mask, held_out) {
            (Some(m), true) => eval.push(LabeledSample::new(e.image, m)?),
            (Some(m), false) => pool.push(LabeledSample::new(e.image, m)?),
            (None, _) => unlabeled.push(e.image),
        }
    }
    let budget = budget.unwrap_or(pool.len());
    let split = few_shot_split(pool, budget, seed)?;
    let (labeled, mut extra, mut withheld) = split.into_parts();
    extra.extend(unlabeled);
    withheld.resize(extra.len(), None);
    TargetDataset::new(labeled, extra, withheld, eval, categories)
}

/// Loads a target pool keeping `budget` labels (`None`: all of them).
pub fn load_target(root: &Path, size: usize, budget: Option<usize>, seed: u64) -> Result<TargetDataset> {
    let manifest = DatasetManifest::read(root)?;
    let entries = load_entries(&manifest, size)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset(root.display().to_string()));
    }
    split_target(entries, budget, seed)
}

/// Every masked entry of a directory, for scoring.
pub fn load_labeled(root: &Path, size: usize) -> Result<Vec<LabeledSample>> {
    let manifest = DatasetManifest::read(root)?;
    let mut out = Vec::new();
    for e in load_entries(&manifest, size)? {
        if let Some(m) = e.mask {
            out.push(LabeledSample::new(e.image, m)?);
        }
    }
    Ok(out)
}

/// Re-splits a target pool to `budget` labels. Every sample whose mask is
/// known (labeled or withheld) competes for the budget; images without any
/// mask stay unlabeled.
pub fn restrict_labels(target: &TargetDataset, budget: usize, seed: u64) -> Result<TargetDataset> {
    let mut pool: Vec<LabeledSample> = target.labeled().to_vec();
    let mut maskless = Vec::new();
    for (x, m) in target.unlabeled().iter().zip(target.withheld()) {
        match m {
            Some(m) => pool.push(LabeledSample::new(x.clone(), m.clone())?),
            None => maskless.push(x.clone()),
        }
    }
    let (labeled, mut unlabeled, mut withheld) = few_shot_split(pool, budget, seed)?.into_parts();
    unlabeled.extend(maskless);
    withheld.resize(unlabeled.len(), None);
    TargetDataset::new(labeled, unlabeled, withheld, target.evaluation().to_vec(), target.categories().to_vec())
}

/// Removes every sample of `category` from the source pool.
pub fn exclude_category(source: &SourceDataset, category: &str) -> Result<SourceDataset> {
    if !source.has_category_metadata() {
        return Err(Error::Config("source pool carries no category metadata".into()));
    }
    if !source.known_categories().iter().any(|c| c == category) {
        return Err(Error::UnknownCategory(category.to_string()));
    }
    let out = source.filter(|_, c| c != Some(category));
    info!("excluded category `{category}`: {} -> {} samples", source.len(), out.len());
    Ok(out)
}

/// A pool split into labeled and unlabeled parts.
pub struct FewShotSplit {
    labeled: Vec<LabeledSample>,
    unlabeled: Vec<Image>,
    withheld: Vec<Option<Mask>>,
}

impl FewShotSplit {
    fn into_parts(self) -> (Vec<LabeledSample>, Vec<Image>, Vec<Option<Mask>>) {
        (self.labeled, self.unlabeled, self.withheld)
    }

    pub fn into_target(self, eval: Vec<LabeledSample>, categories: Vec<String>) -> Result<TargetDataset> {
        TargetDataset::new(self.labeled, self.unlabeled, self.withheld, eval, categories)
    }
}

/// Selects `budget` labeled samples with a seeded shuffle; the remaining
/// samples lose their masks for training purposes.
pub fn few_shot_split(pool: Vec<LabeledSample>, budget: usize, seed: u64) -> Result<FewShotSplit> {
    if budget > pool.len() {
        return Err(Error::BudgetExceedsPool { budget, pool: pool.len() });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chosen: std::collections::HashSet<usize> = order[..budget].iter().copied().collect();
    let (mut labeled, mut unlabeled, mut withheld) = (Vec::new(), Vec::new(), Vec::new());
    for (i, s) in pool.into_iter().enumerate() {
        if chosen.contains(&i) {
            labeled.push(s);
        } else {
            unlabeled.push(s.image);
            withheld.push(Some(s.mask));
        }
    }
    Ok(FewShotSplit { labeled, unlabeled, withheld })
}
