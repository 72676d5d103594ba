//! Core value types: images, masks, samples, datasets, triplets and the
//! training configuration.
//!
//! Rasters are stored planar (`channel, row, column`) in `f64`. All values
//! are immutable after construction.

mod config;

pub use config::{scaled_radius_range, Ablations, InnerPseudo, LabeledBudget, TrainingConfig};

use std::fmt;

use crate::{Error, Result};

/// Smallest accepted image side, in pixels.
pub const MIN_IMAGE_SIDE: usize = 8;

/// A `channels x height x width` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidValue("image needs at least one channel".into()));
        }
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::InvalidValue(format!(
                "image {height}x{width} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidValue(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    /// Builds an image from a per-pixel function `f(channel, row, col)`.
    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// One channel plane.
    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }
}

/// Whether a mask is binary ground truth or a soft prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hardness {
    Hard,
    Soft,
}

/// A single-channel `height x width` map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
    hardness: Hardness,
}

impl Mask {
    fn build(height: usize, width: usize, data: Vec<f64>, hardness: Hardness) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidValue("mask must be non-empty".into()));
        }
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!("{} values for a {height}x{width} mask", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidValue(format!("mask value {v} outside [0, 1]")));
        }
        if hardness == Hardness::Hard {
            if let Some(v) = data.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidValue(format!("hard mask contains {v}")));
            }
        }
        Ok(Self { height, width, data, hardness })
    }

    /// A binary mask; every value must be exactly 0 or 1.
    pub fn hard(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(height, width, data, Hardness::Hard)
    }

    pub fn soft(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(height, width, data, Hardness::Soft)
    }

    pub fn from_bits(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        Self::hard(height, width, bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        if value == 0.0 || value == 1.0 {
            Self::hard(height, width, vec![value; height * width])
        } else {
            Self::soft(height, width, vec![value; height * width])
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn hardness(&self) -> Hardness {
        self.hardness
    }

    pub fn is_hard(&self) -> bool {
        self.hardness == Hardness::Hard
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Hard mask with 1 where the value is `>= threshold`.
    pub fn binarize(&self, threshold: f64) -> Mask {
        let data = self.data.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect();
        Mask { height: self.height, width: self.width, data, hardness: Hardness::Hard }
    }

    /// Foreground indicator; requires a hard mask.
    pub fn bits(&self) -> Result<Vec<bool>> {
        if !self.is_hard() {
            return Err(Error::SoftMask);
        }
        Ok(self.data.iter().map(|&v| v == 1.0).collect())
    }

    /// Fraction of pixels with value `>= 0.5`.
    pub fn foreground_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v >= 0.5).count() as f64 / self.data.len() as f64
    }

    pub fn same_grid(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// `[1] - m`, preserving hardness.
pub fn complement(m: &Mask) -> Mask {
    Mask {
        height: m.height,
        width: m.width,
        data: m.data.iter().map(|&v| 1.0 - v).collect(),
        hardness: m.hardness,
    }
}

/// Pixel-wise product of every image channel with the mask.
pub fn masked_image(x: &Image, m: &Mask) -> Result<Image> {
    if x.height != m.height || x.width != m.width {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            x.height, x.width, m.height, m.width
        )));
    }
    let hw = x.height * x.width;
    let mut data = Vec::with_capacity(x.data.len());
    for c in 0..x.channels {
        data.extend(x.data[c * hw..(c + 1) * hw].iter().zip(&m.data).map(|(&p, &q)| p * q));
    }
    Ok(Image { channels: x.channels, height: x.height, width: x.width, data })
}

/// An image with its hard ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub mask: Mask,
}

impl LabeledSample {
    pub fn new(image: Image, mask: Mask) -> Result<Self> {
        if image.height != mask.height || image.width != mask.width {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} vs mask {}x{}",
                image.height, image.width, mask.height, mask.width
            )));
        }
        if !mask.is_hard() {
            return Err(Error::SoftMask);
        }
        Ok(Self { image, mask })
    }
}

/// The fully labeled source pool.
#[derive(Clone, Debug, Default)]
pub struct SourceDataset {
    samples: Vec<LabeledSample>,
    categories: Vec<Option<String>>,
    known: Vec<String>,
}

impl SourceDataset {
    /// `categories` is either empty (no metadata) or one entry per sample.
    pub fn new(samples: Vec<LabeledSample>, categories: Vec<Option<String>>) -> Result<Self> {
        let categories = if categories.is_empty() { vec![None; samples.len()] } else { categories };
        if categories.len() != samples.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} category labels for {} samples",
                categories.len(),
                samples.len()
            )));
        }
        let mut known: Vec<String> = categories.iter().flatten().cloned().collect();
        known.sort();
        known.dedup();
        Ok(Self { samples, categories, known })
    }

    /// Declares categories that may have no samples.
    pub fn with_known_categories(mut self, extra: impl IntoIterator<Item = String>) -> Self {
        self.known.extend(extra);
        self.known.sort();
        self.known.dedup();
        self
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn categories(&self) -> &[Option<String>] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_category_metadata(&self) -> bool {
        !self.known.is_empty() && self.categories.iter().all(Option::is_some)
    }

    /// Distinct category identifiers present in the samples, sorted.
    pub fn category_set(&self) -> Vec<String> {
        let mut set: Vec<String> = self.categories.iter().flatten().cloned().collect();
        set.sort();
        set.dedup();
        set
    }

    /// Every declared category, including empty ones, sorted.
    pub fn known_categories(&self) -> &[String] {
        &self.known
    }

    /// Number of samples labeled `category`.
    pub fn count(&self, category: &str) -> usize {
        self.categories.iter().filter(|c| c.as_deref() == Some(category)).count()
    }

    /// Keeps the samples for which `keep` holds; declared categories persist.
    pub fn filter(&self, mut keep: impl FnMut(&LabeledSample, Option<&str>) -> bool) -> Self {
        let (mut samples, mut categories) = (Vec::new(), Vec::new());
        for (s, c) in self.samples.iter().zip(&self.categories) {
            if keep(s, c.as_deref()) {
                samples.push(s.clone());
                categories.push(c.clone());
            }
        }
        Self { samples, categories, known: self.known.clone() }
    }
}

/// Target pool: a few labeled samples, many unlabeled images and a held-out
/// evaluation split.
///
/// The training path only sees [`TargetDataset::labeled`] and
/// [`TargetDataset::unlabeled`]. Masks of the unlabeled pool, and the whole
/// evaluation split, are reachable only through [`TargetDataset::evaluation`]
/// and [`TargetDataset::withheld`].
#[derive(Clone, Debug, Default)]
pub struct TargetDataset {
    labeled: Vec<LabeledSample>,
    unlabeled: Vec<Image>,
    withheld: Vec<Option<Mask>>,
    eval: Vec<LabeledSample>,
    categories: Vec<String>,
}

impl TargetDataset {
    pub fn new(
        labeled: Vec<LabeledSample>,
        unlabeled: Vec<Image>,
        withheld: Vec<Option<Mask>>,
        eval: Vec<LabeledSample>,
        categories: Vec<String>,
    ) -> Result<Self> {
        if !withheld.is_empty() && withheld.len() != unlabeled.len() {
            return Err(Error::DimensionMismatch("one withheld mask slot per unlabeled image".into()));
        }
        let withheld = if withheld.is_empty() { vec![None; unlabeled.len()] } else { withheld };
        let mut categories = categories;
        categories.sort();
        categories.dedup();
        Ok(Self { labeled, unlabeled, withheld, eval, categories })
    }

    pub fn labeled(&self) -> &[LabeledSample] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[Image] {
        &self.unlabeled
    }

    /// Held-out evaluation samples (never used for training).
    pub fn evaluation(&self) -> &[LabeledSample] {
        &self.eval
    }

    /// Ground-truth masks withheld from the unlabeled pool, when known.
    pub fn withheld(&self) -> &[Option<Mask>] {
        &self.withheld
    }

    /// Target category identifiers, sorted.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn with_evaluation(mut self, eval: Vec<LabeledSample>) -> Self {
        self.eval = eval;
        self
    }

    /// Number of training images (labeled plus unlabeled).
    pub fn train_len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Training image `i` over the concatenation labeled ++ unlabeled.
    pub fn train_image(&self, i: usize) -> &Image {
        if i < self.labeled.len() {
            &self.labeled[i].image
        } else {
            &self.unlabeled[i - self.labeled.len()]
        }
    }
}

/// Which critic a triplet is meant for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Outer,
    Inner,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Outer => "outer",
            Side::Inner => "inner",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripletKind {
    Real,
    Fake,
    Pseudo,
    Interpolated,
}

/// Critic input `[image, mask, mask * image]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub image: Image,
    pub mask: Mask,
    pub masked_image: Image,
    pub side: Side,
    pub kind: TripletKind,
}

impl Triplet {
    /// Builds a non-interpolated triplet; `masked_image` is derived.
    pub fn compose(image: Image, mask: Mask, side: Side, kind: TripletKind) -> Result<Self> {
        let masked_image = masked_image(&image, &mask)?;
        Ok(Self { image, mask, masked_image, side, kind })
    }

    /// Channel-concatenated encoding `(C + 1 + C) x H x W`.
    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.image.data.len() * 2 + self.mask.data.len());
        out.extend_from_slice(&self.image.data);
        out.extend_from_slice(&self.mask.data);
        out.extend_from_slice(&self.masked_image.data);
        out
    }

    pub fn channels(&self) -> usize {
        2 * self.image.channels + 1
    }
}
