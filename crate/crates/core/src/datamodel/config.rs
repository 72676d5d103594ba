use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ablation switches. All off is the full method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub no_self_sup: bool,
    pub no_pseudo: bool,
    pub no_inner: bool,
    pub no_outer: bool,
    pub single_discriminator: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 5] = ["no_self_sup", "no_pseudo", "no_inner", "no_outer", "single_discriminator"];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Both critics disabled: reconstruction plus self-supervision only.
    pub fn no_critics(&self) -> bool {
        self.no_inner && self.no_outer
    }

    fn flags(&self) -> [bool; 5] {
        [self.no_self_sup, self.no_pseudo, self.no_inner, self.no_outer, self.single_discriminator]
    }

    pub fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "no_self_sup" => self.no_self_sup = true,
            "no_pseudo" => self.no_pseudo = true,
            "no_inner" => self.no_inner = true,
            "no_outer" => self.no_outer = true,
            "single_discriminator" => self.single_discriminator = true,
            other => return Err(Error::Config(format!("unknown ablation flag `{other}`"))),
        }
        Ok(())
    }
}

impl FromStr for Ablations {
    type Err = Error;

    /// Comma-separated flag names; empty or `none` means no ablation.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = Self::default();
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(out);
        }
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            out.set(name)?;
        }
        Ok(out)
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Self::NAMES.iter().zip(self.flags()).filter(|(_, on)| *on).map(|(n, _)| *n).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// Morphology applied to the complemented source mask for the inner pseudo
/// triplet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerPseudo {
    /// Dilate the background: it leaks object pixels.
    #[default]
    Dilate,
    /// Erode the background instead.
    Erode,
}

impl FromStr for InnerPseudo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dilate" => Ok(Self::Dilate),
            "erode" => Ok(Self::Erode),
            other => Err(Error::Config(format!("inner_pseudo must be `dilate` or `erode`, got `{other}`"))),
        }
    }
}

impl fmt::Display for InnerPseudo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dilate => "dilate",
            Self::Erode => "erode",
        })
    }
}

/// Number of target samples that keep their labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabeledBudget {
    Count(usize),
    /// Every training sample is labeled.
    All,
}

impl LabeledBudget {
    pub fn resolve(self, pool: usize) -> usize {
        match self {
            Self::Count(n) => n,
            Self::All => pool,
        }
    }
}

impl FromStr for LabeledBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Self::All),
            v => v
                .parse()
                .map(Self::Count)
                .map_err(|_| Error::Config(format!("labeled_budget must be an integer or `all`, got `{v}`"))),
        }
    }
}

impl fmt::Display for LabeledBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Count(n) => write!(f, "{n}"),
            Self::All => f.write_str("all"),
        }
    }
}

/// Every scalar that shapes a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lambda_gp: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    pub adam_alpha: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub tau: f64,
    pub eta: f64,
    pub radius_min: usize,
    pub radius_max: usize,
    pub image_size: usize,
    pub seed: u64,
    pub ablation: Ablations,
    pub labeled_budget: LabeledBudget,

    /// Laplace smoothing parameter. Carried for completeness; no loss reads it.
    pub xi: f64,
    /// Outer iterations (n_critic critic updates plus one generator update each).
    pub steps: u64,
    pub inner_pseudo: InnerPseudo,
    pub seg_widths: Vec<usize>,
    pub critic_widths: Vec<usize>,
    /// Checkpoint period in outer iterations; 0 disables.
    pub checkpoint_every: u64,
    /// Validation period in outer iterations; 0 disables early stopping.
    pub eval_every: u64,
    pub patience: u64,
}

/// The radius band `[max(1, round(0.04 s)), round(0.21 s)]` for side `s`.
pub fn scaled_radius_range(image_size: usize) -> (usize, usize) {
    let s = image_size as f64;
    let lo = ((0.04 * s).round() as usize).max(1);
    let hi = ((0.21 * s).round() as usize).max(lo);
    (lo, hi)
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let image_size = 128;
        let (radius_min, radius_max) = scaled_radius_range(image_size);
        Self {
            lambda_gp: 10.0,
            n_critic: 5,
            batch_size: 64,
            adam_alpha: 1e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            tau: 1.0,
            eta: 1.0,
            radius_min,
            radius_max,
            image_size,
            seed: 0,
            ablation: Ablations::none(),
            labeled_budget: LabeledBudget::Count(10),
            xi: 1.0,
            steps: 1000,
            inner_pseudo: InnerPseudo::Dilate,
            seg_widths: vec![16, 32, 64, 128],
            critic_widths: vec![16, 32, 64, 128, 128],
            checkpoint_every: 0,
            eval_every: 0,
            patience: 10,
        }
    }
}

const REQUIRED: [&str; 14] = [
    "lambda_gp",
    "n_critic",
    "batch_size",
    "adam_alpha",
    "adam_beta1",
    "adam_beta2",
    "tau",
    "eta",
    "radius_min",
    "radius_max",
    "image_size",
    "seed",
    "ablation",
    "labeled_budget",
];

const OPTIONAL: [&str; 8] =
    ["xi", "steps", "inner_pseudo", "seg_widths", "critic_widths", "checkpoint_every", "eval_every", "patience"];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_widths(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|w| parse_num(key, w.trim())).collect()
}

fn join(ws: &[usize]) -> String {
    ws.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainingConfig {
    /// Parses `key = value` lines. `#` starts a comment. Every core
    /// hyperparameter must be present; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let k = k.trim();
            if !REQUIRED.contains(&k) && !OPTIONAL.contains(&k) {
                return Err(Error::UnknownKey(k.to_string()));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{k}`")));
            }
        }
        let missing: Vec<String> = REQUIRED.iter().filter(|k| !entries.contains_key(**k)).map(|k| k.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingKeys(missing));
        }
        let mut cfg = Self::default();
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "lambda_gp" => self.lambda_gp = parse_num(key, v)?,
            "n_critic" => self.n_critic = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "adam_alpha" => self.adam_alpha = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "radius_min" => self.radius_min = parse_num(key, v)?,
            "radius_max" => self.radius_max = parse_num(key, v)?,
            "image_size" => self.image_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "ablation" => self.ablation = v.parse()?,
            "labeled_budget" => self.labeled_budget = v.parse()?,
            "xi" => self.xi = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "inner_pseudo" => self.inner_pseudo = v.parse()?,
            "seg_widths" => self.seg_widths = parse_widths(key, v)?,
            "critic_widths" => self.critic_widths = parse_widths(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Renders the config in the format accepted by [`TrainingConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("lambda_gp", self.lambda_gp.to_string());
        put("n_critic", self.n_critic.to_string());
        put("batch_size", self.batch_size.to_string());
        put("adam_alpha", self.adam_alpha.to_string());
        put("adam_beta1", self.adam_beta1.to_string());
        put("adam_beta2", self.adam_beta2.to_string());
        put("tau", self.tau.to_string());
        put("eta", self.eta.to_string());
        put("radius_min", self.radius_min.to_string());
        put("radius_max", self.radius_max.to_string());
        put("image_size", self.image_size.to_string());
        put("seed", self.seed.to_string());
        put("ablation", self.ablation.to_string());
        put("labeled_budget", self.labeled_budget.to_string());
        put("xi", self.xi.to_string());
        put("steps", self.steps.to_string());
        put("inner_pseudo", self.inner_pseudo.to_string());
        put("seg_widths", join(&self.seg_widths));
        put("critic_widths", join(&self.critic_widths));
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("eval_every", self.eval_every.to_string());
        put("patience", self.patience.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda_gp.is_finite() && self.lambda_gp >= 0.0) {
            return bad(format!("lambda_gp must be >= 0, got {}", self.lambda_gp));
        }
        if self.n_critic < 1 {
            return bad("n_critic must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.adam_alpha.is_finite() && self.adam_alpha > 0.0) {
            return bad(format!("adam_alpha must be > 0, got {}", self.adam_alpha));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        for (name, v) in [("tau", self.tau), ("eta", self.eta), ("xi", self.xi)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.image_size < super::MIN_IMAGE_SIDE {
            return bad(format!("image_size must be >= {}", super::MIN_IMAGE_SIDE));
        }
        if !(1 <= self.radius_min && self.radius_min <= self.radius_max && 2 * self.radius_max < self.image_size) {
            return bad(format!(
                "radius range must satisfy 1 <= {} <= {} < {}/2",
                self.radius_min, self.radius_max, self.image_size
            ));
        }
        if self.seg_widths.is_empty() || self.seg_widths.contains(&0) {
            return bad("seg_widths must be a non-empty list of positive widths".into());
        }
        let levels = self.seg_widths.len() as u32 - 1;
        if self.image_size % (1usize << levels) != 0 {
            return bad(format!("image_size must be divisible by {} for {} encoder levels", 1usize << levels, levels + 1));
        }
        if self.critic_widths.is_empty() || self.critic_widths.contains(&0) {
            return bad("critic_widths must be a non-empty list of positive widths".into());
        }
        Ok(())
    }
}
