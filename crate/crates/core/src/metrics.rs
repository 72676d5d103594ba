//! Pixel accuracy, mean pixel accuracy, mean IoU and frequency-weighted IoU
//! over binary masks.

use serde::{Deserialize, Serialize};

use crate::datamodel::{Image, LabeledSample, Mask};
use crate::{Error, Result};

/// Counts indexed `[ground truth][prediction]`, background = 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

/// The four scores, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub pa: f64,
    pub mpa: f64,
    pub miou: f64,
    pub fwiou: f64,
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Adds every pixel of `pred`, binarized at `threshold`, against `gt`.
    pub fn accumulate(&mut self, pred: &Mask, gt: &Mask, threshold: f64) -> Result<()> {
        if !pred.same_grid(gt) {
            return Err(Error::DimensionMismatch("prediction and ground truth differ in size".into()));
        }
        if !gt.is_hard() {
            return Err(Error::SoftMask);
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.counts[(g == 1.0) as usize][(p >= threshold) as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..2 {
            for j in 0..2 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    pub fn scores(&self) -> Result<Scores> {
        let total = self.total();
        if total == 0 {
            return Err(Error::InvalidValue("empty confusion matrix".into()));
        }
        let c = &self.counts;
        let n = total as f64;
        let pa = (c[0][0] + c[1][1]) as f64 / n;
        let (mut acc, mut iou, mut fw, mut present) = (0.0, 0.0, 0.0, 0);
        for k in 0..2 {
            let gt = c[k][0] + c[k][1];
            if gt == 0 {
                continue;
            }
            let tp = c[k][k] as f64;
            let pred = c[0][k] + c[1][k];
            let u = (gt + pred) as f64 - tp;
            let class_iou = tp / u;
            present += 1;
            acc += tp / gt as f64;
            iou += class_iou;
            fw += gt as f64 / n * class_iou;
        }
        Ok(Scores { pa, mpa: acc / present as f64, miou: iou / present as f64, fwiou: fw })
    }
}

/// Confusion of `predict` over labeled samples at threshold 0.5.
pub fn evaluate(samples: &[LabeledSample], mut predict: impl FnMut(&[&Image]) -> Result<Vec<Mask>>) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new();
    for chunk in samples.chunks(16) {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        for (p, s) in predict(&images)?.iter().zip(chunk) {
            cm.accumulate(p, &s.mask, 0.5)?;
        }
    }
    Ok(cm)
}
