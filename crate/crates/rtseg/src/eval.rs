//! Confusion-matrix accumulation and IoU / mIoU.
//!
//! Counts are aggregated over all images first and divided once at the end;
//! mIoU is never the mean of per-image IoUs. Merging per-image matrices is
//! elementwise and therefore order-independent, which makes parallel
//! accumulation safe.

use crate::error::{Error, Result};
use crate::{IGNORE_LABEL, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MiouRule {
    /// Mean over all 9 classes, background included.
    All9,
    /// Mean over the 8 foreground classes.
    Foreground8,
}

impl MiouRule {
    pub fn classes(self) -> std::ops::Range<usize> {
        match self {
            MiouRule::All9 => 0..NUM_CLASSES,
            MiouRule::Foreground8 => 1..NUM_CLASSES,
        }
    }
}

impl std::str::FromStr for MiouRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all9" => Ok(MiouRule::All9),
            "fg8" => Ok(MiouRule::Foreground8),
            other => Err(Error::config(format!(
                "unknown miou rule {other}; expected all9 or fg8"
            ))),
        }
    }
}

/// Pixel counts indexed `[ground truth][prediction]`, plus the number of
/// pixels whose label was the ignore value.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pixels_ignored: u64,
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tally one label/prediction grid pair. Pixels labeled with the ignore
    /// value count toward `pixels_ignored` only.
    pub fn accumulate(&mut self, labels: &[u8], preds: &[u8]) -> Result<()> {
        if labels.len() != preds.len() {
            return Err(Error::shape(format!(
                "accumulate: {} labels vs {} predictions",
                labels.len(),
                preds.len()
            )));
        }
        for (i, (&gt, &pred)) in labels.iter().zip(preds).enumerate() {
            if pred as usize >= NUM_CLASSES {
                return Err(Error::data(format!(
                    "prediction id {pred} at pixel {i} outside 0..{NUM_CLASSES}"
                )));
            }
            if gt == IGNORE_LABEL {
                self.pixels_ignored += 1;
                continue;
            }
            if gt as usize >= NUM_CLASSES {
                return Err(Error::data(format!(
                    "label id {gt} at pixel {i} outside 0..{NUM_CLASSES}"
                )));
            }
            self.counts[gt as usize][pred as usize] += 1;
        }
        Ok(())
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt][pred]
    }

    pub fn pixels_ignored(&self) -> u64 {
        self.pixels_ignored
    }

    pub fn total_counted(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Elementwise sum; the dataset-level matrix is the merge of per-image
    /// matrices in any order.
    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let mut out = self.clone();
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                out.counts[i][j] += other.counts[i][j];
            }
        }
        out.pixels_ignored += other.pixels_ignored;
        out
    }

    /// Per-class IoU = TP / (TP + FP + FN) from the aggregated counts.
    /// Classes absent from both labels and predictions (0/0) are undefined.
    pub fn iou(&self) -> [Option<f64>; NUM_CLASSES] {
        let mut out = [None; NUM_CLASSES];
        for (i, slot) in out.iter_mut().enumerate() {
            let tp = self.counts[i][i];
            let fne: u64 = (0..NUM_CLASSES).filter(|&j| j != i).map(|j| self.counts[i][j]).sum();
            let fpe: u64 = (0..NUM_CLASSES).filter(|&j| j != i).map(|j| self.counts[j][i]).sum();
            let denom = tp + fne + fpe;
            if denom > 0 {
                *slot = Some(tp as f64 / denom as f64);
            }
        }
        out
    }

    /// Mean of the defined per-class IoUs over the rule's class set;
    /// undefined classes are excluded from both numerator and count. `None`
    /// when no class in the set is defined.
    pub fn miou(&self, rule: MiouRule) -> Option<f64> {
        let iou = self.iou();
        let defined: Vec<f64> = rule.classes().filter_map(|c| iou[c]).collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }
}
