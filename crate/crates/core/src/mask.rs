//! Tri-valued pixel masks shared by indices, refiner, segmentation and
//! metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskLabel {
    Water,
    NonWater,
    /// Pixel excluded from losses and metrics.
    Ignore,
}

/// Per-pixel labels in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<MaskLabel>,
}

impl Mask {
    pub fn new(width: usize, height: usize, labels: Vec<MaskLabel>) -> Self {
        assert_eq!(labels.len(), width * height, "mask label count mismatch");
        Mask { width, height, labels }
    }

    pub fn filled(width: usize, height: usize, label: MaskLabel) -> Self {
        Mask {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn label_at(&self, x: usize, y: usize) -> MaskLabel {
        self.labels[y * self.width + x]
    }

    /// Binary mask from a probability plane thresholded at 0.5.
    pub fn from_probabilities(width: usize, height: usize, probs: &[f64]) -> Self {
        let labels = probs
            .iter()
            .map(|p| if *p >= 0.5 { MaskLabel::Water } else { MaskLabel::NonWater })
            .collect();
        Mask::new(width, height, labels)
    }

    pub fn water_fraction(&self) -> f64 {
        let scored = self.labels.iter().filter(|l| **l != MaskLabel::Ignore).count();
        if scored == 0 {
            return 0.0;
        }
        let water = self.labels.iter().filter(|l| **l == MaskLabel::Water).count();
        water as f64 / scored as f64
    }

    /// Fraction of pixels where both masks carry a non-ignore label and agree.
    pub fn agreement(&self, other: &Mask) -> f64 {
        let mut same = 0usize;
        let mut scored = 0usize;
        for (a, b) in self.labels.iter().zip(&other.labels) {
            if *a == MaskLabel::Ignore || *b == MaskLabel::Ignore {
                continue;
            }
            scored += 1;
            if a == b {
                same += 1;
            }
        }
        if scored == 0 {
            0.0
        } else {
            same as f64 / scored as f64
        }
    }
}
