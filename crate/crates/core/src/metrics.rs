//! Confusion-matrix evaluation: pixel accuracy, mean IoU and
//! frequency-weighted IoU.

use serde::{Deserialize, Serialize};

use crate::mask::{Mask, MaskLabel};

/// Binary confusion matrix. `counts[i][j]` is the number of pixels of true
/// class `i` predicted as class `j`, with class 0 = non-water and class 1 =
/// water. Ignore pixels in the truth mask are never counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix { counts }
    }

    fn class_of(label: MaskLabel) -> Option<usize> {
        match label {
            MaskLabel::NonWater => Some(0),
            MaskLabel::Water => Some(1),
            MaskLabel::Ignore => None,
        }
    }

    /// Accumulate one prediction/truth pair. Ignore pixels (in either mask)
    /// contribute nothing; accumulation is associative, so tiles can be
    /// merged in any order.
    pub fn accumulate(&mut self, pred: &Mask, truth: &Mask) {
        assert_eq!(pred.labels.len(), truth.labels.len(), "mask size mismatch");
        for (p, t) in pred.labels.iter().zip(&truth.labels) {
            let (Some(pj), Some(ti)) = (Self::class_of(*p), Self::class_of(*t)) else {
                continue;
            };
            self.counts[ti][pj] += 1;
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..2 {
            for j in 0..2 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    /// Total pixels of true class i (row sum).
    pub fn true_count(&self, i: usize) -> u64 {
        self.counts[i][0] + self.counts[i][1]
    }

    pub fn total(&self) -> u64 {
        self.true_count(0) + self.true_count(1)
    }

    fn iou(&self, i: usize) -> Option<f64> {
        let t_i = self.true_count(i);
        let pred_i = self.counts[0][i] + self.counts[1][i];
        let union = t_i + pred_i - self.counts[i][i];
        if union == 0 {
            None
        } else {
            Some(self.counts[i][i] as f64 / union as f64)
        }
    }
}

/// Fraction of scored pixels predicted correctly.
pub fn pixel_accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    (cm.counts[0][0] + cm.counts[1][1]) as f64 / total as f64
}

/// Mean IoU over classes. Classes with an empty union (absent from both
/// truth and prediction) are excluded from the mean rather than scored.
pub fn mean_iou(cm: &ConfusionMatrix) -> f64 {
    let ious: Vec<f64> = (0..2).filter_map(|i| cm.iou(i)).collect();
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().sum::<f64>() / ious.len() as f64
}

/// IoU per class weighted by the class's true-pixel frequency.
pub fn fw_iou(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..2 {
        if let Some(iou) = cm.iou(i) {
            acc += cm.true_count(i) as f64 * iou;
        }
    }
    acc / total as f64
}

/// The three headline metrics bundled for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "PA")]
    pub pa: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "FW-IoU")]
    pub fw_iou: f64,
}

impl MetricsReport {
    pub fn from_matrix(cm: &ConfusionMatrix) -> Self {
        MetricsReport {
            pa: pixel_accuracy(cm),
            miou: mean_iou(cm),
            fw_iou: fw_iou(cm),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_of(width: usize, labels: &[MaskLabel]) -> Mask {
        Mask::new(width, labels.len() / width, labels.to_vec())
    }

    #[test]
    fn perfect_prediction_fills_the_diagonal() {
        use MaskLabel::*;
        let truth = mask_of(5, &[Water, Water, NonWater, NonWater, Water, NonWater, Water, Water, NonWater, NonWater]);
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(&truth, &truth);
        assert_eq!(cm.counts[0][1] + cm.counts[1][0], 0);
        assert_eq!(cm.counts[0][0] + cm.counts[1][1], 10);
        assert_eq!(pixel_accuracy(&cm), 1.0);
        assert_eq!(mean_iou(&cm), 1.0);
        assert_eq!(fw_iou(&cm), 1.0);
    }

    #[test]
    fn ignore_truth_contributes_nothing() {
        use MaskLabel::*;
        let truth = mask_of(2, &[Ignore, Ignore]);
        let pred = mask_of(2, &[Water, NonWater]);
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(&pred, &truth);
        assert_eq!(cm, ConfusionMatrix::new());
    }

    #[test]
    fn hand_built_four_pixel_case() {
        use MaskLabel::*;
        // TP, FP, FN, TN each once
        let truth = mask_of(2, &[Water, NonWater, Water, NonWater]);
        let pred = mask_of(2, &[Water, Water, NonWater, NonWater]);
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(&pred, &truth);
        assert_eq!(cm.counts, [[1, 1], [1, 1]]);
    }

    #[test]
    fn hand_evaluated_fixture() {
        let cm = ConfusionMatrix::from_counts([[3, 1], [2, 4]]);
        assert!((pixel_accuracy(&cm) - 0.7).abs() < 1e-9);
        assert!((mean_iou(&cm) - (0.5 + 4.0 / 7.0) / 2.0).abs() < 1e-9);
        assert!((fw_iou(&cm) - (4.0 * 0.5 + 6.0 * 4.0 / 7.0) / 10.0).abs() < 1e-9);
    }

    #[test]
    fn all_wrong_binary_has_zero_accuracy() {
        let cm = ConfusionMatrix::from_counts([[0, 5], [7, 0]]);
        assert_eq!(pixel_accuracy(&cm), 0.0);
        assert_eq!(mean_iou(&cm), 0.0);
    }

    #[test]
    fn absent_class_is_excluded_from_the_mean() {
        // only water present, predicted perfectly
        let cm = ConfusionMatrix::from_counts([[0, 0], [0, 9]]);
        assert_eq!(mean_iou(&cm), 1.0);
        assert_eq!(fw_iou(&cm), 1.0);
    }

    #[test]
    fn balanced_frequencies_reduce_fw_iou_to_mean_iou() {
        let cm = ConfusionMatrix::from_counts([[6, 4], [4, 6]]);
        assert!((fw_iou(&cm) - mean_iou(&cm)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval(
            a in 0u64..50, b in 0u64..50, c in 0u64..50, d in 0u64..50,
        ) {
            let cm = ConfusionMatrix::from_counts([[a, b], [c, d]]);
            for v in [pixel_accuracy(&cm), mean_iou(&cm), fw_iou(&cm)] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn accumulation_order_does_not_matter(
            seed in 0u64..500,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tiles: Vec<(Mask, Mask)> = (0..4)
                .map(|_| {
                    let labels = |rng: &mut rand_chacha::ChaCha8Rng| {
                        (0..9)
                            .map(|_| match rng.gen_range(0..3) {
                                0 => MaskLabel::Water,
                                1 => MaskLabel::NonWater,
                                _ => MaskLabel::Ignore,
                            })
                            .collect::<Vec<_>>()
                    };
                    (mask_of(3, &labels(&mut rng)), mask_of(3, &labels(&mut rng)))
                })
                .collect();
            let mut forward = ConfusionMatrix::new();
            for (p, t) in &tiles {
                forward.accumulate(p, t);
            }
            let mut backward = ConfusionMatrix::new();
            for (p, t) in tiles.iter().rev() {
                backward.accumulate(p, t);
            }
            prop_assert_eq!(forward, backward);
        }
    }
}
