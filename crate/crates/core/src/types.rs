//! Domain types: ground-truth instances, video labels, detections and hyperparameters.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::Segment;

/// Frames per second and frames per snippet of the standard I3D feature pipeline.
pub const DEFAULT_FPS: f64 = 25.0;
pub const DEFAULT_SNIPPET_FRAMES: u32 = 16;

/// One annotated action occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub start_s: f64,
    pub end_s: f64,
    pub class_id: usize,
}

impl ActionInstance {
    pub fn new(start_s: f64, end_s: f64, class_id: usize, num_classes: usize) -> Result<Self> {
        ensure!(start_s >= 0.0, Validation, "instance starts before 0: {start_s}");
        ensure!(end_s > start_s, Validation, "instance end {end_s} <= start {start_s}");
        ensure!(
            class_id < num_classes,
            Validation,
            "class id {class_id} out of range for {num_classes} classes"
        );
        Ok(ActionInstance { start_s, end_s, class_id })
    }

    pub fn segment(&self) -> Segment {
        Segment { start: self.start_s, end: self.end_s }
    }
}

/// Video-level weak label: the set of action classes present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLabel {
    pub class_ids: BTreeSet<usize>,
    pub num_classes: usize,
}

impl VideoLabel {
    pub fn new(class_ids: impl IntoIterator<Item = usize>, num_classes: usize) -> Result<Self> {
        let class_ids: BTreeSet<usize> = class_ids.into_iter().collect();
        if let Some(&bad) = class_ids.iter().find(|&&c| c >= num_classes) {
            return Err(crate::Error::Validation(format!(
                "label class {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(VideoLabel { class_ids, num_classes })
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Index of the synthesized background class.
    pub fn background(&self) -> usize {
        self.num_classes
    }
}

/// A scored temporal detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub start_s: f64,
    pub end_s: f64,
    pub class_id: usize,
    pub confidence: f64,
}

impl Proposal {
    pub fn segment(&self) -> Segment {
        Segment { start: self.start_s, end: self.end_s }
    }
}

/// Everything the model, losses and post-processing are parameterized by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Fixed snippet count every video is resampled to.
    pub snippets: usize,
    pub num_classes: usize,
    pub r_ins: usize,
    pub r_con: usize,
    pub r_bak: usize,
    pub lambda_guide: f64,
    pub lambda_feat: f64,
    pub lambda_sparse: f64,
    /// Feature-norm separation margin.
    pub margin: f64,
    /// Weight of `att_ins` against `CAS_ins` in the fused localization signal.
    pub alpha: f64,
    /// Video-level class probability needed to localize a class.
    pub class_threshold: f64,
    pub proposal_thresholds: Vec<f64>,
    pub nms_iou: f64,
    pub tiou_grid: Vec<f64>,
}

impl HyperParams {
    /// Settings used for THUMOS-14.
    pub fn thumos(num_classes: usize) -> Self {
        HyperParams {
            snippets: 750,
            num_classes,
            r_ins: 8,
            r_con: 3,
            r_bak: 3,
            lambda_guide: 2e-3,
            lambda_feat: 5e-5,
            lambda_sparse: 2e-4,
            margin: 50.0,
            alpha: 0.0,
            class_threshold: 0.2,
            proposal_thresholds: vec![0.15, 0.20, 0.25],
            nms_iou: 0.5,
            tiou_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
        }
    }

    /// Settings used for ActivityNet-1.3.
    pub fn activitynet(num_classes: usize) -> Self {
        HyperParams {
            snippets: 75,
            num_classes,
            r_ins: 2,
            r_con: 10,
            r_bak: 10,
            lambda_guide: 5e-3,
            lambda_feat: 1e-5,
            lambda_sparse: 0.0,
            margin: 50.0,
            alpha: 0.5,
            class_threshold: 0.2,
            proposal_thresholds: vec![0.01, 0.015, 0.02],
            nms_iou: 0.9,
            tiou_grid: vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95],
        }
    }

    pub fn k_ins(&self) -> usize {
        crate::geometry::topk_count(self.snippets, self.r_ins)
    }

    pub fn k_con(&self) -> usize {
        crate::geometry::topk_count(self.snippets, self.r_con)
    }

    pub fn k_bak(&self) -> usize {
        crate::geometry::topk_count(self.snippets, self.r_bak)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.snippets >= 1, Validation, "snippet count must be >= 1");
        ensure!(self.num_classes >= 1, Validation, "need at least one action class");
        ensure!(
            self.r_ins >= 1 && self.r_con >= 1 && self.r_bak >= 1,
            Validation,
            "top-k divisors must be >= 1"
        );
        ensure!(
            self.lambda_guide >= 0.0 && self.lambda_feat >= 0.0 && self.lambda_sparse >= 0.0,
            Validation,
            "loss weights must be non-negative"
        );
        ensure!(self.margin > 0.0, Validation, "margin must be positive, got {}", self.margin);
        ensure!(
            (0.0..=1.0).contains(&self.alpha),
            Validation,
            "alpha must lie in [0, 1], got {}",
            self.alpha
        );
        ensure!(
            self.class_threshold > 0.0 && self.class_threshold < 1.0,
            Validation,
            "class threshold must lie in (0, 1), got {}",
            self.class_threshold
        );
        ensure!(!self.proposal_thresholds.is_empty(), Validation, "no proposal thresholds");
        ensure!(
            is_ascending(&self.proposal_thresholds),
            Validation,
            "proposal thresholds must be ascending"
        );
        ensure!(
            self.nms_iou > 0.0 && self.nms_iou < 1.0,
            Validation,
            "NMS IoU must lie in (0, 1), got {}",
            self.nms_iou
        );
        ensure!(
            !self.tiou_grid.is_empty() && is_ascending(&self.tiou_grid),
            Validation,
            "t-IoU grid must be non-empty and ascending"
        );
        Ok(())
    }
}

fn is_ascending(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        HyperParams::thumos(20).validate().unwrap();
        HyperParams::activitynet(200).validate().unwrap();
    }

    #[test]
    fn thumos_topk_sizes() {
        let hp = HyperParams::thumos(20);
        assert_eq!(hp.k_ins(), 93);
        assert_eq!(hp.k_con(), 250);
        assert_eq!(hp.k_bak(), 250);
        let anet = HyperParams::activitynet(200);
        assert_eq!((anet.k_ins(), anet.k_con()), (37, 7));
    }

    #[test]
    fn invalid_hyperparams() {
        let mut hp = HyperParams::thumos(20);
        hp.alpha = 1.5;
        assert!(hp.validate().is_err());
        let mut hp = HyperParams::thumos(20);
        hp.proposal_thresholds.clear();
        assert!(hp.validate().is_err());
        let mut hp = HyperParams::thumos(20);
        hp.margin = 0.0;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn instance_and_label_checks() {
        assert!(ActionInstance::new(1.0, 0.5, 0, 3).is_err());
        assert!(ActionInstance::new(0.0, 0.5, 3, 3).is_err());
        assert!(VideoLabel::new([0, 5], 3).is_err());
        assert_eq!(VideoLabel::new([2], 3).unwrap().background(), 3);
    }
}
