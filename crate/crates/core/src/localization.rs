//! Inference-time post-processing: video classification, thresholded proposal
//! extraction on the fused signal, outer-inner contrast scoring and NMS.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::GridMap;
use crate::error::{ensure, Error, Result};
use crate::geometry::{temporal_iou_unchecked, topk_count};
use crate::network::{BranchActivations, INS};
use crate::objectives::{topk_aggregate, video_probs};
use crate::scalar::Scalar;
use crate::types::{HyperParams, Proposal};

/// `(1 - α) CAS_ins + α att_ins`, the attention broadcast over classes.
pub fn fused_signal<S: Scalar>(acts: &BranchActivations<S>, alpha: f64) -> Array2<S> {
    let a = S::from_f64_lossy(alpha);
    let att = acts.attention.column(INS).insert_axis(Axis(1)).mapv(|v| v * a);
    &acts.cas_ins * (S::one() - a) + &att
}

/// Video-level instance-branch class probabilities over `C + 1` entries.
pub fn instance_probs<S: Scalar>(acts: &BranchActivations<S>, r_ins: usize) -> Result<ndarray::Array1<S>> {
    let k = topk_count(acts.snippets(), r_ins);
    Ok(video_probs(topk_aggregate(acts.cas_ins.view(), k)?.view()))
}

/// Action classes whose probability reaches `threshold`; falls back to the first
/// arg-max action class when none does.
pub fn classify_video<S: Scalar>(probs: ArrayView1<S>, threshold: f64) -> BTreeSet<usize> {
    let num_classes = probs.len() - 1;
    let chosen: BTreeSet<usize> = (0..num_classes)
        .filter(|&c| probs[c].to_f64_lossy() >= threshold)
        .collect();
    if !chosen.is_empty() || num_classes == 0 {
        return chosen;
    }
    let mut best = 0;
    for c in 1..num_classes {
        if probs[c] > probs[best] {
            best = c;
        }
    }
    BTreeSet::from([best])
}

/// Maximal runs `[first, last + 1)` where the min-max normalized signal is `>= threshold`.
pub fn extract_segments<S: Scalar>(signal: ArrayView1<S>, threshold: f64) -> Vec<(usize, usize)> {
    let values: Vec<f64> = signal.iter().map(|v| v.to_f64_lossy()).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Vec::new();
    }
    if hi <= lo {
        return if threshold <= 0.0 { vec![(0, values.len())] } else { Vec::new() };
    }
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (t, v) in values.iter().enumerate() {
        let above = (v - lo) / (hi - lo) >= threshold;
        match (above, open) {
            (true, None) => open = Some(t),
            (false, Some(s)) => {
                runs.push((s, t));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, values.len()));
    }
    runs
}

/// Inner mean over `[start, end)` minus the mean over flanks of length `(end - start) / 5`
/// (at least one snippet) on both sides, clipped to the sequence.
pub fn oic_score<S: Scalar>(signal: ArrayView1<S>, start: usize, end: usize) -> Result<f64> {
    let len = signal.len();
    ensure!(start < end && end <= len, Validation, "segment [{start}, {end}) invalid for {len} snippets");
    let value = |t: usize| signal[t].to_f64_lossy();
    let inner = (start..end).map(value).sum::<f64>() / (end - start) as f64;

    let flank = ((end - start) as f64 / 5.0).max(1.0);
    // snippet t is centred at t + 0.5
    let left_lo = ((start as f64 - flank - 0.5).ceil().max(0.0)) as usize;
    let right_hi = ((end as f64 + flank - 0.5).ceil() as usize).min(len);
    let outer: Vec<f64> = (left_lo..start).chain(end..right_hi).map(value).collect();
    let outer_mean = if outer.is_empty() { 0.0 } else { outer.iter().sum::<f64>() / outer.len() as f64 };
    Ok(inner - outer_mean)
}

/// Converts grid runs into seconds for one video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    pub grid: GridMap,
    pub snippet_seconds: f64,
    pub duration_s: f64,
}

impl TimeAxis {
    /// Grid `[start, end)` to clipped seconds; `None` if clipping leaves nothing.
    pub fn to_seconds(&self, start: usize, end: usize) -> Option<(f64, f64)> {
        let (a, b) = self.grid.run_to_native(start, end);
        let s = (a * self.snippet_seconds).clamp(0.0, self.duration_s);
        let e = (b * self.snippet_seconds).clamp(0.0, self.duration_s);
        (e > s).then_some((s, e))
    }
}

/// Proposals for every (threshold, class) pair, before NMS.
pub fn generate_proposals<S: Scalar>(
    acts: &BranchActivations<S>,
    hp: &HyperParams,
    classes: &BTreeSet<usize>,
    axis: &TimeAxis,
) -> Result<Vec<Proposal>> {
    let fused = fused_signal(acts, hp.alpha);
    let mut out = Vec::new();
    for &threshold in &hp.proposal_thresholds {
        for &c in classes {
            let signal = fused.column(c);
            for (s, e) in extract_segments(signal, threshold) {
                let confidence = oic_score(signal, s, e)?;
                if let Some((start_s, end_s)) = axis.to_seconds(s, e) {
                    out.push(Proposal { start_s, end_s, class_id: c, confidence });
                }
            }
        }
    }
    Ok(out)
}

fn by_confidence(a: &Proposal, b: &Proposal) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.start_s.partial_cmp(&b.start_s).unwrap_or(Ordering::Equal))
        .then(a.end_s.partial_cmp(&b.end_s).unwrap_or(Ordering::Equal))
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy class-wise suppression of proposals overlapping a kept one by more than `iou_threshold`.
pub fn nms(proposals: &[Proposal], iou_threshold: f64) -> Vec<Proposal> {
    let mut sorted = proposals.to_vec();
    sorted.sort_by(by_confidence);
    let mut kept: Vec<Proposal> = Vec::new();
    for p in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == p.class_id && temporal_iou_unchecked(k.segment(), p.segment()) > iou_threshold);
        if !suppressed {
            kept.push(p);
        }
    }
    kept
}

/// Full per-video chain: classify, propose, suppress.
pub fn localize<S: Scalar>(acts: &BranchActivations<S>, hp: &HyperParams, axis: &TimeAxis) -> Result<Vec<Proposal>> {
    let probs = instance_probs(acts, hp.r_ins)?;
    let classes = classify_video(probs.view(), hp.class_threshold);
    let proposals = generate_proposals(acts, hp, &classes, axis)?;
    Ok(nms(&proposals, hp.nms_iou))
}

/// One entry of the detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
    pub score: f64,
}

/// Detection file contents: video id to its detections.
pub type DetectionMap = BTreeMap<String, Vec<Detection>>;

pub fn to_detections(proposals: &[Proposal], classes: &[String]) -> Vec<Detection> {
    proposals
        .iter()
        .map(|p| Detection {
            start_s: p.start_s,
            end_s: p.end_s,
            label: classes[p.class_id].clone(),
            score: p.confidence,
        })
        .collect()
}

pub fn write_detections(path: &Path, detections: &DetectionMap) -> Result<()> {
    let text = serde_json::to_string_pretty(detections).expect("detections serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<DetectionMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn classify_examples() {
        assert_eq!(classify_video(array![0.7f64, 0.2, 0.1].view(), 0.5), BTreeSet::from([0]));
        assert_eq!(classify_video(array![0.4f64, 0.4, 0.2].view(), 0.5), BTreeSet::from([0]));
        assert_eq!(classify_video(array![0.3f64, 0.1, 0.6].view(), 0.0), BTreeSet::from([0, 1]));
        assert_eq!(classify_video(array![0.1f64, 0.3, 0.6].view(), 0.5), BTreeSet::from([1]));
    }

    #[test]
    fn segment_examples() {
        assert_eq!(extract_segments(array![0.0f64, 1.0, 1.0, 0.0].view(), 0.5), vec![(1, 3)]);
        assert_eq!(extract_segments(array![1.0f64, 0.0, 1.0].view(), 0.5), vec![(0, 1), (2, 3)]);
        assert!(extract_segments(array![0.0f64, 0.2, 1.0].view(), 1.1).is_empty());
        assert!(extract_segments(array![2.0f64, 2.0].view(), 0.1).is_empty());
        assert_eq!(extract_segments(array![2.0f64, 2.0].view(), 0.0), vec![(0, 2)]);
        // normalization makes the threshold scale-free
        assert_eq!(extract_segments(array![10.0f64, 30.0, 12.0].view(), 0.5), vec![(1, 2)]);
    }

    #[test]
    fn oic_examples() {
        let constant = Array1::from_elem(20, 0.7f64);
        assert!(oic_score(constant.view(), 5, 10).unwrap().abs() < 1e-15);
        let mut step = Array1::<f64>::zeros(20);
        step.slice_mut(ndarray::s![5..15]).fill(1.0);
        assert_eq!(oic_score(step.view(), 5, 15).unwrap(), 1.0);
        let shifted = step.mapv(|v| v + 3.25);
        assert!((oic_score(shifted.view(), 5, 15).unwrap() - 1.0).abs() < 1e-12);
        assert!(oic_score(step.view(), 5, 5).is_err());
        assert!(oic_score(step.view(), 5, 21).is_err());
    }

    #[test]
    fn oic_flanks_clip_at_edges() {
        // whole-sequence segment has no flanks at all
        let s = array![1.0f64, 2.0, 3.0];
        assert_eq!(oic_score(s.view(), 0, 3).unwrap(), 2.0);
        // left edge: only the right flank counts
        let s = array![4.0f64, 4.0, 1.0, 0.0];
        assert_eq!(oic_score(s.view(), 0, 2).unwrap(), 3.0);
    }

    #[test]
    fn oic_flank_sampling() {
        // 10-snippet segment -> flank of 2 snippets per side
        let mut v = Array1::<f64>::zeros(30);
        v.slice_mut(ndarray::s![10..20]).fill(1.0);
        v[8] = -1.0; // inside left flank
        v[7] = 100.0; // outside it
        let score = oic_score(v.view(), 10, 20).unwrap();
        assert!((score - 1.25).abs() < 1e-12, "{score}");
    }

    fn single_class_acts(phi: &[f64]) -> BranchActivations<f64> {
        let t = phi.len();
        let cas = Array2::from_shape_fn((t, 2), |(i, j)| if j == 0 { phi[i] } else { -phi[i] });
        let attention = Array2::from_shape_fn((t, 3), |(_, b)| if b == 0 { 1.0 } else { 0.0 });
        let [cas_ins, cas_con, cas_bak] = crate::network::weighted_cas(cas.view(), attention.view()).unwrap();
        BranchActivations { embedded: Array2::zeros((t, 2)), cas, attention, cas_ins, cas_con, cas_bak }
    }

    fn unit_axis(t: usize) -> TimeAxis {
        TimeAxis { grid: GridMap::new(t, t), snippet_seconds: 1.0, duration_s: t as f64 }
    }

    fn hp_with(thresholds: Vec<f64>) -> HyperParams {
        let mut hp = HyperParams::thumos(1);
        hp.proposal_thresholds = thresholds;
        hp
    }

    #[test]
    fn proposal_counts() {
        let acts = single_class_acts(&[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let one = generate_proposals(&acts, &hp_with(vec![0.5]), &BTreeSet::from([0]), &unit_axis(6)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].start_s, one[0].end_s), (2.0, 4.0));

        // levels 0.15 / 0.2 / 0.25 after normalization separate three nested runs
        let acts = single_class_acts(&[0.0, 0.17, 0.22, 1.0, 0.22, 0.0, 0.0]);
        let grid = generate_proposals(&acts, &hp_with(vec![0.15, 0.20, 0.25]), &BTreeSet::from([0]), &unit_axis(7)).unwrap();
        let spans: Vec<(f64, f64)> = grid.iter().map(|p| (p.start_s, p.end_s)).collect();
        assert_eq!(spans, vec![(1.0, 5.0), (2.0, 5.0), (3.0, 4.0)]);
    }

    #[test]
    fn tighter_nested_proposal_scores_higher() {
        // a peak on low shoulders; on a pure triangle the wider run would win
        let acts = single_class_acts(&[0.0, 0.0, 1.0, 1.0, 5.0, 5.0, 5.0, 1.0, 1.0, 0.0, 0.0]);
        let props = generate_proposals(&acts, &hp_with(vec![0.1, 0.5]), &BTreeSet::from([0]), &unit_axis(11)).unwrap();
        assert_eq!(props.len(), 2);
        let (wide, tight) = (props[0], props[1]);
        assert_eq!((wide.start_s, wide.end_s, tight.start_s, tight.end_s), (2.0, 9.0, 4.0, 7.0));
        assert!((tight.confidence - 4.0).abs() < 1e-12);
        assert!((wide.confidence - 19.0 / 7.0).abs() < 1e-12);
        assert!(temporal_iou_unchecked(wide.segment(), tight.segment()) > 0.0);
    }

    #[test]
    fn alpha_zero_ignores_attention_term() {
        let mut acts = single_class_acts(&[0.0, 2.0, 3.0, 0.5]);
        acts.attention.column_mut(0).assign(&array![0.2, 0.9, 0.4, 0.1]);
        assert_eq!(fused_signal(&acts, 0.0), acts.cas_ins);
        let half = fused_signal(&acts, 0.5);
        assert!((half[[1, 0]] - (0.5 * acts.cas_ins[[1, 0]] + 0.45)).abs() < 1e-12);
        assert!((half[[1, 1]] - (0.5 * acts.cas_ins[[1, 1]] + 0.45)).abs() < 1e-12);
    }

    #[test]
    fn proposals_stay_inside_the_video() {
        let acts = single_class_acts(&[3.0, 1.0, 0.0, 0.0, 2.0, 4.0]);
        // 6 grid cells over 10 native snippets of 0.64 s, video slightly shorter than the grid
        let axis = TimeAxis { grid: GridMap::new(10, 6), snippet_seconds: 0.64, duration_s: 6.2 };
        for p in localize(&acts, &hp_with(vec![0.1, 0.3, 0.6]), &axis).unwrap() {
            assert!(p.start_s >= 0.0 && p.end_s <= 6.2 && p.start_s < p.end_s, "{p:?}");
        }
    }

    #[test]
    fn nms_examples() {
        let p = |s: f64, e: f64, c: f64| Proposal { start_s: s, end_s: e, class_id: 0, confidence: c };
        let out = nms(&[p(0.0, 1.0, 0.8), p(0.0, 1.0, 0.9)], 0.5);
        assert_eq!(out, vec![p(0.0, 1.0, 0.9)]);
        let disjoint = [p(0.0, 1.0, 0.3), p(2.0, 3.0, 0.9), p(4.0, 5.0, 0.5)];
        assert_eq!(nms(&disjoint, 0.5).len(), 3);
        // a-b and b-c overlap 0.6; a-c overlap 1/3 stays under the threshold
        let a = p(0.0, 4.0, 0.9);
        let b = p(1.0, 5.0, 0.8);
        let c = p(2.0, 6.0, 0.7);
        assert!((temporal_iou_unchecked(a.segment(), b.segment()) - 0.6).abs() < 1e-12);
        assert!((temporal_iou_unchecked(b.segment(), c.segment()) - 0.6).abs() < 1e-12);
        assert!((temporal_iou_unchecked(a.segment(), c.segment()) - 1.0 / 3.0).abs() < 1e-12);
        let out = nms(&[c, a, b], 0.5);
        assert_eq!(out, vec![a, c]);
        // other classes are never suppressed
        let other = Proposal { class_id: 1, ..b };
        assert_eq!(nms(&[a, other], 0.5).len(), 2);
    }
}
