//! Detection mAP over a t-IoU grid: confidence-ranked one-to-one matching pooled
//! across videos per class, non-interpolated average precision.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{temporal_iou_unchecked, Segment};
use crate::localization::DetectionMap;
use crate::types::{ActionInstance, Proposal};

/// Marks each detection (ranked by confidence, ties by start time) as a true or false positive.
pub fn match_detections(detections: &[Proposal], ground_truth: &[ActionInstance], tiou: f64) -> Vec<(Proposal, bool)> {
    let mut ranked = detections.to_vec();
    ranked.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.start_s.partial_cmp(&b.start_s).unwrap_or(Ordering::Equal))
    });
    let gts: Vec<Segment> = ground_truth.iter().map(ActionInstance::segment).collect();
    let mut used = vec![false; gts.len()];
    ranked
        .into_iter()
        .map(|d| {
            let tp = claim_best(d.segment(), &gts, &mut used, tiou);
            (d, tp)
        })
        .collect()
}

/// Consumes the unmatched ground truth with the highest t-IoU if it reaches `tiou`.
fn claim_best(det: Segment, gts: &[Segment], used: &mut [bool], tiou: f64) -> bool {
    let mut order: Vec<(usize, f64)> = gts.iter().map(|g| temporal_iou_unchecked(det, *g)).enumerate().collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    for (i, iou) in order {
        if iou < tiou {
            break;
        }
        if !used[i] {
            used[i] = true;
            return true;
        }
    }
    false
}

/// Sum of precision at every true positive, divided by `num_gt`.
pub fn average_precision(ranked_hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut acc = 0.0;
    for (i, &hit) in ranked_hits.iter().enumerate() {
        if hit {
            tp += 1;
            acc += tp as f64 / (i + 1) as f64;
        }
    }
    acc / num_gt as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub num_gt: usize,
    pub num_detections: usize,
    /// AP at each grid threshold.
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tiou_grid: Vec<f64>,
    /// mAP at each grid threshold, over classes with ground truth.
    pub map: Vec<f64>,
    pub avg_map: f64,
    pub per_class: Vec<ClassReport>,
}

impl EvalReport {
    pub fn ap(&self, class_id: usize, tiou_index: usize) -> f64 {
        self.per_class[class_id].ap[tiou_index]
    }

    pub fn map_at(&self, tiou: f64) -> Option<f64> {
        self.tiou_grid.iter().position(|&t| (t - tiou).abs() < 1e-9).map(|i| self.map[i])
    }

    /// Mean mAP over grid thresholds inside `[lo, hi]`.
    pub fn avg_between(&self, lo: f64, hi: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .tiou_grid
            .iter()
            .zip(&self.map)
            .filter(|(&t, _)| t >= lo - 1e-9 && t <= hi + 1e-9)
            .map(|(_, &m)| m)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

struct Ranked<'a> {
    video: &'a str,
    segment: Segment,
    score: f64,
}

/// Scores every class at every threshold of `tiou_grid`.
pub fn evaluate(
    detections: &DetectionMap,
    ground_truth: &BTreeMap<String, Vec<ActionInstance>>,
    classes: &[String],
    tiou_grid: &[f64],
) -> Result<EvalReport> {
    let mut per_class_dets: Vec<Vec<Ranked>> = (0..classes.len()).map(|_| Vec::new()).collect();
    for (video, dets) in detections {
        for d in dets {
            let c = classes.iter().position(|n| n == &d.label).ok_or_else(|| {
                Error::Validation(format!("detection for `{video}` has unknown class `{}`", d.label))
            })?;
            let segment = Segment::new(d.start_s, d.end_s)?;
            if !d.score.is_finite() {
                return Err(Error::Validation(format!("non-finite score in detections for `{video}`")));
            }
            per_class_dets[c].push(Ranked { video, segment, score: d.score });
        }
    }
    for list in &mut per_class_dets {
        list.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.segment.start.partial_cmp(&b.segment.start).unwrap_or(Ordering::Equal))
                .then(a.video.cmp(b.video))
        });
    }

    let mut gt_by_class: Vec<BTreeMap<&str, Vec<Segment>>> = (0..classes.len()).map(|_| BTreeMap::new()).collect();
    for (video, list) in ground_truth {
        for inst in list {
            if inst.class_id >= classes.len() {
                return Err(Error::Validation(format!("ground truth class {} out of range", inst.class_id)));
            }
            gt_by_class[inst.class_id].entry(video.as_str()).or_default().push(inst.segment());
        }
    }

    let mut per_class = Vec::with_capacity(classes.len());
    for (c, name) in classes.iter().enumerate() {
        let gts = &gt_by_class[c];
        let num_gt = gts.values().map(Vec::len).sum();
        let ap = tiou_grid
            .iter()
            .map(|&tiou| {
                let mut used: BTreeMap<&str, Vec<bool>> = gts.iter().map(|(v, g)| (*v, vec![false; g.len()])).collect();
                let hits: Vec<bool> = per_class_dets[c]
                    .iter()
                    .map(|d| match (gts.get(d.video), used.get_mut(d.video)) {
                        (Some(g), Some(u)) => claim_best(d.segment, g, u, tiou),
                        _ => false,
                    })
                    .collect();
                average_precision(&hits, num_gt)
            })
            .collect();
        per_class.push(ClassReport { class: name.clone(), num_gt, num_detections: per_class_dets[c].len(), ap });
    }

    let scored: Vec<&ClassReport> = per_class.iter().filter(|c| c.num_gt > 0).collect();
    let map: Vec<f64> = (0..tiou_grid.len())
        .map(|i| {
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(|c| c.ap[i]).sum::<f64>() / scored.len() as f64
            }
        })
        .collect();
    let avg_map = if map.is_empty() { 0.0 } else { map.iter().sum::<f64>() / map.len() as f64 };
    Ok(EvalReport { tiou_grid: tiou_grid.to_vec(), map, avg_map, per_class })
}

/// Aligned text table, one row per report, values in percent.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::from("(no results)\n");
    };
    let grid = &first.tiou_grid;
    let mut extra: Vec<(String, f64, f64)> = Vec::new();
    for (lo, hi) in [(0.1, 0.5), (0.3, 0.7)] {
        let covered = grid.iter().filter(|&&t| t >= lo - 1e-9 && t <= hi + 1e-9).count();
        if covered == ((hi - lo) / 0.1f64).round() as usize + 1 {
            extra.push((format!("Avg[{lo}-{hi}]"), lo, hi));
        }
    }
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
    let mut header = format!("{:<name_w$}", "Exp");
    for t in grid {
        let _ = write!(header, " {:>8}", format!("@{t:.2}"));
    }
    for (label, _, _) in &extra {
        let _ = write!(header, " {label:>12}");
    }
    let _ = write!(header, " {:>8}", "Avg");
    let mut out = header.clone();
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for (name, report) in rows {
        let mut line = format!("{name:<name_w$}");
        for m in &report.map {
            let _ = write!(line, " {:>8.1}", 100.0 * m);
        }
        for (_, lo, hi) in &extra {
            let v = report.avg_between(*lo, *hi).unwrap_or(f64::NAN);
            let _ = write!(line, " {:>12.1}", 100.0 * v);
        }
        let _ = write!(line, " {:>8.1}", 100.0 * report.avg_map);
        out.push_str(&line);
        out.push('\n');
    }
    out
}
