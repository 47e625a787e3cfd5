//! Interval arithmetic on the time axis and top-k sizing.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Closed time interval `[start, end]` in seconds (or snippet units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        let seg = Segment { start, end };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.start.is_finite() && self.end.is_finite() && self.end > self.start,
            Validation,
            "degenerate segment [{}, {}]",
            self.start,
            self.end
        );
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Intersection over union of two segments. Errors on a degenerate operand.
pub fn temporal_iou(a: Segment, b: Segment) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(temporal_iou_unchecked(a, b))
}

/// [`temporal_iou`] for segments already known to be valid.
pub(crate) fn temporal_iou_unchecked(a: Segment, b: Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    inter / union
}

/// `max(1, T / r)` with floor division.
pub fn topk_count(snippets: usize, divisor: usize) -> usize {
    (snippets / divisor.max(1)).max(1)
}
