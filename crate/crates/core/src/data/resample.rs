//! Fixed-length temporal resampling and its inverse coordinate map.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    #[default]
    Linear,
    Nearest,
}

/// Native snippet position (0-based, fractional) sampled by output row `j`.
///
/// Rows are spread uniformly over `[0, L - 1]`; a single output row samples the middle.
pub fn sample_position(j: usize, native_len: usize, snippets: usize) -> f64 {
    if snippets == 1 {
        return (native_len as f64 - 1.0) / 2.0;
    }
    (j * (native_len - 1)) as f64 / (snippets - 1) as f64
}

/// Resamples `[L x W]` features to `[T x W]` along time.
pub fn resample_to_t<S: Scalar>(features: ArrayView2<S>, snippets: usize, mode: ResampleMode) -> Array2<S> {
    let native_len = features.nrows();
    assert!(native_len >= 1 && snippets >= 1, "resampling needs L >= 1 and T >= 1");
    if native_len == snippets {
        return features.to_owned();
    }
    let width = features.ncols();
    let mut out = Array2::<S>::zeros((snippets, width));
    for (j, mut row) in out.outer_iter_mut().enumerate() {
        let pos = sample_position(j, native_len, snippets);
        match mode {
            ResampleMode::Nearest => {
                let i = (pos.round() as usize).min(native_len - 1);
                row.assign(&features.row(i));
            }
            ResampleMode::Linear => {
                let i0 = (pos.floor() as usize).min(native_len - 1);
                let frac = pos - i0 as f64;
                if frac == 0.0 || i0 + 1 >= native_len {
                    row.assign(&features.row(i0));
                } else {
                    let w1 = S::from_f64_lossy(frac);
                    let w0 = S::one() - w1;
                    let (a, b) = (features.row(i0), features.row(i0 + 1));
                    for c in 0..width {
                        row[c] = w0 * a[c] + w1 * b[c];
                    }
                }
            }
        }
    }
    out
}

/// Maps positions on the resampled grid back to native snippet units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMap {
    pub native_len: usize,
    pub snippets: usize,
}

impl GridMap {
    pub fn new(native_len: usize, snippets: usize) -> Self {
        GridMap { native_len, snippets }
    }

    /// Native interval (snippet units) represented by grid cell `j`: centred on the
    /// sampled snippet, `L / T` wide.
    pub fn cell(&self, j: usize) -> (f64, f64) {
        let centre = sample_position(j, self.native_len, self.snippets) + 0.5;
        let half = self.native_len as f64 / (2.0 * self.snippets as f64);
        (centre - half, centre + half)
    }

    /// Grid run `[start, end)` to native snippet units, clipped to `[0, L]`.
    pub fn run_to_native(&self, start: usize, end: usize) -> (f64, f64) {
        debug_assert!(start < end && end <= self.snippets);
        let lo = self.cell(start).0.max(0.0);
        let hi = self.cell(end - 1).1.min(self.native_len as f64);
        (lo, hi)
    }
}
