//! Temporal (1-D) convolution over `[T x C]` sequences with "same" output length.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zeros outside the sequence.
    #[default]
    Zero,
    /// Sequence wraps around; makes the layer equivariant to cyclic shifts.
    Circular,
}

/// Kernel `[K x C_in x C_out]` plus bias `[C_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<S> {
    pub weight: Array3<S>,
    pub bias: Array1<S>,
}

/// Contiguous `(output rows, input rows)` pairs touched by one kernel tap.
fn tap_ranges(len: usize, offset: isize, padding: Padding) -> Vec<((usize, usize), (usize, usize))> {
    let t = len as isize;
    match padding {
        Padding::Zero => {
            let lo = (-offset).max(0);
            let hi = (t - offset).min(t);
            if lo >= hi {
                return Vec::new();
            }
            vec![((lo as usize, hi as usize), ((lo + offset) as usize, (hi + offset) as usize))]
        }
        Padding::Circular => {
            let shift = offset.rem_euclid(t) as usize;
            // out[t] reads in[(t + shift) mod len]
            let mut v = vec![((0, len - shift), (shift, len))];
            if shift > 0 {
                v.push(((len - shift, len), (0, shift)));
            }
            v
        }
    }
}

impl<S: Scalar> Conv1d<S> {
    pub fn zeros(kernel: usize, c_in: usize, c_out: usize) -> Self {
        Conv1d {
            weight: Array3::zeros((kernel, c_in, c_out)),
            bias: Array1::zeros(c_out),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng>(kernel: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((kernel * c_in) as f64).sqrt();
        let weight = Array3::from_shape_fn((kernel, c_in, c_out), |_| S::from_f64_lossy(rng.gen_range(-bound..bound)));
        Conv1d { weight, bias: Array1::zeros(c_out) }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().2
    }

    fn offset(&self, k: usize) -> isize {
        k as isize - (self.kernel() / 2) as isize
    }

    pub fn forward(&self, x: ArrayView2<S>, padding: Padding) -> Result<Array2<S>> {
        ensure!(
            x.ncols() == self.in_channels(),
            Shape,
            "convolution expects {} input channels, got {}",
            self.in_channels(),
            x.ncols()
        );
        let len = x.nrows();
        let mut out = Array2::zeros((len, self.out_channels()));
        out += &self.bias;
        for k in 0..self.kernel() {
            let w = self.weight.index_axis(Axis(0), k);
            for ((o0, o1), (i0, i1)) in tap_ranges(len, self.offset(k), padding) {
                let prod = x.slice(s![i0..i1, ..]).dot(&w);
                let mut dst = out.slice_mut(s![o0..o1, ..]);
                dst += &prod;
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: ArrayView2<S>, d_out: ArrayView2<S>, padding: Padding, grad: &mut Conv1d<S>) -> Array2<S> {
        let len = x.nrows();
        let mut d_x = Array2::zeros(x.raw_dim());
        grad.bias += &d_out.sum_axis(Axis(0));
        for k in 0..self.kernel() {
            let w = self.weight.index_axis(Axis(0), k);
            for ((o0, o1), (i0, i1)) in tap_ranges(len, self.offset(k), padding) {
                let g = d_out.slice(s![o0..o1, ..]);
                let xi = x.slice(s![i0..i1, ..]);
                let mut dw = grad.weight.index_axis_mut(Axis(0), k);
                dw += &xi.t().dot(&g);
                let mut dst = d_x.slice_mut(s![i0..i1, ..]);
                dst += &g.dot(&w.t());
            }
        }
        d_x
    }
}
