//! Feature embedding, class activation sequence, three-branch attention and the
//! attention-weighted activation sequences, with hand-written backward passes.

pub mod checkpoint;
pub mod conv;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use conv::{Conv1d, Padding};

use crate::error::{ensure, Result};
use crate::scalar::Scalar;

/// Attention columns.
pub const INS: usize = 0;
pub const CON: usize = 1;
pub const BAK: usize = 2;
pub const BRANCHES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Input feature width `2D`.
    pub input_dim: usize,
    /// Action classes `C`; the network emits `C + 1` logits.
    pub num_classes: usize,
    pub embed_kernel: usize,
    pub cls_kernel: usize,
    pub hidden_dim: usize,
    pub attention_kernel: usize,
    pub dropout: f64,
    #[serde(default)]
    pub padding: Padding,
}

impl Architecture {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Architecture {
            input_dim,
            num_classes,
            embed_kernel: 3,
            cls_kernel: 3,
            hidden_dim: input_dim,
            attention_kernel: 1,
            dropout: 0.5,
            padding: Padding::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim >= 1 && self.hidden_dim >= 1, Validation, "empty channel width");
        ensure!(self.num_classes >= 1, Validation, "need at least one class");
        for k in [self.embed_kernel, self.cls_kernel, self.attention_kernel] {
            ensure!(k % 2 == 1, Validation, "kernel widths must be odd, got {k}");
        }
        ensure!((0.0..1.0).contains(&self.dropout), Validation, "dropout must lie in [0, 1)");
        Ok(())
    }
}

/// Trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    pub arch: Architecture,
    pub embed: Conv1d<S>,
    pub cls_hidden: Conv1d<S>,
    pub cls_out: Conv1d<S>,
    pub attention: Conv1d<S>,
}

/// Every forward output the losses and localization read.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchActivations<S> {
    /// Embedded features `X`, `[T x 2D]`.
    pub embedded: Array2<S>,
    /// Raw class activation sequence `Φ`, `[T x (C+1)]`.
    pub cas: Array2<S>,
    /// Attention `[T x 3]`, columns ins/con/bak, rows on the simplex.
    pub attention: Array2<S>,
    pub cas_ins: Array2<S>,
    pub cas_con: Array2<S>,
    pub cas_bak: Array2<S>,
}

impl<S: Scalar> BranchActivations<S> {
    pub fn snippets(&self) -> usize {
        self.cas.nrows()
    }

    pub fn branch_cas(&self, branch: usize) -> &Array2<S> {
        match branch {
            INS => &self.cas_ins,
            CON => &self.cas_con,
            BAK => &self.cas_bak,
            _ => panic!("no attention branch {branch}"),
        }
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    input: Array2<S>,
    embed_pre: Array2<S>,
    hidden_pre: Array2<S>,
    hidden: Array2<S>,
    dropout_mask: Option<Array2<S>>,
}

/// Loss gradients with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<S> {
    pub embedded: Array2<S>,
    pub cas: Array2<S>,
    pub attention: Array2<S>,
}

impl<S: Scalar> OutputGrads<S> {
    pub fn zeros(snippets: usize, width: usize, num_classes: usize) -> Self {
        OutputGrads {
            embedded: Array2::zeros((snippets, width)),
            cas: Array2::zeros((snippets, num_classes + 1)),
            attention: Array2::zeros((snippets, BRANCHES)),
        }
    }
}

fn relu<S: Scalar>(a: &Array2<S>) -> Array2<S> {
    a.mapv(|v| v.max(S::zero()))
}

/// Row-wise softmax.
pub fn softmax_rows<S: Scalar>(logits: ArrayView2<S>) -> Array2<S> {
    let mut out = logits.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// `X = ReLU(Conv(F))`.
pub fn embed<S: Scalar>(features: ArrayView2<S>, conv: &Conv1d<S>, padding: Padding) -> Result<Array2<S>> {
    Ok(relu(&conv.forward(features, padding)?))
}

/// Two-layer classification head: conv, ReLU, optional dropout mask, 1x1 conv to `C + 1`.
pub fn classify<S: Scalar>(
    embedded: ArrayView2<S>,
    hidden: &Conv1d<S>,
    out: &Conv1d<S>,
    dropout_mask: Option<ArrayView2<S>>,
    padding: Padding,
) -> Result<Array2<S>> {
    let mut h = relu(&hidden.forward(embedded, padding)?);
    if let Some(mask) = dropout_mask {
        ensure!(mask.dim() == h.dim(), Shape, "dropout mask {:?} vs hidden {:?}", mask.dim(), h.dim());
        h *= &mask;
    }
    out.forward(h.view(), padding)
}

/// `A = Softmax(Conv(X))` over the three branches.
pub fn attend<S: Scalar>(embedded: ArrayView2<S>, conv: &Conv1d<S>, padding: Padding) -> Result<Array2<S>> {
    ensure!(conv.out_channels() == BRANCHES, Shape, "attention conv must emit 3 channels");
    Ok(softmax_rows(conv.forward(embedded, padding)?.view()))
}

/// Scales each row of `Φ` by the matching attention column, once per branch.
pub fn weighted_cas<S: Scalar>(cas: ArrayView2<S>, attention: ArrayView2<S>) -> Result<[Array2<S>; 3]> {
    ensure!(
        attention.ncols() == BRANCHES && attention.nrows() == cas.nrows(),
        Shape,
        "attention {:?} does not match CAS {:?}",
        attention.dim(),
        cas.dim()
    );
    Ok([INS, CON, BAK].map(|b| {
        let col = attention.column(b).insert_axis(Axis(1));
        &cas * &col
    }))
}

/// Folds gradients w.r.t. the three weighted sequences into `Φ` and `A`.
pub fn weighted_cas_backward<S: Scalar>(
    cas: ArrayView2<S>,
    attention: ArrayView2<S>,
    d_branch: &[Array2<S>; 3],
    d_cas: &mut Array2<S>,
    d_attention: &mut Array2<S>,
) {
    for b in [INS, CON, BAK] {
        let col = attention.column(b).insert_axis(Axis(1));
        *d_cas += &(&d_branch[b] * &col);
        let mut d_col = d_attention.column_mut(b);
        d_col += &(&d_branch[b] * &cas).sum_axis(Axis(1));
    }
}

impl<S: Scalar> Network<S> {
    pub fn zeros(arch: Architecture) -> Self {
        let d = arch.input_dim;
        Network {
            embed: Conv1d::zeros(arch.embed_kernel, d, d),
            cls_hidden: Conv1d::zeros(arch.cls_kernel, d, arch.hidden_dim),
            cls_out: Conv1d::zeros(1, arch.hidden_dim, arch.num_classes + 1),
            attention: Conv1d::zeros(arch.attention_kernel, d, BRANCHES),
            arch,
        }
    }

    /// Fan-in scaled uniform weights, zero biases, fixed by `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = arch.input_dim;
        Ok(Network {
            embed: Conv1d::init(arch.embed_kernel, d, d, &mut rng),
            cls_hidden: Conv1d::init(arch.cls_kernel, d, arch.hidden_dim, &mut rng),
            cls_out: Conv1d::init(1, arch.hidden_dim, arch.num_classes + 1, &mut rng),
            attention: Conv1d::init(arch.attention_kernel, d, BRANCHES, &mut rng),
            arch,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch.clone())
    }

    /// Named flat views of every parameter tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[S])> {
        vec![
            ("embed.weight", self.embed.weight.shape().to_vec(), self.embed.weight.as_slice().unwrap()),
            ("embed.bias", self.embed.bias.shape().to_vec(), self.embed.bias.as_slice().unwrap()),
            ("cls_hidden.weight", self.cls_hidden.weight.shape().to_vec(), self.cls_hidden.weight.as_slice().unwrap()),
            ("cls_hidden.bias", self.cls_hidden.bias.shape().to_vec(), self.cls_hidden.bias.as_slice().unwrap()),
            ("cls_out.weight", self.cls_out.weight.shape().to_vec(), self.cls_out.weight.as_slice().unwrap()),
            ("cls_out.bias", self.cls_out.bias.shape().to_vec(), self.cls_out.bias.as_slice().unwrap()),
            ("attention.weight", self.attention.weight.shape().to_vec(), self.attention.weight.as_slice().unwrap()),
            ("attention.bias", self.attention.bias.shape().to_vec(), self.attention.bias.as_slice().unwrap()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        vec![
            self.embed.weight.as_slice_mut().unwrap(),
            self.embed.bias.as_slice_mut().unwrap(),
            self.cls_hidden.weight.as_slice_mut().unwrap(),
            self.cls_hidden.bias.as_slice_mut().unwrap(),
            self.cls_out.weight.as_slice_mut().unwrap(),
            self.cls_out.bias.as_slice_mut().unwrap(),
            self.attention.weight.as_slice_mut().unwrap(),
            self.attention.bias.as_slice_mut().unwrap(),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Checks that every parameter tensor has the shape the architecture implies.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let reference = Self::zeros(self.arch.clone());
        for ((name, shape, data), (_, want, _)) in self.tensors().into_iter().zip(reference.tensors()) {
            ensure!(shape == want, Shape, "{name} has shape {shape:?}, architecture needs {want:?}");
            ensure!(data.iter().all(|v| v.is_finite()), Validation, "{name} holds non-finite values");
        }
        Ok(())
    }

    /// Inverted-dropout mask for the classification hidden layer.
    pub fn dropout_mask<R: Rng>(&self, snippets: usize, rng: &mut R) -> Array2<S> {
        let p = self.arch.dropout;
        let keep = S::from_f64_lossy(1.0 / (1.0 - p));
        Array2::from_shape_fn((snippets, self.arch.hidden_dim), |_| {
            if rng.gen::<f64>() < p {
                S::zero()
            } else {
                keep
            }
        })
    }

    /// Deterministic inference pass (no dropout).
    pub fn forward_eval(&self, features: ArrayView2<S>) -> Result<BranchActivations<S>> {
        Ok(self.forward(features, None)?.0)
    }

    pub fn forward(
        &self,
        features: ArrayView2<S>,
        dropout_mask: Option<ArrayView2<S>>,
    ) -> Result<(BranchActivations<S>, ForwardCache<S>)> {
        let padding = self.arch.padding;
        ensure!(features.nrows() >= 1, Shape, "empty feature sequence");
        let embed_pre = self.embed.forward(features, padding)?;
        let embedded = relu(&embed_pre);

        let hidden_pre = self.cls_hidden.forward(embedded.view(), padding)?;
        let mut hidden = relu(&hidden_pre);
        if let Some(mask) = dropout_mask {
            ensure!(mask.dim() == hidden.dim(), Shape, "dropout mask {:?} vs hidden {:?}", mask.dim(), hidden.dim());
            hidden *= &mask;
        }
        let cas = self.cls_out.forward(hidden.view(), padding)?;
        let attention = attend(embedded.view(), &self.attention, padding)?;
        let [cas_ins, cas_con, cas_bak] = weighted_cas(cas.view(), attention.view())?;

        let cache = ForwardCache {
            input: features.to_owned(),
            embed_pre,
            hidden_pre,
            hidden,
            dropout_mask: dropout_mask.map(|m| m.to_owned()),
        };
        Ok((BranchActivations { embedded, cas, attention, cas_ins, cas_con, cas_bak }, cache))
    }

    /// Parameter gradients given loss gradients on `X`, `Φ` and `A`.
    pub fn backward(&self, acts: &BranchActivations<S>, cache: &ForwardCache<S>, grads: &OutputGrads<S>) -> Network<S> {
        let padding = self.arch.padding;
        let mut out = self.zeros_like();

        // classification head
        let mut d_hidden = self.cls_out.backward(cache.hidden.view(), grads.cas.view(), padding, &mut out.cls_out);
        if let Some(mask) = &cache.dropout_mask {
            d_hidden *= mask;
        }
        Zip::from(&mut d_hidden).and(&cache.hidden_pre).for_each(|g, &z| {
            if z <= S::zero() {
                *g = S::zero();
            }
        });
        let mut d_embedded = self.cls_hidden.backward(acts.embedded.view(), d_hidden.view(), padding, &mut out.cls_hidden);

        // attention softmax: dz = a * (da - <a, da>)
        let mut d_att_logits = acts.attention.clone();
        for (mut row, g) in d_att_logits.outer_iter_mut().zip(grads.attention.outer_iter()) {
            let dot = row.iter().zip(g.iter()).fold(S::zero(), |acc, (&a, &d)| acc + a * d);
            Zip::from(&mut row).and(&g).for_each(|a, &d| *a = *a * (d - dot));
        }
        d_embedded += &self.attention.backward(acts.embedded.view(), d_att_logits.view(), padding, &mut out.attention);

        d_embedded += &grads.embedded;
        Zip::from(&mut d_embedded).and(&cache.embed_pre).for_each(|g, &z| {
            if z <= S::zero() {
                *g = S::zero();
            }
        });
        self.embed.backward(cache.input.view(), d_embedded.view(), padding, &mut out.embed);
        out
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Network<S>, scale: S) {
        let src: Vec<Vec<S>> = other.tensors().into_iter().map(|(_, _, t)| t.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Network<T> {
        let mut out = Network::<T>::zeros(self.arch.clone());
        let src: Vec<Vec<S>> = self.tensors().into_iter().map(|(_, _, t)| t.to_vec()).collect();
        for (dst, src) in out.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::from_f64_lossy(s.to_f64_lossy());
            }
        }
        out
    }
}
