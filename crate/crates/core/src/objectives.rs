//! Training objectives on top of [`BranchActivations`], each with its analytic gradient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::topk_count;
use crate::network::{weighted_cas_backward, BranchActivations, OutputGrads, BAK, CON, INS};
use crate::scalar::Scalar;
use crate::types::{HyperParams, VideoLabel};

/// Which loss terms participate in the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossFlags {
    pub cls_ins: bool,
    pub cls_con: bool,
    pub cls_bak: bool,
    pub guide: bool,
    pub feat: bool,
    pub sparse: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self::all()
    }
}

impl LossFlags {
    pub const fn all() -> Self {
        LossFlags { cls_ins: true, cls_con: true, cls_bak: true, guide: true, feat: true, sparse: true }
    }

    pub const fn none() -> Self {
        LossFlags { cls_ins: false, cls_con: false, cls_bak: false, guide: false, feat: false, sparse: false }
    }

    /// Classification terms on/off, auxiliary terms all on or all off.
    pub const fn cls(ins: bool, con: bool, bak: bool, aux: bool) -> Self {
        LossFlags { cls_ins: ins, cls_con: con, cls_bak: bak, guide: aux, feat: aux, sparse: aux }
    }
}

/// Per-term values; disabled terms are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_ins: f64,
    pub cls_con: f64,
    pub cls_bak: f64,
    pub guide: f64,
    pub feat: f64,
    pub sparse: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [(&'static str, f64); 7] {
        [
            ("cls_ins", self.cls_ins),
            ("cls_con", self.cls_con),
            ("cls_bak", self.cls_bak),
            ("guide", self.guide),
            ("feat", self.feat),
            ("sparse", self.sparse),
            ("total", self.total),
        ]
    }

    pub fn first_non_finite(&self) -> Option<(&'static str, f64)> {
        self.components().into_iter().find(|(_, v)| !v.is_finite())
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.cls_ins += b.cls_ins / n;
            out.cls_con += b.cls_con / n;
            out.cls_bak += b.cls_bak / n;
            out.guide += b.guide / n;
            out.feat += b.feat / n;
            out.sparse += b.sparse / n;
            out.total += b.total / n;
        }
        out
    }
}

/// Normalized video-level targets over `C + 1` entries for the three branches.
pub fn branch_labels<S: Scalar>(label: &VideoLabel) -> Result<[Array1<S>; 3]> {
    ensure!(!label.is_empty(), Validation, "video label set is empty");
    let n = label.num_classes + 1;
    let bg = label.background();
    let normalized = |with_classes: bool, with_background: bool| {
        let mut y = Array1::<S>::zeros(n);
        if with_classes {
            for &c in &label.class_ids {
                y[c] = S::one();
            }
        }
        if with_background {
            y[bg] = S::one();
        }
        let sum = y.sum();
        y / sum
    };
    Ok([normalized(true, false), normalized(true, true), normalized(false, true)])
}

/// Indices of the `k` largest entries, largest first; equal values keep time order.
pub fn topk_indices<S: Scalar>(values: ArrayView1<S>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(k);
    idx
}

/// Mean of the `k` largest entries of every column.
pub fn topk_aggregate<S: Scalar>(cas: ArrayView2<S>, k: usize) -> Result<Array1<S>> {
    ensure!(k >= 1 && k <= cas.nrows(), Validation, "top-k size {k} outside [1, {}]", cas.nrows());
    let kk = S::from_count(k);
    Ok(cas
        .axis_iter(Axis(1))
        .map(|col| topk_indices(col, k).into_iter().map(|t| col[t]).sum::<S>() / kk)
        .collect())
}

/// Softmax over the aggregated class scores.
pub fn video_probs<S: Scalar>(scores: ArrayView1<S>) -> Array1<S> {
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let e = scores.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

fn log_softmax<S: Scalar>(scores: ArrayView1<S>) -> Array1<S> {
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = scores.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
    scores.mapv(|v| v - lse)
}

/// Cross-entropy between `target` and the top-k video-level prediction of `cas`.
pub fn branch_cls_loss<S: Scalar>(cas: ArrayView2<S>, k: usize, target: ArrayView1<S>) -> Result<S> {
    Ok(branch_cls_loss_grad(cas, k, target)?.0)
}

/// Loss and its gradient with respect to `cas`.
pub fn branch_cls_loss_grad<S: Scalar>(cas: ArrayView2<S>, k: usize, target: ArrayView1<S>) -> Result<(S, Array2<S>)> {
    ensure!(
        target.len() == cas.ncols(),
        Shape,
        "target has {} entries for {} classes",
        target.len(),
        cas.ncols()
    );
    let scores = topk_aggregate(cas, k)?;
    let logp = log_softmax(scores.view());
    let loss = -target.iter().zip(logp.iter()).map(|(&y, &lp)| y * lp).sum::<S>();
    let p = logp.mapv(S::exp);
    let y_sum = target.sum();
    let kk = S::from_count(k);
    let mut grad = Array2::zeros(cas.raw_dim());
    for (c, col) in cas.axis_iter(Axis(1)).enumerate() {
        // d/dφ_c of -Σ y log softmax(φ) = p_c Σy - y_c
        let g = (p[c] * y_sum - target[c]) / kk;
        for t in topk_indices(col, k) {
            grad[[t, c]] = g;
        }
    }
    Ok((loss, grad))
}

/// Snippet-level guide loss: mean |1 - p_bg(t) - att_ins(t)| with `p` the row softmax of `CAS_ins`.
pub fn guide_loss<S: Scalar>(cas_ins: ArrayView2<S>, att_ins: ArrayView1<S>) -> S {
    guide_loss_grad(cas_ins, att_ins).0
}

pub fn guide_loss_grad<S: Scalar>(cas_ins: ArrayView2<S>, att_ins: ArrayView1<S>) -> (S, Array2<S>, Array1<S>) {
    let t_len = cas_ins.nrows();
    let bg = cas_ins.ncols() - 1;
    let inv_t = S::one() / S::from_count(t_len);
    let probs = crate::network::softmax_rows(cas_ins);
    let mut loss = S::zero();
    let mut d_cas = Array2::zeros(cas_ins.raw_dim());
    let mut d_att = Array1::zeros(t_len);
    for t in 0..t_len {
        let q = probs.row(t);
        let r = S::one() - q[bg] - att_ins[t];
        loss += r.abs() * inv_t;
        let s = if r > S::zero() {
            inv_t
        } else if r < S::zero() {
            -inv_t
        } else {
            S::zero()
        };
        d_att[t] = -s;
        for j in 0..q.len() {
            let delta = if j == bg { S::one() } else { S::zero() };
            d_cas[[t, j]] = -s * q[bg] * (delta - q[j]);
        }
    }
    (loss, d_cas, d_att)
}

/// Mean of the embedded rows at the `k` highest attention values of one branch.
pub fn pool_branch_feature<S: Scalar>(embedded: ArrayView2<S>, att: ArrayView1<S>, k: usize) -> Result<Array1<S>> {
    Ok(pool_with_indices(embedded, att, k)?.0)
}

fn pool_with_indices<S: Scalar>(embedded: ArrayView2<S>, att: ArrayView1<S>, k: usize) -> Result<(Array1<S>, Vec<usize>)> {
    ensure!(k >= 1 && k <= embedded.nrows(), Validation, "top-k size {k} outside [1, {}]", embedded.nrows());
    ensure!(att.len() == embedded.nrows(), Shape, "attention length {} vs {} snippets", att.len(), embedded.nrows());
    let idx = topk_indices(att, k);
    let mut pooled = Array1::zeros(embedded.ncols());
    for &t in &idx {
        pooled += &embedded.row(t);
    }
    pooled /= S::from_count(k);
    Ok((pooled, idx))
}

fn norm<S: Scalar>(v: ArrayView1<S>) -> S {
    v.iter().map(|&x| x * x).sum::<S>().sqrt()
}

/// Squared sum of the instance/context hinge, context/background hinge and background norm.
pub fn feature_separation_loss<S: Scalar>(x_ins: ArrayView1<S>, x_con: ArrayView1<S>, x_bak: ArrayView1<S>, margin: S) -> S {
    feature_separation_grad(x_ins, x_con, x_bak, margin).0
}

/// Loss plus gradients with respect to the three pooled features.
pub fn feature_separation_grad<S: Scalar>(
    x_ins: ArrayView1<S>,
    x_con: ArrayView1<S>,
    x_bak: ArrayView1<S>,
    margin: S,
) -> (S, [Array1<S>; 3]) {
    let (n_ins, n_con, n_bak) = (norm(x_ins), norm(x_con), norm(x_bak));
    let zero = S::zero();
    let h_ins = (margin - n_ins + n_con).max(zero);
    let h_con = (margin - n_con + n_bak).max(zero);
    let sum = h_ins + h_con + n_bak;
    let loss = sum * sum;

    let outer = sum + sum;
    let a_ins = if h_ins > zero { S::one() } else { zero };
    let a_con = if h_con > zero { S::one() } else { zero };
    let d_norm = [-a_ins, a_ins - a_con, a_con + S::one()];
    let unit = |v: ArrayView1<S>, n: S| if n > zero { v.mapv(|x| x / n) } else { Array1::zeros(v.len()) };
    let grads = [
        unit(x_ins, n_ins) * (outer * d_norm[0]),
        unit(x_con, n_con) * (outer * d_norm[1]),
        unit(x_bak, n_bak) * (outer * d_norm[2]),
    ];
    (loss, grads)
}

/// Mean over time of `att_ins + att_con`.
pub fn sparsity_loss<S: Scalar>(att_ins: ArrayView1<S>, att_con: ArrayView1<S>) -> S {
    (att_ins.sum() + att_con.sum()) / S::from_count(att_ins.len())
}

/// Weighted total of every enabled term.
pub fn total_loss<S: Scalar>(
    acts: &BranchActivations<S>,
    label: &VideoLabel,
    hp: &HyperParams,
    flags: LossFlags,
) -> Result<LossBreakdown> {
    Ok(total_loss_with_grad(acts, label, hp, flags)?.0)
}

/// [`total_loss`] plus its gradient with respect to `X`, `Φ` and `A`.
pub fn total_loss_with_grad<S: Scalar>(
    acts: &BranchActivations<S>,
    label: &VideoLabel,
    hp: &HyperParams,
    flags: LossFlags,
) -> Result<(LossBreakdown, OutputGrads<S>)> {
    let t_len = acts.snippets();
    let num_classes = acts.cas.ncols() - 1;
    ensure!(
        label.num_classes == num_classes,
        Shape,
        "label has {} classes, network emits {}",
        label.num_classes,
        num_classes
    );
    let ks = [topk_count(t_len, hp.r_ins), topk_count(t_len, hp.r_con), topk_count(t_len, hp.r_bak)];
    let targets = branch_labels::<S>(label)?;
    let att = acts.attention.view();
    let mut grads = OutputGrads::zeros(t_len, acts.embedded.ncols(), num_classes);
    let mut d_branch: [Array2<S>; 3] = std::array::from_fn(|_| Array2::zeros(acts.cas.raw_dim()));
    let mut out = LossBreakdown::default();

    let cls_enabled = [flags.cls_ins, flags.cls_con, flags.cls_bak];
    let mut cls_values = [0.0; 3];
    for b in [INS, CON, BAK] {
        if cls_enabled[b] {
            let (loss, g) = branch_cls_loss_grad(acts.branch_cas(b).view(), ks[b], targets[b].view())?;
            cls_values[b] = loss.to_f64_lossy();
            d_branch[b] += &g;
        }
    }
    [out.cls_ins, out.cls_con, out.cls_bak] = cls_values;

    if flags.guide {
        let (loss, d_cas, d_att) = guide_loss_grad(acts.cas_ins.view(), att.column(INS));
        out.guide = loss.to_f64_lossy();
        let w = S::from_f64_lossy(hp.lambda_guide);
        d_branch[INS] += &(d_cas * w);
        let mut col = grads.attention.column_mut(INS);
        col += &(d_att * w);
    }

    if flags.feat {
        let pooled = [INS, CON, BAK]
            .map(|b| pool_with_indices(acts.embedded.view(), att.column(b), ks[b]));
        let [p_ins, p_con, p_bak] = pooled;
        let (p_ins, p_con, p_bak) = (p_ins?, p_con?, p_bak?);
        let (loss, d_pooled) =
            feature_separation_grad(p_ins.0.view(), p_con.0.view(), p_bak.0.view(), S::from_f64_lossy(hp.margin));
        out.feat = loss.to_f64_lossy();
        let w = S::from_f64_lossy(hp.lambda_feat);
        for (b, idx) in [(INS, &p_ins.1), (CON, &p_con.1), (BAK, &p_bak.1)] {
            let per_row = &d_pooled[b] * (w / S::from_count(ks[b]));
            for &t in idx {
                let mut row = grads.embedded.row_mut(t);
                row += &per_row;
            }
        }
    }

    if flags.sparse {
        out.sparse = sparsity_loss(att.column(INS), att.column(CON)).to_f64_lossy();
        let g = S::from_f64_lossy(hp.lambda_sparse) / S::from_count(t_len);
        for b in [INS, CON] {
            grads.attention.column_mut(b).mapv_inplace(|v| v + g);
        }
    }

    out.total = out.cls_ins
        + out.cls_con
        + out.cls_bak
        + hp.lambda_guide * out.guide
        + hp.lambda_feat * out.feat
        + hp.lambda_sparse * out.sparse;

    weighted_cas_backward(acts.cas.view(), att, &d_branch, &mut grads.cas, &mut grads.attention);
    Ok((out, grads))
}
