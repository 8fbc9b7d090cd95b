//! The full training objective with exact gradients for every parameter.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::memory::{loss_nil, MemoryBank, NeighborSet};
use crate::model::{closed_softmax_backward, open_pair_backward, open_positive_scores, softmax_rows, NetworkParams};
use crate::nn::{GradientBundle, LayerStack};
use crate::objectives::mixup::{MixPlan, MixupMode};
use crate::objectives::{loss_cc, loss_cls, loss_cmm, loss_oem, loss_ova, loss_smm, LossWeights};

/// First training epoch (1-based) in which the neighborhood term is active.
pub const NIL_START_EPOCH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveTerms {
    pub nil: bool,
    pub cc: bool,
}

impl Default for ActiveTerms {
    fn default() -> Self {
        Self { nil: true, cc: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub mixup: MixupMode,
    pub terms: ActiveTerms,
    /// Treat `p_c` as a constant in the consistency term.
    pub cc_stop_gradient: bool,
    /// Mixup gradients stop at the mixed feature and update only the open heads.
    pub cmm_heads_only: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            mixup: MixupMode::Cross,
            terms: ActiveTerms::default(),
            cc_stop_gradient: true,
            cmm_heads_only: false,
        }
    }
}

impl ObjectiveConfig {
    /// A term with zero weight counts as inactive: it is not evaluated and
    /// reports 0.
    pub fn nil_active(&self) -> bool {
        self.terms.nil && self.weights.beta1 > 0.0
    }

    pub fn cc_active(&self) -> bool {
        self.terms.cc && self.weights.eta > 0.0
    }

    pub fn mixup_active(&self) -> bool {
        self.mixup != MixupMode::Off && self.weights.beta2 > 0.0
    }

    pub fn baseline() -> Self {
        Self {
            weights: LossWeights::baseline(),
            mixup: MixupMode::Off,
            terms: ActiveTerms { nil: false, cc: false },
            ..Self::default()
        }
    }
}

/// One paired mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub source_x: ArrayView2<'a, f64>,
    pub source_y: &'a [usize],
    pub target_x: ArrayView2<'a, f64>,
    /// Memory-bank row of each target sample.
    pub target_idx: &'a [usize],
}

/// Memory bank snapshot and the neighborhoods of this batch's target rows,
/// `sets[i]` belonging to target row `i`.
#[derive(Debug, Clone, Copy)]
pub struct NilInputs<'a> {
    pub bank: &'a MemoryBank,
    pub sets: &'a [NeighborSet],
}

/// Batch means of every term. Inactive terms are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cls: f64,
    pub ova: f64,
    pub oem: f64,
    pub nil: f64,
    pub cmm: f64,
    pub cc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.cls, self.ova, self.oem, self.nil, self.cmm, self.cc, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn row_slice(a: &Array2<f64>, i: usize) -> &[f64] {
    let ncols = a.ncols();
    &a.as_slice().expect("standard layout")[i * ncols..(i + 1) * ncols]
}

fn set_row(a: &mut Array2<f64>, i: usize, v: &[f64], scale: f64) {
    for (dst, &x) in a.row_mut(i).iter_mut().zip(v) {
        *dst += scale * x;
    }
}

/// Evaluates the objective and its gradient in the layer order of
/// [`NetworkParams`] (extractor, closed head, open heads).
///
/// `epoch` is 1-based; the neighborhood term is skipped before
/// [`NIL_START_EPOCH`] or when `nil` is `None`. `plan` fixes mixup pairs and
/// coefficients and is ignored when mixup is off.
pub fn loss_total(
    params: &NetworkParams,
    batch: &Batch<'_>,
    cfg: &ObjectiveConfig,
    plan: &MixPlan,
    nil: Option<NilInputs<'_>>,
    epoch: usize,
) -> Result<(LossBreakdown, GradientBundle)> {
    let w = &cfg.weights;
    w.validate()?;
    let bs = batch.source_x.nrows();
    let bt = batch.target_x.nrows();
    if bs == 0 || bt == 0 {
        return Err(Error::domain("objective needs non-empty source and target batches"));
    }
    if batch.source_y.len() != bs {
        return Err(Error::shape(format!("{} labels for {bs} source rows", batch.source_y.len())));
    }
    if batch.target_idx.len() != bt {
        return Err(Error::shape(format!("{} indices for {bt} target rows", batch.target_idx.len())));
    }
    let k = params.num_classes();

    let acts_s = params.extractor.forward(batch.source_x)?;
    let acts_t = params.extractor.forward(batch.target_x)?;
    let zs = acts_s.last();
    let zt = acts_t.last();
    let pc_s = params.closed_probs(zs.view())?;
    let po_s = params.open_scores(zs.view())?;
    let pc_t = params.closed_probs(zt.view())?;
    let po_t = params.open_scores(zt.view())?;

    let mut out = LossBreakdown::default();
    let mut dpc_s = Array2::<f64>::zeros((bs, k));
    let mut dpo_s = Array2::<f64>::zeros((bs, k));
    let mut dpc_t = Array2::<f64>::zeros((bt, k));
    let mut dpo_t = Array2::<f64>::zeros((bt, k));
    let inv_s = 1.0 / bs as f64;
    let inv_t = 1.0 / bt as f64;

    for (i, &y) in batch.source_y.iter().enumerate() {
        let cls = loss_cls(row_slice(&pc_s, i), y)?;
        let ova = loss_ova(row_slice(&po_s, i), y)?;
        out.cls += inv_s * cls.value;
        out.ova += inv_s * ova.value;
        set_row(&mut dpc_s, i, &cls.grad, inv_s);
        set_row(&mut dpo_s, i, &ova.grad, inv_s);
    }
    for i in 0..bt {
        let oem = loss_oem(row_slice(&po_t, i));
        out.oem += inv_t * oem.value;
        set_row(&mut dpo_t, i, &oem.grad, w.gamma * inv_t);
        if cfg.cc_active() {
            let cc = loss_cc(row_slice(&pc_t, i), row_slice(&po_t, i))?;
            out.cc += inv_t * cc.value;
            set_row(&mut dpo_t, i, &cc.grad_open, w.eta * inv_t);
            if !cfg.cc_stop_gradient {
                set_row(&mut dpc_t, i, &cc.grad_closed, w.eta * inv_t);
            }
        }
    }

    let mut grads = GradientBundle::zeros_for(&params.layers());
    let n_ex = params.extractor_len();
    let (ex_grads, head_grads) = grads.layers.split_at_mut(n_ex);
    let (closed_grad, open_grad) = head_grads.split_at_mut(1);
    let closed_grad = &mut closed_grad[0];
    let open_grad = &mut open_grad[0];

    let head_backward = |z: &Array2<f64>,
                         pc: &Array2<f64>,
                         po: &Array2<f64>,
                         dpc: &Array2<f64>,
                         dpo: &Array2<f64>,
                         cg: &mut crate::nn::DenseLayer,
                         og: &mut crate::nn::DenseLayer|
     -> Array2<f64> {
        let n = z.nrows();
        let mut dcl = Array2::<f64>::zeros((n, k));
        let mut dol = Array2::<f64>::zeros((n, 2 * k));
        for i in 0..n {
            dcl.row_mut(i)
                .assign(&closed_softmax_backward(row_slice(pc, i), row_slice(dpc, i)));
            dol.row_mut(i).assign(&open_pair_backward(row_slice(po, i), row_slice(dpo, i)));
        }
        let dz_closed = params.closed_head.backward_into(z.view(), dcl.view(), cg);
        let dz_open = params.open_heads.backward_into(z.view(), dol.view(), og);
        dz_closed + dz_open
    };
    let mut dzs = head_backward(zs, &pc_s, &po_s, &dpc_s, &dpo_s, closed_grad, open_grad);
    let mut dzt = head_backward(zt, &pc_t, &po_t, &dpc_t, &dpo_t, closed_grad, open_grad);

    if let (true, Some(nil), true) = (cfg.nil_active(), nil, epoch >= NIL_START_EPOCH) {
        if nil.sets.len() != bt {
            return Err(Error::shape(format!("{} neighbor sets for {bt} target rows", nil.sets.len())));
        }
        for (i, set) in nil.sets.iter().enumerate() {
            if set.query_index != batch.target_idx[i] {
                return Err(Error::shape(format!(
                    "neighbor set {i} is for row {} but target row maps to {}",
                    set.query_index, batch.target_idx[i]
                )));
            }
            let (v, dz) = loss_nil(nil.bank, set, zt.row(i))?;
            out.nil += inv_t * v;
            dzt.row_mut(i).scaled_add(w.beta1 * inv_t, &dz);
        }
    }

    if cfg.mixup_active() && !plan.is_empty() {
        let p = plan.len();
        let inv_p = 1.0 / p as f64;
        let second = match cfg.mixup {
            MixupMode::Source => zs,
            _ => zt,
        };
        let mut zm = Array2::<f64>::zeros((p, zs.ncols()));
        for (r, &(i, j, lambda)) in plan.pairs.iter().enumerate() {
            if i >= bs || j >= second.nrows() {
                return Err(Error::Index {
                    index: i.max(j),
                    len: bs.min(second.nrows()),
                });
            }
            zm.row_mut(r)
                .assign(&(&zs.row(i) * lambda + &second.row(j) * (1.0 - lambda)));
        }
        let po_m = open_positive_scores(params.open_logits(zm.view())?.view());
        let mut dol = Array2::<f64>::zeros((p, 2 * k));
        for (r, &(i, j, _)) in plan.pairs.iter().enumerate() {
            let row = row_slice(&po_m, r);
            let l = match cfg.mixup {
                MixupMode::Source => loss_smm(row, batch.source_y[i], batch.source_y[j])?
                    .ok_or_else(|| Error::domain(format!("same-class source pair ({i}, {j}) in mixup plan")))?,
                _ => loss_cmm(row, batch.source_y[i])?,
            };
            out.cmm += inv_p * l.value;
            let dpo: Vec<f64> = l.grad.iter().map(|g| g * w.beta2 * inv_p).collect();
            dol.row_mut(r).assign(&open_pair_backward(row, &dpo));
        }
        let dzm = params.open_heads.backward_into(zm.view(), dol.view(), open_grad);
        if !cfg.cmm_heads_only {
            for (r, &(i, j, lambda)) in plan.pairs.iter().enumerate() {
                dzs.row_mut(i).scaled_add(lambda, &dzm.row(r));
                match cfg.mixup {
                    MixupMode::Source => dzs.row_mut(j).scaled_add(1.0 - lambda, &dzm.row(r)),
                    _ => dzt.row_mut(j).scaled_add(1.0 - lambda, &dzm.row(r)),
                }
            }
        }
    }

    let gs = params.extractor.backprop(&acts_s, dzs.view())?;
    let gt = params.extractor.backprop(&acts_t, dzt.view())?;
    for (dst, (a, b)) in ex_grads.iter_mut().zip(gs.layers.iter().zip(&gt.layers)) {
        dst.weight += &a.weight;
        dst.weight += &b.weight;
        dst.bias += &a.bias;
        dst.bias += &b.bias;
    }

    out.total = out.cls + out.ova + w.gamma * out.oem + w.beta1 * out.nil + w.beta2 * out.cmm + w.eta * out.cc;
    Ok((out, grads))
}

/// Value-only evaluation, convenient for finite-difference checks.
pub fn loss_total_value(
    params: &NetworkParams,
    batch: &Batch<'_>,
    cfg: &ObjectiveConfig,
    plan: &MixPlan,
    nil: Option<NilInputs<'_>>,
    epoch: usize,
) -> Result<LossBreakdown> {
    Ok(loss_total(params, batch, cfg, plan, nil, epoch)?.0)
}

/// Closed-set probabilities and open positive scores of raw feature rows,
/// without the extractor.
pub fn head_probs(params: &NetworkParams, z: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    Ok((
        softmax_rows(params.closed_logits(z)?.view()),
        open_positive_scores(params.open_logits(z)?.view()),
    ))
}

/// Mean of each column, used for per-epoch loss summaries.
pub fn column_means(rows: ArrayView2<'_, f64>) -> Option<Vec<f64>> {
    rows.mean_axis(Axis(0)).map(|m| m.to_vec())
}
