//! Training losses.
//!
//! Each per-sample loss takes probability rows (closed-set `p_c`, open-set
//! positive scores `p_o`) and returns its value together with the gradient
//! with respect to those probabilities. [`total`] chains these gradients
//! through the heads and the extractor to build the full training objective.

pub mod mixup;
pub mod total;

pub use mixup::{mix_features, sample_mix_coeff, MixPlan, MixupMode, MixupSample};
pub use total::{loss_total, loss_total_value, ActiveTerms, Batch, LossBreakdown, NilInputs, ObjectiveConfig};

use crate::error::{Error, Result};
use crate::model::HeadOutputs;

/// Floor applied inside every logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_BETA1: f64 = 0.5;
pub const DEFAULT_BETA2: f64 = 0.1;
pub const DEFAULT_ETA: f64 = 0.16;
pub const DEFAULT_ALPHA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Open-set entropy minimisation.
    pub gamma: f64,
    /// Neighborhood invariance.
    pub beta1: f64,
    /// Mixup rejection.
    pub beta2: f64,
    /// Closed/open consistency.
    pub eta: f64,
    /// Shape of the symmetric Beta distribution for mixup coefficients.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eta: DEFAULT_ETA,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl LossWeights {
    /// Baseline: no neighborhood, mixup or consistency terms.
    pub fn baseline() -> Self {
        Self {
            beta1: 0.0,
            beta2: 0.0,
            eta: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eta", self.eta),
            ("alpha", self.alpha),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A loss value and its gradient with respect to one probability row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `ln(max(p, LOG_CLAMP))` and its derivative in `p`.
fn clamped_ln(p: f64) -> (f64, f64) {
    if p > LOG_CLAMP {
        (p.ln(), 1.0 / p)
    } else {
        (LOG_CLAMP.ln(), 0.0)
    }
}

fn check_label(label: usize, k: usize) -> Result<()> {
    if label >= k {
        return Err(Error::domain(format!("label {label} outside [0, {k})")));
    }
    Ok(())
}

/// Closed-set cross-entropy `−log p_c(y|x)`.
pub fn loss_cls(closed_row: &[f64], label: usize) -> Result<RowLoss> {
    check_label(label, closed_row.len())?;
    let (ln, d) = clamped_ln(closed_row[label]);
    let mut grad = vec![0.0; closed_row.len()];
    grad[label] = -d;
    Ok(RowLoss { value: -ln, grad })
}

/// Hard-negative one-vs-all loss:
/// `−log p_o(y|x) − min_{l≠y} log(1 − p_o(l|x))`.
///
/// The minimum picks the negative head with the largest positive score; ties
/// go to the lowest index.
pub fn loss_ova(open_row: &[f64], label: usize) -> Result<RowLoss> {
    let k = open_row.len();
    if k < 2 {
        return Err(Error::domain(format!("one-vs-all loss needs K >= 2, got {k}")));
    }
    check_label(label, k)?;
    let hardest = (0..k)
        .filter(|&l| l != label)
        .fold(None, |best: Option<usize>, l| match best {
            Some(b) if open_row[b] >= open_row[l] => Some(b),
            _ => Some(l),
        })
        .expect("K >= 2");
    let (ln_pos, d_pos) = clamped_ln(open_row[label]);
    let (ln_neg, d_neg) = clamped_ln(1.0 - open_row[hardest]);
    let mut grad = vec![0.0; k];
    grad[label] = -d_pos;
    grad[hardest] = d_neg;
    Ok(RowLoss {
        value: -ln_pos - ln_neg,
        grad,
    })
}

/// Mean binary entropy of the open-set heads.
pub fn loss_oem(open_row: &[f64]) -> RowLoss {
    let k = open_row.len() as f64;
    let mut value = 0.0;
    let grad = open_row
        .iter()
        .map(|&p| {
            let (ln_p, d_p) = clamped_ln(p);
            let (ln_q, d_q) = clamped_ln(1.0 - p);
            value -= (p * ln_p + (1.0 - p) * ln_q) / k;
            // d/dp [p ln p + (1−p) ln(1−p)] with clamped logs
            -((ln_p + p * d_p) - (ln_q + (1.0 - p) * d_q)) / k
        })
        .collect();
    RowLoss { value, grad }
}

/// `−log(1 − p_o(y|z^m))` on a mixed feature, pushing the source class's
/// positive score towards zero.
pub fn loss_cmm(open_row: &[f64], source_label: usize) -> Result<RowLoss> {
    check_label(source_label, open_row.len())?;
    let (ln, d) = clamped_ln(1.0 - open_row[source_label]);
    let mut grad = vec![0.0; open_row.len()];
    grad[source_label] = d;
    Ok(RowLoss { value: -ln, grad })
}

/// Within-source mixup variant: both source labels of the pair are
/// penalised. Returns `None` when the pair shares a class.
pub fn loss_smm(open_row: &[f64], label_a: usize, label_b: usize) -> Result<Option<RowLoss>> {
    check_label(label_a, open_row.len())?;
    check_label(label_b, open_row.len())?;
    if label_a == label_b {
        return Ok(None);
    }
    let a = loss_cmm(open_row, label_a)?;
    let b = loss_cmm(open_row, label_b)?;
    let grad = a.grad.iter().zip(&b.grad).map(|(x, y)| x + y).collect();
    Ok(Some(RowLoss {
        value: a.value + b.value,
        grad,
    }))
}

/// Consistency term and its gradients with respect to both rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyLoss {
    pub value: f64,
    /// `∂L/∂p_c(l) = −p_o(l)/K`.
    pub grad_closed: Vec<f64>,
    /// `∂L/∂p_o(l) = −p_c(l)/K`.
    pub grad_open: Vec<f64>,
}

/// `−(1/K) Σ_l p_c(l|x) · p_o(l|x)`.
pub fn loss_cc(closed_row: &[f64], open_row: &[f64]) -> Result<ConsistencyLoss> {
    if closed_row.len() != open_row.len() {
        return Err(Error::shape(format!(
            "closed row has {} classes, open row {}",
            closed_row.len(),
            open_row.len()
        )));
    }
    let k = closed_row.len() as f64;
    let value = -closed_row.iter().zip(open_row).map(|(c, o)| c * o).sum::<f64>() / k;
    Ok(ConsistencyLoss {
        value,
        grad_closed: open_row.iter().map(|o| -o / k).collect(),
        grad_open: closed_row.iter().map(|c| -c / k).collect(),
    })
}

/// `E_src[L_cls + L_ova] + γ · E_tgt[L_oem]` over already computed head
/// outputs.
pub fn loss_base(source: &HeadOutputs, labels: &[usize], target: &HeadOutputs, gamma: f64) -> Result<f64> {
    let ns = source.closed_probs.nrows();
    let nt = target.open_pos.nrows();
    if ns == 0 || nt == 0 {
        return Err(Error::domain("loss_base needs non-empty source and target batches"));
    }
    if labels.len() != ns {
        return Err(Error::shape(format!("{} labels for {ns} source rows", labels.len())));
    }
    let mut src = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let pc = source.closed_probs.row(i);
        let po = source.open_pos.row(i);
        src += loss_cls(pc.as_slice().expect("row-major"), y)?.value;
        src += loss_ova(po.as_slice().expect("row-major"), y)?.value;
    }
    let tgt: f64 = target
        .open_pos
        .rows()
        .into_iter()
        .map(|r| loss_oem(r.as_slice().expect("row-major")).value)
        .sum();
    Ok(src / ns as f64 + gamma * tgt / nt as f64)
}
