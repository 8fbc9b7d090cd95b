//! Decision rule and metrics.
//!
//! Labels live in `[0, K]` where `K` (the number of closed-set classes)
//! stands for "unknown". A sample is predicted as class `l* = argmax p_c`
//! when `p_o(l*) >= threshold`, otherwise as unknown. Only the selected
//! class's open score is consulted.

use std::io::Write;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::model::NetworkParams;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub closed_probs: Vec<f64>,
    pub open_pos: Vec<f64>,
    /// Closed-set argmax, lowest index on ties.
    pub closed_argmax: usize,
    /// Open positive score of `closed_argmax`.
    pub score: f64,
    /// In `[0, K]`; `K` means unknown.
    pub predicted: usize,
    pub true_label: usize,
}

impl PredictionRecord {
    pub fn num_classes(&self) -> usize {
        self.closed_probs.len()
    }

    pub fn is_unknown_sample(&self) -> bool {
        self.true_label == self.num_classes()
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.true_label
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Applies the decision rule to one sample.
pub fn decide(closed_probs: &[f64], open_pos: &[f64], threshold: f64, true_label: usize) -> Result<PredictionRecord> {
    let k = closed_probs.len();
    if k == 0 || open_pos.len() != k {
        return Err(Error::shape(format!(
            "closed row has {k} entries, open row {}",
            open_pos.len()
        )));
    }
    if true_label > k {
        return Err(Error::domain(format!("true label {true_label} outside [0, {k}]")));
    }
    let l = argmax(closed_probs);
    let score = open_pos[l];
    Ok(PredictionRecord {
        closed_probs: closed_probs.to_vec(),
        open_pos: open_pos.to_vec(),
        closed_argmax: l,
        score,
        predicted: if score >= threshold { l } else { k },
        true_label,
    })
}

/// Runs the network over `x` and applies the decision rule row by row.
pub fn predict(net: &NetworkParams, x: ArrayView2<'_, f64>, true_labels: &[usize], threshold: f64) -> Result<Vec<PredictionRecord>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::domain(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    if x.nrows() != true_labels.len() {
        return Err(Error::shape(format!("{} rows but {} labels", x.nrows(), true_labels.len())));
    }
    let out = net.forward(x)?;
    out.closed_probs
        .rows()
        .into_iter()
        .zip(out.open_pos.rows())
        .zip(true_labels)
        .map(|((c, o), &y)| decide(&c.to_vec(), &o.to_vec(), threshold, y))
        .collect()
}

/// Fraction of exact matches, unknown counting as a label.
pub fn accuracy(preds: &[PredictionRecord]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::domain("accuracy of an empty prediction set"));
    }
    Ok(preds.iter().filter(|p| p.is_correct()).count() as f64 / preds.len() as f64)
}

/// Per-class accuracies of the known classes present among `preds`, in
/// class order.
pub fn per_class_known_accuracy(preds: &[PredictionRecord]) -> Vec<(usize, f64)> {
    let Some(k) = preds.first().map(|p| p.num_classes()) else {
        return Vec::new();
    };
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for p in preds.iter().filter(|p| !p.is_unknown_sample()) {
        totals[p.true_label] += 1;
        if p.is_correct() {
            hits[p.true_label] += 1;
        }
    }
    (0..k)
        .filter(|&c| totals[c] > 0)
        .map(|c| (c, hits[c] as f64 / totals[c] as f64))
        .collect()
}

/// Mean per-class accuracy over known classes present in the target.
pub fn known_accuracy(preds: &[PredictionRecord]) -> Option<f64> {
    let per = per_class_known_accuracy(preds);
    if per.is_empty() {
        return None;
    }
    Some(per.iter().map(|(_, a)| a).sum::<f64>() / per.len() as f64)
}

pub fn unknown_accuracy(preds: &[PredictionRecord]) -> Option<f64> {
    let unknown: Vec<_> = preds.iter().filter(|p| p.is_unknown_sample()).collect();
    if unknown.is_empty() {
        return None;
    }
    Some(unknown.iter().filter(|p| p.is_correct()).count() as f64 / unknown.len() as f64)
}

/// `2·a_k·a_u / (a_k + a_u)`, 0 when both are 0.
pub fn harmonic_mean(a_known: f64, a_unknown: f64) -> f64 {
    let s = a_known + a_unknown;
    if s == 0.0 {
        0.0
    } else {
        2.0 * a_known * a_unknown / s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HScore {
    pub a_known: f64,
    pub a_unknown: f64,
    pub h: f64,
}

pub fn h_score(preds: &[PredictionRecord]) -> Result<HScore> {
    let a_known = known_accuracy(preds).ok_or_else(|| Error::domain("H-score needs known-class samples"))?;
    let a_unknown = unknown_accuracy(preds).ok_or_else(|| Error::domain("H-score needs unknown-class samples"))?;
    Ok(HScore {
        a_known,
        a_unknown,
        h: harmonic_mean(a_known, a_unknown),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    /// Known samples with correct closed argmax and score `>= threshold`.
    pub ccr: f64,
    /// Unknown samples with score `>= threshold`.
    pub fpr: f64,
}

/// Sweeps the threshold over `{0}`, every distinct selected score and a
/// ceiling above all scores, in increasing order. Returns the curve and the
/// trapezoidal area under CCR as a function of FPR.
pub fn ccr_fpr_curve(preds: &[PredictionRecord]) -> Result<(Vec<CurvePoint>, f64)> {
    let known: Vec<_> = preds.iter().filter(|p| !p.is_unknown_sample()).collect();
    let unknown: Vec<f64> = preds.iter().filter(|p| p.is_unknown_sample()).map(|p| p.score).collect();
    if unknown.is_empty() {
        return Err(Error::domain("CCR/FPR curve needs unknown-class samples"));
    }
    if known.is_empty() {
        return Err(Error::domain("CCR/FPR curve needs known-class samples"));
    }
    let mut thresholds: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let max = thresholds.iter().copied().fold(0.0, f64::max);
    let ceiling = if max < 1.0 { 1.0 } else { f64::from_bits(max.to_bits() + 1) };
    thresholds.push(0.0);
    thresholds.push(ceiling);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let curve: Vec<CurvePoint> = thresholds
        .iter()
        .map(|&t| CurvePoint {
            threshold: t,
            ccr: known
                .iter()
                .filter(|p| p.closed_argmax == p.true_label && p.score >= t)
                .count() as f64
                / known.len() as f64,
            fpr: unknown.iter().filter(|&&s| s >= t).count() as f64 / unknown.len() as f64,
        })
        .collect();
    let ucr = curve
        .windows(2)
        .map(|w| (w[0].fpr - w[1].fpr) * (w[0].ccr + w[1].ccr) / 2.0)
        .sum();
    Ok((curve, ucr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub setting: String,
    pub seed: u64,
    /// Exact-match accuracy over all target samples.
    pub closed_accuracy: f64,
    pub per_class_known_acc: Vec<(usize, f64)>,
    pub a_known: Option<f64>,
    pub a_unknown: Option<f64>,
    pub h_score: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub ucr: Option<f64>,
}

pub const METRICS_HEADER: &str = "setting,seed,a_known,a_unknown,h_score,accuracy,ucr";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn from_predictions(preds: &[PredictionRecord], setting: &str, seed: u64) -> Result<Self> {
        let closed_accuracy = accuracy(preds)?;
        let a_known = known_accuracy(preds);
        let a_unknown = unknown_accuracy(preds);
        let (curve, ucr) = match (a_known, a_unknown) {
            (Some(_), Some(_)) => {
                let (c, u) = ccr_fpr_curve(preds)?;
                (c, Some(u))
            }
            _ => (Vec::new(), None),
        };
        Ok(Self {
            setting: setting.to_string(),
            seed,
            closed_accuracy,
            per_class_known_acc: per_class_known_accuracy(preds),
            a_known,
            a_unknown,
            h_score: a_known.zip(a_unknown).map(|(k, u)| harmonic_mean(k, u)),
            curve,
            ucr,
        })
    }

    /// One metrics CSV row without the trailing newline; undefined values
    /// are left empty.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.setting,
            self.seed,
            opt(self.a_known),
            opt(self.a_unknown),
            opt(self.h_score),
            self.closed_accuracy,
            opt(self.ucr)
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        writeln!(w, "{}", self.csv_row())
    }

    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "threshold,ccr,fpr")?;
        for p in &self.curve {
            writeln!(w, "{},{},{}", p.threshold, p.ccr, p.fpr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rec(closed: &[f64], open: &[f64], y: usize) -> PredictionRecord {
        decide(closed, open, DEFAULT_THRESHOLD, y).unwrap()
    }

    /// Known sample predicted correctly or not, with a given score.
    fn known(y: usize, k: usize, correct: bool, score: f64) -> PredictionRecord {
        let mut c = vec![0.0; k];
        let l = if correct { y } else { (y + 1) % k };
        c[l] = 1.0;
        let mut o = vec![0.0; k];
        o[l] = score;
        decide(&c, &o, DEFAULT_THRESHOLD, y).unwrap()
    }

    fn unknown(k: usize, score: f64) -> PredictionRecord {
        let mut c = vec![0.0; k];
        c[0] = 1.0;
        let mut o = vec![0.0; k];
        o[0] = score;
        decide(&c, &o, DEFAULT_THRESHOLD, k).unwrap()
    }

    #[test]
    fn decision_rule_cases() {
        assert_eq!(rec(&[0.7, 0.3], &[0.9, 0.1], 0).predicted, 0);
        assert_eq!(rec(&[0.7, 0.3], &[0.4, 0.9], 0).predicted, 2);
        assert_eq!(rec(&[0.7, 0.3], &[0.5, 0.0], 0).predicted, 0);
        assert_eq!(rec(&[0.4, 0.4, 0.2], &[0.6, 0.1, 0.9], 0).closed_argmax, 0);
        assert!(decide(&[0.5, 0.5], &[0.5], 0.5, 0).is_err());
        assert!(decide(&[0.5, 0.5], &[0.5, 0.5], 0.5, 3).is_err());
    }

    #[test]
    fn accuracy_cases() {
        let good = vec![known(0, 2, true, 0.9), unknown(2, 0.1)];
        assert_eq!(accuracy(&good).unwrap(), 1.0);
        let bad = vec![known(0, 2, false, 0.9), unknown(2, 0.9)];
        assert_eq!(accuracy(&bad).unwrap(), 0.0);
        let mixed = vec![
            known(0, 2, true, 0.9),
            known(1, 2, true, 0.9),
            unknown(2, 0.1),
            unknown(2, 0.9),
        ];
        assert_eq!(accuracy(&mixed).unwrap(), 0.75);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn h_score_cases() {
        let perfect = vec![known(0, 2, true, 0.9), unknown(2, 0.1)];
        assert_eq!(h_score(&perfect).unwrap().h, 1.0);
        let no_unknown = vec![known(0, 2, true, 0.9), unknown(2, 0.9)];
        assert_eq!(h_score(&no_unknown).unwrap().h, 0.0);
        let half = vec![known(0, 2, true, 0.9), known(1, 2, true, 0.1), unknown(2, 0.1)];
        let h = h_score(&half).unwrap();
        assert_eq!((h.a_known, h.a_unknown), (0.5, 1.0));
        assert_abs_diff_eq!(h.h, 2.0 / 3.0, epsilon = 1e-12);
        assert!(h_score(&[known(0, 2, true, 0.9)]).is_err());
        assert!(h_score(&[unknown(2, 0.9)]).is_err());
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn per_class_average_ignores_absent_classes() {
        // class 1 has a single sample, class 0 has three; class 2 is absent
        let preds = vec![
            known(0, 3, true, 0.9),
            known(0, 3, true, 0.9),
            known(0, 3, true, 0.9),
            known(1, 3, false, 0.9),
        ];
        assert_eq!(per_class_known_accuracy(&preds), vec![(0, 1.0), (1, 0.0)]);
        assert_eq!(known_accuracy(&preds), Some(0.5));
    }

    #[test]
    fn curve_endpoints_and_ideal_ucr() {
        let preds = vec![
            known(0, 2, true, 0.8),
            known(1, 2, true, 0.9),
            known(1, 2, false, 0.95),
            unknown(2, 0.1),
            unknown(2, 0.3),
        ];
        let (curve, _) = ccr_fpr_curve(&preds).unwrap();
        let first = curve.first().unwrap();
        assert_eq!((first.threshold, first.fpr), (0.0, 1.0));
        assert_abs_diff_eq!(first.ccr, 2.0 / 3.0, epsilon = 1e-12);
        let last = curve.last().unwrap();
        assert_eq!((last.ccr, last.fpr), (0.0, 0.0));

        let ideal = vec![known(0, 2, true, 0.8), known(1, 2, true, 0.9), unknown(2, 0.1), unknown(2, 0.3)];
        let (_, ucr) = ccr_fpr_curve(&ideal).unwrap();
        assert_abs_diff_eq!(ucr, 1.0, epsilon = 1e-12);
        let inverted = vec![known(0, 2, true, 0.1), unknown(2, 0.8)];
        assert_abs_diff_eq!(ccr_fpr_curve(&inverted).unwrap().1, 0.0, epsilon = 1e-12);
        assert!(ccr_fpr_curve(&[known(0, 2, true, 0.5)]).is_err());
    }

    #[test]
    fn report_csv() {
        let preds = vec![known(0, 2, true, 0.9), known(1, 2, true, 0.1), unknown(2, 0.1)];
        let r = MetricsReport::from_predictions(&preds, "OPDA", 3).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("setting,seed,a_known,a_unknown,h_score,accuracy,ucr\nOPDA,3,0.5,1,0.6666666666666666,"));
        let closed = vec![known(0, 2, true, 0.9)];
        let r = MetricsReport::from_predictions(&closed, "CDA", 0).unwrap();
        assert_eq!(r.csv_row(), "CDA,0,1,,,1,");
    }

    proptest! {
        #[test]
        fn curve_is_monotone(scores in proptest::collection::vec((0.0f64..1.0, 0usize..3, proptest::bool::ANY), 2..40)) {
            let mut preds: Vec<_> = scores.iter().map(|&(s, y, ok)| {
                if y == 2 { unknown(2, s) } else { known(y, 2, ok, s) }
            }).collect();
            preds.push(unknown(2, 0.5));
            preds.push(known(0, 2, true, 0.5));
            let (curve, ucr) = ccr_fpr_curve(&preds).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[1].ccr <= w[0].ccr);
                prop_assert!(w[1].fpr <= w[0].fpr);
            }
            prop_assert!((0.0..=1.0).contains(&ucr));
            let h = h_score(&preds).unwrap();
            prop_assert!(h.h <= 2.0 * h.a_known.min(h.a_unknown) + 1e-12);
        }

        #[test]
        fn argmax_invariant_under_monotone_logit_map(logits in proptest::collection::vec(-5.0f64..5.0, 2..6), shift in -3.0f64..3.0) {
            let soft = |v: &[f64]| {
                let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let a = soft(&logits);
            let b = soft(&logits.iter().map(|x| 2.0 * x + shift).collect::<Vec<_>>());
            let open = vec![0.6; logits.len()];
            prop_assert_eq!(rec(&a, &open, 0).predicted, rec(&b, &open, 0).predicted);
        }
    }
}
