//! Target-domain memory bank and neighborhood invariance.
//!
//! Every target sample owns one row of the bank, holding its most recent
//! feature after L2 normalisation. A query `j` is compared against all rows by
//! inner product, `s_jk = m_j · m_k`, and those similarities are turned into
//! a distribution over the bank with a temperature-scaled softmax,
//! `p_jk ∝ exp(τ · s_jk)`.
//!
//! Neighbors are chosen relative to the nearest one: with `s*` the largest
//! similarity to any other row, the neighborhood is every `k ≠ j` whose
//! similarity exceeds `ε · s*`. The nearest row is always kept, so the set is
//! never empty once the bank holds two rows. Ties for the nearest row go to
//! the lowest index; rows exactly on the threshold are excluded. A plain
//! top-`𝒦` neighborhood is available for comparison.
//!
//! Each neighbor is weighted by the Jaccard overlap of the two neighborhoods,
//! `w_jk = |N_j ∩ N_k| / |N_j ∪ N_k|`, and the invariance loss is
//!
//! ```text
//! L = −(1 / |N_j|) Σ_{k ∈ N_j} w_jk · log p_jk
//! ```
//!
//! Gradients flow only into the live feature of the query. Stored rows of
//! other samples, the neighbor sets and the weights are constants.

use std::collections::HashMap;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objectives::LOG_CLAMP;

pub const DEFAULT_TAU: f64 = 10.0;
pub const DEFAULT_EPSILON: f64 = 0.875;
pub const DEFAULT_KNN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeighborMode {
    /// Similarity above `epsilon` times the nearest-neighbor similarity.
    Adaptive { epsilon: f64 },
    /// The `k` most similar rows.
    Knn { k: usize },
}

impl Default for NeighborMode {
    fn default() -> Self {
        NeighborMode::Adaptive {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl NeighborMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NeighborMode::Adaptive { epsilon } if !(epsilon > 0.0 && epsilon <= 1.0) => {
                Err(Error::domain(format!("epsilon must lie in (0, 1], got {epsilon}")))
            }
            NeighborMode::Knn { k: 0 } => Err(Error::domain("knn size must be at least 1")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    rows: Array2<f64>,
    written: Vec<bool>,
    tau: f64,
    mode: NeighborMode,
}

/// Neighbors of one query together with their confidence weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub query_index: usize,
    /// Sorted ascending.
    pub neighbor_indices: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl MemoryBank {
    pub fn new(len: usize, dim: usize, tau: f64, mode: NeighborMode) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::domain("memory bank needs at least one row and one column"));
        }
        if !(tau > 0.0) {
            return Err(Error::domain(format!("tau must be positive, got {tau}")));
        }
        mode.validate()?;
        Ok(Self {
            rows: Array2::zeros((len, dim)),
            written: vec![false; len],
            tau,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mode(&self) -> NeighborMode {
        self.mode
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.rows.row(j)
    }

    pub fn is_fully_written(&self) -> bool {
        self.written.iter().all(|&w| w)
    }

    /// Replaces row `indices[i]` with `features[i] / ‖features[i]‖`. The whole
    /// update is validated before any row is written.
    pub fn update(&mut self, indices: &[usize], features: ArrayView2<'_, f64>) -> Result<()> {
        if indices.len() != features.nrows() {
            return Err(Error::shape(format!(
                "{} indices for {} feature rows",
                indices.len(),
                features.nrows()
            )));
        }
        if features.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "feature dim {} does not match bank dim {}",
                features.ncols(),
                self.dim()
            )));
        }
        let mut normalized = Vec::with_capacity(indices.len());
        for (&j, z) in indices.iter().zip(features.rows()) {
            if j >= self.len() {
                return Err(Error::Index { index: j, len: self.len() });
            }
            let n = l2_norm(&z.to_vec());
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::numeric(format!("cannot normalise feature of row {j} (norm {n})")));
            }
            normalized.push(z.mapv(|v| v / n));
        }
        for (&j, q) in indices.iter().zip(normalized) {
            self.rows.row_mut(j).assign(&q);
            self.written[j] = true;
        }
        Ok(())
    }

    fn check_query(&self, j: usize) -> Result<()> {
        if j >= self.len() {
            return Err(Error::Index { index: j, len: self.len() });
        }
        Ok(())
    }

    /// `s_jk = m_j · m_k` for every row `k`.
    pub fn similarities(&self, j: usize) -> Result<Array1<f64>> {
        self.check_query(j)?;
        Ok(self.similarities_to(self.rows.row(j)))
    }

    fn similarities_to(&self, q: ArrayView1<'_, f64>) -> Array1<f64> {
        let q = q.as_slice().expect("row-major bank");
        self.rows
            .rows()
            .into_iter()
            .map(|m| dot(q, m.as_slice().expect("row-major bank")))
            .collect()
    }

    /// `p_jk = exp(τ s_jk) / Σ_n exp(τ s_jn)`.
    pub fn neighbor_probs(&self, j: usize) -> Result<Array1<f64>> {
        let s = self.similarities(j)?;
        Ok(softmax_scaled(s.view(), self.tau))
    }

    pub fn adaptive_neighborhood(&self, j: usize, epsilon: f64) -> Result<Vec<usize>> {
        NeighborMode::Adaptive { epsilon }.validate()?;
        self.require_two()?;
        let s = self.similarities(j)?;
        Ok(adaptive_from_similarities(s.as_slice().expect("contiguous"), j, epsilon))
    }

    pub fn knn_neighborhood(&self, j: usize, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k + 1 > self.len() {
            return Err(Error::domain(format!(
                "knn size {k} outside [1, {}]",
                self.len().saturating_sub(1)
            )));
        }
        let s = self.similarities(j)?;
        Ok(knn_from_similarities(s.as_slice().expect("contiguous"), j, k))
    }

    /// Neighborhood under the bank's configured mode.
    pub fn neighborhood(&self, j: usize) -> Result<Vec<usize>> {
        match self.mode {
            NeighborMode::Adaptive { epsilon } => self.adaptive_neighborhood(j, epsilon),
            NeighborMode::Knn { k } => self.knn_neighborhood(j, k),
        }
    }

    /// Neighborhoods of several rows from one similarity block
    /// `M[rows] · Mᵀ`.
    fn neighborhoods_of(&self, rows: &[usize]) -> Result<Vec<Vec<usize>>> {
        self.mode.validate()?;
        self.require_two()?;
        if let NeighborMode::Knn { k } = self.mode {
            if k + 1 > self.len() {
                return Err(Error::domain(format!("knn size {k} outside [1, {}]", self.len() - 1)));
            }
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let block = self.rows.select(Axis(0), rows).dot(&self.rows.t());
        Ok(rows
            .par_iter()
            .enumerate()
            .map(|(r, &j)| {
                let s = block.row(r).to_vec();
                match self.mode {
                    NeighborMode::Adaptive { epsilon } => adaptive_from_similarities(&s, j, epsilon),
                    NeighborMode::Knn { k } => knn_from_similarities(&s, j, k),
                }
            })
            .collect())
    }

    fn require_two(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::domain("neighbor search needs at least two rows"));
        }
        Ok(())
    }

    /// Neighborhoods and Jaccard weights for `queries`. The neighborhoods of
    /// every neighbor are computed against the current bank as well. With
    /// `use_confidence = false` every weight is 1.
    pub fn neighbor_sets(&self, queries: &[usize], use_confidence: bool) -> Result<Vec<NeighborSet>> {
        for &j in queries {
            self.check_query(j)?;
        }
        let query_sets = self.neighborhoods_of(queries)?;

        let mut cache: HashMap<usize, Vec<usize>> = queries.iter().copied().zip(query_sets.iter().cloned()).collect();
        if use_confidence {
            let mut missing: Vec<usize> = query_sets
                .iter()
                .flatten()
                .copied()
                .filter(|k| !cache.contains_key(k))
                .collect();
            missing.sort_unstable();
            missing.dedup();
            let computed = self.neighborhoods_of(&missing)?;
            cache.extend(missing.into_iter().zip(computed));
        }

        Ok(queries
            .iter()
            .zip(query_sets)
            .map(|(&j, nj)| {
                let confidences = nj
                    .iter()
                    .map(|k| if use_confidence { jaccard_confidence(&nj, &cache[k]) } else { 1.0 })
                    .collect();
                NeighborSet {
                    query_index: j,
                    neighbor_indices: nj,
                    confidences,
                }
            })
            .collect())
    }

    /// Writes `index,f0,...,f{D-1}` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|i| format!("f{i}")).collect();
        writeln!(w, "index,{}", header.join(","))?;
        for (j, row) in self.rows.rows().into_iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{j},{}", vals.join(","))?;
        }
        Ok(())
    }
}

/// Neighborhood-invariance loss of one query and its gradient with respect to
/// the query's live (unnormalised) feature.
pub fn loss_nil(bank: &MemoryBank, set: &NeighborSet, live_feature: ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)> {
    bank.check_query(set.query_index)?;
    if live_feature.len() != bank.dim() {
        return Err(Error::shape(format!(
            "live feature dim {} does not match bank dim {}",
            live_feature.len(),
            bank.dim()
        )));
    }
    if set.neighbor_indices.len() != set.confidences.len() {
        return Err(Error::shape("neighbor indices and confidences differ in length"));
    }
    let dim = bank.dim();
    if set.neighbor_indices.is_empty() {
        return Ok((0.0, Array1::zeros(dim)));
    }
    let z = live_feature.to_owned();
    let norm = l2_norm(z.as_slice().expect("contiguous"));
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::numeric(format!("cannot normalise live feature (norm {norm})")));
    }
    let q = &z / norm;
    let s = bank.similarities_to(q.view());
    let tau = bank.tau;
    let max = s.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = tau * max + s.iter().map(|&v| (tau * (v - max)).exp()).sum::<f64>().ln();

    let inv_n = 1.0 / set.neighbor_indices.len() as f64;
    let log_floor = LOG_CLAMP.ln();
    let mut loss = 0.0;
    let mut ds = Array1::<f64>::zeros(bank.len());
    let mut active_weight = 0.0;
    for (&k, &w) in set.neighbor_indices.iter().zip(&set.confidences) {
        let log_p = tau * s[k] - lse;
        if log_p > log_floor {
            loss -= inv_n * w * log_p;
            ds[k] -= inv_n * w * tau;
            active_weight += w;
        } else {
            loss -= inv_n * w * log_floor;
        }
    }
    if active_weight != 0.0 {
        for (d, &v) in ds.iter_mut().zip(s.iter()) {
            let p = (tau * v - lse).exp();
            *d += inv_n * active_weight * tau * p;
        }
    }
    let dq = bank.rows.t().dot(&ds);
    let radial = q.dot(&dq);
    let dz = (&dq - &(&q * radial)) / norm;
    Ok((loss, dz))
}

/// `−(1/n) Σ w_k · log p_k` over a neighborhood's probabilities.
pub fn weighted_neighbor_nll(probs: &[f64], weights: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let n = probs.len() as f64;
    -probs
        .iter()
        .zip(weights)
        .map(|(&p, &w)| w * p.max(LOG_CLAMP).ln())
        .sum::<f64>()
        / n
}

/// Intersection over union of two ascending index sets; 0 when both are empty.
pub fn jaccard_confidence(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `γ = (n_minor / n_major) · (k_major / k_minor)`: how evenly a neighbor
/// search samples two classes of different sizes. 1 is perfectly balanced.
pub fn relative_neighbor_ratio(n_major: f64, k_major: f64, n_minor: f64, k_minor: f64) -> f64 {
    (n_minor / n_major) * (k_major / k_minor)
}

/// [`relative_neighbor_ratio`] measured on a bank whose rows are split into
/// a major (`false`) and a minor (`true`) group: `k` is the mean
/// neighborhood size of each group's queries under the bank's mode.
pub fn measured_neighbor_ratio(bank: &MemoryBank, minor: &[bool]) -> Result<f64> {
    if minor.len() != bank.len() {
        return Err(Error::shape(format!("{} group flags for {} rows", minor.len(), bank.len())));
    }
    let all: Vec<usize> = (0..bank.len()).collect();
    let sets = bank.neighborhoods_of(&all)?;
    let (mut n, mut k) = ([0.0f64; 2], [0.0f64; 2]);
    for (set, &m) in sets.iter().zip(minor) {
        n[m as usize] += 1.0;
        k[m as usize] += set.len() as f64;
    }
    if n[0] == 0.0 || n[1] == 0.0 {
        return Err(Error::domain("both groups need at least one row"));
    }
    Ok(relative_neighbor_ratio(n[0], k[0] / n[0], n[1], k[1] / n[1]))
}

pub(crate) fn adaptive_from_similarities(s: &[f64], j: usize, epsilon: f64) -> Vec<usize> {
    let mut best = usize::MAX;
    let mut best_s = f64::NEG_INFINITY;
    for (k, &v) in s.iter().enumerate() {
        if k != j && v > best_s {
            best = k;
            best_s = v;
        }
    }
    let threshold = epsilon * best_s;
    s.iter()
        .enumerate()
        .filter(|&(k, &v)| k != j && (k == best || v > threshold))
        .map(|(k, _)| k)
        .collect()
}

pub(crate) fn knn_from_similarities(s: &[f64], j: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..s.len()).filter(|&i| i != j).collect();
    let cmp = |a: &usize, b: &usize| s[*b].total_cmp(&s[*a]).then(a.cmp(b));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable();
    cand
}

fn softmax_scaled(s: ArrayView1<'_, f64>, tau: f64) -> Array1<f64> {
    let max = s.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = s.mapv(|v| (tau * (v - max)).exp());
    let total = e.sum();
    e /= total;
    e
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_norm(v: &[f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n.is_finite() {
        return n;
    }
    // squares overflowed; rescale so huge but finite vectors still normalise
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if !m.is_finite() || m == 0.0 {
        return n;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

/// Naive neighbor search straight from unnormalised features: normalises on
/// the fly, fills the similarity row with a double loop and selects from a
/// full sort. Used as a test oracle.
pub fn brute_force_neighbors(raw: ArrayView2<'_, f64>, j: usize, mode: NeighborMode) -> Vec<usize> {
    let n = raw.nrows();
    let d = raw.ncols();
    let mut unit = vec![vec![0.0; d]; n];
    for i in 0..n {
        let mut sq = 0.0;
        for c in 0..d {
            sq += raw[[i, c]] * raw[[i, c]];
        }
        let norm = sq.sqrt();
        for c in 0..d {
            unit[i][c] = raw[[i, c]] / norm;
        }
    }
    let mut sims = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        for c in 0..d {
            acc += unit[j][c] * unit[k][c];
        }
        sims[k] = acc;
    }
    let mut order: Vec<usize> = (0..n).filter(|&k| k != j).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).expect("finite").then(a.cmp(&b)));
    let mut out: Vec<usize> = match mode {
        NeighborMode::Knn { k } => order.into_iter().take(k).collect(),
        NeighborMode::Adaptive { epsilon } => {
            let Some(&nearest) = order.first() else {
                return Vec::new();
            };
            let threshold = epsilon * sims[nearest];
            std::iter::once(nearest)
                .chain(order[1..].iter().copied().filter(|&k| sims[k] > threshold))
                .collect()
        }
    };
    out.sort_unstable();
    out
}
