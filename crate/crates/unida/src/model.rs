//! The network: a feature extractor, a `K`-way closed-set head and `K`
//! one-vs-all open-set heads.
//!
//! The closed-set head normalises across classes (one softmax over `K`
//! logits). Each open-set head normalises across its own (positive, negative)
//! pair, so `p_o(l|x)` for different `l` are independent binary scores. Open
//! head `l` owns rows `2l` (positive) and `2l + 1` (negative) of the fused
//! open-head weight matrix.
//!
//! # Checkpoint format
//!
//! Plain UTF-8 text, one record per line:
//!
//! ```text
//! unida-checkpoint 1
//! classes <K>
//! feature_dim <D>
//! dims <input> <hidden...> <D>
//! activation <tanh|softplus|identity>
//! seed <u64>
//! tensor <name> <rows> <cols>
//! <rows lines of cols space-separated values>
//! ...
//! end
//! ```
//!
//! Tensors appear in the order `extractor.<i>.weight`, `extractor.<i>.bias`
//! for every extractor layer, then `closed.weight`, `closed.bias`,
//! `open.weight`, `open.bias`. Biases are stored as a single row. Values use
//! the shortest decimal form that round-trips, so a saved checkpoint reloads
//! bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, LayerStack, Mlp};

pub const CHECKPOINT_MAGIC: &str = "unida-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub extractor: Mlp,
    pub closed_head: DenseLayer,
    pub open_heads: DenseLayer,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// Raw extractor output `z`, one row per sample.
    pub features: Array2<f64>,
    /// `p_c(l|x)`; rows lie on the simplex.
    pub closed_probs: Array2<f64>,
    /// `p_o(l|x)`, the positive score of each open head.
    pub open_pos: Array2<f64>,
}

impl NetworkParams {
    /// `dims` covers the extractor: input width, hidden widths, feature width.
    pub fn new(dims: &[usize], num_classes: usize, activation: Activation, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config(format!("need at least 2 known classes, got {num_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extractor = Mlp::new(dims, activation, &mut rng)?;
        let d = extractor.output_dim();
        let closed_head = DenseLayer::xavier(d, num_classes, &mut rng);
        let open_heads = DenseLayer::xavier(d, 2 * num_classes, &mut rng);
        Ok(Self {
            extractor,
            closed_head,
            open_heads,
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.closed_head.out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    /// `z = F(x)`, unnormalised.
    pub fn extract_features(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if batch.nrows() == 0 {
            return Err(Error::shape("empty batch"));
        }
        Ok(self.extractor.forward(batch)?.last().clone())
    }

    pub fn closed_logits(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.closed_head.affine(z)
    }

    pub fn open_logits(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.open_heads.affine(z)
    }

    pub fn closed_probs(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(self.closed_logits(z)?.view()))
    }

    pub fn open_scores(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(open_positive_scores(self.open_logits(z)?.view()))
    }

    pub fn heads(&self, z: ArrayView2<'_, f64>) -> Result<HeadOutputs> {
        Ok(HeadOutputs {
            closed_probs: self.closed_probs(z)?,
            open_pos: self.open_scores(z)?,
            features: z.to_owned(),
        })
    }

    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<HeadOutputs> {
        let z = self.extract_features(batch)?;
        self.heads(z.view())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, path)
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let dims: Vec<String> = self.extractor.dims().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "classes {}", self.num_classes());
        let _ = writeln!(out, "feature_dim {}", self.feature_dim());
        let _ = writeln!(out, "dims {}", dims.join(" "));
        let _ = writeln!(out, "activation {}", self.extractor.activation);
        let _ = writeln!(out, "seed {}", self.seed);
        for (name, layer) in self.named_layers() {
            write_tensor(&mut out, &format!("{name}.weight"), &layer.weight);
            write_tensor(&mut out, &format!("{name}.bias"), &layer.bias.view().insert_axis(Axis(0)).to_owned());
        }
        out.push_str("end\n");
        out
    }

    pub fn from_checkpoint_str(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<(usize, Vec<String>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("missing `{key}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::parse(path, no, format!("expected `{key}`")));
            }
            Ok((no, parts.map(str::to_owned).collect()))
        };

        let (no, version) = header(CHECKPOINT_MAGIC)?;
        if version.len() != 1 || version[0] != CHECKPOINT_VERSION.to_string() {
            return Err(Error::parse(path, no, format!("unsupported checkpoint version {version:?}")));
        }
        let (no, v) = header("classes")?;
        let classes = parse_usize_list(&v, path, no)?;
        let (no, v) = header("feature_dim")?;
        let feature_dim = parse_usize_list(&v, path, no)?;
        let (no, v) = header("dims")?;
        let dims = parse_usize_list(&v, path, no)?;
        let (no, v) = header("activation")?;
        let activation: Activation = v
            .first()
            .ok_or_else(|| Error::parse(path, no, "missing activation"))?
            .parse()
            .map_err(|e: Error| Error::parse(path, no, e.to_string()))?;
        let (no, v) = header("seed")?;
        let seed: u64 = v
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, no, "bad seed"))?;
        if classes.len() != 1 || feature_dim.len() != 1 || dims.len() < 2 {
            return Err(Error::parse(path, no, "malformed header"));
        }
        let (k, d) = (classes[0], feature_dim[0]);
        if *dims.last().expect("non-empty") != d {
            return Err(Error::parse(path, no, "feature_dim disagrees with dims"));
        }

        let mut params = NetworkParams {
            extractor: Mlp {
                layers: dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
                activation,
            },
            closed_head: DenseLayer::zeros(d, k),
            open_heads: DenseLayer::zeros(d, 2 * k),
            seed,
        };

        let names: Vec<String> = params.named_layers().into_iter().map(|(n, _)| n).collect();
        let mut layers = params.layers_mut();
        for (name, layer) in names.iter().zip(layers.iter_mut()) {
            layer.weight = read_tensor(&mut lines, path, &format!("{name}.weight"), layer.weight.dim())?;
            let bias = read_tensor(&mut lines, path, &format!("{name}.bias"), (1, layer.bias.len()))?;
            layer.bias = bias.row(0).to_owned();
        }
        match lines.next() {
            Some((_, "end")) => Ok(params),
            Some((no, _)) => Err(Error::parse(path, no, "expected `end`")),
            None => Err(Error::parse(path, 0, "truncated checkpoint")),
        }
    }

    fn named_layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut v: Vec<(String, &DenseLayer)> = self
            .extractor
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("extractor.{i}"), l))
            .collect();
        v.push(("closed".into(), &self.closed_head));
        v.push(("open".into(), &self.open_heads));
        v
    }
}

impl LayerStack for NetworkParams {
    fn layers(&self) -> Vec<&DenseLayer> {
        self.extractor
            .layers
            .iter()
            .chain([&self.closed_head, &self.open_heads])
            .collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v: Vec<&mut DenseLayer> = self.extractor.layers.iter_mut().collect();
        v.push(&mut self.closed_head);
        v.push(&mut self.open_heads);
        v
    }

    fn extractor_len(&self) -> usize {
        self.extractor.layers.len()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Positive probability of a two-way softmax over `(pos, neg)`.
pub fn pair_softmax_positive(pos: f64, neg: f64) -> f64 {
    let d = pos - neg;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Positive scores from fused open-head logits of shape `(n, 2K)`.
pub fn open_positive_scores(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let k = logits.ncols() / 2;
    Array2::from_shape_fn((logits.nrows(), k), |(i, l)| {
        pair_softmax_positive(logits[[i, 2 * l]], logits[[i, 2 * l + 1]])
    })
}

/// Back-propagates `∂L/∂p_c` through a closed-set softmax row.
pub fn closed_softmax_backward(probs: &[f64], dprobs: &[f64]) -> Array1<f64> {
    let inner: f64 = probs.iter().zip(dprobs).map(|(p, d)| p * d).sum();
    probs.iter().zip(dprobs).map(|(p, d)| p * (d - inner)).collect()
}

/// Back-propagates `∂L/∂p_o` into the fused `(pos, neg)` logit layout.
pub fn open_pair_backward(open_pos: &[f64], dpos: &[f64]) -> Array1<f64> {
    let mut out = Array1::zeros(2 * open_pos.len());
    for (l, (&p, &d)) in open_pos.iter().zip(dpos).enumerate() {
        let g = d * p * (1.0 - p);
        out[2 * l] = g;
        out[2 * l + 1] = -g;
    }
    out
}

fn parse_usize_list(v: &[String], path: &Path, line: usize) -> Result<Vec<usize>> {
    v.iter()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, line, format!("expected integer, got `{s}`")))
        })
        .collect()
}

fn write_tensor(out: &mut String, name: &str, t: &Array2<f64>) {
    let _ = writeln!(out, "tensor {name} {} {}", t.nrows(), t.ncols());
    for row in t.rows() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
}

fn read_tensor<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    path: &Path,
    name: &str,
    shape: (usize, usize),
) -> Result<Array2<f64>> {
    let (no, head) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, format!("missing tensor {name}")))?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    let expected_head = ["tensor", name];
    if parts.len() != 4 || parts[..2] != expected_head {
        return Err(Error::parse(path, no, format!("expected tensor {name}")));
    }
    let rows: usize = parts[2].parse().map_err(|_| Error::parse(path, no, "bad row count"))?;
    let cols: usize = parts[3].parse().map_err(|_| Error::parse(path, no, "bad column count"))?;
    if (rows, cols) != shape {
        return Err(Error::parse(
            path,
            no,
            format!("tensor {name} has shape {rows}x{cols}, expected {}x{}", shape.0, shape.1),
        ));
    }
    let mut t = Array2::zeros(shape);
    for r in 0..rows {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("truncated tensor {name}")))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != cols {
            return Err(Error::parse(path, no, format!("expected {cols} values, got {}", vals.len())));
        }
        for (c, v) in vals.iter().enumerate() {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::parse(path, no, format!("non-numeric value `{v}`")))?;
            if !x.is_finite() {
                return Err(Error::parse(path, no, "non-finite parameter"));
            }
            t[[r, c]] = x;
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn net() -> NetworkParams {
        NetworkParams::new(&[4, 6, 3], 3, Activation::Tanh, 5).unwrap()
    }

    #[test]
    fn zero_extractor_gives_zero_features() {
        let mut p = net();
        for l in &mut p.extractor.layers {
            *l = l.zeros_like();
        }
        let z = p.extract_features(Array2::from_elem((2, 4), 0.7).view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_sample_matches_batch_row() {
        let p = net();
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.1 - 0.5);
        let all = p.extract_features(x.view()).unwrap();
        let one = p.extract_features(x.slice(ndarray::s![1..2, ..])).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(all[[1, c]], one[[0, c]], epsilon = 1e-15);
        }
    }

    #[test]
    fn features_match_engine_output() {
        let p = net();
        let x = Array2::from_elem((2, 4), -0.3);
        let z = p.extract_features(x.view()).unwrap();
        let acts = crate::nn::mlp_forward(&p.extractor.layers, x.view(), Activation::Tanh).unwrap();
        assert_eq!(&z, acts.last());
    }

    #[test]
    fn closed_softmax_values() {
        let uniform = softmax_rows(array![[2.0, 2.0, 2.0, 2.0]].view());
        assert!(uniform.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let p = softmax_rows(array![[10.0, 0.0, 0.0]].view());
        // e^10 / (e^10 + 2) and 1 / (e^10 + 2)
        let denom = 10f64.exp() + 2.0;
        assert_abs_diff_eq!(p[[0, 0]], 10f64.exp() / denom, epsilon = 1e-15);
        assert_abs_diff_eq!(p[[0, 0]], 0.99991, epsilon = 1e-5);
        assert_abs_diff_eq!(p[[0, 1]], 0.0000454, epsilon = 1e-7);
    }

    #[test]
    fn open_pair_values() {
        assert_eq!(pair_softmax_positive(1.3, 1.3), 0.5);
        assert_abs_diff_eq!(pair_softmax_positive(3f64.ln(), 0.0), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(pair_softmax_positive(2.0 + 3f64.ln(), 2.0), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn open_head_perturbation_only_moves_its_own_score() {
        let p = net();
        let z = array![[0.3, -0.2, 0.9]];
        let before = p.open_scores(z.view()).unwrap();
        let mut q = p.clone();
        q.open_heads.bias[2] += 0.5; // head 1, positive logit
        let after = q.open_scores(z.view()).unwrap();
        assert_eq!(before[[0, 0]], after[[0, 0]]);
        assert_ne!(before[[0, 1]], after[[0, 1]]);
        assert_eq!(before[[0, 2]], after[[0, 2]]);

        let cb = p.closed_probs(z.view()).unwrap();
        let mut r = p.clone();
        r.closed_head.bias[1] += 0.5;
        let ca = r.closed_probs(z.view()).unwrap();
        for l in 0..3 {
            assert_ne!(cb[[0, l]], ca[[0, l]]);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = net();
        let text = p.to_checkpoint_string();
        let q = NetworkParams::from_checkpoint_str(&text, Path::new("mem")).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn checkpoint_rejects_wrong_version_and_truncation() {
        let p = net();
        let text = p.to_checkpoint_string();
        let bad = text.replacen("unida-checkpoint 1", "unida-checkpoint 9", 1);
        assert!(matches!(
            NetworkParams::from_checkpoint_str(&bad, Path::new("x")),
            Err(Error::Parse { line: 1, .. })
        ));
        let cut: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(NetworkParams::from_checkpoint_str(&cut, Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn head_output_invariants(vals in proptest::collection::vec(-15.0f64..15.0, 6), shift in -50.0f64..50.0) {
            let logits = Array2::from_shape_vec((1, 6), vals.clone()).unwrap();
            let pc = softmax_rows(logits.view());
            prop_assert!((pc.sum() - 1.0).abs() < 1e-9);
            let shifted = softmax_rows(logits.mapv(|v| v + shift).view());
            for (a, b) in pc.iter().zip(shifted.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let po = open_positive_scores(logits.view());
            for l in 0..3 {
                let p = po[[0, l]];
                prop_assert!(p > 0.0 && p < 1.0);
                let neg = pair_softmax_positive(vals[2 * l + 1], vals[2 * l]);
                prop_assert!((p + neg - 1.0).abs() < 1e-15);
            }
        }
    }
}
