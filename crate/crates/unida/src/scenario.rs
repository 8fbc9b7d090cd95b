//! Domain pairs: synthetic Gaussian clusters with category and covariate
//! shift, feature CSV ingestion and paired mini-batch scheduling.
//!
//! Class ids are contiguous: shared classes first, then source-private,
//! then target-private. With `K = shared + source_private` source classes,
//! every target-private id is `>= K` and maps to the single unknown label
//! `K` at evaluation time.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            _ => Err(Error::domain(format!("unknown domain tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassRole {
    Shared,
    SourcePrivate,
    TargetPrivate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Closed set.
    Cda,
    /// Partial.
    Pda,
    /// Open set.
    Oda,
    /// Open-partial.
    Opda,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Cda => "CDA",
            Setting::Pda => "PDA",
            Setting::Oda => "ODA",
            Setting::Opda => "OPDA",
        })
    }
}

/// Category split as `(shared, source_private, target_private)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub shared: usize,
    pub source_private: usize,
    pub target_private: usize,
}

impl SplitSpec {
    pub fn new(shared: usize, source_private: usize, target_private: usize) -> Result<Self> {
        let s = Self {
            shared,
            source_private,
            target_private,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shared == 0 {
            return Err(Error::domain("a split needs at least one shared class"));
        }
        if self.source_classes() < 2 {
            return Err(Error::domain("the source domain needs at least two classes"));
        }
        Ok(())
    }

    /// `K`, the number of source (known) classes.
    pub fn source_classes(&self) -> usize {
        self.shared + self.source_private
    }

    pub fn target_classes(&self) -> usize {
        self.shared + self.target_private
    }

    pub fn total_classes(&self) -> usize {
        self.shared + self.source_private + self.target_private
    }

    pub fn setting(&self) -> Setting {
        match (self.source_private > 0, self.target_private > 0) {
            (false, false) => Setting::Cda,
            (true, false) => Setting::Pda,
            (false, true) => Setting::Oda,
            (true, true) => Setting::Opda,
        }
    }

    pub fn role(&self, class: usize) -> Option<ClassRole> {
        if class < self.shared {
            Some(ClassRole::Shared)
        } else if class < self.source_classes() {
            Some(ClassRole::SourcePrivate)
        } else if class < self.total_classes() {
            Some(ClassRole::TargetPrivate)
        } else {
            None
        }
    }

    pub fn roles(&self) -> Vec<ClassRole> {
        (0..self.total_classes()).map(|c| self.role(c).expect("in range")).collect()
    }

    pub fn in_domain(&self, class: usize, domain: Domain) -> bool {
        matches!(
            (self.role(class), domain),
            (Some(ClassRole::Shared), _)
                | (Some(ClassRole::SourcePrivate), Domain::Source)
                | (Some(ClassRole::TargetPrivate), Domain::Target)
        )
    }

    pub fn domain_classes(&self, domain: Domain) -> Vec<usize> {
        (0..self.total_classes()).filter(|&c| self.in_domain(c, domain)).collect()
    }

    /// Evaluation label: the class itself when known, otherwise `K`.
    pub fn eval_label(&self, class: usize) -> usize {
        class.min(self.source_classes())
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.shared, self.source_private, self.target_private)
    }
}

/// Covariate shift applied to target clusters: `x ↦ R·diag(s)·x + t`, then
/// extra isotropic noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSpec {
    /// Largest angle (radians) of each random plane rotation.
    pub max_angle: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Standard deviation of each translation coordinate.
    pub translation: f64,
    /// Extra noise standard deviation on target samples.
    pub target_noise: f64,
}

impl ShiftSpec {
    pub fn none() -> Self {
        Self {
            max_angle: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            translation: 0.0,
            target_noise: 0.0,
        }
    }
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            max_angle: 0.5,
            scale_min: 0.8,
            scale_max: 1.25,
            translation: 0.6,
            target_noise: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub split: SplitSpec,
    pub dim: usize,
    /// One count for every class, or one entry per source class.
    pub source_per_class: Vec<usize>,
    /// One count for every class, or one entry per target class.
    pub target_per_class: Vec<usize>,
    /// Standard deviation of the cluster means.
    pub center_scale: f64,
    /// Within-cluster standard deviation, both domains.
    pub noise: f64,
    pub shift: ShiftSpec,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            split: SplitSpec {
                shared: 6,
                source_private: 3,
                target_private: 3,
            },
            dim: 16,
            source_per_class: vec![100],
            target_per_class: vec![100],
            center_scale: 1.0,
            noise: 0.45,
            shift: ShiftSpec::default(),
            seed: 0,
        }
    }
}

fn expand_counts(counts: &[usize], n: usize, what: &str) -> Result<Vec<usize>> {
    match counts.len() {
        1 => Ok(vec![counts[0]; n]),
        len if len == n => Ok(counts.to_vec()),
        len => Err(Error::config(format!("{what} has {len} entries, expected 1 or {n}"))),
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.dim < 2 {
            return Err(Error::domain(format!("feature dimension must be >= 2, got {}", self.dim)));
        }
        for (name, v) in [
            ("center_scale", self.center_scale),
            ("noise", self.noise),
            ("max_angle", self.shift.max_angle),
            ("translation", self.shift.translation),
            ("target_noise", self.shift.target_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.shift.scale_min > 0.0) || self.shift.scale_min > self.shift.scale_max {
            return Err(Error::config(format!(
                "scale range [{}, {}] is invalid",
                self.shift.scale_min, self.shift.scale_max
            )));
        }
        self.counts(Domain::Source)?;
        self.counts(Domain::Target)?;
        Ok(())
    }

    /// Per-class sample counts for the classes present in `domain`, in id order.
    pub fn counts(&self, domain: Domain) -> Result<Vec<usize>> {
        let n = self.split.domain_classes(domain).len();
        match domain {
            Domain::Source => expand_counts(&self.source_per_class, n, "source_per_class"),
            Domain::Target => expand_counts(&self.target_per_class, n, "target_per_class"),
        }
    }

    /// Reads a flat `key = value` scenario file.
    pub fn from_document(doc: &Document, section: &str) -> Result<Self> {
        let mut s = Self::default();
        doc.set(section, "shared", &mut s.split.shared)?;
        doc.set(section, "source_private", &mut s.split.source_private)?;
        doc.set(section, "target_private", &mut s.split.target_private)?;
        doc.set(section, "dim", &mut s.dim)?;
        if let Some(v) = doc.get_list(section, "source_per_class")? {
            s.source_per_class = v;
        }
        if let Some(v) = doc.get_list(section, "target_per_class")? {
            s.target_per_class = v;
        }
        doc.set(section, "center_scale", &mut s.center_scale)?;
        doc.set(section, "noise", &mut s.noise)?;
        doc.set(section, "max_angle", &mut s.shift.max_angle)?;
        doc.set(section, "scale_min", &mut s.shift.scale_min)?;
        doc.set(section, "scale_max", &mut s.shift.scale_max)?;
        doc.set(section, "translation", &mut s.shift.translation)?;
        doc.set(section, "target_noise", &mut s.shift.target_noise)?;
        doc.set(section, "seed", &mut s.seed)?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let doc = Document::read(path)?;
        let s = Self::from_document(&doc, "")?;
        doc.finish()?;
        s.validate()?;
        Ok(s)
    }

    /// Inverse of [`ScenarioSpec::from_document`].
    pub fn to_kv_string(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "shared = {}\nsource_private = {}\ntarget_private = {}\ndim = {}\nsource_per_class = {}\n\
             target_per_class = {}\ncenter_scale = {}\nnoise = {}\nmax_angle = {}\nscale_min = {}\n\
             scale_max = {}\ntranslation = {}\ntarget_noise = {}\nseed = {}\n",
            self.split.shared,
            self.split.source_private,
            self.split.target_private,
            self.dim,
            list(&self.source_per_class),
            list(&self.target_per_class),
            self.center_scale,
            self.noise,
            self.shift.max_angle,
            self.shift.scale_min,
            self.shift.scale_max,
            self.shift.translation,
            self.shift.target_noise,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Array1<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub domain: Domain,
    pub split: SplitSpec,
    /// One row per sample.
    pub features: Array2<f64>,
    /// Class ids under the split's contiguous convention.
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(domain: Domain, split: SplitSpec, features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!("{} rows but {} labels", features.nrows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&c| !split.in_domain(c, domain)) {
            return Err(Error::domain(format!("class {bad} does not belong to the {domain} domain of split {split}")));
        }
        Ok(Self {
            domain,
            split,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_roles(&self) -> Vec<ClassRole> {
        self.split.roles()
    }

    pub fn sample(&self, i: usize) -> LabeledSample {
        LabeledSample {
            features: self.features.row(i).to_owned(),
            label: self.labels[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = LabeledSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Labels with target-private classes collapsed to `K`.
    pub fn eval_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|&c| self.split.eval_label(c)).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Array2<f64> {
        self.features.select(ndarray::Axis(0), rows)
    }

    /// Writes `domain,label,f0,...` with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_csv_header(&mut w, self.dim())?;
        self.write_csv_rows(&mut w)
    }

    fn write_csv_rows<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            write!(w, "{},{}", self.domain, label)?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

fn write_csv_header<W: Write>(w: &mut W, dim: usize) -> std::io::Result<()> {
    write!(w, "domain,label")?;
    for i in 0..dim {
        write!(w, ",f{i}")?;
    }
    writeln!(w)
}

/// Both domains in one CSV.
pub fn write_pair_csv<W: Write>(source: &Dataset, target: &Dataset, mut w: W) -> std::io::Result<()> {
    write_csv_header(&mut w, source.dim())?;
    source.write_csv_rows(&mut w)?;
    target.write_csv_rows(&mut w)
}

/// Random orthogonal map built from `dim − 1` plane rotations on random
/// coordinate pairs, each by an angle uniform in `[−max_angle, max_angle]`.
fn random_rotation<R: Rng>(rng: &mut R, dim: usize, max_angle: f64) -> Array2<f64> {
    let mut m = Array2::<f64>::eye(dim);
    for _ in 0..dim - 1 {
        let a = rng.gen_range(0..dim);
        let mut b = rng.gen_range(0..dim - 1);
        if b >= a {
            b += 1;
        }
        let theta = if max_angle > 0.0 {
            rng.gen_range(-max_angle..=max_angle)
        } else {
            0.0
        };
        let (s, c) = theta.sin_cos();
        for j in 0..dim {
            let (ra, rb) = (m[[a, j]], m[[b, j]]);
            m[[a, j]] = c * ra - s * rb;
            m[[b, j]] = s * ra + c * rb;
        }
    }
    m
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Draws a source/target pair. Draw order is fixed: cluster means, shift,
/// source samples, target samples.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let split = spec.split;
    let means: Vec<Array1<f64>> = (0..split.total_classes())
        .map(|_| gaussian_vec(&mut rng, d, spec.center_scale))
        .collect();

    let rot = random_rotation(&mut rng, d, spec.shift.max_angle);
    let scales: Array1<f64> = Array1::from_shape_fn(d, |_| {
        let (lo, hi) = (spec.shift.scale_min.ln(), spec.shift.scale_max.ln());
        if hi > lo {
            rng.gen_range(lo..hi).exp()
        } else {
            lo.exp()
        }
    });
    let translation = gaussian_vec(&mut rng, d, spec.shift.translation);
    let transform = &rot * &scales.view().insert_axis(ndarray::Axis(0));

    let mut build = |domain: Domain| -> Result<Dataset> {
        let classes = split.domain_classes(domain);
        let counts = spec.counts(domain)?;
        let n: usize = counts.iter().sum();
        let mut features = Array2::<f64>::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        let mut r = 0;
        for (&c, &count) in classes.iter().zip(&counts) {
            for _ in 0..count {
                let x = &means[c] + &gaussian_vec(&mut rng, d, spec.noise);
                let x = match domain {
                    Domain::Source => x,
                    Domain::Target => {
                        transform.dot(&x) + &translation + &gaussian_vec(&mut rng, d, spec.shift.target_noise)
                    }
                };
                features.row_mut(r).assign(&x);
                labels.push(c);
                r += 1;
            }
        }
        Dataset::new(domain, split, features, labels)
    };
    let source = build(Domain::Source)?;
    let target = build(Domain::Target)?;
    Ok((source, target))
}

/// Rows dropped while loading because their class is absent from the
/// row's domain under the split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub dropped_source: usize,
    pub dropped_target: usize,
}

/// Parses `domain,label,f0,...,f{D-1}` text. Both domains may share a file.
pub fn parse_feature_csv(text: &str, path: &Path, split: SplitSpec) -> Result<(Dataset, Dataset, LoadReport)> {
    split.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::parse(path, 1, "empty file")),
        Some(r) => r.map_err(|e| Error::parse(path, 1, e.to_string()))?,
    };
    if header.len() < 3 || &header[0] != "domain" || &header[1] != "label" {
        return Err(Error::parse(path, 1, "header must be `domain,label,f0,...`"));
    }
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::parse(path, 1, format!("column {} should be `f{i}`, got `{name}`", i + 2)));
        }
    }
    let dim = header.len() - 2;

    let mut src = (Vec::<f64>::new(), Vec::<usize>::new());
    let mut tgt = (Vec::<f64>::new(), Vec::<usize>::new());
    let mut report = LoadReport::default();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != dim + 2 {
            return Err(Error::parse(path, line, format!("expected {} fields, got {}", dim + 2, rec.len())));
        }
        let domain: Domain = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("unknown domain tag `{}`", &rec[0])))?;
        let label: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("label `{}` is not a non-negative integer", &rec[1])))?;
        if label >= split.total_classes() {
            return Err(Error::parse(
                path,
                line,
                format!("label {label} outside the {} classes of split {split}", split.total_classes()),
            ));
        }
        let mut feats = Vec::with_capacity(dim);
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, format!("feature f{j} `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line, format!("feature f{j} is not finite")));
            }
            feats.push(v);
        }
        if !split.in_domain(label, domain) {
            match domain {
                Domain::Source => report.dropped_source += 1,
                Domain::Target => report.dropped_target += 1,
            }
            continue;
        }
        let slot = match domain {
            Domain::Source => &mut src,
            Domain::Target => &mut tgt,
        };
        slot.0.extend(feats);
        slot.1.push(label);
    }
    let make = |domain, (f, l): (Vec<f64>, Vec<usize>)| -> Result<Dataset> {
        let features = Array2::from_shape_vec((l.len(), dim), f).map_err(|e| Error::shape(e.to_string()))?;
        Dataset::new(domain, split, features, l)
    };
    Ok((make(Domain::Source, src)?, make(Domain::Target, tgt)?, report))
}

pub fn load_feature_csv(path: &Path, split: SplitSpec) -> Result<(Dataset, Dataset, LoadReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&text, path, split)
}

/// Loads several files and concatenates rows per domain in file order.
pub fn load_feature_csvs(paths: &[&Path], split: SplitSpec) -> Result<(Dataset, Dataset, LoadReport)> {
    let mut parts = Vec::new();
    for p in paths {
        parts.push(load_feature_csv(p, split)?);
    }
    let Some(dim) = parts.first().map(|(s, t, _)| s.dim().max(t.dim())) else {
        return Err(Error::domain("no feature files given"));
    };
    let mut report = LoadReport::default();
    let join = |domain: Domain| -> Result<Dataset> {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for (s, t, _) in &parts {
            let d = if domain == Domain::Source { s } else { t };
            if !d.is_empty() && d.dim() != dim {
                return Err(Error::shape(format!("feature files disagree on dimension ({} vs {dim})", d.dim())));
            }
            feats.extend(d.features.iter().copied());
            labels.extend(&d.labels);
        }
        let features = Array2::from_shape_vec((labels.len(), dim), feats).map_err(|e| Error::shape(e.to_string()))?;
        Dataset::new(domain, split, features, labels)
    };
    let source = join(Domain::Source)?;
    let target = join(Domain::Target)?;
    for (_, _, r) in &parts {
        report.dropped_source += r.dropped_source;
        report.dropped_target += r.dropped_target;
    }
    Ok((source, target, report))
}

/// Row indices of one paired iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices {
    pub source: Vec<usize>,
    /// Target rows, which double as memory-bank indices.
    pub target: Vec<usize>,
}

/// Reshuffles both domains every epoch. An epoch has
/// `floor(max(N_s, N_t) / batch)` iterations and the smaller domain is
/// cycled through fresh permutations.
#[derive(Debug, Clone)]
pub struct PairedBatcher {
    n_source: usize,
    n_target: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl PairedBatcher {
    pub fn new(n_source: usize, n_target: usize, batch: usize, seed: u64) -> Result<Self> {
        if n_source == 0 || n_target == 0 {
            return Err(Error::domain("cannot batch an empty dataset"));
        }
        if batch == 0 || batch > n_source.min(n_target) {
            return Err(Error::domain(format!(
                "batch size {batch} must be in [1, min({n_source}, {n_target})]"
            )));
        }
        Ok(Self {
            n_source,
            n_target,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.n_source.max(self.n_target) / self.batch
    }

    fn stream(&mut self, n: usize, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(len + n);
        while out.len() < len {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut self.rng);
            out.extend(perm);
        }
        out.truncate(len);
        out
    }

    pub fn next_epoch(&mut self) -> Vec<BatchIndices> {
        let iters = self.iterations_per_epoch();
        let len = iters * self.batch;
        let s = self.stream(self.n_source, len);
        let t = self.stream(self.n_target, len);
        s.chunks(self.batch)
            .zip(t.chunks(self.batch))
            .map(|(a, b)| BatchIndices {
                source: a.to_vec(),
                target: b.to_vec(),
            })
            .collect()
    }
}

/// Probability that a uniformly labelled source/target pair shares a known
/// class: `K_s / (K · K')`.
pub fn known_mixup_probability(source_classes: usize, target_classes: usize, shared: usize) -> Result<f64> {
    if source_classes == 0 || target_classes == 0 {
        return Err(Error::domain("class counts must be positive"));
    }
    if shared > source_classes.min(target_classes) {
        return Err(Error::domain(format!(
            "{shared} shared classes exceed min({source_classes}, {target_classes})"
        )));
    }
    Ok(shared as f64 / (source_classes as f64 * target_classes as f64))
}

/// Empirical frequency of same-class pairs when each side draws a label
/// uniformly from its own class set, ids laid out by the split convention.
pub fn simulate_known_mixup<R: Rng>(rng: &mut R, split: SplitSpec, draws: usize) -> f64 {
    let src = split.domain_classes(Domain::Source);
    let tgt = split.domain_classes(Domain::Target);
    let hits = (0..draws)
        .filter(|_| src[rng.gen_range(0..src.len())] == tgt[rng.gen_range(0..tgt.len())])
        .count();
    hits as f64 / draws as f64
}
