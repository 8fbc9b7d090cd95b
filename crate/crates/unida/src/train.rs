//! Run configuration, the training loop and parameter sweeps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Document;
use crate::error::{Error, Result};
use crate::evaluate::{predict, MetricsReport, DEFAULT_THRESHOLD, METRICS_HEADER};
use crate::memory::{MemoryBank, NeighborMode, DEFAULT_EPSILON, DEFAULT_KNN, DEFAULT_TAU};
use crate::model::NetworkParams;
use crate::nn::{sgd_nesterov_step, Activation, OptimizerState};
use crate::objectives::total::NIL_START_EPOCH;
use crate::objectives::{loss_total, Batch, LossBreakdown, MixPlan, MixupMode, NilInputs, ObjectiveConfig};
use crate::scenario::{generate_scenario, load_feature_csvs, write_pair_csv, Dataset, PairedBatcher, ScenarioSpec, SplitSpec};

pub const TRACE_HEADER: &str = "iter,epoch,l_cls,l_ova,l_oem,l_nil,l_cmm,l_cc,l_total,lr";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(ScenarioSpec),
    /// Feature CSVs plus the split that assigns class roles.
    Files { paths: Vec<PathBuf>, split: SplitSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub objective: ObjectiveConfig,
    pub tau: f64,
    pub neighbor_mode: NeighborMode,
    /// Jaccard weights for neighbors; unit weights otherwise.
    pub use_confidence: bool,
    /// Extractor layer widths after the input; the last is the feature dim.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch: usize,
    pub lr_extractor: f64,
    pub lr_heads: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub threshold: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(ScenarioSpec::default()),
            objective: ObjectiveConfig::default(),
            tau: DEFAULT_TAU,
            neighbor_mode: NeighborMode::default(),
            use_confidence: true,
            hidden: vec![64, 32],
            activation: Activation::Tanh,
            epochs: 50,
            batch: 36,
            lr_extractor: 0.001,
            lr_heads: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            out_dir: None,
        }
    }
}

fn parse_split(s: &str) -> Result<SplitSpec> {
    let parts: Vec<&str> = s.split('/').map(str::trim).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("split `{s}` is not `shared/source_private/target_private`")))?;
    match nums[..] {
        [a, b, c] => SplitSpec::new(a, b, c),
        _ => Err(Error::config(format!("split `{s}` is not `shared/source_private/target_private`"))),
    }
}

impl RunConfig {
    /// Reads a config document on top of the defaults. Relative data paths
    /// resolve against the document's directory.
    pub fn from_document(doc: &Document) -> Result<Self> {
        let mut c = Self::default();
        doc.set("", "seed", &mut c.seed)?;

        let kind: String = doc.get("data", "source")?.unwrap_or_else(|| "synthetic".into());
        c.data = match kind.as_str() {
            "synthetic" => {
                let mut spec = ScenarioSpec::from_document(doc, "scenario")?;
                if doc.get::<u64>("scenario", "seed")?.is_none() {
                    spec.seed = c.seed;
                }
                DataSource::Synthetic(spec)
            }
            "files" => {
                let base = config_dir(doc);
                let paths: Vec<String> = doc
                    .get_list("data", "paths")?
                    .ok_or_else(|| Error::config("data.source = files needs data.paths"))?;
                let split: String = doc
                    .get("data", "split")?
                    .ok_or_else(|| Error::config("data.source = files needs data.split"))?;
                DataSource::Files {
                    paths: paths.iter().map(|p| base.join(p)).collect(),
                    split: parse_split(&split)?,
                }
            }
            other => return Err(Error::config(format!("unknown data.source `{other}`"))),
        };

        let o = &mut c.objective;
        doc.set("loss", "gamma", &mut o.weights.gamma)?;
        doc.set("loss", "beta1", &mut o.weights.beta1)?;
        doc.set("loss", "beta2", &mut o.weights.beta2)?;
        doc.set("loss", "eta", &mut o.weights.eta)?;
        doc.set("loss", "alpha", &mut o.weights.alpha)?;
        doc.set("loss", "nil", &mut o.terms.nil)?;
        doc.set("loss", "cc", &mut o.terms.cc)?;
        doc.set("loss", "mixup", &mut o.mixup)?;
        doc.set("loss", "cc_stop_gradient", &mut o.cc_stop_gradient)?;
        doc.set("loss", "cmm_heads_only", &mut o.cmm_heads_only)?;

        doc.set("memory", "tau", &mut c.tau)?;
        doc.set("memory", "confidence", &mut c.use_confidence)?;
        let mode: String = doc.get("memory", "mode")?.unwrap_or_else(|| "adaptive".into());
        let epsilon: f64 = doc.get("memory", "epsilon")?.unwrap_or(DEFAULT_EPSILON);
        let k: usize = doc.get("memory", "knn_k")?.unwrap_or(DEFAULT_KNN);
        c.neighbor_mode = match mode.as_str() {
            "adaptive" => NeighborMode::Adaptive { epsilon },
            "knn" => NeighborMode::Knn { k },
            other => return Err(Error::config(format!("unknown memory.mode `{other}`"))),
        };

        if let Some(h) = doc.get_list("model", "hidden")? {
            c.hidden = h;
        }
        doc.set("model", "activation", &mut c.activation)?;

        doc.set("train", "epochs", &mut c.epochs)?;
        doc.set("train", "batch", &mut c.batch)?;
        doc.set("train", "lr_extractor", &mut c.lr_extractor)?;
        doc.set("train", "lr_heads", &mut c.lr_heads)?;
        doc.set("train", "momentum", &mut c.momentum)?;
        doc.set("train", "weight_decay", &mut c.weight_decay)?;
        doc.set("train", "threshold", &mut c.threshold)?;

        if let Some(dir) = doc.get::<String>("output", "dir")? {
            c.out_dir = Some(config_dir(doc).join(dir));
        }
        c.validate()?;
        Ok(c)
    }

    /// Parses text, rejecting unknown keys. Sweep keys are tolerated and
    /// returned separately by [`SweepGrid::from_document`].
    pub fn from_str_at(text: &str, path: &Path) -> Result<Self> {
        let doc = Document::parse(text, path)?;
        let c = Self::from_document(&doc)?;
        SweepGrid::from_document(&doc)?;
        doc.finish()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_at(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.weights.validate()?;
        self.neighbor_mode.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("model.hidden needs at least one non-zero width"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        for (name, v) in [
            ("lr_extractor", self.lr_extractor),
            ("lr_heads", self.lr_heads),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Every setting spelled out; parsing it back yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = format!("seed = {}\n\n[data]\n", self.seed);
        match &self.data {
            DataSource::Synthetic(spec) => {
                s.push_str("source = synthetic\n\n[scenario]\n");
                s.push_str(&spec.to_kv_string());
            }
            DataSource::Files { paths, split } => {
                let list: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
                s.push_str(&format!("source = files\npaths = {}\nsplit = {split}\n", list.join(", ")));
            }
        }
        let o = &self.objective;
        let w = &o.weights;
        s.push_str(&format!(
            "\n[loss]\ngamma = {}\nbeta1 = {}\nbeta2 = {}\neta = {}\nalpha = {}\nnil = {}\ncc = {}\nmixup = {}\n\
             cc_stop_gradient = {}\ncmm_heads_only = {}\n",
            w.gamma, w.beta1, w.beta2, w.eta, w.alpha, o.terms.nil, o.terms.cc, o.mixup, o.cc_stop_gradient, o.cmm_heads_only
        ));
        let (mode, epsilon, k) = match self.neighbor_mode {
            NeighborMode::Adaptive { epsilon } => ("adaptive", epsilon, DEFAULT_KNN),
            NeighborMode::Knn { k } => ("knn", DEFAULT_EPSILON, k),
        };
        s.push_str(&format!(
            "\n[memory]\ntau = {}\nmode = {mode}\nepsilon = {epsilon}\nknn_k = {k}\nconfidence = {}\n",
            self.tau, self.use_confidence
        ));
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        s.push_str(&format!("\n[model]\nhidden = {}\nactivation = {}\n", hidden.join(","), self.activation));
        s.push_str(&format!(
            "\n[train]\nepochs = {}\nbatch = {}\nlr_extractor = {}\nlr_heads = {}\nmomentum = {}\nweight_decay = {}\nthreshold = {}\n",
            self.epochs, self.batch, self.lr_extractor, self.lr_heads, self.momentum, self.weight_decay, self.threshold
        ));
        if let Some(dir) = &self.out_dir {
            s.push_str(&format!("\n[output]\ndir = {}\n", dir.display()));
        }
        s
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataSource::Synthetic(spec) => generate_scenario(spec),
            DataSource::Files { paths, split } => {
                let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
                let (s, t, _) = load_feature_csvs(&refs, *split)?;
                Ok((s, t))
            }
        }
    }
}

/// Absolute directory of the config file, so that a resolved config names
/// the same files wherever it is read from.
fn config_dir(doc: &Document) -> PathBuf {
    let dir = doc.path().parent().unwrap_or(Path::new(""));
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Scheduled head learning rate used for this step.
    pub lr: f64,
}

impl fmt::Display for TraceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            self.iter, self.epoch, l.cls, l.ova, l.oem, l.nil, l.cmm, l.cc, l.total, self.lr
        )
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub trace: Vec<TraceRow>,
    pub report: MetricsReport,
    pub params: NetworkParams,
    pub resolved_config: String,
}

impl RunArtifacts {
    /// `loss_trace.csv`, `metrics.csv`, `curve.csv`, `checkpoint.txt`,
    /// `resolved.cfg`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, bytes: Vec<u8>| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        put("loss_trace.csv", trace_csv(&self.trace).into_bytes())?;
        let mut m = Vec::new();
        self.report.write_csv(&mut m).map_err(|e| Error::io(dir, e))?;
        put("metrics.csv", m)?;
        let mut c = Vec::new();
        self.report.write_curve_csv(&mut c).map_err(|e| Error::io(dir, e))?;
        put("curve.csv", c)?;
        put("resolved.cfg", self.resolved_config.clone().into_bytes())?;
        self.params.save(&dir.join("checkpoint.txt"))
    }
}

/// Metrics of `params` on the target domain.
pub fn evaluate_target(params: &NetworkParams, target: &Dataset, threshold: f64, seed: u64) -> Result<MetricsReport> {
    let preds = predict(params, target.features.view(), &target.eval_labels(), threshold)?;
    MetricsReport::from_predictions(&preds, &target.split.setting().to_string(), seed)
}

fn divergence_dump(dir: &Path, source: &Dataset, target: &Dataset, s_idx: &[usize], t_idx: &[usize]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sub = |d: &Dataset, idx: &[usize]| {
        Dataset::new(d.domain, d.split, d.select(idx), idx.iter().map(|&i| d.labels[i]).collect())
    };
    let path = dir.join("divergent_batch.csv");
    let mut buf = Vec::new();
    write_pair_csv(&sub(source, s_idx)?, &sub(target, t_idx)?, &mut buf).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Trains from scratch and evaluates on the target domain. Artifacts are
/// written when `out_dir` is set.
pub fn train_run(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let (source, target) = cfg.load_data()?;
    train_on(cfg, &source, &target)
}

/// [`train_run`] on already loaded data.
pub fn train_on(cfg: &RunConfig, source: &Dataset, target: &Dataset) -> Result<RunArtifacts> {
    cfg.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::shape(format!("source dim {} vs target dim {}", source.dim(), target.dim())));
    }
    let split = source.split;
    let k = split.source_classes();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model_seed: u64 = master.gen();
    let batch_seed: u64 = master.gen();
    let mut mix_rng = ChaCha8Rng::seed_from_u64(master.gen());

    let mut dims = vec![source.dim()];
    dims.extend(&cfg.hidden);
    let mut params = NetworkParams::new(&dims, k, cfg.activation, model_seed)?;
    let mut bank = MemoryBank::new(target.len(), params.feature_dim(), cfg.tau, cfg.neighbor_mode)?;

    // epoch 0: fill every bank row without taking a step
    let all: Vec<usize> = (0..target.len()).collect();
    bank.update(&all, params.extract_features(target.features.view())?.view())?;

    let mut batcher = PairedBatcher::new(source.len(), target.len(), cfg.batch, batch_seed)?;
    let mut opt = OptimizerState::new(&params, cfg.lr_extractor, cfg.lr_heads, cfg.momentum);
    opt.weight_decay = cfg.weight_decay;
    let per_epoch = batcher.iterations_per_epoch();
    let total_iters = cfg.epochs * per_epoch;
    let obj = &cfg.objective;
    let mut trace = Vec::with_capacity(total_iters);

    let mut iter = 0;
    for epoch in 1..=cfg.epochs {
        for b in batcher.next_epoch() {
            opt.progress = iter as f64 / total_iters as f64;
            let xs = source.select(&b.source);
            let ys: Vec<usize> = b.source.iter().map(|&i| source.labels[i]).collect();
            let xt = target.select(&b.target);

            let diverged = |what: String| -> Result<Error> {
                let dump = match &cfg.out_dir {
                    Some(dir) => format!(
                        "; batch written to {}",
                        divergence_dump(dir, source, target, &b.source, &b.target)?.display()
                    ),
                    None => String::new(),
                };
                Ok(Error::Divergence {
                    iter,
                    epoch,
                    msg: format!("{what}{dump}"),
                })
            };
            let zt = params.extract_features(xt.view())?;
            if !zt.iter().all(|v| v.is_finite()) {
                return Err(diverged("non-finite target features".into())?);
            }
            bank.update(&b.target, zt.view())?;
            let sets = if obj.nil_active() && epoch >= NIL_START_EPOCH {
                Some(bank.neighbor_sets(&b.target, cfg.use_confidence)?)
            } else {
                None
            };
            let plan = if obj.mixup_active() {
                MixPlan::draw(&mut mix_rng, obj.mixup, &ys, b.target.len(), obj.weights.alpha)?
            } else {
                MixPlan::default()
            };
            let batch = Batch {
                source_x: xs.view(),
                source_y: &ys,
                target_x: xt.view(),
                target_idx: &b.target,
            };
            let nil = sets.as_deref().map(|s| NilInputs { bank: &bank, sets: s });
            let (loss, grads) = loss_total(&params, &batch, obj, &plan, nil, epoch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged(format!("non-finite loss or gradient (total {})", loss.total))?);
            }
            let lr = opt.lr_heads()?;
            sgd_nesterov_step(&mut params, &grads, &mut opt)?;
            if !params.is_finite() {
                return Err(diverged("non-finite parameters after the update".into())?);
            }
            trace.push(TraceRow { iter, epoch, loss, lr });
            iter += 1;
        }
    }

    let report = evaluate_target(&params, target, cfg.threshold, cfg.seed)?;
    let artifacts = RunArtifacts {
        trace,
        report,
        params,
        resolved_config: cfg.to_config_string(),
    };
    if let Some(dir) = &cfg.out_dir {
        artifacts.write(dir)?;
    }
    Ok(artifacts)
}

/// Grid over the mixup weight, the consistency weight, the neighborhood
/// ratio and seeds. Missing axes keep the template's value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub beta2: Vec<f64>,
    pub eta: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub beta2: f64,
    pub eta: f64,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub outcome: std::result::Result<MetricsReport, String>,
}

pub const SWEEP_HEADER: &str = "beta2,eta,epsilon,setting,seed,a_known,a_unknown,h_score,accuracy,ucr,status";

impl SweepGrid {
    pub fn from_document(doc: &Document) -> Result<Self> {
        Ok(Self {
            beta2: doc.get_list("sweep", "beta2")?.unwrap_or_default(),
            eta: doc.get_list("sweep", "eta")?.unwrap_or_default(),
            epsilon: doc.get_list("sweep", "epsilon")?.unwrap_or_default(),
            seeds: doc.get_list("sweep", "seeds")?.unwrap_or_default(),
        })
    }

    /// Concrete configs in row-major order (beta2, eta, epsilon, seed).
    pub fn expand(&self, template: &RunConfig) -> Vec<RunConfig> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let eps_default = match template.neighbor_mode {
            NeighborMode::Adaptive { epsilon } => epsilon,
            NeighborMode::Knn { .. } => f64::NAN,
        };
        let seeds = if self.seeds.is_empty() { vec![template.seed] } else { self.seeds.clone() };
        let mut out = Vec::new();
        for &b2 in &or(&self.beta2, template.objective.weights.beta2) {
            for &eta in &or(&self.eta, template.objective.weights.eta) {
                for &eps in &or(&self.epsilon, eps_default) {
                    for &seed in &seeds {
                        let mut c = template.clone();
                        c.objective.weights.beta2 = b2;
                        c.objective.weights.eta = eta;
                        if let NeighborMode::Adaptive { .. } = c.neighbor_mode {
                            c.neighbor_mode = NeighborMode::Adaptive { epsilon: eps };
                        }
                        if let DataSource::Synthetic(spec) = &mut c.data {
                            if spec.seed == template.seed {
                                spec.seed = seed;
                            }
                        }
                        c.seed = seed;
                        c.out_dir = template
                            .out_dir
                            .as_ref()
                            .map(|d| d.join(format!("b2_{b2}_eta_{eta}_eps_{eps}_seed_{seed}")));
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

/// One isolated run per grid point, in parallel. Failures are recorded and
/// do not stop the sweep.
pub fn sweep(template: &RunConfig, grid: &SweepGrid) -> Vec<SweepPoint> {
    grid.expand(template)
        .into_par_iter()
        .map(|c| SweepPoint {
            beta2: c.objective.weights.beta2,
            eta: c.objective.weights.eta,
            epsilon: match c.neighbor_mode {
                NeighborMode::Adaptive { epsilon } => Some(epsilon),
                NeighborMode::Knn { .. } => None,
            },
            seed: c.seed,
            outcome: train_run(&c).map(|a| a.report).map_err(|e| e.to_string()),
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for p in points {
        let eps = p.epsilon.map(|e| e.to_string()).unwrap_or_default();
        match &p.outcome {
            Ok(r) => s.push_str(&format!("{},{},{eps},{},ok\n", p.beta2, p.eta, r.csv_row())),
            Err(e) => {
                let msg = e.replace([',', '\n'], ";");
                let blanks = METRICS_HEADER.split(',').count() - 2;
                s.push_str(&format!(
                    "{},{},{eps},,{}{},error: {msg}\n",
                    p.beta2,
                    p.eta,
                    p.seed,
                    ",".repeat(blanks)
                ));
            }
        }
    }
    s
}

/// Named ablation presets, each a pure config change on top of `base`.
pub fn ablation(base: &RunConfig, name: &str) -> Result<RunConfig> {
    let mut c = base.clone();
    match name {
        "full" => {}
        "baseline" => {
            c.objective.weights.beta1 = 0.0;
            c.objective.weights.beta2 = 0.0;
            c.objective.weights.eta = 0.0;
        }
        "no_nil" => c.objective.terms.nil = false,
        "no_cmm" => c.objective.mixup = MixupMode::Off,
        "no_cc" => c.objective.terms.cc = false,
        "no_conf" => c.use_confidence = false,
        "knn" => c.neighbor_mode = NeighborMode::Knn { k: DEFAULT_KNN },
        "smm" => c.objective.mixup = MixupMode::Source,
        other => return Err(Error::config(format!("unknown ablation `{other}`"))),
    }
    Ok(c)
}

pub const ABLATIONS: [&str; 8] = ["full", "baseline", "no_nil", "no_cmm", "no_cc", "no_conf", "knn", "smm"];

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            data: DataSource::Synthetic(ScenarioSpec {
                split: SplitSpec::new(2, 1, 1).unwrap(),
                dim: 4,
                source_per_class: vec![12],
                target_per_class: vec![12],
                ..ScenarioSpec::default()
            }),
            hidden: vec![8, 6],
            epochs: 3,
            batch: 8,
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_echo_round_trips() {
        let mut c = tiny();
        c.neighbor_mode = NeighborMode::Knn { k: 3 };
        c.objective.mixup = MixupMode::Source;
        c.seed = 17;
        let text = c.to_config_string();
        let back = RunConfig::from_str_at(&text, Path::new("run.cfg")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_config_string(), text);
    }

    #[test]
    fn config_rejects_unknown_and_bad_values() {
        let p = Path::new("r.cfg");
        assert!(matches!(RunConfig::from_str_at("[train]\nepoch = 3\n", p), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(RunConfig::from_str_at("[train]\nepochs = 0\n", p), Err(Error::Config(_))));
        assert!(RunConfig::from_str_at("[memory]\nmode = radius\n", p).is_err());
        assert!(RunConfig::from_str_at("[loss]\nmixup = both\n", p).is_err());
    }

    #[test]
    fn scenario_seed_follows_run_seed_unless_given() {
        let c = RunConfig::from_str_at("seed = 9\n", Path::new("r.cfg")).unwrap();
        let DataSource::Synthetic(s) = &c.data else { panic!() };
        assert_eq!(s.seed, 9);
        let c = RunConfig::from_str_at("seed = 9\n[scenario]\nseed = 2\n", Path::new("r.cfg")).unwrap();
        let DataSource::Synthetic(s) = &c.data else { panic!() };
        assert_eq!(s.seed, 2);
    }

    #[test]
    fn zero_weights_match_baseline_trace() {
        let mut zero = tiny();
        zero.objective.weights.beta1 = 0.0;
        zero.objective.weights.beta2 = 0.0;
        zero.objective.weights.eta = 0.0;
        let mut base = tiny();
        base.objective = ObjectiveConfig::baseline();
        let a = train_run(&zero).unwrap();
        let b = train_run(&base).unwrap();
        assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
    }

    #[test]
    fn runs_are_deterministic_and_nil_starts_in_epoch_two() {
        let a = train_run(&tiny()).unwrap();
        let b = train_run(&tiny()).unwrap();
        assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
        assert!(a.trace.iter().filter(|r| r.epoch == 1).all(|r| r.loss.nil == 0.0));
        assert!(a.trace.iter().filter(|r| r.epoch >= 2).any(|r| r.loss.nil > 0.0));
        assert!(a.trace.windows(2).all(|w| w[1].lr <= w[0].lr));
        assert_eq!(a.trace[0].lr, 0.01);
    }

    #[test]
    fn ablations_switch_off_their_term() {
        let base = tiny();
        for name in ABLATIONS {
            let c = ablation(&base, name).unwrap();
            let run = train_run(&c).unwrap();
            let any = |f: fn(&LossBreakdown) -> f64| run.trace.iter().any(|r| f(&r.loss) != 0.0);
            match name {
                "no_nil" | "baseline" => assert!(!any(|l| l.nil), "{name}"),
                _ => assert!(any(|l| l.nil), "{name}"),
            }
            match name {
                "no_cmm" | "baseline" => assert!(!any(|l| l.cmm), "{name}"),
                _ => assert!(any(|l| l.cmm), "{name}"),
            }
            match name {
                "no_cc" | "baseline" => assert!(!any(|l| l.cc), "{name}"),
                _ => assert!(any(|l| l.cc), "{name}"),
            }
        }
        assert!(ablation(&base, "nothing").is_err());
    }

    #[test]
    fn sweep_grid_shapes() {
        let grid = SweepGrid {
            beta2: vec![0.05, 0.1, 0.2],
            eta: vec![0.08, 0.16, 0.32],
            epsilon: vec![],
            seeds: vec![1],
        };
        let runs = grid.expand(&tiny());
        assert_eq!(runs.len(), 9);
        let one = SweepGrid::default().expand(&tiny());
        assert_eq!(one, vec![tiny()]);
    }

    #[test]
    fn sweep_default_point_matches_standalone_run() {
        let mut t = tiny();
        t.epochs = 1;
        let grid = SweepGrid {
            beta2: vec![0.0, 0.1],
            ..SweepGrid::default()
        };
        let points = sweep(&t, &grid);
        let alone = train_run(&t).unwrap().report;
        let row = points.iter().find(|p| p.beta2 == 0.1).unwrap();
        assert_eq!(row.outcome.as_ref().unwrap(), &alone);
        let csv = sweep_csv(&points);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")));
    }
}
