use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use supnotmiwae::baselines::{impute_forward, impute_mean, impute_zero, GruClassifier};
use supnotmiwae::data::{
    generate_synthetic, make_holdout, save_csv, standardize, Dataset, FeatureStats, HoldoutMask, Split,
};
use supnotmiwae::inference::{evaluate_imputation, impute_dataset, ImputationResult};
use supnotmiwae::metrics::MetricsReport;
use supnotmiwae::model::ModelParams;
use supnotmiwae::numerics::{ParamGroup, ParamStore, Tensor};
use supnotmiwae::objective::{
    fit, gradient_check, tiny_instance, Ablation, BatchCtx, EpochRecord, SupnotMiwae, TrainState, Trainable,
    GRADCHECK_FLOOR,
};
use supnotmiwae::Scalar;

use crate::config::{ModelKind, Precision, RunConfig};
use crate::io::{create_dir_atomic, load_split, refuse_existing, require_file, write_atomic, write_json};
use crate::{AblationArg, CliError, Common, ImputeMode, PrecisionArg};

const CHECKPOINT: &str = "checkpoint.json";
const TRAIN_LOG: &str = "train_log.jsonl";

fn base_config(common: &Common, start: RunConfig) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => start.apply_file(path)?,
        None => start,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn check_rate(name: &str, v: f64) -> Result<f64, CliError> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{name} must lie in [0, 1), got {v}")))
    }
}

pub fn generate(common: &Common, out: &Path) -> Result<(), CliError> {
    let cfg = base_config(common, RunConfig::default())?;
    let data = generate_synthetic(&cfg.synthetic())?;
    let [train, val, test] = data.split(cfg.data.val_frac, cfg.data.test_frac, cfg.seed)?;
    let digest = cfg.digest();
    create_dir_atomic(out, common.force, |dir| {
        save_csv(&train.masked, dir.join("train.csv"))?;
        save_csv(&val.masked, dir.join("val.csv"))?;
        save_csv(&test.masked, dir.join("test.csv"))?;
        save_csv(&data.complete, dir.join("ground_truth.csv"))?;
        let manifest = json!({
            "config": cfg.flatten(),
            "config_digest": digest,
            "seed": cfg.seed,
            "missing_rate": data.masked.missing_rate(),
            "n_features": data.masked.n_features(),
            "n_classes": data.masked.n_classes(),
            "feature_names": data.masked.feature_names,
            "splits": {"train": train.masked.len(), "val": val.masked.len(), "test": test.masked.len()},
            "files": ["train.csv", "val.csv", "test.csv", "ground_truth.csv"],
        });
        write_json(&dir.join("manifest.json"), &manifest)
    })?;
    info!(
        "wrote {} series ({:.3} missing) to {}",
        data.masked.len(),
        data.masked.missing_rate(),
        out.display()
    );
    Ok(())
}

/// Either model family, so checkpoints and training share one code path.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase", bound = "T: Scalar")]
pub enum AnyModel<T: Scalar> {
    Ours(SupnotMiwae<T>),
    Gru(GruClassifier<T>),
}

impl<T: Scalar> Trainable<T> for AnyModel<T> {
    fn params(&self) -> &ParamStore<T> {
        match self {
            Self::Ours(m) => m.params(),
            Self::Gru(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            Self::Ours(m) => m.params_mut(),
            Self::Gru(m) => m.params_mut(),
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            Self::Ours(m) => m.n_classes(),
            Self::Gru(m) => m.n_classes(),
        }
    }

    fn loss_and_grads(
        &self,
        ds: &Dataset,
        batch: &[usize],
        ctx: BatchCtx,
    ) -> supnotmiwae::Result<(f64, Vec<Tensor<T>>)> {
        match self {
            Self::Ours(m) => m.loss_and_grads(ds, batch, ctx),
            Self::Gru(m) => m.loss_and_grads(ds, batch, ctx),
        }
    }

    fn predict_proba(&self, ds: &Dataset, seed: u64) -> supnotmiwae::Result<Vec<Vec<f64>>> {
        match self {
            Self::Ours(m) => m.predict_proba(ds, seed),
            Self::Gru(m) => m.predict_proba(ds, seed),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T: Scalar> {
    pub model_name: String,
    pub precision: Precision,
    pub config: BTreeMap<String, Value>,
    pub config_digest: String,
    pub feature_names: Vec<String>,
    /// Training-split statistics used to standardize inputs.
    pub stats: FeatureStats,
    pub n_classes: usize,
    /// Best-validation parameters.
    pub model: AnyModel<T>,
    pub state: TrainState<T>,
}

/// The fields needed before the precision is known.
#[derive(Deserialize)]
struct CheckpointHeader {
    model_name: String,
    precision: Precision,
    config: BTreeMap<String, Value>,
}

fn read_header(path: &Path) -> Result<(CheckpointHeader, String), CliError> {
    require_file(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header: CheckpointHeader = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a checkpoint", path.display()))
        .map_err(CliError::Runtime)?;
    Ok((header, text))
}

fn parse_checkpoint<T: Scalar>(text: &str, path: &Path) -> Result<Checkpoint<T>, CliError> {
    serde_json::from_str(text)
        .with_context(|| format!("{} is not a valid checkpoint", path.display()))
        .map_err(CliError::Runtime)
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub model: String,
    pub out: PathBuf,
    pub beta: Option<f64>,
    pub test_beta: Option<f64>,
    pub k: Option<usize>,
    pub max_epochs: Option<usize>,
    pub precision: Option<PrecisionArg>,
    pub resume: bool,
}

/// Training and validation splits in standardized units, plus the
/// statistics used.
fn load_training_data(dir: &Path) -> Result<(Dataset, Dataset, FeatureStats), CliError> {
    let train = load_split(&dir.join("train.csv"), None, Split::Train)?;
    let names = train.feature_names.clone();
    let val = load_split(&dir.join("val.csv"), Some(names), Split::Val)?;
    let stats = FeatureStats::fit(&train)?;
    let train = standardize(&train.with_stats(stats.clone()))?;
    let val = standardize(&val.with_stats(stats.clone()))?;
    Ok((train, val, stats))
}

fn without_key(mut flat: BTreeMap<String, Value>, key: &str) -> BTreeMap<String, Value> {
    flat.remove(key);
    flat
}

pub fn train(common: &Common, args: &TrainArgs) -> Result<(), CliError> {
    let kind = ModelKind::parse(&args.model)?;
    let mut cfg = base_config(common, RunConfig::default())?;
    if let Some(b) = args.beta {
        cfg.sampling.beta = check_rate("--beta", b)?;
    }
    if let Some(b) = args.test_beta {
        cfg.sampling.test_beta = Some(check_rate("--test-beta", b)?);
    }
    if let Some(k) = args.k {
        cfg.sampling.k_train = k;
    }
    if let Some(e) = args.max_epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(p) = args.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    cfg.sampling.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    match cfg.precision {
        Precision::F64 => train_typed::<f64>(common, args, kind, cfg),
        Precision::F32 => train_typed::<f32>(common, args, kind, cfg),
    }
}

fn train_typed<T: Scalar + DeserializeOwned>(
    common: &Common,
    args: &TrainArgs,
    kind: ModelKind,
    cfg: RunConfig,
) -> Result<(), CliError> {
    let (train, val, stats) = load_training_data(&args.data)?;
    let n_classes = train.n_classes().max(val.n_classes()).max(2);
    let d = train.n_features();
    let ablation = match kind {
        ModelKind::Ours(a) => a,
        ModelKind::Gru(_) => Ablation::default(),
    };
    let tc = cfg.train_config(ablation);
    let digest = cfg.digest();
    let flat = cfg.flatten();
    let ckpt_path = args.out.join(CHECKPOINT);
    let log_path = args.out.join(TRAIN_LOG);

    let resume = if args.resume {
        let (header, text) = read_header(&ckpt_path)?;
        if header.model_name != args.model || header.precision != cfg.precision {
            return Err(CliError::Usage(format!(
                "checkpoint holds {} at {:?}; cannot resume as {} at {:?}",
                header.model_name, header.precision, args.model, cfg.precision
            )));
        }
        if without_key(header.config, "train.max_epochs") != without_key(flat.clone(), "train.max_epochs") {
            return Err(CliError::Usage(
                "configuration differs from the checkpoint's (only train.max_epochs may change on resume)".into(),
            ));
        }
        let ckpt = parse_checkpoint::<T>(&text, &ckpt_path)?;
        if ckpt.feature_names != train.feature_names {
            return Err(CliError::Runtime(anyhow!("training data features differ from the checkpoint's")));
        }
        info!("resuming after epoch {}", ckpt.state.epoch);
        Some(ckpt.state)
    } else {
        refuse_existing(&args.out, &[CHECKPOINT, TRAIN_LOG], common.force)?;
        None
    };

    let mut model: AnyModel<T> = match kind {
        ModelKind::Ours(a) => {
            let params = ModelParams::new(cfg.model_config(d, n_classes), cfg.seed)
                .map_err(|e| CliError::Usage(format!("invalid model configuration: {e}")))?;
            AnyModel::Ours(SupnotMiwae::new(params, cfg.sampling.clone(), a)?)
        }
        ModelKind::Gru(v) => AnyModel::Gru(GruClassifier::new(
            cfg.baseline_config(v),
            d,
            n_classes,
            FeatureStats::unit(d),
            cfg.seed,
        )),
    };
    fs::create_dir_all(&args.out)?;

    // the log always mirrors the checkpoint's history
    let mut log = String::new();
    for r in resume.iter().flat_map(|s| &s.history) {
        log.push_str(&log_line(r));
    }
    write_atomic(&log_path, log.as_bytes())?;

    let template = model.clone();
    let snapshot = |state: &TrainState<T>| -> Result<Checkpoint<T>, CliError> {
        let mut best = template.clone();
        best.params_mut().load_from(&state.best)?;
        Ok(Checkpoint {
            model_name: args.model.clone(),
            precision: cfg.precision,
            config: flat.clone(),
            config_digest: digest.clone(),
            feature_names: train.feature_names.clone(),
            stats: stats.clone(),
            n_classes,
            model: best,
            state: state.clone(),
        })
    };
    let mut failure: Option<CliError> = None;
    let result = fit(&mut model, &train, &val, &tc, resume, |state, record| {
        let step = snapshot(state).and_then(|c| write_json(&ckpt_path, &c)).and_then(|()| {
            let mut f = fs::OpenOptions::new().append(true).open(&log_path)?;
            f.write_all(log_line(record).as_bytes())?;
            Ok(())
        });
        info!(
            "epoch {} loss {:.4} val {} ({:.1}s)",
            record.epoch,
            record.loss,
            record.val_metric.map_or("-".into(), |m| format!("{m:.4}")),
            record.wall_time
        );
        step.map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            supnotmiwae::Error::Contract(msg)
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let state = result?;
    write_json(&ckpt_path, &snapshot(&state)?)?;
    info!(
        "best epoch {} (val {}), checkpoint {}",
        state.best_epoch,
        state.best_metric.map_or("-".into(), |m| format!("{m:.4}")),
        ckpt_path.display()
    );
    Ok(())
}

fn log_line(r: &EpochRecord) -> String {
    let mut s = serde_json::to_string(r).expect("record serializes");
    s.push('\n');
    s
}

pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: String,
    pub out: PathBuf,
    pub test_beta: Option<f64>,
    pub k: Option<usize>,
    pub samples: Option<usize>,
}

pub fn evaluate(common: &Common, args: &EvaluateArgs) -> Result<(), CliError> {
    let (header, text) = read_header(&args.checkpoint)?;
    let mut cfg = base_config(common, RunConfig::from_flat(&header.config)?)?;
    if let Some(b) = args.test_beta {
        cfg.sampling.test_beta = Some(check_rate("--test-beta", b)?);
    }
    if let Some(k) = args.k {
        cfg.sampling.k_test = k;
    }
    if let Some(s) = args.samples {
        cfg.sampling.s_test = s;
    }
    cfg.sampling.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    refuse_existing(&args.out, &["metrics.json"], common.force)?;
    match header.precision {
        Precision::F64 => evaluate_typed(parse_checkpoint::<f64>(&text, &args.checkpoint)?, &cfg, args),
        Precision::F32 => evaluate_typed(parse_checkpoint::<f32>(&text, &args.checkpoint)?, &cfg, args),
    }
}

fn load_eval_split<T: Scalar>(ckpt: &Checkpoint<T>, data: &Path, file: &str) -> Result<Dataset, CliError> {
    let raw = load_split(&data.join(file), Some(ckpt.feature_names.clone()), Split::Test)?;
    Ok(standardize(&raw.with_stats(ckpt.stats.clone()))?)
}

fn evaluate_typed<T: Scalar>(mut ckpt: Checkpoint<T>, cfg: &RunConfig, args: &EvaluateArgs) -> Result<(), CliError> {
    let test = load_eval_split(&ckpt, &args.data, &args.split)?;
    let labels: Vec<usize> = test
        .series
        .iter()
        .map(|s| s.label.ok_or_else(|| anyhow!("series `{}` has no label", s.id)))
        .collect::<anyhow::Result<_>>()?;
    let probs = match &mut ckpt.model {
        AnyModel::Ours(m) => {
            m.sampling = cfg.sampling.clone();
            m.predict(&test, cfg.seed)?
        }
        AnyModel::Gru(m) => m.predict_proba(&test, cfg.seed)?,
    };
    let mut report = MetricsReport::from_predictions(&probs, &labels)?;
    if ckpt.n_classes == 2 && report.auroc.is_none() {
        warn!("a class is absent from the test labels; AUROC omitted");
    }
    report.seed = Some(cfg.seed);
    report.config_digest = Some(cfg.digest());
    let (test_beta, k_test, s_test) = match &ckpt.model {
        AnyModel::Ours(m) => (Some(m.test_beta()), Some(m.sampling.k_test), Some(m.sampling.s_test)),
        AnyModel::Gru(_) => (None, None, None),
    };
    let mut out = serde_json::to_value(&report).map_err(anyhow::Error::from)?;
    let meta = json!({
        "model": ckpt.model_name,
        "precision": ckpt.precision,
        "split": args.split,
        "test_beta": test_beta,
        "k_test": k_test,
        "s_test": s_test,
        "training_config_digest": ckpt.config_digest,
    });
    out.as_object_mut().expect("report is an object").insert("meta".into(), meta);
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("metrics.json"), &out)?;
    info!(
        "accuracy {:.4}, AUROC {}",
        report.accuracy.unwrap_or(f64::NAN),
        report.auroc.map_or("-".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

pub struct ImputeArgs {
    pub data: PathBuf,
    pub split: String,
    pub checkpoint: Option<PathBuf>,
    pub mode: ImputeMode,
    pub holdout_rate: Option<f64>,
    pub k: Option<usize>,
    pub out: PathBuf,
}

pub fn impute(common: &Common, args: &ImputeArgs) -> Result<(), CliError> {
    let header = match &args.checkpoint {
        Some(p) => Some(read_header(p)?),
        None => None,
    };
    let start = match &header {
        Some((h, _)) => RunConfig::from_flat(&h.config)?,
        None => RunConfig::default(),
    };
    let mut cfg = base_config(common, start)?;
    if let Some(r) = args.holdout_rate {
        cfg.impute.holdout_rate = r;
    }
    check_rate("holdout rate", cfg.impute.holdout_rate)?;
    if let Some(k) = args.k {
        cfg.impute.draws = k;
    }
    if cfg.impute.draws == 0 {
        return Err(CliError::Usage("at least one imputation particle is required".into()));
    }
    refuse_existing(&args.out, &["imputation.csv", "imputation.json"], common.force)?;
    match (&header, args.mode) {
        (None, ImputeMode::Model) => Err(CliError::Usage("model mode needs --checkpoint".into())),
        (None, _) => {
            let train = load_split(&args.data.join("train.csv"), None, Split::Train)?;
            let stats = FeatureStats::fit(&train)?;
            let names = train.feature_names;
            run_impute::<f64>(None, names, stats, &cfg, args)
        }
        (Some((h, text)), _) => {
            let path = args.checkpoint.as_deref().expect("header implies a path");
            match h.precision {
                Precision::F64 => {
                    let c = parse_checkpoint::<f64>(text, path)?;
                    let (names, stats) = (c.feature_names.clone(), c.stats.clone());
                    run_impute(Some(c), names, stats, &cfg, args)
                }
                Precision::F32 => {
                    let c = parse_checkpoint::<f32>(text, path)?;
                    let (names, stats) = (c.feature_names.clone(), c.stats.clone());
                    run_impute(Some(c), names, stats, &cfg, args)
                }
            }
        }
    }
}

fn run_impute<T: Scalar>(
    ckpt: Option<Checkpoint<T>>,
    names: Vec<String>,
    stats: FeatureStats,
    cfg: &RunConfig,
    args: &ImputeArgs,
) -> Result<(), CliError> {
    let raw = load_split(&args.data.join(&args.split), Some(names), Split::Test)?;
    let ds = standardize(&raw.with_stats(stats.clone()))?;
    let (visible, holdout): (Dataset, Option<HoldoutMask>) = if cfg.impute.holdout_rate > 0.0 {
        let (v, h) = make_holdout(&ds, cfg.impute.holdout_rate, cfg.seed)?;
        (v, Some(h))
    } else {
        (ds, None)
    };
    let unit = FeatureStats::unit(visible.n_features());
    let results: Vec<ImputationResult> = match args.mode {
        ImputeMode::Model => {
            let Some(AnyModel::Ours(m)) = ckpt.as_ref().map(|c| &c.model) else {
                return Err(CliError::Usage("model mode needs a checkpoint of the generative model".into()));
            };
            impute_dataset(&m.model, &visible, cfg.impute.draws, cfg.seed)?
        }
        mode => visible
            .series
            .iter()
            .map(|s| {
                let values = match mode {
                    ImputeMode::Mean => impute_mean(s, &unit),
                    ImputeMode::Forward => impute_forward(s, &unit),
                    _ => impute_zero(s),
                };
                ImputationResult::point(s, values)
            })
            .collect(),
    };
    let score = match &holdout {
        Some(h) if !h.is_empty() => Some(evaluate_imputation(&results, h)?),
        _ => None,
    };

    fs::create_dir_all(&args.out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series_id", "time", "feature", "mean", "std", "observed"])
        .map_err(anyhow::Error::from)?;
    let d = visible.n_features();
    for (s, r) in visible.series.iter().zip(&results) {
        for (t, time) in s.times().iter().enumerate() {
            for j in 0..d {
                let i = t * d + j;
                let mean = r.mean[i] * stats.std[j] + stats.mean[j];
                let std = r.std[i] * stats.std[j];
                w.write_record([
                    s.id.clone(),
                    time.to_string(),
                    visible.feature_names[j].clone(),
                    mean.to_string(),
                    std.to_string(),
                    u8::from(r.observed[i]).to_string(),
                ])
                .map_err(anyhow::Error::from)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| anyhow!("flushing imputation CSV: {e}"))?;
    write_atomic(&args.out.join("imputation.csv"), &bytes)?;
    let mode = format!("{:?}", args.mode).to_lowercase();
    let summary = json!({
        "mode": mode,
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "holdout_rate": cfg.impute.holdout_rate,
        "draws": (args.mode == ImputeMode::Model).then_some(cfg.impute.draws),
        "holdout": score.as_ref().map(|s| json!({"mae": s.mae, "mre": s.mre, "n": s.n})),
    });
    write_json(&args.out.join("imputation.json"), &summary)?;
    if let Some(s) = score {
        info!("{mode}: MAE {:.4}, MRE {:.4} over {} cells", s.mae, s.mre, s.n);
    }
    Ok(())
}

pub fn gradcheck(common: &Common, ablation: AblationArg, per_tensor: usize, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = base_config(common, RunConfig::default())?;
    if cfg.precision != Precision::F64 {
        return Err(CliError::Usage("gradient checks run in 64-bit precision only".into()));
    }
    let full = Ablation::default();
    let ablation = match ablation {
        AblationArg::None => full,
        AblationArg::NoObsdropout => Ablation {
            obs_dropout: false,
            ..full
        },
        AblationArg::NoMnar => Ablation { mnar: false, ..full },
        AblationArg::NoSupervision => Ablation {
            supervision: false,
            ..full
        },
    };
    let (model, ds) = tiny_instance(cfg.seed, ablation)?;
    let batch: Vec<usize> = (0..ds.len()).collect();
    let ctx = BatchCtx {
        seed: cfg.seed,
        epoch: 0,
        batch: 0,
    };
    let report = gradient_check(&model, &ds, &batch, ctx, per_tensor)?;
    let max = report.max_rel_err();
    let zeroed: Vec<ParamGroup> = report.groups.iter().filter(|g| g.all_zero).map(|g| g.group).collect();
    let out_json = json!({
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "ablation": ablation,
        "floor": GRADCHECK_FLOOR,
        "threshold": 1e-4,
        "max_rel_err": max,
        "passed": max < 1e-4,
        "zero_gradient_groups": zeroed,
        "report": report,
    });
    let text = serde_json::to_string_pretty(&out_json).map_err(anyhow::Error::from)?;
    println!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("gradcheck.json"), &out_json)?;
    }
    if max < 1e-4 {
        Ok(())
    } else {
        Err(CliError::Threshold(format!("max relative gradient error {max:e} ≥ 1e-4")))
    }
}
