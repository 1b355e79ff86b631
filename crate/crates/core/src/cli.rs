//! Command-line front end.
//!
//! Configuration is one JSON object with flat dotted keys
//! (`"model.d": 32`, `"train.split.val": 0.1`, `"data.manifest": "..."`).
//! Any key can also be given as a flag of the same name
//! (`--model.d 32` or `--model.d=32`), which wins over the file.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::features::{load_manifest, read_features, Dataset, DatasetManifest, FeatureError, SegmentFeatures};
use crate::model::checkpoint::Checkpoint;
use crate::model::{forward, ModelConfig, ModelError};
use crate::synth::{generate_dataset, SynthError, SynthSpec, MANIFEST_FILE};
use crate::train::{
    evaluate, format_table, run_ablation, run_cv, stratified_split, train, Metrics, TrainConfig, TrainError,
};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(_) | SynthError::Segment(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Autodiff(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Diverged { .. } | TrainError::NotOneHot(_) => CliError::Runtime(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// A single feature file for `predict` / `explain`.
    pub features: Option<PathBuf>,
    pub video_id: Option<String>,
    pub folds: usize,
}

/// Everything a command can be configured with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub data: DataConfig,
}

impl RunConfig {
    fn defaults() -> Self {
        Self {
            data: DataConfig {
                folds: 5,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

/// Keys whose flag values are taken verbatim as strings.
const STRING_KEYS: &[&str] = &["data.manifest", "data.checkpoint", "data.features", "data.video_id"];

/// Plain flags accepted as shorthands for config keys.
const ALIASES: &[(&str, &str)] = &[
    ("--manifest", "data.manifest"),
    ("--checkpoint", "data.checkpoint"),
    ("--features", "data.features"),
    ("--video-id", "data.video_id"),
    ("--folds", "data.folds"),
];

/// Flattens nested objects into dotted keys. Arrays and scalars are leaves.
pub fn flatten(value: &Value) -> Map<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = Map::new();
    walk("", value, &mut out);
    out
}

/// Applies flat `key -> value` pairs to the defaults; unknown keys are rejected.
pub fn build_config(pairs: &[(String, Value)]) -> Result<RunConfig> {
    let mut tree = serde_json::to_value(RunConfig::defaults()).expect("config serializes");
    let known = flatten(&tree);
    for (key, value) in pairs {
        if !known.contains_key(key) {
            return Err(CliError::Config(format!("unknown config key `{key}`")));
        }
        let mut node = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node.get_mut(*part).expect("known key path");
        }
        node[parts[parts.len() - 1]] = value.clone();
    }
    serde_json::from_value(tree).map_err(|e| CliError::Config(e.to_string()))
}

fn parse_config_file(path: &Path) -> Result<Vec<(String, Value)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
    };
    // nested objects are accepted too and flattened
    Ok(flatten(&Value::Object(map)).into_iter().collect())
}

fn parse_flag_value(key: &str, raw: &str) -> Value {
    if STRING_KEYS.contains(&key) {
        return Value::String(raw.to_string());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Separates dotted config flags (and their aliases) from the arguments clap sees.
fn extract_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<(String, Value)>)> {
    let mut rest = Vec::new();
    let mut pairs = Vec::new();
    let mut iter = args.into_iter();
    if let Some(program) = iter.next() {
        rest.push(program);
    }
    while let Some(arg) = iter.next() {
        let Some(text) = arg.to_str().map(str::to_string) else {
            rest.push(arg);
            continue;
        };
        let (flag, inline) = match text.split_once('=') {
            Some((f, v)) if f.starts_with("--") => (f.to_string(), Some(v.to_string())),
            _ => (text.clone(), None),
        };
        let key = if let Some(&(_, k)) = ALIASES.iter().find(|(a, _)| *a == flag) {
            Some(k.to_string())
        } else if flag.starts_with("--") && flag[2..].contains('.') {
            Some(flag[2..].to_string())
        } else {
            None
        };
        match key {
            Some(key) => {
                let value = match inline {
                    Some(v) => v,
                    None => iter
                        .next()
                        .and_then(|v| v.into_string().ok())
                        .ok_or_else(|| CliError::Usage(format!("flag {flag} needs a value")))?,
                };
                let parsed = parse_flag_value(&key, &value);
                pairs.push((key, parsed));
            }
            None => rest.push(arg),
        }
    }
    Ok((rest, pairs))
}

#[derive(Debug, Parser)]
#[command(name = "hategnn", version, about = "Dual-stream multimodal graph model for hateful video classification")]
struct Cli {
    /// JSON config file with flat dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that receives the command outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-signal synthetic dataset.
    Synth,
    /// Train on a 70/10/20 split, save a checkpoint and report test metrics.
    Train,
    /// Stratified k-fold cross-validation.
    Cv,
    /// Cross-validate all four ablation variants on shared folds.
    Ablation,
    /// Evaluate a checkpoint on every video of a manifest.
    Evaluate,
    /// Predict labels with a checkpoint.
    Predict,
    /// Print instance weights for one video.
    Explain,
}

struct Context {
    config: RunConfig,
    explicit: BTreeSet<String>,
    out: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", dir.display())))?;
        }
        Ok(self.out.as_deref())
    }

    fn require_out(&self) -> Result<&Path> {
        self.out_dir()?
            .ok_or_else(|| CliError::Usage("this command needs --out DIR".into()))
    }

    fn manifest(&self) -> Result<DatasetManifest> {
        let path = self
            .config
            .data
            .manifest
            .as_ref()
            .ok_or_else(|| CliError::Usage("no dataset given: set data.manifest (or --manifest PATH)".into()))?;
        Ok(load_manifest(path)?)
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let path = self
            .config
            .data
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Usage("no checkpoint given: set data.checkpoint (or --checkpoint PATH)".into()))?;
        if !path.is_file() {
            return Err(CliError::Data(format!("checkpoint {} does not exist", path.display())));
        }
        Ok(Checkpoint::load(path)?)
    }

    /// Model config with segment count and widths taken from the data unless
    /// they were set explicitly.
    fn model_for(&self, manifest: &DatasetManifest) -> Result<ModelConfig> {
        let mut model = self.config.model.clone();
        let first = manifest
            .entries
            .first()
            .ok_or_else(|| CliError::Data("manifest is empty".into()))?;
        let probe = read_features(&manifest.feature_path(first), None)?;
        if !self.explicit.iter().any(|k| k.starts_with("model.widths")) {
            model.widths = probe.widths();
        }
        if !self.explicit.contains("model.n_segments") {
            model.n_segments = probe.n_segments();
        }
        model.validate()?;
        Ok(model)
    }

    fn load_dataset(&self) -> Result<(Dataset, ModelConfig)> {
        let manifest = self.manifest()?;
        let model = self.model_for(&manifest)?;
        self.config.train.validate()?;
        let dataset = Dataset::load(manifest, Some(&model.widths))?;
        for (e, f) in dataset.manifest.entries.iter().zip(&dataset.features) {
            if f.n_segments() != model.n_segments {
                return Err(CliError::Data(format!(
                    "video {} has {} segments, model expects {}",
                    e.video_id,
                    f.n_segments(),
                    model.n_segments
                )));
            }
        }
        Ok((dataset, model))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn cmd_synth(ctx: &Context) -> Result<()> {
    let out = ctx.require_out()?;
    let spec = &ctx.config.synth;
    spec.validate()?;
    let (manifest, data) = generate_dataset(spec, out)?;
    // a ready-made config for training on this dataset
    let run = json!({
        "data.manifest": out.join(MANIFEST_FILE),
        "model.n_segments": spec.n_segments,
        "model.n_instances": spec.n_instances,
        "model.widths.visual": spec.widths.visual,
        "model.widths.audio": spec.widths.audio,
        "model.widths.text": spec.widths.text,
    });
    write_file(&out.join("run_config.json"), &to_json(&run))?;
    let hate = data.labels.iter().filter(|&&l| l == 1).count();
    println!(
        "wrote {} videos ({} hateful, {} non-hateful) to {}",
        manifest.len(),
        hate,
        manifest.len() - hate,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    split: [usize; 3],
    best_epoch: usize,
    best_val_f1: Option<f64>,
    stopped_early: bool,
    history: &'a [crate::train::EpochRecord],
    test: Metrics,
}

fn cmd_train(ctx: &Context) -> Result<()> {
    let (dataset, model) = ctx.load_dataset()?;
    let out = ctx.require_out()?;
    let labels = dataset.labels();
    let config = &ctx.config.train;
    let (train_idx, val_idx, test_idx) = stratified_split(&labels, config.split, config.seed);
    let outcome = train(&dataset.features, &labels, &train_idx, &val_idx, &model, config)?;
    let test = if test_idx.is_empty() {
        Metrics::default()
    } else {
        evaluate(&dataset.features, &labels, &test_idx, &outcome.params, &model)?
    };
    Checkpoint {
        config: model.clone(),
        params: outcome.params.clone(),
    }
    .save(&out.join("checkpoint.mhgc"))?;
    let table = format_table(&[("Ours".to_string(), test)]);
    write_file(&out.join("train_report.txt"), &table)?;
    let report = TrainReport {
        model: &model,
        train: config,
        split: [train_idx.len(), val_idx.len(), test_idx.len()],
        best_epoch: outcome.best_epoch,
        best_val_f1: outcome.best_val_f1,
        stopped_early: outcome.stopped_early,
        history: &outcome.history,
        test,
    };
    write_file(&out.join("train_report.json"), &to_json(&report))?;
    print!("{table}");
    Ok(())
}

fn cmd_cv(ctx: &Context) -> Result<()> {
    let (dataset, model) = ctx.load_dataset()?;
    let out = ctx.out_dir()?;
    let report = run_cv(&dataset.features, &dataset.labels(), &model, &ctx.config.train, ctx.config.data.folds)?;
    let table = report.table();
    if let Some(out) = out {
        write_file(&out.join("cv_report.txt"), &table)?;
        write_file(&out.join("cv_report.json"), &to_json(&report))?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_ablation(ctx: &Context) -> Result<()> {
    let (dataset, model) = ctx.load_dataset()?;
    let out = ctx.out_dir()?;
    let report = run_ablation(&dataset.features, &dataset.labels(), &model, &ctx.config.train, ctx.config.data.folds)?;
    let table = report.table();
    if let Some(out) = out {
        write_file(&out.join("ablation_report.txt"), &table)?;
        write_file(&out.join("ablation_report.json"), &to_json(&report))?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_evaluate(ctx: &Context) -> Result<()> {
    let ck = ctx.checkpoint()?;
    let dataset = Dataset::load(ctx.manifest()?, Some(&ck.config.widths))?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let metrics = evaluate(&dataset.features, &dataset.labels(), &all, &ck.params, &ck.config)?;
    let table = format_table(&[("Ours".to_string(), metrics)]);
    if let Some(out) = ctx.out_dir()? {
        write_file(&out.join("eval_report.txt"), &table)?;
        write_file(&out.join("eval_report.json"), &to_json(&metrics))?;
    }
    print!("{table}");
    Ok(())
}

/// Videos addressed by `data.features` or by `data.manifest` (optionally
/// narrowed to `data.video_id`).
fn targets(ctx: &Context, ck: &Checkpoint) -> Result<Vec<(String, SegmentFeatures)>> {
    let widths = Some(&ck.config.widths);
    if let Some(path) = &ctx.config.data.features {
        let id = ctx.config.data.video_id.clone().unwrap_or_else(|| {
            path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
        });
        return Ok(vec![(id, read_features(path, widths)?)]);
    }
    let manifest = ctx.manifest()?;
    let entries: Vec<_> = match &ctx.config.data.video_id {
        Some(id) => vec![manifest
            .entry(id)
            .ok_or_else(|| CliError::Data(format!("video `{id}` is not in the manifest")))?],
        None => manifest.entries.iter().collect(),
    };
    entries
        .into_iter()
        .map(|e| Ok((e.video_id.clone(), read_features(&manifest.feature_path(e), widths)?)))
        .collect()
}

fn label_name(label: u8) -> &'static str {
    if label == 1 {
        "hate"
    } else {
        "non-hate"
    }
}

fn cmd_predict(ctx: &Context) -> Result<()> {
    let ck = ctx.checkpoint()?;
    let mut records = Vec::new();
    for (id, f) in targets(ctx, &ck)? {
        let out = forward(&f, &ck.params, &ck.config)?;
        let label = label_name(out.predicted_label());
        println!("{id}\t{label}\t{:.4}\t{:.4}", out.h_hat[0], out.h_hat[1]);
        records.push(json!({ "video_id": id, "predicted": label, "h_hat": out.h_hat }));
    }
    let text = records.iter().map(|r| r.to_string() + "\n").collect::<String>();
    if let Some(out) = ctx.out_dir()? {
        write_file(&out.join("predictions.jsonl"), &text)?;
    }
    Ok(())
}

fn cmd_explain(ctx: &Context) -> Result<()> {
    let ck = ctx.checkpoint()?;
    let mut records = String::new();
    for (id, f) in targets(ctx, &ck)? {
        let out = forward(&f, &ck.params, &ck.config)?;
        let top = out.top_instance();
        let label = label_name(out.predicted_label());
        println!("video {id}: {label} (h_hat = [{:.4}, {:.4}])", out.h_hat[0], out.h_hat[1]);
        for (i, a) in out.alpha.iter().enumerate() {
            let mark = if i == top { "  <- max" } else { "" };
            println!("  alpha_{} = {a:.4}{mark}", i + 1);
        }
        println!("  sum     = {:.4}", out.alpha.iter().sum::<f64>());
        let record = json!({
            "video_id": id,
            "alpha": out.alpha,
            "top_instance": top,
            "predicted": label,
            "h_hat": out.h_hat,
        });
        println!("{record}");
        records.push_str(&(record.to_string() + "\n"));
    }
    if let Some(out) = ctx.out_dir()? {
        write_file(&out.join("explanations.jsonl"), &records)?;
    }
    Ok(())
}

fn run_inner(args: Vec<OsString>) -> Result<()> {
    let (rest, flag_pairs) = extract_overrides(args)?;
    let cli = Cli::try_parse_from(rest).map_err(|e| {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            print!("{e}");
            CliError::Usage(String::new())
        } else {
            CliError::Usage(e.to_string())
        }
    })?;

    let mut pairs = match &cli.config {
        Some(path) => parse_config_file(path)?,
        None => Vec::new(),
    };
    pairs.extend(flag_pairs);
    if let Some(seed) = cli.seed {
        pairs.push(("train.seed".into(), json!(seed)));
        pairs.push(("synth.seed".into(), json!(seed)));
    }
    let explicit = pairs.iter().map(|(k, _)| k.clone()).collect();
    let config = build_config(&pairs)?;
    let ctx = Context {
        config,
        explicit,
        out: cli.out,
    };
    match cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Cv => cmd_cv(&ctx),
        Command::Ablation => cmd_ablation(&ctx),
        Command::Evaluate => cmd_evaluate(&ctx),
        Command::Predict => cmd_predict(&ctx),
        Command::Explain => cmd_explain(&ctx),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    match run_inner(args) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) if msg.is_empty() => EXIT_OK,
        Err(e) => {
            eprintln!("hategnn: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<OsString> {
        list.iter().map(OsString::from).collect()
    }

    #[test]
    fn dotted_flags_are_extracted() {
        let (rest, pairs) =
            extract_overrides(args(&["hategnn", "--model.d", "32", "train", "--train.split.val=0.2", "--manifest", "m.jsonl"]))
                .unwrap();
        assert_eq!(rest, args(&["hategnn", "train"]));
        assert_eq!(pairs[0], ("model.d".into(), json!(32)));
        assert_eq!(pairs[1], ("train.split.val".into(), json!(0.2)));
        assert_eq!(pairs[2], ("data.manifest".into(), json!("m.jsonl")));
    }

    #[test]
    fn config_keys_apply_and_unknown_keys_fail() {
        let c = build_config(&[
            ("model.d".into(), json!(16)),
            ("train.optimizer".into(), json!("sgd")),
            ("model.widths.audio".into(), json!(8)),
            ("synth.modality_carriers".into(), json!(["text"])),
        ])
        .unwrap();
        assert_eq!(c.model.d, 16);
        assert_eq!(c.model.widths.audio, 8);
        assert_eq!(c.data.folds, 5);
        assert!(matches!(build_config(&[("model.dd".into(), json!(1))]), Err(CliError::Config(_))));
        assert!(matches!(build_config(&[("model.d".into(), json!("x"))]), Err(CliError::Config(_))));
    }

    #[test]
    fn string_keys_stay_strings() {
        assert_eq!(parse_flag_value("data.video_id", "123"), json!("123"));
        assert_eq!(parse_flag_value("model.epsilon", "0.5"), json!(0.5));
    }

    #[test]
    fn every_default_key_round_trips() {
        let tree = serde_json::to_value(RunConfig::defaults()).unwrap();
        let pairs: Vec<_> = flatten(&tree).into_iter().collect();
        assert_eq!(build_config(&pairs).unwrap(), RunConfig::defaults());
    }
}
