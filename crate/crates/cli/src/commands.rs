use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use chemlora::data::{
    curate, format_tasks, load_dataset, split, synth, DataFormat, LoadMode, ReactionRecord, SplitSpec, TaskExample,
    Tasks,
};
use chemlora::lora::{load_bundle, param_counts, save_bundle, BundleHeader};
use chemlora::model::{load_model, save_model, ModelConfig, Seq2SeqModel};
use chemlora::stats::{compare, PairedSample, WilcoxonMode};
use chemlora::train::{
    evaluate_model, forgetting_report, histogram_csv, ood_reagents, train as run_training, EvalReport, LoraHparams,
    TrainConfig, TrainError, TrainMode,
};

use crate::manifest::Recorder;
use crate::{
    DataFlags, EvalArgs, ForgettingArgs, InspectArgs, MergeArgs, Mode, OodArgs, PackArgs, PrepareArgs, PretrainArgs,
    StatsArgs, StatsMode, SwapArgs, SyntheticGrammar, TaskFlags, TrainArgs,
};

/// A flag value that parsed but is not acceptable.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// The run completed but produced a numerically invalid or inconsistent
/// result.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 1 for usage errors, 3 for numeric failures, 2 for everything else
/// (unreadable, malformed or empty data).
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if cause.is::<NumericFailure>() {
            return 3;
        }
        match cause.downcast_ref::<TrainError>() {
            Some(TrainError::NonFinite { .. }) => return 3,
            Some(TrainError::Config(_)) => return 1,
            _ => {}
        }
    }
    2
}

fn load_records(path: &Path, flags: &DataFlags) -> Result<Vec<ReactionRecord>> {
    let mode = if flags.lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let loaded = load_dataset(path, DataFormat::from_path(path), mode).with_context(|| format!("loading {}", path.display()))?;
    for e in &loaded.errors {
        log::warn!("{}: skipped row {}: {}", path.display(), e.row, e.message);
    }
    Ok(loaded.records)
}

fn parse_tasks(flags: &TaskFlags) -> Result<Tasks> {
    Tasks::parse(&flags.tasks).map_err(|e| usage(e.to_string()))
}

fn load_examples(path: &Path, tasks: &TaskFlags, data: &DataFlags) -> Result<Vec<TaskExample>> {
    let parsed = parse_tasks(tasks)?;
    let records = load_records(path, data)?;
    format_tasks(&records, &parsed, tasks.multi_task).map_err(|e| usage(e.to_string()))
}

fn parse_ks(s: &str, beam: usize) -> Result<Vec<usize>> {
    let ks = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().ok().filter(|&k| k > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| usage(format!("--k expects comma-separated positive integers, got {s:?}")))?;
    let max = ks.iter().copied().max().unwrap_or(0);
    if beam < max {
        return Err(usage(format!("--beam {beam} is smaller than the largest K ({max})")));
    }
    Ok(ks)
}

fn check_lora_flags(r: usize, alpha: f64, dropout: f64) -> Result<()> {
    if r == 0 {
        return Err(usage("--r must be at least 1"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(usage(format!("--alpha must be positive, got {alpha}")));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(usage(format!("--dropout must lie in [0, 1), got {dropout}")));
    }
    Ok(())
}

fn split_list(s: &Option<String>) -> Vec<String> {
    s.as_deref()
        .map(|t| t.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
        .unwrap_or_default()
}

fn write_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

fn emit_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Serialize)]
struct PrepareReport {
    source: String,
    load_errors: usize,
    curation: chemlora::data::CurationReport,
    split: SplitSizes,
}

#[derive(Serialize)]
struct SplitSizes {
    train: usize,
    val: usize,
    test: usize,
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    if a.min_yield.is_nan() {
        return Err(usage("--min-yield must be a number"));
    }
    let tasks = parse_tasks(&a.tasks)?;
    let spec = SplitSpec::parse(&a.split, a.seed).map_err(|e| usage(e.to_string()))?;
    let mut rec = Recorder::new(&a.out, "prepare", a)?;
    rec.seed(a.seed);
    let (records, source, load_errors) = match (&a.input, a.synthetic) {
        (Some(path), _) => {
            rec.input(path);
            let mode = if a.data.lenient { LoadMode::Lenient } else { LoadMode::Strict };
            let loaded = load_dataset(path, DataFormat::from_path(path), mode)
                .with_context(|| format!("loading {}", path.display()))?;
            for e in &loaded.errors {
                log::warn!("skipped row {}: {}", e.row, e.message);
            }
            (loaded.records, path.display().to_string(), loaded.errors.len())
        }
        (None, Some(g)) => {
            let grammar = match g {
                SyntheticGrammar::A => synth::Grammar::A,
                SyntheticGrammar::B => synth::Grammar::B,
            };
            (synth::generate(grammar, a.n, a.seed), format!("synthetic:{g:?}"), 0)
        }
        (None, None) => return Err(usage("one of --input or --synthetic is required")),
    };
    let (curated, report) = curate(&records, a.min_yield, a.dedup_products);
    let (train, val, test) = split(&curated, &spec)?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        rec.write_text(&format!("{name}.jsonl"), &write_jsonl(part)?)?;
        let examples = format_tasks(part, &tasks, a.tasks.multi_task).map_err(|e| usage(e.to_string()))?;
        rec.write_text(&format!("{name}.examples.jsonl"), &write_jsonl(&examples)?)?;
    }
    let summary = PrepareReport {
        source,
        load_errors,
        curation: report,
        split: SplitSizes {
            train: train.len(),
            val: val.len(),
            test: test.len(),
        },
    };
    rec.write_json("curation.json", &summary)?;
    rec.finish()?;
    eprintln!(
        "prepared {} -> {} records (train {}, val {}, test {})",
        report.input_count,
        report.output_count,
        train.len(),
        val.len(),
        test.len()
    );
    Ok(())
}

fn train_config(mode: TrainMode, a: &crate::OptimFlags, tasks: &Tasks, multi: bool, seed: u64, lora: Option<LoraHparams>) -> TrainConfig {
    TrainConfig {
        mode,
        tasks: tasks.clone(),
        multi_task: multi,
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        lora,
        max_steps: a.max_steps,
    }
}

fn non_empty(examples: &[TaskExample], path: &Path) -> Result<()> {
    if examples.is_empty() {
        bail!("{} contains no examples", path.display());
    }
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let tasks = parse_tasks(&a.tasks)?;
    let config = ModelConfig {
        d_model: a.d_model,
        n_heads: a.n_heads,
        n_encoder_layers: a.encoder_layers,
        n_decoder_layers: a.decoder_layers,
        d_ff: a.d_ff,
        max_sequence_length: a.max_len,
        seed: a.seed,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = train_config(TrainMode::Full, &a.optim, &tasks, a.tasks.multi_task, a.seed, None);
    cfg.validate()?;
    let examples = load_examples(&a.data, &a.tasks, &a.data_flags)?;
    non_empty(&examples, &a.data)?;
    let mut rec = Recorder::new(&a.out, "pretrain", a)?;
    rec.seed(a.seed);
    rec.input(&a.data);
    let mut model = Seq2SeqModel::new(config)?;
    let log = run_training(&mut model, &examples, &cfg)?;
    save_model(&rec.output("model.bmdl"), &model)?;
    rec.write_json("train_log.json", &log)?;
    rec.finish()?;
    eprintln!("final epoch loss {:.6}", log.epoch_losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let tasks = parse_tasks(&a.tasks)?;
    let mode = match a.mode {
        Mode::Full => TrainMode::Full,
        Mode::Lora => TrainMode::Lora,
    };
    let targets = split_list(&a.lora.targets);
    let hparams = (mode == TrainMode::Lora).then(|| LoraHparams {
        r: a.lora.r,
        alpha: a.lora.alpha,
        dropout_p: a.lora.dropout,
        targets: targets.clone(),
    });
    if mode == TrainMode::Lora {
        check_lora_flags(a.lora.r, a.lora.alpha, a.lora.dropout)?;
    } else if a.adapter.is_some() {
        return Err(usage("--adapter is only valid with --mode lora"));
    }
    let cfg = train_config(mode, &a.optim, &tasks, a.tasks.multi_task, a.seed, hparams);
    cfg.validate()?;
    let examples = load_examples(&a.data, &a.tasks, &a.data_flags)?;
    non_empty(&examples, &a.data)?;
    let mut rec = Recorder::new(&a.out, "train", a)?;
    rec.seed(a.seed);
    rec.input(&a.model);
    rec.input(&a.data);
    let mut model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    if mode == TrainMode::Lora {
        let mut bundle = match &a.adapter {
            Some(p) => {
                rec.input(p);
                load_bundle(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => model.new_adapter(&a.name, &targets, a.lora.r, a.lora.alpha, a.lora.dropout, a.seed)?,
        };
        bundle.meta.tasks = tasks.tags();
        model.attach(bundle)?;
    }
    let log = run_training(&mut model, &examples, &cfg)?;
    match mode {
        TrainMode::Full => save_model(&rec.output("model.bmdl"), &model)?,
        TrainMode::Lora => {
            let bundle = model.active_adapter().context("adapter vanished during training")?;
            save_bundle(&rec.output("adapter.lorb"), bundle)?;
        }
    }
    rec.write_json("train_log.json", &log)?;
    rec.finish()?;
    eprintln!("final epoch loss {:.6}", log.epoch_losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ks = parse_ks(&a.k, a.beam)?;
    let examples = load_examples(&a.data, &a.tasks, &a.data_flags)?;
    if examples.is_empty() {
        bail!("evaluation file {} contains no examples", a.data.display());
    }
    let mut model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let name = dataset_name(&a.data);
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    if a.adapter.is_empty() {
        reports.push(("eval.json".into(), evaluate_model(&model, &examples, &ks, a.beam, &name)?));
    } else {
        for p in &a.adapter {
            let bundle = load_bundle(p).with_context(|| format!("loading {}", p.display()))?;
            let label = bundle.name.clone();
            model.swap(bundle)?;
            let report = evaluate_model(&model, &examples, &ks, a.beam, &format!("{name}+{label}"))?;
            let file = if a.adapter.len() == 1 { "eval.json".to_string() } else { format!("eval_{label}.json") };
            reports.push((file, report));
        }
    }
    for (_, r) in &reports {
        if !r.is_monotone() {
            return Err(NumericFailure(format!("Acc@K not monotone in report {}", r.dataset)).into());
        }
    }
    match &a.out {
        Some(out) => {
            let mut rec = Recorder::new(out, "eval", a)?;
            rec.input(&a.model);
            rec.input(&a.data);
            for p in &a.adapter {
                rec.input(p);
            }
            for (file, r) in &reports {
                rec.write_json(file, r)?;
            }
            rec.finish()?;
        }
        None if reports.len() == 1 => emit_json(&reports[0].1)?,
        None => emit_json(&reports.iter().map(|(_, r)| r).collect::<Vec<_>>())?,
    }
    for (_, r) in &reports {
        let acc: Vec<String> = r.accuracy.iter().map(|(k, v)| format!("Acc@{k}={v:.2}")).collect();
        eprintln!("{}: {}", r.dataset, acc.join(" "));
    }
    Ok(())
}

pub fn pack(a: &PackArgs) -> Result<()> {
    check_lora_flags(a.lora.r, a.lora.alpha, a.lora.dropout)?;
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let mut bundle = model.new_adapter(&a.name, &split_list(&a.lora.targets), a.lora.r, a.lora.alpha, a.lora.dropout, a.seed)?;
    bundle.meta.tasks = split_list(&Some(a.tags.clone()));
    let mut rec = Recorder::new(&a.out, "adapter pack", a)?;
    rec.seed(a.seed);
    rec.input(&a.model);
    save_bundle(&rec.output("adapter.lorb"), &bundle)?;
    rec.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct Inspection {
    header: BundleHeader,
    trainable_params: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_params: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trainable_fraction: Option<f64>,
}

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let bundle = load_bundle(&a.adapter).with_context(|| format!("loading {}", a.adapter.display()))?;
    let mut out = Inspection {
        header: BundleHeader::of(&bundle),
        trainable_params: bundle.trainable_params(),
        base_params: None,
        trainable_fraction: None,
    };
    if let Some(p) = &a.model {
        let mut model = load_model(p).with_context(|| format!("loading {}", p.display()))?;
        let counts = param_counts(model.base_param_count(), &bundle);
        model.attach(bundle).context("bundle does not fit the model")?;
        out.base_params = Some(counts.frozen);
        out.trainable_fraction = Some(counts.fraction);
    }
    emit_json(&out)
}

pub fn merge(a: &MergeArgs) -> Result<()> {
    let mut model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let bundle = load_bundle(&a.adapter).with_context(|| format!("loading {}", a.adapter.display()))?;
    model.attach(bundle)?;
    let merged = model.merged()?;
    let mut rec = Recorder::new(&a.out, "adapter merge", a)?;
    rec.input(&a.model);
    rec.input(&a.adapter);
    save_model(&rec.output("merged.bmdl"), &merged)?;
    rec.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct SwapStep {
    adapter: String,
    path: String,
    active: Option<String>,
    trainable_params: usize,
    base_checksum: String,
}

pub fn swap(a: &SwapArgs) -> Result<()> {
    let mut model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let before = model.checksum();
    let mut steps = Vec::new();
    for p in &a.adapter {
        let bundle = load_bundle(p).with_context(|| format!("loading {}", p.display()))?;
        let name = bundle.name.clone();
        let params = bundle.trainable_params();
        model.swap(bundle)?;
        steps.push(SwapStep {
            adapter: name,
            path: p.display().to_string(),
            active: model.active_adapter().map(|b| b.name.clone()),
            trainable_params: params,
            base_checksum: model.checksum(),
        });
    }
    if steps.iter().any(|s| s.base_checksum != before) {
        return Err(NumericFailure("base weights changed during swap".into()).into());
    }
    emit_json(&steps)
}

pub fn forgetting(a: &ForgettingArgs) -> Result<()> {
    let ks = parse_ks(&a.k, a.beam)?;
    let mut sets = Vec::new();
    let mut paths = Vec::new();
    for spec in &a.eval_sets {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--eval-set expects NAME=PATH, got {spec:?}")))?;
        let path = Path::new(path);
        let examples = load_examples(path, &a.tasks, &a.data_flags)?;
        non_empty(&examples, path)?;
        sets.push((name.to_string(), examples));
        paths.push(path.to_path_buf());
    }
    let base = load_model(&a.base).with_context(|| format!("loading {}", a.base.display()))?;
    let full = load_model(&a.full).with_context(|| format!("loading {}", a.full.display()))?;
    let bundle = load_bundle(&a.adapter).with_context(|| format!("loading {}", a.adapter.display()))?;
    let report = forgetting_report(&base, &full, &bundle, &sets, &ks, a.beam)?;
    let mut rec = Recorder::new(&a.out, "forgetting", a)?;
    for p in [&a.base, &a.full, &a.adapter].into_iter().chain(&paths) {
        rec.input(p);
    }
    rec.write_json("forgetting.json", &report)?;
    rec.finish()?;
    if !report.detach_exact {
        return Err(NumericFailure(format!(
            "detached adapter changed outputs on: {}",
            report.violations.join(", ")
        ))
        .into());
    }
    Ok(())
}

fn reagents(records: &[ReactionRecord]) -> Vec<String> {
    let mut out: Vec<String> = records.iter().flat_map(|r| r.reagents.iter().cloned()).collect();
    out.sort();
    out.dedup();
    out
}

pub fn ood(a: &OodArgs) -> Result<()> {
    if a.top_k == 0 {
        return Err(usage("--top-k must be at least 1"));
    }
    let text = fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.report.display()))?;
    let task = reagents(&load_records(&a.task_train, &a.data_flags)?);
    let general = reagents(&load_records(&a.general_train, &a.data_flags)?);
    let ood = ood_reagents(&report, &a.source_model, &task, &general, a.top_k)?;
    if !ood.disjoint {
        return Err(NumericFailure("OOD list overlaps the training reagents".into()).into());
    }
    let mut rec = Recorder::new(&a.out, "ood", a)?;
    for p in [&a.report, &a.task_train, &a.general_train] {
        rec.input(p);
    }
    rec.write_json("ood.json", &ood)?;
    if a.csv {
        rec.write_text("ood_histogram.csv", &histogram_csv(&ood))?;
    }
    rec.finish()?;
    eprintln!(
        "{} OOD reagents from {} predicted fragments ({} unparseable)",
        ood.entries.len(),
        ood.considered,
        ood.unparseable
    );
    Ok(())
}

fn parse_floats(s: &str, flag: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| usage(format!("--{flag} expects comma-separated numbers, got {s:?}")))
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let sample = match (&a.input, &a.x, &a.y) {
        (Some(p), _, _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let s: PairedSample = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            s.validate()?;
            s
        }
        (None, Some(x), Some(y)) => {
            let (x, y) = (parse_floats(x, "x")?, parse_floats(y, "y")?);
            let labels = (0..x.len()).map(|i| i.to_string()).collect();
            PairedSample::new(labels, x, y).map_err(|e| usage(e.to_string()))?
        }
        _ => return Err(usage("give --input or both --x and --y")),
    };
    let mode = match a.mode {
        StatsMode::Auto => WilcoxonMode::Auto,
        StatsMode::Exact => WilcoxonMode::Exact,
        StatsMode::NormalApprox => WilcoxonMode::NormalApprox,
    };
    let report = compare(&sample, mode)?;
    match &a.out {
        Some(out) => {
            let mut rec = Recorder::new(out, "stats", a)?;
            if let Some(p) = &a.input {
                rec.input(p);
            }
            rec.write_json("stats.json", &report)?;
            rec.finish()?;
        }
        None => emit_json(&report)?,
    }
    if report.degenerate {
        log::warn!("all paired differences are zero; W is undefined and p = 1");
    }
    Ok(())
}
