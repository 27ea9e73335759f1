use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hico_core::config::RunConfig;
use hico_core::data::{synth_dataset, DatasetManifest, SkeletonSequence, Split, View};
use hico_core::eval::{
    argmax, cosine_scores, davies_bouldin, extract_embeddings, finetune, format_metrics, fuse_view_scores, linear_probe,
    retrieve_from_scores, EmbeddingTable,
};
use hico_core::train::{Checkpoint, Trainer, TRACE_HEADER};
use hico_core::Error;

#[derive(Parser)]
#[command(name = "hico", version, about = "Hierarchical contrastive learning for skeleton sequences")]
struct Cli {
    /// Worker threads for data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Base preset: paper, desk or tiny.
    #[arg(long, default_value = "paper")]
    preset: String,
    /// Config file of `section.key = value` lines, applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `pretrain`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (containing manifest.tsv) or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated views; several views are fused by averaging scores.
    #[arg(long)]
    views: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    Synth(Common),
    /// Pre-train on the train split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Export instance features as CSV and EMB1.
    Embed {
        #[command(flatten)]
        eval: EvalArgs,
        /// train, test or both.
        #[arg(long, default_value = "both")]
        split: String,
    },
    /// Linear evaluation on frozen features.
    Probe(EvalArgs),
    /// 1-NN cosine retrieval of test items against the train split.
    Retrieve(EvalArgs),
    /// Fine-tune encoder and classifier on a labelled fraction.
    Finetune(EvalArgs),
    /// Davies-Bouldin index of test-split features.
    Dbi(EvalArgs),
    /// Pre-train and evaluate one model per value of an axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// granularity, branches, loss, udm, fusion, or any config key.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; required for plain config keys.
        #[arg(long)]
        values: Option<String>,
    },
}

/// Bad invocation (exit 2) versus failure while running (exit 1).
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type Outcome<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if !hico_core::parallel::init_workers(n) {
            log::warn!("could not set worker count to {n}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Preset, then config file, then `--set` overrides.
fn load_config(common: &Common) -> Outcome<RunConfig> {
    let mut cfg = RunConfig::preset(&common.preset)?;
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display())).map_err(Failure::Usage)?;
        cfg.apply_text(&text)?;
    }
    for pair in &common.overrides {
        cfg.set_pair(pair)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Creates the output directory and records the effective configuration.
fn prepare_out(common: &Common, cfg: &RunConfig, command: &str) -> Outcome<()> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let header = format!("# hico {command}\n# seed = {}\n", cfg.train.seed);
    fs::write(common.out.join("config.txt"), header + &cfg.to_text()).context("writing config.txt")?;
    Ok(())
}

fn load_manifest(path: &Path) -> Outcome<DatasetManifest> {
    let file = if path.is_dir() { path.join("manifest.tsv") } else { path.to_path_buf() };
    Ok(DatasetManifest::load(&file).with_context(|| format!("loading manifest {}", file.display()))?)
}

fn parse_views(arg: Option<&str>, default: View) -> Outcome<Vec<View>> {
    match arg {
        None => Ok(vec![default]),
        Some(s) => s.split(',').map(|v| v.trim().parse::<View>().map_err(|e| usage(e.to_string()))).collect(),
    }
}

fn write_metrics(out: &Path, name: &str, pairs: &[(&str, String)]) -> Outcome<()> {
    let text = format_metrics(pairs);
    print!("{text}");
    fs::write(out.join(name), text).with_context(|| format!("writing {name}"))?;
    Ok(())
}

struct EvalContext {
    cfg: RunConfig,
    ckpt: Checkpoint,
    train: Vec<SkeletonSequence>,
    test: Vec<SkeletonSequence>,
    views: Vec<View>,
    out: PathBuf,
}

fn eval_context(args: &EvalArgs, command: &str) -> Outcome<EvalContext> {
    let cfg = load_config(&args.common)?;
    let views = parse_views(args.views.as_deref(), cfg.view)?;
    prepare_out(&args.common, &cfg, command)?;
    let ckpt = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let manifest = load_manifest(&args.data)?;
    Ok(EvalContext {
        train: manifest.load_split(Split::Train)?,
        test: manifest.load_split(Split::Test)?,
        cfg,
        ckpt,
        views,
        out: args.common.out.clone(),
    })
}

fn accuracy_of(pred: &[usize], labels: &[u32]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| **p == **l as usize).count() as f64 / labels.len().max(1) as f64
}

fn run(command: Command) -> Outcome<()> {
    match command {
        Command::Synth(common) => {
            let cfg = load_config(&common)?;
            prepare_out(&common, &cfg, "synth")?;
            let manifest = synth_dataset(&cfg.data, &common.out)?;
            println!("wrote {} sequences to {}", manifest.items.len(), common.out.display());
        }
        Command::Pretrain { common, data } => {
            let cfg = load_config(&common)?;
            prepare_out(&common, &cfg, "pretrain")?;
            let seqs = load_manifest(&data)?.load_split(Split::Train)?;
            let mut trace = BufWriter::new(File::create(common.out.join("trace.csv")).context("creating trace.csv")?);
            writeln!(trace, "{TRACE_HEADER}").context("writing trace")?;
            let mut trainer = Trainer::new(&cfg.train)?;
            let mut io_err = None;
            trainer.run(&seqs, &mut |row| {
                if let Err(e) = writeln!(trace, "{}", row.to_csv()) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(anyhow::Error::from(e).context("writing trace").into());
            }
            trace.flush().context("writing trace")?;
            let path = common.out.join("checkpoint.hck");
            trainer.checkpoint().save(&path)?;
            println!("checkpoint written to {}", path.display());
        }
        Command::Embed { eval, split } => {
            let ctx = eval_context(&eval, "embed")?;
            let splits: Vec<(&str, &[SkeletonSequence])> = match split.as_str() {
                "train" => vec![("train", &ctx.train)],
                "test" => vec![("test", &ctx.test)],
                "both" => vec![("train", &ctx.train), ("test", &ctx.test)],
                other => return Err(usage(format!("unknown split {other:?} (train|test|both)"))),
            };
            for view in &ctx.views {
                for (name, seqs) in &splits {
                    let table = extract_embeddings(&ctx.ckpt, seqs, *view)?;
                    let stem = format!("embeddings_{}_{name}", view.as_str());
                    fs::write(ctx.out.join(format!("{stem}.csv")), table.to_csv()).context("writing CSV")?;
                    table.save(ctx.out.join(format!("{stem}.emb")))?;
                    println!("{stem}: {} x {}", table.len(), table.dim());
                }
            }
        }
        Command::Probe(args) => {
            let ctx = eval_context(&args, "probe")?;
            let mut metrics = Vec::new();
            let mut logits = Vec::new();
            let mut labels = Vec::new();
            for view in &ctx.views {
                let train = extract_embeddings(&ctx.ckpt, &ctx.train, *view)?;
                let test = extract_embeddings(&ctx.ckpt, &ctx.test, *view)?;
                let r = linear_probe(&train, &test, &ctx.cfg.probe)?;
                metrics.push((view.as_str(), r.accuracy.to_string()));
                logits.push(r.logits);
                labels = test.labels;
            }
            if ctx.views.len() > 1 {
                let fused = fuse_view_scores(&logits)?;
                let pred: Vec<usize> = (0..fused.rows()).map(|r| argmax(fused.row(r))).collect();
                metrics.push(("fused", accuracy_of(&pred, &labels).to_string()));
            }
            let pairs: Vec<(String, String)> = metrics.into_iter().map(|(k, v)| (format!("probe_accuracy_{k}"), v)).collect();
            let pairs: Vec<(&str, String)> = pairs.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
            write_metrics(&ctx.out, "probe.txt", &pairs)?;
        }
        Command::Retrieve(args) => {
            let ctx = eval_context(&args, "retrieve")?;
            let mut pairs = Vec::new();
            let mut scores = Vec::new();
            let (mut ql, mut gl) = (Vec::new(), Vec::new());
            for view in &ctx.views {
                let gallery = extract_embeddings(&ctx.ckpt, &ctx.train, *view)?;
                let query = extract_embeddings(&ctx.ckpt, &ctx.test, *view)?;
                let s = cosine_scores(&query, &gallery)?;
                let r = retrieve_from_scores(&s, &query.labels, &gallery.labels)?;
                pairs.push((format!("retrieval_accuracy_{}", view.as_str()), r.accuracy.to_string()));
                scores.push(s);
                (ql, gl) = (query.labels, gallery.labels);
            }
            if ctx.views.len() > 1 {
                let r = retrieve_from_scores(&fuse_view_scores(&scores)?, &ql, &gl)?;
                pairs.push(("retrieval_accuracy_fused".into(), r.accuracy.to_string()));
            }
            let pairs: Vec<(&str, String)> = pairs.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
            write_metrics(&ctx.out, "retrieve.txt", &pairs)?;
        }
        Command::Finetune(args) => {
            let ctx = eval_context(&args, "finetune")?;
            let view = single_view(&ctx.views)?;
            let r = finetune(&ctx.ckpt, &ctx.train, &ctx.test, view, &ctx.cfg.finetune)?;
            write_metrics(
                &ctx.out,
                "finetune.txt",
                &[
                    ("finetune_accuracy", r.accuracy.to_string()),
                    ("label_fraction", ctx.cfg.finetune.label_fraction.to_string()),
                    ("labelled_items", r.subset.len().to_string()),
                ],
            )?;
        }
        Command::Dbi(args) => {
            let ctx = eval_context(&args, "dbi")?;
            let view = single_view(&ctx.views)?;
            let table = extract_embeddings(&ctx.ckpt, &ctx.test, view)?;
            write_metrics(&ctx.out, "dbi.txt", &[("davies_bouldin", davies_bouldin(&table)?.to_string())])?;
        }
        Command::Ablate { common, data, axis, values } => {
            let base = load_config(&common)?;
            let variants = ablation_variants(&base, &axis, values.as_deref())?;
            prepare_out(&common, &base, "ablate")?;
            let manifest = load_manifest(&data)?;
            let train = manifest.load_split(Split::Train)?;
            let test = manifest.load_split(Split::Test)?;
            let mut csv = BufWriter::new(File::create(common.out.join("ablate.csv")).context("creating ablate.csv")?);
            let header = "axis,value,probe_accuracy,retrieval_accuracy,final_loss,seconds";
            writeln!(csv, "{header}").context("writing ablate.csv")?;
            println!("{header}");
            for (value, cfg) in variants {
                let start = Instant::now();
                let mut trainer = Trainer::new(&cfg.train)?;
                let trace = trainer.run(&train, &mut |_| {})?;
                let ckpt = trainer.checkpoint();
                let (probe, retrieval) = evaluate(&ckpt, &train, &test, &cfg)?;
                let loss = trace.last().map_or(f64::NAN, |r| r.terms.total());
                let row = format!("{axis},{value},{probe},{retrieval},{loss},{:.1}", start.elapsed().as_secs_f64());
                println!("{row}");
                writeln!(csv, "{row}").context("writing ablate.csv")?;
                csv.flush().context("writing ablate.csv")?;
            }
        }
    }
    Ok(())
}

fn single_view(views: &[View]) -> Outcome<View> {
    match views {
        [v] => Ok(*v),
        _ => Err(usage("this command takes a single view")),
    }
}

fn evaluate(ckpt: &Checkpoint, train: &[SkeletonSequence], test: &[SkeletonSequence], cfg: &RunConfig) -> Outcome<(f64, f64)> {
    let a: EmbeddingTable = extract_embeddings(ckpt, train, cfg.view)?;
    let b = extract_embeddings(ckpt, test, cfg.view)?;
    let probe = linear_probe(&a, &b, &cfg.probe)?.accuracy;
    let retrieval = retrieve_from_scores(&cosine_scores(&b, &a)?, &b.labels, &a.labels)?.accuracy;
    Ok((probe, retrieval))
}

/// Named axes expand to the settings compared in the paper's ablations.
fn ablation_variants(base: &RunConfig, axis: &str, values: Option<&str>) -> Outcome<Vec<(String, RunConfig)>> {
    let (key, defaults): (Option<&str>, &[&str]) = match axis {
        "granularity" => (Some("encoder.L"), &["1", "2", "3", "4"]),
        "branches" => (Some("encoder.branches"), &["both", "temporal", "spatial"]),
        "udm" => (Some("encoder.udm"), &["conv_max", "conv_mean", "max", "mean"]),
        "fusion" => (Some("encoder.fusion"), &["concat", "sum", "product", "weighted"]),
        "loss" => (None, &["instance", "instance+domain", "instance+clip_part", "full"]),
        other if RunConfig::keys().contains(&other) => (Some(other), &[]),
        other => {
            return Err(usage(format!("unknown ablation axis {other:?}; use granularity, branches, loss, udm, fusion or a config key")))
        }
    };
    let values: Vec<String> = match values {
        Some(v) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None if !defaults.is_empty() => defaults.iter().map(|s| s.to_string()).collect(),
        None => return Err(usage(format!("--values is required for axis {axis}"))),
    };
    if values.is_empty() {
        return Err(usage("no ablation values given"));
    }
    let mut out = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        match key {
            Some(k) => cfg.set(k, &v)?,
            None => {
                let terms: Vec<&str> = if v == "full" { vec!["instance", "domain", "clip_part"] } else { v.split('+').collect() };
                for t in ["instance", "domain", "clip_part"] {
                    cfg.set(&format!("loss.{t}"), if terms.contains(&t) { "on" } else { "off" })?;
                }
                if let Some(bad) = terms.iter().find(|t| !["instance", "domain", "clip_part"].contains(t)) {
                    return Err(usage(format!("unknown loss term {bad:?} in {v:?}")));
                }
            }
        }
        cfg.validate()?;
        out.push((v, cfg));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_axes_expand() {
        let base = RunConfig::tiny();
        let g = ablation_variants(&base, "granularity", Some("1,2")).unwrap();
        assert_eq!(g.iter().map(|(_, c)| c.train.encoder.levels).collect::<Vec<_>>(), vec![1, 2]);
        let l = ablation_variants(&base, "loss", None).unwrap();
        assert_eq!(l.len(), 4);
        assert!(!l[0].1.train.loss.domain && !l[0].1.train.loss.clip_part);
        assert!(l[3].1.train.loss.domain && l[3].1.train.loss.clip_part);
        assert!(ablation_variants(&base, "train.tau", None).is_err());
        assert_eq!(ablation_variants(&base, "train.tau", Some("0.1,0.5")).unwrap().len(), 2);
        assert!(ablation_variants(&base, "colour", None).is_err());
        assert!(ablation_variants(&base, "loss", Some("instance+bogus")).is_err());
    }
}
