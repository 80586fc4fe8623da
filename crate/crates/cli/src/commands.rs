use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ski_core::error::SkiError;
use ski_core::experiment::{
    builtin_plan, emit_summary, models_from_checkpoint, run_cell, run_plan, sweep_alpha, Cell, ExperimentPlan, Method,
    RunStatus,
};
use ski_core::kvconfig::KvConfig;
use ski_core::lvlm::{generate_caption, lvlm_checkpoint, lvlm_from_checkpoint, lvlm_single, query_for, LvlmConfig};
use ski_core::params::{Checkpoint, ParameterSet};
use ski_core::synthdata::container::{read_dataset, write_dataset, write_split};
use ski_core::synthdata::{generate_dataset, Dataset, DatasetConfig, Subset};
use ski_core::training::{init_models, RunRecord, TrainConfig};
use ski_core::zseval::{evaluate_fusion_split, evaluate_split, saliency_map, EmbeddingModel, Side};

use crate::{Cli, Command, ConfigArgs, TrainArgs};

/// Bad flags or configuration detected by the front end.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// The error and its causes, skipping causes already quoted by their parent.
pub fn render_error(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<SkiError>() {
            return match e {
                SkiError::Config { .. } | SkiError::InvalidArgument { .. } | SkiError::OutOfVocabulary(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

const DEFAULT_OUT_ROOT: &str = "runs";

fn out_root(cli_root: &Option<PathBuf>) -> PathBuf {
    cli_root.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

fn apply_sets(kv: &mut KvConfig, sets: &[String]) -> Result<()> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("`--set {s}` is not KEY=VALUE")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(())
}

const SECTIONS: [&str; 3] = ["data", "train", "lvlm"];

/// Merged configuration. Keys of known sections outside `sections` are
/// dropped so one file can serve every command; other keys are errors.
fn load_config(args: &ConfigArgs, sections: &[&str]) -> Result<KvConfig> {
    let mut kv = match &args.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::new(),
    };
    apply_sets(&mut kv, &args.sets)?;
    if let Some(seed) = args.seed {
        for s in sections {
            kv.set(format!("{s}.seed"), seed);
        }
    }
    let mut used = KvConfig::new();
    for (k, v) in kv.iter() {
        let top = k.split('.').next().unwrap_or_default();
        if !SECTIONS.contains(&top) || !k.contains('.') {
            return Err(usage(format!("unexpected key `{k}` (sections: {})", SECTIONS.join(", "))));
        }
        if sections.contains(&top) {
            used.set(k, v);
        }
    }
    Ok(used)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let root = cli.out_root;
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::PretrainSkeleton(t) => train(&root, &t, Method::Pretrain, "pretrain-skeleton", &[]),
        Command::AlignSkeletonclip(t) => train(&root, &t, Method::SkeletonClip, "align-skeletonclip", &[]),
        Command::FinetuneVideoclip(t) => train(&root, &t, Method::Finetune, "finetune-videoclip", &[]),
        Command::TrainScd {
            train: t,
            kd_mode,
            distill,
            alpha,
        } => {
            let mut extra = Vec::new();
            if let Some(m) = kd_mode {
                extra.push(("train.loss.kd_mode", m));
            }
            if let Some(d) = distill {
                extra.push(("train.loss.distill", d));
            }
            if let Some(a) = alpha {
                extra.push(("train.loss.alpha", a.to_string()));
            }
            train(&root, &t, Method::Scd, "train-scd", &extra)
        }
        Command::TrainBaseline { train: t, kind } => {
            let method = match kind.as_str() {
                "trimodal" => Method::Trimodal,
                "crossproj" => Method::CrossProj,
                other => return Err(usage(format!("unknown baseline `{other}` (trimodal, crossproj)"))),
            };
            train(&root, &t, method, &format!("train-baseline-{kind}"), &[])
        }
        Command::Eval {
            ckpt,
            data,
            split,
            out,
            saliency,
        } => eval(&ckpt, &data, &split, &out, saliency),
        Command::TrainLvlm {
            train: t,
            use_skeleton,
            captions,
        } => train_lvlm(&root, &t, use_skeleton, captions),
        Command::Caption {
            ckpt,
            video,
            query,
            data,
            max_len,
        } => caption(&ckpt, video, &query, data.as_deref(), max_len),
        Command::InspectCkpt { file } => {
            print!("{}", Checkpoint::load(&file)?.inspect());
            Ok(())
        }
        Command::RunPlan {
            plan,
            builtin,
            seeds,
            sets,
            workers,
            out,
        } => run_plan_cmd(&root, plan.as_deref(), builtin.as_deref(), seeds, &sets, workers, out),
        Command::SweepAlpha {
            config,
            alphas,
            seeds,
            workers,
            out,
        } => {
            let kv = load_config(&config, &["data", "train"])?;
            let cell = cell_from_kv("base", Method::Scd, &kv)?;
            let out = out.unwrap_or_else(|| out_root(&root).join("sweep-alpha"));
            let sweep = sweep_alpha(&cell, &alphas, seeds, &out, workers)?;
            println!("alpha\tunseen_top1_mean\tunseen_top1_std");
            for (a, mu, sd) in &sweep.rows {
                println!("{a}\t{:.2}\t{:.2}", 100.0 * mu, 100.0 * sd);
            }
            println!("table {}", sweep.table.display());
            println!("chart {}", sweep.chart.display());
            Ok(())
        }
        Command::Summary { runs, out } => {
            let s = emit_summary(&runs, &out)?;
            print!("{}", std::fs::read_to_string(&s.table).with_context(|| format!("reading {}", s.table.display()))?);
            Ok(())
        }
    }
}

fn gen_data(args: &ConfigArgs, out: &Path) -> Result<()> {
    let kv = load_config(args, &["data"])?;
    let cfg = DatasetConfig::from_kv(&kv.section("data"))?;
    let data = generate_dataset(&cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_dataset(&data, out)?;
    let split_path = out.with_extension("split");
    write_split(&data.split, &split_path)?;
    println!(
        "{} samples, {} classes (seen {:?}, unseen {:?})",
        data.triplets.len(),
        data.classes.len(),
        data.split.seen_class_ids,
        data.split.unseen_class_ids
    );
    println!("data {}", out.display());
    println!("split {}", split_path.display());
    Ok(())
}

fn cell_from_kv(name: &str, method: Method, kv: &KvConfig) -> Result<Cell> {
    let mut ckv = kv.clone();
    ckv.set("method", method);
    Ok(Cell::from_kv(name, &ckv)?)
}

/// Training commands share one resolved seed for data and training.
fn cell_seed(cell: &Cell, kv: &KvConfig) -> Result<u64> {
    let seed = cell.train.seed;
    if kv.contains("data.seed") && cell.data.seed != seed {
        return Err(usage(format!(
            "data.seed ({}) and train.seed ({seed}) differ; training commands use one seed, set it with --seed",
            cell.data.seed
        )));
    }
    Ok(seed)
}

fn print_eval(dir: &Path) -> Result<()> {
    let record = RunRecord::load(&dir.join("record.jsonl"))?;
    if let Some(e) = record.last("eval") {
        for (k, v) in &e.values {
            println!("{k}\t{v:.4}");
        }
    }
    Ok(())
}

fn train(root: &Option<PathBuf>, args: &TrainArgs, method: Method, verb: &str, extra: &[(&str, String)]) -> Result<()> {
    let mut kv = load_config(&args.config, &["data", "train"])?;
    for (k, v) in extra {
        kv.set(*k, v);
    }
    let cell = cell_from_kv(verb, method, &kv)?;
    let seed = cell_seed(&cell, &kv)?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| out_root(root).join(verb).join(format!("seed-{seed}")));
    let status = run_cell(&cell, seed, &dir)?;
    match status {
        RunStatus::Trained => println!("trained {}", dir.display()),
        RunStatus::Skipped => println!("up to date {}", dir.display()),
    }
    print_eval(&dir)
}

fn samples_for(data: &Dataset, side: Side) -> Vec<&ski_core::synthdata::Triplet> {
    match side {
        Side::Seen => data.subset(Subset::SeenHoldout),
        Side::Unseen => data.subset(Subset::Unseen),
    }
}

fn eval(ckpt_path: &Path, data_path: &Path, split: &str, out: &Path, saliency: usize) -> Result<()> {
    let side: Side = split.parse()?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (method, models, dcfg) = models_from_checkpoint(&ckpt)?;
    let data = read_dataset(data_path)?;
    if data.config != dcfg {
        eprintln!("note: dataset config differs from the one the checkpoint was trained on");
    }
    let report = if method == Method::Fusion {
        evaluate_fusion_split(&models.videoclip, &models.skeletonclip, &data, &data.split, side)?
    } else {
        let scored: &dyn EmbeddingModel = if method.scores_video() {
            &models.videoclip
        } else {
            &models.skeletonclip
        };
        evaluate_split(scored, &data, &data.split, side)?
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write(out, &report.to_json())?;
    println!("{side} top-1 {:.4} over {} samples", report.top1, report.samples);
    println!("report {}", out.display());
    if saliency > 0 {
        if !method.scores_video() {
            return Err(usage(format!("saliency maps need a video-side model, checkpoint method is `{method}`")));
        }
        let dir = out.with_extension("saliency");
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for t in samples_for(&data, side).into_iter().take(saliency) {
            let prompt = data.prompts(&[t.class_id()])?.remove(0);
            let map = saliency_map(&models.videoclip, &t.video, &prompt)?;
            map.write_pgm(&dir.join(format!("{}.pgm", t.sample_id)))?;
            map.write_raw(&dir.join(format!("{}.raw", t.sample_id)))?;
        }
        println!("saliency {}", dir.display());
    }
    Ok(())
}

fn train_lvlm(root: &Option<PathBuf>, args: &TrainArgs, use_skeleton: bool, captions: usize) -> Result<()> {
    let kv = load_config(&args.config, &["data", "train", "lvlm"])?;
    let train = TrainConfig::from_kv(&kv.section("train"))?;
    let dcfg = DatasetConfig::from_kv(&kv.section("data"))?;
    let cfg = LvlmConfig::from_kv(&kv.section("lvlm"))?;
    let variant = if use_skeleton { "with-skeleton" } else { "video-only" };
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| out_root(root).join("train-lvlm").join(variant).join(format!("seed-{}", cfg.seed)));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let data = generate_dataset(&dcfg)?;
    let run = lvlm_single(&data, &train, &cfg, use_skeleton)?;

    let mut config = KvConfig::new();
    config.merge_prefixed("data", &dcfg.to_kv());
    config.merge_prefixed("train", &train.to_kv());
    config.merge_prefixed("lvlm", &cfg.to_kv());
    config.set("use_skeleton", use_skeleton);
    write(&dir.join("config.kv"), &config.canonical())?;
    run.record.save(&dir.join("record.jsonl"))?;
    run.encoder_record.save(&dir.join("encoder.jsonl"))?;

    let mut ckpt = lvlm_checkpoint(&run.model, &cfg, &run.record.fingerprint);
    ckpt.meta.merge_prefixed("data", &dcfg.to_kv());
    ckpt.meta.merge_prefixed("train", &train.to_kv());
    ckpt.params = ParameterSet::merged(&[&ckpt.params, &run.video.params])?;
    ckpt.save(&dir.join("model.ckpt"))?;

    let mut nll = String::from("eval\tnll\ttoken_accuracy\ttokens\tsamples\n");
    let mut row = |name: &str, r: &ski_core::lvlm::NllReport| {
        nll.push_str(&format!("{name}\t{:.6}\t{:.6}\t{}\t{}\n", r.nll, r.token_accuracy, r.tokens, r.samples));
    };
    row("heldout_visual_only", &run.held_visual);
    if let Some(full) = &run.held_full {
        row("heldout_with_skeleton", full);
    }
    write(&dir.join("nll.tsv"), &nll)?;

    let mut text = String::from("sample_id\tquery\tgenerated\treference\n");
    for t in data.triplets.iter().filter(|t| t.holdout).take(captions) {
        let query = query_for(t.sample_id);
        let got = generate_caption(&run.model.lm, &run.model.proj_v, &run.video, &t.video, query, 24)?;
        text.push_str(&format!("{}\t{query}\t{got}\t{}\n", t.sample_id, t.caption));
    }
    write(&dir.join("captions.txt"), &text)?;
    print!("{nll}");
    println!("run {}", dir.display());
    Ok(())
}

fn caption(ckpt_path: &Path, sample_id: u64, query: &str, data_path: Option<&Path>, max_len: usize) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (model, _) = lvlm_from_checkpoint(&ckpt)?;
    let train = TrainConfig::from_kv(&ckpt.meta.section("train")).context("checkpoint lacks train.* metadata")?;
    let dcfg = DatasetConfig::from_kv(&ckpt.meta.section("data")).context("checkpoint lacks data.* metadata")?;
    let data = match data_path {
        Some(p) => read_dataset(p)?,
        None => generate_dataset(&dcfg)?,
    };
    let Some(t) = data.triplets.iter().find(|t| t.sample_id == sample_id) else {
        bail!(UsageError(format!("no sample with id {sample_id} (ids 0..{})", data.triplets.len())));
    };
    let mut video = init_models(&data.config, &data.split, &train)?.videoclip.video;
    video.params.assign_from(&ckpt.params).context("checkpoint lacks the video encoder")?;
    println!("{}", generate_caption(&model.lm, &model.proj_v, &video, &t.video, query, max_len)?);
    Ok(())
}

fn run_plan_cmd(
    root: &Option<PathBuf>,
    plan_path: Option<&Path>,
    builtin: Option<&str>,
    seeds: Vec<u64>,
    sets: &[String],
    workers: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut plan = match (plan_path, builtin) {
        (Some(p), None) => ExperimentPlan::load(p)?,
        (None, Some(name)) => builtin_plan(name, seeds, DEFAULT_OUT_ROOT)?,
        _ => return Err(usage("give a plan file or --builtin <name>")),
    };
    if !sets.is_empty() {
        let mut overrides = KvConfig::new();
        apply_sets(&mut overrides, sets)?;
        let mut kv = plan.to_kv();
        for c in &plan.cells {
            kv.merge_prefixed(&format!("cell.{}", c.name), &overrides);
        }
        plan = ExperimentPlan::from_kv(&kv)?;
    }
    plan.out = match (out, root) {
        (Some(o), _) => o,
        (None, Some(r)) => r.join(&plan.name),
        (None, None) if builtin.is_some() => PathBuf::from(DEFAULT_OUT_ROOT).join(&plan.name),
        (None, None) => plan.out,
    };
    if let Some(w) = workers {
        plan.workers = w.max(1);
    }
    let outcome = run_plan(&plan)?;
    for r in &outcome.runs {
        let status = match r.status {
            RunStatus::Trained => "trained",
            RunStatus::Skipped => "skipped",
        };
        println!("{status}\t{}", r.dir.display());
    }
    print!(
        "{}",
        std::fs::read_to_string(&outcome.summary.table).with_context(|| format!("reading {}", outcome.summary.table.display()))?
    );
    Ok(())
}
