//! Experiment plans: named cells run over a seed list into resumable run
//! directories, with summary tables, an α sweep and SVG charts.
//!
//! Run directory layout (`<out>/<cell>/seed-<s>/`):
//! - `config.kv`: the resolved cell configuration for this seed
//! - `fingerprint`: hash of the semantic fields of `config.kv`
//! - `model.ckpt`: parameters of the evaluated model(s)
//! - `record.jsonl`: training lines plus one `eval` line; written last
//! - `timing.json`: wall-clock seconds (kept out of the record)

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::chart::{BarChart, ChartPoint, LineChart};
use crate::error::{Result, SkiError};
use crate::kvconfig::KvConfig;
use crate::losses::{DistillKind, KdMode};
use crate::params::{Checkpoint, ParameterSet};
use crate::synthdata::{generate_dataset, Dataset, DatasetConfig, Subset};
use crate::training::{
    baseline_pipeline, finetune_videoclip, independent_pipeline, init_models, prepare_skeletonclip, pretrain_skeleton, scd_pipeline, videoclip_pipeline,
    BaselineKind, EpochRecord, Models, PipelineOutput, RunRecord, TrainConfig, TrainData,
};
use crate::zseval::{alignment_report, evaluate_fusion_split, evaluate_split, harmonic_mean, EmbeddingModel, Side};

/// What a cell trains and which model it scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// SCD; scores the video side.
    Scd,
    /// Fine-tuned VideoCLIP on the SCD schedule; scores the video side.
    VideoClip,
    /// Tri-modal alignment baseline; scores the skeleton side.
    Trimodal,
    /// Cross-projection baseline; scores the skeleton side.
    CrossProj,
    /// Independently trained VideoCLIP and SkeletonCLIP, scored by
    /// averaging their similarity rows.
    Fusion,
    /// SkeletonCLIP alone; scores the skeleton side.
    SkeletonClip,
    /// One VideoCLIP fine-tuning phase; scores the video side.
    Finetune,
    /// Skeleton classifier pretraining only; the checkpoint also holds the
    /// classifier head. Scores the skeleton side against the frozen text
    /// encoder, which is near chance by construction.
    Pretrain,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Scd,
        Method::VideoClip,
        Method::Trimodal,
        Method::CrossProj,
        Method::Fusion,
        Method::SkeletonClip,
        Method::Finetune,
        Method::Pretrain,
    ];

    /// Whether the scored model is the video-side dual encoder.
    pub fn scores_video(self) -> bool {
        matches!(self, Method::Scd | Method::VideoClip | Method::Fusion | Method::Finetune)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Scd => "scd",
            Method::VideoClip => "videoclip",
            Method::Trimodal => "trimodal",
            Method::CrossProj => "crossproj",
            Method::Fusion => "fusion",
            Method::SkeletonClip => "skeletonclip",
            Method::Finetune => "finetune",
            Method::Pretrain => "pretrain",
        }
    }
}

impl FromStr for Method {
    type Err = SkiError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SkiError::arg("method", format!("unknown method `{s}`")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub sides: Vec<Side>,
    /// Also report mean prompt/sample cosine on the unseen classes.
    pub alignment: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            sides: vec![Side::Unseen, Side::Seen],
            alignment: true,
        }
    }
}

impl EvalSpec {
    fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(&["sides", "alignment"], "eval")?;
        let d = EvalSpec::default();
        let sides = kv.get_list::<Side>("sides")?.unwrap_or(d.sides);
        if sides.is_empty() {
            return Err(SkiError::config("eval.sides", "at least one side"));
        }
        Ok(EvalSpec {
            sides,
            alignment: kv.get_or("alignment", d.alignment)?,
        })
    }

    fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("sides", self.sides.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        kv.set("alignment", self.alignment);
        kv
    }
}

/// One fully resolved configuration of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    /// Row label in summaries; not part of the fingerprint.
    pub label: String,
    pub method: Method,
    pub train: TrainConfig,
    pub data: DatasetConfig,
    pub eval: EvalSpec,
}

fn check_name(what: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(SkiError::config(what, format!("`{name}` must be non-empty [A-Za-z0-9._-]")))
    }
}

impl Cell {
    pub fn new(name: &str, method: Method, train: TrainConfig, data: DatasetConfig) -> Result<Self> {
        check_name("cell", name)?;
        Ok(Cell {
            name: name.to_string(),
            label: name.to_string(),
            method,
            train,
            data,
            eval: EvalSpec::default(),
        })
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    /// Train and data configs with both seeds set to `seed`.
    pub fn resolved(&self, seed: u64) -> (TrainConfig, DatasetConfig) {
        let mut t = self.train.clone();
        let mut d = self.data.clone();
        t.seed = seed;
        d.seed = seed;
        (t, d)
    }

    /// Semantic configuration for `seed` (no label).
    pub fn semantic_kv(&self, seed: u64) -> KvConfig {
        let (t, d) = self.resolved(seed);
        let mut kv = KvConfig::new();
        kv.set("method", self.method);
        kv.merge_prefixed("train", &t.to_kv());
        kv.merge_prefixed("data", &d.to_kv());
        kv.merge_prefixed("eval", &self.eval.to_kv());
        kv
    }

    pub fn fingerprint(&self, seed: u64) -> String {
        self.semantic_kv(seed).fingerprint()
    }

    /// Inverse of [`Cell::semantic_kv`] plus an optional `label`.
    pub fn from_kv(name: &str, kv: &KvConfig) -> Result<Self> {
        check_name("cell", name)?;
        for k in kv.keys() {
            let ok = ["method", "label"].contains(&k) || ["train.", "data.", "eval."].iter().any(|p| k.starts_with(p));
            if !ok {
                return Err(SkiError::config(format!("cell.{name}.{k}"), "unknown key"));
            }
        }
        let method: Method = kv
            .get("method")?
            .ok_or_else(|| SkiError::config(format!("cell.{name}.method"), "required"))?;
        Ok(Cell {
            name: name.to_string(),
            label: kv.get_str("label").unwrap_or(name).to_string(),
            method,
            train: TrainConfig::from_kv(&kv.section("train"))?,
            data: DatasetConfig::from_kv(&kv.section("data"))?,
            eval: EvalSpec::from_kv(&kv.section("eval"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub name: String,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Runs executed concurrently (threads, disjoint directories).
    pub workers: usize,
}

const PLAN_KEYS: [&str; 5] = ["name", "seeds", "out", "workers", "cells"];

impl ExperimentPlan {
    pub fn new(name: &str, cells: Vec<Cell>, seeds: Vec<u64>, out: impl Into<PathBuf>) -> Result<Self> {
        check_name("plan.name", name)?;
        if cells.is_empty() {
            return Err(SkiError::config("plan.cells", "at least one cell"));
        }
        if seeds.is_empty() {
            return Err(SkiError::config("plan.seeds", "at least one seed"));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &cells {
            check_name("cell", &c.name)?;
            if !names.insert(c.name.as_str()) {
                return Err(SkiError::config("plan.cells", format!("duplicate cell `{}`", c.name)));
            }
        }
        let mut uniq = seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != seeds.len() {
            return Err(SkiError::config("plan.seeds", "duplicate seed"));
        }
        Ok(ExperimentPlan {
            name: name.to_string(),
            cells,
            seeds,
            out: out.into(),
            workers: 1,
        })
    }

    /// Plan file format: `plan.*` keys, shared `base.{train,data,eval}.*`
    /// defaults, and per-cell `cell.<name>.*` overrides including the
    /// required `method`. Every cell is resolved here.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        for k in kv.keys() {
            if !(k.starts_with("plan.") || k.starts_with("base.") || k.starts_with("cell.")) {
                return Err(SkiError::config(k, "unknown key"));
            }
        }
        let plan = kv.section("plan");
        plan.reject_unknown(&PLAN_KEYS, "plan")?;
        let name: String = plan.get("name")?.ok_or_else(|| SkiError::config("plan.name", "required"))?;
        let seeds: Vec<u64> = plan.get_list("seeds")?.ok_or_else(|| SkiError::config("plan.seeds", "required"))?;
        let order: Vec<String> = plan.get_list("cells")?.ok_or_else(|| SkiError::config("plan.cells", "required"))?;
        let base = kv.section("base");
        for k in base.keys() {
            if !["train.", "data.", "eval."].iter().any(|p| k.starts_with(p)) {
                return Err(SkiError::config(format!("base.{k}"), "unknown key"));
            }
        }
        let all_cells = kv.section("cell");
        for k in all_cells.keys() {
            let n = k.split('.').next().unwrap_or_default();
            if !order.iter().any(|o| o == n) {
                return Err(SkiError::config(format!("cell.{k}"), format!("cell `{n}` not listed in plan.cells")));
            }
        }
        let cells = order
            .iter()
            .map(|n| {
                let mut ckv = base.clone();
                ckv.overlay(&all_cells.section(n));
                Cell::from_kv(n, &ckv)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut p = ExperimentPlan::new(&name, cells, seeds, plan.get_str("out").unwrap_or("runs"))?;
        p.workers = plan.get_or("workers", 1usize)?.max(1);
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentPlan::from_kv(&KvConfig::load(path)?)
    }

    /// Fully resolved plan file.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("plan.name", &self.name);
        kv.set("plan.seeds", self.seeds.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        kv.set("plan.out", self.out.display());
        kv.set("plan.workers", self.workers);
        kv.set("plan.cells", self.cells.iter().map(|c| c.name.clone()).collect::<Vec<_>>().join(","));
        for c in &self.cells {
            let mut ckv = KvConfig::new();
            ckv.set("method", c.method);
            ckv.set("label", &c.label);
            ckv.merge_prefixed("train", &c.train.to_kv());
            ckv.merge_prefixed("data", &c.data.to_kv());
            ckv.merge_prefixed("eval", &c.eval.to_kv());
            kv.merge_prefixed(&format!("cell.{}", c.name), &ckv);
        }
        kv
    }

    pub fn run_dirs(&self) -> Vec<PathBuf> {
        self.cells
            .iter()
            .flat_map(|c| self.seeds.iter().map(move |&s| run_dir(&self.out, &c.name, s)))
            .collect()
    }
}

pub fn run_dir(out: &Path, cell: &str, seed: u64) -> PathBuf {
    out.join(cell).join(format!("seed-{seed}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Trained,
    /// A completed run with the same fingerprint already existed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub cell: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub status: RunStatus,
}

/// Trained models and record of one cell run, before persistence.
pub struct CellResult {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

fn io_err(path: &Path, what: &str) -> impl FnOnce(std::io::Error) -> SkiError {
    let ctx = format!("{what} {}", path.display());
    move |e| SkiError::io(ctx, e)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp, "writing"))?;
    std::fs::rename(&tmp, path).map_err(io_err(path, "renaming to"))
}

fn eval_line(cell: &Cell, models: &Models, data: &Dataset) -> Result<EpochRecord> {
    let mut values = BTreeMap::new();
    let video: &dyn EmbeddingModel = &models.videoclip;
    let skeleton: &dyn EmbeddingModel = &models.skeletonclip;
    let scored = if cell.method.scores_video() { video } else { skeleton };
    for &side in &cell.eval.sides {
        let top1 = if cell.method == Method::Fusion {
            evaluate_fusion_split(&models.videoclip, &models.skeletonclip, data, &data.split, side)?.top1
        } else {
            evaluate_split(scored, data, &data.split, side)?.top1
        };
        values.insert(format!("{side}_top1"), top1);
    }
    if let (Some(&u), Some(&s)) = (values.get("unseen_top1"), values.get("seen_top1")) {
        if u > 0.0 && s > 0.0 {
            values.insert("harmonic".into(), harmonic_mean(&[s, u])?);
        }
    }
    if cell.eval.alignment {
        let unseen = data.split.unseen_class_ids.clone();
        values.insert("alignment_unseen".into(), alignment_report(scored, data, Subset::Unseen, &unseen)?.overall_mean);
    }
    Ok(EpochRecord {
        phase: "eval".into(),
        epoch: 0,
        values,
    })
}

fn scored_params(method: Method, models: &Models) -> Result<ParameterSet> {
    let v = &models.videoclip;
    let s = &models.skeletonclip;
    match method {
        Method::Scd | Method::VideoClip | Method::Finetune => ParameterSet::merged(&[&v.video.params, &v.text.params]),
        Method::Trimodal | Method::CrossProj | Method::SkeletonClip => {
            ParameterSet::merged(&[&s.skeleton.params, &s.text.params])
        }
        Method::Pretrain => ParameterSet::merged(&[&s.skeleton.params, &s.text.params, &models.head.params]),
        Method::Fusion => ParameterSet::merged(&[&v.video.params, &v.text.params, &s.skeleton.params, &s.text.params]),
    }
}

/// Trains and evaluates one cell for one seed without touching the disk.
pub fn execute_cell(cell: &Cell, seed: u64) -> Result<CellResult> {
    let (train, dcfg) = cell.resolved(seed);
    let data = generate_dataset(&dcfg)?;
    let out: PipelineOutput = match cell.method {
        Method::Scd => scd_pipeline(&data, &train)?,
        Method::VideoClip => videoclip_pipeline(&data, &train)?,
        Method::Trimodal => baseline_pipeline(BaselineKind::Trimodal, &data, &train)?,
        Method::CrossProj => baseline_pipeline(BaselineKind::CrossProj, &data, &train)?,
        Method::Fusion => independent_pipeline(&data, &train)?,
        Method::SkeletonClip | Method::Finetune | Method::Pretrain => {
            let td = TrainData::seen_train(&data)?;
            let mut models = init_models(&data.config, &data.split, &train)?;
            let mut record = RunRecord::new(String::new(), seed);
            match cell.method {
                Method::SkeletonClip => prepare_skeletonclip(&mut models, &td, &train, &mut record)?,
                Method::Finetune => finetune_videoclip(&mut models.videoclip, &td, &train, &mut record)?,
                _ => pretrain_skeleton(&mut models.skeletonclip.skeleton, &mut models.head, &td, &train, &mut record)?,
            }
            PipelineOutput { models, record }
        }
    };
    let fp = cell.fingerprint(seed);
    let mut record = RunRecord::new(fp.clone(), seed);
    for l in out.record.lines() {
        record.push(l.clone())?;
    }
    record.push(eval_line(cell, &out.models, &data)?)?;
    let checkpoint = Checkpoint {
        fingerprint: fp,
        meta: cell.semantic_kv(seed),
        params: scored_params(cell.method, &out.models)?,
    };
    Ok(CellResult { record, checkpoint })
}

/// Rebuilds the scored models of a cell checkpoint. Arrays absent from the
/// checkpoint keep their seeded initialization.
pub fn models_from_checkpoint(ckpt: &Checkpoint) -> Result<(Method, Models, DatasetConfig)> {
    let method: Method = ckpt
        .meta
        .get("method")?
        .ok_or_else(|| SkiError::config("method", "missing from checkpoint metadata"))?;
    let train = TrainConfig::from_kv(&ckpt.meta.section("train"))?;
    let dcfg = DatasetConfig::from_kv(&ckpt.meta.section("data"))?;
    let split = crate::synthdata::make_splits(
        &crate::synthdata::class_catalog(&dcfg)?.iter().map(|c| c.class_id).collect::<Vec<_>>(),
        dcfg.seen_ratio,
        dcfg.seed,
    )?;
    let mut models = init_models(&dcfg, &split, &train)?;
    let has = |ps: &ParameterSet| ps.iter().next().is_some_and(|p| ckpt.params.get(&p.name).is_some());
    let v = &mut models.videoclip;
    let s = &mut models.skeletonclip;
    for ps in [
        &mut v.video.params,
        &mut v.text.params,
        &mut s.skeleton.params,
        &mut s.text.params,
        &mut models.head.params,
    ] {
        if has(ps) {
            ps.assign_from(&ckpt.params)?;
        }
    }
    if matches!(method, Method::Trimodal | Method::CrossProj) {
        // baselines score the skeleton against the video-side text encoder
        s.text = v.text.clone();
    }
    Ok((method, models, dcfg))
}

fn completed(dir: &Path, fp: &str, canonical: &str) -> Result<bool> {
    let fp_path = dir.join("fingerprint");
    if !fp_path.exists() || !dir.join("record.jsonl").exists() {
        return Ok(false);
    }
    let stored = std::fs::read_to_string(&fp_path).map_err(io_err(&fp_path, "reading"))?;
    let cfg_path = dir.join("config.kv");
    let stored_cfg = std::fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path, "reading"))?;
    let stored_cfg = KvConfig::parse(&stored_cfg)?;
    let mut semantic = stored_cfg.clone();
    semantic.remove("label");
    if stored.trim() != fp {
        return Err(SkiError::config(
            dir.display().to_string(),
            format!("holds a run with fingerprint {} but the plan resolves to {fp}", stored.trim()),
        ));
    }
    if semantic.canonical() != canonical {
        return Err(SkiError::config(dir.display().to_string(), "fingerprint collision with a differing config"));
    }
    Ok(true)
}

/// Runs one cell/seed into `dir` unless a completed run with the same
/// fingerprint is already there.
pub fn run_cell(cell: &Cell, seed: u64, dir: &Path) -> Result<RunStatus> {
    let fp = cell.fingerprint(seed);
    let semantic = cell.semantic_kv(seed);
    if completed(dir, &fp, &semantic.canonical())? {
        return Ok(RunStatus::Skipped);
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir, "creating"))?;
    let start = Instant::now();
    let result = execute_cell(cell, seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let mut cfg = semantic;
    cfg.set("label", &cell.label);
    write_atomic(&dir.join("config.kv"), cfg.canonical().as_bytes())?;
    write_atomic(&dir.join("fingerprint"), format!("{fp}\n").as_bytes())?;
    write_atomic(&dir.join("model.ckpt"), &result.checkpoint.to_bytes())?;
    let timing = serde_json::json!({ "seconds": seconds });
    write_atomic(&dir.join("timing.json"), format!("{timing}\n").as_bytes())?;
    write_atomic(&dir.join("record.jsonl"), result.record.to_jsonl().as_bytes())?;
    Ok(RunStatus::Trained)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub runs: Vec<RunOutcome>,
    pub summary: Summary,
}

/// Runs every (cell, seed) pair, then writes `summary.tsv` and
/// `summary.svg` under the plan's output root.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutcome> {
    std::fs::create_dir_all(&plan.out).map_err(io_err(&plan.out, "creating"))?;
    write_atomic(&plan.out.join("plan.kv"), plan.to_kv().canonical().as_bytes())?;
    let jobs: Vec<(&Cell, u64)> = plan.cells.iter().flat_map(|c| plan.seeds.iter().map(move |&s| (c, s))).collect();
    let results: Mutex<Vec<Option<Result<RunStatus>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..plan.workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (cell, seed) = jobs[i];
                let r = run_cell(cell, seed, &run_dir(&plan.out, &cell.name, seed));
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut runs = Vec::with_capacity(jobs.len());
    for ((cell, seed), r) in jobs.iter().zip(results.into_inner().expect("no poisoned workers")) {
        let status = r.expect("every job ran")?;
        runs.push(RunOutcome {
            cell: cell.name.clone(),
            seed: *seed,
            dir: run_dir(&plan.out, &cell.name, *seed),
            status,
        });
    }
    let summary = emit_summary(&plan.run_dirs(), &plan.out)?;
    Ok(PlanOutcome { runs, summary })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: String,
    pub label: String,
    pub method: String,
    pub seeds: Vec<u64>,
    /// Per eval field: values in seed order.
    pub values: BTreeMap<String, Vec<f64>>,
    /// Run paths relative to the summary directory.
    pub provenance: Vec<String>,
}

impl SummaryRow {
    pub fn mean(&self, field: &str) -> Option<f64> {
        self.values.get(field).map(|v| mean_std(v).0)
    }

    pub fn std(&self, field: &str) -> Option<f64> {
        self.values.get(field).map(|v| mean_std(v).1)
    }

    /// Harmonic mean of the seen and unseen mean top-1, when both exist.
    pub fn harmonic(&self) -> Option<f64> {
        let (s, u) = (self.mean("seen_top1")?, self.mean("unseen_top1")?);
        harmonic_mean(&[s, u]).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub table: PathBuf,
    pub chart: PathBuf,
}

impl Summary {
    pub fn row(&self, cell: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.cell == cell)
    }
}

const METRICS: [&str; 3] = ["unseen_top1", "seen_top1", "alignment_unseen"];

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

/// Name of a run directory: the parent's name for `seed-<s>` directories,
/// the directory's own name otherwise.
fn run_name(dir: &Path) -> Result<String> {
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned());
    let own = name(dir).ok_or_else(|| SkiError::arg("run_dirs", format!("{} has no name", dir.display())))?;
    if own.starts_with("seed-") {
        if let Some(parent) = dir.parent().and_then(name) {
            return Ok(parent);
        }
    }
    Ok(own)
}

/// Groups run directories by name and seed-free configuration (in order
/// of first appearance) and writes `summary.tsv` plus `summary.svg` into
/// `out`. Accuracies are reported in percent.
pub fn emit_summary(run_dirs: &[PathBuf], out: &Path) -> Result<Summary> {
    if run_dirs.is_empty() {
        return Err(SkiError::arg("run_dirs", "no runs to summarize"));
    }
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut keys: Vec<(String, String)> = Vec::new();
    for dir in run_dirs {
        let cell = run_name(dir)?;
        let rec_path = dir.join("record.jsonl");
        let record = RunRecord::load(&rec_path)?;
        let cfg_path = dir.join("config.kv");
        let cfg = KvConfig::load(&cfg_path)?;
        let mut group = cfg.clone();
        for k in ["label", "train.seed", "data.seed"] {
            group.remove(k);
        }
        let group = group.fingerprint();
        let eval = record.last("eval").ok_or_else(|| SkiError::Corrupt {
            path: rec_path.clone(),
            reason: "no eval line".into(),
        })?;
        let idx = match keys.iter().position(|k| *k == (cell.clone(), group.clone())) {
            Some(i) => i,
            None => {
                keys.push((cell.clone(), group));
                rows.push(SummaryRow {
                    cell: cell.clone(),
                    label: cfg.get_str("label").unwrap_or(&cell).to_string(),
                    method: cfg.get_str("method").unwrap_or("-").to_string(),
                    seeds: Vec::new(),
                    values: BTreeMap::new(),
                    provenance: Vec::new(),
                });
                rows.len() - 1
            }
        };
        let row = &mut rows[idx];
        row.seeds.push(record.seed);
        for m in METRICS {
            if let Some(v) = eval.value(m) {
                row.values.entry(m.to_string()).or_default().push(v);
            }
        }
        row.provenance.push(format!("{}#eval", relative(&rec_path, out)));
    }
    for r in &rows {
        if let Some((k, v)) = r.values.iter().find(|(_, v)| v.len() != r.seeds.len()) {
            return Err(SkiError::arg("run_dirs", format!("cell `{}` has `{k}` in {} of {} runs", r.cell, v.len(), r.seeds.len())));
        }
    }

    let mut tsv = String::from("cell\tlabel\tmethod\tseeds");
    for m in METRICS {
        tsv.push_str(&format!("\t{m}_mean\t{m}_std"));
    }
    tsv.push_str("\tharmonic\tprovenance\n");
    let pct = |m: &str| m.ends_with("_top1");
    for r in &rows {
        tsv.push_str(&format!("{}\t{}\t{}\t{}", r.cell, r.label, r.method, r.seeds.len()));
        for m in METRICS {
            match (r.mean(m), r.std(m)) {
                (Some(mu), Some(sd)) if pct(m) => tsv.push_str(&format!("\t{:.2}\t{:.2}", 100.0 * mu, 100.0 * sd)),
                (Some(mu), Some(sd)) => tsv.push_str(&format!("\t{mu:.4}\t{sd:.4}")),
                _ => tsv.push_str("\t-\t-"),
            }
        }
        match r.harmonic() {
            Some(h) => tsv.push_str(&format!("\t{:.2}", 100.0 * h)),
            None => tsv.push_str("\t-"),
        }
        tsv.push_str(&format!("\t{}\n", r.provenance.join(";")));
    }
    std::fs::create_dir_all(out).map_err(io_err(out, "creating"))?;
    let table = out.join("summary.tsv");
    write_atomic(&table, tsv.as_bytes())?;

    let chart = out.join("summary.svg");
    let bars: Vec<(String, f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.label.clone(), 100.0 * r.mean("unseen_top1")?, 100.0 * r.std("unseen_top1")?)))
        .collect();
    if !bars.is_empty() {
        let svg = BarChart {
            title: "Unseen-class top-1".into(),
            y_label: "top-1 (%)".into(),
            bars,
        }
        .render()?;
        write_atomic(&chart, svg.as_bytes())?;
    }
    Ok(Summary { rows, table, chart })
}

/// Reads a `summary.tsv` back as `(header, rows)` of raw fields.
pub fn read_summary(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path, "reading"))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| SkiError::Corrupt {
            path: path.to_path_buf(),
            reason: "empty summary".into(),
        })?
        .split('\t')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split('\t').map(str::to_string).collect()).collect();
    Ok((header, rows))
}

fn alpha_name(alpha: f64) -> String {
    format!("alpha-{alpha}")
}

/// One SCD cell per α over a base SCD cell.
pub fn alpha_plan(base: &Cell, alphas: &[f64], seeds: Vec<u64>, out: impl Into<PathBuf>) -> Result<ExperimentPlan> {
    if alphas.is_empty() {
        return Err(SkiError::arg("alphas", "empty list"));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(SkiError::arg("alphas", format!("{a} is not a non-negative number")));
    }
    let cells = alphas
        .iter()
        .map(|&a| {
            let mut c = base.clone();
            c.name = alpha_name(a);
            c.label = format!("α={a}");
            c.method = Method::Scd;
            c.train.loss.alpha = a;
            c
        })
        .collect();
    ExperimentPlan::new("alpha-sweep", cells, seeds, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub plan: PlanOutcome,
    /// `(alpha, mean unseen top-1, std)` in list order.
    pub rows: Vec<(f64, f64, f64)>,
    pub table: PathBuf,
    pub chart: PathBuf,
}

/// Axis coordinate for α on a log scale; 0 sits one decade left of the
/// smallest positive α.
pub fn alpha_axis(alpha: f64, alphas: &[f64]) -> f64 {
    if alpha > 0.0 {
        return alpha.log10();
    }
    let min_pos = alphas.iter().copied().filter(|a| *a > 0.0).fold(f64::INFINITY, f64::min);
    if min_pos.is_finite() {
        min_pos.log10() - 1.0
    } else {
        0.0
    }
}

/// Runs [`alpha_plan`] and writes `alpha.tsv` and `alpha.svg` (log-scaled
/// α axis) next to the plan summary.
pub fn sweep_alpha(base: &Cell, alphas: &[f64], seeds: Vec<u64>, out: &Path, workers: usize) -> Result<SweepOutcome> {
    let mut plan = alpha_plan(base, alphas, seeds, out)?;
    plan.workers = workers.max(1);
    let outcome = run_plan(&plan)?;
    let mut rows = Vec::with_capacity(alphas.len());
    let mut tsv = String::from("alpha\tunseen_top1_mean\tunseen_top1_std\tseeds\tprovenance\n");
    for &a in alphas {
        let r = outcome
            .summary
            .row(&alpha_name(a))
            .ok_or_else(|| SkiError::Contract(format!("missing sweep row for α={a}")))?;
        let (mu, sd) = (r.mean("unseen_top1").unwrap_or(f64::NAN), r.std("unseen_top1").unwrap_or(f64::NAN));
        rows.push((a, mu, sd));
        tsv.push_str(&format!("{a}\t{:.2}\t{:.2}\t{}\t{}\n", 100.0 * mu, 100.0 * sd, r.seeds.len(), r.provenance.join(";")));
    }
    let table = out.join("alpha.tsv");
    write_atomic(&table, tsv.as_bytes())?;
    let mut points: Vec<ChartPoint> = rows
        .iter()
        .map(|&(a, mu, _)| ChartPoint {
            u: alpha_axis(a, alphas),
            label: format!("{a}"),
            y: 100.0 * mu,
        })
        .collect();
    points.sort_by(|p, q| p.u.total_cmp(&q.u));
    let svg = LineChart {
        title: "Unseen-class top-1 vs distillation weight".into(),
        x_label: "α (log scale)".into(),
        y_label: "top-1 (%)".into(),
        x_scale: "log10",
        points,
    }
    .render()?;
    let chart = out.join("alpha.svg");
    write_atomic(&chart, svg.as_bytes())?;
    Ok(SweepOutcome {
        plan: outcome,
        rows,
        table,
        chart,
    })
}

/// Names accepted by [`builtin_plan`].
pub const BUILTIN_PLANS: [&str; 5] = ["table1", "kd-variants", "loss-variants", "text-freeze", "pretraining"];

/// Ready-made plans over default configs: the alignment/fusion baselines
/// table, the four KD variants, the three distillation losses, frozen vs
/// trainable skeleton-side text encoder, and the pretraining matrix.
pub fn builtin_plan(name: &str, seeds: Vec<u64>, out: impl Into<PathBuf>) -> Result<ExperimentPlan> {
    let t = TrainConfig::default();
    let d = DatasetConfig::default();
    let cell = |n: &str, m: Method, train: TrainConfig, label: &str| Cell::new(n, m, train, d.clone()).map(|c| c.with_label(label));
    let with_loss = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = t.clone();
        f(&mut c);
        c
    };
    let cells = match name {
        "table1" => vec![
            cell("trimodal", Method::Trimodal, t.clone(), "Tri-modal alignment")?,
            cell("crossproj", Method::CrossProj, t.clone(), "Cross-projection alignment")?,
            cell("fusion", Method::Fusion, t.clone(), "VideoCLIP + SkeletonCLIP fusion")?,
            cell("videoclip", Method::VideoClip, t.clone(), "VideoCLIP")?,
            cell("scd", Method::Scd, t.clone(), "SCD (online)")?,
        ],
        "kd-variants" => vec![
            cell(
                "feature-no-proj",
                Method::Scd,
                with_loss(&|c| c.loss.kd_mode = KdMode::FeatureNoProj),
                "Feature-level KD w/o Projection",
            )?,
            cell(
                "feature-proj",
                Method::Scd,
                with_loss(&|c| c.loss.kd_mode = KdMode::FeatureProj),
                "Feature-level KD w Projection",
            )?,
            cell("offline", Method::Scd, with_loss(&|c| c.loss.kd_mode = KdMode::Offline), "Offline KD")?,
            cell("online", Method::Scd, with_loss(&|c| c.loss.kd_mode = KdMode::Online), "Online KD")?,
        ],
        "loss-variants" => vec![
            cell("mse", Method::Scd, with_loss(&|c| c.loss.distill = DistillKind::Mse), "MSE")?,
            cell("kl", Method::Scd, with_loss(&|c| c.loss.distill = DistillKind::Kl), "KL divergence")?,
            cell(
                "contrastive",
                Method::Scd,
                with_loss(&|c| c.loss.distill = DistillKind::Contrastive),
                "Contrastive",
            )?,
        ],
        "text-freeze" => vec![
            cell("frozen-text", Method::Scd, with_loss(&|c| c.freeze_text_skeleton = true), "Frozen text encoder")?,
            cell(
                "trainable-text",
                Method::Scd,
                with_loss(&|c| c.freeze_text_skeleton = false),
                "Trainable text encoder",
            )?,
        ],
        "pretraining" => [("none", false, false), ("skeletonclip", true, false), ("videoclip", false, true), ("both", true, true)]
            .iter()
            .map(|&(n, s, v)| {
                let c = with_loss(&|c| {
                    c.pretrain_skeletonclip = s;
                    c.pretrain_videoclip = v;
                });
                cell(n, Method::Scd, c, n)
            })
            .collect::<Result<Vec<_>>>()?,
        other => {
            return Err(SkiError::arg(
                "plan",
                format!("unknown built-in plan `{other}` (known: {})", BUILTIN_PLANS.join(", ")),
            ))
        }
    };
    ExperimentPlan::new(name, cells, seeds, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_file_round_trips_and_resolves_cells() {
        let text = "plan.name = demo\nplan.seeds = 1,2\nplan.cells = a,b\nbase.train.epochs_scd = 3\n\
                    cell.a.method = scd\ncell.a.train.loss.alpha = 0.5\ncell.b.method = videoclip\ncell.b.label = Base\n";
        let plan = ExperimentPlan::from_kv(&KvConfig::parse(text).unwrap()).unwrap();
        assert_eq!(plan.cells.len(), 2);
        assert_eq!(plan.cells[0].train.loss.alpha, 0.5);
        assert_eq!(plan.cells[1].train.epochs_scd, 3);
        assert_eq!(plan.cells[1].label, "Base");
        let again = ExperimentPlan::from_kv(&plan.to_kv()).unwrap();
        assert_eq!(again, plan);
    }

    #[test]
    fn plan_rejects_duplicates_and_strays() {
        let dup = "plan.name = d\nplan.seeds = 1\nplan.cells = a,a\ncell.a.method = scd\n";
        assert!(ExperimentPlan::from_kv(&KvConfig::parse(dup).unwrap()).is_err());
        let stray = "plan.name = d\nplan.seeds = 1\nplan.cells = a\ncell.a.method = scd\ncell.z.method = scd\n";
        assert!(ExperimentPlan::from_kv(&KvConfig::parse(stray).unwrap()).is_err());
        let bad = "plan.name = d\nplan.seeds = 1\nplan.cells = a\ncell.a.method = nope\n";
        assert!(ExperimentPlan::from_kv(&KvConfig::parse(bad).unwrap()).is_err());
    }

    #[test]
    fn fingerprint_ignores_label_and_tracks_semantics() {
        let a = base_cell();
        let b = a.clone().with_label("other");
        assert_eq!(a.fingerprint(1), b.fingerprint(1));
        assert_ne!(a.fingerprint(1), a.fingerprint(2));
        let mut c = a.clone();
        c.train.loss.alpha = 2.0;
        assert_ne!(a.fingerprint(1), c.fingerprint(1));
    }

    #[test]
    fn harmonic_column_uses_seen_and_unseen_means() {
        let row = SummaryRow {
            cell: "x".into(),
            label: "x".into(),
            method: "scd".into(),
            seeds: vec![1],
            values: [("unseen_top1".to_string(), vec![0.52]), ("seen_top1".to_string(), vec![0.775])].into(),
            provenance: vec![],
        };
        assert!((100.0 * row.harmonic().unwrap() - 62.2).abs() < 0.05);
    }

    fn base_cell() -> Cell {
        Cell::new("b", Method::Scd, TrainConfig::default(), DatasetConfig::default()).unwrap()
    }

    #[test]
    fn alpha_zero_sits_a_decade_left() {
        let alphas = [0.0, 0.01, 0.1, 1.0, 10.0];
        assert!((alpha_axis(0.0, &alphas) - (-3.0)).abs() < 1e-12);
        assert!((alpha_axis(10.0, &alphas) - 1.0).abs() < 1e-12);
        assert!(alpha_plan(&base_cell(), &[], vec![1], "x").is_err());
        assert!(alpha_plan(&base_cell(), &[-1.0], vec![1], "x").is_err());
    }

    #[test]
    fn builtin_kd_plan_has_the_four_variants() {
        let p = builtin_plan("kd-variants", vec![1], "x").unwrap();
        let labels: Vec<&str> = p.cells.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            labels,
            ["Feature-level KD w/o Projection", "Feature-level KD w Projection", "Offline KD", "Online KD"]
        );
        for n in BUILTIN_PLANS {
            builtin_plan(n, vec![1], "x").unwrap();
        }
        assert!(builtin_plan("nope", vec![1], "x").is_err());
    }
}
