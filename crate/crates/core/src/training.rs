//! Training procedures: skeleton pretraining, SkeletonCLIP alignment,
//! VideoCLIP fine-tuning, SkeletonCLIP distillation (SCD) in four KD modes,
//! the tri-modal and cross-projection baselines, and end-to-end pipelines.
//!
//! Every procedure visits only seen-class samples, draws class-balanced
//! batches from `(seed, epoch)`, and restarts optimizer state and the
//! learning-rate schedule at the start of its phase.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::encoders::{ClassifierHead, EncoderConfig, SkeletonEncoder, TextEncoder, VideoEncoder};
use crate::error::{Result, SkiError};
use crate::kvconfig::KvConfig;
use crate::losses::{
    ce_logits_graph, crossproj_graph, distill_graph, feature_kd_graph, trimodal_graph, KdMode, LossConfig, LossValue,
};
use crate::optim::{epoch_lr, LrSchedule, Sgd};
use crate::params::{init_weight, Bound, ParameterSet};
use crate::rng::{derive_seed, stream};
use crate::synthdata::{Dataset, DatasetConfig, SplitSpec, Subset, Triplet};
use crate::tensor::Matrix;
use crate::types::TextPrompt;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs_pretrain: usize,
    pub epochs_align: usize,
    pub epochs_finetune: usize,
    pub epochs_scd: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: EncoderConfig,
    /// Skeleton-side text encoder frozen during alignment and SCD.
    pub freeze_text_skeleton: bool,
    /// Video-side text encoder frozen during fine-tuning and SCD.
    pub freeze_text_video: bool,
    /// Run skeleton pretraining and alignment before SCD.
    pub pretrain_skeletonclip: bool,
    /// Run VideoCLIP fine-tuning before SCD.
    pub pretrain_videoclip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_pretrain: 30,
            epochs_align: 20,
            epochs_finetune: 10,
            epochs_scd: 5,
            batch_size: 8,
            learning_rate: 0.01,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            seed: 7,
            loss: LossConfig::default(),
            model: EncoderConfig::default(),
            freeze_text_skeleton: true,
            freeze_text_video: false,
            pretrain_skeletonclip: true,
            pretrain_videoclip: true,
        }
    }
}

const TRAIN_KEYS: [&str; 13] = [
    "epochs_pretrain",
    "epochs_align",
    "epochs_finetune",
    "epochs_scd",
    "batch_size",
    "learning_rate",
    "lr_schedule",
    "momentum",
    "seed",
    "freeze_text_skeleton",
    "freeze_text_video",
    "pretrain_skeletonclip",
    "pretrain_videoclip",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SkiError::config("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SkiError::config("train.momentum", "must be in [0, 1)"));
        }
        let contrastive = self.epochs_align + self.epochs_finetune + self.epochs_scd > 0;
        if self.batch_size == 0 || (contrastive && self.batch_size < 2) {
            return Err(SkiError::config("train.batch_size", "must be at least 2 for contrastive phases"));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    /// Reads top-level keys plus the `loss.` and `model.` sections.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut top = KvConfig::new();
        for (k, v) in kv.iter() {
            if !k.starts_with("loss.") && !k.starts_with("model.") {
                top.set(k, v);
            }
        }
        top.reject_unknown(&TRAIN_KEYS, "train")?;
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs_pretrain: top.get_or("epochs_pretrain", d.epochs_pretrain)?,
            epochs_align: top.get_or("epochs_align", d.epochs_align)?,
            epochs_finetune: top.get_or("epochs_finetune", d.epochs_finetune)?,
            epochs_scd: top.get_or("epochs_scd", d.epochs_scd)?,
            batch_size: top.get_or("batch_size", d.batch_size)?,
            learning_rate: top.get_or("learning_rate", d.learning_rate)?,
            lr_schedule: top.get_or("lr_schedule", d.lr_schedule)?,
            momentum: top.get_or("momentum", d.momentum)?,
            seed: top.get_or("seed", d.seed)?,
            loss: LossConfig::from_kv(&kv.section("loss"))?,
            model: EncoderConfig::from_kv(&kv.section("model"))?,
            freeze_text_skeleton: top.get_or("freeze_text_skeleton", d.freeze_text_skeleton)?,
            freeze_text_video: top.get_or("freeze_text_video", d.freeze_text_video)?,
            pretrain_skeletonclip: top.get_or("pretrain_skeletonclip", d.pretrain_skeletonclip)?,
            pretrain_videoclip: top.get_or("pretrain_videoclip", d.pretrain_videoclip)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("epochs_pretrain", self.epochs_pretrain);
        kv.set("epochs_align", self.epochs_align);
        kv.set("epochs_finetune", self.epochs_finetune);
        kv.set("epochs_scd", self.epochs_scd);
        kv.set("batch_size", self.batch_size);
        kv.set("learning_rate", self.learning_rate);
        kv.set("lr_schedule", self.lr_schedule);
        kv.set("momentum", self.momentum);
        kv.set("seed", self.seed);
        kv.set("freeze_text_skeleton", self.freeze_text_skeleton);
        kv.set("freeze_text_video", self.freeze_text_video);
        kv.set("pretrain_skeletonclip", self.pretrain_skeletonclip);
        kv.set("pretrain_videoclip", self.pretrain_videoclip);
        kv.merge_prefixed("loss", &self.loss.to_kv());
        kv.merge_prefixed("model", &self.model.to_kv());
        kv
    }

    pub fn fingerprint(&self) -> String {
        self.to_kv().fingerprint()
    }
}

/// One line of a [`RunRecord`]: a phase epoch (or evaluation) with named
/// numeric fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub values: BTreeMap<String, f64>,
}

impl EpochRecord {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunHeader {
    fingerprint: String,
    seed: u64,
}

/// Append-only log of a run. Serialized as JSON lines: a header line with
/// the config fingerprint and seed, then one line per [`EpochRecord`].
/// Wall-clock time is kept out of the record so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub fingerprint: String,
    pub seed: u64,
    lines: Vec<EpochRecord>,
}

impl RunRecord {
    pub fn new(fingerprint: impl Into<String>, seed: u64) -> Self {
        RunRecord {
            fingerprint: fingerprint.into(),
            seed,
            lines: Vec::new(),
        }
    }

    pub fn push(&mut self, line: EpochRecord) -> Result<()> {
        if let Some((k, v)) = line.values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(SkiError::Degenerate(format!("{} epoch {}: `{k}` is {v}", line.phase, line.epoch)));
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[EpochRecord] {
        &self.lines
    }

    pub fn phase(&self, phase: &str) -> Vec<&EpochRecord> {
        self.lines.iter().filter(|l| l.phase == phase).collect()
    }

    pub fn last(&self, phase: &str) -> Option<&EpochRecord> {
        self.lines.iter().rev().find(|l| l.phase == phase)
    }

    pub fn to_jsonl(&self) -> String {
        let header = RunHeader {
            fingerprint: self.fingerprint.clone(),
            seed: self.seed,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for l in &self.lines {
            out.push_str(&serde_json::to_string(l).expect("finite record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let corrupt = |line: usize, reason: String| SkiError::Corrupt {
            path: origin.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut it = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = it.next().ok_or_else(|| corrupt(1, "empty record".into()))?;
        let header: RunHeader = serde_json::from_str(first).map_err(|e| corrupt(1, e.to_string()))?;
        let mut rec = RunRecord::new(header.fingerprint, header.seed);
        for (i, l) in it {
            let line: EpochRecord = serde_json::from_str(l).map_err(|e| corrupt(i + 1, e.to_string()))?;
            rec.push(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        }
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| SkiError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SkiError::io(format!("reading {}", path.display()), e))?;
        RunRecord::from_jsonl(&text, path)
    }
}

/// Video encoder plus its (trainable by default) text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClipModel {
    pub video: VideoEncoder,
    pub text: TextEncoder,
}

/// Skeleton encoder plus its (frozen by default) text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonClip {
    pub skeleton: SkeletonEncoder,
    pub text: TextEncoder,
}

/// Freshly initialized models for one run. Both text encoders share one
/// initialization seed, standing in for a common pretrained text tower.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub videoclip: VideoClipModel,
    pub skeletonclip: SkeletonClip,
    pub head: ClassifierHead,
}

pub fn init_models(data: &DatasetConfig, split: &SplitSpec, cfg: &TrainConfig) -> Result<Models> {
    cfg.validate()?;
    let text_seed = derive_seed(cfg.seed, &[3]);
    let video = VideoEncoder::new(&cfg.model, data.frame_dims(), data.t_v, derive_seed(cfg.seed, &[1]))?;
    let skeleton = SkeletonEncoder::new(&cfg.model, data.t_s, data.joints, derive_seed(cfg.seed, &[2]))?;
    let mut text_v = TextEncoder::new(&cfg.model, "text_v", text_seed)?;
    let mut text_s = TextEncoder::new(&cfg.model, "text_s", text_seed)?;
    text_v.set_frozen(cfg.freeze_text_video);
    text_s.set_frozen(cfg.freeze_text_skeleton);
    let head = ClassifierHead::new(skeleton.d_out(), split.seen_class_ids.len(), derive_seed(cfg.seed, &[4]))?;
    Ok(Models {
        videoclip: VideoClipModel { video, text: text_v },
        skeletonclip: SkeletonClip { skeleton, text: text_s },
        head,
    })
}

/// Seen-class training samples with the seen-class prompts in split order.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub triplets: Vec<&'a Triplet>,
    pub split: &'a SplitSpec,
    pub prompts: Vec<TextPrompt>,
}

impl<'a> TrainData<'a> {
    pub fn new(triplets: Vec<&'a Triplet>, split: &'a SplitSpec, prompts: Vec<TextPrompt>) -> Result<Self> {
        check_no_leakage(&triplets, split)?;
        let ids: Vec<usize> = prompts.iter().map(|p| p.class_id).collect();
        if ids != split.seen_class_ids {
            return Err(SkiError::arg("prompts", "must list the seen classes in split order"));
        }
        if triplets.is_empty() {
            return Err(SkiError::arg("triplets", "no training samples"));
        }
        Ok(TrainData {
            triplets,
            split,
            prompts,
        })
    }

    /// The non-held-out seen-class samples of `data`.
    pub fn seen_train(data: &'a Dataset) -> Result<Self> {
        let prompts = data.prompts(&data.split.seen_class_ids)?;
        TrainData::new(data.subset(Subset::SeenTrain), &data.split, prompts)
    }

    fn targets(&self, batch: &[&Triplet]) -> Result<Vec<usize>> {
        batch
            .iter()
            .map(|t| {
                self.split
                    .seen_class_ids
                    .iter()
                    .position(|&c| c == t.class_id())
                    .ok_or(SkiError::SplitLeakage { class_id: t.class_id() })
            })
            .collect()
    }

    fn batches(&self, cfg: &TrainConfig, epoch: usize) -> Vec<Vec<&'a Triplet>> {
        class_balanced_batches(&self.triplets, cfg.batch_size, cfg.seed, epoch)
            .into_iter()
            .map(|b| b.into_iter().map(|i| self.triplets[i]).collect())
            .collect()
    }
}

/// Errors on the first sample whose class is not seen.
pub fn check_no_leakage(triplets: &[&Triplet], split: &SplitSpec) -> Result<()> {
    match triplets.iter().find(|t| !split.is_seen(t.class_id())) {
        Some(t) => Err(SkiError::SplitLeakage { class_id: t.class_id() }),
        None => Ok(()),
    }
}

const SAMPLER_STREAM: u64 = 0xba7c;

/// Index batches for one epoch: samples are shuffled within each class,
/// dealt round-robin over a shuffled class order, then cut into batches.
/// A trailing batch of one sample is merged into its predecessor.
pub fn class_balanced_batches(triplets: &[&Triplet], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = stream(seed, &[SAMPLER_STREAM, epoch as u64]);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in triplets.iter().enumerate() {
        by_class.entry(t.class_id()).or_default().push(i);
    }
    let mut queues: Vec<Vec<usize>> = by_class.into_values().collect();
    for q in &mut queues {
        q.shuffle(&mut rng);
    }
    let rounds = queues.iter().map(Vec::len).max().unwrap_or(0);
    let mut order = Vec::with_capacity(triplets.len());
    let mut classes: Vec<usize> = (0..queues.len()).collect();
    for r in 0..rounds {
        classes.shuffle(&mut rng);
        order.extend(classes.iter().filter_map(|&c| queues[c].get(r).copied()));
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

/// Running means of named step values over an epoch.
#[derive(Default)]
pub(crate) struct EpochStats {
    sums: BTreeMap<String, f64>,
    steps: usize,
    correct: usize,
    seen: usize,
}

impl EpochStats {
    pub(crate) fn step(&mut self, parts: &[(&str, f64)]) {
        for (k, v) in parts {
            *self.sums.entry((*k).to_string()).or_insert(0.0) += v;
        }
        self.steps += 1;
    }

    fn count(&mut self, logits: &Matrix, targets: &[usize]) {
        for (row, &t) in logits.row_iter().zip(targets) {
            if crate::primitives::argmax(row) == Some(t) {
                self.correct += 1;
            }
        }
        self.seen += targets.len();
    }

    pub(crate) fn finish(self, phase: &str, epoch: usize, lr: f64) -> EpochRecord {
        let n = self.steps.max(1) as f64;
        let mut values: BTreeMap<String, f64> = self.sums.into_iter().map(|(k, v)| (k, v / n)).collect();
        values.insert("lr".into(), lr);
        values.insert("steps".into(), self.steps as f64);
        if self.seen > 0 {
            values.insert("train_acc".into(), self.correct as f64 / self.seen as f64);
        }
        EpochRecord {
            phase: phase.to_string(),
            epoch,
            values,
        }
    }
}

/// Bytes of `ps` must not change while it is frozen.
pub(crate) struct FreezeCheck {
    name: &'static str,
    checksum: String,
}

impl FreezeCheck {
    pub(crate) fn new(name: &'static str, ps: &ParameterSet) -> Self {
        FreezeCheck {
            name,
            checksum: ps.checksum(),
        }
    }

    pub(crate) fn verify(&self, ps: &ParameterSet) -> Result<()> {
        if ps.checksum() != self.checksum {
            return Err(SkiError::FrozenDrift(self.name.to_string()));
        }
        Ok(())
    }
}

/// A modality encoder fed from triplets.
pub trait TripletEncoder {
    fn params(&self) -> &ParameterSet;
    fn params_mut(&mut self) -> &mut ParameterSet;
    /// Normalized `B x D` embeddings.
    fn encode_triplets(&self, g: &mut Graph, bound: &Bound, batch: &[&Triplet]) -> Result<Var>;
    fn d_out(&self) -> usize;
}

impl TripletEncoder for VideoEncoder {
    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn encode_triplets(&self, g: &mut Graph, bound: &Bound, batch: &[&Triplet]) -> Result<Var> {
        let clips: Vec<_> = batch.iter().map(|t| &t.video).collect();
        self.encode_batch(g, bound, &clips)
    }

    fn d_out(&self) -> usize {
        VideoEncoder::d_out(self)
    }
}

impl TripletEncoder for SkeletonEncoder {
    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn encode_triplets(&self, g: &mut Graph, bound: &Bound, batch: &[&Triplet]) -> Result<Var> {
        let seqs: Vec<_> = batch.iter().map(|t| &t.skeleton).collect();
        self.encode_batch(g, bound, &seqs)
    }

    fn d_out(&self) -> usize {
        SkeletonEncoder::d_out(self)
    }
}

/// Bound parameters of one dual encoder and its `B x C` similarity logits.
struct DualForward {
    enc: Bound,
    text: Bound,
    z: Var,
    logits: Var,
}

fn dual_forward<E: TripletEncoder>(
    g: &mut Graph,
    enc: &E,
    text: &TextEncoder,
    frozen: bool,
    batch: &[&Triplet],
    prompts: &[TextPrompt],
) -> Result<DualForward> {
    let (eb, tb) = if frozen {
        (enc.params().bind_frozen(g), text.params.bind_frozen(g))
    } else {
        (enc.params().bind(g), text.params.bind(g))
    };
    let z = enc.encode_triplets(g, &eb, batch)?;
    let t = text.encode_batch(g, &tb, prompts)?;
    let logits = g.matmul_nt(z, t)?;
    Ok(DualForward {
        enc: eb,
        text: tb,
        z,
        logits,
    })
}

fn apply(opt: &mut Sgd, ps: &mut ParameterSet, bound: &Bound, grads: &crate::autodiff::Gradients, lr: f64) -> Result<()> {
    let g = ps.collect_grads(bound, grads)?;
    opt.step(ps, &g, lr)
}

/// Contrastive training of one dual encoder against the seen-class prompts.
fn dual_encoder_phase<E: TripletEncoder>(
    phase: &str,
    epochs: usize,
    enc: &mut E,
    text: &mut TextEncoder,
    data: &TrainData,
    cfg: &TrainConfig,
    record: &mut RunRecord,
) -> Result<()> {
    cfg.validate()?;
    check_no_leakage(&data.triplets, data.split)?;
    let text_freeze = text.is_frozen().then(|| FreezeCheck::new("text", &text.params));
    let mut opt_e = Sgd::new(enc.params(), cfg.momentum)?;
    let mut opt_t = Sgd::new(&text.params, cfg.momentum)?;
    for epoch in 0..epochs {
        let lr = epoch_lr(cfg.learning_rate, cfg.lr_schedule, epoch, epochs);
        let mut stats = EpochStats::default();
        for batch in data.batches(cfg, epoch) {
            let targets = data.targets(&batch)?;
            let mut g = Graph::new();
            let f = dual_forward(&mut g, enc, text, false, &batch, &data.prompts)?;
            let loss = ce_logits_graph(&mut g, f.logits, &targets, cfg.loss.tau)?;
            stats.step(&[("ce", g.scalar(loss))]);
            stats.count(g.value(f.logits), &targets);
            let grads = g.backward(loss)?;
            apply(&mut opt_e, enc.params_mut(), &f.enc, &grads, lr)?;
            apply(&mut opt_t, &mut text.params, &f.text, &grads, lr)?;
        }
        record.push(stats.finish(phase, epoch, lr))?;
    }
    if let Some(check) = text_freeze {
        check.verify(&text.params)?;
    }
    Ok(())
}

/// Classifier pretraining of the skeleton encoder on the seen classes.
/// The head is discarded by callers afterwards.
pub fn pretrain_skeleton(
    encoder: &mut SkeletonEncoder,
    head: &mut ClassifierHead,
    data: &TrainData,
    cfg: &TrainConfig,
    record: &mut RunRecord,
) -> Result<()> {
    cfg.validate()?;
    check_no_leakage(&data.triplets, data.split)?;
    if head.num_classes() != data.split.seen_class_ids.len() {
        return Err(SkiError::arg(
            "head",
            format!("{} outputs for {} seen classes", head.num_classes(), data.split.seen_class_ids.len()),
        ));
    }
    let epochs = cfg.epochs_pretrain;
    let mut opt_e = Sgd::new(&encoder.params, cfg.momentum)?;
    let mut opt_h = Sgd::new(&head.params, cfg.momentum)?;
    for epoch in 0..epochs {
        let lr = epoch_lr(cfg.learning_rate, cfg.lr_schedule, epoch, epochs);
        let mut stats = EpochStats::default();
        for batch in data.batches(cfg, epoch) {
            let targets = data.targets(&batch)?;
            let seqs: Vec<_> = batch.iter().map(|t| &t.skeleton).collect();
            let mut g = Graph::new();
            let eb = encoder.params.bind(&mut g);
            let hb = head.params.bind(&mut g);
            let pooled = encoder.pooled_batch(&mut g, &eb, &seqs)?;
            let logits = head.logits(&mut g, &hb, pooled)?;
            let loss = ce_logits_graph(&mut g, logits, &targets, 1.0)?;
            stats.step(&[("ce", g.scalar(loss))]);
            stats.count(g.value(logits), &targets);
            let grads = g.backward(loss)?;
            apply(&mut opt_e, &mut encoder.params, &eb, &grads, lr)?;
            apply(&mut opt_h, &mut head.params, &hb, &grads, lr)?;
        }
        record.push(stats.finish("pretrain", epoch, lr))?;
    }
    Ok(())
}

/// Contrastive alignment of the skeleton encoder with its text encoder,
/// which stays frozen unless the model was built with it trainable.
pub fn align_skeletonclip(model: &mut SkeletonClip, data: &TrainData, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    dual_encoder_phase("align", cfg.epochs_align, &mut model.skeleton, &mut model.text, data, cfg, record)
}

pub fn finetune_videoclip(model: &mut VideoClipModel, data: &TrainData, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    dual_encoder_phase("finetune", cfg.epochs_finetune, &mut model.video, &mut model.text, data, cfg, record)
}

/// Joint training of VideoCLIP and SkeletonCLIP with
/// `ce_video + ce_skeleton + alpha * L_D`. Only the video-side model is the
/// inference artifact; the skeleton side and any KD projection stay behind.
pub fn train_scd(
    videoclip: &mut VideoClipModel,
    skeletonclip: &mut SkeletonClip,
    data: &TrainData,
    cfg: &TrainConfig,
    record: &mut RunRecord,
) -> Result<()> {
    cfg.validate()?;
    check_no_leakage(&data.triplets, data.split)?;
    let loss_cfg = &cfg.loss;
    let (d_v, d_s) = (videoclip.video.d_out(), skeletonclip.skeleton.d_out());
    if loss_cfg.kd_mode == KdMode::FeatureNoProj && d_v != d_s {
        return Err(SkiError::arg(
            "kd_mode",
            format!("feature distillation without projection needs equal widths, got video {d_v} and skeleton {d_s}"),
        ));
    }
    let offline = loss_cfg.kd_mode == KdMode::Offline;
    let teacher_freeze = offline.then(|| {
        (
            FreezeCheck::new("skeleton", &skeletonclip.skeleton.params),
            FreezeCheck::new("text_s", &skeletonclip.text.params),
        )
    });
    let text_s_freeze = skeletonclip.text.is_frozen().then(|| FreezeCheck::new("text_s", &skeletonclip.text.params));
    let text_v_freeze = videoclip.text.is_frozen().then(|| FreezeCheck::new("text_v", &videoclip.text.params));

    let mut proj = ParameterSet::new();
    if loss_cfg.kd_mode == KdMode::FeatureProj {
        let mut rng = stream(cfg.seed, &[0x9e0c]);
        proj.add("kd.proj", init_weight(&mut rng, d_s, d_v, 1.0), true)?;
    }
    let epochs = cfg.epochs_scd;
    let mut opt_v = Sgd::new(&videoclip.video.params, cfg.momentum)?;
    let mut opt_tv = Sgd::new(&videoclip.text.params, cfg.momentum)?;
    let mut opt_s = Sgd::new(&skeletonclip.skeleton.params, cfg.momentum)?;
    let mut opt_ts = Sgd::new(&skeletonclip.text.params, cfg.momentum)?;
    let mut opt_p = Sgd::new(&proj, cfg.momentum)?;
    for epoch in 0..epochs {
        let lr = epoch_lr(cfg.learning_rate, cfg.lr_schedule, epoch, epochs);
        let mut stats = EpochStats::default();
        for batch in data.batches(cfg, epoch) {
            let targets = data.targets(&batch)?;
            let mut g = Graph::new();
            let fv = dual_forward(&mut g, &videoclip.video, &videoclip.text, false, &batch, &data.prompts)?;
            let ce_v = ce_logits_graph(&mut g, fv.logits, &targets, loss_cfg.tau)?;
            let fs = dual_forward(&mut g, &skeletonclip.skeleton, &skeletonclip.text, offline, &batch, &data.prompts)?;
            let ce_s = ce_logits_graph(&mut g, fs.logits, &targets, loss_cfg.tau)?;
            let pb = proj.bind(&mut g);
            let distill = match loss_cfg.kd_mode {
                KdMode::Online | KdMode::Offline => {
                    let (mut lv, mut ls) = (fv.logits, fs.logits);
                    if loss_cfg.scaled_logits {
                        lv = g.scale(lv, 1.0 / loss_cfg.tau);
                        ls = g.scale(ls, 1.0 / loss_cfg.tau);
                    }
                    if loss_cfg.stop_teacher_grad {
                        ls = g.detach(ls);
                    }
                    distill_graph(&mut g, loss_cfg.distill, lv, ls, loss_cfg.tau_d)?
                }
                KdMode::FeatureNoProj | KdMode::FeatureProj => {
                    let zs = if loss_cfg.stop_teacher_grad { g.detach(fs.z) } else { fs.z };
                    let p = (loss_cfg.kd_mode == KdMode::FeatureProj).then(|| pb.var(0));
                    feature_kd_graph(&mut g, fv.z, zs, p)?
                }
            };
            let total = g.weighted_sum(&[(ce_v, 1.0), (ce_s, 1.0), (distill, loss_cfg.alpha)])?;
            let parts = LossValue::weighted(&[
                ("ce_video", g.scalar(ce_v), 1.0),
                ("ce_skeleton", g.scalar(ce_s), 1.0),
                ("distill", g.scalar(distill), loss_cfg.alpha),
            ]);
            let scalar = g.scalar(total);
            if (parts.recomputed() - scalar).abs() > 1e-9 {
                return Err(SkiError::Contract(format!(
                    "SCD loss {scalar} differs from its components {}",
                    parts.recomputed()
                )));
            }
            stats.step(&[
                ("loss", scalar),
                ("ce_video", g.scalar(ce_v)),
                ("ce_skeleton", g.scalar(ce_s)),
                ("distill", g.scalar(distill)),
            ]);
            stats.count(g.value(fv.logits), &targets);
            let grads = g.backward(total)?;
            apply(&mut opt_v, &mut videoclip.video.params, &fv.enc, &grads, lr)?;
            apply(&mut opt_tv, &mut videoclip.text.params, &fv.text, &grads, lr)?;
            if !offline {
                apply(&mut opt_s, &mut skeletonclip.skeleton.params, &fs.enc, &grads, lr)?;
                apply(&mut opt_ts, &mut skeletonclip.text.params, &fs.text, &grads, lr)?;
            }
            apply(&mut opt_p, &mut proj, &pb, &grads, lr)?;
        }
        record.push(stats.finish("scd", epoch, lr))?;
    }
    if let Some((s, t)) = teacher_freeze {
        s.verify(&skeletonclip.skeleton.params)?;
        t.verify(&skeletonclip.text.params)?;
    }
    if let Some(c) = text_s_freeze {
        c.verify(&skeletonclip.text.params)?;
    }
    if let Some(c) = text_v_freeze {
        c.verify(&videoclip.text.params)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Pairwise InfoNCE over video, skeleton and text, all trained.
    Trimodal,
    /// Skeleton encoder aligned to a frozen video encoder.
    CrossProj,
}

impl FromStr for BaselineKind {
    type Err = SkiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trimodal" => Ok(BaselineKind::Trimodal),
            "crossproj" => Ok(BaselineKind::CrossProj),
            other => Err(SkiError::arg("kind", format!("unknown baseline `{other}`"))),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Trimodal => "trimodal",
            BaselineKind::CrossProj => "crossproj",
        })
    }
}

/// Trains the skeleton encoder into the video-text space for
/// `epochs_align + epochs_scd` epochs. The result is evaluated
/// skeleton-vs-text with the video-side text encoder.
pub fn train_baseline(
    kind: BaselineKind,
    videoclip: &mut VideoClipModel,
    skeleton: &mut SkeletonEncoder,
    data: &TrainData,
    cfg: &TrainConfig,
    record: &mut RunRecord,
) -> Result<()> {
    cfg.validate()?;
    check_no_leakage(&data.triplets, data.split)?;
    let phase = kind.to_string();
    let video_freeze = (kind == BaselineKind::CrossProj).then(|| FreezeCheck::new("video", &videoclip.video.params));
    let text_freeze = (kind == BaselineKind::CrossProj || videoclip.text.is_frozen())
        .then(|| FreezeCheck::new("text_v", &videoclip.text.params));
    let epochs = cfg.epochs_align + cfg.epochs_scd;
    let mut opt_v = Sgd::new(&videoclip.video.params, cfg.momentum)?;
    let mut opt_t = Sgd::new(&videoclip.text.params, cfg.momentum)?;
    let mut opt_s = Sgd::new(&skeleton.params, cfg.momentum)?;
    for epoch in 0..epochs {
        let lr = epoch_lr(cfg.learning_rate, cfg.lr_schedule, epoch, epochs);
        let mut stats = EpochStats::default();
        for batch in data.batches(cfg, epoch) {
            let mut g = Graph::new();
            let sb = skeleton.params.bind(&mut g);
            let z_s = skeleton.encode_triplets(&mut g, &sb, &batch)?;
            match kind {
                BaselineKind::Trimodal => {
                    let vb = videoclip.video.params.bind(&mut g);
                    let tb = videoclip.text.params.bind(&mut g);
                    let z_v = videoclip.video.encode_triplets(&mut g, &vb, &batch)?;
                    let prompts: Vec<TextPrompt> = batch.iter().map(|t| t.prompt.clone()).collect();
                    let z_t = videoclip.text.encode_batch(&mut g, &tb, &prompts)?;
                    let (total, [vt, st, vs]) = trimodal_graph(&mut g, z_v, z_s, z_t, cfg.loss.tau)?;
                    stats.step(&[
                        ("loss", g.scalar(total)),
                        ("video_text", g.scalar(vt)),
                        ("skeleton_text", g.scalar(st)),
                        ("video_skeleton", g.scalar(vs)),
                    ]);
                    let grads = g.backward(total)?;
                    apply(&mut opt_s, &mut skeleton.params, &sb, &grads, lr)?;
                    apply(&mut opt_v, &mut videoclip.video.params, &vb, &grads, lr)?;
                    apply(&mut opt_t, &mut videoclip.text.params, &tb, &grads, lr)?;
                }
                BaselineKind::CrossProj => {
                    let vb = videoclip.video.params.bind_frozen(&mut g);
                    let z_v = videoclip.video.encode_triplets(&mut g, &vb, &batch)?;
                    let loss = crossproj_graph(&mut g, z_s, z_v, cfg.loss.tau)?;
                    stats.step(&[("loss", g.scalar(loss))]);
                    let grads = g.backward(loss)?;
                    apply(&mut opt_s, &mut skeleton.params, &sb, &grads, lr)?;
                }
            }
        }
        record.push(stats.finish(&phase, epoch, lr))?;
    }
    if let Some(c) = video_freeze {
        c.verify(&videoclip.video.params)?;
    }
    if let Some(c) = text_freeze {
        c.verify(&videoclip.text.params)?;
    }
    Ok(())
}

/// Models produced by one pipeline run, with its record.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub models: Models,
    pub record: RunRecord,
}

fn new_record(cfg: &TrainConfig, data: &Dataset) -> RunRecord {
    let mut kv = cfg.to_kv();
    kv.merge_prefixed("data", &data.config.to_kv());
    RunRecord::new(kv.fingerprint(), cfg.seed)
}

/// Skeleton pretraining then SkeletonCLIP alignment, when enabled.
pub fn prepare_skeletonclip(models: &mut Models, data: &TrainData, cfg: &TrainConfig, record: &mut RunRecord) -> Result<()> {
    if cfg.pretrain_skeletonclip {
        pretrain_skeleton(&mut models.skeletonclip.skeleton, &mut models.head, data, cfg, record)?;
        align_skeletonclip(&mut models.skeletonclip, data, cfg, record)?;
    }
    Ok(())
}

/// Optional pretraining of both dual encoders followed by SCD.
pub fn scd_pipeline(data: &Dataset, cfg: &TrainConfig) -> Result<PipelineOutput> {
    let train = TrainData::seen_train(data)?;
    let mut models = init_models(&data.config, &data.split, cfg)?;
    let mut record = new_record(cfg, data);
    prepare_skeletonclip(&mut models, &train, cfg, &mut record)?;
    if cfg.pretrain_videoclip {
        finetune_videoclip(&mut models.videoclip, &train, cfg, &mut record)?;
    }
    train_scd(&mut models.videoclip, &mut models.skeletonclip, &train, cfg, &mut record)?;
    Ok(PipelineOutput { models, record })
}

/// VideoCLIP fine-tuned on the same schedule as the SCD video side: the
/// fine-tuning phase followed by a second phase of `epochs_scd` epochs.
/// Equal to [`scd_pipeline`]'s video model when `alpha` is 0.
pub fn videoclip_pipeline(data: &Dataset, cfg: &TrainConfig) -> Result<PipelineOutput> {
    let train = TrainData::seen_train(data)?;
    let mut models = init_models(&data.config, &data.split, cfg)?;
    let mut record = new_record(cfg, data);
    if cfg.pretrain_videoclip {
        finetune_videoclip(&mut models.videoclip, &train, cfg, &mut record)?;
    }
    let second = TrainConfig {
        epochs_finetune: cfg.epochs_scd,
        ..cfg.clone()
    };
    finetune_videoclip(&mut models.videoclip, &train, &second, &mut record)?;
    Ok(PipelineOutput { models, record })
}

/// SkeletonCLIP and VideoCLIP trained independently on the SCD schedule,
/// for inference-time fusion: each side gets its own contrastive phase of
/// `epochs_scd` epochs. Identical to [`scd_pipeline`] with `alpha` 0.
pub fn independent_pipeline(data: &Dataset, cfg: &TrainConfig) -> Result<PipelineOutput> {
    let train = TrainData::seen_train(data)?;
    let mut models = init_models(&data.config, &data.split, cfg)?;
    let mut record = new_record(cfg, data);
    prepare_skeletonclip(&mut models, &train, cfg, &mut record)?;
    if cfg.pretrain_videoclip {
        finetune_videoclip(&mut models.videoclip, &train, cfg, &mut record)?;
    }
    let second = TrainConfig {
        epochs_finetune: cfg.epochs_scd,
        ..cfg.clone()
    };
    finetune_videoclip(&mut models.videoclip, &train, &second, &mut record)?;
    let skeleton_phase = TrainConfig {
        epochs_align: cfg.epochs_scd,
        ..cfg.clone()
    };
    align_skeletonclip(&mut models.skeletonclip, &train, &skeleton_phase, &mut record)?;
    Ok(PipelineOutput { models, record })
}

/// Fine-tuned VideoCLIP and classifier-pretrained skeleton encoder, then
/// the chosen baseline alignment. The aligned skeleton encoder replaces
/// `models.skeletonclip.skeleton` and the video-side text encoder is copied
/// into `models.skeletonclip.text`, so the skeleton-side model is the one
/// to evaluate.
pub fn baseline_pipeline(kind: BaselineKind, data: &Dataset, cfg: &TrainConfig) -> Result<PipelineOutput> {
    let train = TrainData::seen_train(data)?;
    let mut models = init_models(&data.config, &data.split, cfg)?;
    let mut record = new_record(cfg, data);
    if cfg.pretrain_videoclip {
        finetune_videoclip(&mut models.videoclip, &train, cfg, &mut record)?;
    }
    if cfg.pretrain_skeletonclip {
        pretrain_skeleton(&mut models.skeletonclip.skeleton, &mut models.head, &train, cfg, &mut record)?;
    }
    train_baseline(
        kind,
        &mut models.videoclip,
        &mut models.skeletonclip.skeleton,
        &train,
        cfg,
        &mut record,
    )?;
    models.skeletonclip.text = models.videoclip.text.clone();
    Ok(PipelineOutput { models, record })
}

/// The four pretraining strategies: none, SkeletonCLIP only, VideoCLIP
/// only, both. Each cell is a full SCD run with its own record.
pub fn pretraining_matrix(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<(String, PipelineOutput)>> {
    let cells = [
        ("none", false, false),
        ("skeletonclip", true, false),
        ("videoclip", false, true),
        ("both", true, true),
    ];
    cells
        .iter()
        .map(|&(name, s, v)| {
            let c = TrainConfig {
                pretrain_skeletonclip: s,
                pretrain_videoclip: v,
                ..cfg.clone()
            };
            Ok((name.to_string(), scd_pipeline(data, &c)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate_dataset;

    fn tiny_data() -> Dataset {
        let cfg = DatasetConfig {
            num_classes: 4,
            samples_per_class: 6,
            height: 16,
            width: 16,
            t_s: 8,
            t_v: 4,
            seen_ratio: 0.75,
            ..DatasetConfig::default()
        };
        generate_dataset(&cfg).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs_pretrain: 2,
            epochs_align: 2,
            epochs_finetune: 2,
            epochs_scd: 2,
            batch_size: 4,
            model: EncoderConfig {
                hidden: vec![16],
                d_out: 8,
                text_embed: 4,
                text_hidden: 16,
                text_len: 12,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_round_trips_through_kv() {
        let mut cfg = tiny_cfg();
        cfg.loss.alpha = 10.0;
        cfg.freeze_text_skeleton = false;
        let back = TrainConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
        let mut kv = cfg.to_kv();
        kv.set("epochs", "3");
        assert!(TrainConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn batch_size_one_is_rejected() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..tiny_cfg()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn batches_cover_each_sample_once_and_mix_classes() {
        let data = tiny_data();
        let train = data.subset(Subset::SeenTrain);
        let batches = class_balanced_batches(&train, 3, 1, 0);
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..train.len()).collect::<Vec<_>>());
        for b in &batches[..batches.len() - 1] {
            let mut classes: Vec<usize> = b.iter().map(|&i| train[i].class_id()).collect();
            classes.dedup();
            assert_eq!(classes.len(), b.len(), "one sample per class while classes remain");
        }
        assert_eq!(batches, class_balanced_batches(&train, 3, 1, 0));
        assert_ne!(batches, class_balanced_batches(&train, 3, 1, 1));
    }

    #[test]
    fn run_record_round_trips() {
        let mut rec = RunRecord::new("abc", 3);
        let mut values = BTreeMap::new();
        values.insert("ce".to_string(), 0.1 + 0.2);
        rec.push(EpochRecord {
            phase: "align".into(),
            epoch: 0,
            values,
        })
        .unwrap();
        let text = rec.to_jsonl();
        let back = RunRecord::from_jsonl(&text, Path::new("r")).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.to_jsonl(), text);
        assert!(RunRecord::from_jsonl("{\"fingerprint\":1}", Path::new("r")).is_err());
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let data = tiny_data();
        let cfg = TrainConfig {
            epochs_pretrain: 0,
            epochs_align: 0,
            epochs_finetune: 0,
            epochs_scd: 0,
            ..tiny_cfg()
        };
        let train = TrainData::seen_train(&data).unwrap();
        let mut m = init_models(&data.config, &data.split, &cfg).unwrap();
        let before = m.clone();
        let mut rec = RunRecord::new("x", 0);
        pretrain_skeleton(&mut m.skeletonclip.skeleton, &mut m.head, &train, &cfg, &mut rec).unwrap();
        finetune_videoclip(&mut m.videoclip, &train, &cfg, &mut rec).unwrap();
        train_scd(&mut m.videoclip, &mut m.skeletonclip, &train, &cfg, &mut rec).unwrap();
        assert_eq!(m, before);
        assert!(rec.lines().is_empty());
    }

    #[test]
    fn scd_logs_components_that_sum_to_the_loss() {
        let data = tiny_data();
        let mut cfg = tiny_cfg();
        cfg.loss.alpha = 0.5;
        let out = scd_pipeline(&data, &cfg).unwrap();
        for l in out.record.phase("scd") {
            let v = |k: &str| l.value(k).unwrap();
            let sum = v("ce_video") + v("ce_skeleton") + 0.5 * v("distill");
            assert!((sum - v("loss")).abs() < 1e-9);
        }
    }

    #[test]
    fn offline_mode_keeps_the_teacher_fixed() {
        let data = tiny_data();
        let mut cfg = tiny_cfg();
        cfg.loss.kd_mode = KdMode::Offline;
        cfg.loss.alpha = 1.0;
        let train = TrainData::seen_train(&data).unwrap();
        let mut m = init_models(&data.config, &data.split, &cfg).unwrap();
        let teacher = m.skeletonclip.clone();
        let student = m.videoclip.clone();
        train_scd(&mut m.videoclip, &mut m.skeletonclip, &train, &cfg, &mut RunRecord::new("x", 0)).unwrap();
        assert_eq!(m.skeletonclip, teacher);
        assert_ne!(m.videoclip, student);
    }

    #[test]
    fn feature_mode_without_projection_needs_equal_widths() {
        let data = tiny_data();
        let mut cfg = tiny_cfg();
        cfg.loss.kd_mode = KdMode::FeatureNoProj;
        let train = TrainData::seen_train(&data).unwrap();
        let mut m = init_models(&data.config, &data.split, &cfg).unwrap();
        let wide = EncoderConfig {
            d_out: 5,
            ..cfg.model.clone()
        };
        m.skeletonclip.skeleton = SkeletonEncoder::new(&wide, data.config.t_s, data.config.joints, 1).unwrap();
        m.skeletonclip.text = TextEncoder::new(&wide, "text_s", 1).unwrap();
        let err = train_scd(&mut m.videoclip, &mut m.skeletonclip, &train, &cfg, &mut RunRecord::new("x", 0));
        assert!(matches!(err, Err(SkiError::InvalidArgument { .. })));
        cfg.loss.kd_mode = KdMode::FeatureProj;
        train_scd(&mut m.videoclip, &mut m.skeletonclip, &train, &cfg, &mut RunRecord::new("x", 0)).unwrap();
    }

    #[test]
    fn unseen_samples_are_refused() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let mut triplets = data.subset(Subset::SeenTrain);
        triplets.push(data.subset(Subset::Unseen)[0]);
        let prompts = data.prompts(&data.split.seen_class_ids).unwrap();
        let err = TrainData::new(triplets.clone(), &data.split, prompts.clone()).unwrap_err();
        assert!(matches!(err, SkiError::SplitLeakage { .. }));
        // bypassing the constructor still hits the guard inside each procedure
        let train = TrainData {
            triplets,
            split: &data.split,
            prompts,
        };
        let mut m = init_models(&data.config, &data.split, &cfg).unwrap();
        let mut rec = RunRecord::new("x", 0);
        assert!(matches!(
            align_skeletonclip(&mut m.skeletonclip, &train, &cfg, &mut rec),
            Err(SkiError::SplitLeakage { .. })
        ));
        assert!(matches!(
            train_scd(&mut m.videoclip, &mut m.skeletonclip, &train, &cfg, &mut rec),
            Err(SkiError::SplitLeakage { .. })
        ));
    }

    #[test]
    fn crossproj_keeps_video_fixed() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let train = TrainData::seen_train(&data).unwrap();
        let mut m = init_models(&data.config, &data.split, &cfg).unwrap();
        let video = m.videoclip.clone();
        let skel = m.skeletonclip.skeleton.clone();
        let mut rec = RunRecord::new("x", 0);
        train_baseline(BaselineKind::CrossProj, &mut m.videoclip, &mut m.skeletonclip.skeleton, &train, &cfg, &mut rec)
            .unwrap();
        assert_eq!(m.videoclip, video);
        assert_ne!(m.skeletonclip.skeleton, skel);
        assert!("fusion".parse::<BaselineKind>().is_err());
    }
}
