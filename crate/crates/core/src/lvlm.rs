//! Projector training into a frozen toy causal language model.
//!
//! Per-frame visual and skeleton features are projected to the LM width and
//! placed in the template `user: <query> <visual> <skeleton> assistant:`,
//! followed by the caption. Only the projectors are ever updated; at
//! inference the skeleton block is omitted.

use std::fmt;

use rand::seq::SliceRandom;

use crate::autodiff::{Graph, Var};
use crate::encoders::{SkeletonEncoder, VideoEncoder};
use crate::error::{Result, SkiError};
use crate::kvconfig::KvConfig;
use crate::losses::lm_loss_graph;
use crate::optim::{clip_global_norm, epoch_lr, LrSchedule, Sgd};
use crate::par::{try_map_indexed, Exec};
use crate::params::{init_normal, init_weight, Bound, Checkpoint, ParameterSet};
use crate::primitives::argmax;
use crate::rng::{derive_seed, stream};
use crate::synthdata::grammar::{self, ASSISTANT_TOKEN, END_TOKEN, PAD_TOKEN, QUERIES, USER_TOKEN};
use crate::synthdata::{Dataset, Triplet};
use crate::tensor::Matrix;
use crate::training::{
    finetune_videoclip, init_models, prepare_skeletonclip, EpochRecord, EpochStats, FreezeCheck, RunRecord,
    TrainConfig, TrainData,
};
use crate::types::{SkeletonSequence, VideoClip};

#[derive(Debug, Clone, PartialEq)]
pub struct LvlmConfig {
    /// LM width `K`; projectors map into it.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Longest sequence the positional table covers.
    pub max_len: usize,
    /// Add learned absolute position embeddings to the input.
    pub positional: bool,
    /// Multiplier on `h · E^T` for the output logits.
    pub logit_scale: f64,
    pub lm_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    /// Joint L2 norm cap on the projector gradients of one step; 0 disables.
    pub grad_clip: f64,
    /// Projector initialization and batch order.
    pub seed: u64,
}

impl Default for LvlmConfig {
    fn default() -> Self {
        LvlmConfig {
            width: 64,
            layers: 2,
            heads: 2,
            max_len: 64,
            positional: false,
            logit_scale: 0.0625,
            lm_seed: 17,
            epochs: 15,
            batch_size: 8,
            learning_rate: 0.5,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            grad_clip: 1.0,
            seed: 7,
        }
    }
}

const LVLM_KEYS: [&str; 14] = [
    "width",
    "layers",
    "heads",
    "max_len",
    "positional",
    "logit_scale",
    "lm_seed",
    "epochs",
    "batch_size",
    "learning_rate",
    "lr_schedule",
    "momentum",
    "grad_clip",
    "seed",
];

impl LvlmConfig {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("lvlm.width", self.width),
            ("lvlm.layers", self.layers),
            ("lvlm.heads", self.heads),
            ("lvlm.max_len", self.max_len),
            ("lvlm.batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(SkiError::config(f, "must be positive"));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(SkiError::config("lvlm.heads", format!("{} does not divide width {}", self.heads, self.width)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SkiError::config("lvlm.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SkiError::config("lvlm.momentum", "must be in [0, 1)"));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(SkiError::config("lvlm.grad_clip", "must be non-negative"));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(SkiError::config("lvlm.logit_scale", "must be positive"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(&LVLM_KEYS, "lvlm")?;
        let d = LvlmConfig::default();
        let cfg = LvlmConfig {
            width: kv.get_or("width", d.width)?,
            layers: kv.get_or("layers", d.layers)?,
            heads: kv.get_or("heads", d.heads)?,
            max_len: kv.get_or("max_len", d.max_len)?,
            positional: kv.get_or("positional", d.positional)?,
            logit_scale: kv.get_or("logit_scale", d.logit_scale)?,
            lm_seed: kv.get_or("lm_seed", d.lm_seed)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            lr_schedule: kv.get_or("lr_schedule", d.lr_schedule)?,
            momentum: kv.get_or("momentum", d.momentum)?,
            grad_clip: kv.get_or("grad_clip", d.grad_clip)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("width", self.width);
        kv.set("layers", self.layers);
        kv.set("heads", self.heads);
        kv.set("max_len", self.max_len);
        kv.set("positional", self.positional);
        kv.set("logit_scale", self.logit_scale);
        kv.set("lm_seed", self.lm_seed);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("learning_rate", self.learning_rate);
        kv.set("lr_schedule", self.lr_schedule);
        kv.set("momentum", self.momentum);
        kv.set("grad_clip", self.grad_clip);
        kv.set("seed", self.seed);
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Visual,
    Skeleton,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Visual => "visual",
            Modality::Skeleton => "skeleton",
        })
    }
}

/// `n x K` continuous tokens of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBlock {
    pub tokens: Matrix,
    pub modality: Modality,
}

impl TokenBlock {
    pub fn new(tokens: Matrix, modality: Modality) -> Result<Self> {
        if !tokens.is_finite() {
            return Err(SkiError::Degenerate(format!("{modality} token block has non-finite entries")));
        }
        Ok(TokenBlock { tokens, modality })
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }
}

/// Source dims, token counts and target width of the two projectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectorConfig {
    pub d_v: usize,
    pub d_s: usize,
    pub n_v: usize,
    pub n_s: usize,
    pub k: usize,
}

impl ProjectorConfig {
    pub fn validate(&self, lm: &ToyCausalLM) -> Result<()> {
        for (f, v) in [("d_v", self.d_v), ("d_s", self.d_s), ("n_v", self.n_v), ("n_s", self.n_s), ("k", self.k)] {
            if v == 0 {
                return Err(SkiError::config(f, "must be positive"));
            }
        }
        if self.k != lm.width() {
            return Err(SkiError::config("k", format!("{} differs from the LM width {}", self.k, lm.width())));
        }
        Ok(())
    }
}

/// Frozen, deterministically initialized causal transformer over the
/// grammar vocabulary. Output logits reuse the token table.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCausalLM {
    pub params: ParameterSet,
    vocab: Vec<&'static str>,
    width: usize,
    heads: usize,
    layers: usize,
    max_len: usize,
    positional: bool,
    logit_scale: f64,
}

const LAYER_PARAMS: usize = 7;

impl ToyCausalLM {
    pub fn new(cfg: &LvlmConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = grammar::vocabulary();
        let k = cfg.width;
        let mut rng = stream(cfg.lm_seed, &[0x11a]);
        let mut params = ParameterSet::new();
        params.add("lm.tok", init_normal(&mut rng, vocab.len(), k, 1.0), false)?;
        if cfg.positional {
            params.add("lm.pos", init_normal(&mut rng, cfg.max_len, k, 0.5), false)?;
        }
        for l in 0..cfg.layers {
            for name in ["wq", "wk", "wv", "wo"] {
                params.add(format!("lm.l{l}.{name}"), init_weight(&mut rng, k, k, 1.0), false)?;
            }
            params.add(format!("lm.l{l}.w1"), init_weight(&mut rng, k, 2 * k, 1.0), false)?;
            params.add(format!("lm.l{l}.b1"), Matrix::zeros(1, 2 * k), false)?;
            params.add(format!("lm.l{l}.w2"), init_weight(&mut rng, 2 * k, k, 1.0), false)?;
        }
        Ok(ToyCausalLM {
            params,
            vocab,
            width: k,
            heads: cfg.heads,
            layers: cfg.layers,
            max_len: cfg.max_len,
            positional: cfg.positional,
            logit_scale: cfg.logit_scale,
        })
    }

    pub fn vocab(&self) -> &[&'static str] {
        &self.vocab
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn token_id(&self, word: &str) -> Result<usize> {
        self.vocab
            .iter()
            .position(|w| *w == word)
            .ok_or_else(|| SkiError::OutOfVocabulary(word.to_string()))
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        grammar::encode_words(&self.vocab, text)
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.vocab[i]).collect::<Vec<_>>().join(" ")
    }

    /// Token-table rows of the words of `text`.
    pub fn text_block(&self, text: &str) -> Result<TokenBlock> {
        let ids = self.encode_text(text)?;
        let table = &self.params.param(0).value;
        let rows: Vec<Vec<f64>> = ids.iter().map(|&i| table.row(i).to_vec()).collect();
        let tokens = if rows.is_empty() { Matrix::zeros(0, self.width) } else { Matrix::from_rows(&rows)? };
        TokenBlock::new(tokens, Modality::Text)
    }

    fn embed_ids(&self, g: &mut Graph, bound: &Bound, ids: &[usize]) -> Result<Var> {
        g.gather_rows(bound.var(0), ids.to_vec())
    }

    /// Logits (`n x V`) for an `n x K` input sequence; row `p` depends only
    /// on input rows `0..=p`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let (n, k) = g.value(x).shape();
        if k != self.width {
            return Err(SkiError::shape("lm_forward", format!("input width {k}, LM width {}", self.width)));
        }
        if n == 0 || n > self.max_len {
            return Err(SkiError::arg("sequence", format!("length {n} outside 1..={}", self.max_len)));
        }
        let mut h = x;
        let first = if self.positional {
            let pos = g.slice_rows(bound.var(1), 0, n)?;
            h = g.add(h, pos)?;
            2
        } else {
            1
        };
        let dh = self.width / self.heads;
        let inv = 1.0 / (dh as f64).sqrt();
        for l in 0..self.layers {
            let p = |i: usize| bound.var(first + LAYER_PARAMS * l + i);
            let q = g.matmul(h, p(0))?;
            let kk = g.matmul(h, p(1))?;
            let v = g.matmul(h, p(2))?;
            let mut outs = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let qh = g.slice_cols(q, hd * dh, dh)?;
                let kh = g.slice_cols(kk, hd * dh, dh)?;
                let vh = g.slice_cols(v, hd * dh, dh)?;
                let s = g.matmul_nt(qh, kh)?;
                let s = g.scale(s, inv);
                let a = g.causal_softmax(s)?;
                outs.push(g.matmul(a, vh)?);
            }
            let o = g.concat_cols(&outs)?;
            let o = g.matmul(o, p(3))?;
            h = g.add(h, o)?;
            let m = g.matmul(h, p(4))?;
            let m = g.add_row(m, p(5))?;
            let m = g.tanh(m);
            let m = g.matmul(m, p(6))?;
            h = g.add(h, m)?;
        }
        let logits = g.matmul_nt(h, bound.var(0))?;
        Ok(g.scale(logits, self.logit_scale))
    }

    /// Plain evaluation of [`Self::forward`].
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::with_exec(Exec::Sequential);
        let b = self.params.bind_frozen(&mut g);
        let x = g.constant(x.clone());
        let l = self.forward(&mut g, &b, x)?;
        Ok(g.value(l).clone())
    }
}

/// Per-token linear map from a modality's feature width to the LM width.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub params: ParameterSet,
    modality: Modality,
    d_in: usize,
    width: usize,
}

impl Projector {
    pub fn new(modality: Modality, d_in: usize, width: usize, seed: u64) -> Result<Self> {
        let name = match modality {
            Modality::Visual => "proj_v.w",
            Modality::Skeleton => "proj_s.w",
            Modality::Text => return Err(SkiError::arg("modality", "text tokens are not projected")),
        };
        let mut params = ParameterSet::new();
        params.add(name, init_weight(&mut stream(seed, &[0x960]), d_in, width, 1.0), true)?;
        Ok(Projector {
            params,
            modality,
            d_in,
            width,
        })
    }

    /// A projector with the given weight matrix (`d_in x K`).
    pub fn from_weight(modality: Modality, weight: Matrix) -> Result<Self> {
        let mut p = Projector::new(modality, weight.rows(), weight.cols(), 0)?;
        p.params.param_mut(0).value = weight;
        Ok(p)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weight(&self) -> &Matrix {
        &self.params.param(0).value
    }

    pub fn project(&self, tokens: &Matrix) -> Result<TokenBlock> {
        if tokens.cols() != self.d_in {
            return Err(SkiError::shape(
                "project",
                format!("{} tokens have width {}, projector expects {}", self.modality, tokens.cols(), self.d_in),
            ));
        }
        TokenBlock::new(tokens.matmul(self.weight(), Exec::Sequential)?, self.modality)
    }

    fn project_graph(&self, g: &mut Graph, bound: &Bound, tokens: Var) -> Result<Var> {
        let cols = g.value(tokens).cols();
        if cols != self.d_in {
            return Err(SkiError::shape("project", format!("tokens width {cols}, projector expects {}", self.d_in)));
        }
        g.matmul(tokens, bound.var(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanKind {
    User,
    Query,
    Visual,
    Skeleton,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub kind: SpanKind,
    pub start: usize,
    pub len: usize,
}

/// Where each block of an assembled prompt sits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    pub spans: Vec<Span>,
    pub len: usize,
}

impl PromptLayout {
    pub fn new(n_t: usize, n_v: usize, n_s: Option<usize>) -> Self {
        let mut spans = Vec::with_capacity(5);
        let mut at = 0;
        let mut push = |kind, len| {
            spans.push(Span { kind, start: at, len });
            at += len;
        };
        push(SpanKind::User, 1);
        push(SpanKind::Query, n_t);
        push(SpanKind::Visual, n_v);
        if let Some(n) = n_s {
            push(SpanKind::Skeleton, n);
        }
        push(SpanKind::Assistant, 1);
        PromptLayout { spans, len: at }
    }

    pub fn span(&self, kind: SpanKind) -> Option<&Span> {
        self.spans.iter().find(|s| s.kind == kind)
    }
}

/// `user: Q_t Q_v [Q_s] assistant:` as one `n x K` sequence.
pub fn assemble_prompt(
    lm: &ToyCausalLM,
    q_t: &TokenBlock,
    q_v: &TokenBlock,
    q_s: Option<&TokenBlock>,
) -> Result<(Matrix, PromptLayout)> {
    let expect = [(q_t, Modality::Text), (q_v, Modality::Visual)];
    for (block, modality) in expect.into_iter().chain(q_s.map(|b| (b, Modality::Skeleton))) {
        if block.modality != modality {
            return Err(SkiError::arg("block", format!("expected {modality} tokens, got {}", block.modality)));
        }
        if block.tokens.cols() != lm.width() && !block.is_empty() {
            return Err(SkiError::shape("assemble_prompt", format!("{modality} width {}", block.tokens.cols())));
        }
        if !block.tokens.is_finite() {
            return Err(SkiError::Degenerate(format!("{modality} block has non-finite entries")));
        }
    }
    let user = lm.text_block(USER_TOKEN)?;
    let assistant = lm.text_block(ASSISTANT_TOKEN)?;
    let mut parts = vec![&user.tokens, &q_t.tokens, &q_v.tokens];
    if let Some(s) = q_s {
        parts.push(&s.tokens);
    }
    parts.push(&assistant.tokens);
    let parts: Vec<&Matrix> = parts.into_iter().filter(|m| m.rows() > 0).collect();
    let seq = Matrix::vstack(&parts)?;
    let layout = PromptLayout::new(q_t.len(), q_v.len(), q_s.map(TokenBlock::len));
    Ok((seq, layout))
}

/// Per-frame features of a frozen video encoder, one token per frame.
pub fn extract_visual_tokens(f_v: &VideoEncoder, clip: &VideoClip) -> Result<Matrix> {
    let t = f_v.tokens(clip)?;
    if t.rows() != clip.num_frames() {
        return Err(SkiError::shape("extract_visual_tokens", format!("{} tokens for {} frames", t.rows(), clip.num_frames())));
    }
    Ok(t)
}

/// Per-frame penultimate features of the SkeletonCLIP encoder.
pub fn extract_skeleton_tokens(g_s: &SkeletonEncoder, seq: &SkeletonSequence) -> Result<Matrix> {
    let t = g_s.tokens(seq)?;
    if t.rows() != seq.num_frames() {
        return Err(SkiError::shape("extract_skeleton_tokens", format!("{} tokens for {} frames", t.rows(), seq.num_frames())));
    }
    Ok(t)
}

/// Frozen features and word ids of one instruction sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LvlmSample {
    pub sample_id: u64,
    pub class_id: usize,
    pub visual: Matrix,
    pub skeleton: Matrix,
    pub query: Vec<usize>,
    /// Caption words without the end token.
    pub caption: Vec<usize>,
}

pub fn query_for(sample_id: u64) -> &'static str {
    QUERIES[(sample_id % QUERIES.len() as u64) as usize]
}

pub fn prepare_samples(
    lm: &ToyCausalLM,
    f_v: &VideoEncoder,
    g_s: &SkeletonEncoder,
    triplets: &[&Triplet],
    exec: Exec,
) -> Result<Vec<LvlmSample>> {
    try_map_indexed(exec, triplets.len(), |i| {
        let t = triplets[i];
        Ok(LvlmSample {
            sample_id: t.sample_id,
            class_id: t.class_id(),
            visual: extract_visual_tokens(f_v, &t.video)?,
            skeleton: extract_skeleton_tokens(g_s, &t.skeleton)?,
            query: lm.encode_text(query_for(t.sample_id))?,
            caption: lm.encode_text(&t.caption)?,
        })
    })
}

/// The LM plus its projectors; the skeleton projector exists only when the
/// model is trained with skeleton tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LvlmModel {
    pub lm: ToyCausalLM,
    pub proj_v: Projector,
    pub proj_s: Option<Projector>,
    pub dims: ProjectorConfig,
}

impl LvlmModel {
    /// The visual projector's initialization does not depend on
    /// `use_skeleton`, so paired runs start from the same point.
    pub fn new(cfg: &LvlmConfig, dims: ProjectorConfig, use_skeleton: bool) -> Result<Self> {
        let lm = ToyCausalLM::new(cfg)?;
        dims.validate(&lm)?;
        let proj_v = Projector::new(Modality::Visual, dims.d_v, dims.k, derive_seed(cfg.seed, &[0x7a, 0]))?;
        let proj_s = use_skeleton
            .then(|| Projector::new(Modality::Skeleton, dims.d_s, dims.k, derive_seed(cfg.seed, &[0x7a, 1])))
            .transpose()?;
        Ok(LvlmModel { lm, proj_v, proj_s, dims })
    }

    pub fn uses_skeleton(&self) -> bool {
        self.proj_s.is_some()
    }

    /// Projector arrays, visual first.
    pub fn projector_params(&self) -> ParameterSet {
        let mut ps = ParameterSet::new();
        for p in self.proj_v.params.iter().chain(self.proj_s.iter().flat_map(|s| s.params.iter())) {
            ps.add(p.name.clone(), p.value.clone(), p.trainable).expect("distinct projector names");
        }
        ps
    }
}

struct SampleGraph {
    loss: Var,
    logits: Var,
    targets: Vec<usize>,
    mask: Vec<bool>,
}

fn sample_graph(
    g: &mut Graph,
    model: &LvlmModel,
    b_lm: &Bound,
    b_v: &Bound,
    b_s: Option<&Bound>,
    s: &LvlmSample,
) -> Result<SampleGraph> {
    let lm = &model.lm;
    let mut parts = vec![lm.embed_ids(g, b_lm, &[lm.token_id(USER_TOKEN)?])?];
    if !s.query.is_empty() {
        parts.push(lm.embed_ids(g, b_lm, &s.query)?);
    }
    let vis = g.constant(s.visual.clone());
    parts.push(model.proj_v.project_graph(g, b_v, vis)?);
    if let (Some(proj), Some(b)) = (&model.proj_s, b_s) {
        let sk = g.constant(s.skeleton.clone());
        parts.push(proj.project_graph(g, b, sk)?);
    }
    parts.push(lm.embed_ids(g, b_lm, &[lm.token_id(ASSISTANT_TOKEN)?])?);
    if !s.caption.is_empty() {
        parts.push(lm.embed_ids(g, b_lm, &s.caption)?);
    }
    let x = g.concat_rows(&parts)?;
    let n = g.value(x).rows();
    let prefix = n - s.caption.len();
    let eos = lm.token_id(END_TOKEN)?;
    let mut targets = vec![0; n];
    let mut mask = vec![false; n];
    for (i, &t) in s.caption.iter().chain(std::iter::once(&eos)).enumerate() {
        targets[prefix - 1 + i] = t;
        mask[prefix - 1 + i] = true;
    }
    let logits = lm.forward(g, b_lm, x)?;
    let loss = lm_loss_graph(g, logits, &targets, &mask)?;
    Ok(SampleGraph {
        loss,
        logits,
        targets,
        mask,
    })
}

/// Token-level teacher-forced metrics over caption positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllReport {
    /// Mean negative log-likelihood per caption token (end token included).
    pub nll: f64,
    /// Fraction of positions whose argmax is the reference token.
    pub token_accuracy: f64,
    pub tokens: usize,
    pub samples: usize,
}

/// Teacher-forced NLL of `samples`; the skeleton block is included only
/// when `with_skeleton` is set.
pub fn evaluate_nll(model: &LvlmModel, samples: &[LvlmSample], with_skeleton: bool, exec: Exec) -> Result<NllReport> {
    if samples.is_empty() {
        return Err(SkiError::arg("samples", "nothing to evaluate"));
    }
    if with_skeleton && model.proj_s.is_none() {
        return Err(SkiError::arg("with_skeleton", "model has no skeleton projector"));
    }
    let per = try_map_indexed(exec, samples.len(), |i| -> Result<(f64, usize, usize)> {
        let mut g = Graph::with_exec(Exec::Sequential);
        let b_lm = model.lm.params.bind_frozen(&mut g);
        let b_v = model.proj_v.params.bind_frozen(&mut g);
        let b_s = match (&model.proj_s, with_skeleton) {
            (Some(p), true) => Some(p.params.bind_frozen(&mut g)),
            _ => None,
        };
        let sg = sample_graph(&mut g, model, &b_lm, &b_v, b_s.as_ref(), &samples[i])?;
        let ls = g.log_softmax_rows(sg.logits);
        let (lsm, logits) = (g.value(ls), g.value(sg.logits));
        let (mut nll, mut count, mut hits) = (0.0, 0, 0);
        for (p, (&t, &m)) in sg.targets.iter().zip(&sg.mask).enumerate() {
            if m {
                nll -= lsm.get(p, t);
                count += 1;
                hits += usize::from(argmax(logits.row(p)) == Some(t));
            }
        }
        Ok((nll, count, hits))
    })?;
    let (nll, tokens, hits) = per.iter().fold((0.0, 0, 0), |(a, b, c), &(x, y, z)| (a + x, b + y, c + z));
    Ok(NllReport {
        nll: nll / tokens as f64,
        token_accuracy: hits as f64 / tokens as f64,
        tokens,
        samples: samples.len(),
    })
}

/// Projector-only training on caption tokens. The skeleton block is used
/// exactly when the model has a skeleton projector. Logs phase `lvlm` per
/// epoch plus `lvlm_eval` lines (training-set NLL) before and after.
pub fn train_projectors(model: &mut LvlmModel, samples: &[LvlmSample], cfg: &LvlmConfig, record: &mut RunRecord) -> Result<()> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(SkiError::arg("samples", "no training captions"));
    }
    let lm_check = FreezeCheck::new("lm", &model.lm.params);
    let use_skeleton = model.uses_skeleton();
    let eval_line = |model: &LvlmModel, epoch: usize| -> Result<EpochRecord> {
        let r = evaluate_nll(model, samples, use_skeleton, Exec::default())?;
        let mut line = EpochRecord {
            phase: "lvlm_eval".into(),
            epoch,
            values: Default::default(),
        };
        line.values.insert("train_nll".into(), r.nll);
        line.values.insert("train_token_acc".into(), r.token_accuracy);
        Ok(line)
    };
    record.push(eval_line(model, 0)?)?;
    let mut opt_v = Sgd::new(&model.proj_v.params, cfg.momentum)?;
    let mut opt_s = model.proj_s.as_ref().map(|p| Sgd::new(&p.params, cfg.momentum)).transpose()?;
    for epoch in 0..cfg.epochs {
        let lr = epoch_lr(cfg.learning_rate, cfg.lr_schedule, epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &[0x1a7e, epoch as u64]));
        let mut stats = EpochStats::default();
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let b_lm = model.lm.params.bind_frozen(&mut g);
            let b_v = model.proj_v.params.bind(&mut g);
            let b_s = model.proj_s.as_ref().map(|p| p.params.bind(&mut g));
            let w = 1.0 / chunk.len() as f64;
            let mut terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                terms.push((sample_graph(&mut g, model, &b_lm, &b_v, b_s.as_ref(), &samples[i])?.loss, w));
            }
            let loss = g.weighted_sum(&terms)?;
            let nll = g.scalar(loss);
            let grads = g.backward(loss)?;
            let mut gv = model.proj_v.params.collect_grads(&b_v, &grads)?;
            let mut gs = match (model.proj_s.as_ref(), b_s.as_ref()) {
                (Some(p), Some(b)) => p.params.collect_grads(b, &grads)?,
                _ => Vec::new(),
            };
            let norm = clip_global_norm(&mut [&mut gv, &mut gs], cfg.grad_clip);
            stats.step(&[("nll", nll), ("grad_norm", norm)]);
            opt_v.step(&mut model.proj_v.params, &gv, lr)?;
            if let (Some(p), Some(opt)) = (model.proj_s.as_mut(), opt_s.as_mut()) {
                opt.step(&mut p.params, &gs, lr)?;
            }
        }
        record.push(stats.finish("lvlm", epoch, lr))?;
    }
    record.push(eval_line(model, cfg.epochs)?)?;
    lm_check.verify(&model.lm.params)
}

/// Greedy decoding from `user: <query> <visual> assistant:` over caption
/// words and the end token (role and padding tokens are never emitted).
/// Takes no skeleton input. Stops at the end token, after `max_len` words,
/// or when the LM context is full.
pub fn generate_caption(
    lm: &ToyCausalLM,
    proj_v: &Projector,
    f_v: &VideoEncoder,
    clip: &VideoClip,
    query: &str,
    max_len: usize,
) -> Result<String> {
    if max_len < 1 {
        return Err(SkiError::arg("max_len", "must be at least 1"));
    }
    if proj_v.modality() != Modality::Visual {
        return Err(SkiError::arg("proj_v", "not a visual projector"));
    }
    let q_v = proj_v.project(&extract_visual_tokens(f_v, clip)?)?;
    let q_t = lm.text_block(query)?;
    let (mut seq, _) = assemble_prompt(lm, &q_t, &q_v, None)?;
    let eos = lm.token_id(END_TOKEN)?;
    let banned = [lm.token_id(PAD_TOKEN)?, lm.token_id(USER_TOKEN)?, lm.token_id(ASSISTANT_TOKEN)?];
    let table = &lm.params.param(0).value;
    let mut words = Vec::new();
    while words.len() < max_len && seq.rows() < lm.max_len() {
        let logits = lm.logits(&seq)?;
        let mut last = logits.row(seq.rows() - 1).to_vec();
        for &b in &banned {
            last[b] = f64::NEG_INFINITY;
        }
        let next = argmax(&last).expect("non-empty vocabulary");
        if next == eos {
            break;
        }
        words.push(next);
        let row = Matrix::row_vector(table.row(next));
        seq = Matrix::vstack(&[&seq, &row])?;
    }
    Ok(lm.decode(&words))
}

/// Paired projector training with and without skeleton tokens on top of
/// the same frozen encoders, both evaluated without skeleton input.
#[derive(Debug, Clone, PartialEq)]
pub struct LvlmComparison {
    pub video_only: NllReport,
    pub with_skeleton: NllReport,
    /// Skeleton-trained model evaluated with its skeleton block present.
    pub with_skeleton_full: NllReport,
    pub video_only_model: LvlmModel,
    pub with_skeleton_model: LvlmModel,
    pub video_only_record: RunRecord,
    pub with_skeleton_record: RunRecord,
    pub encoder_record: RunRecord,
}

impl LvlmComparison {
    /// Held-out NLL reduction from training with skeleton tokens.
    pub fn improvement(&self) -> f64 {
        self.video_only.nll - self.with_skeleton.nll
    }
}

pub fn lvlm_fingerprint(data: &Dataset, train: &TrainConfig, cfg: &LvlmConfig, use_skeleton: bool) -> String {
    let mut kv = KvConfig::new();
    kv.merge_prefixed("data", &data.config.to_kv());
    kv.merge_prefixed("train", &train.to_kv());
    kv.merge_prefixed("lvlm", &cfg.to_kv());
    kv.set("use_skeleton", use_skeleton);
    kv.fingerprint()
}

struct LvlmSetup {
    f_v: VideoEncoder,
    g_s: SkeletonEncoder,
    encoder_record: RunRecord,
    train_samples: Vec<LvlmSample>,
    held_samples: Vec<LvlmSample>,
    dims: ProjectorConfig,
}

/// Trains SkeletonCLIP and VideoCLIP on the seen split and extracts frozen
/// tokens for the non-held-out (fit) and held-out captions of every class.
fn lvlm_setup(data: &Dataset, train: &TrainConfig, cfg: &LvlmConfig) -> Result<LvlmSetup> {
    let td = TrainData::seen_train(data)?;
    let mut models = init_models(&data.config, &data.split, train)?;
    let mut encoder_record = RunRecord::new(train.fingerprint(), train.seed);
    prepare_skeletonclip(&mut models, &td, train, &mut encoder_record)?;
    finetune_videoclip(&mut models.videoclip, &td, train, &mut encoder_record)?;
    let f_v = models.videoclip.video;
    let g_s = models.skeletonclip.skeleton;
    let lm = ToyCausalLM::new(cfg)?;
    let fit: Vec<&Triplet> = data.triplets.iter().filter(|t| !t.holdout).collect();
    let held: Vec<&Triplet> = data.triplets.iter().filter(|t| t.holdout).collect();
    let train_samples = prepare_samples(&lm, &f_v, &g_s, &fit, Exec::default())?;
    let held_samples = prepare_samples(&lm, &f_v, &g_s, &held, Exec::default())?;
    let dims = ProjectorConfig {
        d_v: f_v.d_out(),
        d_s: g_s.d_out(),
        n_v: data.config.t_v,
        n_s: data.config.t_s,
        k: cfg.width,
    };
    Ok(LvlmSetup {
        f_v,
        g_s,
        encoder_record,
        train_samples,
        held_samples,
        dims,
    })
}

impl LvlmSetup {
    fn train(&self, data: &Dataset, train: &TrainConfig, cfg: &LvlmConfig, use_skeleton: bool) -> Result<(LvlmModel, RunRecord)> {
        let video_check = FreezeCheck::new("video", &self.f_v.params);
        let skeleton_check = FreezeCheck::new("skeleton", &self.g_s.params);
        let mut model = LvlmModel::new(cfg, self.dims, use_skeleton)?;
        let mut record = RunRecord::new(lvlm_fingerprint(data, train, cfg, use_skeleton), cfg.seed);
        train_projectors(&mut model, &self.train_samples, cfg, &mut record)?;
        video_check.verify(&self.f_v.params)?;
        skeleton_check.verify(&self.g_s.params)?;
        Ok((model, record))
    }
}

/// Trains SkeletonCLIP and VideoCLIP on the seen split, freezes them, then
/// trains one LVLM per `use_skeleton` setting on the non-held-out captions
/// of every class and scores the held-out captions.
pub fn lvlm_experiment(data: &Dataset, train: &TrainConfig, cfg: &LvlmConfig) -> Result<LvlmComparison> {
    let setup = lvlm_setup(data, train, cfg)?;
    let (video_only_model, video_only_record) = setup.train(data, train, cfg, false)?;
    let (with_skeleton_model, with_skeleton_record) = setup.train(data, train, cfg, true)?;
    let held = &setup.held_samples;
    Ok(LvlmComparison {
        video_only: evaluate_nll(&video_only_model, held, false, Exec::default())?,
        with_skeleton: evaluate_nll(&with_skeleton_model, held, false, Exec::default())?,
        with_skeleton_full: evaluate_nll(&with_skeleton_model, held, true, Exec::default())?,
        video_only_model,
        with_skeleton_model,
        video_only_record,
        with_skeleton_record,
        encoder_record: setup.encoder_record,
    })
}

/// One trained LVLM with the frozen video encoder it reads from.
#[derive(Debug, Clone)]
pub struct LvlmRun {
    pub model: LvlmModel,
    pub video: VideoEncoder,
    pub record: RunRecord,
    pub encoder_record: RunRecord,
    /// Held-out NLL without skeleton input.
    pub held_visual: NllReport,
    /// Held-out NLL with the skeleton block, for skeleton-trained models.
    pub held_full: Option<NllReport>,
}

/// Single-setting variant of [`lvlm_experiment`].
pub fn lvlm_single(data: &Dataset, train: &TrainConfig, cfg: &LvlmConfig, use_skeleton: bool) -> Result<LvlmRun> {
    let setup = lvlm_setup(data, train, cfg)?;
    let (model, record) = setup.train(data, train, cfg, use_skeleton)?;
    let held = &setup.held_samples;
    let held_visual = evaluate_nll(&model, held, false, Exec::default())?;
    let held_full = use_skeleton.then(|| evaluate_nll(&model, held, true, Exec::default())).transpose()?;
    Ok(LvlmRun {
        model,
        video: setup.f_v,
        record,
        encoder_record: setup.encoder_record,
        held_visual,
        held_full,
    })
}

/// Projector weights plus everything needed to rebuild the LM.
pub fn lvlm_checkpoint(model: &LvlmModel, cfg: &LvlmConfig, fingerprint: &str) -> Checkpoint {
    let mut meta = KvConfig::new();
    meta.merge_prefixed("lvlm", &cfg.to_kv());
    meta.set("d_v", model.dims.d_v);
    meta.set("d_s", model.dims.d_s);
    meta.set("n_v", model.dims.n_v);
    meta.set("n_s", model.dims.n_s);
    meta.set("use_skeleton", model.uses_skeleton());
    Checkpoint {
        fingerprint: fingerprint.to_string(),
        meta,
        params: model.projector_params(),
    }
}

pub fn lvlm_from_checkpoint(ckpt: &Checkpoint) -> Result<(LvlmModel, LvlmConfig)> {
    let cfg = LvlmConfig::from_kv(&ckpt.meta.section("lvlm"))?;
    let need = |k: &str| -> Result<usize> {
        ckpt.meta.get(k)?.ok_or_else(|| SkiError::config(k, "missing from checkpoint metadata"))
    };
    let dims = ProjectorConfig {
        d_v: need("d_v")?,
        d_s: need("d_s")?,
        n_v: need("n_v")?,
        n_s: need("n_s")?,
        k: cfg.width,
    };
    let use_skeleton: bool = ckpt.meta.get("use_skeleton")?.unwrap_or(false);
    let mut model = LvlmModel::new(&cfg, dims, use_skeleton)?;
    let load = |p: &mut Projector| -> Result<()> {
        let name = p.params.param(0).name.clone();
        let src = ckpt
            .params
            .get(&name)
            .ok_or_else(|| SkiError::config(name.clone(), "missing from checkpoint"))?;
        if src.value.shape() != p.weight().shape() {
            return Err(SkiError::shape("lvlm_from_checkpoint", format!("`{name}` is {:?}", src.value.shape())));
        }
        p.params.param_mut(0).value = src.value.clone();
        Ok(())
    };
    load(&mut model.proj_v)?;
    if let Some(p) = model.proj_s.as_mut() {
        load(p)?;
    }
    Ok((model, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, relative_error};

    fn small_cfg() -> LvlmConfig {
        LvlmConfig {
            width: 8,
            max_len: 40,
            ..LvlmConfig::default()
        }
    }

    fn dims(k: usize) -> ProjectorConfig {
        ProjectorConfig {
            d_v: 3,
            d_s: 4,
            n_v: 2,
            n_s: 3,
            k,
        }
    }

    fn sample(lm: &ToyCausalLM, seed: u64) -> LvlmSample {
        let mut r = stream(seed, &[]);
        LvlmSample {
            sample_id: seed,
            class_id: 0,
            visual: init_normal(&mut r, 2, 3, 1.0),
            skeleton: init_normal(&mut r, 3, 4, 1.0),
            query: lm.encode_text("describe the action").unwrap(),
            caption: lm.encode_text("the person does a wave").unwrap(),
        }
    }

    #[test]
    fn lm_is_frozen_and_seeded() {
        let a = ToyCausalLM::new(&small_cfg()).unwrap();
        let b = ToyCausalLM::new(&small_cfg()).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        assert!(!a.params.any_trainable());
        let c = ToyCausalLM::new(&LvlmConfig { lm_seed: 3, ..small_cfg() }).unwrap();
        assert_ne!(a.params.checksum(), c.params.checksum());
    }

    #[test]
    fn perturbing_a_position_leaves_earlier_logits_alone() {
        for positional in [false, true] {
            let lm = ToyCausalLM::new(&LvlmConfig { positional, ..small_cfg() }).unwrap();
            let mut r = stream(4, &[]);
            let x = init_normal(&mut r, 10, 8, 1.0);
            let base = lm.logits(&x).unwrap();
            for p in [0, 4, 9] {
                let mut y = x.clone();
                for c in 0..8 {
                    y.set(p, c, y.get(p, c) + 0.7);
                }
                let out = lm.logits(&y).unwrap();
                for q in 0..p {
                    assert_eq!(out.row(q), base.row(q), "row {q} moved after perturbing {p}");
                }
                assert_ne!(out.row(p), base.row(p));
            }
        }
    }

    #[test]
    fn projector_identities() {
        let zero = Projector::from_weight(Modality::Visual, Matrix::zeros(3, 8)).unwrap();
        let tokens = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let out = zero.project(&tokens).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.tokens.data().iter().all(|&v| v == 0.0));
        let id = Projector::from_weight(Modality::Skeleton, Matrix::identity(3)).unwrap();
        assert_eq!(id.project(&tokens).unwrap().tokens, tokens);
        assert!(id.project(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn prompt_layout_matches_hand_fixture() {
        let lm = ToyCausalLM::new(&small_cfg()).unwrap();
        let q_t = lm.text_block("describe the action").unwrap();
        let q_v = TokenBlock::new(Matrix::filled(2, 8, 0.5), Modality::Visual).unwrap();
        let q_s = TokenBlock::new(Matrix::filled(3, 8, -0.5), Modality::Skeleton).unwrap();
        let (seq, layout) = assemble_prompt(&lm, &q_t, &q_v, Some(&q_s)).unwrap();
        let expected = [
            (SpanKind::User, 0, 1),
            (SpanKind::Query, 1, 3),
            (SpanKind::Visual, 4, 2),
            (SpanKind::Skeleton, 6, 3),
            (SpanKind::Assistant, 9, 1),
        ];
        let got: Vec<_> = layout.spans.iter().map(|s| (s.kind, s.start, s.len)).collect();
        assert_eq!(got, expected);
        assert_eq!(seq.rows(), 10);
        assert_eq!(seq.row(5), &[0.5; 8]);
        assert_eq!(seq.row(8), &[-0.5; 8]);
        let table = &lm.params.param(0).value;
        assert_eq!(seq.row(0), table.row(lm.token_id(USER_TOKEN).unwrap()));
        assert_eq!(seq.row(9), table.row(lm.token_id(ASSISTANT_TOKEN).unwrap()));
        let (short, l2) = assemble_prompt(&lm, &q_t, &q_v, None).unwrap();
        assert_eq!(short.rows(), seq.rows() - 3);
        assert!(l2.span(SpanKind::Skeleton).is_none());
        assert!(assemble_prompt(&lm, &q_v, &q_v, None).is_err());
    }

    #[test]
    fn projector_gradient_matches_finite_differences() {
        let cfg = small_cfg();
        let model = LvlmModel::new(&cfg, dims(8), true).unwrap();
        let s = sample(&model.lm, 9);
        let loss_of = |m: &LvlmModel, bind: bool| -> (f64, Option<(Matrix, Matrix)>) {
            let mut g = Graph::new();
            let b_lm = m.lm.params.bind_frozen(&mut g);
            let b_v = if bind { m.proj_v.params.bind(&mut g) } else { m.proj_v.params.bind_frozen(&mut g) };
            let ps = m.proj_s.as_ref().unwrap();
            let b_s = if bind { ps.params.bind(&mut g) } else { ps.params.bind_frozen(&mut g) };
            let sg = sample_graph(&mut g, m, &b_lm, &b_v, Some(&b_s), &s).unwrap();
            let l = g.scalar(sg.loss);
            if !bind {
                return (l, None);
            }
            let grads = g.backward(sg.loss).unwrap();
            (l, Some((grads.get(b_v.var(0)).unwrap().clone(), grads.get(b_s.var(0)).unwrap().clone())))
        };
        let (_, Some((gv, gs))) = loss_of(&model, true) else { panic!() };
        for (which, grad) in [(0usize, gv), (1, gs)] {
            let base = if which == 0 { model.proj_v.weight().clone() } else { model.proj_s.as_ref().unwrap().weight().clone() };
            let coords: Vec<usize> = (0..base.len()).step_by(3).take(10).collect();
            let numeric = finite_difference(&[base], 0, &coords, 1e-5, |w| {
                let mut m = model.clone();
                if which == 0 {
                    m.proj_v.params.param_mut(0).value = w[0].clone();
                } else {
                    m.proj_s.as_mut().unwrap().params.param_mut(0).value = w[0].clone();
                }
                Ok(loss_of(&m, false).0)
            })
            .unwrap();
            for (&c, n) in coords.iter().zip(numeric) {
                let err = relative_error(grad.data()[c], n);
                assert!(err < 1e-4, "projector {which} coord {c}: {} vs {n}", grad.data()[c]);
            }
        }
    }

    #[test]
    fn training_touches_only_projectors_and_lowers_nll() {
        let cfg = LvlmConfig {
            epochs: 8,
            batch_size: 2,
            ..small_cfg()
        };
        let mut model = LvlmModel::new(&cfg, dims(8), true).unwrap();
        let samples: Vec<LvlmSample> = (0..4).map(|i| sample(&model.lm, i)).collect();
        let before = model.clone();
        let mut record = RunRecord::new("t", 0);
        train_projectors(&mut model, &samples, &cfg, &mut record).unwrap();
        assert_eq!(model.lm.params.checksum(), before.lm.params.checksum());
        assert_ne!(model.proj_v.params.checksum(), before.proj_v.params.checksum());
        assert_ne!(
            model.proj_s.as_ref().unwrap().params.checksum(),
            before.proj_s.as_ref().unwrap().params.checksum()
        );
        let evals = record.phase("lvlm_eval");
        let (first, last) = (evals[0].value("train_nll").unwrap(), evals[1].value("train_nll").unwrap());
        assert!(last < first, "{first} -> {last}");
        assert_eq!(record.phase("lvlm").len(), 8);
    }

    #[test]
    fn zero_epochs_leave_projectors_unchanged() {
        let cfg = LvlmConfig { epochs: 0, ..small_cfg() };
        let mut model = LvlmModel::new(&cfg, dims(8), false).unwrap();
        let samples = vec![sample(&model.lm, 1)];
        let before = model.clone();
        train_projectors(&mut model, &samples, &cfg, &mut RunRecord::new("t", 0)).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn nll_report_counts_caption_and_end_tokens() {
        let model = LvlmModel::new(&small_cfg(), dims(8), true).unwrap();
        let samples: Vec<LvlmSample> = (0..3).map(|i| sample(&model.lm, i)).collect();
        let r = evaluate_nll(&model, &samples, false, Exec::Sequential).unwrap();
        assert_eq!(r.tokens, 3 * 6);
        assert!(r.nll.is_finite() && r.nll > 0.0);
        let par = evaluate_nll(&model, &samples, false, Exec::Parallel).unwrap();
        assert_eq!(r, par);
        let v_only = LvlmModel::new(&small_cfg(), dims(8), false).unwrap();
        assert!(evaluate_nll(&v_only, &samples, true, Exec::Sequential).is_err());
    }

    #[test]
    fn checkpoint_round_trip_restores_projectors() {
        let cfg = small_cfg();
        let mut model = LvlmModel::new(&cfg, dims(8), true).unwrap();
        model.proj_v.params.param_mut(0).value.data_mut()[0] = 42.0;
        let ckpt = lvlm_checkpoint(&model, &cfg, "fp");
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
        let (restored, rcfg) = lvlm_from_checkpoint(&back).unwrap();
        assert_eq!(rcfg, cfg);
        assert_eq!(restored, model);
    }

    #[test]
    fn config_round_trips_through_kv() {
        let cfg = LvlmConfig {
            heads: 4,
            learning_rate: 0.2,
            ..LvlmConfig::default()
        };
        assert_eq!(LvlmConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let mut kv = cfg.to_kv();
        kv.set("heads", 3);
        assert!(LvlmConfig::from_kv(&kv).is_err());
    }
}
