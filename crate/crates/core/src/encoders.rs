//! Per-frame MLP encoders for video and skeletons, a bag-of-positions text
//! encoder, and the skeleton classifier head.
//!
//! Every encoder owns a [`ParameterSet`] and exposes two surfaces: graph
//! builders (`*_batch`) that take bound parameter variables so training can
//! differentiate through them, and plain `encode` helpers for inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Result, SkiError};
use crate::kvconfig::KvConfig;
use crate::params::{init_normal, init_weight, Bound, ParameterSet};
use crate::par::Exec;
use crate::rng::derive_seed;
use crate::synthdata::grammar::{self, PAD_TOKEN};
use crate::tensor::Matrix;
use crate::types::{Embedding, FrameDims, SkeletonSequence, TextPrompt, VideoClip};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub d_out: usize,
    pub text_embed: usize,
    pub text_hidden: usize,
    pub text_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: vec![64, 64],
            d_out: 32,
            text_embed: 16,
            text_hidden: 64,
            text_len: 12,
        }
    }
}

const ENCODER_KEYS: [&str; 5] = ["hidden", "d_out", "text_embed", "text_hidden", "text_len"];

impl EncoderConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(&ENCODER_KEYS, "model")?;
        let d = EncoderConfig::default();
        let cfg = EncoderConfig {
            hidden: kv.get_list("hidden")?.unwrap_or(d.hidden),
            d_out: kv.get_or("d_out", d.d_out)?,
            text_embed: kv.get_or("text_embed", d.text_embed)?,
            text_hidden: kv.get_or("text_hidden", d.text_hidden)?,
            text_len: kv.get_or("text_len", d.text_len)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set(
            "hidden",
            self.hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        kv.set("d_out", self.d_out);
        kv.set("text_embed", self.text_embed);
        kv.set("text_hidden", self.text_hidden);
        kv.set("text_len", self.text_len);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(SkiError::config("hidden", "layer widths must be positive"));
        }
        for (f, v) in [
            ("d_out", self.d_out),
            ("text_embed", self.text_embed),
            ("text_hidden", self.text_hidden),
            ("text_len", self.text_len),
        ] {
            if v == 0 {
                return Err(SkiError::config(f, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Adds `prefix.l{i}.w` / `prefix.l{i}.b` for consecutive `dims`.
fn add_mlp(ps: &mut ParameterSet, prefix: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
    for (i, w) in dims.windows(2).enumerate() {
        ps.add(format!("{prefix}.l{i}.w"), init_weight(rng, w[0], w[1], 1.0), true)?;
        ps.add(format!("{prefix}.l{i}.b"), Matrix::zeros(1, w[1]), true)?;
    }
    Ok(())
}

/// Runs the MLP whose parameters start at `first` in `bound`; tanh on every
/// layer but the last.
fn mlp_forward(g: &mut Graph, bound: &Bound, first: usize, layers: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        h = g.matmul(h, bound.var(first + 2 * l))?;
        h = g.add_row(h, bound.var(first + 2 * l + 1))?;
        if l + 1 < layers {
            h = g.tanh(h);
        }
    }
    Ok(h)
}

fn layer_dims(input: usize, cfg: &EncoderConfig) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(&cfg.hidden);
    dims.push(cfg.d_out);
    dims
}

fn inference_graph() -> Graph {
    Graph::with_exec(Exec::Sequential)
}

/// Per-frame pixel MLP followed by temporal mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEncoder {
    pub params: ParameterSet,
    frame: FrameDims,
    num_frames: usize,
    layers: usize,
    d_out: usize,
}

impl VideoEncoder {
    pub fn new(cfg: &EncoderConfig, frame: FrameDims, num_frames: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dims = layer_dims(frame.len(), cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x71de0]));
        let mut params = ParameterSet::new();
        add_mlp(&mut params, "video", &dims, &mut rng)?;
        Ok(VideoEncoder {
            params,
            frame,
            num_frames,
            layers: dims.len() - 1,
            d_out: cfg.d_out,
        })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn frame_dims(&self) -> FrameDims {
        self.frame
    }

    /// `(B*T_v) x (C*H*W)` input rows, centered at zero.
    pub fn input_matrix(&self, clips: &[&VideoClip]) -> Result<Matrix> {
        let width = self.frame.len();
        let mut data = Vec::with_capacity(clips.len() * self.num_frames * width);
        for c in clips {
            if c.dims() != self.frame || c.num_frames() != self.num_frames {
                return Err(SkiError::shape(
                    "encode_video",
                    format!(
                        "clip {}x{:?} vs encoder {}x{:?}",
                        c.num_frames(),
                        c.dims(),
                        self.num_frames,
                        self.frame
                    ),
                ));
            }
            data.extend(c.data().iter().map(|&v| v as f64 - 0.5));
        }
        Matrix::from_vec(clips.len() * self.num_frames, width, data)
    }

    /// Per-frame features (before pooling) of an input built by [`Self::input_matrix`].
    pub fn frame_features(&self, g: &mut Graph, bound: &Bound, input: Var) -> Result<Var> {
        mlp_forward(g, bound, 0, self.layers, input)
    }

    /// Normalized `B x D` embeddings of an input built by [`Self::input_matrix`].
    pub fn embed_input(&self, g: &mut Graph, bound: &Bound, input: Var) -> Result<Var> {
        let f = self.frame_features(g, bound, input)?;
        let pooled = g.group_mean(f, self.num_frames)?;
        g.normalize_rows(pooled)
    }

    pub fn encode_batch(&self, g: &mut Graph, bound: &Bound, clips: &[&VideoClip]) -> Result<Var> {
        let x = self.input_matrix(clips)?;
        let x = g.constant(x);
        self.embed_input(g, bound, x)
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<Embedding> {
        let mut g = inference_graph();
        let b = self.params.bind_frozen(&mut g);
        let z = self.encode_batch(&mut g, &b, &[clip])?;
        Ok(Embedding::unit_unchecked(g.value(z).row(0).to_vec()))
    }

    /// `T_v x D` per-frame features of one clip.
    pub fn tokens(&self, clip: &VideoClip) -> Result<Matrix> {
        let mut g = inference_graph();
        let b = self.params.bind_frozen(&mut g);
        let x = self.input_matrix(&[clip])?;
        let x = g.constant(x);
        let f = self.frame_features(&mut g, &b, x)?;
        Ok(g.value(f).clone())
    }
}

/// Per-frame joint MLP whose last layer is the penultimate (feature) layer
/// of the skeleton classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonEncoder {
    pub params: ParameterSet,
    num_frames: usize,
    num_joints: usize,
    layers: usize,
    d_out: usize,
}

impl SkeletonEncoder {
    pub fn new(cfg: &EncoderConfig, num_frames: usize, num_joints: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dims = layer_dims(num_joints * 3, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5ce1]));
        let mut params = ParameterSet::new();
        add_mlp(&mut params, "skeleton", &dims, &mut rng)?;
        Ok(SkeletonEncoder {
            params,
            num_frames,
            num_joints,
            layers: dims.len() - 1,
            d_out: cfg.d_out,
        })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn input_matrix(&self, seqs: &[&SkeletonSequence]) -> Result<Matrix> {
        let width = self.num_joints * 3;
        let mut data = Vec::with_capacity(seqs.len() * self.num_frames * width);
        for s in seqs {
            if s.num_joints() != self.num_joints || s.num_frames() != self.num_frames {
                return Err(SkiError::shape(
                    "encode_skeleton",
                    format!(
                        "sequence {}x{} vs encoder {}x{}",
                        s.num_frames(),
                        s.num_joints(),
                        self.num_frames,
                        self.num_joints
                    ),
                ));
            }
            data.extend_from_slice(s.data());
        }
        Matrix::from_vec(seqs.len() * self.num_frames, width, data)
    }

    pub fn frame_features(&self, g: &mut Graph, bound: &Bound, input: Var) -> Result<Var> {
        mlp_forward(g, bound, 0, self.layers, input)
    }

    /// Temporal mean of the penultimate features, `B x D`, not normalized.
    pub fn pooled_batch(&self, g: &mut Graph, bound: &Bound, seqs: &[&SkeletonSequence]) -> Result<Var> {
        let x = self.input_matrix(seqs)?;
        let x = g.constant(x);
        let f = self.frame_features(g, bound, x)?;
        g.group_mean(f, self.num_frames)
    }

    pub fn encode_batch(&self, g: &mut Graph, bound: &Bound, seqs: &[&SkeletonSequence]) -> Result<Var> {
        let pooled = self.pooled_batch(g, bound, seqs)?;
        g.normalize_rows(pooled)
    }

    pub fn encode(&self, seq: &SkeletonSequence) -> Result<Embedding> {
        let mut g = inference_graph();
        let b = self.params.bind_frozen(&mut g);
        let z = self.encode_batch(&mut g, &b, &[seq])?;
        Ok(Embedding::unit_unchecked(g.value(z).row(0).to_vec()))
    }

    pub fn tokens(&self, seq: &SkeletonSequence) -> Result<Matrix> {
        let mut g = inference_graph();
        let b = self.params.bind_frozen(&mut g);
        let x = self.input_matrix(&[seq])?;
        let x = g.constant(x);
        let f = self.frame_features(&mut g, &b, x)?;
        Ok(g.value(f).clone())
    }
}

/// Token embeddings plus positional embeddings, concatenated over a fixed
/// number of positions, then an MLP to `d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub params: ParameterSet,
    vocab: Vec<&'static str>,
    len: usize,
    layers: usize,
    d_out: usize,
}

impl TextEncoder {
    /// `name` prefixes parameter names so two instances can share a run;
    /// the initialization depends only on `seed`.
    pub fn new(cfg: &EncoderConfig, name: &str, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let vocab = grammar::vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7e47]));
        let mut params = ParameterSet::new();
        params.add(format!("{name}.tok"), init_normal(&mut rng, vocab.len(), cfg.text_embed, 1.0), true)?;
        params.add(format!("{name}.pos"), init_normal(&mut rng, cfg.text_len, cfg.text_embed, 0.5), true)?;
        let dims = [cfg.text_len * cfg.text_embed, cfg.text_hidden, cfg.d_out];
        add_mlp(&mut params, name, &dims, &mut rng)?;
        Ok(TextEncoder {
            params,
            vocab,
            len: cfg.text_len,
            layers: 2,
            d_out: cfg.d_out,
        })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn vocab(&self) -> &[&'static str] {
        &self.vocab
    }

    pub fn is_frozen(&self) -> bool {
        !self.params.any_trainable()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params.set_trainable(!frozen);
    }

    /// Word ids padded to the encoder length.
    pub fn token_ids(&self, prompt: &TextPrompt) -> Result<Vec<usize>> {
        let mut ids = grammar::encode_words(&self.vocab, &prompt.text)?;
        if ids.len() > self.len {
            return Err(SkiError::arg(
                "prompt",
                format!("{} words exceed the text length {}", ids.len(), self.len),
            ));
        }
        let pad = self.vocab.iter().position(|w| *w == PAD_TOKEN).expect("pad in vocabulary");
        ids.resize(self.len, pad);
        Ok(ids)
    }

    pub fn encode_batch(&self, g: &mut Graph, bound: &Bound, prompts: &[TextPrompt]) -> Result<Var> {
        let ids = prompts.iter().map(|p| self.token_ids(p)).collect::<Result<Vec<_>>>()?;
        let (tok, pos) = (bound.var(0), bound.var(1));
        let mut cols = Vec::with_capacity(self.len);
        for p in 0..self.len {
            let column: Vec<usize> = ids.iter().map(|row| row[p]).collect();
            let e = g.gather_rows(tok, column)?;
            let pe = g.slice_rows(pos, p, 1)?;
            cols.push(g.add_row(e, pe)?);
        }
        let x = g.concat_cols(&cols)?;
        let h = mlp_forward(g, bound, 2, self.layers, x)?;
        g.normalize_rows(h)
    }

    pub fn encode(&self, prompt: &TextPrompt) -> Result<Embedding> {
        let mut g = inference_graph();
        let b = self.params.bind_frozen(&mut g);
        let z = self.encode_batch(&mut g, &b, std::slice::from_ref(prompt))?;
        Ok(Embedding::unit_unchecked(g.value(z).row(0).to_vec()))
    }

    /// Normalized embeddings of many prompts as a `C x D` matrix.
    pub fn encode_all(&self, prompts: &[TextPrompt]) -> Result<Matrix> {
        let mut g = inference_graph();
        let b = self.params.bind_frozen(&mut g);
        let z = self.encode_batch(&mut g, &b, prompts)?;
        Ok(g.value(z).clone())
    }
}

/// Linear classifier over pooled skeleton features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub params: ParameterSet,
    num_classes: usize,
}

impl ClassifierHead {
    pub fn new(d_in: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(SkiError::arg("num_classes", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x4ead]));
        let mut params = ParameterSet::new();
        params.add("head.w", init_weight(&mut rng, d_in, num_classes, 1.0), true)?;
        params.add("head.b", Matrix::zeros(1, num_classes), true)?;
        Ok(ClassifierHead { params, num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn logits(&self, g: &mut Graph, bound: &Bound, pooled: Var) -> Result<Var> {
        let (d, _) = self.params.param(0).value.shape();
        if g.value(pooled).cols() != d {
            return Err(SkiError::shape("classify", format!("features {} vs head {d}", g.value(pooled).cols())));
        }
        let h = g.matmul(pooled, bound.var(0))?;
        g.add_row(h, bound.var(1))
    }
}

/// Class logits of one sequence.
pub fn classify_skeleton(head: &ClassifierHead, encoder: &SkeletonEncoder, seq: &SkeletonSequence) -> Result<Vec<f64>> {
    let mut g = inference_graph();
    let eb = encoder.params.bind_frozen(&mut g);
    let hb = head.params.bind_frozen(&mut g);
    let pooled = encoder.pooled_batch(&mut g, &eb, &[seq])?;
    let logits = head.logits(&mut g, &hb, pooled)?;
    Ok(g.value(logits).row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{cosine_similarity, l2_normalize};
    use crate::synthdata::{composition, grammar::class_prompt};

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            hidden: vec![8],
            d_out: 6,
            text_embed: 4,
            text_hidden: 8,
            text_len: 10,
        }
    }

    fn dims() -> FrameDims {
        FrameDims {
            channels: 1,
            height: 4,
            width: 4,
        }
    }

    #[test]
    fn constant_clip_pools_to_its_frame_feature() {
        let enc = VideoEncoder::new(&small_cfg(), dims(), 3, 1).unwrap();
        let frame: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let clip = VideoClip::new(frame.repeat(3), 3, dims(), 0).unwrap();
        let tokens = enc.tokens(&clip).unwrap();
        let expect = l2_normalize(tokens.row(0)).unwrap();
        let got = enc.encode(&clip).unwrap();
        for (a, b) in got.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((got.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skeleton_encoding_ignores_frame_order() {
        let enc = SkeletonEncoder::new(&small_cfg(), 3, 2, 4).unwrap();
        let data: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = SkeletonSequence::new(data.clone(), 3, 2, 0, 0).unwrap();
        let mut perm = data[12..].to_vec();
        perm.extend_from_slice(&data[..12]);
        let b = SkeletonSequence::new(perm, 3, 2, 0, 0).unwrap();
        let (ea, eb) = (enc.encode(&a).unwrap(), enc.encode(&b).unwrap());
        for (x, y) in ea.values().iter().zip(eb.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn text_encoders_with_one_seed_agree() {
        let cfg = EncoderConfig::default();
        let ft = TextEncoder::new(&cfg, "text_v", 9).unwrap();
        let gt = TextEncoder::new(&cfg, "text_s", 9).unwrap();
        for k in 0..12 {
            let (m, l) = composition(k);
            let p = TextPrompt::new(class_prompt(m, l), k, "t").unwrap();
            assert_eq!(ft.encode(&p).unwrap(), gt.encode(&p).unwrap());
        }
    }

    #[test]
    fn distinct_prompts_embed_differently() {
        let t = TextEncoder::new(&EncoderConfig::default(), "text", 3).unwrap();
        let embs: Vec<Embedding> = (0..12)
            .map(|k| {
                let (m, l) = composition(k);
                t.encode(&TextPrompt::new(class_prompt(m, l), k, "t").unwrap()).unwrap()
            })
            .collect();
        for i in 0..12 {
            for j in i + 1..12 {
                assert!(cosine_similarity(&embs[i], &embs[j]).unwrap() < 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn out_of_vocabulary_is_named() {
        let t = TextEncoder::new(&EncoderConfig::default(), "text", 3).unwrap();
        let err = t.encode(&TextPrompt::new("a person juggling", 0, "t").unwrap()).unwrap_err();
        assert!(err.to_string().contains("juggling"), "{err}");
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let enc = SkeletonEncoder::new(&small_cfg(), 2, 2, 1).unwrap();
        let mut head = ClassifierHead::new(6, 4, 1).unwrap();
        head.params.iter_mut().for_each(|p| p.value = Matrix::zeros(p.value.rows(), p.value.cols()));
        let seq = SkeletonSequence::new(vec![0.3; 12], 2, 2, 0, 0).unwrap();
        assert_eq!(classify_skeleton(&head, &enc, &seq).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let enc = VideoEncoder::new(&small_cfg(), dims(), 3, 1).unwrap();
        let clip = VideoClip::new(vec![0.0; 32], 2, dims(), 0).unwrap();
        assert!(enc.encode(&clip).is_err());
    }
}
