//! Zero-shot classification against class prompts, split reports, the
//! harmonic mean, inference-time fusion, input-gradient saliency and
//! embedding-alignment diagnostics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::encoders::TextEncoder;
use crate::error::{Result, SkiError};
use crate::par::{try_map_indexed, Exec};
use crate::primitives::l2_normalize;
use crate::rng::stream;
use crate::synthdata::{Dataset, SplitSpec, Subset, Triplet};
use crate::tensor::{dot, Matrix};
use crate::training::{SkeletonClip, VideoClipModel};
use crate::types::{Embedding, TextPrompt, VideoClip};

/// A model that places samples and class prompts in one embedding space.
pub trait EmbeddingModel: Sync {
    /// Unit-norm embedding of one sample.
    fn embed_sample(&self, sample: &Triplet) -> Result<Embedding>;
    /// Unit-norm prompt embeddings, one row per prompt.
    fn embed_prompts(&self, prompts: &[TextPrompt]) -> Result<Matrix>;
    fn fingerprint(&self) -> String;
}

impl EmbeddingModel for VideoClipModel {
    fn embed_sample(&self, sample: &Triplet) -> Result<Embedding> {
        self.video.encode(&sample.video)
    }

    fn embed_prompts(&self, prompts: &[TextPrompt]) -> Result<Matrix> {
        self.text.encode_all(prompts)
    }

    fn fingerprint(&self) -> String {
        format!("{}{}", &self.video.params.checksum()[..8], &self.text.params.checksum()[..8])
    }
}

impl EmbeddingModel for SkeletonClip {
    fn embed_sample(&self, sample: &Triplet) -> Result<Embedding> {
        self.skeleton.encode(&sample.skeleton)
    }

    fn embed_prompts(&self, prompts: &[TextPrompt]) -> Result<Matrix> {
        self.text.encode_all(prompts)
    }

    fn fingerprint(&self) -> String {
        format!("{}{}", &self.skeleton.params.checksum()[..8], &self.text.params.checksum()[..8])
    }
}

/// Embeds every sample as the text embedding of its own class prompt.
pub struct OracleModel {
    pub text: TextEncoder,
}

impl EmbeddingModel for OracleModel {
    fn embed_sample(&self, sample: &Triplet) -> Result<Embedding> {
        self.text.encode(&sample.prompt)
    }

    fn embed_prompts(&self, prompts: &[TextPrompt]) -> Result<Matrix> {
        self.text.encode_all(prompts)
    }

    fn fingerprint(&self) -> String {
        format!("oracle-{}", &self.text.params.checksum()[..8])
    }
}

/// Gaussian sample and prompt embeddings keyed by sample id / class id.
pub struct RandomModel {
    pub seed: u64,
    pub dim: usize,
}

impl RandomModel {
    fn draw(&self, path: &[u64]) -> Result<Embedding> {
        let mut rng = stream(self.seed, path);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        l2_normalize(&v)
    }
}

impl EmbeddingModel for RandomModel {
    fn embed_sample(&self, sample: &Triplet) -> Result<Embedding> {
        self.draw(&[0, sample.sample_id])
    }

    fn embed_prompts(&self, prompts: &[TextPrompt]) -> Result<Matrix> {
        let rows = prompts
            .iter()
            .map(|p| self.draw(&[1, p.class_id as u64]).map(Embedding::into_values))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    fn fingerprint(&self) -> String {
        format!("random-{}", self.seed)
    }
}

/// Prompt embeddings with their class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBank {
    pub class_ids: Vec<usize>,
    pub embeddings: Matrix,
}

impl ClassBank {
    pub fn new(model: &dyn EmbeddingModel, prompts: &[TextPrompt]) -> Result<Self> {
        if prompts.is_empty() {
            return Err(SkiError::arg("prompts", "empty prompt set"));
        }
        crate::types::check_prompt_set(prompts)?;
        Ok(ClassBank {
            class_ids: prompts.iter().map(|p| p.class_id).collect(),
            embeddings: model.embed_prompts(prompts)?,
        })
    }

    /// Cosine similarity of `z` to every class, in bank order.
    pub fn similarities(&self, z: &Embedding) -> Result<Vec<f64>> {
        if z.dim() != self.embeddings.cols() {
            return Err(SkiError::shape(
                "zero_shot",
                format!("embedding {} vs prompts {}", z.dim(), self.embeddings.cols()),
            ));
        }
        Ok(self.embeddings.row_iter().map(|r| dot(r, z.values())).collect())
    }

    /// Class id of the highest score; ties go to the lowest class id.
    pub fn best(&self, scores: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..scores.len() {
            let better = scores[i] > scores[best]
                || (scores[i] == scores[best] && self.class_ids[i] < self.class_ids[best]);
            if better {
                best = i;
            }
        }
        self.class_ids[best]
    }
}

/// Class id whose prompt is most cosine-similar to the sample embedding.
pub fn zero_shot_classify(model: &dyn EmbeddingModel, sample: &Triplet, prompts: &[TextPrompt]) -> Result<usize> {
    let bank = ClassBank::new(model, prompts)?;
    classify_with_bank(model, sample, &bank)
}

pub fn classify_with_bank(model: &dyn EmbeddingModel, sample: &Triplet, bank: &ClassBank) -> Result<usize> {
    let z = model.embed_sample(sample)?;
    let scores = bank.similarities(&z)?;
    Ok(bank.best(&scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Held-out samples of the seen classes against seen prompts.
    Seen,
    /// All samples of the unseen classes against unseen prompts.
    Unseen,
}

impl std::str::FromStr for Side {
    type Err = SkiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(Side::Seen),
            "unseen" => Ok(Side::Unseen),
            other => Err(SkiError::arg("split", format!("unknown side `{other}`"))),
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Seen => "seen",
            Side::Unseen => "unseen",
        })
    }
}

/// Field names are stable; the JSON form is the `eval` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub side: Side,
    /// Seen and unseen class ids of the split, `seen|unseen` comma lists.
    pub split: String,
    pub model_fingerprint: String,
    pub class_ids: Vec<usize>,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_count: Vec<usize>,
    /// `confusion[i][j]`: samples of `class_ids[i]` predicted as `class_ids[j]`.
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
    pub top1: f64,
}

impl ZeroShotReport {
    pub fn from_predictions(
        side: Side,
        split: &SplitSpec,
        model_fingerprint: String,
        class_ids: &[usize],
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        let index: BTreeMap<usize, usize> = class_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let n = class_ids.len();
        let mut confusion = vec![vec![0usize; n]; n];
        for &(truth, pred) in pairs {
            let (Some(&i), Some(&j)) = (index.get(&truth), index.get(&pred)) else {
                return Err(SkiError::Contract(format!("class {truth} or {pred} outside the evaluated side")));
            };
            confusion[i][j] += 1;
        }
        let per_class_count: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let per_class_accuracy = (0..n)
            .map(|i| match per_class_count[i] {
                0 => 0.0,
                k => confusion[i][i] as f64 / k as f64,
            })
            .collect();
        let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
        let samples = pairs.len();
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        Ok(ZeroShotReport {
            side,
            split: format!("{}|{}", join(&split.seen_class_ids), join(&split.unseen_class_ids)),
            model_fingerprint,
            class_ids: class_ids.to_vec(),
            per_class_accuracy,
            per_class_count,
            confusion,
            samples,
            top1: if samples == 0 { 0.0 } else { correct as f64 / samples as f64 },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn side_samples<'a>(dataset: &'a Dataset, split: &SplitSpec, side: Side) -> Result<(Vec<&'a Triplet>, Vec<usize>)> {
    if split != &dataset.split {
        let mut ids: Vec<usize> = dataset.classes.iter().map(|c| c.class_id).collect();
        ids.sort_unstable();
        if split.all_classes() != ids {
            return Err(SkiError::arg("split", "split classes do not match the dataset classes"));
        }
    }
    let classes = match side {
        Side::Seen => split.seen_class_ids.clone(),
        Side::Unseen => split.unseen_class_ids.clone(),
    };
    let samples = dataset
        .triplets
        .iter()
        .filter(|t| match side {
            Side::Seen => split.is_seen(t.class_id()) && t.holdout,
            Side::Unseen => split.is_unseen(t.class_id()),
        })
        .collect();
    Ok((samples, classes))
}

/// Zero-shot report for one side of `split`.
pub fn evaluate_split(model: &dyn EmbeddingModel, dataset: &Dataset, split: &SplitSpec, side: Side) -> Result<ZeroShotReport> {
    evaluate_split_with(model, dataset, split, side, Exec::default())
}

pub fn evaluate_split_with(
    model: &dyn EmbeddingModel,
    dataset: &Dataset,
    split: &SplitSpec,
    side: Side,
    exec: Exec,
) -> Result<ZeroShotReport> {
    let (samples, classes) = side_samples(dataset, split, side)?;
    let bank = ClassBank::new(model, &dataset.prompts(&classes)?)?;
    let preds = try_map_indexed(exec, samples.len(), |i| classify_with_bank(model, samples[i], &bank))?;
    let pairs: Vec<(usize, usize)> = samples.iter().map(|t| t.class_id()).zip(preds).collect();
    ZeroShotReport::from_predictions(side, split, model.fingerprint(), &classes, &pairs)
}

/// `n / Σ 1/vᵢ`.
pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(SkiError::arg("values", "empty list"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(SkiError::arg("values", format!("{v} is not a positive accuracy")));
    }
    Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

/// Class id maximizing the mean of two similarity rows over the same classes.
pub fn fuse_scores(video: &[f64], video_ids: &[usize], skeleton: &[f64], skeleton_ids: &[usize]) -> Result<usize> {
    if video_ids != skeleton_ids || video.len() != video_ids.len() || skeleton.len() != skeleton_ids.len() {
        return Err(SkiError::arg("prompts", "video and skeleton scores cover different classes"));
    }
    let bank = ClassBank {
        class_ids: video_ids.to_vec(),
        embeddings: Matrix::zeros(0, 0),
    };
    let mean: Vec<f64> = video.iter().zip(skeleton).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(bank.best(&mean))
}

/// Inference-time fusion of VideoCLIP and SkeletonCLIP similarity rows.
pub fn fusion_classify(
    videoclip: &VideoClipModel,
    skeletonclip: &SkeletonClip,
    sample: &Triplet,
    prompts: &[TextPrompt],
) -> Result<usize> {
    let vb = ClassBank::new(videoclip, prompts)?;
    let sb = ClassBank::new(skeletonclip, prompts)?;
    fusion_with_banks(videoclip, &vb, skeletonclip, &sb, sample)
}

fn fusion_with_banks(
    videoclip: &VideoClipModel,
    vb: &ClassBank,
    skeletonclip: &SkeletonClip,
    sb: &ClassBank,
    sample: &Triplet,
) -> Result<usize> {
    let v = vb.similarities(&videoclip.embed_sample(sample)?)?;
    let s = sb.similarities(&skeletonclip.embed_sample(sample)?)?;
    fuse_scores(&v, &vb.class_ids, &s, &sb.class_ids)
}

pub fn evaluate_fusion_split(
    videoclip: &VideoClipModel,
    skeletonclip: &SkeletonClip,
    dataset: &Dataset,
    split: &SplitSpec,
    side: Side,
) -> Result<ZeroShotReport> {
    let (samples, classes) = side_samples(dataset, split, side)?;
    let prompts = dataset.prompts(&classes)?;
    let vb = ClassBank::new(videoclip, &prompts)?;
    let sb = ClassBank::new(skeletonclip, &prompts)?;
    let preds = try_map_indexed(Exec::default(), samples.len(), |i| {
        fusion_with_banks(videoclip, &vb, skeletonclip, &sb, samples[i])
    })?;
    let pairs: Vec<(usize, usize)> = samples.iter().map(|t| t.class_id()).zip(preds).collect();
    let fp = format!("fusion-{}-{}", videoclip.fingerprint(), skeletonclip.fingerprint());
    ZeroShotReport::from_predictions(side, split, fp, &classes, &pairs)
}

/// Non-negative `T_v x H x W` map, row-major by frame then pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn get(&self, t: usize, y: usize, x: usize) -> f64 {
        self.values[(t * self.height + y) * self.width + x]
    }

    /// Mean inside and outside a mask of the same layout.
    pub fn mask_means(&self, mask: &[bool]) -> Result<(f64, f64)> {
        if mask.len() != self.values.len() {
            return Err(SkiError::shape("mask_means", format!("{} mask bits for {} values", mask.len(), self.values.len())));
        }
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &m) in self.values.iter().zip(mask) {
            if m {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
        if ni == 0 || no == 0 {
            return Err(SkiError::Degenerate("mask is empty or full".into()));
        }
        Ok((si / ni as f64, so / no as f64))
    }

    /// Binary grayscale PGM with frames side by side, scaled to the maximum.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        let cols = self.width * self.frames;
        let mut out = format!("P5\n{} {}\n255\n", cols, self.height).into_bytes();
        for y in 0..self.height {
            for t in 0..self.frames {
                for x in 0..self.width {
                    let v = if max > 0.0 { self.get(t, y, x) / max } else { 0.0 };
                    out.push((v * 255.0).round() as u8);
                }
            }
        }
        std::fs::write(path, out).map_err(|e| SkiError::io(format!("writing {}", path.display()), e))
    }

    /// Raw little-endian `f64` values in map order.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| SkiError::io(format!("creating {}", path.display()), e))?;
        for v in &self.values {
            f.write_all(&v.to_le_bytes())
                .map_err(|e| SkiError::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}

/// Gradient of the cosine similarity between the clip and the prompt with
/// respect to the (centered) input pixels.
pub fn input_gradient(model: &VideoClipModel, clip: &VideoClip, prompt: &TextPrompt) -> Result<Matrix> {
    let text = model.text.encode(prompt)?;
    let mut g = Graph::with_exec(Exec::Sequential);
    let b = model.video.params.bind_frozen(&mut g);
    let x = g.leaf(model.video.input_matrix(&[clip])?, true);
    let z = model.video.embed_input(&mut g, &b, x)?;
    let t = g.constant(Matrix::row_vector(text.values()));
    let sim = g.matmul_nt(z, t)?;
    let sim = g.sum(sim);
    let mut grads = g.backward(sim)?;
    let grad = grads.take(x).unwrap_or_else(|| Matrix::zeros(g.value(x).rows(), g.value(x).cols()));
    if !grad.is_finite() {
        return Err(SkiError::NonFiniteGradient("input".into()));
    }
    Ok(grad)
}

/// Per-pixel L2 norm over channels of [`input_gradient`].
pub fn saliency_map(model: &VideoClipModel, clip: &VideoClip, prompt: &TextPrompt) -> Result<SaliencyMap> {
    let grad = input_gradient(model, clip, prompt)?;
    let d = clip.dims();
    let pixels = d.pixels();
    let mut values = vec![0.0; clip.num_frames() * pixels];
    for t in 0..clip.num_frames() {
        let row = grad.row(t);
        for p in 0..pixels {
            let s: f64 = (0..d.channels).map(|c| row[c * pixels + p].powi(2)).sum();
            values[t * pixels + p] = s.sqrt();
        }
    }
    Ok(SaliencyMap {
        frames: clip.num_frames(),
        height: d.height,
        width: d.width,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub class_ids: Vec<usize>,
    /// Mean cosine similarity between each class prompt and its samples.
    pub per_class_mean: Vec<f64>,
    pub overall_mean: f64,
}

/// Per-class mean cosine similarity between the class prompt embedding and
/// the embeddings of that class's samples in `subset`.
pub fn alignment_report(model: &dyn EmbeddingModel, dataset: &Dataset, subset: Subset, class_ids: &[usize]) -> Result<AlignmentReport> {
    let prompts = dataset.prompts(class_ids)?;
    let bank = ClassBank::new(model, &prompts)?;
    let samples = dataset.subset(subset);
    let mut per_class_mean = Vec::with_capacity(class_ids.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &c) in class_ids.iter().enumerate() {
        let members: Vec<&Triplet> = samples.iter().copied().filter(|t| t.class_id() == c).collect();
        if members.is_empty() {
            return Err(SkiError::arg("class_ids", format!("class {c} has no samples in {subset:?}")));
        }
        let row = bank.embeddings.row(i);
        let sims = try_map_indexed(Exec::default(), members.len(), |k| {
            Ok::<f64, SkiError>(dot(row, model.embed_sample(members[k])?.values()))
        })?;
        let sum: f64 = sims.iter().sum();
        per_class_mean.push(sum / members.len() as f64);
        total += sum;
        count += members.len();
    }
    Ok(AlignmentReport {
        class_ids: class_ids.to_vec(),
        per_class_mean,
        overall_mean: total / count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, relative_error};
    use crate::encoders::EncoderConfig;
    use crate::synthdata::{generate_dataset, DatasetConfig};
    use crate::training::{init_models, TrainConfig};

    fn small() -> (Dataset, VideoClipModel) {
        let cfg = DatasetConfig {
            num_classes: 4,
            samples_per_class: 4,
            height: 16,
            width: 16,
            t_v: 3,
            t_s: 6,
            seen_ratio: 0.5,
            ..DatasetConfig::default()
        };
        let data = generate_dataset(&cfg).unwrap();
        let tc = TrainConfig {
            model: EncoderConfig {
                hidden: vec![8],
                d_out: 6,
                text_embed: 4,
                text_hidden: 8,
                text_len: 12,
            },
            ..TrainConfig::default()
        };
        let m = init_models(&data.config, &data.split, &tc).unwrap();
        (data, m.videoclip)
    }

    #[test]
    fn oracle_scores_perfectly() {
        let (data, model) = small();
        let oracle = OracleModel { text: model.text.clone() };
        let r = evaluate_split(&oracle, &data, &data.split, Side::Unseen).unwrap();
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.per_class_count.iter().sum::<usize>(), r.samples);
        let a = alignment_report(&oracle, &data, Subset::Unseen, &data.split.unseen_class_ids).unwrap();
        assert!(a.per_class_mean.iter().all(|m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn report_matches_a_hand_count() {
        let split = SplitSpec::new(vec![0, 1], vec![2, 3]).unwrap();
        let pairs = [(2, 2), (2, 3), (3, 3), (3, 3), (2, 2)];
        let r = ZeroShotReport::from_predictions(Side::Unseen, &split, "m".into(), &[2, 3], &pairs).unwrap();
        assert_eq!(r.top1, 4.0 / 5.0);
        assert_eq!(r.per_class_accuracy, vec![2.0 / 3.0, 1.0]);
        assert_eq!(r.confusion, vec![vec![2, 1], vec![0, 2]]);
        assert!(ZeroShotReport::from_predictions(Side::Unseen, &split, "m".into(), &[2, 3], &[(0, 2)]).is_err());
    }

    #[test]
    fn ties_go_to_the_lowest_class_id() {
        let bank = ClassBank {
            class_ids: vec![5, 2, 9],
            embeddings: Matrix::zeros(3, 1),
        };
        assert_eq!(bank.best(&[0.3, 0.3, 0.1]), 2);
        assert_eq!(bank.best(&[0.0, 0.0, 0.0]), 2);
    }

    #[test]
    fn harmonic_mean_values() {
        assert!((harmonic_mean(&[52.0, 77.5]).unwrap() - 62.239).abs() < 1e-3);
        assert!((harmonic_mean(&[53.3, 70.8]).unwrap() - 60.816).abs() < 1e-3);
        assert!((harmonic_mean(&[3.0, 3.0]).unwrap() - 3.0).abs() < 1e-15);
        assert!(harmonic_mean(&[1.0, 0.0]).is_err());
        assert!(harmonic_mean(&[]).is_err());
    }

    #[test]
    fn fusion_with_a_uniform_side_follows_the_other() {
        let ids = [4, 6, 7];
        assert_eq!(fuse_scores(&[0.1, 0.9, 0.2], &ids, &[0.5; 3], &ids).unwrap(), 6);
        assert_eq!(fuse_scores(&[0.1, 0.9, 0.2], &ids, &[0.1, 0.9, 0.2], &ids).unwrap(), 6);
        assert!(fuse_scores(&[0.1, 0.9, 0.2], &ids, &[0.5; 3], &[4, 6, 8]).is_err());
    }

    #[test]
    fn saliency_matches_finite_differences() {
        let (data, model) = small();
        let t = &data.triplets[0];
        let grad = input_gradient(&model, &t.video, &t.prompt).unwrap();
        let text = model.text.encode(&t.prompt).unwrap();
        let x0 = model.video.input_matrix(&[&t.video]).unwrap();
        let coords: Vec<usize> = (0..10).map(|k| (k * 7919) % x0.len()).collect();
        let numeric = finite_difference(&[x0], 0, &coords, 1e-5, |xs| {
            let mut g = Graph::new();
            let b = model.video.params.bind_frozen(&mut g);
            let x = g.constant(xs[0].clone());
            let z = model.video.embed_input(&mut g, &b, x)?;
            Ok(dot(g.value(z).row(0), text.values()))
        })
        .unwrap();
        for (&c, &n) in coords.iter().zip(&numeric) {
            assert!(relative_error(grad.data()[c], n) < 1e-3, "coordinate {c}");
        }
        let map = saliency_map(&model, &t.video, &t.prompt).unwrap();
        assert!(map.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn input_independent_model_has_zero_saliency() {
        let (data, mut model) = small();
        let i = model.video.params.index_of("video.l0.w").unwrap();
        model.video.params.param_mut(i).value.data_mut().fill(0.0);
        let b = model.video.params.index_of("video.l0.b").unwrap();
        model.video.params.param_mut(b).value.data_mut().fill(0.3);
        let t = &data.triplets[1];
        let map = saliency_map(&model, &t.video, &t.prompt).unwrap();
        assert!(map.values.iter().all(|v| *v == 0.0));
    }
}
