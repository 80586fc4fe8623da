//! Procedural skeleton/video/text benchmark with controllable ADL-style
//! difficulty.
//!
//! Classes are compositions of a motion (wave, raise, swing) and a limb
//! (left/right arm/leg). ADL-like classes share one appearance distribution,
//! so only kinematics separate them; web-like classes additionally carry a
//! class-specific color scheme.

pub mod container;
pub mod grammar;
pub mod render;
pub mod skeleton;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkiError};
use crate::kvconfig::KvConfig;
use crate::par::{try_map_indexed, Exec};
use crate::rng;
use crate::types::{FrameDims, SkeletonSequence, TextPrompt, VideoClip};

pub use render::{render_skeleton_to_frames, Appearance, RenderConfig};
pub use skeleton::{Camera, Limb, Motion, MotionSample, NUM_JOINTS};

/// Number of distinct (motion, limb) compositions.
pub const MAX_CLASSES: usize = Motion::ALL.len() * Limb::ALL.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub t_s: usize,
    pub t_v: usize,
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub adl_fraction: f64,
    pub viewpoint_spread: f64,
    pub motion_subtlety: f64,
    pub pixel_noise: f64,
    pub joint_noise: f64,
    pub seen_ratio: f64,
    /// Fraction of each class's samples held out from training.
    pub holdout_fraction: f64,
    pub epsilon_appearance: f64,
    pub epsilon_motion: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_classes: 10,
            samples_per_class: 20,
            t_s: 16,
            t_v: 8,
            joints: NUM_JOINTS,
            height: 32,
            width: 32,
            channels: 3,
            adl_fraction: 1.0,
            viewpoint_spread: std::f64::consts::FRAC_PI_2,
            motion_subtlety: 0.5,
            pixel_noise: 0.05,
            joint_noise: 0.01,
            seen_ratio: 0.8,
            holdout_fraction: 0.25,
            epsilon_appearance: 0.08,
            epsilon_motion: 0.005,
            seed: 7,
        }
    }
}

const DATA_KEYS: [&str; 18] = [
    "num_classes",
    "samples_per_class",
    "t_s",
    "t_v",
    "joints",
    "height",
    "width",
    "channels",
    "adl_fraction",
    "viewpoint_spread",
    "motion_subtlety",
    "pixel_noise",
    "joint_noise",
    "seen_ratio",
    "holdout_fraction",
    "epsilon_appearance",
    "epsilon_motion",
    "seed",
];

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_classes", self.num_classes),
            ("samples_per_class", self.samples_per_class),
            ("t_s", self.t_s),
            ("t_v", self.t_v),
        ];
        for (field, v) in counts {
            if v < 1 {
                return Err(SkiError::config(field, "must be at least 1"));
            }
        }
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return Err(SkiError::config("num_classes", format!("must be in 2..={MAX_CLASSES}")));
        }
        if self.joints != NUM_JOINTS {
            return Err(SkiError::config("joints", format!("the skeleton topology has {NUM_JOINTS} joints")));
        }
        if self.height < 16 || self.width < 16 {
            return Err(SkiError::config("height/width", "must be at least 16"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(SkiError::config("channels", "must be 1 or 3"));
        }
        if !(0.0..=1.0).contains(&self.adl_fraction) {
            return Err(SkiError::config("adl_fraction", "must be in [0, 1]"));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.viewpoint_spread) {
            return Err(SkiError::config("viewpoint_spread", "must be in [0, pi]"));
        }
        if !(self.motion_subtlety > 0.0 && self.motion_subtlety <= 1.0) {
            return Err(SkiError::config("motion_subtlety", "must be in (0, 1]"));
        }
        if !(self.pixel_noise >= 0.0 && self.joint_noise >= 0.0) {
            return Err(SkiError::config("pixel_noise/joint_noise", "must be non-negative"));
        }
        if !(self.seen_ratio > 0.0 && self.seen_ratio < 1.0) {
            return Err(SkiError::config("seen_ratio", "must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(SkiError::config("holdout_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(&DATA_KEYS, "data")?;
        let d = DatasetConfig::default();
        let cfg = DatasetConfig {
            num_classes: kv.get_or("num_classes", d.num_classes)?,
            samples_per_class: kv.get_or("samples_per_class", d.samples_per_class)?,
            t_s: kv.get_or("t_s", d.t_s)?,
            t_v: kv.get_or("t_v", d.t_v)?,
            joints: kv.get_or("joints", d.joints)?,
            height: kv.get_or("height", d.height)?,
            width: kv.get_or("width", d.width)?,
            channels: kv.get_or("channels", d.channels)?,
            adl_fraction: kv.get_or("adl_fraction", d.adl_fraction)?,
            viewpoint_spread: kv.get_or("viewpoint_spread", d.viewpoint_spread)?,
            motion_subtlety: kv.get_or("motion_subtlety", d.motion_subtlety)?,
            pixel_noise: kv.get_or("pixel_noise", d.pixel_noise)?,
            joint_noise: kv.get_or("joint_noise", d.joint_noise)?,
            seen_ratio: kv.get_or("seen_ratio", d.seen_ratio)?,
            holdout_fraction: kv.get_or("holdout_fraction", d.holdout_fraction)?,
            epsilon_appearance: kv.get_or("epsilon_appearance", d.epsilon_appearance)?,
            epsilon_motion: kv.get_or("epsilon_motion", d.epsilon_motion)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("num_classes", self.num_classes);
        kv.set("samples_per_class", self.samples_per_class);
        kv.set("t_s", self.t_s);
        kv.set("t_v", self.t_v);
        kv.set("joints", self.joints);
        kv.set("height", self.height);
        kv.set("width", self.width);
        kv.set("channels", self.channels);
        kv.set("adl_fraction", self.adl_fraction);
        kv.set("viewpoint_spread", self.viewpoint_spread);
        kv.set("motion_subtlety", self.motion_subtlety);
        kv.set("pixel_noise", self.pixel_noise);
        kv.set("joint_noise", self.joint_noise);
        kv.set("seen_ratio", self.seen_ratio);
        kv.set("holdout_fraction", self.holdout_fraction);
        kv.set("epsilon_appearance", self.epsilon_appearance);
        kv.set("epsilon_motion", self.epsilon_motion);
        kv.set("seed", self.seed);
        kv
    }

    pub fn frame_dims(&self) -> FrameDims {
        FrameDims {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            num_frames: self.t_v,
            dims: self.frame_dims(),
        }
    }

    /// Samples per class that are held out (the trailing ones).
    pub fn holdout_per_class(&self) -> usize {
        let h = (self.samples_per_class as f64 * self.holdout_fraction).round() as usize;
        if self.holdout_fraction > 0.0 {
            h.clamp(1, self.samples_per_class.saturating_sub(1).max(1))
        } else {
            0
        }
    }
}

/// Class-level color distribution: per-sample colors are drawn uniformly
/// within `jitter` of the means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceDist {
    pub background: [f64; 3],
    pub limb: [f64; 3],
    pub jitter: f64,
}

const ADL_APPEARANCE: AppearanceDist = AppearanceDist {
    background: [0.45, 0.42, 0.40],
    limb: [0.85, 0.80, 0.75],
    jitter: 0.08,
};

fn web_appearance(class_id: usize) -> AppearanceDist {
    // golden-ratio hue spacing keeps neighbouring classes far apart
    let hue = (class_id as f64 * 0.618_033_988_75).fract();
    let channel = |k: f64| 0.45 + 0.3 * (std::f64::consts::TAU * (hue + k / 3.0)).cos();
    let bg = [channel(0.0), channel(1.0), channel(2.0)];
    AppearanceDist {
        background: bg,
        limb: bg.map(|c| 1.0 - 0.5 * c),
        jitter: 0.03,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub class_id: usize,
    pub label: String,
    pub motion: Motion,
    pub limb: Limb,
    /// Peak joint angle before per-sample jitter, radians.
    pub amplitude: f64,
    pub frequency: f64,
    pub appearance: AppearanceDist,
    pub adl_like: bool,
}

impl ActionSpec {
    pub fn prompt(&self) -> TextPrompt {
        TextPrompt::new(grammar::class_prompt(self.motion, self.limb), self.class_id, grammar::PROMPT_TEMPLATE_ID)
            .expect("grammar prompts are non-empty")
    }
}

/// (motion, limb) of class `k`; the two indices cycle with coprime periods
/// so every composition appears once in the first `MAX_CLASSES` ids.
pub fn composition(k: usize) -> (Motion, Limb) {
    (Motion::ALL[k % Motion::ALL.len()], Limb::ALL[k % Limb::ALL.len()])
}

pub fn class_catalog(config: &DatasetConfig) -> Result<Vec<ActionSpec>> {
    config.validate()?;
    let n_adl = (config.num_classes as f64 * config.adl_fraction).round() as usize;
    let specs: Vec<ActionSpec> = (0..config.num_classes)
        .map(|k| {
            let (motion, limb) = composition(k);
            let base = if limb.is_leg() { 0.8 } else { 1.2 };
            let adl_like = k < n_adl;
            ActionSpec {
                class_id: k,
                label: grammar::class_label(motion, limb),
                motion,
                limb,
                amplitude: base * config.motion_subtlety,
                frequency: motion.base_frequency(),
                appearance: if adl_like { ADL_APPEARANCE } else { web_appearance(k) },
                adl_like,
            }
        })
        .collect();
    let labels: BTreeSet<&str> = specs.iter().map(|s| s.label.as_str()).collect();
    debug_assert_eq!(labels.len(), specs.len());
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seen_class_ids: Vec<usize>,
    pub unseen_class_ids: Vec<usize>,
}

impl SplitSpec {
    pub fn new(mut seen: Vec<usize>, mut unseen: Vec<usize>) -> Result<Self> {
        seen.sort_unstable();
        unseen.sort_unstable();
        if seen.is_empty() || unseen.is_empty() {
            return Err(SkiError::arg("split", "seen and unseen sides must both be non-empty"));
        }
        if let Some(c) = seen.iter().find(|c| unseen.binary_search(c).is_ok()) {
            return Err(SkiError::arg("split", format!("class {c} is on both sides")));
        }
        Ok(SplitSpec {
            seen_class_ids: seen,
            unseen_class_ids: unseen,
        })
    }

    pub fn is_seen(&self, class_id: usize) -> bool {
        self.seen_class_ids.binary_search(&class_id).is_ok()
    }

    pub fn is_unseen(&self, class_id: usize) -> bool {
        self.unseen_class_ids.binary_search(&class_id).is_ok()
    }

    pub fn all_classes(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.seen_class_ids.iter().chain(&self.unseen_class_ids).copied().collect();
        all.sort_unstable();
        all
    }

    /// Split file text: a `seen` section then an `unseen` section, one id per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("seen\n");
        for c in &self.seen_class_ids {
            out.push_str(&format!("{c}\n"));
        }
        out.push_str("unseen\n");
        for c in &self.unseen_class_ids {
            out.push_str(&format!("{c}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (mut seen, mut unseen) = (Vec::new(), Vec::new());
        let mut section = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match line {
                "seen" => section = Some(true),
                "unseen" => section = Some(false),
                id => {
                    let id: usize = id
                        .parse()
                        .map_err(|_| SkiError::arg("split file", format!("`{id}` is not a class id")))?;
                    match section {
                        Some(true) => seen.push(id),
                        Some(false) => unseen.push(id),
                        None => return Err(SkiError::arg("split file", "class id before any section header")),
                    }
                }
            }
        }
        SplitSpec::new(seen, unseen)
    }
}

/// Shuffles `class_ids` with `seed` and takes `round(n * seen_ratio)` as seen,
/// clamped so both sides keep at least one class.
pub fn make_splits(class_ids: &[usize], seen_ratio: f64, seed: u64) -> Result<SplitSpec> {
    if class_ids.len() < 2 {
        return Err(SkiError::arg("class_ids", "need at least two classes to split"));
    }
    if !(seen_ratio > 0.0 && seen_ratio < 1.0) {
        return Err(SkiError::arg("seen_ratio", "must be in (0, 1)"));
    }
    let n = class_ids.len();
    let n_seen = ((n as f64 * seen_ratio).round() as usize).clamp(1, n - 1);
    let mut ids = class_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != n {
        return Err(SkiError::arg("class_ids", "duplicate class id"));
    }
    ids.shuffle(&mut rng::stream(seed, &[0x5eed_5b17]));
    let unseen = ids.split_off(n_seen);
    SplitSpec::new(ids, unseen)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub sample_id: u64,
    pub video: VideoClip,
    /// Joint positions after the viewpoint rotation (camera coordinates).
    pub skeleton: SkeletonSequence,
    pub prompt: TextPrompt,
    pub caption: String,
    /// Viewpoint that produced the camera-coordinate skeleton. The video is
    /// rendered from the stored skeleton with the identity camera.
    pub view: Camera,
    pub motion: MotionSample,
    pub appearance: Appearance,
    pub holdout: bool,
}

impl Triplet {
    pub fn class_id(&self) -> usize {
        self.prompt.class_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub classes: Vec<ActionSpec>,
    pub triplets: Vec<Triplet>,
    pub split: SplitSpec,
}

fn generate_triplet(config: &DatasetConfig, spec: &ActionSpec, index: usize) -> Result<Triplet> {
    let mut r = rng::stream(config.seed, &[spec.class_id as u64, index as u64]);
    let motion = MotionSample {
        motion: spec.motion,
        limb: spec.limb,
        amplitude: spec.amplitude * r.random_range(0.75..1.25),
        frequency: spec.frequency * r.random_range(0.85..1.15),
        phase: r.random_range(0.0..std::f64::consts::TAU),
    };
    let scale = r.random_range(0.9..1.1);
    let offset = [r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), 0.0];
    let half = config.viewpoint_spread / 2.0;
    let view = if half > 0.0 {
        Camera {
            azimuth: r.random_range(-half..half),
            elevation: r.random_range(-half..half) / 6.0,
        }
    } else {
        Camera::identity()
    };
    let jitter = spec.appearance.jitter;
    let mut draw = |c: f64| (c + r.random_range(-jitter..=jitter)).clamp(0.0, 1.0);
    let background = spec.appearance.background.map(&mut draw);
    let limb = spec.appearance.limb.map(&mut draw);
    let appearance = Appearance {
        background,
        limb,
        noise_std: config.pixel_noise,
        noise_seed: r.random(),
    };
    let joint_noise = Normal::new(0.0, config.joint_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| SkiError::config("joint_noise", e.to_string()))?;

    let mut frames = Vec::with_capacity(config.t_s * NUM_JOINTS * 3);
    for t in 0..config.t_s {
        let pose = motion.pose(t as f64 / config.t_s as f64);
        for p in pose {
            let mut w = [0.0; 3];
            for k in 0..3 {
                let n = if config.joint_noise > 0.0 { joint_noise.sample(&mut r) } else { 0.0 };
                w[k] = p[k] * scale + offset[k] + n;
            }
            frames.extend_from_slice(&view.apply(w));
        }
    }
    let sample_id = (spec.class_id * config.samples_per_class + index) as u64;
    let skeleton = SkeletonSequence::new(frames, config.t_s, NUM_JOINTS, index as u32, spec.class_id)?;
    let video = render_skeleton_to_frames(&skeleton, &Camera::identity(), &appearance, &config.render_config())?;
    let caption = grammar::make_caption(&motion, spec.amplitude, view.azimuth);
    Ok(Triplet {
        sample_id,
        video,
        skeleton,
        prompt: spec.prompt(),
        caption,
        view,
        motion,
        appearance,
        holdout: index >= config.samples_per_class - config.holdout_per_class(),
    })
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    generate_dataset_with(config, Exec::default())
}

pub fn generate_dataset_with(config: &DatasetConfig, exec: Exec) -> Result<Dataset> {
    let classes = class_catalog(config)?;
    let per = config.samples_per_class;
    let triplets = try_map_indexed(exec, classes.len() * per, |i| generate_triplet(config, &classes[i / per], i % per))?;
    let ids: Vec<usize> = classes.iter().map(|c| c.class_id).collect();
    let split = make_splits(&ids, config.seen_ratio, config.seed)?;
    Ok(Dataset {
        config: config.clone(),
        classes,
        triplets,
        split,
    })
}

/// Which portion of the data a procedure may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    /// Seen classes, non-held-out samples.
    SeenTrain,
    /// Seen classes, held-out samples.
    SeenHoldout,
    /// Every sample of the unseen classes.
    Unseen,
}

impl Dataset {
    pub fn subset(&self, which: Subset) -> Vec<&Triplet> {
        self.triplets
            .iter()
            .filter(|t| match which {
                Subset::SeenTrain => self.split.is_seen(t.class_id()) && !t.holdout,
                Subset::SeenHoldout => self.split.is_seen(t.class_id()) && t.holdout,
                Subset::Unseen => self.split.is_unseen(t.class_id()),
            })
            .collect()
    }

    pub fn class(&self, class_id: usize) -> Option<&ActionSpec> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    pub fn prompts(&self, class_ids: &[usize]) -> Result<Vec<TextPrompt>> {
        class_ids
            .iter()
            .map(|&c| {
                self.class(c)
                    .map(ActionSpec::prompt)
                    .ok_or_else(|| SkiError::arg("class_ids", format!("class {c} is not in the dataset")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdlReport {
    /// Largest RMS gap between per-class mean frames among ADL-like classes.
    pub max_appearance_gap: f64,
    /// Smallest L2 gap between per-class mean joint-speed profiles.
    pub min_motion_gap: f64,
    pub epsilon_appearance: f64,
    pub epsilon_motion: f64,
    pub adl_classes: usize,
}

impl AdlReport {
    pub fn passed(&self) -> bool {
        self.max_appearance_gap < self.epsilon_appearance && self.min_motion_gap > self.epsilon_motion
    }
}

/// Measures how far ADL-like classes are apart in appearance and in motion.
pub fn adl_self_test(data: &Dataset) -> Result<AdlReport> {
    let adl: Vec<usize> = data.classes.iter().filter(|c| c.adl_like).map(|c| c.class_id).collect();
    let frame_len = data.config.frame_dims().len();
    let mut mean_frames = Vec::new();
    let mut speed_profiles = Vec::new();
    for &c in &adl {
        let members: Vec<&Triplet> = data.triplets.iter().filter(|t| t.class_id() == c).collect();
        if members.is_empty() {
            return Err(SkiError::Degenerate(format!("class {c} has no samples")));
        }
        let mut frame = vec![0.0; frame_len];
        let mut speed = vec![0.0; NUM_JOINTS];
        for t in &members {
            let v = &t.video;
            for k in 0..v.num_frames() {
                for (acc, &p) in frame.iter_mut().zip(v.frame(k)) {
                    *acc += p as f64;
                }
            }
            let s = &t.skeleton;
            for f in 1..s.num_frames() {
                for (j, acc) in speed.iter_mut().enumerate() {
                    let (a, b) = (s.joint(f, j), s.joint(f - 1, j));
                    *acc += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                }
            }
        }
        let nf = (members.len() * data.config.t_v) as f64;
        frame.iter_mut().for_each(|x| *x /= nf);
        let ns = (members.len() * (data.config.t_s.max(2) - 1)) as f64;
        speed.iter_mut().for_each(|x| *x /= ns);
        mean_frames.push(frame);
        speed_profiles.push(speed);
    }
    let mut max_app: f64 = 0.0;
    let mut min_mot = f64::INFINITY;
    for i in 0..adl.len() {
        for j in i + 1..adl.len() {
            let app = (mean_frames[i]
                .iter()
                .zip(&mean_frames[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / frame_len as f64)
                .sqrt();
            let mot = speed_profiles[i]
                .iter()
                .zip(&speed_profiles[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            max_app = max_app.max(app);
            min_mot = min_mot.min(mot);
        }
    }
    Ok(AdlReport {
        max_appearance_gap: max_app,
        min_motion_gap: if min_mot.is_finite() { min_mot } else { 0.0 },
        epsilon_appearance: data.config.epsilon_appearance,
        epsilon_motion: data.config.epsilon_motion,
        adl_classes: adl.len(),
    })
}
