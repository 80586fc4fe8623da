//! Binary dataset container. Layout (all integers and floats little-endian,
//! strings are a `u32` byte length followed by UTF-8):
//!
//! ```text
//! magic "SKIDATA\0", version u32
//! config text (str)                      key = value lines
//! num_classes u32, then per class:
//!   class_id u32, label str, motion u8, limb u8, adl u8,
//!   amplitude f64, frequency f64, background 3xf64, limb 3xf64, jitter f64
//! seen count u32 + ids u32..., unseen count u32 + ids u32...
//! num_triplets u32, t_s u32, joints u32, t_v u32, channels u32, height u32, width u32
//! per triplet:
//!   sample_id u64, class_id u32, subject_id u32, holdout u8,
//!   azimuth f64, elevation f64, amplitude f64, frequency f64, phase f64,
//!   background 3xf64, limb 3xf64, noise_std f64, noise_seed u64,
//!   skeleton t_s*joints*3 x f64, video t_v*channels*height*width x f32,
//!   prompt str, template_id str, caption str
//! ```

use std::path::Path;

use super::{ActionSpec, AppearanceDist, Dataset, DatasetConfig, SplitSpec, Triplet};
use super::{Appearance, Camera, Limb, Motion, MotionSample};
use crate::error::{Result, SkiError};
use crate::kvconfig::KvConfig;
use crate::types::{FrameDims, SkeletonSequence, TextPrompt, VideoClip};

pub const MAGIC: &[u8; 8] = b"SKIDATA\0";
pub const VERSION: u32 = 1;

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {} (wanted {n} more)", self.pos)),
        }
    }

    pub fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }
    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }
    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }
    pub fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }
    pub fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| format!("invalid UTF-8: {e}"))
    }
    pub fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_rgb(w: &mut ByteWriter, c: [f64; 3]) {
    c.iter().for_each(|&v| w.f64(v));
}

fn read_rgb(r: &mut ByteReader) -> std::result::Result<[f64; 3], String> {
    Ok([r.f64()?, r.f64()?, r.f64()?])
}

pub fn to_bytes(data: &Dataset) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.str(&data.config.to_kv().canonical());
    w.u32(data.classes.len() as u32);
    for c in &data.classes {
        w.u32(c.class_id as u32);
        w.str(&c.label);
        w.u8(c.motion.code());
        w.u8(c.limb.code());
        w.u8(c.adl_like as u8);
        w.f64(c.amplitude);
        w.f64(c.frequency);
        write_rgb(&mut w, c.appearance.background);
        write_rgb(&mut w, c.appearance.limb);
        w.f64(c.appearance.jitter);
    }
    for side in [&data.split.seen_class_ids, &data.split.unseen_class_ids] {
        w.u32(side.len() as u32);
        side.iter().for_each(|&c| w.u32(c as u32));
    }
    let cfg = &data.config;
    w.u32(data.triplets.len() as u32);
    for v in [cfg.t_s, cfg.joints, cfg.t_v, cfg.channels, cfg.height, cfg.width] {
        w.u32(v as u32);
    }
    for t in &data.triplets {
        w.u64(t.sample_id);
        w.u32(t.class_id() as u32);
        w.u32(t.skeleton.subject_id);
        w.u8(t.holdout as u8);
        w.f64(t.view.azimuth);
        w.f64(t.view.elevation);
        w.f64(t.motion.amplitude);
        w.f64(t.motion.frequency);
        w.f64(t.motion.phase);
        write_rgb(&mut w, t.appearance.background);
        write_rgb(&mut w, t.appearance.limb);
        w.f64(t.appearance.noise_std);
        w.u64(t.appearance.noise_seed);
        t.skeleton.data().iter().for_each(|&v| w.f64(v));
        t.video.data().iter().for_each(|&v| w.f32(v));
        w.str(&t.prompt.text);
        w.str(&t.prompt.template_id);
        w.str(&t.caption);
    }
    w.buf
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Dataset> {
    let corrupt = |reason: String| SkiError::Corrupt {
        path: origin.to_path_buf(),
        reason,
    };
    let mut r = ByteReader::new(bytes);
    if r.take(8).map_err(&corrupt)? != MAGIC {
        return Err(corrupt("bad magic bytes".into()));
    }
    let version = r.u32().map_err(&corrupt)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let cfg_text = r.str().map_err(&corrupt)?;
    let config = DatasetConfig::from_kv(&KvConfig::parse(&cfg_text)?)?;
    read_body(&mut r, config).map_err(corrupt)
}

fn read_body(r: &mut ByteReader, config: DatasetConfig) -> std::result::Result<Dataset, String> {
    let n_classes = r.u32()? as usize;
    let mut classes = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let class_id = r.u32()? as usize;
        let label = r.str()?;
        let motion = Motion::from_code(r.u8()?).ok_or("unknown motion code")?;
        let limb = Limb::from_code(r.u8()?).ok_or("unknown limb code")?;
        let adl_like = r.u8()? != 0;
        let amplitude = r.f64()?;
        let frequency = r.f64()?;
        let appearance = AppearanceDist {
            background: read_rgb(r)?,
            limb: read_rgb(r)?,
            jitter: r.f64()?,
        };
        classes.push(ActionSpec {
            class_id,
            label,
            motion,
            limb,
            amplitude,
            frequency,
            appearance,
            adl_like,
        });
    }
    let mut sides = Vec::new();
    for _ in 0..2 {
        let n = r.u32()? as usize;
        sides.push((0..n).map(|_| r.u32().map(|c| c as usize)).collect::<std::result::Result<Vec<_>, _>>()?);
    }
    let unseen = sides.pop().expect("two sides");
    let seen = sides.pop().expect("two sides");
    let split = SplitSpec::new(seen, unseen).map_err(|e| e.to_string())?;

    let n_triplets = r.u32()? as usize;
    let dims: Vec<usize> = (0..6).map(|_| r.u32().map(|v| v as usize)).collect::<std::result::Result<_, _>>()?;
    let expect = [config.t_s, config.joints, config.t_v, config.channels, config.height, config.width];
    if dims != expect {
        return Err(format!("record dims {dims:?} disagree with config {expect:?}"));
    }
    let frame_dims = FrameDims {
        channels: config.channels,
        height: config.height,
        width: config.width,
    };
    let mut triplets = Vec::with_capacity(n_triplets);
    for _ in 0..n_triplets {
        let sample_id = r.u64()?;
        let class_id = r.u32()? as usize;
        let subject_id = r.u32()?;
        let holdout = r.u8()? != 0;
        let view = Camera {
            azimuth: r.f64()?,
            elevation: r.f64()?,
        };
        let (amplitude, frequency, phase) = (r.f64()?, r.f64()?, r.f64()?);
        let appearance = Appearance {
            background: read_rgb(r)?,
            limb: read_rgb(r)?,
            noise_std: r.f64()?,
            noise_seed: r.u64()?,
        };
        let skel: Vec<f64> = (0..config.t_s * config.joints * 3).map(|_| r.f64()).collect::<std::result::Result<_, _>>()?;
        let video: Vec<f32> = (0..config.t_v * frame_dims.len()).map(|_| r.f32()).collect::<std::result::Result<_, _>>()?;
        let prompt_text = r.str()?;
        let template = r.str()?;
        let caption = r.str()?;
        let spec = classes
            .iter()
            .find(|c| c.class_id == class_id)
            .ok_or_else(|| format!("triplet {sample_id} references unknown class {class_id}"))?;
        let skeleton = SkeletonSequence::new(skel, config.t_s, config.joints, subject_id, class_id).map_err(|e| e.to_string())?;
        let video = VideoClip::new(video, config.t_v, frame_dims, class_id).map_err(|e| e.to_string())?;
        let prompt = TextPrompt::new(prompt_text, class_id, template).map_err(|e| e.to_string())?;
        triplets.push(Triplet {
            sample_id,
            video,
            skeleton,
            prompt,
            caption,
            view,
            motion: MotionSample {
                motion: spec.motion,
                limb: spec.limb,
                amplitude,
                frequency,
                phase,
            },
            appearance,
            holdout,
        });
    }
    if !r.finished() {
        return Err("trailing bytes after the last record".into());
    }
    Ok(Dataset {
        config,
        classes,
        triplets,
        split,
    })
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(data)).map_err(|e| SkiError::io(format!("writing {}", path.display()), e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| SkiError::io(format!("reading {}", path.display()), e))?;
    from_bytes(&bytes, path)
}

pub fn write_split(split: &SplitSpec, path: &Path) -> Result<()> {
    std::fs::write(path, split.to_text()).map_err(|e| SkiError::io(format!("writing {}", path.display()), e))
}

pub fn read_split(path: &Path) -> Result<SplitSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| SkiError::io(format!("reading {}", path.display()), e))?;
    SplitSpec::from_text(&text)
}
