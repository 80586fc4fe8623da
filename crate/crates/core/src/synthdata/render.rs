//! Orthographic stick-figure rasterizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::skeleton::{bones, Camera};
use crate::error::{Result, SkiError};
use crate::types::{FrameDims, SkeletonSequence, VideoClip};

/// Colors of one rendered sample plus the seed of its pixel noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub background: [f64; 3],
    pub limb: [f64; 3],
    pub noise_std: f64,
    pub noise_seed: u64,
}

impl Appearance {
    pub fn plain(background: f64, limb: f64) -> Self {
        Appearance {
            background: [background; 3],
            limb: [limb; 3],
            noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub num_frames: usize,
    pub dims: FrameDims,
}

impl RenderConfig {
    fn validate(&self) -> Result<()> {
        if self.num_frames < 1 {
            return Err(SkiError::arg("num_frames", "must be at least 1"));
        }
        if self.dims.height < 16 || self.dims.width < 16 {
            return Err(SkiError::arg("dims", "frames must be at least 16x16"));
        }
        if self.dims.channels != 1 && self.dims.channels != 3 {
            return Err(SkiError::arg("channels", "must be 1 or 3"));
        }
        Ok(())
    }

    fn pixels_per_meter(&self) -> f64 {
        0.45 * self.dims.height.min(self.dims.width) as f64
    }
}

/// Skeleton frame shown in video frame `k`.
pub fn source_frame(k: usize, num_video_frames: usize, num_skeleton_frames: usize) -> usize {
    k * num_skeleton_frames / num_video_frames
}

/// Image coordinates (row, col) of a camera-space point; may fall outside.
fn project(p: [f64; 3], cfg: &RenderConfig) -> (f64, f64) {
    let s = cfg.pixels_per_meter();
    let row = cfg.dims.height as f64 / 2.0 - s * p[1];
    let col = cfg.dims.width as f64 / 2.0 + s * p[0];
    (row, col)
}

fn pixel_of(row: f64, col: f64, dims: FrameDims) -> Option<(usize, usize)> {
    let (r, c) = (row.floor(), col.floor());
    if r < 0.0 || c < 0.0 || r >= dims.height as f64 || c >= dims.width as f64 {
        None
    } else {
        Some((r as usize, c as usize))
    }
}

/// Calls `hit` for every pixel covered by the given bones (and joints) of
/// one skeleton frame. Returns how many joints landed inside the frame.
fn rasterize(
    skeleton: &SkeletonSequence,
    t: usize,
    camera: &Camera,
    bone_list: &[(usize, usize)],
    cfg: &RenderConfig,
    mut hit: impl FnMut(usize, usize),
) -> usize {
    let pts: Vec<(f64, f64)> = (0..skeleton.num_joints())
        .map(|j| project(camera.apply(skeleton.joint(t, j)), cfg))
        .collect();
    let mut inside = 0;
    for &(r, c) in &pts {
        if let Some((y, x)) = pixel_of(r, c, cfg.dims) {
            inside += 1;
            hit(y, x);
        }
    }
    for &(a, b) in bone_list {
        if a >= pts.len() || b >= pts.len() {
            continue;
        }
        let (ra, ca) = pts[a];
        let (rb, cb) = pts[b];
        let steps = ((rb - ra).abs().max((cb - ca).abs()) * 2.0).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let f = k as f64 / steps as f64;
            if let Some((y, x)) = pixel_of(ra + (rb - ra) * f, ca + (cb - ca) * f, cfg.dims) {
                hit(y, x);
            }
        }
    }
    inside
}

/// Draws the skeleton, seen through `camera`, as limbs over a noisy background.
pub fn render_skeleton_to_frames(
    skeleton: &SkeletonSequence,
    camera: &Camera,
    appearance: &Appearance,
    cfg: &RenderConfig,
) -> Result<VideoClip> {
    cfg.validate()?;
    let dims = cfg.dims;
    let all_bones: Vec<(usize, usize)> = bones().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(appearance.noise_seed);
    let mut data = Vec::with_capacity(cfg.num_frames * dims.len());
    let mut mask = vec![false; dims.pixels()];
    for k in 0..cfg.num_frames {
        let t = source_frame(k, cfg.num_frames, skeleton.num_frames());
        mask.iter_mut().for_each(|m| *m = false);
        let inside = rasterize(skeleton, t, camera, &all_bones, cfg, |y, x| mask[y * dims.width + x] = true);
        if inside == 0 {
            return Err(SkiError::Degenerate(format!(
                "every joint of skeleton frame {t} projects outside the {}x{} frame",
                dims.height, dims.width
            )));
        }
        for c in 0..dims.channels {
            let (bg, fg) = if dims.channels == 1 {
                (
                    appearance.background.iter().sum::<f64>() / 3.0,
                    appearance.limb.iter().sum::<f64>() / 3.0,
                )
            } else {
                (appearance.background[c], appearance.limb[c])
            };
            for &on in &mask {
                let base = if on { fg } else { bg };
                let noise = if appearance.noise_std > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    appearance.noise_std * n
                } else {
                    0.0
                };
                data.push((base + noise).clamp(0.0, 1.0) as f32);
            }
        }
    }
    VideoClip::new(data, cfg.num_frames, dims, skeleton.class_id)
}

/// `T_v x H x W` mask of pixels covered by `bone_list`.
pub fn limb_mask(
    skeleton: &SkeletonSequence,
    camera: &Camera,
    bone_list: &[(usize, usize)],
    cfg: &RenderConfig,
) -> Result<Vec<bool>> {
    cfg.validate()?;
    let dims = cfg.dims;
    let mut mask = vec![false; cfg.num_frames * dims.pixels()];
    for k in 0..cfg.num_frames {
        let t = source_frame(k, cfg.num_frames, skeleton.num_frames());
        let off = k * dims.pixels();
        rasterize_bones_only(skeleton, t, camera, bone_list, cfg, &mut mask[off..off + dims.pixels()]);
    }
    Ok(mask)
}

fn rasterize_bones_only(
    skeleton: &SkeletonSequence,
    t: usize,
    camera: &Camera,
    bone_list: &[(usize, usize)],
    cfg: &RenderConfig,
    out: &mut [bool],
) {
    let w = cfg.dims.width;
    let joints: std::collections::BTreeSet<usize> = bone_list.iter().flat_map(|&(a, b)| [a, b]).collect();
    let n = skeleton.num_joints();
    let pts: Vec<Option<(f64, f64)>> = (0..n)
        .map(|j| joints.contains(&j).then(|| project(camera.apply(skeleton.joint(t, j)), cfg)))
        .collect();
    for &(a, b) in bone_list {
        let (Some((ra, ca)), Some((rb, cb))) = (pts.get(a).copied().flatten(), pts.get(b).copied().flatten()) else {
            continue;
        };
        let steps = ((rb - ra).abs().max((cb - ca).abs()) * 2.0).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let f = k as f64 / steps as f64;
            if let Some((y, x)) = pixel_of(ra + (rb - ra) * f, ca + (cb - ca) * f, cfg.dims) {
                out[y * w + x] = true;
            }
        }
    }
}

/// Sum of squared differences between consecutive frames.
pub fn frame_difference_energy(clip: &VideoClip) -> f64 {
    (1..clip.num_frames())
        .map(|t| {
            clip.frame(t)
                .iter()
                .zip(clip.frame(t - 1))
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::skeleton::{Limb, Motion, MotionSample, NUM_JOINTS};

    fn cfg() -> RenderConfig {
        RenderConfig {
            num_frames: 4,
            dims: FrameDims {
                channels: 3,
                height: 32,
                width: 32,
            },
        }
    }

    fn single_joint_at_origin() -> SkeletonSequence {
        // two coincident joints: the sequence type needs J >= 2
        SkeletonSequence::new(vec![0.0; 6], 1, 2, 0, 0).unwrap()
    }

    #[test]
    fn origin_lands_on_frame_center() {
        let clip = render_skeleton_to_frames(&single_joint_at_origin(), &Camera::identity(), &Appearance::plain(0.0, 1.0), &cfg())
            .unwrap();
        for k in 0..4 {
            for y in 0..32 {
                for x in 0..32 {
                    let expect = if (y, x) == (16, 16) { 1.0 } else { 0.0 };
                    assert_eq!(clip.pixel(k, 0, y, x), expect, "frame {k} pixel ({y},{x})");
                }
            }
        }
    }

    fn wave_sequence() -> SkeletonSequence {
        let m = MotionSample {
            motion: Motion::Wave,
            limb: Limb::LeftArm,
            amplitude: 0.8,
            frequency: 1.0,
            phase: 0.0,
        };
        let t_s = 8;
        let mut data = Vec::new();
        for t in 0..t_s {
            for p in m.pose(t as f64 / t_s as f64) {
                data.extend_from_slice(&p);
            }
        }
        SkeletonSequence::new(data, t_s, NUM_JOINTS, 0, 0).unwrap()
    }

    #[test]
    fn full_turn_matches_identity() {
        let seq = wave_sequence();
        let app = Appearance {
            background: [0.3, 0.4, 0.5],
            limb: [0.9, 0.8, 0.7],
            noise_std: 0.05,
            noise_seed: 11,
        };
        let a = render_skeleton_to_frames(&seq, &Camera::identity(), &app, &cfg()).unwrap();
        let turned = Camera {
            azimuth: 2.0 * std::f64::consts::PI,
            elevation: 0.0,
        };
        let b = render_skeleton_to_frames(&seq, &turned, &app, &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn side_view_hides_planar_motion() {
        let seq = wave_sequence();
        let app = Appearance::plain(0.2, 0.9);
        let front = render_skeleton_to_frames(&seq, &Camera::identity(), &app, &cfg()).unwrap();
        let side = Camera {
            azimuth: std::f64::consts::FRAC_PI_2,
            elevation: 0.0,
        };
        let side = render_skeleton_to_frames(&seq, &side, &app, &cfg()).unwrap();
        let (ef, es) = (frame_difference_energy(&front), frame_difference_energy(&side));
        assert!(ef > 2.0 * es + 1.0, "front {ef} vs side {es}");
    }

    #[test]
    fn all_joints_outside_is_an_error() {
        let far = SkeletonSequence::new(vec![10.0; 6], 1, 2, 0, 0).unwrap();
        assert!(render_skeleton_to_frames(&far, &Camera::identity(), &Appearance::plain(0.0, 1.0), &cfg()).is_err());
    }

    #[test]
    fn rejects_tiny_frames() {
        let mut c = cfg();
        c.dims.height = 8;
        assert!(render_skeleton_to_frames(&single_joint_at_origin(), &Camera::identity(), &Appearance::plain(0.0, 1.0), &c)
            .is_err());
    }

    #[test]
    fn limb_mask_is_subset_of_drawn_pixels() {
        let seq = wave_sequence();
        let app = Appearance::plain(0.0, 1.0);
        let clip = render_skeleton_to_frames(&seq, &Camera::identity(), &app, &cfg()).unwrap();
        let mask = limb_mask(&seq, &Camera::identity(), &Limb::LeftArm.bones(), &cfg()).unwrap();
        assert!(mask.iter().any(|&m| m));
        let px = 32 * 32;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                let (k, p) = (i / px, i % px);
                assert_eq!(clip.pixel(k, 0, p / 32, p % 32), 1.0);
            }
        }
    }
}
