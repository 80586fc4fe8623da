//! Semantic types shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkiError};
use crate::tensor::Matrix;

/// `T_s` frames of `J` joints in camera coordinates (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: Vec<f64>,
    num_frames: usize,
    num_joints: usize,
    pub subject_id: u32,
    pub class_id: usize,
}

impl SkeletonSequence {
    pub fn new(frames: Vec<f64>, num_frames: usize, num_joints: usize, subject_id: u32, class_id: usize) -> Result<Self> {
        if num_frames < 1 {
            return Err(SkiError::arg("num_frames", "skeleton needs at least one frame"));
        }
        if num_joints < 2 {
            return Err(SkiError::arg("num_joints", "skeleton needs at least two joints"));
        }
        if frames.len() != num_frames * num_joints * 3 {
            return Err(SkiError::shape(
                "SkeletonSequence",
                format!("{} values for {num_frames}x{num_joints}x3", frames.len()),
            ));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(SkiError::Degenerate(format!("non-finite joint coordinate at index {i}")));
        }
        Ok(SkeletonSequence {
            frames,
            num_frames,
            num_joints,
            subject_id,
            class_id,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    /// Joints of frame `t`, flattened as `[x0, y0, z0, x1, ...]`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.num_joints * 3;
        &self.frames[t * w..(t + 1) * w]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let f = self.frame(t);
        [f[3 * j], f[3 * j + 1], f[3 * j + 2]]
    }

    /// Frames as a `T_s x (J*3)` matrix, one row per frame.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.num_frames, self.num_joints * 3, self.frames.clone())
            .expect("validated at construction")
    }
}

/// Pixel dimensions shared by every frame of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameDims {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `T_v x C x H x W` intensities in `[0, 1]`, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<f32>,
    num_frames: usize,
    dims: FrameDims,
    pub class_id: usize,
}

impl VideoClip {
    pub fn new(frames: Vec<f32>, num_frames: usize, dims: FrameDims, class_id: usize) -> Result<Self> {
        if num_frames < 1 {
            return Err(SkiError::arg("num_frames", "clip needs at least one frame"));
        }
        if frames.len() != num_frames * dims.len() {
            return Err(SkiError::shape(
                "VideoClip",
                format!("{} values for {num_frames} frames of {:?}", frames.len(), dims),
            ));
        }
        if let Some(i) = frames.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(SkiError::arg("frames", format!("pixel {i} = {} outside [0,1]", frames[i])));
        }
        Ok(VideoClip {
            frames,
            num_frames,
            dims,
            class_id,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dims(&self) -> FrameDims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let w = self.dims.len();
        &self.frames[t * w..(t + 1) * w]
    }

    pub fn pixel(&self, t: usize, c: usize, y: usize, x: usize) -> f32 {
        let d = self.dims;
        self.frames[t * d.len() + c * d.pixels() + y * d.width + x]
    }

    /// Frames as a `T_v x (C*H*W)` matrix in `f64`.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.frames.iter().map(|&v| v as f64).collect();
        Matrix::from_vec(self.num_frames, self.dims.len(), data).expect("validated at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPrompt {
    pub text: String,
    pub class_id: usize,
    pub template_id: String,
}

impl TextPrompt {
    pub fn new(text: impl Into<String>, class_id: usize, template_id: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(SkiError::arg("text", "prompt text is empty"));
        }
        Ok(TextPrompt {
            text,
            class_id,
            template_id: template_id.into(),
        })
    }
}

/// Checks that a prompt set has one prompt per class.
pub fn check_prompt_set(prompts: &[TextPrompt]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for p in prompts {
        if !seen.insert(p.class_id) {
            return Err(SkiError::arg("prompts", format!("class {} has more than one prompt", p.class_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    /// Wraps raw values without normalizing them.
    pub fn raw(values: Vec<f64>) -> Self {
        Embedding {
            values,
            normalized: false,
        }
    }

    /// Wraps values that the caller asserts are unit-norm; checked to 1e-6.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(SkiError::Contract(format!("embedding norm {n} is not 1")));
        }
        Ok(Embedding {
            values,
            normalized: true,
        })
    }

    pub(crate) fn unit_unchecked(values: Vec<f64>) -> Self {
        Embedding {
            values,
            normalized: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Stacks embeddings as the rows of a matrix.
pub fn stack_embeddings(rows: &[Embedding]) -> Result<Matrix> {
    let d = rows.first().map_or(0, Embedding::dim);
    let mut data = Vec::with_capacity(rows.len() * d);
    for (i, e) in rows.iter().enumerate() {
        if e.dim() != d {
            return Err(SkiError::shape("stack_embeddings", format!("row {i} has dim {} vs {d}", e.dim())));
        }
        data.extend_from_slice(e.values());
    }
    Matrix::from_vec(rows.len(), d, data)
}

/// `B x C` similarities between sample embeddings and class-text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    pub values: Matrix,
    pub row_ids: Vec<u64>,
    pub col_ids: Vec<usize>,
}

impl LogitMatrix {
    pub fn new(values: Matrix, row_ids: Vec<u64>, col_ids: Vec<usize>) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(SkiError::arg("values", "logit matrix must be at least 1x1"));
        }
        if row_ids.len() != values.rows() || col_ids.len() != values.cols() {
            return Err(SkiError::shape(
                "LogitMatrix",
                format!("{:?} with {} row ids and {} col ids", values.shape(), row_ids.len(), col_ids.len()),
            ));
        }
        Ok(LogitMatrix {
            values,
            row_ids,
            col_ids,
        })
    }

    /// Default ids `0..B` and `0..C`.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        let rows = (0..values.rows() as u64).collect();
        let cols = (0..values.cols()).collect();
        LogitMatrix::new(values, rows, cols)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Errors unless shapes and ids line up.
    pub fn check_aligned(&self, other: &LogitMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(SkiError::shape("logit alignment", format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        if self.row_ids != other.row_ids || self.col_ids != other.col_ids {
            return Err(SkiError::arg("ids", "row or column ids are not aligned"));
        }
        Ok(())
    }
}
