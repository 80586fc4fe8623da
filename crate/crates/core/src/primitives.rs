//! Deterministic numeric primitives: normalization, similarity, pooling, softmax.

use crate::error::{Result, SkiError};
use crate::tensor::{dot, Matrix};
use crate::types::{Embedding, LogitMatrix};

pub fn l2_normalize(v: &[f64]) -> Result<Embedding> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(SkiError::Degenerate(format!("component {i} is not finite")));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(SkiError::Degenerate("cannot normalize a zero vector".into()));
    }
    Ok(Embedding::unit_unchecked(v.iter().map(|x| x / n).collect()))
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if !a.is_normalized() || !b.is_normalized() {
        return Err(SkiError::Contract("cosine_similarity needs normalized embeddings".into()));
    }
    if a.dim() != b.dim() {
        return Err(SkiError::shape("cosine_similarity", format!("{} vs {}", a.dim(), b.dim())));
    }
    Ok(dot(a.values(), b.values()).clamp(-1.0, 1.0))
}

/// Entry `(i, j)` is `cosine_similarity(samples[i], classes[j])`.
pub fn similarity_matrix(samples: &[Embedding], classes: &[Embedding]) -> Result<LogitMatrix> {
    let mut values = Matrix::zeros(samples.len(), classes.len());
    for (i, z) in samples.iter().enumerate() {
        for (j, t) in classes.iter().enumerate() {
            values.set(i, j, cosine_similarity(z, t)?);
        }
    }
    LogitMatrix::from_matrix(values)
}

/// Elementwise mean over the rows (time axis) of a `T x D` array.
pub fn temporal_mean_pool(features: &Matrix) -> Result<Vec<f64>> {
    if features.rows() == 0 {
        return Err(SkiError::arg("features", "cannot pool over zero frames"));
    }
    let mut out = vec![0.0; features.cols()];
    for row in features.row_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let t = features.rows() as f64;
    for o in &mut out {
        *o /= t;
    }
    Ok(out)
}

/// Softmax of `logits / temperature` with max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(SkiError::arg("temperature", format!("must be positive, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(SkiError::arg("logits", "empty"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(SkiError::Degenerate("non-finite logit".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| ((v - m) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
