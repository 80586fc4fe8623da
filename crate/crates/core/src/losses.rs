//! Training objectives.
//!
//! Each objective has a graph builder (`*_graph`) used during training and a
//! value-level wrapper returning a [`LossValue`] for evaluation and tests.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Result, SkiError};
use crate::kvconfig::KvConfig;
use crate::par::Exec;
use crate::tensor::Matrix;
use crate::types::LogitMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DistillKind {
    Mse,
    Kl,
    Contrastive,
}

impl FromStr for DistillKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mse" => Ok(DistillKind::Mse),
            "kl" => Ok(DistillKind::Kl),
            "contrastive" => Ok(DistillKind::Contrastive),
            other => Err(format!("unknown distillation loss `{other}` (mse, kl, contrastive)")),
        }
    }
}

impl fmt::Display for DistillKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistillKind::Mse => "mse",
            DistillKind::Kl => "kl",
            DistillKind::Contrastive => "contrastive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KdMode {
    Online,
    Offline,
    FeatureNoProj,
    FeatureProj,
}

impl FromStr for KdMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "online" => Ok(KdMode::Online),
            "offline" => Ok(KdMode::Offline),
            "feature" | "feature_no_proj" => Ok(KdMode::FeatureNoProj),
            "feature-proj" | "feature_proj" => Ok(KdMode::FeatureProj),
            other => Err(format!("unknown kd mode `{other}` (online, offline, feature, feature-proj)")),
        }
    }
}

impl fmt::Display for KdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KdMode::Online => "online",
            KdMode::Offline => "offline",
            KdMode::FeatureNoProj => "feature",
            KdMode::FeatureProj => "feature-proj",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub distill: DistillKind,
    pub kd_mode: KdMode,
    /// Temperature of the KL and contrastive distillation variants.
    pub tau_d: f64,
    /// Divide the similarity matrices by `tau` before distillation.
    pub scaled_logits: bool,
    /// Block distillation gradients from reaching the skeleton side.
    pub stop_teacher_grad: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            alpha: 0.01,
            distill: DistillKind::Mse,
            kd_mode: KdMode::Online,
            tau_d: 1.0,
            scaled_logits: false,
            stop_teacher_grad: false,
        }
    }
}

const LOSS_KEYS: [&str; 7] = ["tau", "alpha", "distill", "kd_mode", "tau_d", "scaled_logits", "stop_teacher_grad"];

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(SkiError::config("loss.tau", "must be positive"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SkiError::config("loss.alpha", "must be non-negative"));
        }
        if !(self.tau_d > 0.0 && self.tau_d.is_finite()) {
            return Err(SkiError::config("loss.tau_d", "must be positive"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(&LOSS_KEYS, "train.loss")?;
        let d = LossConfig::default();
        let cfg = LossConfig {
            tau: kv.get_or("tau", d.tau)?,
            alpha: kv.get_or("alpha", d.alpha)?,
            distill: kv.get_or("distill", d.distill)?,
            kd_mode: kv.get_or("kd_mode", d.kd_mode)?,
            tau_d: kv.get_or("tau_d", d.tau_d)?,
            scaled_logits: kv.get_or("scaled_logits", d.scaled_logits)?,
            stop_teacher_grad: kv.get_or("stop_teacher_grad", d.stop_teacher_grad)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("tau", self.tau);
        kv.set("alpha", self.alpha);
        kv.set("distill", self.distill);
        kv.set("kd_mode", self.kd_mode);
        kv.set("tau_d", self.tau_d);
        kv.set("scaled_logits", self.scaled_logits);
        kv.set("stop_teacher_grad", self.stop_teacher_grad);
        kv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    pub name: String,
    pub value: f64,
    pub weight: f64,
}

/// A scalar loss with its named, weighted parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossValue {
    pub scalar: f64,
    pub components: Vec<Component>,
}

impl LossValue {
    pub fn single(name: &str, value: f64) -> Self {
        LossValue {
            scalar: value,
            components: vec![Component {
                name: name.to_string(),
                value,
                weight: 1.0,
            }],
        }
    }

    /// Builds the weighted sum from `(name, value, weight)` parts.
    pub fn weighted(parts: &[(&str, f64, f64)]) -> Self {
        let mut scalar = 0.0;
        let mut components = Vec::with_capacity(parts.len());
        for &(name, value, weight) in parts {
            if weight != 0.0 {
                scalar += weight * value;
            }
            components.push(Component {
                name: name.to_string(),
                value,
                weight,
            });
        }
        LossValue { scalar, components }
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    /// Weighted sum of the components recomputed from scratch.
    pub fn recomputed(&self) -> f64 {
        self.components.iter().filter(|c| c.weight != 0.0).map(|c| c.weight * c.value).sum()
    }
}

fn check_temperature(name: &str, t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(SkiError::arg(name, format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

fn graph() -> Graph {
    Graph::with_exec(Exec::Sequential)
}

/// Mean negative log-softmax at `targets` of `logits / tau` (rows are samples).
pub fn ce_logits_graph(g: &mut Graph, logits: Var, targets: &[usize], tau: f64) -> Result<Var> {
    check_temperature("tau", tau)?;
    let cols = g.value(logits).cols();
    if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
        return Err(SkiError::arg("targets", format!("class index {t} out of range for {cols} classes")));
    }
    let scaled = g.scale(logits, 1.0 / tau);
    let ls = g.log_softmax_rows(scaled);
    let picked = g.pick(ls, targets.to_vec())?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// Classification cross-entropy of modality embeddings against class-text
/// embeddings; both sides row-normalized.
pub fn contrastive_ce_graph(g: &mut Graph, z_mod: Var, z_text: Var, targets: &[usize], tau: f64) -> Result<Var> {
    if g.value(z_mod).rows() != targets.len() {
        return Err(SkiError::shape(
            "contrastive_ce",
            format!("{} rows vs {} targets", g.value(z_mod).rows(), targets.len()),
        ));
    }
    let sims = g.matmul_nt(z_mod, z_text)?;
    ce_logits_graph(g, sims, targets, tau)
}

fn check_normalized(name: &str, m: &Matrix) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(SkiError::Contract(format!("{name} row {i} has norm {n}")));
        }
    }
    Ok(())
}

pub fn contrastive_ce(z_mod: &Matrix, z_text: &Matrix, targets: &[usize], tau: f64) -> Result<LossValue> {
    check_normalized("z_mod", z_mod)?;
    check_normalized("z_text", z_text)?;
    let mut g = graph();
    let (a, b) = (g.constant(z_mod.clone()), g.constant(z_text.clone()));
    let l = contrastive_ce_graph(&mut g, a, b, targets, tau)?;
    Ok(LossValue::single("ce", g.scalar(l)))
}

/// Cross-entropy taken directly over a similarity matrix.
pub fn ce_from_similarities(sims: &Matrix, targets: &[usize], tau: f64) -> Result<LossValue> {
    if sims.rows() != targets.len() {
        return Err(SkiError::shape("ce", format!("{} rows vs {} targets", sims.rows(), targets.len())));
    }
    let mut g = graph();
    let s = g.constant(sims.clone());
    let l = ce_logits_graph(&mut g, s, targets, tau)?;
    Ok(LossValue::single("ce", g.scalar(l)))
}

fn check_congruent(op: &'static str, g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(SkiError::shape(op, format!("{:?} vs {:?}", g.value(a).shape(), g.value(b).shape())));
    }
    Ok(())
}

pub fn distill_mse_graph(g: &mut Graph, f_lv: Var, f_ls: Var) -> Result<Var> {
    check_congruent("distill_mse", g, f_lv, f_ls)?;
    let d = g.sub(f_lv, f_ls)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn distill_mse(f_lv: &LogitMatrix, f_ls: &LogitMatrix) -> Result<LossValue> {
    f_lv.check_aligned(f_ls)?;
    let mut g = graph();
    let (a, b) = (g.constant(f_lv.values.clone()), g.constant(f_ls.values.clone()));
    let l = distill_mse_graph(&mut g, a, b)?;
    Ok(LossValue::single("distill_mse", g.scalar(l)))
}

/// Mean over rows of KL(softmax(F_LS/τ_d) ‖ softmax(F_LV/τ_d)); the skeleton
/// side is the reference distribution.
pub fn distill_kl_graph(g: &mut Graph, f_lv: Var, f_ls: Var, tau_d: f64) -> Result<Var> {
    check_temperature("tau_d", tau_d)?;
    check_congruent("distill_kl", g, f_lv, f_ls)?;
    let rows = g.value(f_lv).rows() as f64;
    let sv = g.scale(f_lv, 1.0 / tau_d);
    let ss = g.scale(f_ls, 1.0 / tau_d);
    let log_pv = g.log_softmax_rows(sv);
    let log_ps = g.log_softmax_rows(ss);
    let ps = g.exp(log_ps);
    let diff = g.sub(log_ps, log_pv)?;
    let prod = g.mul(ps, diff)?;
    let total = g.sum(prod);
    Ok(g.scale(total, 1.0 / rows))
}

pub fn distill_kl(f_lv: &LogitMatrix, f_ls: &LogitMatrix, tau_d: f64) -> Result<LossValue> {
    f_lv.check_aligned(f_ls)?;
    let mut g = graph();
    let (a, b) = (g.constant(f_lv.values.clone()), g.constant(f_ls.values.clone()));
    let l = distill_kl_graph(&mut g, a, b, tau_d)?;
    Ok(LossValue::single("distill_kl", g.scalar(l)))
}

/// Symmetric InfoNCE between matched rows of `a` and `b` (both already
/// normalized): the mean of the row-wise and column-wise cross-entropies
/// with the diagonal as targets.
pub fn info_nce_graph(g: &mut Graph, a: Var, b: Var, tau: f64) -> Result<Var> {
    check_congruent("info_nce", g, a, b)?;
    let n = g.value(a).rows();
    if n < 2 {
        return Err(SkiError::arg("batch", "InfoNCE needs at least two rows"));
    }
    let diag: Vec<usize> = (0..n).collect();
    let sims = g.matmul_nt(a, b)?;
    let forward = ce_logits_graph(g, sims, &diag, tau)?;
    let st = g.transpose(sims);
    let backward = ce_logits_graph(g, st, &diag, tau)?;
    g.weighted_sum(&[(forward, 0.5), (backward, 0.5)])
}

/// InfoNCE over row-normalized copies of the two logit matrices.
pub fn distill_contrastive_graph(g: &mut Graph, f_lv: Var, f_ls: Var, tau_d: f64) -> Result<Var> {
    check_temperature("tau_d", tau_d)?;
    check_congruent("distill_contrastive", g, f_lv, f_ls)?;
    let a = g.normalize_rows(f_lv)?;
    let b = g.normalize_rows(f_ls)?;
    info_nce_graph(g, a, b, tau_d)
}

pub fn distill_contrastive(f_lv: &LogitMatrix, f_ls: &LogitMatrix, tau_d: f64) -> Result<LossValue> {
    f_lv.check_aligned(f_ls)?;
    let mut g = graph();
    let (a, b) = (g.constant(f_lv.values.clone()), g.constant(f_ls.values.clone()));
    let l = distill_contrastive_graph(&mut g, a, b, tau_d)?;
    Ok(LossValue::single("distill_contrastive", g.scalar(l)))
}

/// Distillation term selected by `kind`.
pub fn distill_graph(g: &mut Graph, kind: DistillKind, f_lv: Var, f_ls: Var, tau_d: f64) -> Result<Var> {
    match kind {
        DistillKind::Mse => distill_mse_graph(g, f_lv, f_ls),
        DistillKind::Kl => distill_kl_graph(g, f_lv, f_ls, tau_d),
        DistillKind::Contrastive => distill_contrastive_graph(g, f_lv, f_ls, tau_d),
    }
}

/// MSE between video embeddings and (optionally projected) skeleton embeddings.
pub fn feature_kd_graph(g: &mut Graph, z_v: Var, z_s: Var, projection: Option<Var>) -> Result<Var> {
    let target = match projection {
        Some(w) => g.matmul(z_s, w)?,
        None => z_s,
    };
    if g.value(target).shape() != g.value(z_v).shape() {
        return Err(SkiError::shape(
            "feature_kd",
            format!("video {:?} vs skeleton {:?}", g.value(z_v).shape(), g.value(target).shape()),
        ));
    }
    let d = g.sub(z_v, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn feature_kd(z_v: &Matrix, z_s: &Matrix, projection: Option<&Matrix>) -> Result<LossValue> {
    let mut g = graph();
    let (a, b) = (g.constant(z_v.clone()), g.constant(z_s.clone()));
    let p = projection.map(|p| g.constant(p.clone()));
    let l = feature_kd_graph(&mut g, a, b, p)?;
    Ok(LossValue::single("feature_kd", g.scalar(l)))
}

/// `ce_video + ce_skeleton + alpha * distill`.
pub fn scd_total(ce_video: &LossValue, ce_skeleton: &LossValue, distill: &LossValue, alpha: f64) -> Result<LossValue> {
    for (name, v) in [("ce_video", ce_video), ("ce_skeleton", ce_skeleton), ("distill", distill)] {
        if !v.scalar.is_finite() {
            return Err(SkiError::Degenerate(format!("{name} is not finite")));
        }
    }
    if !(alpha >= 0.0) {
        return Err(SkiError::arg("alpha", "must be non-negative"));
    }
    Ok(LossValue::weighted(&[
        ("ce_video", ce_video.scalar, 1.0),
        ("ce_skeleton", ce_skeleton.scalar, 1.0),
        ("distill", distill.scalar, alpha),
    ]))
}

/// Sum of InfoNCE over (video, text), (skeleton, text) and (video, skeleton).
/// Returns the total and the three pair terms.
pub fn trimodal_graph(g: &mut Graph, z_v: Var, z_s: Var, z_t: Var, tau: f64) -> Result<(Var, [Var; 3])> {
    let vt = info_nce_graph(g, z_v, z_t, tau)?;
    let st = info_nce_graph(g, z_s, z_t, tau)?;
    let vs = info_nce_graph(g, z_v, z_s, tau)?;
    let total = g.weighted_sum(&[(vt, 1.0), (st, 1.0), (vs, 1.0)])?;
    Ok((total, [vt, st, vs]))
}

pub fn trimodal_contrastive(z_v: &Matrix, z_s: &Matrix, z_t: &Matrix, tau: f64) -> Result<LossValue> {
    let mut g = graph();
    let (v, s, t) = (g.constant(z_v.clone()), g.constant(z_s.clone()), g.constant(z_t.clone()));
    let (_, [vt, st, vs]) = trimodal_graph(&mut g, v, s, t, tau)?;
    Ok(LossValue::weighted(&[
        ("video_text", g.scalar(vt), 1.0),
        ("skeleton_text", g.scalar(st), 1.0),
        ("video_skeleton", g.scalar(vs), 1.0),
    ]))
}

/// InfoNCE aligning skeleton embeddings to frozen video embeddings; the
/// video side is detached so no gradient reaches it.
pub fn crossproj_graph(g: &mut Graph, z_s: Var, z_v_frozen: Var, tau: f64) -> Result<Var> {
    let v = g.detach(z_v_frozen);
    info_nce_graph(g, z_s, v, tau)
}

pub fn crossproj_align(z_s: &Matrix, z_v_frozen: &Matrix, tau: f64) -> Result<LossValue> {
    let mut g = graph();
    let (s, v) = (g.constant(z_s.clone()), g.constant(z_v_frozen.clone()));
    let l = crossproj_graph(&mut g, s, v, tau)?;
    Ok(LossValue::single("crossproj", g.scalar(l)))
}

/// Mean next-token NLL at the masked positions. Row `p` of `logits` is the
/// prediction for `targets[p]`.
pub fn lm_loss_graph(g: &mut Graph, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
    let (n, v) = g.value(logits).shape();
    if targets.len() != n || mask.len() != n {
        return Err(SkiError::shape(
            "autoregressive_lm_loss",
            format!("{n} positions, {} targets, {} mask bits", targets.len(), mask.len()),
        ));
    }
    if !mask.iter().any(|&m| m) {
        return Err(SkiError::arg("mask", "selects no response positions"));
    }
    if let Some(&t) = targets.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t).find(|&&t| t >= v) {
        return Err(SkiError::arg("targets", format!("token {t} out of range for vocabulary {v}")));
    }
    // unmasked targets may be placeholders; clamp so pick stays in range
    let safe: Vec<usize> = targets.iter().map(|&t| t.min(v - 1)).collect();
    let ls = g.log_softmax_rows(logits);
    let picked = g.pick(ls, safe)?;
    let m = g.masked_mean(picked, mask.to_vec())?;
    Ok(g.scale(m, -1.0))
}

pub fn autoregressive_lm_loss(logits: &Matrix, targets: &[usize], mask: &[bool]) -> Result<LossValue> {
    let mut g = graph();
    let l = g.constant(logits.clone());
    let loss = lm_loss_graph(&mut g, l, targets, mask)?;
    Ok(LossValue::single("nll", g.scalar(loss)))
}
