//! Frame-level fingerspelling detector, window smoothing, interval
//! extraction and refiltering of weak annotations.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    load_checkpoint, save_checkpoint, Annotation, Clip, Interval, ModelCheckpoint, ModelKind,
};
use crate::error::{Error, Result};
use crate::features::{sequence_for_clip, sequence_for_interval, STACKED_DIM};
use crate::nn::ops::sigmoid;
use crate::nn::{flatten, load_flat, Adam, AdamConfig, MlpClassifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub layer_units: Vec<usize>,
    pub dropout: f64,
    pub window_w: usize,
    pub window_k: usize,
    pub frame_threshold: f64,
    /// Frames searched on each side of a weak interval.
    pub search_pad: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            layer_units: vec![128, 64, 32],
            dropout: 0.3,
            window_w: 6,
            window_k: 4,
            frame_threshold: 0.5,
            search_pad: 12,
            epochs: 8,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_k == 0 || self.window_k > self.window_w {
            return Err(Error::Config(format!(
                "need 1 <= window_k <= window_w, got k={} w={}",
                self.window_k, self.window_w
            )));
        }
        if !(self.frame_threshold > 0.0 && self.frame_threshold < 1.0) {
            return Err(Error::Config(format!("frame_threshold {} outside (0,1)", self.frame_threshold)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.batch_size == 0 || self.layer_units.contains(&0) {
            return Err(Error::Config("batch size and layer widths must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// `output[t]` is set iff some full window of `w` frames covering `t` holds
/// at least `k` positives. Partial windows at the edges do not vote.
pub fn smooth(binary: &[bool], w: usize, k: usize) -> Vec<bool> {
    let n = binary.len();
    let mut out = vec![false; n];
    if w == 0 || n < w {
        return out;
    }
    let mut count = binary[..w].iter().filter(|&&b| b).count();
    // Furthest frame already marked, to avoid re-marking overlapping windows.
    let mut marked_to = 0usize;
    for start in 0..=n - w {
        if start > 0 {
            count = count + usize::from(binary[start + w - 1]) - usize::from(binary[start - 1]);
        }
        if count >= k {
            for o in out.iter_mut().take(start + w).skip(start.max(marked_to)) {
                *o = true;
            }
            marked_to = start + w;
        }
    }
    out
}

/// Maximal runs of positives.
pub fn extract_intervals(binary: &[bool]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &b) in binary.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push(Interval::new(s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Interval::new(s, binary.len() - 1));
    }
    out
}

pub fn intervals_to_mask(intervals: &[Interval], len: usize) -> Vec<bool> {
    let mut mask = vec![false; len];
    for iv in intervals {
        for m in mask.iter_mut().take(iv.end + 1).skip(iv.start) {
            *m = true;
        }
    }
    mask
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub mlp: MlpClassifier,
}

#[derive(Serialize, Deserialize)]
struct DetectorArch {
    input_dim: usize,
    config: DetectorConfig,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = MlpClassifier::new(input_dim, &cfg.layer_units, 1, cfg.dropout, &mut rng)?;
        Ok(Self { cfg, mlp })
    }

    /// Per-frame fingerspelling probability (eval mode).
    pub fn forward(&self, features: &Array2<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.mlp.input_dim() {
            return Err(Error::shape(format!(
                "detector expects {} features per frame, got {}",
                self.mlp.input_dim(),
                features.ncols()
            )));
        }
        // Eval mode never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = self.mlp.forward(features, false, &mut rng)?;
        Ok(logits.column(0).iter().map(|&z| sigmoid(z)).collect())
    }

    /// Thresholded and window-smoothed frame decisions.
    pub fn predict_mask(&self, features: &Array2<f64>) -> Result<Vec<bool>> {
        let probs = self.forward(features)?;
        let raw: Vec<bool> = probs.iter().map(|&p| p > self.cfg.frame_threshold).collect();
        Ok(smooth(&raw, self.cfg.window_w, self.cfg.window_k))
    }

    pub fn detect(&self, features: &Array2<f64>) -> Result<Vec<Interval>> {
        Ok(extract_intervals(&self.predict_mask(features)?))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<ModelCheckpoint> {
        let arch = serde_json::to_value(DetectorArch {
            input_dim: self.mlp.input_dim(),
            config: self.cfg.clone(),
        })?;
        let mut ckpt = ModelCheckpoint::new(ModelKind::Detector, arch, seed);
        ckpt.weights = flatten(&self.mlp);
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        if ckpt.model_kind != ModelKind::Detector {
            return Err(Error::Checkpoint(format!("expected a detector, found {:?}", ckpt.model_kind)));
        }
        let arch: DetectorArch = serde_json::from_value(ckpt.arch_config.clone())?;
        let mut det = Self::new(arch.config, arch.input_dim, 0)?;
        load_flat(&mut det.mlp, &ckpt.weights)?;
        Ok(det)
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        save_checkpoint(&self.to_checkpoint(seed)?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

/// Frame features of one clip with a fingerspelling flag per frame.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub features: Array2<f64>,
    pub labels: Vec<bool>,
}

/// Whole-clip training frames: positives inside any of the clip's
/// annotated intervals, negatives everywhere else.
pub fn frame_sets(clips: &[Clip], annotations: &[Annotation]) -> Result<Vec<FrameSet>> {
    let mut out = Vec::new();
    for clip in clips {
        let intervals: Vec<Interval> = annotations
            .iter()
            .filter(|a| a.clip_id == clip.clip_id)
            .map(|a| a.interval)
            .collect();
        if intervals.is_empty() {
            continue;
        }
        let seq = sequence_for_clip(clip)?;
        out.push(FrameSet {
            features: seq.hand,
            labels: intervals_to_mask(&intervals, clip.len()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTraining {
    pub detector: Detector,
    /// Mean weighted loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch training with class-balanced binary cross-entropy.
pub fn train_detector(sets: &[FrameSet], cfg: &DetectorConfig, seed: u64) -> Result<DetectorTraining> {
    cfg.validate()?;
    let frames: Vec<(usize, usize)> = sets
        .iter()
        .enumerate()
        .flat_map(|(s, set)| (0..set.labels.len()).map(move |t| (s, t)))
        .collect();
    let n_pos = frames.iter().filter(|&&(s, t)| sets[s].labels[t]).count();
    let n_neg = frames.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("detector training needs both positive and negative frames"));
    }
    let dim = sets[0].features.ncols();
    let mut det = Detector::new(cfg.clone(), dim, seed)?;
    let w_pos = frames.len() as f64 / (2.0 * n_pos as f64);
    let w_neg = frames.len() as f64 / (2.0 * n_neg as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d7c7);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order = frames;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut x = Array2::zeros((batch.len(), dim));
            for (r, &(s, t)) in batch.iter().enumerate() {
                x.row_mut(r).assign(&sets[s].features.row(t));
            }
            let (logits, cache) = det.mlp.forward(&x, true, &mut rng)?;
            let mut dlogits = Array2::zeros((batch.len(), 1));
            let mut total_w = 0.0;
            let mut loss = 0.0;
            for (r, &(s, t)) in batch.iter().enumerate() {
                let z = logits[[r, 0]];
                let (y, w) = if sets[s].labels[t] { (1.0, w_pos) } else { (0.0, w_neg) };
                // Stable BCE on the logit.
                loss += w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
                dlogits[[r, 0]] = w * (sigmoid(z) - y);
                total_w += w;
            }
            dlogits /= total_w;
            let mut grad = det.mlp.zeros_like();
            det.mlp.backward(&cache, &dlogits, &mut grad);
            adam.step(&mut det.mlp, &grad)?;
            epoch_loss += loss;
            epoch_weight += total_w;
        }
        let mean = epoch_loss / epoch_weight;
        log::debug!("detector epoch {epoch}: loss {mean:.5}");
        loss_curve.push(mean);
    }
    Ok(DetectorTraining { detector: det, loss_curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoFingerspelling,
    MultipleEvents,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NoFingerspelling => "no_fingerspelling",
            RejectReason::MultipleEvents => "multiple_events",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Refiltered {
    Tightened(Annotation),
    Rejected(RejectReason),
}

/// The weak interval padded by `pad` frames on each side, clamped to the clip.
pub fn search_range(clip: &Clip, interval: Interval, pad: usize) -> Interval {
    Interval::new(
        interval.start.saturating_sub(pad),
        (interval.end + pad).min(clip.len().saturating_sub(1)),
    )
}

/// Runs the detector around a weak interval and keeps the annotation only
/// when exactly one fingerspelling interval is found there.
pub fn refilter_annotation(clip: &Clip, weak: &Annotation, detector: &Detector) -> Result<Refiltered> {
    if weak.clip_id != clip.clip_id {
        return Err(Error::invalid(format!(
            "annotation for clip {} checked against clip {}",
            weak.clip_id, clip.clip_id
        )));
    }
    weak.validate_against(clip)?;
    let range = search_range(clip, weak.interval, detector.cfg.search_pad);
    let seq = sequence_for_interval(clip, range)?;
    let found = detector.detect(&seq.hand)?;
    Ok(decide(weak, range, &found))
}

/// The refilter rule given the intervals found inside `range` (relative to
/// its start).
pub fn decide(weak: &Annotation, range: Interval, found: &[Interval]) -> Refiltered {
    match found {
        [] => Refiltered::Rejected(RejectReason::NoFingerspelling),
        [one] => {
            let mut out = weak.clone();
            out.interval = Interval::new(range.start + one.start, range.start + one.end);
            Refiltered::Tightened(out)
        }
        _ => Refiltered::Rejected(RejectReason::MultipleEvents),
    }
}

/// Probabilities for every frame of every clip in `sets` alongside the
/// ground-truth flags, for ROC evaluation.
pub fn score_frames(detector: &Detector, sets: &[FrameSet]) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for set in sets {
        scores.extend(detector.forward(&set.features)?);
        labels.extend_from_slice(&set.labels);
    }
    Ok((scores, labels))
}

pub const DETECTOR_INPUT_DIM: usize = STACKED_DIM;
