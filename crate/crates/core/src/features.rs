//! Per-frame hand features, three-frame context stacking and the train-time
//! augmentations.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::datamodel::{Annotation, Clip, Interval, Joints, KeypointFrame, JOINTS_PER_HAND, NUM_LETTERS};
use crate::error::{Error, Result};

pub const HAND_FEATURE_DIM: usize = 2 * JOINTS_PER_HAND * 3 + 2;
pub const CONTEXT: usize = 3;
pub const STACKED_DIM: usize = CONTEXT * HAND_FEATURE_DIM;

/// 126 root-relative joint coordinates, then `dist_2d`, then `dist_3d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HandFeatureFrame(pub [f64; HAND_FEATURE_DIM]);

impl HandFeatureFrame {
    pub fn dist_2d(&self) -> f64 {
        self.0[HAND_FEATURE_DIM - 2]
    }

    pub fn dist_3d(&self) -> f64 {
        self.0[HAND_FEATURE_DIM - 1]
    }
}

/// Stacked hand features (T x 384) and optional lip features (T x D_lip).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub hand: Array2<f64>,
    pub lip: Option<Array2<f64>>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.hand.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hand.nrows() == 0
    }

    pub fn lip_dim(&self) -> Option<usize> {
        self.lip.as_ref().map(|l| l.ncols())
    }

    pub fn without_lip(mut self) -> Self {
        self.lip = None;
        self
    }

    /// Rows in the given order; indices may repeat.
    pub fn gather(&self, rows: &[usize]) -> Self {
        Self {
            hand: self.hand.select(Axis(0), rows),
            lip: self.lip.as_ref().map(|l| l.select(Axis(0), rows)),
        }
    }
}

fn centroid(joints: &Joints) -> [f64; 3] {
    let mut c = [0.0; 3];
    for j in joints {
        for k in 0..3 {
            c[k] += j[k];
        }
    }
    c.map(|v| v / JOINTS_PER_HAND as f64)
}

fn dist<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn extract_hand_features(frame: &KeypointFrame) -> Result<HandFeatureFrame> {
    if !frame.is_finite() {
        return Err(Error::invalid("non-finite keypoint"));
    }
    let mut out = [0.0; HAND_FEATURE_DIM];
    for (h, joints) in [&frame.left, &frame.right].into_iter().enumerate() {
        let root = joints[0];
        for (j, xyz) in joints.iter().enumerate() {
            for k in 0..3 {
                out[h * JOINTS_PER_HAND * 3 + j * 3 + k] = xyz[k] - root[k];
            }
        }
    }
    out[HAND_FEATURE_DIM - 2] = dist(&frame.left_center_2d, &frame.right_center_2d);
    out[HAND_FEATURE_DIM - 1] = dist(&centroid(&frame.left), &centroid(&frame.right));
    Ok(HandFeatureFrame(out))
}

/// Row `t` is `f[t-1] ‖ f[t] ‖ f[t+1]`, replicating the first and last frame
/// at the sequence edges.
pub fn stack_context(frames: &[HandFeatureFrame]) -> Result<Array2<f64>> {
    if frames.is_empty() {
        return Err(Error::invalid("cannot stack an empty sequence"));
    }
    let t_len = frames.len();
    let mut out = Array2::zeros((t_len, STACKED_DIM));
    for t in 0..t_len {
        let neighbours = [t.saturating_sub(1), t, (t + 1).min(t_len - 1)];
        let mut row = out.row_mut(t);
        for (slot, &src) in neighbours.iter().enumerate() {
            row.slice_mut(s![slot * HAND_FEATURE_DIM..(slot + 1) * HAND_FEATURE_DIM])
                .assign(&ndarray::aview1(&frames[src].0));
        }
    }
    Ok(out)
}

/// Features for an interval of a clip. Context at the interval edges comes
/// from the neighbouring clip frames when they exist.
pub fn sequence_for_interval(clip: &Clip, interval: Interval) -> Result<FeatureSequence> {
    if interval.end >= clip.len() {
        return Err(Error::invalid(format!(
            "interval end {} beyond clip {} of length {}",
            interval.end,
            clip.clip_id,
            clip.len()
        )));
    }
    let lo = interval.start.saturating_sub(1);
    let hi = (interval.end + 1).min(clip.len() - 1);
    let feats = clip.frames[lo..=hi]
        .iter()
        .map(extract_hand_features)
        .collect::<Result<Vec<_>>>()?;
    let stacked = stack_context(&feats)?;
    let off = interval.start - lo;
    let hand = stacked.slice(s![off..off + interval.len(), ..]).to_owned();
    let lip = match clip.lip_dim() {
        Some(d) => {
            let mut lip = Array2::zeros((interval.len(), d));
            for (r, t) in (interval.start..=interval.end).enumerate() {
                let v = clip.frames[t].lip.as_ref().expect("lip dim checked by Clip::validate");
                lip.row_mut(r).assign(&ndarray::aview1(v));
            }
            Some(lip)
        }
        None => None,
    };
    Ok(FeatureSequence { hand, lip })
}

pub fn sequence_for_clip(clip: &Clip) -> Result<FeatureSequence> {
    sequence_for_interval(clip, Interval::new(0, clip.len() - 1))
}

pub fn augment_noise<R: Rng + ?Sized>(seq: &FeatureSequence, sigma: f64, rng: &mut R) -> Result<FeatureSequence> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = seq.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    out.hand.mapv_inplace(|v| v + normal.sample(rng));
    if let Some(lip) = out.lip.as_mut() {
        lip.mapv_inplace(|v| v + normal.sample(rng));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalAugment {
    pub p_swap: f64,
    pub p_drop: f64,
    pub p_dup: f64,
}

impl Default for TemporalAugment {
    fn default() -> Self {
        Self {
            p_swap: 0.05,
            p_drop: 0.02,
            p_dup: 0.05,
        }
    }
}

impl TemporalAugment {
    pub const NONE: Self = Self {
        p_swap: 0.0,
        p_drop: 0.0,
        p_dup: 0.0,
    };

    fn validate(&self) -> Result<()> {
        for p in [self.p_swap, self.p_drop, self.p_dup] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("augmentation probability {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Source frame index for every output frame.
///
/// One left-to-right pass; at each position the frame may first swap with its
/// right neighbour, then be dropped, then be duplicated. A frame that was
/// just swapped in is not swapped again, so no frame moves more than one slot.
pub fn temporal_plan<R: Rng + ?Sized>(len: usize, aug: &TemporalAugment, rng: &mut R) -> Result<Vec<usize>> {
    aug.validate()?;
    if len == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut out = Vec::with_capacity(len + len / 8);
    let mut locked = false;
    for i in 0..len {
        if !locked && i + 1 < len && rng.random_bool(aug.p_swap) {
            order.swap(i, i + 1);
            locked = true;
        } else {
            locked = false;
        }
        if rng.random_bool(aug.p_drop) {
            continue;
        }
        out.push(order[i]);
        if rng.random_bool(aug.p_dup) {
            out.push(order[i]);
        }
    }
    if out.is_empty() {
        out.push(0);
    }
    Ok(out)
}

/// Applies one temporal plan to the features and, when given, the per-frame
/// labels.
pub fn augment_temporal<R: Rng + ?Sized, L: Clone>(
    seq: &FeatureSequence,
    labels: Option<&[L]>,
    aug: &TemporalAugment,
    rng: &mut R,
) -> Result<(FeatureSequence, Option<Vec<L>>)> {
    if let Some(l) = labels {
        if l.len() != seq.len() {
            return Err(Error::shape(format!("{} labels for {} frames", l.len(), seq.len())));
        }
    }
    let plan = temporal_plan(seq.len(), aug, rng)?;
    let labels = labels.map(|l| plan.iter().map(|&i| l[i].clone()).collect());
    Ok((seq.gather(&plan), labels))
}

/// Inverse-frequency letter weights over the letters that occur.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    /// Indexed by class (blank slot unused and zero).
    pub per_class: [f64; NUM_LETTERS + 1],
    pub counts: [usize; NUM_LETTERS + 1],
}

impl ClassWeights {
    pub fn weight(&self, class: usize) -> f64 {
        self.per_class[class]
    }

    /// Mean letter weight of one letter sequence.
    pub fn sample_weight(&self, letters: &[usize]) -> f64 {
        if letters.is_empty() {
            return 0.0;
        }
        letters.iter().map(|&c| self.per_class[c]).sum::<f64>() / letters.len() as f64
    }
}

pub fn class_weights_from_counts(counts: [usize; NUM_LETTERS + 1]) -> Result<ClassWeights> {
    let mut per_class = [0.0; NUM_LETTERS + 1];
    for c in 1..=NUM_LETTERS {
        if counts[c] > 0 {
            per_class[c] = 1.0 / counts[c] as f64;
        }
    }
    let total: f64 = per_class.iter().sum();
    if total == 0.0 {
        return Err(Error::invalid("no labeled letters to weight"));
    }
    per_class.iter_mut().for_each(|w| *w /= total);
    Ok(ClassWeights { per_class, counts })
}

pub fn class_weights(annotations: &[Annotation]) -> Result<ClassWeights> {
    let mut counts = [0usize; NUM_LETTERS + 1];
    for ann in annotations {
        for &c in ann.letters.iter().flat_map(|l| l.as_slice()) {
            counts[c] += 1;
        }
    }
    class_weights_from_counts(counts)
}
