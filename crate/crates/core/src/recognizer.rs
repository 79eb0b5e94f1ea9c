//! Hand / lip fusion recognizer, its CE + CTC training loop and word
//! prediction.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_loss, greedy_decode, mask_to_word, masked_log_softmax, masked_log_softmax_backward, per_frame_ce};
use crate::datamodel::{
    load_checkpoint, save_checkpoint, Annotation, Clip, LetterSeq, LossWeights, ModelCheckpoint, ModelKind, BLANK,
    NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::features::{
    augment_noise, augment_temporal, class_weights_from_counts, sequence_for_interval, FeatureSequence,
    TemporalAugment, STACKED_DIM,
};
use crate::nn::ops::{dropout, dropout_backward, log_softmax, relu, relu_backward};
use crate::nn::{
    flatten, load_flat, scale, Adam, AdamConfig, EncoderCache, EncoderConfig, EncoderStack, LayerNorm, LayerNormCache,
    Linear, Params,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    pub hand_in: usize,
    /// Lip feature width; 0 builds a model without a lip branch.
    pub lip_in: usize,
    pub embed: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub branch_layers: usize,
    pub fusion_layers: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub norm_first: bool,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            hand_in: STACKED_DIM,
            lip_in: 512,
            embed: 128,
            heads: 2,
            ffn_dim: 512,
            branch_layers: 2,
            fusion_layers: 2,
            head_hidden: 256,
            dropout: 0.3,
            norm_first: true,
        }
    }
}

impl RecognizerConfig {
    /// A desk-sized model for the synthetic corpus.
    pub fn small(lip_in: usize) -> Self {
        Self {
            lip_in,
            embed: 32,
            ffn_dim: 64,
            head_hidden: 64,
            dropout: 0.1,
            ..Self::default()
        }
    }

    fn branch(&self) -> EncoderConfig {
        EncoderConfig {
            model_dim: self.embed,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            layers: self.branch_layers,
            dropout: self.dropout,
            norm_first: self.norm_first,
        }
    }

    fn fusion(&self) -> EncoderConfig {
        EncoderConfig {
            model_dim: 2 * self.embed,
            layers: self.fusion_layers,
            ..self.branch()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hand_in == 0 || self.embed == 0 || self.head_hidden == 0 {
            return Err(Error::Config("recognizer widths must be positive".into()));
        }
        self.branch().validate()?;
        self.fusion().validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognizer {
    pub cfg: RecognizerConfig,
    pub hand_proj: Linear,
    pub hand_enc: EncoderStack,
    pub lip: Option<(Linear, EncoderStack)>,
    /// Stand-in lip embedding used when a sequence has no lip features.
    pub missing_lip: Array1<f64>,
    pub fusion: EncoderStack,
    pub norm: LayerNorm,
    pub head1: Linear,
    pub head2: Linear,
}

#[derive(Debug, Clone)]
pub struct RecognizerCache {
    hand_in: Array2<f64>,
    hand_enc: EncoderCache,
    lip: Option<(Array2<f64>, EncoderCache)>,
    fusion: EncoderCache,
    norm: LayerNormCache,
    normed: Array2<f64>,
    hidden: Array2<f64>,
    mask: Option<Array2<f64>>,
    head_in: Array2<f64>,
}

impl Recognizer {
    pub fn new(cfg: RecognizerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hand_proj = Linear::new(cfg.hand_in, cfg.embed, &mut rng);
        let hand_enc = EncoderStack::new(cfg.branch(), &mut rng)?;
        let lip = if cfg.lip_in > 0 {
            Some((Linear::new(cfg.lip_in, cfg.embed, &mut rng), EncoderStack::new(cfg.branch(), &mut rng)?))
        } else {
            None
        };
        let fusion = EncoderStack::new(cfg.fusion(), &mut rng)?;
        Ok(Self {
            cfg,
            hand_proj,
            hand_enc,
            lip,
            missing_lip: Array1::zeros(cfg.embed),
            fusion,
            norm: LayerNorm::new(2 * cfg.embed),
            head1: Linear::new(2 * cfg.embed, cfg.head_hidden, &mut rng),
            head2: Linear::new(cfg.head_hidden, NUM_CLASSES, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg,
            hand_proj: self.hand_proj.zeros_like(),
            hand_enc: self.hand_enc.zeros_like(),
            lip: self.lip.as_ref().map(|(l, e)| (l.zeros_like(), e.zeros_like())),
            missing_lip: Array1::zeros(self.missing_lip.len()),
            fusion: self.fusion.zeros_like(),
            norm: self.norm.zeros_like(),
            head1: self.head1.zeros_like(),
            head2: self.head2.zeros_like(),
        }
    }

    /// `T x 27` logits. Lip features are used when both the model and the
    /// sequence have them.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        seq: &FeatureSequence,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, RecognizerCache)> {
        let t = seq.len();
        if t == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        if seq.hand.ncols() != self.cfg.hand_in {
            return Err(Error::shape(format!(
                "recognizer expects {} hand features, got {}",
                self.cfg.hand_in,
                seq.hand.ncols()
            )));
        }
        let h = self.hand_proj.forward(&seq.hand)?;
        let (h, hand_enc) = self.hand_enc.forward(&h, train, rng)?;
        let (l, lip) = match (&self.lip, &seq.lip) {
            (Some((proj, enc)), Some(x)) => {
                if x.ncols() != self.cfg.lip_in || x.nrows() != t {
                    return Err(Error::shape(format!(
                        "lip features {:?}, expected {t} x {}",
                        x.dim(),
                        self.cfg.lip_in
                    )));
                }
                let p = proj.forward(x)?;
                let (l, c) = enc.forward(&p, train, rng)?;
                (l, Some((x.clone(), c)))
            }
            _ => (
                self.missing_lip.broadcast((t, self.cfg.embed)).expect("row broadcast").to_owned(),
                None,
            ),
        };
        let cat = concatenate![Axis(1), h, l];
        let (f, fusion) = self.fusion.forward(&cat, train, rng)?;
        let (normed, norm) = self.norm.forward(&f);
        let hidden = self.head1.forward(&normed)?;
        let (head_in, mask) = dropout(&relu(&hidden), self.cfg.dropout, rng, train)?;
        let logits = self.head2.forward(&head_in)?;
        Ok((
            logits,
            RecognizerCache {
                hand_in: seq.hand.clone(),
                hand_enc,
                lip,
                fusion,
                norm,
                normed,
                hidden,
                mask,
                head_in,
            },
        ))
    }

    /// Accumulates parameter gradients for `dlogits` into `grad`.
    pub fn backward(&self, cache: &RecognizerCache, dlogits: &Array2<f64>, grad: &mut Self) {
        let e = self.cfg.embed;
        let d = self.head2.backward(&cache.head_in, dlogits, &mut grad.head2);
        let d = relu_backward(&cache.hidden, &dropout_backward(cache.mask.as_ref(), d));
        let d = self.head1.backward(&cache.normed, &d, &mut grad.head1);
        let d = self.norm.backward(&cache.norm, &d, &mut grad.norm);
        let dcat = self.fusion.backward(&cache.fusion, &d, &mut grad.fusion);
        let dh = dcat.slice(s![.., ..e]).to_owned();
        let dl = dcat.slice(s![.., e..]).to_owned();
        let dh = self.hand_enc.backward(&cache.hand_enc, &dh, &mut grad.hand_enc);
        self.hand_proj.backward(&cache.hand_in, &dh, &mut grad.hand_proj);
        match (&cache.lip, &self.lip, &mut grad.lip) {
            (Some((x, c)), Some((proj, enc)), Some((gproj, genc))) => {
                let dp = enc.backward(c, &dl, genc);
                proj.backward(x, &dp, gproj);
            }
            _ => grad.missing_lip += &dl.sum_axis(Axis(0)),
        }
    }

    pub fn log_probs(&self, seq: &FeatureSequence) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(log_softmax(&self.forward(seq, false, &mut rng)?.0))
    }

    /// Open-alphabet greedy decode in eval mode.
    pub fn predict_word(&self, seq: &FeatureSequence) -> Result<Prediction> {
        let lp = self.log_probs(seq)?;
        let (path, letters) = greedy_decode(&lp);
        Ok(Prediction { letters, path })
    }

    /// Greedy decode restricted to the letters of `word`.
    pub fn predict_masked(&self, seq: &FeatureSequence, word: &str) -> Result<Prediction> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lp = mask_to_word(&self.forward(seq, false, &mut rng)?.0, word)?;
        let (path, letters) = greedy_decode(&lp);
        Ok(Prediction { letters, path })
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<ModelCheckpoint> {
        let mut ckpt = ModelCheckpoint::new(ModelKind::Recognizer, serde_json::to_value(self.cfg)?, seed);
        ckpt.weights = flatten(self);
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        if ckpt.model_kind != ModelKind::Recognizer {
            return Err(Error::Checkpoint(format!("expected a recognizer, found {:?}", ckpt.model_kind)));
        }
        let cfg: RecognizerConfig = serde_json::from_value(ckpt.arch_config.clone())?;
        let mut model = Self::new(cfg, 0)?;
        load_flat(&mut model, &ckpt.weights)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        save_checkpoint(&self.to_checkpoint(seed)?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

impl Params for Recognizer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        let p = |n: &str| crate::nn::join_name(prefix, n);
        self.hand_proj.visit(&p("hand_proj"), f);
        self.hand_enc.visit(&p("hand_enc"), f);
        if let Some((proj, enc)) = &self.lip {
            proj.visit(&p("lip_proj"), f);
            enc.visit(&p("lip_enc"), f);
        }
        f(&p("missing_lip"), self.missing_lip.as_slice().expect("contiguous"));
        self.fusion.visit(&p("fusion"), f);
        self.norm.visit(&p("norm"), f);
        self.head1.visit(&p("head1"), f);
        self.head2.visit(&p("head2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        let p = |n: &str| crate::nn::join_name(prefix, n);
        self.hand_proj.visit_mut(&p("hand_proj"), f);
        self.hand_enc.visit_mut(&p("hand_enc"), f);
        if let Some((proj, enc)) = &mut self.lip {
            proj.visit_mut(&p("lip_proj"), f);
            enc.visit_mut(&p("lip_enc"), f);
        }
        f(&p("missing_lip"), self.missing_lip.as_slice_mut().expect("contiguous"));
        self.fusion.visit_mut(&p("fusion"), f);
        self.norm.visit_mut(&p("norm"), f);
        self.head1.visit_mut(&p("head1"), f);
        self.head2.visit_mut(&p("head2"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub letters: LetterSeq,
    /// Per-frame argmax class.
    pub path: Vec<usize>,
}

/// One training sequence with its targets.
#[derive(Debug, Clone)]
pub struct Example {
    pub seq: FeatureSequence,
    pub letters: Vec<usize>,
    pub frame_labels: Vec<usize>,
    /// Classes the CTC log-probabilities are renormalised over.
    pub allowed: [bool; NUM_CLASSES],
}

impl Example {
    /// Needs letters and frame labels. The CTC mask is the associated word's
    /// letters together with the target letters.
    pub fn from_annotation(clip: &Clip, ann: &Annotation) -> Result<Self> {
        let letters = ann
            .letters
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{}: training entry without letters", ann.clip_id)))?;
        let labels = ann
            .frame_labels
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{}: training entry without frame labels", ann.clip_id)))?;
        let seq = sequence_for_interval(clip, ann.interval)?;
        if labels.len() != seq.len() {
            return Err(Error::shape(format!(
                "{}: {} frame labels for {} frames",
                ann.clip_id,
                labels.len(),
                seq.len()
            )));
        }
        let mut allowed = letters.class_set();
        if let Some(w) = &ann.word {
            let ws = LetterSeq::parse(w)?.class_set();
            for (a, b) in allowed.iter_mut().zip(ws) {
                *a |= b;
            }
        }
        allowed[BLANK] = true;
        Ok(Self {
            seq,
            letters: letters.as_slice().to_vec(),
            frame_labels: labels.clone(),
            allowed,
        })
    }
}

pub fn examples_from(clips: &BTreeMap<&str, &Clip>, annotations: &[Annotation]) -> Result<Vec<Example>> {
    annotations
        .iter()
        .map(|a| {
            let clip = clips
                .get(a.clip_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no clip {}", a.clip_id)))?;
            Example::from_annotation(clip, a)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub virtual_batch: usize,
    pub loss: LossWeights,
    pub noise_sigma: f64,
    pub temporal: TemporalAugment,
    pub weighted_sampling: bool,
    pub use_lip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-4,
            virtual_batch: 8,
            loss: LossWeights::default(),
            noise_sigma: 0.05,
            temporal: TemporalAugment::default(),
            weighted_sampling: true,
            use_lip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.virtual_batch == 0 {
            return Err(Error::Config("virtual_batch must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        LossWeights::new(self.loss.lambda_f, self.loss.lambda_ctc)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Recognizer,
    /// Mean total loss per epoch over the examples actually used.
    pub loss_curve: Vec<f64>,
    /// Examples skipped because augmentation left too few frames for CTC.
    pub skipped: usize,
}

/// Epoch visiting order: a shuffle, or draws with replacement in proportion
/// to each example's mean inverse letter frequency.
fn epoch_order<R: Rng + ?Sized>(n: usize, weights: Option<&WeightedIndex<f64>>, rng: &mut R) -> Vec<usize> {
    match weights {
        Some(w) => (0..n).map(|_| w.sample(rng)).collect(),
        None => {
            let mut v: Vec<usize> = (0..n).collect();
            v.shuffle(rng);
            v
        }
    }
}

pub fn sampling_weights(examples: &[Example]) -> Result<Vec<f64>> {
    let mut counts = [0usize; NUM_CLASSES];
    for ex in examples {
        for &c in &ex.letters {
            counts[c] += 1;
        }
    }
    let cw = class_weights_from_counts(counts)?;
    Ok(examples.iter().map(|ex| cw.sample_weight(&ex.letters)).collect())
}

/// Loss and logit gradient of one sequence. `None` when the CTC target does
/// not fit in the sequence.
pub fn example_loss(
    logits: &Array2<f64>,
    letters: &[usize],
    frame_labels: &[usize],
    allowed: &[bool; NUM_CLASSES],
    w: &LossWeights,
) -> Result<Option<(f64, Array2<f64>)>> {
    let labels: Vec<Option<usize>> = frame_labels.iter().map(|&l| Some(l)).collect();
    let (lf, df) = per_frame_ce(logits, &labels)?;
    let lp = masked_log_softmax(logits, allowed);
    let ctc = ctc_loss(&lp, letters)?;
    if !ctc.feasible {
        return Ok(None);
    }
    let dctc = masked_log_softmax_backward(&lp, allowed, &ctc.grad);
    Ok(Some((w.lambda_f * lf + w.lambda_ctc * ctc.loss, df * w.lambda_f + dctc * w.lambda_ctc)))
}

pub fn train(mut model: Recognizer, examples: &[Example], tcfg: &TrainConfig, seed: u64) -> Result<Trained> {
    tcfg.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let weights = if tcfg.weighted_sampling {
        Some(WeightedIndex::new(sampling_weights(examples)?).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut adam = Adam::new(AdamConfig {
        lr: tcfg.lr,
        ..AdamConfig::default()
    });
    let mut grad = model.zeros_like();
    let mut pending = 0usize;
    let mut loss_curve = Vec::with_capacity(tcfg.epochs);
    let mut skipped = 0;
    for epoch in 0..tcfg.epochs {
        let mut total = 0.0;
        let mut used = 0usize;
        for i in epoch_order(examples.len(), weights.as_ref(), &mut rng) {
            let ex = &examples[i];
            let noisy = augment_noise(&ex.seq, tcfg.noise_sigma, &mut rng)?;
            let (mut seq, labels) = augment_temporal(&noisy, Some(&ex.frame_labels), &tcfg.temporal, &mut rng)?;
            if !tcfg.use_lip {
                seq.lip = None;
            }
            let labels = labels.expect("labels were given");
            let (logits, cache) = model.forward(&seq, true, &mut rng)?;
            let Some((loss, dlogits)) = example_loss(&logits, &ex.letters, &labels, &ex.allowed, &tcfg.loss)? else {
                log::warn!("skipping example {i}: {} letters do not fit in {} frames", ex.letters.len(), seq.len());
                skipped += 1;
                continue;
            };
            model.backward(&cache, &dlogits, &mut grad);
            total += loss;
            used += 1;
            pending += 1;
            if pending == tcfg.virtual_batch {
                scale(&mut grad, 1.0 / pending as f64);
                adam.step(&mut model, &grad)?;
                scale(&mut grad, 0.0);
                pending = 0;
            }
        }
        if pending > 0 {
            scale(&mut grad, 1.0 / pending as f64);
            adam.step(&mut model, &grad)?;
            scale(&mut grad, 0.0);
            pending = 0;
        }
        let mean = if used > 0 { total / used as f64 } else { f64::NAN };
        log::debug!("recognizer epoch {epoch}: loss {mean:.4}");
        loss_curve.push(mean);
    }
    Ok(Trained {
        model,
        loss_curve,
        skipped,
    })
}
