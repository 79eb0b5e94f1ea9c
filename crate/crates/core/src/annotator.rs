//! Frame-to-letter assignment, the frame classifier, CER acceptance, pool
//! filtering and the iterative re-annotation loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    load_checkpoint, save_checkpoint, Annotation, Clip, Grade, LetterSeq, ModelCheckpoint, ModelKind, BLANK,
    NUM_LETTERS,
};
use crate::detector::{refilter_annotation, Detector, Refiltered};
use crate::error::{Error, Result};
use crate::features::{sequence_for_interval, FeatureSequence};
use crate::metrics::{cer, corpus_cer, CerSummary};
use crate::nn::ops::softmax;
use crate::nn::{flatten, load_flat, Adam, AdamConfig, MlpClassifier};
use crate::recognizer::{examples_from, train, Example, Recognizer, RecognizerConfig, TrainConfig};

/// Contiguous blocks in letter order; earlier letters take the remainder.
pub fn equal_split(len: usize, letters: &[usize]) -> Result<Vec<usize>> {
    let n = letters.len();
    if n == 0 {
        return Err(Error::invalid("no letters to split over"));
    }
    if len < n {
        return Err(Error::invalid(format!("{n} letters cannot share {len} frames")));
    }
    let (base, extra) = (len / n, len % n);
    let mut out = Vec::with_capacity(len);
    for (i, &c) in letters.iter().enumerate() {
        out.extend(std::iter::repeat_n(c, base + usize::from(i < extra)));
    }
    Ok(out)
}

/// Letter boundaries at the first frame where the next letter's
/// probability overtakes the current one. `probs` is `T x 26` with column
/// `c - 1` for letter class `c`. Every letter keeps at least one frame; when
/// no crossover is found the rest is split evenly.
pub fn transition_split(probs: &Array2<f64>, letters: &[usize]) -> Result<Vec<usize>> {
    let t_len = probs.nrows();
    if probs.ncols() != NUM_LETTERS {
        return Err(Error::shape(format!("expected {NUM_LETTERS} probability columns, got {}", probs.ncols())));
    }
    let n = letters.len();
    if n == 0 {
        return Err(Error::invalid("no letters to split over"));
    }
    if t_len < n {
        return Err(Error::invalid(format!("{n} letters cannot share {t_len} frames")));
    }
    let mut out = Vec::with_capacity(t_len);
    let mut start = 0;
    for i in 0..n {
        if i + 1 == n {
            out.extend(std::iter::repeat_n(letters[i], t_len - start));
            break;
        }
        let (cur, next) = (letters[i] - 1, letters[i + 1] - 1);
        // Leave one frame for each later letter.
        let last = t_len - (n - i - 1);
        match (start + 1..=last).find(|&t| probs[[t, next]] > probs[[t, cur]]) {
            Some(b) => {
                out.extend(std::iter::repeat_n(letters[i], b - start));
                start = b;
            }
            None => {
                out.extend(equal_split(t_len - start, &letters[i..])?);
                break;
            }
        }
    }
    Ok(out)
}

/// Per-frame argmax over the word's letters after renormalising, kept only
/// above `threshold`; low-confidence frames hold the previous label and
/// frames before the first confident one are blank.
pub fn max_prob_labels(probs: &Array2<f64>, word: &str, threshold: f64) -> Result<Vec<usize>> {
    if probs.ncols() != NUM_LETTERS {
        return Err(Error::shape(format!("expected {NUM_LETTERS} probability columns, got {}", probs.ncols())));
    }
    let mut classes: Vec<usize> = LetterSeq::parse(word)?.as_slice().to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::invalid("empty word"));
    }
    let mut out = Vec::with_capacity(probs.nrows());
    let mut prev = BLANK;
    for row in probs.rows() {
        let total: f64 = classes.iter().map(|&c| row[c - 1]).sum();
        let mut best = classes[0];
        for &c in &classes[1..] {
            if row[c - 1] > row[best - 1] {
                best = c;
            }
        }
        if total > 0.0 && row[best - 1] / total > threshold {
            prev = best;
        }
        out.push(prev);
    }
    Ok(out)
}

/// Strictly below `max_cer` against the associated word.
pub fn accept_by_cer(decoded: &[usize], word: &str, max_cer: f64) -> Result<bool> {
    let gt = LetterSeq::parse(word)?;
    Ok(cer(decoded, gt.as_slice())?.0 < max_cer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameClfConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for FrameClfConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64, 32],
            dropout: 0.3,
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

/// Per-frame letter classifier over stacked hand features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClassifier {
    pub cfg: FrameClfConfig,
    pub mlp: MlpClassifier,
}

#[derive(Serialize, Deserialize)]
struct FrameClfArch {
    input_dim: usize,
    config: FrameClfConfig,
}

impl FrameClassifier {
    pub fn new(cfg: FrameClfConfig, input_dim: usize, seed: u64) -> Result<Self> {
        if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
            return Err(Error::Config("frame classifier needs a positive batch size and lr".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = MlpClassifier::new(input_dim, &cfg.hidden, NUM_LETTERS, cfg.dropout, &mut rng)?;
        Ok(Self { cfg, mlp })
    }

    /// `T x 26` letter probabilities.
    pub fn probs(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(softmax(&self.mlp.forward(features, false, &mut rng)?.0))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<ModelCheckpoint> {
        let arch = serde_json::to_value(FrameClfArch {
            input_dim: self.mlp.input_dim(),
            config: self.cfg.clone(),
        })?;
        let mut ckpt = ModelCheckpoint::new(ModelKind::FrameClassifier, arch, seed);
        ckpt.weights = flatten(&self.mlp);
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        if ckpt.model_kind != ModelKind::FrameClassifier {
            return Err(Error::Checkpoint(format!("expected a frame classifier, found {:?}", ckpt.model_kind)));
        }
        let arch: FrameClfArch = serde_json::from_value(ckpt.arch_config.clone())?;
        let mut m = Self::new(arch.config, arch.input_dim, 0)?;
        load_flat(&mut m.mlp, &ckpt.weights)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        save_checkpoint(&self.to_checkpoint(seed)?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

/// Trains on every letter-labelled frame; blank frames are left out.
pub fn train_frame_classifier(
    sequences: &[(&FeatureSequence, &[usize])],
    cfg: &FrameClfConfig,
    seed: u64,
) -> Result<FrameClassifier> {
    let frames: Vec<(usize, usize)> = sequences
        .iter()
        .enumerate()
        .flat_map(|(s, (_, labels))| {
            labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != BLANK)
                .map(move |(t, _)| (s, t))
        })
        .collect();
    if frames.is_empty() {
        return Err(Error::invalid("no letter-labelled frames to train on"));
    }
    let dim = sequences[0].0.hand.ncols();
    let mut clf = FrameClassifier::new(cfg.clone(), dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order = frames;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut x = Array2::zeros((batch.len(), dim));
            for (r, &(s, t)) in batch.iter().enumerate() {
                x.row_mut(r).assign(&sequences[s].0.hand.row(t));
            }
            let (logits, cache) = clf.mlp.forward(&x, true, &mut rng)?;
            let mut d = softmax(&logits);
            for (r, &(s, t)) in batch.iter().enumerate() {
                let c = sequences[s].1[t] - 1;
                total -= d[[r, c]].max(f64::MIN_POSITIVE).ln();
                d[[r, c]] -= 1.0;
            }
            d /= batch.len() as f64;
            let mut g = clf.mlp.zeros_like();
            clf.mlp.backward(&cache, &d, &mut g);
            adam.step(&mut clf.mlp, &g)?;
        }
        log::debug!("frame classifier epoch {epoch}: loss {:.4}", total / order.len() as f64);
    }
    Ok(clf)
}

/// How strong entries get their first frame labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrongLabels {
    /// Use the frame labels stored with the annotation.
    Provided,
    EqualSplit,
    /// Equal split, train a frame classifier on it, then split at its
    /// letter crossovers.
    Transition,
}

pub fn init_strong_labels(
    clips: &BTreeMap<&str, &Clip>,
    strong: &[Annotation],
    mode: StrongLabels,
    clf_cfg: &FrameClfConfig,
    seed: u64,
) -> Result<Vec<Annotation>> {
    let letters = |a: &Annotation| -> Result<Vec<usize>> {
        a.letters
            .as_ref()
            .map(|l| l.as_slice().to_vec())
            .ok_or_else(|| Error::invalid(format!("{}: strong entry without letters", a.clip_id)))
    };
    let mut out = strong.to_vec();
    match mode {
        StrongLabels::Provided => {
            for a in &out {
                if a.frame_labels.is_none() {
                    return Err(Error::invalid(format!("{}: strong entry without frame labels", a.clip_id)));
                }
            }
        }
        StrongLabels::EqualSplit | StrongLabels::Transition => {
            for a in &mut out {
                a.frame_labels = Some(equal_split(a.interval.len(), &letters(a)?)?);
            }
            if mode == StrongLabels::Transition {
                let seqs = sequences(clips, &out)?;
                let pairs: Vec<(&FeatureSequence, &[usize])> = seqs
                    .iter()
                    .zip(&out)
                    .map(|(s, a)| (s, a.frame_labels.as_deref().expect("just set")))
                    .collect();
                let clf = train_frame_classifier(&pairs, clf_cfg, seed)?;
                for (a, s) in out.iter_mut().zip(&seqs) {
                    a.frame_labels = Some(transition_split(&clf.probs(&s.hand)?, &letters(a)?)?);
                }
            }
        }
    }
    Ok(out)
}

fn sequences(clips: &BTreeMap<&str, &Clip>, anns: &[Annotation]) -> Result<Vec<FeatureSequence>> {
    anns.iter()
        .map(|a| {
            let clip = clips
                .get(a.clip_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no clip {}", a.clip_id)))?;
            sequence_for_interval(clip, a.interval)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MissingClip,
    DetectorRefilter,
    TestSplit,
    MissingWord,
    CerAcceptance,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::MissingClip,
        Stage::DetectorRefilter,
        Stage::TestSplit,
        Stage::MissingWord,
        Stage::CerAcceptance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::MissingClip => "missing_clip",
            Stage::DetectorRefilter => "detector_refilter",
            Stage::TestSplit => "test_split",
            Stage::MissingWord => "missing_word",
            Stage::CerAcceptance => "cer_acceptance",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown filter stage `{s}`")))
    }
}

/// Inputs the stages consult. A stage whose input is absent is an error.
#[derive(Clone, Copy)]
pub struct FilterContext<'a> {
    pub clips: &'a BTreeMap<&'a str, &'a Clip>,
    pub detector: Option<&'a Detector>,
    pub test_clips: Option<&'a BTreeSet<String>>,
    pub recognizer: Option<&'a Recognizer>,
    pub max_cer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub removed: usize,
    pub remaining: usize,
    /// Removals per reason, for stages with more than one.
    pub reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub initial: usize,
    pub stages: Vec<StageCount>,
}

impl FilterReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,removed,remaining\ninitial,0,");
        out.push_str(&format!("{}\n", self.initial));
        for s in &self.stages {
            out.push_str(&format!("{},{},{}\n", s.stage, s.removed, s.remaining));
            for (reason, n) in &s.reasons {
                out.push_str(&format!("{}:{reason},{n},\n", s.stage));
            }
        }
        out
    }
}

enum Verdict {
    Keep(Annotation),
    Drop(&'static str),
}

fn apply_stage(stage: Stage, a: Annotation, ctx: &FilterContext<'_>) -> Result<Verdict> {
    let clip = ctx.clips.get(a.clip_id.as_str()).copied();
    Ok(match stage {
        Stage::MissingClip => match clip {
            Some(_) => Verdict::Keep(a),
            None => Verdict::Drop("missing_clip"),
        },
        Stage::TestSplit => {
            let test = ctx
                .test_clips
                .ok_or_else(|| Error::Config("test_split stage needs the held-out clip list".into()))?;
            if test.contains(&a.clip_id) {
                Verdict::Drop("test_split")
            } else {
                Verdict::Keep(a)
            }
        }
        Stage::MissingWord => match a.word.as_deref() {
            Some(w) if !w.is_empty() => Verdict::Keep(a),
            _ => Verdict::Drop("missing_word"),
        },
        Stage::DetectorRefilter => {
            let det = ctx
                .detector
                .ok_or_else(|| Error::Config("detector_refilter stage needs a detector".into()))?;
            // Entries without a clip are left for the missing_clip stage.
            let Some(clip) = clip else { return Ok(Verdict::Keep(a)) };
            match refilter_annotation(clip, &a, det)? {
                Refiltered::Tightened(t) => Verdict::Keep(t),
                Refiltered::Rejected(r) => Verdict::Drop(r.as_str()),
            }
        }
        Stage::CerAcceptance => {
            let rec = ctx
                .recognizer
                .ok_or_else(|| Error::Config("cer_acceptance stage needs a recognizer".into()))?;
            let (Some(clip), Some(word)) = (clip, a.word.clone()) else {
                return Ok(Verdict::Keep(a));
            };
            let pred = rec.predict_word(&sequence_for_interval(clip, a.interval)?)?;
            if accept_by_cer(pred.letters.as_slice(), &word, ctx.max_cer)? {
                let mut acc = a;
                acc.letters = Some(pred.letters);
                acc.grade = Grade::Accepted;
                Verdict::Keep(acc)
            } else {
                Verdict::Drop("cer")
            }
        }
    })
}

/// Applies the stages in order, counting what each removes.
pub fn filter_pool(
    pool: Vec<Annotation>,
    stages: &[Stage],
    ctx: &FilterContext<'_>,
) -> Result<(Vec<Annotation>, FilterReport)> {
    let mut report = FilterReport {
        initial: pool.len(),
        stages: Vec::with_capacity(stages.len()),
    };
    let mut current = pool;
    for &stage in stages {
        let mut kept = Vec::with_capacity(current.len());
        let mut reasons = BTreeMap::new();
        let mut removed = 0;
        for a in current {
            match apply_stage(stage, a, ctx)? {
                Verdict::Keep(a) => kept.push(a),
                Verdict::Drop(why) => {
                    removed += 1;
                    *reasons.entry(why.to_owned()).or_insert(0) += 1;
                }
            }
        }
        if reasons.len() < 2 {
            reasons.clear();
        }
        report.stages.push(StageCount {
            stage: stage.name().to_owned(),
            removed,
            remaining: kept.len(),
            reasons,
        });
        current = kept;
    }
    Ok((current, report))
}

/// Where the frame labels of newly accepted entries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptedLabels {
    /// Frame classifier with the confidence hold rule.
    MaxProb,
    /// The recognizer's greedy path; blanks stay blank.
    BestPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Refinement rounds after the initial strong-only round.
    pub iterations: usize,
    pub threshold: f64,
    pub max_cer: f64,
    /// Decode weak entries over the letters of their associated word.
    pub mask_decode: bool,
    pub strong_labels: StrongLabels,
    pub accepted_labels: AcceptedLabels,
    pub frame_clf: FrameClfConfig,
    pub recognizer: RecognizerConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            threshold: 0.35,
            max_cer: 0.3,
            mask_decode: true,
            strong_labels: StrongLabels::Transition,
            accepted_labels: AcceptedLabels::MaxProb,
            frame_clf: FrameClfConfig::default(),
            recognizer: RecognizerConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Small recognizer and a faster schedule, sized for one CPU core.
    pub fn desk(lip_dim: usize) -> Self {
        Self {
            recognizer: RecognizerConfig::small(lip_dim),
            train: TrainConfig {
                epochs: 60,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Accepted entries after this round.
    pub accepted: usize,
    pub newly_accepted: usize,
    pub training_entries: usize,
    /// Mean per-word CER on the held-out set.
    pub heldout_cer: f64,
    pub heldout_cer_micro: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    /// Rounds completed so far.
    pub iteration: usize,
    /// Strong entries with their initial frame labels.
    pub strong: Vec<Annotation>,
    pub weak: Vec<Annotation>,
    pub accepted: Vec<Annotation>,
    pub log: Vec<IterationLog>,
}

impl PipelineState {
    pub fn new(strong: Vec<Annotation>, weak: Vec<Annotation>) -> Self {
        Self {
            iteration: 0,
            strong,
            weak,
            accepted: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn training_set(&self) -> Vec<Annotation> {
        self.strong.iter().chain(&self.accepted).cloned().collect()
    }
}

/// Models produced by one round.
#[derive(Debug, Clone)]
pub struct RoundModels {
    pub frame_clf: FrameClassifier,
    pub recognizer: Recognizer,
    pub loss_curve: Vec<f64>,
}

/// Decodes every held-out entry and scores it against its letters.
pub fn evaluate(model: &Recognizer, heldout: &[Example]) -> Result<CerSummary> {
    let preds = heldout
        .iter()
        .map(|ex| model.predict_word(&ex.seq))
        .collect::<Result<Vec<_>>>()?;
    corpus_cer(
        preds
            .iter()
            .zip(heldout)
            .map(|(p, ex)| (p.letters.as_slice(), ex.letters.as_slice())),
    )
}

/// One round: frame classifier, re-labelling, recognizer, acceptance.
pub fn run_iteration(
    state: PipelineState,
    clips: &BTreeMap<&str, &Clip>,
    heldout: &[Example],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(PipelineState, RoundModels)> {
    let round = state.iteration;
    let round_seed = seed.wrapping_add(1000 * round as u64);
    let training = state.training_set();
    if training.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let examples = examples_from(clips, &training)?;

    let pairs: Vec<(&FeatureSequence, &[usize])> =
        examples.iter().map(|e| (&e.seq, e.frame_labels.as_slice())).collect();
    let frame_clf = train_frame_classifier(&pairs, &cfg.frame_clf, round_seed)?;

    let weak_seqs = sequences(clips, &state.weak)?;
    let mut relabels = Vec::with_capacity(state.weak.len());
    for (a, s) in state.weak.iter().zip(&weak_seqs) {
        let word = a
            .word
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("{}: weak entry without a word", a.clip_id)))?;
        relabels.push(max_prob_labels(&frame_clf.probs(&s.hand)?, word, cfg.threshold)?);
    }

    let recognizer = Recognizer::new(cfg.recognizer, round_seed)?;
    let trained = train(recognizer, &examples, &cfg.train, round_seed)?;
    let model = trained.model;

    let mut accepted = state.accepted;
    let mut still_weak = Vec::new();
    let mut newly = 0;
    for ((a, s), labels) in state.weak.into_iter().zip(&weak_seqs).zip(relabels) {
        let word = a.word.as_deref().expect("checked above");
        let pred = if cfg.mask_decode {
            model.predict_masked(s, word)?
        } else {
            model.predict_word(s)?
        };
        if !pred.letters.is_empty() && accept_by_cer(pred.letters.as_slice(), word, cfg.max_cer)? {
            let mut acc = a;
            acc.frame_labels = Some(match cfg.accepted_labels {
                AcceptedLabels::MaxProb => labels,
                AcceptedLabels::BestPath => pred.path,
            });
            acc.letters = Some(pred.letters);
            acc.grade = Grade::Accepted;
            accepted.push(acc);
            newly += 1;
        } else {
            still_weak.push(a);
        }
    }
    let summary = evaluate(&model, heldout)?;
    let mut log = state.log;
    log.push(IterationLog {
        iteration: round,
        accepted: accepted.len(),
        newly_accepted: newly,
        training_entries: training.len(),
        heldout_cer: summary.macro_avg,
        heldout_cer_micro: summary.micro,
    });
    log::info!(
        "round {round}: trained on {}, accepted {newly} (total {}), held-out CER {:.4}",
        training.len(),
        accepted.len(),
        summary.macro_avg
    );
    Ok((
        PipelineState {
            iteration: round + 1,
            strong: state.strong,
            weak: still_weak,
            accepted,
            log,
        },
        RoundModels {
            frame_clf,
            recognizer: model,
            loss_curve: trained.loss_curve,
        },
    ))
}

/// The initial strong-only round followed by `cfg.iterations` refinement
/// rounds. `on_round` sees the state and models after every round.
pub fn run_pipeline(
    strong: &[Annotation],
    weak: Vec<Annotation>,
    heldout: &[Annotation],
    clips: &BTreeMap<&str, &Clip>,
    cfg: &PipelineConfig,
    seed: u64,
    mut on_round: impl FnMut(&PipelineState, &RoundModels) -> Result<()>,
) -> Result<PipelineState> {
    let strong = init_strong_labels(clips, strong, cfg.strong_labels, &cfg.frame_clf, seed)?;
    let heldout = examples_from(clips, heldout)?;
    let mut state = PipelineState::new(strong, weak);
    for _ in 0..=cfg.iterations {
        let (next, models) = run_iteration(state, clips, &heldout, cfg, seed)?;
        on_round(&next, &models)?;
        state = next;
    }
    Ok(state)
}
