//! Seeded synthetic keypoint corpus: letter templates, word rendering with
//! co-articulation, and strong / weak / held-out splits with planted
//! defects in the weak pool.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    read_annotations, read_clips, write_annotations, write_clips, Annotation, Clip, Grade, Interval, Joints,
    KeypointFrame, LetterSeq, BLANK, JOINTS_PER_HAND, NUM_LETTERS,
};
use crate::error::{Error, Result};
use crate::features::{extract_hand_features, HAND_FEATURE_DIM};

/// Relative letter counts used to draw words. The extremes follow a
/// broadcast-subtitle histogram (a and e most common, q and x rarest).
pub const LETTER_COUNTS: [u32; NUM_LETTERS] = [
    16577, 3200, 4300, 5600, 13754, 2300, 2900, 5200, 9800, 700, 1500, 7400, 3900, 9600, 9900, 2600, 143,
    10200, 8700, 9100, 3700, 1200, 1800, 322, 2700, 450,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectRates {
    /// Weak interval over a stretch with no fingerspelling.
    pub empty: f64,
    /// Two words under one weak interval.
    pub double: f64,
    pub missing_word: f64,
    /// Annotation whose clip was never written.
    pub missing_clip: f64,
    /// Annotation pointing into a held-out clip.
    pub test_split: f64,
}

impl Default for DefectRates {
    fn default() -> Self {
        Self {
            empty: 0.08,
            double: 0.05,
            missing_word: 0.03,
            missing_clip: 0.03,
            test_split: 0.03,
        }
    }
}

impl DefectRates {
    pub const NONE: Self = Self {
        empty: 0.0,
        double: 0.0,
        missing_word: 0.0,
        missing_clip: 0.0,
        test_split: 0.0,
    };

    fn total(&self) -> f64 {
        self.empty + self.double + self.missing_word + self.missing_clip + self.test_split
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_strong: usize,
    pub n_weak: usize,
    pub n_heldout: usize,
    /// Inclusive range of frames a letter shape is held.
    pub hold: [usize; 2],
    /// Inclusive range of interpolation frames between letters.
    pub transition: [usize; 2],
    pub abbreviation_prob: f64,
    pub word_len: [usize; 2],
    pub n_signers: usize,
    pub signer_jitter: f64,
    pub joint_noise: f64,
    /// Inclusive range of extra frames each side of a weak interval.
    pub slack: [usize; 2],
    /// Background frames outside every annotated interval.
    pub margin: [usize; 2],
    /// Background frames between the two words of a double defect.
    pub double_gap: [usize; 2],
    /// Minimum pairwise hand-feature distance between letter templates.
    pub delta: f64,
    /// Lip feature width; 0 disables lip features.
    pub lip_dim: usize,
    pub lip_noise: f64,
    pub fps: f64,
    pub defects: DefectRates,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_strong: 150,
            n_weak: 1500,
            n_heldout: 300,
            hold: [2, 4],
            transition: [1, 2],
            abbreviation_prob: 0.15,
            word_len: [3, 8],
            n_signers: 8,
            signer_jitter: 0.1,
            joint_noise: 0.25,
            slack: [0, 25],
            margin: [8, 16],
            double_gap: [8, 16],
            delta: 4.0,
            lip_dim: 16,
            lip_noise: 0.8,
            fps: 25.0,
            defects: DefectRates::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("hold", self.hold),
            ("transition", self.transition),
            ("word_len", self.word_len),
            ("slack", self.slack),
            ("margin", self.margin),
            ("double_gap", self.double_gap),
        ];
        for (name, [lo, hi]) in ranges {
            if lo > hi {
                return Err(Error::Config(format!("{name}: lower bound {lo} above upper bound {hi}")));
            }
        }
        if self.hold[0] == 0 || self.transition[0] == 0 || self.word_len[0] == 0 {
            return Err(Error::Config("hold, transition and word lengths must be at least 1".into()));
        }
        let d = &self.defects;
        for (name, p) in [
            ("abbreviation_prob", self.abbreviation_prob),
            ("defects.empty", d.empty),
            ("defects.double", d.double),
            ("defects.missing_word", d.missing_word),
            ("defects.missing_clip", d.missing_clip),
            ("defects.test_split", d.test_split),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if d.total() > 1.0 {
            return Err(Error::Config("defect fractions sum above 1".into()));
        }
        if d.test_split > 0.0 && self.n_heldout == 0 {
            return Err(Error::Config("test_split defects need held-out clips".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.n_signers == 0 {
            return Err(Error::Config("need at least one signer".into()));
        }
        for (name, v) in [
            ("signer_jitter", self.signer_jitter),
            ("joint_noise", self.joint_noise),
            ("lip_noise", self.lip_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        Ok(())
    }
}

/// Wrist-relative joint offsets of both hands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandShape {
    pub left: Joints,
    pub right: Joints,
}

impl HandShape {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut hand = || {
            let mut j = [[0.0; 3]; JOINTS_PER_HAND];
            for joint in j.iter_mut().skip(1) {
                for v in joint.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            j
        };
        let left = hand();
        let right = hand();
        Self { left, right }
    }

    fn lerp(&self, other: &Self, a: f64) -> Self {
        let mix = |x: &Joints, y: &Joints| {
            let mut out = *x;
            for (o, (p, q)) in out.iter_mut().zip(x.iter().zip(y)) {
                for k in 0..3 {
                    o[k] = (1.0 - a) * p[k] + a * q[k];
                }
            }
            out
        };
        Self {
            left: mix(&self.left, &other.left),
            right: mix(&self.right, &other.right),
        }
    }
}

/// Wrist positions while fingerspelling (hands together) and at rest.
const SPELL_WRISTS: [[f64; 3]; 2] = [[-0.8, 0.0, 0.0], [0.8, 0.0, 0.0]];
const REST_WRISTS: [[f64; 3]; 2] = [[-3.0, 2.0, 0.5], [3.0, 2.0, 0.5]];

fn place(shape: &HandShape, wrists: [[f64; 3]; 2]) -> KeypointFrame {
    let mut f = KeypointFrame::zeros();
    for (dst, src, w) in [(&mut f.left, &shape.left, wrists[0]), (&mut f.right, &shape.right, wrists[1])] {
        for (d, s) in dst.iter_mut().zip(src) {
            for k in 0..3 {
                d[k] = s[k] + w[k];
            }
        }
    }
    f
}

/// Placed template frame for a shape in fingerspelling position.
pub fn template_frame(shape: &HandShape) -> KeypointFrame {
    let mut f = place(shape, SPELL_WRISTS);
    set_centers(&mut f);
    f
}

fn set_centers(f: &mut KeypointFrame) {
    let c = |j: &Joints| {
        let mut c = [0.0; 2];
        for p in j {
            c[0] += p[0];
            c[1] += p[1];
        }
        c.map(|v| v / JOINTS_PER_HAND as f64)
    };
    f.left_center_2d = c(&f.left);
    f.right_center_2d = c(&f.right);
}

fn feature_distance(a: &HandShape, b: &HandShape) -> f64 {
    let fa = extract_hand_features(&template_frame(a)).expect("finite template");
    let fb = extract_hand_features(&template_frame(b)).expect("finite template");
    (0..HAND_FEATURE_DIM).map(|i| (fa.0[i] - fb.0[i]).powi(2)).sum::<f64>().sqrt()
}

const TEMPLATE_RETRIES: usize = 1000;

/// 26 letter shapes with pairwise hand-feature distance at least `delta`.
pub fn make_templates(seed: u64, delta: f64) -> Result<Vec<HandShape>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<HandShape> = Vec::with_capacity(NUM_LETTERS);
    while out.len() < NUM_LETTERS {
        let mut tries = 0;
        loop {
            let cand = HandShape::random(&mut rng);
            if out.iter().all(|t| feature_distance(t, &cand) >= delta) {
                out.push(cand);
                break;
            }
            tries += 1;
            if tries >= TEMPLATE_RETRIES {
                return Err(Error::invalid(format!(
                    "could not place template {} at separation {delta} after {TEMPLATE_RETRIES} tries",
                    out.len()
                )));
            }
        }
    }
    Ok(out)
}

/// Pairwise distances between templates, for inspection.
pub fn template_distances(templates: &[HandShape]) -> Vec<Vec<f64>> {
    templates
        .iter()
        .map(|a| templates.iter().map(|b| feature_distance(a, b)).collect())
        .collect()
}

/// Everything that shapes a corpus apart from the per-clip randomness.
#[derive(Debug, Clone)]
pub struct World {
    pub templates: Vec<HandShape>,
    /// Shape the hands pass through between letters.
    pub relaxed: HandShape,
    pub signers: Vec<Signer>,
    /// One lip vector per letter, empty when lips are off.
    pub lip_embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signer {
    pub linear: [[f64; 3]; 3],
    pub offset: [f64; 3],
}

impl Signer {
    fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.linear;
        let mut out = self.offset;
        for r in 0..3 {
            for c in 0..3 {
                out[r] += m[r][c] * p[c];
            }
        }
        out
    }
}

impl World {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let templates = make_templates(cfg.seed, cfg.delta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let relaxed = HandShape::random(&mut rng).lerp(&HandShape::random(&mut rng), 0.5);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let signers = (0..cfg.n_signers)
            .map(|_| {
                let mut linear = [[0.0; 3]; 3];
                for (r, row) in linear.iter_mut().enumerate() {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = f64::from(u8::from(r == c)) + cfg.signer_jitter * normal.sample(&mut rng);
                    }
                }
                let offset = [0; 3].map(|_| cfg.signer_jitter * normal.sample(&mut rng));
                Signer { linear, offset }
            })
            .collect();
        let lip_embeddings = (0..NUM_LETTERS)
            .map(|_| (0..cfg.lip_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        Ok(Self {
            templates,
            relaxed,
            signers,
            lip_embeddings,
        })
    }
}

/// One rendered word: frames in fingerspelling position and their labels.
#[derive(Debug, Clone)]
pub struct RenderedWord {
    pub frames: Vec<KeypointFrame>,
    /// Letters actually spelt (after abbreviation).
    pub letters: LetterSeq,
    pub frame_labels: Vec<usize>,
    /// Per-frame lip features for the full word.
    pub lip: Option<Vec<Vec<f64>>>,
}

fn finish_frame<R: Rng + ?Sized>(
    mut f: KeypointFrame,
    signer: &Signer,
    noise: &Normal<f64>,
    rng: &mut R,
) -> KeypointFrame {
    for hand in [&mut f.left, &mut f.right] {
        for p in hand.iter_mut() {
            *p = signer.apply(*p);
            for v in p.iter_mut() {
                *v += noise.sample(rng);
            }
        }
    }
    set_centers(&mut f);
    f
}

fn lip_track<R: Rng + ?Sized>(word: &LetterSeq, len: usize, world: &World, cfg: &SynthConfig, rng: &mut R) -> Option<Vec<Vec<f64>>> {
    if cfg.lip_dim == 0 {
        return None;
    }
    let noise = Normal::new(0.0, cfg.lip_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let w = word.as_slice();
    Some(
        (0..len)
            .map(|t| {
                let letter = w[t * w.len() / len];
                world.lip_embeddings[letter - 1]
                    .iter()
                    .map(|v| v + noise.sample(rng))
                    .collect()
            })
            .collect(),
    )
}

/// Renders `word` for one signer: each kept letter is held, then the hands
/// move to the next letter through blank-labelled transition frames.
pub fn render_word<R: Rng + ?Sized>(
    word: &LetterSeq,
    signer: usize,
    world: &World,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<RenderedWord> {
    if word.is_empty() {
        return Err(Error::invalid("cannot render an empty word"));
    }
    let signer = world
        .signers
        .get(signer)
        .ok_or_else(|| Error::invalid(format!("no signer {signer}")))?;
    let kept: Vec<usize> = word
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i == 0 || !rng.random_bool(cfg.abbreviation_prob))
        .map(|(_, &c)| c)
        .collect();
    let noise = Normal::new(0.0, cfg.joint_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for (i, &c) in kept.iter().enumerate() {
        let shape = &world.templates[c - 1];
        for _ in 0..rng.random_range(cfg.hold[0]..=cfg.hold[1]) {
            frames.push(finish_frame(place(shape, SPELL_WRISTS), signer, &noise, rng));
            labels.push(c);
        }
        if let Some(&next) = kept.get(i + 1) {
            let to = &world.templates[next - 1];
            let steps = rng.random_range(cfg.transition[0]..=cfg.transition[1]);
            for k in 1..=steps {
                let a = k as f64 / (steps + 1) as f64;
                let pose = shape.lerp(to, a).lerp(&world.relaxed, 0.5 * (std::f64::consts::PI * a).sin());
                frames.push(finish_frame(place(&pose, SPELL_WRISTS), signer, &noise, rng));
                labels.push(BLANK);
            }
        }
    }
    let lip = lip_track(word, frames.len(), world, cfg, rng);
    Ok(RenderedWord {
        frames,
        letters: LetterSeq::new(kept)?,
        frame_labels: labels,
        lip,
    })
}

/// Resting frames with the hands apart.
fn background<R: Rng + ?Sized>(n: usize, signer: &Signer, world: &World, cfg: &SynthConfig, rng: &mut R) -> Vec<KeypointFrame> {
    let other = &world.templates[rng.random_range(0..NUM_LETTERS)];
    let shape = world.relaxed.lerp(other, rng.random_range(0.0..0.5));
    let noise = Normal::new(0.0, cfg.joint_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let lip_noise = Normal::new(0.0, cfg.lip_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    (0..n)
        .map(|_| {
            let mut f = finish_frame(place(&shape, REST_WRISTS), signer, &noise, rng);
            if cfg.lip_dim > 0 {
                f.lip = Some((0..cfg.lip_dim).map(|_| lip_noise.sample(rng)).collect());
            }
            f
        })
        .collect()
}

fn attach(mut rendered: RenderedWord) -> (Vec<KeypointFrame>, RenderedWord) {
    let mut frames = std::mem::take(&mut rendered.frames);
    if let Some(lip) = rendered.lip.take() {
        for (f, l) in frames.iter_mut().zip(lip) {
            f.lip = Some(l);
        }
    }
    (frames, rendered)
}

/// Draws a word with letter frequencies from [`LETTER_COUNTS`].
pub fn random_word<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> LetterSeq {
    let dist = WeightedIndex::new(LETTER_COUNTS).expect("positive counts");
    let len = rng.random_range(cfg.word_len[0]..=cfg.word_len[1]);
    LetterSeq::new((0..len).map(|_| dist.sample(rng) + 1).collect()).expect("letters in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defect {
    None,
    Empty,
    Double,
    MissingWord,
    MissingClip,
    TestSplit,
}

impl Defect {
    pub const ALL: [Defect; 6] = [
        Defect::None,
        Defect::Empty,
        Defect::Double,
        Defect::MissingWord,
        Defect::MissingClip,
        Defect::TestSplit,
    ];
}

/// What a weak entry really contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakTruth {
    pub clip_id: String,
    pub defect: Defect,
    /// Letters actually spelt, when the entry holds exactly one word.
    pub letters: Option<String>,
    pub interval: Option<Interval>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: SynthConfig,
    pub clips: Vec<Clip>,
    pub strong: Vec<Annotation>,
    pub weak: Vec<Annotation>,
    pub heldout: Vec<Annotation>,
    /// Parallel to `weak`.
    pub weak_truth: Vec<WeakTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub clips: usize,
    pub frames: usize,
    pub strong: usize,
    pub weak: usize,
    pub heldout: usize,
    pub defects: Vec<(Defect, usize)>,
}

impl Corpus {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config.clone(),
            clips: self.clips.len(),
            frames: self.clips.iter().map(Clip::len).sum(),
            strong: self.strong.len(),
            weak: self.weak.len(),
            heldout: self.heldout.len(),
            defects: Defect::ALL
                .iter()
                .map(|&d| (d, self.weak_truth.iter().filter(|t| t.defect == d).count()))
                .collect(),
        }
    }

    pub fn heldout_clip_ids(&self) -> Vec<String> {
        self.heldout.iter().map(|a| a.clip_id.clone()).collect()
    }
}

/// Split streams for per-clip generators.
const STRONG_STREAM: u64 = 1 << 32;
const WEAK_STREAM: u64 = 2 << 32;
const HELDOUT_STREAM: u64 = 3 << 32;

fn clip_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn range<R: Rng + ?Sized>(r: [usize; 2], rng: &mut R) -> usize {
    rng.random_range(r[0]..=r[1])
}

/// A clip holding one word with a tight, fully labelled annotation.
fn labelled_clip(id: String, grade: Grade, world: &World, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(Clip, Annotation)> {
    let word = random_word(cfg, rng);
    let signer_ix = rng.random_range(0..cfg.n_signers);
    let signer = world.signers[signer_ix];
    let lead = range(cfg.margin, rng);
    let tail = range(cfg.margin, rng);
    let (word_frames, rendered) = attach(render_word(&word, signer_ix, world, cfg, rng)?);
    let n = word_frames.len();
    let mut frames = background(lead, &signer, world, cfg, rng);
    frames.extend(word_frames);
    frames.extend(background(tail, &signer, world, cfg, rng));
    let ann = Annotation {
        clip_id: id.clone(),
        interval: Interval::new(lead, lead + n - 1),
        word: Some(word.to_string()),
        letters: Some(rendered.letters),
        frame_labels: Some(rendered.frame_labels),
        grade,
    };
    Ok((Clip { clip_id: id, fps: cfg.fps, frames }, ann))
}

fn pick_defect<R: Rng + ?Sized>(d: &DefectRates, rng: &mut R) -> Defect {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (defect, p) in [
        (Defect::Empty, d.empty),
        (Defect::Double, d.double),
        (Defect::MissingWord, d.missing_word),
        (Defect::MissingClip, d.missing_clip),
        (Defect::TestSplit, d.test_split),
    ] {
        acc += p;
        if u < acc {
            return defect;
        }
    }
    Defect::None
}

type WeakItem = (Option<Clip>, Annotation, WeakTruth);

fn weak_entry(
    i: usize,
    world: &World,
    cfg: &SynthConfig,
    heldout: &[(Clip, Annotation)],
) -> Result<WeakItem> {
    let mut rng = clip_rng(cfg.seed, WEAK_STREAM + i as u64);
    let id = format!("weak_{i:05}");
    let defect = pick_defect(&cfg.defects, &mut rng);
    let signer_ix = rng.random_range(0..cfg.n_signers);
    let signer = world.signers[signer_ix];
    let slack_l = range(cfg.slack, &mut rng);
    let slack_r = range(cfg.slack, &mut rng);
    let lead = range(cfg.margin, &mut rng) + slack_l;
    let tail = range(cfg.margin, &mut rng) + slack_r;

    if defect == Defect::TestSplit {
        let (clip, ann) = &heldout[rng.random_range(0..heldout.len())];
        let iv = ann.interval;
        let interval = Interval::new(iv.start.saturating_sub(slack_l), (iv.end + slack_r).min(clip.len() - 1));
        let weak = Annotation::weak(clip.clip_id.clone(), interval, ann.word.as_deref());
        let truth = WeakTruth {
            clip_id: clip.clip_id.clone(),
            defect,
            letters: ann.letters.as_ref().map(ToString::to_string),
            interval: Some(iv),
        };
        return Ok((None, weak, truth));
    }

    let word = random_word(cfg, &mut rng);
    let mut frames = background(lead, &signer, world, cfg, &mut rng);
    let (core_len, letters) = match defect {
        Defect::Empty => {
            let n = range(cfg.word_len, &mut rng) * (cfg.hold[0] + cfg.hold[1]) / 2;
            frames.extend(background(n.max(1), &signer, world, cfg, &mut rng));
            (n.max(1), None)
        }
        Defect::Double => {
            let (a, _) = attach(render_word(&word, signer_ix, world, cfg, &mut rng)?);
            let gap = range(cfg.double_gap, &mut rng);
            let second = random_word(cfg, &mut rng);
            let (b, _) = attach(render_word(&second, signer_ix, world, cfg, &mut rng)?);
            let n = a.len() + gap + b.len();
            frames.extend(a);
            frames.extend(background(gap, &signer, world, cfg, &mut rng));
            frames.extend(b);
            (n, None)
        }
        _ => {
            let (w, rendered) = attach(render_word(&word, signer_ix, world, cfg, &mut rng)?);
            let n = w.len();
            frames.extend(w);
            (n, Some(rendered.letters.to_string()))
        }
    };
    frames.extend(background(tail, &signer, world, cfg, &mut rng));
    let core = Interval::new(lead, lead + core_len - 1);
    let interval = Interval::new(lead - slack_l, core.end + slack_r);
    let word_text = word.to_string();
    let associated = (defect != Defect::MissingWord).then_some(word_text.as_str());
    let clip_id = if defect == Defect::MissingClip {
        format!("missing_{i:05}")
    } else {
        id
    };
    let weak = Annotation::weak(clip_id.clone(), interval, associated);
    let truth = WeakTruth {
        clip_id: clip_id.clone(),
        defect,
        letters,
        interval: (defect != Defect::Empty).then_some(core),
    };
    let clip = (defect != Defect::MissingClip).then(|| Clip {
        clip_id,
        fps: cfg.fps,
        frames,
    });
    Ok((clip, weak, truth))
}

/// Generates the whole corpus. A pure function of the configuration.
pub fn make_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    let world = World::new(cfg)?;
    let mut clips = Vec::new();
    let mut strong = Vec::new();
    for i in 0..cfg.n_strong {
        let mut rng = clip_rng(cfg.seed, STRONG_STREAM + i as u64);
        let (clip, ann) = labelled_clip(format!("strong_{i:05}"), Grade::Strong, &world, cfg, &mut rng)?;
        clips.push(clip);
        strong.push(ann);
    }
    let mut held = Vec::new();
    for i in 0..cfg.n_heldout {
        let mut rng = clip_rng(cfg.seed, HELDOUT_STREAM + i as u64);
        held.push(labelled_clip(format!("heldout_{i:05}"), Grade::Strong, &world, cfg, &mut rng)?);
    }
    let mut weak = Vec::new();
    let mut weak_truth = Vec::new();
    for i in 0..cfg.n_weak {
        let (clip, ann, truth) = weak_entry(i, &world, cfg, &held)?;
        clips.extend(clip);
        weak.push(ann);
        weak_truth.push(truth);
    }
    let mut heldout = Vec::new();
    for (clip, ann) in held {
        clips.push(clip);
        heldout.push(ann);
    }
    Ok(Corpus {
        config: cfg.clone(),
        clips,
        strong,
        weak,
        heldout,
        weak_truth,
    })
}

pub const CLIPS_FILE: &str = "clips.jsonl";
pub const STRONG_FILE: &str = "strong.jsonl";
pub const WEAK_FILE: &str = "weak.jsonl";
pub const HELDOUT_FILE: &str = "heldout.jsonl";
pub const WEAK_TRUTH_FILE: &str = "weak_truth.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_clips(&corpus.clips, dir.join(CLIPS_FILE))?;
    write_annotations(&corpus.strong, dir.join(STRONG_FILE))?;
    write_annotations(&corpus.weak, dir.join(WEAK_FILE))?;
    write_annotations(&corpus.heldout, dir.join(HELDOUT_FILE))?;
    let mut truth = String::new();
    for t in &corpus.weak_truth {
        truth.push_str(&serde_json::to_string(t)?);
        truth.push('\n');
    }
    let path = dir.join(WEAK_TRUTH_FILE);
    fs::write(&path, truth).map_err(io_err(&path))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&corpus.manifest())? + "\n").map_err(io_err(&path))?;
    Ok(())
}

pub fn read_weak_truth(path: impl AsRef<Path>) -> Result<Vec<WeakTruth>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
    Ok(Corpus {
        config: manifest.config,
        clips: read_clips(dir.join(CLIPS_FILE))?,
        strong: read_annotations(dir.join(STRONG_FILE))?,
        weak: read_annotations(dir.join(WEAK_FILE))?,
        heldout: read_annotations(dir.join(HELDOUT_FILE))?,
        weak_truth: read_weak_truth(dir.join(WEAK_TRUTH_FILE))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::collapse;

    fn small() -> SynthConfig {
        SynthConfig {
            n_strong: 6,
            n_weak: 40,
            n_heldout: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn templates_are_deterministic_and_separated() {
        let a = make_templates(3, 4.0).unwrap();
        let b = make_templates(3, 4.0).unwrap();
        assert_eq!(a, b);
        let d = template_distances(&a);
        for i in 0..NUM_LETTERS {
            for j in 0..NUM_LETTERS {
                if i != j {
                    assert!(d[i][j] >= 4.0);
                }
            }
        }
        assert!(make_templates(3, 1e-9).is_ok());
        assert!(make_templates(3, 1e6).is_err());
    }

    #[test]
    fn render_without_abbreviation_keeps_word() {
        let cfg = SynthConfig {
            abbreviation_prob: 0.0,
            ..small()
        };
        let world = World::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let word = random_word(&cfg, &mut rng);
            let r = render_word(&word, 0, &world, &cfg, &mut rng).unwrap();
            assert_eq!(r.letters, word);
            assert_eq!(r.frames.len(), r.frame_labels.len());
            assert_eq!(r.lip.as_ref().unwrap().len(), r.frames.len());
        }
    }

    #[test]
    fn single_letter_has_no_transitions() {
        let cfg = small();
        let world = World::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = render_word(&LetterSeq::parse("q").unwrap(), 1, &world, &cfg, &mut rng).unwrap();
        assert!(r.frame_labels.iter().all(|&l| l == 17));
        assert!((2..=4).contains(&r.frame_labels.len()));
    }

    #[test]
    fn labels_collapse_to_letters_and_blanks_sit_between_holds() {
        let cfg = SynthConfig {
            abbreviation_prob: 0.3,
            ..small()
        };
        let world = World::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut holds = Vec::new();
        for _ in 0..200 {
            let word = random_word(&cfg, &mut rng);
            let r = render_word(&word, 0, &world, &cfg, &mut rng).unwrap();
            assert_eq!(collapse(&r.frame_labels), r.letters.as_slice());
            assert_eq!(r.letters.as_slice()[0], word.as_slice()[0]);
            // A blank run appears exactly between consecutive letters.
            let mut run = 0;
            let mut prev = r.frame_labels[0];
            for &l in &r.frame_labels[1..] {
                if l == prev {
                    run += 1;
                    continue;
                }
                if prev != BLANK {
                    holds.push(run + 1);
                } else {
                    assert!((1..=2).contains(&(run + 1)));
                }
                run = 0;
                prev = l;
            }
            holds.push(run + 1);
            assert_ne!(*r.frame_labels.last().unwrap(), BLANK);
        }
        assert!(holds.iter().all(|h| (2..=4).contains(h)));
        let mean = holds.iter().sum::<usize>() as f64 / holds.len() as f64;
        assert!((2.5..=3.5).contains(&mean), "{mean}");
    }

    #[test]
    fn corpus_is_pure_and_files_are_identical() {
        let cfg = small();
        let a = make_corpus(&cfg).unwrap();
        let b = make_corpus(&cfg).unwrap();
        assert_eq!(a.clips, b.clips);
        assert_eq!(a.weak, b.weak);
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        write_corpus(&a, da.path()).unwrap();
        write_corpus(&b, db.path()).unwrap();
        for f in [CLIPS_FILE, STRONG_FILE, WEAK_FILE, HELDOUT_FILE, WEAK_TRUTH_FILE, MANIFEST_FILE] {
            assert_eq!(
                fs::read(da.path().join(f)).unwrap(),
                fs::read(db.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let back = read_corpus(da.path()).unwrap();
        assert_eq!(back.clips, a.clips);
        assert_eq!(back.weak_truth, a.weak_truth);
        assert_eq!(back.config, cfg);
    }

    #[test]
    fn annotations_are_valid_and_tight() {
        let corpus = make_corpus(&small()).unwrap();
        let index = crate::datamodel::clip_index(&corpus.clips);
        for a in corpus.strong.iter().chain(&corpus.heldout) {
            let clip = index[a.clip_id.as_str()];
            a.validate_against(clip).unwrap();
            let labels = a.frame_labels.as_ref().unwrap();
            assert_ne!(labels[0], BLANK);
            assert_ne!(*labels.last().unwrap(), BLANK);
        }
        for (a, t) in corpus.weak.iter().zip(&corpus.weak_truth) {
            match t.defect {
                Defect::MissingClip => assert!(!index.contains_key(a.clip_id.as_str())),
                Defect::MissingWord => assert!(a.word.is_none()),
                Defect::TestSplit => assert!(a.clip_id.starts_with("heldout_")),
                _ => {
                    let clip = index[a.clip_id.as_str()];
                    a.validate_against(clip).unwrap();
                    if let Some(core) = t.interval {
                        assert!(a.interval.start <= core.start && core.end <= a.interval.end);
                    }
                }
            }
        }
    }

    #[test]
    fn no_defects_means_one_word_per_weak_entry() {
        let cfg = SynthConfig {
            defects: DefectRates::NONE,
            ..small()
        };
        let corpus = make_corpus(&cfg).unwrap();
        assert!(corpus.weak_truth.iter().all(|t| t.defect == Defect::None && t.letters.is_some()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = SynthConfig {
            hold: [4, 2],
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            abbreviation_prob: 1.5,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            delta: 0.0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
