//! Domain types shared by every stage of the pipeline, plus the line-delimited
//! JSON formats for clips and annotations and the binary `.fsckpt` checkpoint
//! container.
//!
//! Class indices: blank is 0, letters `a..=z` are 1..=26. Frame intervals are
//! 0-based and inclusive on both ends.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LETTERS: usize = 26;
pub const NUM_CLASSES: usize = NUM_LETTERS + 1;
pub const BLANK: usize = 0;
pub const JOINTS_PER_HAND: usize = 21;

/// Character used for the blank symbol in serialized frame labels.
pub const BLANK_CHAR: char = '-';

/// The 26-letter output alphabet plus the CTC blank at class index 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Alphabet;

impl Alphabet {
    pub fn letters() -> impl Iterator<Item = char> {
        ('a'..='z').into_iter()
    }

    /// Class index of a letter (1..=26).
    pub fn index(c: char) -> Option<usize> {
        c.is_ascii_lowercase().then(|| (c as u8 - b'a') as usize + 1)
    }

    /// Letter for a class index; `None` for blank or out of range.
    pub fn letter(idx: usize) -> Option<char> {
        (1..=NUM_LETTERS)
            .contains(&idx)
            .then(|| (b'a' + (idx - 1) as u8) as char)
    }

    /// Rendering of any class, blank included.
    pub fn symbol(idx: usize) -> Option<char> {
        if idx == BLANK {
            Some(BLANK_CHAR)
        } else {
            Self::letter(idx)
        }
    }

    pub fn parse_symbol(c: char) -> Option<usize> {
        if c == BLANK_CHAR {
            Some(BLANK)
        } else {
            Self::index(c)
        }
    }
}

/// An ordered sequence of letters (class indices 1..=26, never blank).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LetterSeq(Vec<usize>);

impl LetterSeq {
    pub fn new(classes: Vec<usize>) -> Result<Self> {
        if let Some(bad) = classes.iter().find(|&&c| Alphabet::letter(c).is_none()) {
            return Err(Error::invalid(format!("class {bad} is not a letter")));
        }
        Ok(Self(classes))
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| {
                Alphabet::index(c)
                    .ok_or_else(|| Error::invalid(format!("'{c}' is not a letter in a-z")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Membership mask over all 27 classes.
    pub fn class_set(&self) -> [bool; NUM_CLASSES] {
        let mut set = [false; NUM_CLASSES];
        for &c in &self.0 {
            set[c] = true;
        }
        set
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl fmt::Display for LetterSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &c in &self.0 {
            write!(f, "{}", Alphabet::letter(c).unwrap_or('?'))?;
        }
        Ok(())
    }
}

impl std::str::FromStr for LetterSeq {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

pub fn frame_labels_to_string(labels: &[usize]) -> String {
    labels
        .iter()
        .map(|&c| Alphabet::symbol(c).unwrap_or('?'))
        .collect()
}

pub fn parse_frame_labels(s: &str) -> Result<Vec<usize>> {
    s.chars()
        .map(|c| {
            Alphabet::parse_symbol(c).ok_or_else(|| {
                Error::invalid(format!("frame label '{c}' is outside the alphabet and blank"))
            })
        })
        .collect()
}

pub type Joints = [[f64; 3]; JOINTS_PER_HAND];

/// One video frame of precomputed keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub left: Joints,
    pub right: Joints,
    pub left_center_2d: [f64; 2],
    pub right_center_2d: [f64; 2],
    pub lip: Option<Vec<f64>>,
}

impl KeypointFrame {
    pub fn zeros() -> Self {
        Self {
            left: [[0.0; 3]; JOINTS_PER_HAND],
            right: [[0.0; 3]; JOINTS_PER_HAND],
            left_center_2d: [0.0; 2],
            right_center_2d: [0.0; 2],
            lip: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.left
            .iter()
            .chain(self.right.iter())
            .flatten()
            .chain(self.left_center_2d.iter())
            .chain(self.right_center_2d.iter())
            .chain(self.lip.iter().flatten())
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub fps: f64,
    pub frames: Vec<KeypointFrame>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Lip dimensionality, `None` when the clip carries no lip features.
    pub fn lip_dim(&self) -> Option<usize> {
        self.frames
            .first()
            .and_then(|f| f.lip.as_ref().map(Vec::len))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::invalid(format!(
                "clip {}: fps must be positive, got {}",
                self.clip_id, self.fps
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::invalid(format!("clip {}: no frames", self.clip_id)));
        }
        let lip_dim = self.lip_dim();
        for (i, frame) in self.frames.iter().enumerate() {
            if !frame.is_finite() {
                return Err(Error::invalid(format!(
                    "clip {} frame {i}: non-finite coordinate",
                    self.clip_id
                )));
            }
            if frame.lip.as_ref().map(Vec::len) != lip_dim {
                return Err(Error::invalid(format!(
                    "clip {} frame {i}: lip dimension differs from frame 0",
                    self.clip_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade {
    Strong,
    Weak,
    Accepted,
    Rejected,
}

/// A fingerspelling interval in a clip with whatever supervision is known.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub clip_id: String,
    pub interval: Interval,
    pub word: Option<String>,
    pub letters: Option<LetterSeq>,
    pub frame_labels: Option<Vec<usize>>,
    pub grade: Grade,
}

impl Annotation {
    pub fn weak(clip_id: impl Into<String>, interval: Interval, word: Option<&str>) -> Self {
        Self {
            clip_id: clip_id.into(),
            interval,
            word: word.map(str::to_owned),
            letters: None,
            frame_labels: None,
            grade: Grade::Weak,
        }
    }

    /// Checks the invariants that do not need the clip itself.
    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("annotation {}[{}..={}]", self.clip_id, self.interval.start, self.interval.end);
        if self.interval.start > self.interval.end {
            return Err(Error::invalid(format!("{}: start after end", ctx())));
        }
        if let Some(word) = &self.word {
            if word.is_empty() || !word.chars().all(|c| c.is_ascii_lowercase()) {
                return Err(Error::invalid(format!("{}: word {word:?} is not over a-z", ctx())));
            }
        }
        if let Some(labels) = &self.frame_labels {
            if labels.len() != self.interval.len() {
                return Err(Error::invalid(format!(
                    "{}: {} frame labels for an interval of {} frames",
                    ctx(),
                    labels.len(),
                    self.interval.len()
                )));
            }
            if labels.iter().any(|&c| c >= NUM_CLASSES) {
                return Err(Error::invalid(format!("{}: frame label out of range", ctx())));
            }
        }
        if self.grade == Grade::Accepted && self.letters.is_none() {
            return Err(Error::invalid(format!("{}: accepted without letters", ctx())));
        }
        Ok(())
    }

    /// Cross-checks the interval against the clip it refers to.
    pub fn validate_against(&self, clip: &Clip) -> Result<()> {
        if self.clip_id != clip.clip_id {
            return Err(Error::invalid(format!(
                "annotation for {} checked against clip {}",
                self.clip_id, clip.clip_id
            )));
        }
        if self.interval.end >= clip.len() {
            return Err(Error::invalid(format!(
                "annotation {}: interval end {} beyond clip length {}",
                self.clip_id,
                self.interval.end,
                clip.len()
            )));
        }
        Ok(())
    }
}

/// S, D, I and reference length N of one alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn cer(&self) -> f64 {
        self.errors() as f64 / self.reference_length as f64
    }
}

impl std::ops::Add for EditCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            reference_length: self.reference_length + o.reference_length,
        }
    }
}

impl std::iter::Sum for EditCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_f: f64,
    pub lambda_ctc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_f: 0.02,
            lambda_ctc: 0.98,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_f: f64, lambda_ctc: f64) -> Result<Self> {
        if !(lambda_f >= 0.0 && lambda_ctc >= 0.0 && lambda_f.is_finite() && lambda_ctc.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(Self { lambda_f, lambda_ctc })
    }
}

// ---------------------------------------------------------------------------
// Clips file

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    left: Vec<f64>,
    right: Vec<f64>,
    left_center_2d: Vec<f64>,
    right_center_2d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lip: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ClipRecord {
    clip_id: String,
    fps: f64,
    frames: Vec<FrameRecord>,
}

fn joints_from_flat(flat: &[f64], what: &str) -> std::result::Result<Joints, String> {
    if flat.len() != JOINTS_PER_HAND * 3 {
        return Err(format!(
            "{what} has {} joints ({} numbers), expected {}",
            flat.len() / 3,
            flat.len(),
            JOINTS_PER_HAND
        ));
    }
    let mut joints = [[0.0; 3]; JOINTS_PER_HAND];
    for (j, xyz) in flat.chunks_exact(3).enumerate() {
        joints[j].copy_from_slice(xyz);
    }
    Ok(joints)
}

fn point2(v: &[f64], what: &str) -> std::result::Result<[f64; 2], String> {
    <[f64; 2]>::try_from(v).map_err(|_| format!("{what} must have 2 numbers, got {}", v.len()))
}

impl TryFrom<ClipRecord> for Clip {
    type Error = String;

    fn try_from(rec: ClipRecord) -> std::result::Result<Self, String> {
        let frames = rec
            .frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                let ctx = |e: String| format!("clip {} frame {i}: {e}", rec.clip_id);
                Ok(KeypointFrame {
                    left: joints_from_flat(&f.left, "left hand").map_err(ctx)?,
                    right: joints_from_flat(&f.right, "right hand").map_err(ctx)?,
                    left_center_2d: point2(&f.left_center_2d, "left_center_2d").map_err(ctx)?,
                    right_center_2d: point2(&f.right_center_2d, "right_center_2d").map_err(ctx)?,
                    lip: f.lip,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let clip = Clip {
            clip_id: rec.clip_id,
            fps: rec.fps,
            frames,
        };
        clip.validate().map_err(|e| e.to_string())?;
        Ok(clip)
    }
}

impl From<&Clip> for ClipRecord {
    fn from(clip: &Clip) -> Self {
        let flat = |j: &Joints| j.iter().flatten().copied().collect::<Vec<_>>();
        ClipRecord {
            clip_id: clip.clip_id.clone(),
            fps: clip.fps,
            frames: clip
                .frames
                .iter()
                .map(|f| FrameRecord {
                    left: flat(&f.left),
                    right: flat(&f.right),
                    left_center_2d: f.left_center_2d.to_vec(),
                    right_center_2d: f.right_center_2d.to_vec(),
                    lip: f.lip.clone(),
                })
                .collect(),
        }
    }
}

fn read_lines<T>(
    path: &Path,
    mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse(&line).map_err(|msg| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            msg,
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = Result<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{}", line?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn clip_to_json(clip: &Clip) -> Result<String> {
    Ok(serde_json::to_string(&ClipRecord::from(clip))?)
}

pub fn clip_from_json(line: &str) -> std::result::Result<Clip, String> {
    let rec: ClipRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Clip::try_from(rec)
}

pub fn read_clips(path: impl AsRef<Path>) -> Result<Vec<Clip>> {
    read_lines(path.as_ref(), clip_from_json)
}

pub fn write_clips(clips: &[Clip], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), clips.iter().map(clip_to_json))
}

// ---------------------------------------------------------------------------
// Annotations file

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    clip_id: String,
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    letters: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_labels: Option<String>,
    grade: Grade,
}

impl From<&Annotation> for AnnotationRecord {
    fn from(a: &Annotation) -> Self {
        AnnotationRecord {
            clip_id: a.clip_id.clone(),
            start: a.interval.start,
            end: a.interval.end,
            word: a.word.clone(),
            letters: a.letters.as_ref().map(ToString::to_string),
            frame_labels: a.frame_labels.as_deref().map(frame_labels_to_string),
            grade: a.grade,
        }
    }
}

impl TryFrom<AnnotationRecord> for Annotation {
    type Error = Error;

    fn try_from(r: AnnotationRecord) -> Result<Self> {
        if r.start > r.end {
            return Err(Error::invalid(format!(
                "annotation {}: start {} after end {}",
                r.clip_id, r.start, r.end
            )));
        }
        let ann = Annotation {
            clip_id: r.clip_id,
            interval: Interval::new(r.start, r.end),
            word: r.word,
            letters: r.letters.as_deref().map(LetterSeq::parse).transpose()?,
            frame_labels: r.frame_labels.as_deref().map(parse_frame_labels).transpose()?,
            grade: r.grade,
        };
        ann.validate()?;
        Ok(ann)
    }
}

pub fn annotation_to_json(a: &Annotation) -> Result<String> {
    Ok(serde_json::to_string(&AnnotationRecord::from(a))?)
}

pub fn annotation_from_json(line: &str) -> Result<Annotation> {
    let rec: AnnotationRecord = serde_json::from_str(line)?;
    Annotation::try_from(rec)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    read_lines(path.as_ref(), |l| annotation_from_json(l).map_err(|e| e.to_string()))
}

pub fn write_annotations(annotations: &[Annotation], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), annotations.iter().map(annotation_to_json))
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Detector,
    FrameClassifier,
    Recognizer,
}

/// Architecture description plus named flat float64 weight arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub arch_config: serde_json::Value,
    pub weights: Vec<(String, Vec<f64>)>,
    pub rng_seed: u64,
}

impl ModelCheckpoint {
    pub fn new(model_kind: ModelKind, arch_config: serde_json::Value, rng_seed: u64) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model_kind,
            arch_config,
            weights: Vec::new(),
            rng_seed,
        }
    }

    pub fn weight(&self, name: &str) -> Option<&[f64]> {
        self.weights
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::with_capacity(self.weights.len());
        let mut offset = 0usize;
        for (name, values) in &self.weights {
            manifest.push(ArrayEntry {
                name: name.clone(),
                len: values.len(),
                offset,
            });
            offset += values.len() * 8;
        }
        let header = CheckpointHeader {
            schema_version: self.schema_version,
            model_kind: self.model_kind,
            arch_config: self.arch_config.clone(),
            rng_seed: self.rng_seed,
            arrays: manifest,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(offset);
        for (_, values) in &self.weights {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: header.schema_version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let body = &bytes[newline + 1..];
        let expected: usize = header.arrays.iter().map(|a| a.len * 8).sum();
        if body.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload is {} bytes, manifest describes {expected}",
                body.len()
            )));
        }
        let mut weights = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let end = entry.offset + entry.len * 8;
            let chunk = body
                .get(entry.offset..end)
                .ok_or_else(|| Error::Checkpoint(format!("array {} out of bounds", entry.name)))?;
            let values = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            weights.push((entry.name, values));
        }
        Ok(Self {
            schema_version: header.schema_version,
            model_kind: header.model_kind,
            arch_config: header.arch_config,
            weights,
            rng_seed: header.rng_seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    model_kind: ModelKind,
    arch_config: serde_json::Value,
    rng_seed: u64,
    arrays: Vec<ArrayEntry>,
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    ModelCheckpoint::from_bytes(&bytes)
}

/// Index clips by id.
pub fn clip_index(clips: &[Clip]) -> BTreeMap<&str, &Clip> {
    clips.iter().map(|c| (c.clip_id.as_str(), c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: f64) -> KeypointFrame {
        let mut f = KeypointFrame::zeros();
        f.left[3] = [v, -v, 0.5];
        f.right[20] = [0.25, v * 2.0, 1.0];
        f.left_center_2d = [0.1, 0.2];
        f.right_center_2d = [0.3, 0.4];
        f
    }

    #[test]
    fn letter_indexing_is_bijective() {
        for c in Alphabet::letters() {
            let idx = Alphabet::index(c).unwrap();
            assert!((1..=26).contains(&idx));
            assert_eq!(Alphabet::letter(idx), Some(c));
        }
        assert_eq!(Alphabet::letter(BLANK), None);
        assert_eq!(Alphabet::symbol(BLANK), Some('-'));
        assert_eq!(Alphabet::index('A'), None);
        assert_eq!(Alphabet::letters().count() + 1, NUM_CLASSES);
    }

    #[test]
    fn clip_file_with_ten_frames() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clips.jsonl");
        let clip = Clip {
            clip_id: "c0".into(),
            fps: 25.0,
            frames: (0..10).map(|i| frame(i as f64 * 0.1)).collect(),
        };
        write_clips(std::slice::from_ref(&clip), &path).unwrap();
        let back = read_clips(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].frames.len(), 10);
        assert_eq!(back[0], clip);
    }

    #[test]
    fn short_hand_names_clip_and_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clips.jsonl");
        let clip = Clip {
            clip_id: "bad_clip".into(),
            fps: 25.0,
            frames: vec![frame(0.0), frame(1.0)],
        };
        let mut line = serde_json::to_value(ClipRecord::from(&clip)).unwrap();
        let left = line["frames"][1]["left"].as_array_mut().unwrap();
        left.truncate(60);
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let err = read_clips(&path).unwrap_err().to_string();
        assert!(err.contains("bad_clip"), "{err}");
        assert!(err.contains("frame 1"), "{err}");
        assert!(err.contains(":1:"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_clips("/nonexistent/clips.jsonl"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn zero_fps_rejected() {
        let clip = Clip {
            clip_id: "z".into(),
            fps: 0.0,
            frames: vec![frame(0.0)],
        };
        assert!(clip.validate().is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut f = frame(0.0);
        f.right[2][1] = f64::NAN;
        let clip = Clip {
            clip_id: "n".into(),
            fps: 25.0,
            frames: vec![f],
        };
        assert!(clip.validate().unwrap_err().to_string().contains("non-finite"));
    }

    #[test]
    fn strong_and_weak_annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.jsonl");
        let strong = Annotation {
            clip_id: "c".into(),
            interval: Interval::new(2, 5),
            word: Some("adam".into()),
            letters: Some(LetterSeq::parse("adam").unwrap()),
            frame_labels: Some(parse_frame_labels("ad-m").unwrap()),
            grade: Grade::Strong,
        };
        let weak = Annotation::weak("c", Interval::new(0, 9), Some("adams"));
        write_annotations(&[strong.clone(), weak.clone()], &path).unwrap();
        let back = read_annotations(&path).unwrap();
        assert_eq!(back[0].grade, Grade::Strong);
        assert_eq!(back[0], strong);
        assert!(back[1].letters.is_none());
        assert_eq!(back[1], weak);
    }

    #[test]
    fn annotation_rejects_foreign_frame_labels() {
        let line = r#"{"clip_id":"c","start":0,"end":2,"frame_labels":"a*b","grade":"weak"}"#;
        assert!(annotation_from_json(line).is_err());
        let line = r#"{"clip_id":"c","start":0,"end":2,"frame_labels":"ab","grade":"weak"}"#;
        assert!(annotation_from_json(line).is_err());
        let line = r#"{"clip_id":"c","start":0,"end":2,"grade":"accepted"}"#;
        assert!(annotation_from_json(line).is_err());
    }

    #[test]
    fn interval_beyond_clip_caught_at_cross_validation() {
        let line = r#"{"clip_id":"c","start":0,"end":20,"grade":"weak"}"#;
        let ann = annotation_from_json(line).unwrap();
        let clip = Clip {
            clip_id: "c".into(),
            fps: 25.0,
            frames: vec![frame(0.0); 5],
        };
        assert!(ann.validate_against(&clip).is_err());
    }

    #[test]
    fn empty_detector_checkpoint_round_trips() {
        let ckpt = ModelCheckpoint::new(
            ModelKind::Detector,
            serde_json::json!({"layer_units": [128, 64, 32]}),
            3,
        );
        let back = ModelCheckpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn truncated_checkpoint_is_structured_error() {
        let mut ckpt = ModelCheckpoint::new(ModelKind::Recognizer, serde_json::json!({}), 0);
        ckpt.weights.push(("w".into(), vec![1.0, 2.0, 3.0]));
        let bytes = ckpt.to_bytes().unwrap();
        let err = ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        let err = ModelCheckpoint::from_bytes(&bytes[..10]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn schema_mismatch_is_explicit() {
        let mut ckpt = ModelCheckpoint::new(ModelKind::Detector, serde_json::json!({}), 0);
        ckpt.schema_version = 99;
        let err = ModelCheckpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { found: 99, .. }));
    }

    #[test]
    fn loss_weight_defaults() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_f, w.lambda_ctc), (0.02, 0.98));
        assert!(LossWeights::new(-1.0, 0.5).is_err());
    }
}
