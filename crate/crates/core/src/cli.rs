//! The `fsr` command line: batch subcommands over on-disk corpora, models
//! and annotation files.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::annotator::{
    filter_pool, init_strong_labels, run_iteration, run_pipeline, train_frame_classifier, FilterContext,
    FilterReport, FrameClassifier, IterationLog, PipelineConfig, PipelineState, RoundModels, Stage,
};
use crate::datamodel::{clip_index, read_annotations, write_annotations, Annotation, Clip, BLANK};
use crate::detector::{frame_sets, score_frames, train_detector, Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::features::{sequence_for_clip, sequence_for_interval, FeatureSequence};
use crate::metrics::{cer, confusion, corpus_cer, roc_auc, ClassAccuracy};
use crate::recognizer::{examples_from, train, Recognizer};
use crate::svg;
use crate::synthgen::{make_corpus, read_corpus, write_corpus, Corpus, SynthConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub stages: Vec<Stage>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            stages: vec![Stage::MissingClip, Stage::DetectorRefilter, Stage::TestSplit, Stage::MissingWord],
        }
    }
}

/// Everything a run needs. Missing keys take the defaults, unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub detector: DetectorConfig,
    pub filter: FilterConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            seed: 7,
            paths: Paths::default(),
            pipeline: PipelineConfig::desk(synth.lip_dim),
            synth,
            detector: DetectorConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses TOML over the defaults, so nested sections may be partial.
    pub fn from_toml(text: &str) -> Result<Self> {
        let over: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Value::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, over);
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.detector.validate()?;
        self.pipeline.recognizer.validate()?;
        self.pipeline.train.validate()?;
        if !(0.0..1.0).contains(&self.pipeline.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0,1)", self.pipeline.threshold)));
        }
        if let Some(c) = &self.paths.corpus {
            if !c.is_dir() {
                return Err(Error::Config(format!("corpus directory {} not found", c.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "fsr", version, about = "Fingerspelling recognition and iterative annotation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` and `synth.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Corpus directory as written by `synth`.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic keypoint corpus.
    Synth,
    /// Train the frame-level fingerspelling detector on the strong set.
    TrainDetector,
    /// Run the filtering stages over a weak pool.
    Refilter {
        #[arg(long)]
        detector: PathBuf,
        /// Pool to filter; defaults to the corpus weak set.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Comma-separated stage names.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
    },
    /// Train the per-frame letter classifier.
    TrainFrameClf {
        /// Extra labelled annotation files (e.g. accepted entries).
        #[arg(long)]
        annotations: Vec<PathBuf>,
    },
    /// One re-annotation round over a filtered pool.
    Annotate {
        /// Filtered weak pool.
        #[arg(long)]
        pool: PathBuf,
        /// Entries accepted in earlier rounds.
        #[arg(long)]
        accepted: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        iteration: usize,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        no_lip: bool,
    },
    /// Train the sequence recognizer on the strong set plus extra files.
    TrainRecognizer {
        #[arg(long)]
        annotations: Vec<PathBuf>,
        #[arg(long)]
        no_lip: bool,
    },
    /// CER, class accuracy, confusion and ROC reports.
    Eval {
        #[arg(long)]
        recognizer: Option<PathBuf>,
        /// Annotation file whose `letters` are taken as predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        frame_clf: Option<PathBuf>,
        /// Ground truth; defaults to the corpus held-out set.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Detector refilter followed by the iterative re-annotation loop.
    Pipeline {
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        no_lip: bool,
    },
    /// Detection timelines and per-frame letter strips.
    Viz {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        recognizer: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        clips: usize,
        /// A pipeline metrics.json to plot.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

/// 0 ok, 1 invalid input or configuration, 2 runtime failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Checkpoint(_) | Error::NonFiniteGradient(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(c) = &common.corpus {
        cfg.paths.corpus = Some(c.clone());
    }
    if let Some(o) = &common.out {
        cfg.paths.out = Some(o.clone());
    }
    cfg.validate()?;
    let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("fsr_out"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok((cfg, out))
}

fn need_corpus(cfg: &RunConfig) -> Result<Corpus> {
    match &cfg.paths.corpus {
        Some(dir) => read_corpus(dir),
        None => Err(Error::Config("no corpus: pass --corpus or set paths.corpus".into())),
    }
}

fn need_file(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{} not found", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_text(path, &s)
}

fn strip_lip(clips: &mut [Clip]) {
    for f in clips.iter_mut().flat_map(|c| c.frames.iter_mut()) {
        f.lip = None;
    }
}

fn apply_no_lip(cfg: &mut RunConfig, corpus: &mut Corpus) {
    cfg.pipeline.recognizer.lip_in = 0;
    cfg.pipeline.train.use_lip = false;
    strip_lip(&mut corpus.clips);
}

fn run(cli: Cli) -> Result<()> {
    let (mut cfg, out) = resolve(&cli.common)?;
    match cli.command {
        Command::Synth => {
            let corpus = make_corpus(&cfg.synth)?;
            write_corpus(&corpus, &out)?;
            log::info!("wrote {} clips to {}", corpus.clips.len(), out.display());
            Ok(())
        }
        Command::TrainDetector => {
            let corpus = need_corpus(&cfg)?;
            let det = detector_from_corpus(&corpus, &cfg.detector, cfg.seed)?;
            det.0.save(out.join("detector.fsckpt"), cfg.seed)?;
            write_text(&out.join("detector_loss.csv"), &curve_csv("loss", &det.1))
        }
        Command::Refilter { detector, pool, stages } => {
            let corpus = need_corpus(&cfg)?;
            let det = Detector::load(need_file(&detector)?)?;
            let pool = match pool {
                Some(p) => read_annotations(need_file(&p)?)?,
                None => corpus.weak.clone(),
            };
            let stages = match stages {
                Some(names) => names.iter().map(|n| n.trim().parse()).collect::<Result<Vec<Stage>>>()?,
                None => cfg.filter.stages.clone(),
            };
            if stages.contains(&Stage::CerAcceptance) {
                return Err(Error::Config("cer_acceptance needs a recognizer; use annotate".into()));
            }
            let (kept, report) = refilter_pool(&corpus, &det, pool, &stages)?;
            write_annotations(&kept, out.join("filtered.jsonl"))?;
            write_text(&out.join("report.csv"), &report.to_csv())
        }
        Command::TrainFrameClf { annotations } => {
            let corpus = need_corpus(&cfg)?;
            let clips = clip_index(&corpus.clips);
            let mut anns = init_strong_labels(
                &clips,
                &corpus.strong,
                cfg.pipeline.strong_labels,
                &cfg.pipeline.frame_clf,
                cfg.seed,
            )?;
            for p in &annotations {
                anns.extend(read_annotations(need_file(p)?)?);
            }
            let examples = examples_from(&clips, &anns)?;
            let pairs: Vec<(&FeatureSequence, &[usize])> =
                examples.iter().map(|e| (&e.seq, e.frame_labels.as_slice())).collect();
            let clf = train_frame_classifier(&pairs, &cfg.pipeline.frame_clf, cfg.seed)?;
            clf.save(out.join("frame_clf.fsckpt"), cfg.seed)
        }
        Command::Annotate {
            pool,
            accepted,
            iteration,
            threshold,
            no_lip,
        } => {
            let mut corpus = need_corpus(&cfg)?;
            if no_lip {
                apply_no_lip(&mut cfg, &mut corpus);
            }
            if let Some(t) = threshold {
                cfg.pipeline.threshold = t;
            }
            cfg.validate()?;
            let weak = read_annotations(need_file(&pool)?)?;
            let accepted = match accepted {
                Some(p) => read_annotations(need_file(&p)?)?,
                None => Vec::new(),
            };
            let clips = clip_index(&corpus.clips);
            let strong = init_strong_labels(
                &clips,
                &corpus.strong,
                cfg.pipeline.strong_labels,
                &cfg.pipeline.frame_clf,
                cfg.seed,
            )?;
            let taken: BTreeSet<(&str, usize)> = accepted.iter().map(|a| (a.clip_id.as_str(), a.interval.start)).collect();
            let weak: Vec<Annotation> = weak
                .iter()
                .filter(|a| !taken.contains(&(a.clip_id.as_str(), a.interval.start)))
                .cloned()
                .collect();
            let state = PipelineState {
                iteration,
                strong,
                weak,
                accepted: accepted.clone(),
                log: Vec::new(),
            };
            let heldout = examples_from(&clips, &corpus.heldout)?;
            let (next, models) = run_iteration(state, &clips, &heldout, &cfg.pipeline, cfg.seed)?;
            save_round(&out, &next, &models, cfg.seed)?;
            write_json(&out.join("metrics.json"), &next.log)
        }
        Command::TrainRecognizer { annotations, no_lip } => {
            let mut corpus = need_corpus(&cfg)?;
            if no_lip {
                apply_no_lip(&mut cfg, &mut corpus);
            }
            let clips = clip_index(&corpus.clips);
            let mut anns = init_strong_labels(
                &clips,
                &corpus.strong,
                cfg.pipeline.strong_labels,
                &cfg.pipeline.frame_clf,
                cfg.seed,
            )?;
            for p in &annotations {
                anns.extend(read_annotations(need_file(p)?)?);
            }
            let examples = examples_from(&clips, &anns)?;
            let trained = train(Recognizer::new(cfg.pipeline.recognizer, cfg.seed)?, &examples, &cfg.pipeline.train, cfg.seed)?;
            trained.model.save(out.join("recognizer.fsckpt"), cfg.seed)?;
            write_text(&out.join("recognizer_loss.csv"), &curve_csv("loss", &trained.loss_curve))
        }
        Command::Eval {
            recognizer,
            predictions,
            detector,
            frame_clf,
            annotations,
        } => {
            let corpus = need_corpus(&cfg)?;
            let gt = match annotations {
                Some(p) => read_annotations(need_file(&p)?)?,
                None => corpus.heldout.clone(),
            };
            let inputs = EvalInputs {
                recognizer: recognizer.as_deref().map(|p| need_file(p).and_then(Recognizer::load)).transpose()?,
                predictions: predictions.as_deref().map(|p| need_file(p).and_then(read_annotations)).transpose()?,
                detector: detector.as_deref().map(|p| need_file(p).and_then(Detector::load)).transpose()?,
                frame_clf: frame_clf.as_deref().map(|p| need_file(p).and_then(FrameClassifier::load)).transpose()?,
            };
            let report = eval_report(&corpus, &gt, &inputs)?;
            report.write(&out)
        }
        Command::Pipeline {
            iterations,
            threshold,
            no_lip,
        } => {
            if let Some(n) = iterations {
                cfg.pipeline.iterations = n;
            }
            if let Some(t) = threshold {
                cfg.pipeline.threshold = t;
            }
            cfg.validate()?;
            let mut corpus = match &cfg.paths.corpus {
                Some(dir) => read_corpus(dir)?,
                None => make_corpus(&cfg.synth)?,
            };
            if no_lip {
                apply_no_lip(&mut cfg, &mut corpus);
            }
            pipeline_to_dir(&corpus, &cfg, &out).map(|_| ())
        }
        Command::Viz {
            detector,
            recognizer,
            clips,
            metrics,
        } => {
            let corpus = need_corpus(&cfg)?;
            let det = Detector::load(need_file(&detector)?)?;
            let rec = recognizer.as_deref().map(|p| need_file(p).and_then(Recognizer::load)).transpose()?;
            write_text(&out.join("timelines.svg"), &timelines(&corpus, &det, clips)?)?;
            if let Some(rec) = &rec {
                write_text(&out.join("letters.svg"), &letter_strips(&corpus, rec, clips)?)?;
            }
            if let Some(m) = metrics {
                let text = fs::read_to_string(need_file(&m)?).map_err(|e| Error::io(&m, e))?;
                let log: Vec<IterationLog> = serde_json::from_str(&text)?;
                write_text(&out.join("pipeline.svg"), &svg::pipeline_curve_svg(&log))?;
            }
            Ok(())
        }
    }
}

fn curve_csv(name: &str, values: &[f64]) -> String {
    let mut s = format!("epoch,{name}\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    s
}

/// Detector trained on the whole clips of the strong set.
pub fn detector_from_corpus(corpus: &Corpus, cfg: &DetectorConfig, seed: u64) -> Result<(Detector, Vec<f64>)> {
    let strong_ids: BTreeSet<&str> = corpus.strong.iter().map(|a| a.clip_id.as_str()).collect();
    let clips: Vec<Clip> = corpus
        .clips
        .iter()
        .filter(|c| strong_ids.contains(c.clip_id.as_str()))
        .cloned()
        .collect();
    let t = train_detector(&frame_sets(&clips, &corpus.strong)?, cfg, seed)?;
    Ok((t.detector, t.loss_curve))
}

pub fn refilter_pool(
    corpus: &Corpus,
    detector: &Detector,
    pool: Vec<Annotation>,
    stages: &[Stage],
) -> Result<(Vec<Annotation>, FilterReport)> {
    let clips = clip_index(&corpus.clips);
    let test: BTreeSet<String> = corpus.heldout_clip_ids().into_iter().collect();
    let ctx = FilterContext {
        clips: &clips,
        detector: Some(detector),
        test_clips: Some(&test),
        recognizer: None,
        max_cer: 0.3,
    };
    filter_pool(pool, stages, &ctx)
}

fn save_round(dir: &Path, state: &PipelineState, models: &RoundModels, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_annotations(&state.accepted, dir.join("accepted.jsonl"))?;
    write_annotations(&state.weak, dir.join("weak.jsonl"))?;
    models.frame_clf.save(dir.join("frame_clf.fsckpt"), seed)?;
    models.recognizer.save(dir.join("recognizer.fsckpt"), seed)?;
    write_text(&dir.join("recognizer_loss.csv"), &curve_csv("loss", &models.loss_curve))
}

/// Detector, refilter and the full loop, with every round saved under
/// `out/iter_<k>` and the metrics log in `out/metrics.json`.
pub fn pipeline_to_dir(corpus: &Corpus, cfg: &RunConfig, out: &Path) -> Result<PipelineState> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (det, det_loss) = detector_from_corpus(corpus, &cfg.detector, cfg.seed)?;
    det.save(out.join("detector.fsckpt"), cfg.seed)?;
    write_text(&out.join("detector_loss.csv"), &curve_csv("loss", &det_loss))?;
    let (pool, report) = refilter_pool(corpus, &det, corpus.weak.clone(), &cfg.filter.stages)?;
    write_text(&out.join("filter_report.csv"), &report.to_csv())?;
    write_annotations(&pool, out.join("filtered.jsonl"))?;
    let clips = clip_index(&corpus.clips);
    let state = run_pipeline(
        &corpus.strong,
        pool,
        &corpus.heldout,
        &clips,
        &cfg.pipeline,
        cfg.seed,
        |state, models| {
            save_round(&out.join(format!("iter_{}", state.iteration - 1)), state, models, cfg.seed)?;
            write_json(&out.join("metrics.json"), &state.log)
        },
    )?;
    write_text(&out.join("pipeline.svg"), &svg::pipeline_curve_svg(&state.log))?;
    Ok(state)
}

pub struct EvalInputs {
    pub recognizer: Option<Recognizer>,
    pub predictions: Option<Vec<Annotation>>,
    pub detector: Option<Detector>,
    pub frame_clf: Option<FrameClassifier>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EvalReport {
    pub words: usize,
    pub cer_macro: Option<f64>,
    pub cer_micro: Option<f64>,
    /// Recognizer per-frame average class accuracy over letter frames.
    pub avg_class_accuracy: Option<f64>,
    pub frame_clf_avg_class_accuracy: Option<f64>,
    pub detector_auc: Option<f64>,
    #[serde(skip)]
    pub per_word: Vec<(String, String, String, f64)>,
    #[serde(skip)]
    pub class_accuracy: Option<ClassAccuracy>,
    #[serde(skip)]
    pub confusion_svg: Option<String>,
    #[serde(skip)]
    pub roc_svg: Option<String>,
}

impl EvalReport {
    pub fn write(&self, out: &Path) -> Result<()> {
        let mut csv = String::from("metric,value\n");
        for (k, v) in [
            ("cer_macro", self.cer_macro),
            ("cer_micro", self.cer_micro),
            ("avg_class_accuracy", self.avg_class_accuracy),
            ("frame_clf_avg_class_accuracy", self.frame_clf_avg_class_accuracy),
            ("detector_auc", self.detector_auc),
        ] {
            if let Some(v) = v {
                csv.push_str(&format!("{k},{v}\n"));
            }
        }
        write_text(&out.join("report.csv"), &csv)?;
        write_json(&out.join("metrics.json"), self)?;
        if !self.per_word.is_empty() {
            let mut s = String::from("clip_id,truth,predicted,cer\n");
            for (id, g, p, c) in &self.per_word {
                s.push_str(&format!("{id},{g},{p},{c}\n"));
            }
            write_text(&out.join("per_word.csv"), &s)?;
        }
        if let Some(acc) = &self.class_accuracy {
            let mut s = String::from("letter,frames,recall\n");
            for c in 1..=crate::datamodel::NUM_LETTERS {
                let letter = crate::datamodel::Alphabet::letter(c).expect("letter class");
                match acc.recall(c) {
                    Some(r) => s.push_str(&format!("{letter},{},{r}\n", acc.total[c])),
                    None => s.push_str(&format!("{letter},0,\n")),
                }
            }
            write_text(&out.join("class_accuracy.csv"), &s)?;
        }
        if let Some(svg) = &self.confusion_svg {
            write_text(&out.join("confusion.svg"), svg)?;
        }
        if let Some(svg) = &self.roc_svg {
            write_text(&out.join("roc.svg"), svg)?;
        }
        Ok(())
    }
}

pub fn eval_report(corpus: &Corpus, gt: &[Annotation], inputs: &EvalInputs) -> Result<EvalReport> {
    let clips = clip_index(&corpus.clips);
    let mut report = EvalReport {
        words: gt.len(),
        ..EvalReport::default()
    };
    let preds: Option<Vec<(Vec<usize>, Option<Vec<usize>>)>> = match (&inputs.predictions, &inputs.recognizer) {
        (Some(p), _) => {
            let by_key: BTreeMap<(&str, usize), &Annotation> =
                p.iter().map(|a| ((a.clip_id.as_str(), a.interval.start), a)).collect();
            Some(
                gt.iter()
                    .map(|a| {
                        let letters = by_key
                            .get(&(a.clip_id.as_str(), a.interval.start))
                            .and_then(|p| p.letters.as_ref())
                            .map(|l| l.as_slice().to_vec())
                            .unwrap_or_default();
                        (letters, None)
                    })
                    .collect(),
            )
        }
        (None, Some(rec)) => Some(
            gt.iter()
                .map(|a| {
                    let seq = annotation_seq(&clips, a)?;
                    let p = rec.predict_word(&seq)?;
                    Ok((p.letters.into_inner(), Some(p.path)))
                })
                .collect::<Result<_>>()?,
        ),
        (None, None) => None,
    };
    if let Some(preds) = &preds {
        let truth: Vec<Vec<usize>> = gt
            .iter()
            .map(|a| {
                a.letters
                    .as_ref()
                    .map(|l| l.as_slice().to_vec())
                    .ok_or_else(|| Error::invalid(format!("{}: ground truth without letters", a.clip_id)))
            })
            .collect::<Result<_>>()?;
        let summary = corpus_cer(preds.iter().zip(&truth).map(|((p, _), g)| (p.as_slice(), g.as_slice())))?;
        report.cer_macro = Some(summary.macro_avg);
        report.cer_micro = Some(summary.micro);
        for ((a, (p, _)), g) in gt.iter().zip(preds).zip(&truth) {
            report.per_word.push((a.clip_id.clone(), letters_str(g), letters_str(p), cer(p, g)?.0));
        }
        let (mut fp, mut fg) = (Vec::new(), Vec::new());
        for (a, (_, path)) in gt.iter().zip(preds) {
            if let (Some(path), Some(labels)) = (path, &a.frame_labels) {
                fp.extend_from_slice(path);
                fg.extend_from_slice(labels);
            }
        }
        if !fg.is_empty() {
            let acc = ClassAccuracy::from_frames(&fp, &fg)?;
            report.avg_class_accuracy = acc.average();
            report.class_accuracy = Some(acc);
            report.confusion_svg = Some(svg::confusion_svg(&confusion(&fp, &fg)?));
        }
    }
    if let Some(clf) = &inputs.frame_clf {
        let (mut fp, mut fg) = (Vec::new(), Vec::new());
        for a in gt {
            let Some(labels) = &a.frame_labels else { continue };
            let probs = clf.probs(&annotation_seq(&clips, a)?.hand)?;
            for (row, &g) in probs.rows().into_iter().zip(labels) {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                fp.push(best + 1);
                fg.push(g);
            }
        }
        report.frame_clf_avg_class_accuracy = ClassAccuracy::from_frames(&fp, &fg)?.average();
    }
    if let Some(det) = &inputs.detector {
        let ids: BTreeSet<&str> = gt.iter().map(|a| a.clip_id.as_str()).collect();
        let gt_clips: Vec<Clip> = corpus
            .clips
            .iter()
            .filter(|c| ids.contains(c.clip_id.as_str()))
            .cloned()
            .collect();
        let (scores, labels) = score_frames(det, &frame_sets(&gt_clips, gt)?)?;
        let roc = roc_auc(&scores, &labels)?;
        report.detector_auc = Some(roc.auc);
        report.roc_svg = Some(svg::roc_svg(&roc));
    }
    Ok(report)
}

fn annotation_seq(clips: &BTreeMap<&str, &Clip>, a: &Annotation) -> Result<FeatureSequence> {
    let clip = clips
        .get(a.clip_id.as_str())
        .ok_or_else(|| Error::invalid(format!("no clip {}", a.clip_id)))?;
    sequence_for_interval(clip, a.interval)
}

fn letters_str(l: &[usize]) -> String {
    l.iter()
        .filter_map(|&c| crate::datamodel::Alphabet::letter(c))
        .collect()
}

fn timelines(corpus: &Corpus, det: &Detector, n: usize) -> Result<String> {
    let mut by_clip: BTreeMap<&str, Vec<crate::datamodel::Interval>> = BTreeMap::new();
    for a in corpus.strong.iter().chain(&corpus.heldout) {
        by_clip.entry(a.clip_id.as_str()).or_default().push(a.interval);
    }
    let clips = clip_index(&corpus.clips);
    let mut data = Vec::new();
    for (id, truth) in by_clip.into_iter().take(n) {
        let clip = clips[id];
        let seq = sequence_for_clip(clip)?;
        let probs = det.forward(&seq.hand)?;
        let predicted = det.detect(&seq.hand)?;
        data.push((id, clip.len(), truth, probs, predicted));
    }
    let rows: Vec<svg::Timeline<'_>> = data
        .iter()
        .map(|(id, len, truth, probs, predicted)| svg::Timeline {
            clip_id: id,
            len: *len,
            truth,
            probs,
            predicted,
        })
        .collect();
    Ok(svg::timelines_svg(&rows))
}

fn letter_strips(corpus: &Corpus, rec: &Recognizer, n: usize) -> Result<String> {
    let clips = clip_index(&corpus.clips);
    let mut data: Vec<(String, Vec<usize>)> = Vec::new();
    for a in corpus.heldout.iter().take(n) {
        let pred = rec.predict_word(&annotation_seq(&clips, a)?)?;
        let truth = a.frame_labels.clone().unwrap_or_else(|| vec![BLANK; a.interval.len()]);
        data.push((format!("{} truth", a.clip_id), truth));
        data.push((format!("{} predicted", a.clip_id), pred.path));
    }
    let rows: Vec<(&str, &[usize])> = data.iter().map(|(n, l)| (n.as_str(), l.as_slice())).collect();
    Ok(svg::letter_strips_svg(&rows))
}
