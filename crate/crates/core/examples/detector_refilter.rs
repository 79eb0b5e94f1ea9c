//! Trains the frame-level detector on strong clips, scores held-out frames
//! and tightens or rejects weak intervals.

use std::collections::BTreeMap;

use fingerspell::cli::{detector_from_corpus, refilter_pool};
use fingerspell::annotator::Stage;
use fingerspell::detector::{frame_sets, score_frames, DetectorConfig};
use fingerspell::metrics::roc_auc;
use fingerspell::synthgen::{make_corpus, SynthConfig};

fn main() -> fingerspell::Result<()> {
    let corpus = make_corpus(&SynthConfig {
        n_strong: 60,
        n_weak: 200,
        n_heldout: 40,
        ..SynthConfig::default()
    })?;
    let (det, loss) = detector_from_corpus(&corpus, &DetectorConfig::default(), 7)?;
    println!("detector loss by epoch: {loss:.4?}");

    let held = frame_sets(&corpus.clips, &corpus.heldout)?;
    let (scores, labels) = score_frames(&det, &held)?;
    println!("held-out frame AUC {:.4} over {} frames", roc_auc(&scores, &labels)?.auc, labels.len());

    let stages = [Stage::MissingClip, Stage::DetectorRefilter, Stage::TestSplit, Stage::MissingWord];
    let (kept, report) = refilter_pool(&corpus, &det, corpus.weak.clone(), &stages)?;
    print!("{}", report.to_csv());

    let truth: BTreeMap<_, _> = corpus.weak_truth.iter().map(|t| (t.clip_id.as_str(), t)).collect();
    for a in kept.iter().take(5) {
        let t = truth[a.clip_id.as_str()];
        println!("{}: tightened to {:?}, rendered word at {:?}", a.clip_id, a.interval, t.interval);
    }
    Ok(())
}
