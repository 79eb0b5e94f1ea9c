use std::collections::BTreeMap;

use fingerspell::annotator::Stage;
use fingerspell::cli::{detector_from_corpus, refilter_pool};
use fingerspell::datamodel::Annotation;
use fingerspell::detector::DetectorConfig;
use fingerspell::synthgen::{make_corpus, Corpus, Defect, SynthConfig};

fn defect_counts(corpus: &Corpus, entries: &[Annotation]) -> BTreeMap<Defect, usize> {
    let truth: BTreeMap<&str, Defect> = corpus.weak_truth.iter().map(|t| (t.clip_id.as_str(), t.defect)).collect();
    let mut out = BTreeMap::new();
    for a in entries {
        *out.entry(truth[a.clip_id.as_str()]).or_insert(0) += 1;
    }
    out
}

#[test]
fn each_stage_removes_its_planted_defect() {
    let corpus = make_corpus(&SynthConfig {
        n_strong: 60,
        n_weak: 300,
        n_heldout: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let (det, _) = detector_from_corpus(&corpus, &DetectorConfig::default(), 7).unwrap();
    let planted = defect_counts(&corpus, &corpus.weak);
    for d in [Defect::Empty, Defect::Double, Defect::MissingWord, Defect::MissingClip, Defect::TestSplit] {
        assert!(planted.get(&d).copied().unwrap_or(0) > 0, "no {d:?} planted");
    }

    // One stage at a time over the full pool.
    for (stage, defect) in [
        (Stage::MissingClip, Defect::MissingClip),
        (Stage::TestSplit, Defect::TestSplit),
        (Stage::MissingWord, Defect::MissingWord),
    ] {
        let (kept, report) = refilter_pool(&corpus, &det, corpus.weak.clone(), &[stage]).unwrap();
        let left = defect_counts(&corpus, &kept);
        assert_eq!(left.get(&defect), None, "{stage} left {defect:?}");
        assert_eq!(report.stages[0].removed, planted[&defect], "{stage}");
    }

    let (kept, report) = refilter_pool(&corpus, &det, corpus.weak.clone(), &[Stage::DetectorRefilter]).unwrap();
    let left = defect_counts(&corpus, &kept);
    let removed = report.stages[0].removed;
    let bad = planted[&Defect::Empty] + planted[&Defect::Double];
    assert_eq!(left.get(&Defect::Empty), None);
    assert!(left.get(&Defect::Double).copied().unwrap_or(0) * 10 <= planted[&Defect::Double]);
    // Clean entries are almost all kept.
    assert!(left[&Defect::None] * 100 >= planted[&Defect::None] * 97);
    assert!(removed + 5 >= bad);
}
