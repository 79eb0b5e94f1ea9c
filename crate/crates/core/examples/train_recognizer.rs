//! Trains the two-branch recognizer on strong annotations and decodes
//! held-out words.
//!
//! Usage: `cargo run --release --example train_recognizer [epochs]`

use fingerspell::datamodel::{clip_index, LetterSeq};
use fingerspell::metrics::corpus_cer;
use fingerspell::recognizer::{examples_from, train, Recognizer, RecognizerConfig, TrainConfig};
use fingerspell::synthgen::{make_corpus, SynthConfig};

fn main() -> fingerspell::Result<()> {
    env_logger::init();
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let synth = SynthConfig {
        n_strong: 150,
        n_weak: 0,
        n_heldout: 50,
        ..SynthConfig::default()
    };
    let corpus = make_corpus(&synth)?;
    let clips = clip_index(&corpus.clips);
    let train_set = examples_from(&clips, &corpus.strong)?;
    let held = examples_from(&clips, &corpus.heldout)?;

    let tcfg = TrainConfig {
        epochs,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let model = Recognizer::new(RecognizerConfig::small(synth.lip_dim), 7)?;
    let trained = train(model, &train_set, &tcfg, 7)?;
    println!("loss {:.3} -> {:.3}", trained.loss_curve[0], trained.loss_curve[epochs - 1]);

    let mut pairs = Vec::new();
    for (e, a) in held.iter().zip(&corpus.heldout) {
        let pred = trained.model.predict_word(&e.seq)?;
        if pairs.len() < 8 {
            println!("{:>12} -> {}", a.word.as_deref().unwrap_or("?"), pred.letters);
        }
        pairs.push((pred.letters, LetterSeq::new(e.letters.clone())?));
    }
    let s = corpus_cer(pairs.iter().map(|(p, g)| (p.as_slice(), g.as_slice())))?;
    println!("held-out CER {:.4} (micro {:.4})", s.macro_avg, s.micro);

    let path = std::env::temp_dir().join("fs_recognizer.fsckpt");
    trained.model.save(&path, 7)?;
    let back = Recognizer::load(&path)?;
    assert_eq!(back.log_probs(&held[0].seq)?, trained.model.log_probs(&held[0].seq)?);
    println!("checkpoint round trip ok: {}", path.display());
    Ok(())
}
