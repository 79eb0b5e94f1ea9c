//! Generates a small synthetic corpus and writes it to disk.
//!
//! Usage: `cargo run --release --example synth_corpus [out_dir]`

use fingerspell::synthgen::{make_corpus, read_corpus, write_corpus, SynthConfig};

fn main() -> fingerspell::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("fs_corpus"), Into::into);
    let cfg = SynthConfig {
        n_strong: 20,
        n_weak: 60,
        n_heldout: 10,
        ..SynthConfig::default()
    };
    let corpus = make_corpus(&cfg)?;
    let m = corpus.manifest();
    println!("{} clips, {} frames", m.clips, m.frames);
    println!("{} strong, {} weak, {} held out", m.strong, m.weak, m.heldout);
    for (defect, n) in &m.defects {
        println!("  {defect:?}: {n}");
    }
    let a = &corpus.strong[0];
    println!("first strong entry: {} {:?} {:?}", a.clip_id, a.interval, a.word);

    write_corpus(&corpus, &out)?;
    let back = read_corpus(&out)?;
    assert_eq!(back.clips, corpus.clips);
    println!("written to {}", out.display());
    Ok(())
}
