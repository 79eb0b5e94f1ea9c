//! The whole loop at desk scale: synthetic corpus, detector refilter, then
//! iterative re-annotation, with every artefact written to a directory.
//!
//! Usage: `cargo run --release --example pipeline [out_dir] [epochs] [iterations]`

use std::time::Instant;

use fingerspell::cli::{pipeline_to_dir, RunConfig};
use fingerspell::synthgen::make_corpus;

fn main() -> fingerspell::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map_or_else(|| std::env::temp_dir().join("fs_pipeline"), Into::into);
    let mut cfg = RunConfig::default();
    if let Some(e) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.pipeline.train.epochs = e;
    }
    if let Some(n) = args.get(3).and_then(|s| s.parse().ok()) {
        cfg.pipeline.iterations = n;
    }
    let t0 = Instant::now();
    let corpus = make_corpus(&cfg.synth)?;
    let state = pipeline_to_dir(&corpus, &cfg, &out)?;
    for l in &state.log {
        println!(
            "iteration {}: {} accepted (+{}), held-out CER {:.4}",
            l.iteration, l.accepted, l.newly_accepted, l.heldout_cer
        );
    }
    println!(
        "{} weak entries left, outputs in {}, {:.1} min",
        state.weak.len(),
        out.display(),
        t0.elapsed().as_secs_f64() / 60.0
    );
    Ok(())
}
