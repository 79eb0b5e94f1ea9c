//! Layered TOML configuration and driving the `fsr` entry point in-process.

use fingerspell::cli::{dispatch, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::from_toml("seed = 3\n[pipeline]\niterations = 1\n")?;
    println!("seed {}, iterations {}, threshold {}", cfg.seed, cfg.pipeline.iterations, cfg.pipeline.threshold);
    assert!(RunConfig::from_toml("[pipeline]\nitrations = 1\n").is_err());

    let text = cfg.to_toml()?;
    println!("{} lines of resolved config", text.lines().count());

    let dir = std::env::temp_dir().join("fs_cli");
    let corpus = dir.join("corpus");
    let config = dir.join("small.toml");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(&config, "[synth]\nn_strong = 20\nn_weak = 30\nn_heldout = 10\n")
        ?;
    let c = config.to_str().unwrap_or_default();
    let code = dispatch(["fsr", "synth", "--config", c, "--out", corpus.to_str().unwrap_or_default()]);
    println!("fsr synth exited with {code}");
    println!("fsr frobnicate exited with {}", dispatch(["fsr", "frobnicate"]));
    Ok(())
}
