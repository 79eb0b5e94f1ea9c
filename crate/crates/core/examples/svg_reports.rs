//! Writes the SVG charts from hand-made inputs.

use fingerspell::annotator::IterationLog;
use fingerspell::datamodel::{parse_frame_labels, Interval};
use fingerspell::metrics::{confusion, roc_auc};
use fingerspell::svg::{confusion_svg, letter_strips_svg, pipeline_curve_svg, roc_svg, timelines_svg, Timeline};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("fs_svg");
    std::fs::create_dir_all(&out)?;
    let save = |name: &str, svg: String| {
        let p = out.join(name);
        std::fs::write(p, svg)
    };

    let preds = parse_frame_labels("aabbccd-eef")?;
    let gts = parse_frame_labels("aabbcdddeef")?;
    save("confusion.svg", confusion_svg(&confusion(&preds, &gts)?))?;

    let scores: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let labels: Vec<bool> = scores.iter().enumerate().map(|(i, &s)| s > 0.5 || i % 7 == 0).collect();
    save("roc.svg", roc_svg(&roc_auc(&scores, &labels)?))?;

    let log: Vec<IterationLog> = [(400, 0.12), (520, 0.08), (560, 0.07), (575, 0.068)]
        .iter()
        .enumerate()
        .map(|(i, &(accepted, cer))| IterationLog {
            iteration: i,
            accepted,
            newly_accepted: 0,
            training_entries: accepted + 150,
            heldout_cer: cer,
            heldout_cer_micro: cer,
        })
        .collect();
    save("pipeline.svg", pipeline_curve_svg(&log))?;

    let probs: Vec<f64> = (0..60).map(|t| if (20..40).contains(&t) { 0.9 } else { 0.1 }).collect();
    let truth = [Interval::new(21, 38)];
    let predicted = [Interval::new(19, 40)];
    let rows = [Timeline {
        clip_id: "clip_0001",
        len: 60,
        truth: &truth,
        probs: &probs,
        predicted: &predicted,
    }];
    save("timelines.svg", timelines_svg(&rows))?;

    let equal = parse_frame_labels("cccaaattt")?;
    let refined = parse_frame_labels("-ccaaaatt")?;
    save("labels.svg", letter_strips_svg(&[("equal split", &equal), ("re-annotated", &refined)]))?;
    println!("charts in {}", out.display());
    Ok(())
}
