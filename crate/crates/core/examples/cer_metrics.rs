//! Character error rate, per-class accuracy, confusion and ROC.

use fingerspell::datamodel::{parse_frame_labels, LetterSeq};
use fingerspell::metrics::{cer, confusion, corpus_cer, roc_auc, ClassAccuracy};

fn main() -> fingerspell::Result<()> {
    let pairs = [("ture", "turner"), ("wenslydle", "wenslydale"), ("jan", "ian"), ("sastey", "dusty")];
    let mut parsed = Vec::new();
    for (pred, gt) in pairs {
        let (p, g) = (LetterSeq::parse(pred)?, LetterSeq::parse(gt)?);
        let (value, counts) = cer(p.as_slice(), g.as_slice())?;
        println!("{pred:>10} vs {gt:<10} CER {value:.3} ({counts:?})");
        parsed.push((p, g));
    }
    let summary = corpus_cer(parsed.iter().map(|(p, g)| (p.as_slice(), g.as_slice())))?;
    println!("macro {:.3}, micro {:.3} over {} words", summary.macro_avg, summary.micro, summary.words);

    let preds = parse_frame_labels("aab-bcc")?;
    let gts = parse_frame_labels("aabbbcb")?;
    let acc = ClassAccuracy::from_frames(&preds, &gts)?;
    println!("per-class average accuracy {:.3}", acc.average().unwrap_or(0.0));
    let cm = confusion(&preds, &gts)?;
    println!("row b: {} frames, {} predicted blank", cm.row_total(1), cm.to_blank[1]);

    let roc = roc_auc(&[0.9, 0.8, 0.3, 0.6, 0.1], &[true, true, false, true, false])?;
    println!("AUC {:.3} from {} ROC points", roc.auc, roc.points.len());
    Ok(())
}
