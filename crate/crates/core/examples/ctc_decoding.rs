//! CTC loss on a toy alphabet, greedy decoding and word masking.

use fingerspell::ctc::{collapse_to_letters, ctc_loss, greedy_decode, mask_to_word, path_to_string};
use fingerspell::datamodel::{parse_frame_labels, LetterSeq, NUM_CLASSES};
use fingerspell::nn::ops::log_softmax;
use ndarray::{array, Array2};

fn main() -> fingerspell::Result<()> {
    let path = parse_frame_labels("lo-ose")?;
    println!("collapse({}) = {}", path_to_string(&path), collapse_to_letters(&path));

    // Blank plus two symbols, four frames.
    let lp = log_softmax(&array![[2.0, 0.5, 0.1], [0.2, 1.5, 0.3], [1.0, 0.1, 0.4], [0.1, 0.2, 1.8]]);
    for target in [vec![1, 2], vec![1, 1], vec![2, 2, 2]] {
        let res = ctc_loss(&lp, &target)?;
        println!("target {target:?}: loss {:.4} feasible {}", res.loss, res.feasible);
    }

    // Logits that favour letters outside "cab"; masking keeps the decode inside the word.
    let word = "cab";
    let mut logits = Array2::<f64>::zeros((6, NUM_CLASSES));
    for (t, &c) in parse_frame_labels("cxa-zb")?.iter().enumerate() {
        logits[[t, c]] = 3.0;
    }
    let (_, open) = greedy_decode(&log_softmax(&logits));
    let (masked_path, masked) = greedy_decode(&mask_to_word(&logits, word)?);
    println!("open decode {open}, masked decode {masked} (path {})", path_to_string(&masked_path));
    assert!(masked.as_slice().iter().all(|c| LetterSeq::parse(word).unwrap().as_slice().contains(c)));
    Ok(())
}
