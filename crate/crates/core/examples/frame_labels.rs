//! Turning a word into per-frame letter labels.

use fingerspell::annotator::{equal_split, max_prob_labels, transition_split};
use fingerspell::datamodel::{frame_labels_to_string, LetterSeq, NUM_LETTERS};
use ndarray::Array2;

fn main() -> fingerspell::Result<()> {
    let word = LetterSeq::parse("cat")?;
    println!("equal split   {}", frame_labels_to_string(&equal_split(10, word.as_slice())?));

    // Frame classifier output drifting c -> a -> t with an uneven pace.
    let pace = [0, 0, 0, 0, 1, 1, 2, 2, 2, 2];
    let mut probs = Array2::from_elem((pace.len(), NUM_LETTERS), 0.01);
    for (t, &k) in pace.iter().enumerate() {
        probs[[t, word.as_slice()[k] - 1]] = 0.8;
    }
    println!("transitions   {}", frame_labels_to_string(&transition_split(&probs, word.as_slice())?));

    // Weak first frames stay blank; a weak middle frame holds the last label.
    probs.row_mut(0).fill(1.0 / NUM_LETTERS as f64);
    probs.row_mut(5).fill(1.0 / NUM_LETTERS as f64);
    println!("max prob 0.35 {}", frame_labels_to_string(&max_prob_labels(&probs, "cat", 0.35)?));
    Ok(())
}
