//! Connectionist temporal classification: the collapse map, the log-space
//! forward-backward loss with its exact gradient, word masking, greedy
//! decoding, and the per-frame cross-entropy that shares the same logits.

use ndarray::Array2;

use crate::datamodel::{Alphabet, LetterSeq, LossWeights, BLANK, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::ops::{log_softmax, log_sum_exp, softmax};

/// Merge consecutive repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if prev != Some(c) && c != BLANK {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

pub fn collapse_to_letters(path: &[usize]) -> LetterSeq {
    LetterSeq::new(collapse(path)).expect("collapse never emits blank")
}

/// Minimum number of frames that can emit `target` (repeats need a blank
/// between them).
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcLoss {
    /// `-ln p(target | logprobs)`; `+inf` when no alignment exists.
    pub loss: f64,
    /// d loss / d logprobs. All zero when infeasible.
    pub grad: Array2<f64>,
    pub feasible: bool,
}

/// CTC negative log-likelihood of `target` under per-frame log-probabilities.
///
/// `logprobs` is `T x C` with blank in column 0; any `C` works, so small test
/// alphabets can be used. Rows are treated as independent inputs: the
/// gradient is the derivative with respect to each entry, with no
/// normalisation constraint folded in.
pub fn ctc_loss(logprobs: &Array2<f64>, target: &[usize]) -> Result<CtcLoss> {
    let (t_len, classes) = logprobs.dim();
    if t_len == 0 {
        return Err(Error::invalid("CTC over an empty sequence"));
    }
    if let Some(&bad) = target.iter().find(|&&c| c == BLANK || c >= classes) {
        return Err(Error::invalid(format!("target class {bad} invalid for {classes} classes")));
    }
    let infeasible = || CtcLoss {
        loss: f64::INFINITY,
        grad: Array2::zeros((t_len, classes)),
        feasible: false,
    };
    if t_len < min_frames(target) {
        return Ok(infeasible());
    }

    // Blank-interleaved target: - y1 - y2 - ... - yU -
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(target.iter().flat_map(|&c| [c, BLANK]))
        .collect();
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = Array2::from_elem((t_len, s_len), ninf);
    alpha[[0, 0]] = logprobs[[0, ext[0]]];
    if s_len > 1 {
        alpha[[0, 1]] = logprobs[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut terms = [alpha[[t - 1, s]], ninf, ninf];
            if s >= 1 {
                terms[1] = alpha[[t - 1, s - 1]];
            }
            if skip_ok(s) {
                terms[2] = alpha[[t - 1, s - 2]];
            }
            let acc = log_sum_exp(terms);
            alpha[[t, s]] = if acc == ninf { ninf } else { acc + logprobs[[t, ext[s]]] };
        }
    }
    let last = t_len - 1;
    let log_p = if s_len > 1 {
        log_sum_exp([alpha[[last, s_len - 1]], alpha[[last, s_len - 2]]])
    } else {
        alpha[[last, 0]]
    };
    if log_p == ninf {
        return Ok(infeasible());
    }

    // beta[t, s]: log-probability of finishing from state s at frame t,
    // excluding frame t's own emission.
    let mut beta = Array2::from_elem((t_len, s_len), ninf);
    beta[[last, s_len - 1]] = 0.0;
    if s_len > 1 {
        beta[[last, s_len - 2]] = 0.0;
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let step = |s2: usize| beta[[t + 1, s2]] + logprobs[[t + 1, ext[s2]]];
            let mut terms = [step(s), ninf, ninf];
            if s + 1 < s_len {
                terms[1] = step(s + 1);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                terms[2] = step(s + 2);
            }
            beta[[t, s]] = log_sum_exp(terms);
        }
    }

    let mut grad = Array2::zeros((t_len, classes));
    for t in 0..t_len {
        for s in 0..s_len {
            let v = alpha[[t, s]] + beta[[t, s]];
            if v > ninf {
                grad[[t, ext[s]]] -= (v - log_p).exp();
            }
        }
    }
    Ok(CtcLoss {
        loss: -log_p,
        grad,
        feasible: true,
    })
}

/// Class mask allowing blank plus the letters in `word`.
pub fn word_mask(word: &str) -> Result<[bool; NUM_CLASSES]> {
    if word.is_empty() {
        return Err(Error::invalid("cannot mask to an empty word"));
    }
    let mut allowed = LetterSeq::parse(word)?.class_set();
    allowed[BLANK] = true;
    Ok(allowed)
}

/// Row-wise log-softmax over the allowed classes only; disallowed classes get
/// `-inf`.
pub fn masked_log_softmax(logits: &Array2<f64>, allowed: &[bool]) -> Array2<f64> {
    let mut out = logits.clone();
    for (c, &ok) in allowed.iter().enumerate() {
        if !ok {
            out.column_mut(c).fill(f64::NEG_INFINITY);
        }
    }
    log_softmax(&out)
}

/// Gradient of [`masked_log_softmax`] back to the logits; disallowed classes
/// receive zero.
pub fn masked_log_softmax_backward(logprobs: &Array2<f64>, allowed: &[bool], dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(dy.dim());
    for ((lp_row, dy_row), mut dx_row) in logprobs.rows().into_iter().zip(dy.rows()).zip(dx.rows_mut()) {
        let total: f64 = dy_row.iter().zip(allowed).filter(|(_, &ok)| ok).map(|(g, _)| g).sum();
        for c in 0..dy_row.len() {
            if allowed[c] {
                dx_row[c] = dy_row[c] - lp_row[c].exp() * total;
            }
        }
    }
    dx
}

/// Letters outside `word` are removed before normalising each row.
pub fn mask_to_word(logits: &Array2<f64>, word: &str) -> Result<Array2<f64>> {
    if logits.ncols() != NUM_CLASSES {
        return Err(Error::shape(format!("expected {NUM_CLASSES} logit columns, got {}", logits.ncols())));
    }
    Ok(masked_log_softmax(logits, &word_mask(word)?))
}

/// Per-frame argmax (ties to the lowest class) and its collapse.
pub fn greedy_decode(logprobs: &Array2<f64>) -> (Vec<usize>, LetterSeq) {
    let path: Vec<usize> = logprobs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let letters = collapse_to_letters(&path);
    (path, letters)
}

/// Mean softmax cross-entropy over labeled frames (`None` = unlabeled).
/// Blank is an ordinary target class here.
pub fn per_frame_ce(logits: &Array2<f64>, labels: &[Option<usize>]) -> Result<(f64, Array2<f64>)> {
    if labels.len() != logits.nrows() {
        return Err(Error::shape(format!("{} labels for {} frames", labels.len(), logits.nrows())));
    }
    let n = labels.iter().flatten().count();
    if n == 0 {
        return Err(Error::invalid("no labeled frames"));
    }
    let probs = softmax(logits);
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (t, label) in labels.iter().enumerate() {
        let Some(c) = *label else { continue };
        if c >= logits.ncols() {
            return Err(Error::invalid(format!("frame label {c} out of range")));
        }
        loss -= probs[[t, c]].ln();
        for k in 0..logits.ncols() {
            grad[[t, k]] = probs[[t, k]] / n as f64;
        }
        grad[[t, c]] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

pub fn combined_loss(frame_loss: f64, ctc: f64, w: &LossWeights) -> f64 {
    w.lambda_f * frame_loss + w.lambda_ctc * ctc
}

/// Renders a path with `-` for blank.
pub fn path_to_string(path: &[usize]) -> String {
    path.iter().map(|&c| Alphabet::symbol(c).unwrap_or('?')).collect()
}
